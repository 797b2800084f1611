#pragma once

// Data-parallel inner loops shared by the SOM, t-SNE and feature modules.
//
// Layout convention: "planes" are dimension-major, i.e. component d of column j
// lives at planes[d * stride + j]. Kernels vectorize across columns (nodes or
// points), never across dimensions, so every column accumulates its terms in
// the same order as the scalar reference.
//
// Reductions over a row use a fixed 4-way partial-sum order: lane l sums the
// terms j = 4k + l, the lanes combine as (s0 + s1) + (s2 + s3), and the tail
// (n % 4 terms) is then added in index order. The scalar reference follows the
// same order, so all variants are required to agree bitwise.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace somfuse::simd {

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa) noexcept;

struct Kernels {
  Isa isa;

  /// out[j] = sum over d (skip == nullptr or skip[d] == 0) of (planes[d*stride+j] - x[d])^2.
  void (*squared_distances)(const double* planes, std::size_t stride, std::size_t count,
                            std::size_t dim, const double* x, const std::uint8_t* skip,
                            double* out);

  /// planes[d*stride+j] += rate[j] * (x[d] - planes[d*stride+j]).
  void (*pull_toward)(double* planes, std::size_t stride, std::size_t count, std::size_t dim,
                      const double* x, const double* rate);

  /// acc[i] += src[i].
  void (*accumulate)(double* acc, const double* src, std::size_t n);

  /// sum over j of 1 / (1 + (yi - y[j])^2).
  double (*student_t_sum)(double yi, const double* y, std::size_t n);

  /// sum over j of (exaggeration * p[j] - w_j * inv_z) * w_j * (yi - y[j]),
  /// with w_j = 1 / (1 + (yi - y[j])^2).
  double (*tsne_gradient_sum)(double yi, const double* y, const double* p, double exaggeration,
                              double inv_z, std::size_t n);
};

const Kernels& scalar_kernels() noexcept;

/// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2.
const Kernels* avx2_kernels() noexcept;

/// Best available variant. The SOMFUSE_SIMD environment variable ("scalar" or
/// "avx2") overrides the choice; an unavailable request falls back to scalar.
const Kernels& active_kernels() noexcept;

}  // namespace somfuse::simd
