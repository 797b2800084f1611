#pragma once

#include <cstddef>
#include <cstdint>

namespace somfuse::simd {

inline constexpr std::size_t kLanes = 4;

namespace scalar {
void squared_distances(const double*, std::size_t, std::size_t, std::size_t, const double*,
                       const std::uint8_t*, double*);
void pull_toward(double*, std::size_t, std::size_t, std::size_t, const double*, const double*);
void accumulate(double*, const double*, std::size_t);
double student_t_sum(double, const double*, std::size_t);
double tsne_gradient_sum(double, const double*, const double*, double, double, std::size_t);
}  // namespace scalar

#ifdef SOMFUSE_HAVE_AVX2
namespace avx2 {
void squared_distances(const double*, std::size_t, std::size_t, std::size_t, const double*,
                       const std::uint8_t*, double*);
void pull_toward(double*, std::size_t, std::size_t, std::size_t, const double*, const double*);
void accumulate(double*, const double*, std::size_t);
double student_t_sum(double, const double*, std::size_t);
double tsne_gradient_sum(double, const double*, const double*, double, double, std::size_t);
}  // namespace avx2
#endif

}  // namespace somfuse::simd
