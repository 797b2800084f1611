// Compiled with -mavx2 only (no -mfma): every lane performs the same rounded
// mul/add/div sequence as the scalar reference.
#include <immintrin.h>

#include "kernels_impl.hpp"

namespace somfuse::simd::avx2 {

void squared_distances(const double* planes, std::size_t stride, std::size_t count,
                       std::size_t dim, const double* x, const std::uint8_t* skip, double* out) {
  const std::size_t body = count - count % kLanes;
  for (std::size_t j = 0; j < body; j += kLanes) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t d = 0; d < dim; ++d) {
      if (skip != nullptr && skip[d] != 0) continue;
      const __m256d w = _mm256_loadu_pd(planes + d * stride + j);
      const __m256d diff = _mm256_sub_pd(w, _mm256_set1_pd(x[d]));
      acc = _mm256_add_pd(acc, _mm256_mul_pd(diff, diff));
    }
    _mm256_storeu_pd(out + j, acc);
  }
  if (body < count) {
    scalar::squared_distances(planes + body, stride, count - body, dim, x, skip, out + body);
  }
}

void pull_toward(double* planes, std::size_t stride, std::size_t count, std::size_t dim,
                 const double* x, const double* rate) {
  const std::size_t body = count - count % kLanes;
  for (std::size_t d = 0; d < dim; ++d) {
    double* row = planes + d * stride;
    const __m256d xd = _mm256_set1_pd(x[d]);
    for (std::size_t j = 0; j < body; j += kLanes) {
      const __m256d w = _mm256_loadu_pd(row + j);
      const __m256d r = _mm256_loadu_pd(rate + j);
      _mm256_storeu_pd(row + j, _mm256_add_pd(w, _mm256_mul_pd(r, _mm256_sub_pd(xd, w))));
    }
    for (std::size_t j = body; j < count; ++j) row[j] = row[j] + rate[j] * (x[d] - row[j]);
  }
}

void accumulate(double* acc, const double* src, std::size_t n) {
  const std::size_t body = n - n % kLanes;
  for (std::size_t i = 0; i < body; i += kLanes) {
    _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), _mm256_loadu_pd(src + i)));
  }
  for (std::size_t i = body; i < n; ++i) acc[i] = acc[i] + src[i];
}

namespace {

inline double combine_lanes(__m256d v) {
  alignas(32) double lane[kLanes];
  _mm256_store_pd(lane, v);
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

}  // namespace

double student_t_sum(double yi, const double* y, std::size_t n) {
  const std::size_t body = n - n % kLanes;
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d vyi = _mm256_set1_pd(yi);
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t j = 0; j < body; j += kLanes) {
    const __m256d diff = _mm256_sub_pd(vyi, _mm256_loadu_pd(y + j));
    const __m256d w = _mm256_div_pd(one, _mm256_add_pd(one, _mm256_mul_pd(diff, diff)));
    acc = _mm256_add_pd(acc, w);
  }
  double total = combine_lanes(acc);
  for (std::size_t j = body; j < n; ++j) {
    const double diff = yi - y[j];
    total = total + 1.0 / (1.0 + diff * diff);
  }
  return total;
}

double tsne_gradient_sum(double yi, const double* y, const double* p, double exaggeration,
                         double inv_z, std::size_t n) {
  const std::size_t body = n - n % kLanes;
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d vyi = _mm256_set1_pd(yi);
  const __m256d vexag = _mm256_set1_pd(exaggeration);
  const __m256d vinvz = _mm256_set1_pd(inv_z);
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t j = 0; j < body; j += kLanes) {
    const __m256d diff = _mm256_sub_pd(vyi, _mm256_loadu_pd(y + j));
    const __m256d w = _mm256_div_pd(one, _mm256_add_pd(one, _mm256_mul_pd(diff, diff)));
    const __m256d attract = _mm256_mul_pd(vexag, _mm256_loadu_pd(p + j));
    const __m256d coeff = _mm256_sub_pd(attract, _mm256_mul_pd(w, vinvz));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_mul_pd(coeff, w), diff));
  }
  double total = combine_lanes(acc);
  for (std::size_t j = body; j < n; ++j) {
    const double diff = yi - y[j];
    const double w = 1.0 / (1.0 + diff * diff);
    total = total + ((exaggeration * p[j] - w * inv_z) * w) * diff;
  }
  return total;
}

}  // namespace somfuse::simd::avx2
