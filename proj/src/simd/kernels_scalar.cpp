#include "kernels_impl.hpp"

namespace somfuse::simd::scalar {

void squared_distances(const double* planes, std::size_t stride, std::size_t count,
                       std::size_t dim, const double* x, const std::uint8_t* skip, double* out) {
  for (std::size_t j = 0; j < count; ++j) {
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      if (skip != nullptr && skip[d] != 0) continue;
      const double diff = planes[d * stride + j] - x[d];
      acc = acc + diff * diff;
    }
    out[j] = acc;
  }
}

void pull_toward(double* planes, std::size_t stride, std::size_t count, std::size_t dim,
                 const double* x, const double* rate) {
  for (std::size_t d = 0; d < dim; ++d) {
    double* row = planes + d * stride;
    for (std::size_t j = 0; j < count; ++j) {
      row[j] = row[j] + rate[j] * (x[d] - row[j]);
    }
  }
}

void accumulate(double* acc, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] = acc[i] + src[i];
}

namespace {

inline double student_t_term(double yi, double yj) {
  const double diff = yi - yj;
  return 1.0 / (1.0 + diff * diff);
}

inline double gradient_term(double yi, double yj, double pj, double exaggeration, double inv_z) {
  const double diff = yi - yj;
  const double w = 1.0 / (1.0 + diff * diff);
  return ((exaggeration * pj - w * inv_z) * w) * diff;
}

}  // namespace

double student_t_sum(double yi, const double* y, std::size_t n) {
  double lane[kLanes] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t body = n - n % kLanes;
  for (std::size_t j = 0; j < body; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lane[l] = lane[l] + student_t_term(yi, y[j + l]);
  }
  double total = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  for (std::size_t j = body; j < n; ++j) total = total + student_t_term(yi, y[j]);
  return total;
}

double tsne_gradient_sum(double yi, const double* y, const double* p, double exaggeration,
                         double inv_z, std::size_t n) {
  double lane[kLanes] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t body = n - n % kLanes;
  for (std::size_t j = 0; j < body; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      lane[l] = lane[l] + gradient_term(yi, y[j + l], p[j + l], exaggeration, inv_z);
    }
  }
  double total = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  for (std::size_t j = body; j < n; ++j) {
    total = total + gradient_term(yi, y[j], p[j], exaggeration, inv_z);
  }
  return total;
}

}  // namespace somfuse::simd::scalar
