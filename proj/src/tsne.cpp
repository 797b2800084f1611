#include "somfuse/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "somfuse/csv.hpp"
#include "somfuse/error.hpp"
#include "somfuse/simd/kernels.hpp"

namespace somfuse::tsne {

void TsneConfig::validate() const {
  if (!(perplexity >= 2.0)) throw Error(ErrorCode::InvalidValue, "perplexity must be >= 2");
  if (iterations < 1) throw Error(ErrorCode::InvalidValue, "t-SNE needs at least one iteration");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidValue, "learning rate must be positive");
  if (!(early_exaggeration >= 1.0)) throw Error(ErrorCode::InvalidValue, "early exaggeration must be >= 1");
  if (exaggeration_iterations < 0 || momentum_switch_iteration < 0) {
    throw Error(ErrorCode::InvalidValue, "schedule iterations must be non-negative");
  }
  if (initial_momentum < 0.0 || initial_momentum >= 1.0 || final_momentum < 0.0 || final_momentum >= 1.0) {
    throw Error(ErrorCode::InvalidValue, "momentum must be in [0, 1)");
  }
  if (!(min_gain > 0.0)) throw Error(ErrorCode::InvalidValue, "min gain must be positive");
}

double effective_perplexity(double perplexity, std::size_t n) {
  return std::min(perplexity, (static_cast<double>(n) - 1.0) / 3.0);
}

double effective_learning_rate(double learning_rate, std::size_t n, double early_exaggeration) {
  return std::min(learning_rate, static_cast<double>(n) / std::max(1.0, early_exaggeration));
}

Matrix squared_distances(const Matrix& points) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  const Matrix planes = points.transposed();  // dim x n
  Matrix out(n, n);
  const auto& kernels = simd::active_kernels();
  for (std::size_t i = 0; i < n; ++i) {
    kernels.squared_distances(planes.data().data(), n, n, dim, points.row(i).data(), nullptr, out.row(i).data());
    out(i, i) = 0.0;
  }
  // Exact symmetry regardless of accumulation order.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out(j, i) = out(i, j);
  return out;
}

namespace {

void check_points(const Matrix& points) {
  if (points.rows() < 4) throw Error(ErrorCode::InvalidValue, "t-SNE needs at least 4 points");
  for (double v : points.data()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidValue, "t-SNE input contains non-finite values");
  }
}

// Entropy (bits) of row i under precision beta; fills `row` with normalized probabilities.
double row_entropy(const Matrix& d2, std::size_t i, double dmin, double beta, std::span<double> row) {
  const std::size_t n = d2.cols();
  double sum = 0.0;
  double weighted = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) {
      row[j] = 0.0;
      continue;
    }
    const double shifted = d2(i, j) - dmin;
    const double p = std::exp(-beta * shifted);
    row[j] = p;
    sum += p;
    weighted += shifted * p;
  }
  for (double& p : row) p /= sum;
  const double nats = std::log(sum) + beta * weighted / sum;
  return nats / std::numbers::ln2;
}

}  // namespace

Affinities affinities_from_distances(const Matrix& squared, double perplexity) {
  const std::size_t n = squared.rows();
  if (n < 4 || squared.cols() != n) throw Error(ErrorCode::InvalidValue, "affinities need a square matrix, n >= 4");
  if (!(perplexity >= 2.0)) throw Error(ErrorCode::InvalidValue, "perplexity must be >= 2");

  Affinities out;
  out.conditional = Matrix(n, n);
  out.beta.assign(n, 1.0);
  const double target_perplexity = effective_perplexity(perplexity, n);
  out.target_entropy_bits = std::log2(target_perplexity);

  for (std::size_t i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    double dmean = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dmin = std::min(dmin, squared(i, j));
      dmean += squared(i, j);
    }
    dmean = dmean / static_cast<double>(n - 1) - dmin;

    double beta = dmean > 0.0 ? 1.0 / dmean : 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    auto row = out.conditional.row(i);
    bool converged = false;
    for (int step = 0; step < kMaxBisectionSteps; ++step) {
      const double diff = row_entropy(squared, i, dmin, beta, row) - out.target_entropy_bits;
      if (std::abs(diff) < kEntropyTolerance) {
        converged = true;
        break;
      }
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
    if (!converged) {
      // Bandwidth stays clamped at the last bracket midpoint.
      row_entropy(squared, i, dmin, beta, row);
      ++out.warnings;
    }
    out.beta[i] = beta;
  }

  out.joint = Matrix(n, n);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.joint(i, j) = (out.conditional(i, j) + out.conditional(j, i)) * scale;
  return out;
}

Affinities conditional_probabilities(const Matrix& points, double perplexity) {
  check_points(points);
  return affinities_from_distances(squared_distances(points), perplexity);
}

namespace {

double normalizer(std::span<const double> y) {
  const auto& kernels = simd::active_kernels();
  double z = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) z += kernels.student_t_sum(y[i], y.data(), y.size()) - 1.0;
  return z;
}

}  // namespace

double kl_divergence(const Matrix& joint, std::span<const double> y) {
  const std::size_t n = y.size();
  const double z = normalizer(y);
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double p = joint(i, j);
      if (i == j || p <= 0.0) continue;
      const double diff = y[i] - y[j];
      const double q = 1.0 / (1.0 + diff * diff) / z;
      kl += p * std::log(p / q);
    }
  }
  return kl;
}

std::vector<double> gradient(const Matrix& joint, std::span<const double> y, double exaggeration) {
  const std::size_t n = y.size();
  const double inv_z = 1.0 / normalizer(y);
  const auto& kernels = simd::active_kernels();
  std::vector<double> grad(n);
  for (std::size_t i = 0; i < n; ++i) {
    grad[i] = 4.0 * kernels.tsne_gradient_sum(y[i], y.data(), joint.row(i).data(), exaggeration, inv_z, n);
  }
  return grad;
}

void Trace::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write trace '" + path.string() + "'");
  csv::write_row(out, {"iteration", "kl", "gradient_norm"});
  for (const auto& r : rows) {
    csv::write_row(out, {std::to_string(r.iteration), csv::format_double(r.kl), csv::format_double(r.gradient_norm)});
  }
}

const TraceRow* Trace::at(int iteration) const noexcept {
  for (const auto& r : rows) {
    if (r.iteration == iteration) return &r;
  }
  return nullptr;
}

Embedding1D tsne_1d(const Matrix& points, const TsneConfig& config, Trace* trace) {
  config.validate();
  check_points(points);
  const std::size_t n = points.rows();
  const Affinities affinities = conditional_probabilities(points, config.perplexity);
  const Matrix& p = affinities.joint;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> init(0.0, 1e-4);
  std::vector<double> y(n);
  for (double& v : y) v = init(rng);

  const double rate = effective_learning_rate(config.learning_rate, n, config.early_exaggeration);
  std::vector<double> update(n, 0.0);
  std::vector<double> gains(n, 1.0);
  for (int iter = 0; iter < config.iterations; ++iter) {
    const double exaggeration = iter < config.exaggeration_iterations ? config.early_exaggeration : 1.0;
    const double momentum = iter < config.momentum_switch_iteration ? config.initial_momentum : config.final_momentum;
    const std::vector<double> grad = gradient(p, y, exaggeration);
    for (std::size_t i = 0; i < n; ++i) {
      const bool same_sign = (grad[i] > 0.0) == (update[i] > 0.0);
      gains[i] = same_sign ? gains[i] * 0.8 : gains[i] + 0.2;
      if (gains[i] < config.min_gain) gains[i] = config.min_gain;
      update[i] = momentum * update[i] - rate * gains[i] * grad[i];
      y[i] += update[i];
    }
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    for (double& v : y) v -= mean;

    const int done = iter + 1;
    if (trace != nullptr && (done % std::max(1, trace->interval) == 0 || done == config.iterations)) {
      double norm = 0.0;
      for (double g : grad) norm += g * g;
      trace->rows.push_back({done, kl_divergence(p, y), std::sqrt(norm)});
    }
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidValue, "t-SNE diverged to a non-finite layout");
  }
  return {std::move(y), affinities.warnings};
}

double embed_out_of_sample(const Matrix& training_points, std::span<const double> training_embedding,
                           std::span<const double> query, const TsneConfig& config) {
  const std::size_t n = training_points.rows();
  if (training_embedding.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "training embedding does not match the training rows");
  }
  if (query.size() != training_points.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "query dimension does not match the training points");
  }
  Matrix augmented(n + 1, training_points.cols());
  std::copy(training_points.data().begin(), training_points.data().end(), augmented.data().begin());
  std::copy(query.begin(), query.end(), augmented.row(n).begin());
  const Embedding1D rerun = tsne_1d(augmented, config);

  double mean_new = 0.0;
  double mean_ref = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_new += rerun.values[i];
    mean_ref += training_embedding[i];
  }
  mean_new /= static_cast<double>(n);
  mean_ref /= static_cast<double>(n);
  double cov = 0.0;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dn = rerun.values[i] - mean_new;
    cov += dn * (training_embedding[i] - mean_ref);
    var += dn * dn;
  }
  const double slope = var > 0.0 ? cov / var : 0.0;
  return mean_ref + slope * (rerun.values[n] - mean_new);
}

}  // namespace somfuse::tsne
