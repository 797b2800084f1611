#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "somfuse/matrix.hpp"

namespace somfuse::tsne {

struct TsneConfig {
  double perplexity = 100.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch_iteration = 250;
  double min_gain = 0.01;
  std::uint64_t seed = 0;

  /// Throws InvalidValue (perplexity < 2, non-positive rates, ...).
  void validate() const;
};

/// min(perplexity, (n - 1) / 3).
double effective_perplexity(double perplexity, std::size_t n);

/// min(learning_rate, n / early_exaggeration). Larger steps make the
/// exaggerated attraction oscillate and inflate small layouts.
double effective_learning_rate(double learning_rate, std::size_t n, double early_exaggeration);

inline constexpr double kEntropyTolerance = 1e-5;
inline constexpr int kMaxBisectionSteps = 50;

struct Affinities {
  Matrix conditional;  ///< row-stochastic, zero diagonal
  Matrix joint;        ///< (P_ij + P_ji) / (2n)
  std::vector<double> beta;  ///< per-row Gaussian precision 1 / (2 sigma^2)
  double target_entropy_bits = 0.0;
  std::size_t warnings = 0;  ///< rows whose entropy target was not reached
};

/// Pairwise squared Euclidean distances (n x n).
Matrix squared_distances(const Matrix& points);

/// Throws InvalidValue for n < 4 or non-finite points.
Affinities conditional_probabilities(const Matrix& points, double perplexity);
Affinities affinities_from_distances(const Matrix& squared, double perplexity);

/// KL(P || Q) with Student-t (one degree of freedom) Q over a 1-d layout.
double kl_divergence(const Matrix& joint, std::span<const double> y);

/// dKL/dy with P scaled by `exaggeration`.
std::vector<double> gradient(const Matrix& joint, std::span<const double> y, double exaggeration = 1.0);

struct TraceRow {
  int iteration = 0;
  double kl = 0.0;
  double gradient_norm = 0.0;
};

struct Trace {
  int interval = 10;  ///< record after every `interval`-th iteration (and the last)
  std::vector<TraceRow> rows;

  void write_csv(const std::filesystem::path& path) const;
  /// Row for an exact iteration number, if recorded.
  const TraceRow* at(int iteration) const noexcept;
};

struct Embedding1D {
  std::vector<double> values;
  std::size_t warnings = 0;
};

/// Exact 1-d t-SNE. Deterministic for a given (points, config).
Embedding1D tsne_1d(const Matrix& points, const TsneConfig& config, Trace* trace = nullptr);

/// Re-runs t-SNE with `query` appended, then maps the re-run onto the
/// reference layout with the least-squares affine fit over the training rows.
double embed_out_of_sample(const Matrix& training_points, std::span<const double> training_embedding,
                           std::span<const double> query, const TsneConfig& config);

}  // namespace somfuse::tsne
