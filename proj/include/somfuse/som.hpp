#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "somfuse/fuse.hpp"
#include "somfuse/matrix.hpp"

namespace somfuse::som {

struct SomConfig {
  std::size_t rows = 10;
  std::size_t cols = 10;
  std::size_t steps = 20000;  ///< single-sample updates; production runs use 1,000,000
  double initial_learning_rate = 0.5;
  double final_learning_rate = 0.01;
  std::optional<double> initial_radius;  ///< unset: max(rows, cols) / 2
  double final_radius = 0.5;
  std::uint64_t seed = 0;

  double start_radius() const noexcept;
  void validate() const;
  bool operator==(const SomConfig&) const = default;
};

/// Gaussian neighborhood exp(-g^2 / (2 sigma^2)) at grid distance g.
double neighborhood(double grid_distance, double sigma) noexcept;

/// Exponential interpolation from `from` to `to` over `steps` updates.
double decay(double from, double to, std::size_t step, std::size_t steps) noexcept;

struct SomModel {
  SomConfig config;
  std::size_t dimension = 0;
  std::vector<double> codebook;  ///< dimension-major: codebook[d * nodes + node]
  std::vector<std::pair<std::string, std::size_t>> assignments;  ///< training order
  std::vector<std::string> representatives;                     ///< per node
  std::size_t steps_trained = 0;

  std::size_t nodes() const noexcept { return config.rows * config.cols; }
  bool trained() const noexcept { return steps_trained > 0 && !codebook.empty(); }
  double weight(std::size_t node, std::size_t d) const { return codebook[d * nodes() + node]; }
  std::vector<double> weights(std::size_t node) const;
  std::pair<std::size_t, std::size_t> coordinates(std::size_t node) const noexcept {
    return {node / config.cols, node % config.cols};
  }
  double grid_distance(std::size_t a, std::size_t b) const noexcept;
  std::optional<std::size_t> assignment(std::string_view id) const noexcept;

  bool operator==(const SomModel&) const = default;
};

/// Quantization error recorded at chosen step counts during training.
struct TrainingTrace {
  std::vector<std::size_t> checkpoints;
  std::vector<double> quantization_errors;
};

/// Throws EmptyInput for no data and InvalidValue for ragged, masked or
/// non-finite vectors.
SomModel train_som(std::span<const FusedVector> data, const SomConfig& config, TrainingTrace* trace = nullptr);
SomModel train_som(const Matrix& data, const SomConfig& config, TrainingTrace* trace = nullptr);

/// Lowest row-major index wins ties.
std::size_t find_bmu(const SomModel& model, std::span<const double> x);
/// Distance over components whose mask byte is zero. Throws EmptyMask if all are masked.
std::size_t find_bmu_masked(const SomModel& model, std::span<const double> x, std::span<const std::uint8_t> mask);
std::size_t find_bmu_masked(const SomModel& model, const FusedVector& x);

Matrix component_plane(const SomModel& model, std::size_t attribute);

double quantization_error(const SomModel& model, const Matrix& data);
double quantization_error(const SomModel& model, std::span<const FusedVector> data);

std::string to_json(const SomModel& model);
SomModel from_json(std::string_view text);
void save_model(const SomModel& model, const std::filesystem::path& path);
SomModel load_model(const std::filesystem::path& path);

/// One plane_<name>.csv per attribute plus node_map.csv (node, row, col, hits, representative).
void write_component_planes(const SomModel& model, const AttributeSchema& schema, const std::filesystem::path& dir);

}  // namespace somfuse::som
