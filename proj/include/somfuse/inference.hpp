#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "somfuse/fuse.hpp"
#include "somfuse/schema.hpp"
#include "somfuse/som.hpp"

namespace somfuse::inference {

enum class Comparison { Correct, Over, Under };

std::string_view to_string(Comparison c) noexcept;

/// Over when the prediction sits above the truth in Low < Mid < High.
Comparison compare_degrees(SeverityDegree truth, SeverityDegree predicted) noexcept;

struct Recommendation {
  std::string text;
  std::string source;
  bool operator==(const Recommendation&) const = default;
};

class RecommendationStore {
 public:
  explicit RecommendationStore(std::size_t nodes = 100) : nodes_(nodes) {}

  std::size_t nodes() const noexcept { return nodes_; }
  /// Empty list for nodes without recommendations.
  const std::vector<Recommendation>& at(std::size_t node) const;
  void add(std::size_t node, Recommendation rec);
  std::size_t size() const noexcept { return entries_.size(); }

  /// JSON object {"<node>": [{"text": ..., "source": ...}, ...]}. Duplicate
  /// keys merge in file order; keys outside the grid raise FormatError.
  static RecommendationStore from_json(std::string_view text, std::size_t nodes);
  static RecommendationStore load(const std::filesystem::path& path, std::size_t nodes);

 private:
  std::size_t nodes_;
  std::map<std::size_t, std::vector<Recommendation>> entries_;
};

struct Degrees {
  SeverityDegree deaths = SeverityDegree::Low;
  SeverityDegree affected = SeverityDegree::Low;
  SeverityDegree damages = SeverityDegree::Low;

  SeverityDegree operator[](Target t) const noexcept;
  SeverityDegree& operator[](Target t) noexcept;
  bool operator==(const Degrees&) const = default;
};

enum class DegreeSource {
  Representative,  ///< recorded impacts of the node's representative disaster
  Codebook,        ///< de-standardized codebook weights at the target slots
};

struct Prediction {
  std::string query_id;
  std::size_t node = 0;
  std::string representative_id;
  Degrees degrees;
  std::vector<Recommendation> recommendations;
  bool operator==(const Prediction&) const = default;
};

struct PredictContext {
  const som::SomModel& model;
  const RecommendationStore& store;
  const std::vector<DisasterRecord>& training;
  const AttributeSchema& schema = default_schema();
  const NormalizationParams* params = nullptr;  ///< required for DegreeSource::Codebook
  DegreeSource source = DegreeSource::Representative;
};

/// Throws NotFitted for an untrained model and InvalidValue when the query mask
/// is not exactly the target slots.
Prediction predict(const PredictContext& context, const FusedVector& query);

std::string predictions_to_json(std::span<const Prediction> predictions);
std::vector<Prediction> predictions_from_json(std::string_view text);
void write_predictions(std::span<const Prediction> predictions, const std::filesystem::path& path);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct EvaluationRow {
  Target target = Target::Deaths;
  std::optional<SeverityDegree> truth;  ///< nullopt = no ground truth
  SeverityDegree predicted = SeverityDegree::Low;
};

struct Tally {
  std::size_t correct = 0;
  std::size_t over = 0;
  std::size_t under = 0;
  std::size_t excluded = 0;

  std::size_t compared() const noexcept { return correct + over + under; }
  std::optional<double> correct_rate() const noexcept;
  std::optional<double> non_under_rate() const noexcept;
  bool operator==(const Tally&) const = default;
};

struct EvaluationReport {
  std::map<Target, Tally> per_target;
  Tally overall;

  std::string to_json() const;
  static EvaluationReport from_json(std::string_view text);
  bool operator==(const EvaluationReport&) const = default;
};

EvaluationReport evaluate(std::span<const EvaluationRow> rows);

/// CSV with columns target, ground_truth, prediction; "no info" marks a missing truth.
std::vector<EvaluationRow> read_evaluation_csv(const std::filesystem::path& path);
void write_evaluation_csv(std::span<const EvaluationRow> rows, const std::filesystem::path& path);

/// One row per (prediction, target), truth taken from the matching record.
std::vector<EvaluationRow> evaluation_rows(std::span<const Prediction> predictions,
                                           std::span<const DisasterRecord> truth);

}  // namespace somfuse::inference
