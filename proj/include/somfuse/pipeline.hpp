#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "somfuse/som.hpp"

namespace somfuse::pipeline {

enum class Stage { Ingest, Encode, Tiles, Features, Reduce, Fuse, Train, Predict, Evaluate, Export };

inline constexpr Stage kAllStages[] = {Stage::Ingest, Stage::Encode,  Stage::Tiles,   Stage::Features, Stage::Reduce,
                                       Stage::Fuse,   Stage::Train,   Stage::Predict, Stage::Evaluate, Stage::Export};

std::string_view to_string(Stage stage) noexcept;
Stage parse_stage(std::string_view text);

/// Process exit codes shared by the CLI and run_pipeline.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalidConfig = 1;
inline constexpr int kExitMissingArtifact = 2;
inline constexpr int kExitStageFailed = 3;

/// Key = value settings. Relative paths resolve against the working directory.
struct PipelineConfig {
  std::filesystem::path dataset;
  std::filesystem::path output_dir = "somfuse-out";
  std::filesystem::path schema;  ///< empty: built-in 19-attribute schema
  std::uint64_t seed = 42;
  std::size_t jobs = 1;

  std::string extractor = "baseline";  ///< baseline | cache
  std::filesystem::path embedding_cache;

  bool stub_tiles = true;
  std::string tile_endpoint;
  int tile_zoom = 18;
  double tile_extent = 10'000.0;
  double tile_spacing = 200.0;
  std::size_t tile_pixels = 256;
  std::filesystem::path tile_cache;  ///< empty: <output_dir>/tiles
  std::size_t tile_retries = 2;
  double tile_rate_limit = 0.0;
  std::size_t tile_timeout_ms = 10'000;

  double tsne_perplexity = 100.0;
  int tsne_iterations = 1000;
  double tsne_learning_rate = 200.0;

  som::SomConfig som;

  double winsor_k = 3.0;
  std::set<std::string, std::less<>> log_attributes = {"deaths", "affected", "damages", "population", "area",
                                                       "construction_value_added"};

  std::filesystem::path recommendations;
  std::string degree_source = "representative";  ///< representative | codebook
  std::filesystem::path evaluation_fixture;       ///< set: evaluate this table instead of predictions

  bool force = false;

  /// Throws InvalidValue for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static std::vector<std::string> keys();

  static PipelineConfig parse(std::string_view text);
  static PipelineConfig load(const std::filesystem::path& path);
  /// Every key, one per line; parse(to_text()) reproduces the config.
  std::string to_text() const;

  /// Range checks plus existence of the input files the given stages read.
  void validate(std::span<const Stage> stages) const;

  AttributeSchema resolved_schema() const;
  std::filesystem::path tile_cache_dir() const;
};

/// Per-stage seed derived from the global seed.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) noexcept;

/// 64-bit FNV-1a, used for stage fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ull) noexcept;

/// Artifact file names inside the output directory.
namespace artifact {
inline constexpr std::string_view kState = "pipeline_state.json";
inline constexpr std::string_view kRecords = "records.json";
inline constexpr std::string_view kVocabularies = "vocabularies.json";
inline constexpr std::string_view kTiles = "tiles.json";
inline constexpr std::string_view kEmbeddings = "embeddings.emb";
inline constexpr std::string_view kReductions = "reductions.csv";
inline constexpr std::string_view kNormalization = "normalization.json";
inline constexpr std::string_view kFusedTraining = "fused_training.csv";
inline constexpr std::string_view kFusedQueries = "fused_queries.csv";
inline constexpr std::string_view kModel = "som_model.json";
inline constexpr std::string_view kTrainingTrace = "som_training.csv";
inline constexpr std::string_view kPredictions = "predictions.json";
inline constexpr std::string_view kEvaluation = "evaluation.json";
inline constexpr std::string_view kEvaluationRows = "evaluation_rows.csv";
inline constexpr std::string_view kPlanes = "planes";
}  // namespace artifact

enum class StageStatus { Ran, Reused };

struct StageOutcome {
  Stage stage;
  StageStatus status;
};

struct RunResult {
  int exit_code = kExitOk;
  std::string message;  ///< first failure, empty on success
  std::vector<StageOutcome> stages;
};

/// Runs the stages in pipeline order. Never throws for library errors: they
/// are mapped to exit codes, and a missing input names the artifact.
RunResult run_pipeline(const PipelineConfig& config, std::span<const Stage> stages, std::ostream& log);

}  // namespace somfuse::pipeline
