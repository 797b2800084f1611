#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "somfuse/encode.hpp"
#include "somfuse/schema.hpp"
#include "somfuse/tsne.hpp"

namespace somfuse {

/// sign(x) * ln(1 + |x|).
double log_transform(double x) noexcept;
double inverse_log_transform(double y) noexcept;

struct StandardizedColumn {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  ///< sample (n - 1) standard deviation
};

/// (x - mean) / sample stddev. Throws InvalidValue for fewer than two values
/// and DegenerateColumn for zero variance.
StandardizedColumn standardize_column(std::span<const double> values);

struct AttributeParams {
  std::string name;
  double mean = 0.0;
  double stddev = 1.0;
  bool log_applied = false;
  bool degenerate = false;  ///< zero training variance; the slot is zero-filled
  std::optional<WinsorFence> fence;

  bool operator==(const AttributeParams& o) const {
    return name == o.name && mean == o.mean && stddev == o.stddev && log_applied == o.log_applied &&
           degenerate == o.degenerate && fence.has_value() == o.fence.has_value() &&
           (!fence || (fence->lower == o.fence->lower && fence->upper == o.fence->upper));
  }
};

/// Training statistics for every fused slot, in schema order.
class NormalizationParams {
 public:
  NormalizationParams() = default;
  explicit NormalizationParams(std::vector<AttributeParams> entries) : entries_(std::move(entries)) {}

  const std::vector<AttributeParams>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  /// Throws NotFitted when the attribute has no parameters.
  const AttributeParams& at(std::string_view name) const;
  const AttributeParams* find(std::string_view name) const noexcept;

  std::string to_json() const;
  static NormalizationParams from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static NormalizationParams load(const std::filesystem::path& path);

  bool operator==(const NormalizationParams&) const = default;

 private:
  std::vector<AttributeParams> entries_;
};

/// Fence clip, optional log, then standardization with the stored statistics.
double apply_params(double value, const AttributeParams& params) noexcept;
double apply_params(double value, const NormalizationParams& params, std::string_view name);
/// Inverse of apply_params for unclipped values.
double invert_params(double standardized, const AttributeParams& params) noexcept;

struct FusedVector {
  std::string id;
  std::vector<double> components;  ///< schema order
  std::vector<std::uint8_t> mask;  ///< 1 = unknown at query time

  bool operator==(const FusedVector&) const = default;
  bool any_masked() const noexcept;
};

/// Slot name -> already standardized value.
using SlotValues = std::map<std::string, double, std::less<>>;

/// Throws MissingAttribute for a slot that is neither provided nor masked.
FusedVector assemble_fused(std::string id, const SlotValues& slots, const AttributeSchema& schema,
                           const std::set<std::string, std::less<>>& masked = {});

/// Target slot names present in the schema.
std::set<std::string, std::less<>> target_slots(const AttributeSchema& schema);

// ---------------------------------------------------------------------------
// Modality reduction: every latlon/text/image attribute becomes one coordinate.

/// attribute -> record id -> 1-d coordinate
using Reductions = std::map<std::string, std::map<std::string, double>>;

struct ReductionOptions {
  tsne::TsneConfig tsne;
  std::uint64_t seed = 0;
};

struct ReductionResult {
  Reductions coordinates;
  std::map<std::string, Vocabulary> vocabularies;  ///< text attributes
  std::map<std::string, tsne::Trace> traces;       ///< training runs
  std::size_t dropped_tokens = 0;                  ///< query tokens outside the training vocabulary
  std::size_t perplexity_warnings = 0;
};

/// Text vocabularies are built from the training records only. Throws
/// MissingAttribute if a record lacks a reduced modality.
ReductionResult reduce_modalities(const std::vector<DisasterRecord>& training,
                                  const std::vector<DisasterRecord>& queries, const AttributeSchema& schema,
                                  const ReductionOptions& options,
                                  const std::map<std::string, Vocabulary>* vocabularies = nullptr);

void write_reductions_csv(const std::filesystem::path& path, const Reductions& reductions);
Reductions read_reductions_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct FusionOptions {
  std::set<std::string, std::less<>> log_attributes = {"deaths", "affected", "damages", "population", "area",
                                                       "construction_value_added"};
  double winsor_k = 3.0;  ///< 0 disables outlier clipping
};

struct FusionResult {
  NormalizationParams params;
  std::vector<FusedVector> training;
  std::vector<FusedVector> queries;  ///< targets masked
};

/// Fits statistics on the training rows and applies them to both sets.
FusionResult fit_fusion(const std::vector<DisasterRecord>& training, const std::vector<DisasterRecord>& queries,
                        const Reductions& reductions, const AttributeSchema& schema,
                        const FusionOptions& options = {});

/// Query-time fusion of a single record with stored parameters.
FusedVector fuse_query(const DisasterRecord& record, const Reductions& reductions, const NormalizationParams& params,
                       const AttributeSchema& schema);

void write_fused_csv(const std::filesystem::path& path, const std::vector<FusedVector>& vectors,
                     const AttributeSchema& schema);
std::vector<FusedVector> read_fused_csv(const std::filesystem::path& path, const AttributeSchema& schema);

}  // namespace somfuse
