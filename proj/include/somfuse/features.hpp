#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "somfuse/image.hpp"

namespace somfuse::features {

inline constexpr std::size_t kFeatureDim = 4096;
inline constexpr std::size_t kPatchSide = 224;

// Baseline layout, concatenated in this order.
inline constexpr std::size_t kHistogramBins = 256;
inline constexpr std::size_t kHistogramDims = 3 * kHistogramBins;      // 768
inline constexpr std::size_t kThumbnailSide = 56;
inline constexpr std::size_t kThumbnailDims = kThumbnailSide * kThumbnailSide;  // 3136
inline constexpr std::size_t kGradientBlock = 8;
inline constexpr std::size_t kGradientDims = 192;

/// Maps one 224x224 RGB patch to a fixed-length vector.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<double> extract(const Image& patch) const = 0;
};

/// Deterministic, weight-free extractor:
///   per-channel 256-bin histograms normalized to sum 1   (768)
///   56x56 grayscale thumbnail, 4x4 mean pooling, in [0,1] (3136)
///   mean gradient magnitude of the first 192 8x8 blocks   (192)
class BaselineExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "baseline-v1"; }
  std::size_t dimension() const override { return kFeatureDim; }
  std::vector<double> extract(const Image& patch) const override;
};

/// Throws InvalidShape unless the image is exactly 224x224x3.
std::vector<double> extract_patch_features(const Image& patch);

/// Resizes any RGB image to the patch size first.
Image to_patch(const Image& image);

/// Component-wise mean. Throws EmptyInput for an empty list and
/// DimensionMismatch for ragged input.
std::vector<double> aggregate_patches(std::span<const std::vector<double>> patches);

// ---------------------------------------------------------------------------
// Embedding cache ("EMB1")
//
//   "EMB1" | dim u32 | name_len u32 | name bytes | rows u64 |
//   rows x ( id_len u32 | id bytes | patch_index u32 | dim x f32 )
//
// All integers and floats little-endian.

struct PatchFeature {
  std::string disaster_id;
  std::uint32_t patch_index = 0;
  std::vector<float> vector;

  bool operator==(const PatchFeature&) const = default;
};

struct EmbeddingCache {
  std::uint32_t dimension = kFeatureDim;
  std::string extractor;
  std::vector<PatchFeature> rows;

  bool operator==(const EmbeddingCache&) const = default;
};

/// Throws DimensionMismatch for ragged rows and DuplicateRow for a repeated
/// (disaster_id, patch_index).
void validate(const EmbeddingCache& cache);

void write_embedding_cache(const EmbeddingCache& cache, const std::filesystem::path& path);

/// FormatError for a malformed header or trailing bytes, DimensionMismatch for
/// a short row or a header dimension different from `expected_dimension`
/// (0 accepts any), DuplicateRow for repeated keys.
EmbeddingCache read_embedding_cache(const std::filesystem::path& path, std::uint32_t expected_dimension = 0);

/// Format checker: returns human-readable problems, empty when the file is valid.
std::vector<std::string> check_embedding_cache(const std::filesystem::path& path,
                                               std::uint32_t expected_dimension = kFeatureDim);

/// Debug mirror: id, patch_index, v0..v{dim-1}.
void write_embedding_csv(const EmbeddingCache& cache, const std::filesystem::path& path);
EmbeddingCache read_embedding_csv(const std::filesystem::path& path, std::string extractor = "csv");

/// Mean-pools every disaster's patch rows.
std::map<std::string, std::vector<double>> aggregate_by_disaster(const EmbeddingCache& cache);

}  // namespace somfuse::features
