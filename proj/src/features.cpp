#include "somfuse/features.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <utility>

#include "somfuse/csv.hpp"
#include "somfuse/error.hpp"
#include "somfuse/simd/kernels.hpp"

namespace somfuse::features {

static_assert(kHistogramDims + kThumbnailDims + kGradientDims == kFeatureDim);

std::vector<double> extract_patch_features(const Image& patch) {
  if (patch.width != kPatchSide || patch.height != kPatchSide || patch.channels != 3 ||
      patch.pixels.size() != kPatchSide * kPatchSide * 3) {
    throw Error(ErrorCode::InvalidShape, "patch must be 224x224x3, got " + std::to_string(patch.width) + "x" +
                                             std::to_string(patch.height) + "x" + std::to_string(patch.channels));
  }
  constexpr std::size_t n = kPatchSide;
  std::vector<double> out(kFeatureDim, 0.0);

  // Channel histograms.
  std::vector<std::uint32_t> counts(kHistogramDims, 0);
  for (std::size_t i = 0; i < n * n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) ++counts[c * kHistogramBins + patch.pixels[i * 3 + c]];
  }
  for (std::size_t k = 0; k < kHistogramDims; ++k) out[k] = static_cast<double>(counts[k]) / static_cast<double>(n * n);

  // Grayscale sums (R+G+B, 0..765) keep pooling exact.
  std::vector<std::uint32_t> gray(n * n);
  for (std::size_t i = 0; i < n * n; ++i) {
    gray[i] = std::uint32_t{patch.pixels[i * 3]} + patch.pixels[i * 3 + 1] + patch.pixels[i * 3 + 2];
  }

  constexpr std::size_t pool = n / kThumbnailSide;
  for (std::size_t ty = 0; ty < kThumbnailSide; ++ty) {
    for (std::size_t tx = 0; tx < kThumbnailSide; ++tx) {
      std::uint32_t sum = 0;
      for (std::size_t y = ty * pool; y < (ty + 1) * pool; ++y) {
        for (std::size_t x = tx * pool; x < (tx + 1) * pool; ++x) sum += gray[y * n + x];
      }
      out[kHistogramDims + ty * kThumbnailSide + tx] = static_cast<double>(sum) / (pool * pool * 3.0 * 255.0);
    }
  }

  constexpr std::size_t blocks_per_row = n / kGradientBlock;
  for (std::size_t b = 0; b < kGradientDims; ++b) {
    const std::size_t by = b / blocks_per_row;
    const std::size_t bx = b % blocks_per_row;
    double sum = 0.0;
    for (std::size_t y = by * kGradientBlock; y < (by + 1) * kGradientBlock; ++y) {
      for (std::size_t x = bx * kGradientBlock; x < (bx + 1) * kGradientBlock; ++x) {
        const double g = static_cast<double>(gray[y * n + x]);
        const double gx = x + 1 < n ? static_cast<double>(gray[y * n + x + 1]) - g : 0.0;
        const double gy = y + 1 < n ? static_cast<double>(gray[(y + 1) * n + x]) - g : 0.0;
        sum += std::sqrt(gx * gx + gy * gy) / (3.0 * 255.0);
      }
    }
    out[kHistogramDims + kThumbnailDims + b] = sum / static_cast<double>(kGradientBlock * kGradientBlock);
  }
  return out;
}

std::vector<double> BaselineExtractor::extract(const Image& patch) const { return extract_patch_features(patch); }

Image to_patch(const Image& image) {
  if (image.channels != 3) throw Error(ErrorCode::InvalidShape, "patch source must be RGB");
  return resize_bilinear(image, kPatchSide, kPatchSide);
}

std::vector<double> aggregate_patches(std::span<const std::vector<double>> patches) {
  if (patches.empty()) throw Error(ErrorCode::EmptyInput, "aggregate_patches needs at least one patch");
  const std::size_t dim = patches.front().size();
  std::vector<double> sum(dim, 0.0);
  const auto& kernels = simd::active_kernels();
  for (const auto& p : patches) {
    if (p.size() != dim) throw Error(ErrorCode::DimensionMismatch, "patches have different dimensions");
    kernels.accumulate(sum.data(), p.data(), dim);
  }
  const double count = static_cast<double>(patches.size());
  for (double& v : sum) v /= count;
  return sum;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const { return bytes_.size() - offset_ >= n; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

  std::uint64_t uint(std::size_t width, const char* what) {
    if (!has(width)) throw Error(ErrorCode::FormatError, std::string("embedding cache: truncated ") + what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[offset_ + i])) << (8 * i);
    }
    offset_ += width;
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    if (!has(n)) throw Error(ErrorCode::FormatError, std::string("embedding cache: truncated ") + what);
    std::string s(bytes_.substr(offset_, n));
    offset_ += n;
    return s;
  }

 private:
  std::string_view bytes_;
  std::size_t offset_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open embedding cache '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EmbeddingCache parse_cache(std::string_view bytes, std::uint32_t expected_dimension) {
  Reader r(bytes);
  if (r.text(4, "magic") != std::string_view(kMagic, 4)) {
    throw Error(ErrorCode::FormatError, "embedding cache: bad magic, expected EMB1");
  }
  EmbeddingCache cache;
  cache.dimension = static_cast<std::uint32_t>(r.uint(4, "dimension"));
  if (cache.dimension == 0) throw Error(ErrorCode::FormatError, "embedding cache: zero dimension");
  if (expected_dimension != 0 && cache.dimension != expected_dimension) {
    throw Error(ErrorCode::DimensionMismatch, "embedding cache: header dimension " + std::to_string(cache.dimension) +
                                                  ", expected " + std::to_string(expected_dimension));
  }
  const auto name_len = r.uint(4, "extractor name length");
  cache.extractor = r.text(name_len, "extractor name");
  const std::uint64_t rows = r.uint(8, "row count");

  std::set<std::pair<std::string, std::uint32_t>> keys;
  const std::size_t row_bytes = std::size_t{cache.dimension} * 4;
  for (std::uint64_t i = 0; i < rows; ++i) {
    PatchFeature row;
    const auto id_len = r.uint(4, "row id length");
    row.disaster_id = r.text(id_len, "row id");
    row.patch_index = static_cast<std::uint32_t>(r.uint(4, "patch index"));
    if (!r.has(row_bytes)) {
      throw Error(ErrorCode::DimensionMismatch, "embedding cache: row " + std::to_string(i) + " has " +
                                                    std::to_string(r.remaining() / 4) + " values, header says " +
                                                    std::to_string(cache.dimension));
    }
    row.vector.resize(cache.dimension);
    for (auto& v : row.vector) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4, "value")));
    if (!keys.emplace(row.disaster_id, row.patch_index).second) {
      throw Error(ErrorCode::DuplicateRow, "embedding cache: duplicate row (" + row.disaster_id + ", " +
                                               std::to_string(row.patch_index) + ")");
    }
    cache.rows.push_back(std::move(row));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::FormatError, "embedding cache: trailing bytes after last row");
  return cache;
}

}  // namespace

void validate(const EmbeddingCache& cache) {
  std::set<std::pair<std::string, std::uint32_t>> keys;
  for (const auto& row : cache.rows) {
    if (row.vector.size() != cache.dimension) {
      throw Error(ErrorCode::DimensionMismatch, "row (" + row.disaster_id + ", " + std::to_string(row.patch_index) +
                                                    ") has " + std::to_string(row.vector.size()) + " values, header says " +
                                                    std::to_string(cache.dimension));
    }
    for (float v : row.vector) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidValue, "non-finite value in row " + row.disaster_id);
    }
    if (!keys.emplace(row.disaster_id, row.patch_index).second) {
      throw Error(ErrorCode::DuplicateRow, "duplicate row (" + row.disaster_id + ", " +
                                               std::to_string(row.patch_index) + ")");
    }
  }
}

void write_embedding_cache(const EmbeddingCache& cache, const std::filesystem::path& path) {
  validate(cache);
  std::string out(kMagic, 4);
  put_u32(out, cache.dimension);
  put_u32(out, static_cast<std::uint32_t>(cache.extractor.size()));
  out += cache.extractor;
  put_u64(out, cache.rows.size());
  for (const auto& row : cache.rows) {
    put_u32(out, static_cast<std::uint32_t>(row.disaster_id.size()));
    out += row.disaster_id;
    put_u32(out, row.patch_index);
    for (float v : row.vector) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::Io, "cannot write embedding cache '" + path.string() + "'");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

EmbeddingCache read_embedding_cache(const std::filesystem::path& path, std::uint32_t expected_dimension) {
  return parse_cache(slurp(path), expected_dimension);
}

std::vector<std::string> check_embedding_cache(const std::filesystem::path& path, std::uint32_t expected_dimension) {
  try {
    const auto cache = read_embedding_cache(path, expected_dimension);
    validate(cache);
  } catch (const Error& ex) {
    return {ex.what()};
  }
  return {};
}

void write_embedding_csv(const EmbeddingCache& cache, const std::filesystem::path& path) {
  validate(cache);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write embedding csv '" + path.string() + "'");
  csv::Row header{"id", "patch_index"};
  for (std::uint32_t d = 0; d < cache.dimension; ++d) header.push_back("v" + std::to_string(d));
  csv::write_row(out, header);
  for (const auto& row : cache.rows) {
    csv::Row line{row.disaster_id, std::to_string(row.patch_index)};
    for (float v : row.vector) line.push_back(csv::format_double(static_cast<double>(v)));
    csv::write_row(out, line);
  }
}

EmbeddingCache read_embedding_csv(const std::filesystem::path& path, std::string extractor) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open embedding csv '" + path.string() + "'");
  const auto rows = csv::read(in);
  if (rows.empty() || rows.front().size() < 3 || rows.front()[0] != "id" || rows.front()[1] != "patch_index") {
    throw Error(ErrorCode::FormatError, "embedding csv: bad header");
  }
  EmbeddingCache cache;
  cache.extractor = std::move(extractor);
  cache.dimension = static_cast<std::uint32_t>(rows.front().size() - 2);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != rows.front().size()) {
      throw Error(ErrorCode::DimensionMismatch, "embedding csv: row " + std::to_string(i + 1) + " has " +
                                                    std::to_string(r.size() - 2) + " values, header says " +
                                                    std::to_string(cache.dimension));
    }
    PatchFeature row;
    row.disaster_id = r[0];
    row.patch_index = static_cast<std::uint32_t>(csv::parse_int(r[1], "patch_index"));
    row.vector.reserve(cache.dimension);
    for (std::size_t c = 2; c < r.size(); ++c) row.vector.push_back(static_cast<float>(csv::parse_double(r[c], "value")));
    cache.rows.push_back(std::move(row));
  }
  validate(cache);
  return cache;
}

std::map<std::string, std::vector<double>> aggregate_by_disaster(const EmbeddingCache& cache) {
  // Streaming mean: same accumulation order as aggregate_patches.
  std::map<std::string, std::pair<std::vector<double>, std::size_t>> sums;
  std::vector<double> row_values(cache.dimension);
  const auto& kernels = simd::active_kernels();
  for (const auto& row : cache.rows) {
    if (row.vector.size() != cache.dimension) {
      throw Error(ErrorCode::DimensionMismatch, "row " + row.disaster_id + " has the wrong dimension");
    }
    auto& [sum, count] = sums[row.disaster_id];
    if (sum.empty()) sum.assign(cache.dimension, 0.0);
    std::copy(row.vector.begin(), row.vector.end(), row_values.begin());
    kernels.accumulate(sum.data(), row_values.data(), cache.dimension);
    ++count;
  }
  std::map<std::string, std::vector<double>> out;
  for (auto& [id, entry] : sums) {
    auto& [sum, count] = entry;
    for (double& v : sum) v /= static_cast<double>(count);
    out.emplace(id, std::move(sum));
  }
  return out;
}

}  // namespace somfuse::features
