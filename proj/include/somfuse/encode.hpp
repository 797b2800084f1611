#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somfuse/schema.hpp"

namespace somfuse {

/// Lowercases and splits on whitespace. Hyphenated compounds stay whole;
/// list punctuation (, ; : . and brackets) is trimmed from token ends.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::optional<std::size_t> position(std::string_view token) const;

  /// Newline-delimited, one token per line, in index order.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  /// Sorts and deduplicates.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

Vocabulary build_vocabulary(std::span<const std::vector<std::string>> corpus);

struct CountVector {
  std::vector<std::uint32_t> counts;
  std::size_t dropped = 0;  ///< tokens missing from the vocabulary

  std::size_t total() const noexcept;
  std::vector<double> as_reals() const;
};

enum class UnknownTokens { Drop, Reject };

/// Bag-of-words multiplicities. With UnknownTokens::Reject an out-of-vocabulary
/// token throws InvalidValue; with Drop it is counted in `dropped`.
CountVector encode_counts(std::span<const std::string> tokens, const Vocabulary& vocab,
                          UnknownTokens policy = UnknownTokens::Drop);

/// Days since 1970-01-01 (negative before). Throws InvalidValue for invalid dates.
double scalarize_time(const Date& date);

struct WinsorFence {
  double lower;
  double upper;
  double clip(double v) const noexcept { return v < lower ? lower : (v > upper ? upper : v); }
};

/// mean -/+ k * sample standard deviation. std::nullopt for zero variance.
/// Throws InvalidValue if fewer than 2 values or k <= 0.
std::optional<WinsorFence> fit_winsor_fence(std::span<const double> values, double k = 3.0);
std::vector<double> apply_winsor_fence(std::span<const double> values, const WinsorFence& fence);

/// Clips values beyond the fitted fence; zero-variance columns come back unchanged.
std::vector<double> winsorize_outliers(std::span<const double> values, double k = 3.0);

}  // namespace somfuse
