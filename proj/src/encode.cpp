#include "somfuse/encode.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>

#include "somfuse/error.hpp"

namespace somfuse {

namespace {

bool is_trim_char(char c) {
  switch (c) {
    case ',': case ';': case ':': case '.': case '(': case ')':
    case '[': case ']': case '"': case '\'':
      return true;
    default:
      return false;
  }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::string_view word = text.substr(start, i - start);
    while (!word.empty() && is_trim_char(word.front())) word.remove_prefix(1);
    while (!word.empty() && is_trim_char(word.back())) word.remove_suffix(1);
    if (word.empty()) continue;
    std::string token(word);
    std::transform(token.begin(), token.end(), token.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    tokens.push_back(std::move(token));
  }
  return tokens;
}

std::optional<std::size_t> Vocabulary::position(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_.emplace(v.tokens_[i], i);
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write vocabulary '" + path.string() + "'");
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open vocabulary '" + path.string() + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  if (!std::is_sorted(tokens.begin(), tokens.end()) ||
      std::adjacent_find(tokens.begin(), tokens.end()) != tokens.end()) {
    throw Error(ErrorCode::FormatError, "vocabulary file is not sorted and unique: " + path.string());
  }
  return from_tokens(std::move(tokens));
}

Vocabulary build_vocabulary(std::span<const std::vector<std::string>> corpus) {
  std::vector<std::string> all;
  for (const auto& doc : corpus) all.insert(all.end(), doc.begin(), doc.end());
  return Vocabulary::from_tokens(std::move(all));
}

std::size_t CountVector::total() const noexcept {
  std::size_t sum = 0;
  for (auto c : counts) sum += c;
  return sum;
}

std::vector<double> CountVector::as_reals() const {
  return std::vector<double>(counts.begin(), counts.end());
}

CountVector encode_counts(std::span<const std::string> tokens, const Vocabulary& vocab,
                          UnknownTokens policy) {
  CountVector out;
  out.counts.assign(vocab.size(), 0);
  for (const auto& t : tokens) {
    if (auto pos = vocab.position(t)) {
      ++out.counts[*pos];
    } else if (policy == UnknownTokens::Reject) {
      throw Error(ErrorCode::InvalidValue, "token '" + t + "' is not in the vocabulary");
    } else {
      ++out.dropped;
    }
  }
  return out;
}

double scalarize_time(const Date& date) {
  if (!date.valid()) throw Error(ErrorCode::InvalidValue, "invalid date " + date.to_string());
  using namespace std::chrono;
  const sys_days days{year_month_day{year{date.year}, month{date.month}, day{date.day}}};
  return static_cast<double>(days.time_since_epoch().count());
}

std::optional<WinsorFence> fit_winsor_fence(std::span<const double> values, double k) {
  if (values.size() < 2) throw Error(ErrorCode::InvalidValue, "winsorize needs at least 2 values");
  if (!(k > 0.0)) throw Error(ErrorCode::InvalidValue, "winsorize fence multiplier must be positive");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  if (!(sd > 0.0)) return std::nullopt;
  return WinsorFence{mean - k * sd, mean + k * sd};
}

std::vector<double> apply_winsor_fence(std::span<const double> values, const WinsorFence& fence) {
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v = fence.clip(v);
  return out;
}

std::vector<double> winsorize_outliers(std::span<const double> values, double k) {
  const auto fence = fit_winsor_fence(values, k);
  if (!fence) return {values.begin(), values.end()};
  return apply_winsor_fence(values, *fence);
}

}  // namespace somfuse
