#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "somfuse/csv.hpp"
#include "somfuse/encode.hpp"

using namespace somfuse;

namespace {

std::vector<std::string> table_a2_texts() {
  std::ifstream in(SOMFUSE_FIXTURES "/table_a2.csv");
  const auto rows = csv::read(in);
  std::vector<std::string> out;
  for (std::size_t i = 1; i < rows.size(); ++i) out.push_back(rows[i][1]);
  return out;
}

Vocabulary vocab_of(const std::vector<std::string>& texts) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& t : texts) corpus.push_back(tokenize(t));
  return build_vocabulary(corpus);
}

}  // namespace

TEST_CASE("tokenize lowercases, splits on whitespace and trims punctuation") {
  CHECK(tokenize("Hot Semi-Arid,  hot\tdesert.") == std::vector<std::string>{"hot", "semi-arid", "hot", "desert"});
  CHECK(tokenize("").empty());
  CHECK(tokenize(" ( ) ").empty());
}

TEST_CASE("vocabulary over the five example descriptions") {
  const auto texts = table_a2_texts();
  REQUIRE(texts.size() == 5);
  const auto vocab = vocab_of(texts);
  CHECK(vocab.size() == 26);
  CHECK(std::is_sorted(vocab.tokens().begin(), vocab.tokens().end()));
  CHECK(vocab.position("hot").has_value());
  CHECK_FALSE(vocab.position("arctic").has_value());
}

TEST_CASE("entry 2 count vector has seven tokens, one of them twice") {
  const auto texts = table_a2_texts();
  const auto vocab = vocab_of(texts);
  const auto counts = encode_counts(tokenize(texts[1]), vocab);
  CHECK(counts.total() == 7);
  CHECK(counts.dropped == 0);
  std::map<std::uint32_t, int> histogram;
  for (auto c : counts.counts) {
    if (c > 0) ++histogram[c];
  }
  CHECK(histogram == std::map<std::uint32_t, int>{{1, 5}, {2, 1}});
  CHECK(counts.counts[*vocab.position("hot")] == 2);
}

TEST_CASE("count vectors ignore token order") {
  const auto texts = table_a2_texts();
  const auto vocab = vocab_of(texts);
  std::mt19937 rng(3);
  for (const auto& t : texts) {
    auto tokens = tokenize(t);
    const auto reference = encode_counts(tokens, vocab).counts;
    std::shuffle(tokens.begin(), tokens.end(), rng);
    CHECK(encode_counts(tokens, vocab).counts == reference);
    CHECK(encode_counts(tokens, vocab).total() == tokens.size());
  }
}

TEST_CASE("unknown tokens are dropped and counted, or rejected") {
  const auto vocab = Vocabulary::from_tokens({"cold", "desert"});
  const std::vector<std::string> tokens = {"cold", "arctic", "desert", "tundra"};
  const auto counts = encode_counts(tokens, vocab);
  CHECK(counts.dropped == 2);
  CHECK(counts.total() == 2);
  CHECK_THROWS_AS(encode_counts(tokens, vocab, UnknownTokens::Reject), Error);
}

TEST_CASE("vocabulary file round trip") {
  const auto vocab = vocab_of(table_a2_texts());
  const auto path = std::filesystem::temp_directory_path() / "somfuse_vocab.txt";
  vocab.save(path);
  CHECK(Vocabulary::load(path) == vocab);
  std::filesystem::remove(path);
}

TEST_CASE("dates scalarize to days since 1970-01-01") {
  CHECK(scalarize_time(Date{1970, 1, 1}) == 0.0);
  CHECK(scalarize_time(Date{2020, 1, 17}) == 18278.0);
  CHECK(scalarize_time(Date{1969, 12, 31}) == -1.0);
  CHECK(scalarize_time(Date{2020, 3, 1}) - scalarize_time(Date{2020, 2, 28}) == 2.0);
}

TEST_CASE("winsor fence for a single outlier column") {
  const std::vector<double> column = {0, 0, 0, 1000};
  // mean 250, sample sd 500: the k=3 fence at 1750 leaves the column alone
  const auto wide = fit_winsor_fence(column, 3.0);
  REQUIRE(wide);
  CHECK(wide->upper == 1750.0);
  CHECK(wide->lower == -1250.0);
  CHECK(winsorize_outliers(column, 3.0) == column);

  const auto tight = winsorize_outliers(column, 1.0);
  CHECK(tight == std::vector<double>{0, 0, 0, 750});
}

TEST_CASE("winsorizing keeps length and order and clipping with a fixed fence is idempotent") {
  std::mt19937_64 rng(11);
  std::lognormal_distribution<double> heavy(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> column(30);
    for (auto& v : column) v = heavy(rng);
    const auto fence = fit_winsor_fence(column, 2.0);
    REQUIRE(fence);
    const auto once = apply_winsor_fence(column, *fence);
    REQUIRE(once.size() == column.size());
    CHECK(apply_winsor_fence(once, *fence) == once);
    for (std::size_t i = 0; i + 1 < column.size(); ++i) {
      if (column[i] <= column[i + 1]) CHECK(once[i] <= once[i + 1]);
    }
  }
}

TEST_CASE("winsorize edge cases") {
  const std::vector<double> flat = {5, 5, 5};
  CHECK_FALSE(fit_winsor_fence(flat).has_value());
  CHECK(winsorize_outliers(flat) == flat);
  CHECK_THROWS_AS(fit_winsor_fence(std::vector<double>{1.0}), Error);
  CHECK_THROWS_AS(fit_winsor_fence(std::vector<double>{1.0, 2.0}, 0.0), Error);
}
