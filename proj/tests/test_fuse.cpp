#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>

#include "somfuse/encode.hpp"
#include "somfuse/fuse.hpp"
#include "somfuse/synthetic.hpp"

using namespace somfuse;
namespace fs = std::filesystem;

namespace {

struct Split {
  std::vector<DisasterRecord> training;
  std::vector<DisasterRecord> queries;
};

Split synthetic_split(std::uint64_t seed = 7) {
  synthetic::SyntheticOptions options;
  options.seed = seed;
  const auto data = synthetic::generate(options);
  Split s;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  for (auto r : data.records) {
    const double k = static_cast<double>(data.cluster.at(r.id));
    r.satellite_feature = std::vector<double>(8);
    for (auto& v : *r.satellite_feature) v = k + g(rng);
    (r.role == RecordRole::Training ? s.training : s.queries).push_back(r);
  }
  return s;
}

/// Deterministic stand-in coordinates so fusion tests skip t-SNE.
Reductions fake_reductions(const Split& s) {
  Reductions out;
  double v = 0.25;
  for (const char* name : {"location", "climate_types", "natural_resources", "satellite_image"}) {
    for (const auto* set : {&s.training, &s.queries})
      for (const auto& r : *set) {
        out[name][r.id] = v;
        v = std::fmod(v * 3.7 + 0.11, 10.0);
      }
  }
  return out;
}

double sample_variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("signed log transform") {
  CHECK(log_transform(0.0) == 0.0);
  CHECK(log_transform(99.0) == doctest::Approx(4.60517).epsilon(1e-6));
  CHECK(log_transform(-99.0) == doctest::Approx(-4.60517).epsilon(1e-6));
  double last = -std::numeric_limits<double>::infinity();
  for (double x = -1e6; x <= 1e6; x = x < 0 ? x / 1.7 + (x > -1 ? 0.3 : 0) : x * 1.7 + 0.3) {
    CHECK(log_transform(-x) == -log_transform(x));
    CHECK(log_transform(x) > last);
    last = log_transform(x);
    if (std::abs(x) > std::exp(1.0) - 1.0) CHECK(std::abs(log_transform(x)) < std::abs(x));
    CHECK(inverse_log_transform(log_transform(x)) == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("standardization of [1, 2, 3] is exact") {
  const std::vector<double> v = {1, 2, 3};
  const auto s = standardize_column(v);
  CHECK(s.values == std::vector<double>{-1, 0, 1});
  CHECK(s.mean == 2.0);
  CHECK(s.stddev == 1.0);
}

TEST_CASE("standardized columns have zero mean and unit sample variance") {
  std::mt19937_64 rng(5);
  std::lognormal_distribution<double> heavy(3.0, 1.5);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> column(2 + trial * 3);
    for (auto& v : column) v = heavy(rng);
    const auto s = standardize_column(column);
    double mean = 0.0;
    for (double v : s.values) mean += v;
    CHECK(std::abs(mean / static_cast<double>(s.values.size())) < 1e-9);
    CHECK(std::abs(sample_variance(s.values) - 1.0) < 1e-9);

    std::vector<double> affine(column.size());
    for (std::size_t i = 0; i < column.size(); ++i) affine[i] = 4.5 * column[i] - 17.0;
    const auto t = standardize_column(affine);
    for (std::size_t i = 0; i < column.size(); ++i) CHECK(t.values[i] == doctest::Approx(s.values[i]).epsilon(1e-9));
  }
}

TEST_CASE("standardization errors") {
  CHECK(code_of([] { standardize_column(std::vector<double>{5, 5, 5}); }) == ErrorCode::DegenerateColumn);
  CHECK(code_of([] { standardize_column(std::vector<double>{5}); }) == ErrorCode::InvalidValue);
}

TEST_CASE("apply_params uses the stored statistics") {
  AttributeParams p{"x", 10.0, 4.0, false, false, std::nullopt};
  CHECK(apply_params(10.0, p) == 0.0);
  CHECK(apply_params(14.0, p) == 1.0);
  p.log_applied = true;
  CHECK(apply_params(std::expm1(14.0), p) == doctest::Approx(1.0));
  p.fence = WinsorFence{0.0, 100.0};
  CHECK(apply_params(1e9, p) == apply_params(100.0, p));
  CHECK(invert_params(apply_params(42.0, p), p) == doctest::Approx(42.0));

  const NormalizationParams params({p});
  CHECK(code_of([&] { apply_params(1.0, params, "y"); }) == ErrorCode::NotFitted);
}

TEST_CASE("normalization parameters survive JSON") {
  const NormalizationParams params({{"a", 0.1 + 0.2, 1.0 / 3.0, true, false, WinsorFence{-1.5, 2.25}},
                                    {"b", -7.0, 2.0, false, true, std::nullopt}});
  CHECK(NormalizationParams::from_json(params.to_json()) == params);
  CHECK(code_of([] { NormalizationParams::from_json(R"({"format_version": 2, "order": [], "attributes": {}})"); }) ==
        ErrorCode::FormatError);
  CHECK(code_of([] { NormalizationParams::from_json("{"); }) == ErrorCode::FormatError);
}

TEST_CASE("assembling fused vectors") {
  const auto& schema = default_schema();
  SlotValues forward, backward;
  for (std::size_t i = 0; i < schema.size(); ++i) forward[schema[i].name] = static_cast<double>(i) * 0.5;
  for (std::size_t i = schema.size(); i-- > 0;) backward[schema[i].name] = static_cast<double>(i) * 0.5;

  const auto v = assemble_fused("t", forward, schema);
  CHECK(v.components.size() == 19);
  CHECK_FALSE(v.any_masked());
  CHECK(assemble_fused("t", backward, schema) == v);

  const auto targets = target_slots(schema);
  CHECK(targets.size() == 3);
  auto partial = forward;
  for (const auto& t : targets) partial.erase(t);
  const auto q = assemble_fused("q", partial, schema, targets);
  for (std::size_t i = 0; i < 19; ++i) CHECK((q.mask[i] != 0) == targets.contains(schema[i].name));

  partial.erase("magnitude");
  CHECK(code_of([&] { assemble_fused("q", partial, schema, targets); }) == ErrorCode::MissingAttribute);
}

TEST_CASE("fit_fusion standardizes every training column") {
  const auto s = synthetic_split();
  const auto red = fake_reductions(s);
  const auto result = fit_fusion(s.training, s.queries, red, default_schema());
  REQUIRE(result.params.size() == 19);
  REQUIRE(result.training.size() == s.training.size());
  for (std::size_t c = 0; c < 19; ++c) {
    std::vector<double> column;
    for (const auto& v : result.training) column.push_back(v.components[c]);
    double mean = 0.0;
    for (double x : column) mean += x;
    CHECK(std::abs(mean / static_cast<double>(column.size())) < 1e-9);
    CHECK(std::abs(sample_variance(column) - 1.0) < 1e-9);
    CHECK(result.params.entries()[c].stddev > 0.0);
  }
  for (const auto& v : result.training) CHECK_FALSE(v.any_masked());
  const auto targets = target_slots(default_schema());
  for (const auto& q : result.queries) {
    for (std::size_t i = 0; i < 19; ++i) CHECK((q.mask[i] != 0) == targets.contains(default_schema()[i].name));
  }
}

TEST_CASE("un-standardizing recovers the raw training scalars") {
  const auto s = synthetic_split();
  FusionOptions options;
  options.winsor_k = 0.0;
  const auto result = fit_fusion(s.training, s.queries, fake_reductions(s), default_schema(), options);
  const auto& schema = default_schema();
  for (std::size_t i = 0; i < s.training.size(); ++i) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (schema[c].modality != Modality::Number) continue;
      const double raw = *numeric_attribute(s.training[i], schema[c].name);
      const double back = invert_params(result.training[i].components[c], result.params.entries()[c]);
      CHECK(std::abs(back - raw) <= 1e-6 * std::max(1.0, std::abs(raw)));
    }
  }
}

TEST_CASE("a 2020 query is fused with training statistics only") {
  auto s = synthetic_split();
  DisasterRecord q = s.queries.front();
  q.id = "vd-2020";
  q.time = Date{2020, 1, 17};
  q.magnitude = 5.9;
  q.deaths.reset();
  auto red = fake_reductions(s);
  for (auto& [name, coords] : red) coords["vd-2020"] = 0.5;
  const auto result = fit_fusion(s.training, {}, red, default_schema());
  const auto v = fuse_query(q, red, result.params, default_schema());

  const auto& time = result.params.at("time");
  CHECK(v.components[*default_schema().index_of("time")] == (18278.0 - time.mean) / time.stddev);
  const auto& mag = result.params.at("magnitude");
  const double clipped = mag.fence ? mag.fence->clip(5.9) : 5.9;
  CHECK(v.components[*default_schema().index_of("magnitude")] == (clipped - mag.mean) / mag.stddev);
  CHECK(v.mask[*default_schema().index_of("deaths")] == 1);
}

TEST_CASE("a zero-variance column is zero-filled and flagged") {
  auto s = synthetic_split();
  for (auto& r : s.training) r.elevation = 12.0;
  const auto result = fit_fusion(s.training, s.queries, fake_reductions(s), default_schema());
  const auto& p = result.params.at("elevation");
  CHECK(p.degenerate);
  const auto idx = *default_schema().index_of("elevation");
  for (const auto& v : result.training) CHECK(v.components[idx] == 0.0);
}

TEST_CASE("fusion reports missing inputs") {
  auto s = synthetic_split();
  auto red = fake_reductions(s);
  red["location"].erase(s.training[3].id);
  CHECK(code_of([&] { fit_fusion(s.training, s.queries, red, default_schema()); }) == ErrorCode::MissingAttribute);
  red = fake_reductions(s);
  s.training[0].magnitude.reset();
  CHECK(code_of([&] { fit_fusion(s.training, s.queries, red, default_schema()); }) == ErrorCode::MissingAttribute);
}

TEST_CASE("fused and reduction CSV files round trip") {
  const auto s = synthetic_split();
  const auto red = fake_reductions(s);
  const auto result = fit_fusion(s.training, s.queries, red, default_schema());
  const auto dir = fs::temp_directory_path() / "somfuse_fuse_io";
  fs::create_directories(dir);
  write_fused_csv(dir / "q.csv", result.queries, default_schema());
  CHECK(read_fused_csv(dir / "q.csv", default_schema()) == result.queries);
  write_fused_csv(dir / "t.csv", result.training, default_schema());
  CHECK(read_fused_csv(dir / "t.csv", default_schema()) == result.training);
  write_reductions_csv(dir / "r.csv", red);
  CHECK(read_reductions_csv(dir / "r.csv") == red);
  result.params.save(dir / "p.json");
  CHECK(NormalizationParams::load(dir / "p.json") == result.params);
  fs::remove_all(dir);
}

TEST_CASE("modality reduction builds text vocabularies from training records only") {
  auto s = synthetic_split();
  s.queries.front().climate_types = "tropical zzz-unknown";
  ReductionOptions options;
  options.tsne.perplexity = 5;
  options.tsne.iterations = 300;
  options.seed = 4;
  const auto result = reduce_modalities(s.training, s.queries, default_schema(), options);
  CHECK(result.coordinates.size() == 4);
  for (const auto& [name, coords] : result.coordinates) {
    CHECK(coords.size() == s.training.size() + s.queries.size());
  }
  CHECK(result.dropped_tokens >= 1);
  CHECK_FALSE(result.vocabularies.at("climate_types").position("zzz-unknown").has_value());
  CHECK(result.traces.at("location").rows.size() == 30);

  const auto again = reduce_modalities(s.training, s.queries, default_schema(), options);
  CHECK(again.coordinates == result.coordinates);

  s.training[2].satellite_feature.reset();
  CHECK(code_of([&] { reduce_modalities(s.training, s.queries, default_schema(), options); }) ==
        ErrorCode::MissingAttribute);
}
