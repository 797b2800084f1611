#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>

#include "somfuse/som.hpp"

using namespace somfuse;
using namespace somfuse::som;
namespace fs = std::filesystem;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = g(rng);
  return m;
}

/// Three tight blobs of 20 around well separated centers.
Matrix three_clusters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  const double centers[3][4] = {{-3, -3, 0, 1}, {3, 3, 0, -1}, {3, -3, 2, 0}};
  Matrix m(60, 4);
  for (std::size_t i = 0; i < 60; ++i)
    for (std::size_t d = 0; d < 4; ++d) m(i, d) = centers[i / 20][d] + g(rng);
  return m;
}

std::size_t brute_bmu(const SomModel& model, std::span<const double> x, const std::uint8_t* mask = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < model.nodes(); ++n) {
    double d2 = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
      if (mask != nullptr && mask[d] != 0) continue;
      const double diff = model.weight(n, d) - x[d];
      d2 += diff * diff;
    }
    if (d2 < best_d) {
      best_d = d2;
      best = n;
    }
  }
  return best;
}

double sq_distance(const SomModel& model, std::size_t node, std::span<const double> x, const std::uint8_t* mask) {
  double d2 = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    if (mask != nullptr && mask[d] != 0) continue;
    const double diff = model.weight(node, d) - x[d];
    d2 += diff * diff;
  }
  return d2;
}

SomConfig small_config(std::size_t steps = 2000, std::uint64_t seed = 3) {
  SomConfig c;
  c.steps = steps;
  c.seed = seed;
  return c;
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

TEST_CASE("schedules and neighborhood") {
  CHECK(decay(0.5, 0.01, 0, 100) == 0.5);
  CHECK(decay(0.5, 0.01, 99, 100) == doctest::Approx(0.01).epsilon(1e-12));
  double last = 1.0;
  for (std::size_t t = 1; t < 100; ++t) {
    const double a = decay(0.5, 0.01, t, 100);
    CHECK(a < last);
    last = a;
  }
  CHECK(neighborhood(0.0, 2.0) == 1.0);
  CHECK(neighborhood(2.0, 2.0) == doctest::Approx(std::exp(-0.5)));
  for (double g = 0.0; g < 10.0; g += 0.5) {
    CHECK(neighborhood(g + 0.5, 3.0) < neighborhood(g, 3.0));
    CHECK(neighborhood(g, 1.0) <= neighborhood(g, 3.0));
  }
  SomConfig c;
  CHECK(c.start_radius() == 5.0);
  c.rows = 1;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidValue);
  c = SomConfig{};
  c.final_learning_rate = 0.9;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidValue);
}

TEST_CASE("BMU search agrees with brute force on 1000 queries") {
  const auto model = train_som(random_matrix(80, 19, 1), small_config());
  const auto queries = random_matrix(1000, 19, 2, 1.5);
  std::mt19937_64 rng(9);
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const auto q = queries.row(i);
    const std::size_t bmu = find_bmu(model, q);
    const std::size_t ref = brute_bmu(model, q);
    CHECK(sq_distance(model, bmu, q, nullptr) == sq_distance(model, ref, q, nullptr));
    CHECK(bmu == ref);

    std::vector<std::uint8_t> mask(19, 0);
    for (std::size_t d = 0; d < 19; ++d) mask[d] = (rng() % 4 == 0) ? 1 : 0;
    mask[rng() % 19] = 0;
    const std::size_t mb = find_bmu_masked(model, q, mask);
    CHECK(mb == brute_bmu(model, q, mask.data()));
  }
}

TEST_CASE("ties go to the lowest node index") {
  auto model = train_som(random_matrix(10, 3, 4), small_config(100));
  std::fill(model.codebook.begin(), model.codebook.end(), 0.0);
  const std::vector<double> x = {1.0, 1.0, 1.0};
  CHECK(find_bmu(model, x) == 0);
  for (std::size_t d = 0; d < 3; ++d) {
    model.codebook[d * model.nodes() + 37] = 1.0;
    model.codebook[d * model.nodes() + 64] = 1.0;
  }
  CHECK(find_bmu(model, x) == 37);
}

TEST_CASE("BMU errors") {
  const auto model = train_som(random_matrix(10, 3, 4), small_config(100));
  const std::vector<double> x = {1.0, 2.0, 3.0};
  CHECK(code_of([&] { find_bmu_masked(model, x, std::vector<std::uint8_t>{1, 1, 1}); }) == ErrorCode::EmptyMask);
  CHECK(code_of([&] { find_bmu(model, std::vector<double>{1.0}); }) == ErrorCode::InvalidValue);
  CHECK(code_of([&] { find_bmu(SomModel{}, x); }) == ErrorCode::NotFitted);
}

TEST_CASE("training input validation") {
  CHECK(code_of([] { train_som(Matrix{}, small_config()); }) == ErrorCode::EmptyInput);
  std::vector<FusedVector> vs = {{"a", {1, 2}, {0, 0}}, {"b", {1, 2}, {0, 1}}};
  CHECK(code_of([&] { train_som(vs, small_config()); }) == ErrorCode::InvalidValue);
  vs[1].mask = {0, 0};
  vs[1].id = "a";
  CHECK(code_of([&] { train_som(vs, small_config()); }) == ErrorCode::DuplicateRow);
  vs[1] = {"b", {1, 2, 3}, {0, 0, 0}};
  CHECK(code_of([&] { train_som(vs, small_config()); }) == ErrorCode::InvalidValue);
}

TEST_CASE("a single training vector pulls the whole map onto it") {
  Matrix one(1, 5, std::vector<double>{0.3, -1.2, 2.0, 0.0, 0.7});
  const auto model = train_som(one, small_config(2000));
  for (std::size_t n = 0; n < model.nodes(); ++n) {
    double d2 = 0.0;
    for (std::size_t d = 0; d < 5; ++d) d2 += std::pow(model.weight(n, d) - one(0, d), 2);
    CHECK(std::sqrt(d2) < 1e-3);
  }
}

TEST_CASE("well separated clusters stay apart on the grid") {
  const auto data = three_clusters(11);
  const auto model = train_som(data, small_config(5000, 11));
  std::vector<std::size_t> bmu(60);
  for (std::size_t i = 0; i < 60; ++i) bmu[i] = find_bmu(model, data.row(i));
  std::size_t mean_bmu[3];
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> mean(4, 0.0);
    for (std::size_t i = 20 * k; i < 20 * k + 20; ++i)
      for (std::size_t d = 0; d < 4; ++d) mean[d] += data(i, d) / 20.0;
    mean_bmu[k] = find_bmu(model, mean);
    // Members occupy a contiguous patch: the median member has a clustermate's BMU at most one cell away.
    std::vector<double> nearest;
    for (std::size_t i = 20 * k; i < 20 * k + 20; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 20 * k; j < 20 * k + 20; ++j)
        if (j != i) best = std::min(best, model.grid_distance(bmu[i], bmu[j]));
      nearest.push_back(best);
    }
    std::nth_element(nearest.begin(), nearest.begin() + 10, nearest.end());
    CHECK(nearest[10] <= 1.0);
  }
  CHECK(model.grid_distance(mean_bmu[0], mean_bmu[1]) >= 2.0);
  CHECK(model.grid_distance(mean_bmu[0], mean_bmu[2]) >= 2.0);
  CHECK(model.grid_distance(mean_bmu[1], mean_bmu[2]) >= 2.0);
  // No node is shared between clusters.
  for (std::size_t i = 0; i < 60; ++i)
    for (std::size_t j = 0; j < 60; ++j)
      if (i / 20 != j / 20) CHECK(bmu[i] != bmu[j]);
}

TEST_CASE("quantization error falls as training continues") {
  const auto data = random_matrix(60, 6, 21);
  TrainingTrace trace;
  trace.checkpoints = {500, 2000, 8000};
  const auto model = train_som(data, small_config(8000, 5), &trace);
  REQUIRE(trace.quantization_errors.size() == 3);
  CHECK(trace.quantization_errors[1] <= trace.quantization_errors[0] * 1.05);
  CHECK(trace.quantization_errors[2] <= trace.quantization_errors[1] * 1.05);
  CHECK(trace.quantization_errors[2] == quantization_error(model, data));
}

TEST_CASE("training is deterministic and the seed matters") {
  const auto data = random_matrix(40, 7, 8);
  const auto a = train_som(data, small_config(1500, 99));
  const auto b = train_som(data, small_config(1500, 99));
  CHECK(a == b);
  const auto c = train_som(data, small_config(1500, 100));
  CHECK(a.codebook != c.codebook);
}

TEST_CASE("representatives and assignments") {
  const auto data = three_clusters(2);
  const auto model = train_som(data, small_config(3000, 2));
  REQUIRE(model.assignments.size() == 60);
  REQUIRE(model.representatives.size() == 100);
  for (std::size_t i = 0; i < 60; ++i) {
    CHECK(model.assignments[i].first == std::to_string(i));
    CHECK(model.assignments[i].second == find_bmu(model, data.row(i)));
  }
  for (std::size_t n = 0; n < model.nodes(); ++n) CHECK_FALSE(model.representatives[n].empty());
  // A non-empty node's representative is one of its own members.
  for (const auto& [id, node] : model.assignments) {
    const auto rep = model.representatives[node];
    CHECK(model.assignment(rep) == node);
  }
}

TEST_CASE("models survive a save/load cycle bitwise") {
  const auto model = train_som(random_matrix(30, 19, 6), small_config(1000, 6));
  const auto dir = fs::temp_directory_path() / "somfuse_som_io";
  fs::create_directories(dir);
  save_model(model, dir / "m.json");
  const auto back = load_model(dir / "m.json");
  CHECK(back == model);
  const auto queries = random_matrix(200, 19, 7);
  for (std::size_t i = 0; i < queries.rows(); ++i) CHECK(find_bmu(back, queries.row(i)) == find_bmu(model, queries.row(i)));

  std::string text = to_json(model);
  std::ofstream(dir / "cut.json") << text.substr(0, text.size() / 2);
  CHECK(code_of([&] { load_model(dir / "cut.json"); }) == ErrorCode::FormatError);
  CHECK(code_of([&] { load_model(dir / "absent.json"); }) == ErrorCode::MissingArtifact);
  fs::remove_all(dir);
}

TEST_CASE("component planes reassemble the codebook") {
  const auto data = random_matrix(50, 5, 12);
  const auto model = train_som(data, small_config(2000, 12));
  for (std::size_t d = 0; d < 5; ++d) {
    const auto plane = component_plane(model, d);
    REQUIRE(plane.rows() == 10);
    REQUIRE(plane.cols() == 10);
    double lo = data(0, d), hi = data(0, d);
    for (std::size_t i = 0; i < data.rows(); ++i) {
      lo = std::min(lo, data(i, d));
      hi = std::max(hi, data(i, d));
    }
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t c = 0; c < 10; ++c) {
        CHECK(plane(r, c) == model.weight(r * 10 + c, d));
        CHECK(plane(r, c) >= lo - 0.1);
        CHECK(plane(r, c) <= hi + 0.1);
      }
  }
  CHECK(code_of([&] { component_plane(model, 5); }) == ErrorCode::InvalidValue);
}
