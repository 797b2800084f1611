#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <random>

#include "somfuse/tsne.hpp"

using namespace somfuse;
using namespace somfuse::tsne;

namespace {

Matrix random_points(std::size_t n, std::size_t d, std::uint64_t seed, double offset = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(n, d);
  for (auto& v : m.data()) v = g(rng) + offset;
  return m;
}

Matrix two_clusters(std::size_t per_cluster, std::size_t d, double separation, std::uint64_t seed) {
  const Matrix a = random_points(per_cluster, d, seed);
  const Matrix b = random_points(per_cluster, d, seed + 1);
  Matrix m(2 * per_cluster, d);
  for (std::size_t i = 0; i < per_cluster; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      m(i, k) = a(i, k);
      // Offset along the first axis only, so the centres sit `separation` sigma apart.
      m(per_cluster + i, k) = b(i, k) + (k == 0 ? separation : 0.0);
    }
  return m;
}

double entropy_bits(std::span<const double> row) {
  double h = 0.0;
  for (double p : row)
    if (p > 0.0) h -= p * std::log2(p);
  return h;
}

TsneConfig quick_config(std::uint64_t seed = 1) {
  TsneConfig c;
  c.perplexity = 10;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("analytic gradient matches central differences") {
  const Matrix x = random_points(6, 3, 17);
  const auto aff = conditional_probabilities(x, 30.0);
  std::vector<double> y = {0.3, -1.2, 0.8, 2.1, -0.4, 1.5};
  const auto g = gradient(aff.joint, y);
  const double h = 1e-5;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto plus = y, minus = y;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (kl_divergence(aff.joint, plus) - kl_divergence(aff.joint, minus)) / (2 * h);
    num += (fd - g[i]) * (fd - g[i]);
    den += g[i] * g[i];
  }
  CHECK(std::sqrt(num / den) < 1e-4);
}

TEST_CASE("perplexity is capped by the sample size") {
  CHECK(effective_perplexity(100, 40) == 13.0);
  CHECK(effective_perplexity(5, 40) == 5.0);
  const auto aff = conditional_probabilities(random_points(10, 2, 3), 100.0);
  CHECK(aff.target_entropy_bits == doctest::Approx(std::log2(3.0)));
}

TEST_CASE("each conditional row hits the entropy target") {
  const Matrix x = random_points(40, 5, 8);
  const auto aff = conditional_probabilities(x, 8.0);
  CHECK(aff.warnings == 0);
  for (std::size_t i = 0; i < 40; ++i) {
    const auto row = aff.conditional.row(i);
    double sum = 0.0;
    for (double p : row) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row[i] == 0.0);
    CHECK(std::abs(entropy_bits(row) - std::log2(8.0)) < 1e-5);
    CHECK(aff.beta[i] > 0.0);
  }
}

TEST_CASE("joint affinities are symmetric and sum to one") {
  const auto aff = conditional_probabilities(random_points(12, 4, 9), 3.0);
  double total = 0.0;
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) {
      CHECK(aff.joint(i, j) == aff.joint(j, i));
      total += aff.joint(i, j);
    }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("duplicate points exhaust the bisection and are counted") {
  // Identical points force uniform rows whatever the bandwidth.
  Matrix same(6, 2, 1.0);
  const auto aff = conditional_probabilities(same, 2.0);
  CHECK(aff.warnings == 6);
  CHECK(aff.conditional(0, 1) == doctest::Approx(0.2));
  Matrix spiky(5, 1);
  spiky.data() = {0.0, 0.0, 0.0, 0.0, 1e6};
  CHECK(conditional_probabilities(spiky, 4.0 / 3.0 + 1.0).warnings >= 1);
}

TEST_CASE("pairwise distances equal a direct computation") {
  const Matrix x = random_points(9, 7, 2);
  const Matrix d = squared_distances(x);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += (x(i, k) - x(j, k)) * (x(i, k) - x(j, k));
      CHECK(d(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("KL divergence is non-increasing after the early phase") {
  const Matrix x = two_clusters(15, 4, 6.0, 5);
  TsneConfig c;
  c.perplexity = 8;
  c.seed = 2;
  Trace trace;
  tsne_1d(x, c, &trace);
  REQUIRE(trace.at(300) != nullptr);
  REQUIRE(trace.at(1000) != nullptr);
  double last = trace.at(300)->kl;
  for (int it = 310; it <= 1000; it += 10) {
    const double kl = trace.at(it)->kl;
    CHECK(kl <= last + 1e-12);
    last = kl;
  }
  CHECK(trace.at(1000)->kl <= trace.at(300)->kl);
  CHECK(trace.at(1000)->kl < trace.at(10)->kl);
}

TEST_CASE("two clusters twenty sigma apart separate perfectly in one dimension") {
  // Ten points per cluster in 50-d, and a larger 5-d variant.
  for (auto [per, dim] : {std::pair<std::size_t, std::size_t>{10, 50}, {20, 5}}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Matrix x = two_clusters(per, dim, 20.0, 10 * seed);
      TsneConfig c;
      c.seed = seed;
      const auto y = tsne_1d(x, c).values;
      double within = 0.0, between = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < 2 * per; ++i)
        for (std::size_t j = i + 1; j < 2 * per; ++j) {
          const double d = std::abs(y[i] - y[j]);
          if ((i < per) == (j < per)) {
            within = std::max(within, d);
          } else {
            between = std::min(between, d);
          }
        }
      CAPTURE(per);
      CAPTURE(seed);
      CHECK(within < between);
    }
  }
}

TEST_CASE("the step size is capped for small layouts") {
  CHECK(effective_learning_rate(200, 20, 12) == doctest::Approx(20.0 / 12.0));
  CHECK(effective_learning_rate(200, 6000, 12) == 200.0);
  CHECK(effective_learning_rate(0.5, 40, 12) == 0.5);
  CHECK(effective_learning_rate(200, 40, 1) == 40.0);
}

TEST_CASE("seeded runs are bitwise reproducible and centred") {
  const Matrix x = random_points(25, 3, 4);
  const auto a = tsne_1d(x, quick_config(9)).values;
  const auto b = tsne_1d(x, quick_config(9)).values;
  const auto c = tsne_1d(x, quick_config(10)).values;
  CHECK(a == b);
  CHECK(a != c);
  double mean = 0.0;
  for (double v : a) mean += v;
  CHECK(std::abs(mean / 25.0) < 1e-9);
}

TEST_CASE("an out-of-sample query lands with its own cluster") {
  const Matrix x = two_clusters(12, 3, 20.0, 21);
  const auto train = tsne_1d(x, quick_config(5)).values;
  const double lo_a = *std::min_element(train.begin(), train.begin() + 12);
  const double hi_a = *std::max_element(train.begin(), train.begin() + 12);
  const double lo_b = *std::min_element(train.begin() + 12, train.end());
  const double hi_b = *std::max_element(train.begin() + 12, train.end());
  const double mid_a = (lo_a + hi_a) / 2, mid_b = (lo_b + hi_b) / 2;

  const std::vector<double> qa = {x(0, 0) + 0.1, x(0, 1), x(0, 2)};
  const std::vector<double> qb = {x(12, 0) - 0.1, x(12, 1), x(12, 2)};
  const double ya = embed_out_of_sample(x, train, qa, quick_config(5));
  const double yb = embed_out_of_sample(x, train, qb, quick_config(5));
  CHECK(std::abs(ya - mid_a) < std::abs(ya - mid_b));
  CHECK(std::abs(yb - mid_b) < std::abs(yb - mid_a));
  CHECK(ya == embed_out_of_sample(x, train, qa, quick_config(5)));
}

TEST_CASE("invalid inputs are rejected") {
  CHECK_THROWS_AS(tsne_1d(random_points(3, 2, 1), quick_config()), Error);
  Matrix bad = random_points(6, 2, 1);
  bad(2, 1) = std::nan("");
  CHECK_THROWS_AS(tsne_1d(bad, quick_config()), Error);
  TsneConfig c;
  c.perplexity = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TsneConfig{};
  c.final_momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(embed_out_of_sample(random_points(6, 2, 1), std::vector<double>(5), std::vector<double>(2), c),
                  Error);
}
