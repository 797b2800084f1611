// Acceptance run: one PASS/FAIL line per primary criterion. Exits non-zero if
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "somfuse/csv.hpp"
#include "somfuse/dataset.hpp"
#include "somfuse/encode.hpp"
#include "somfuse/fuse.hpp"
#include "somfuse/geo.hpp"
#include "somfuse/inference.hpp"
#include "somfuse/pipeline.hpp"
#include "somfuse/som.hpp"
#include "somfuse/synthetic.hpp"
#include "somfuse/tsne.hpp"

using namespace somfuse;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kFixtures = SOMFUSE_FIXTURES;

/// Collects failed checks for one criterion.
struct Checks {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

int g_failed = 0;

void criterion(const std::string& name, double budget_seconds, const std::function<void(Checks&)>& body) {
  Checks checks;
  const auto start = Clock::now();
  try {
    body(checks);
  } catch (const std::exception& ex) {
    checks.failures.push_back(std::string("exception: ") + ex.what());
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (seconds >= budget_seconds) {
    checks.failures.push_back("took " + std::to_string(seconds) + " s, budget " + std::to_string(budget_seconds) + " s");
  }
  const bool ok = checks.failures.empty();
  if (!ok) ++g_failed;
  std::printf("%s  %-22s (%.2f s)\n", ok ? "PASS" : "FAIL", name.c_str(), seconds);
  for (std::size_t i = 0; i < checks.failures.size() && i < 10; ++i) std::printf("      - %s\n", checks.failures[i].c_str());
  std::fflush(stdout);
}

Matrix gaussian(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(n, d);
  for (auto& v : m.data()) v = g(rng);
  return m;
}

void severity_bands(Checks& c) {
  struct Band {
    Target target;
    double lo, hi;
    SeverityDegree degree;
  };
  const Band bands[] = {
      {Target::Deaths, 1, 50, SeverityDegree::Low},
      {Target::Deaths, 51, 5000, SeverityDegree::Mid},
      {Target::Deaths, 5001, 30000, SeverityDegree::High},
      {Target::Affected, 1, 10000, SeverityDegree::Low},
      {Target::Affected, 10001, 5'000'000, SeverityDegree::Mid},
      {Target::Affected, 5'000'001, 30'000'000, SeverityDegree::High},
      {Target::Damages, 1, 100'000, SeverityDegree::Low},
      {Target::Damages, 100'001, 5'000'000, SeverityDegree::Mid},
      {Target::Damages, 5'000'001, 60'000'000, SeverityDegree::High},
  };
  int assertions = 0;
  for (const auto& b : bands) {
    for (double v : {b.lo, b.hi}) {
      ++assertions;
      c.expect(classify_severity(v, b.target) == b.degree,
               std::string(to_string(b.target)) + " " + std::to_string(v));
    }
  }
  c.expect(assertions == 18, "expected 18 boundary assertions");
}

void geo_math(Checks& c) {
  c.expect(std::abs(geo::ground_resolution(0.0, 18) - 40'075'016.686 / 67'108'864.0) < 1e-3, "equator z18");
  for (int z = 0; z < 22; ++z) {
    for (double lat : {0.0, 12.5, 37.0, 60.0}) {
      c.expect(geo::ground_resolution(lat, z + 1) == geo::ground_resolution(lat, z) / 2.0,
               "halving at z" + std::to_string(z));
    }
  }
  for (double lat = 0.0; lat < 85.0; lat += 2.5) {
    c.expect(geo::ground_resolution(lat, 10) == geo::ground_resolution(-lat, 10), "symmetry");
  }
}

void grid(Checks& c) {
  const auto g = geo::build_grid({37.226, 37.014});
  c.expect(g.centers.size() == 2500, "grid has " + std::to_string(g.centers.size()) + " centres");
  c.expect(g.side == 50, "side 50");
}

void appendix_recount(Checks& c) {
  const auto report = inference::evaluate(inference::read_evaluation_csv(kFixtures / "table_a3.csv"));
  const auto& o = report.overall;
  c.expect(o.correct == 28 && o.over == 7 && o.under == 8, "overall recount 28/7/8");
  c.expect(o.compared() == 43 && o.excluded == 19, "43 compared, 19 excluded");
  c.expect(report.per_target.at(Target::Deaths) == inference::Tally{8, 6, 1, 5}, "deaths 8/6/1");
  c.expect(report.per_target.at(Target::Affected) == inference::Tally{16, 0, 5, 0}, "affected 16/0/5");
  c.expect(report.per_target.at(Target::Damages) == inference::Tally{4, 1, 2, 14}, "damages 4/1/2");
  c.expect(std::abs(*o.non_under_rate() - 0.83) <= 0.02, "non-under rate " + std::to_string(*o.non_under_rate()));
  c.expect(*o.correct_rate() >= 0.60 && *o.correct_rate() <= 0.70, "correct rate " + std::to_string(*o.correct_rate()));
}

void synthetic_end_to_end(Checks& c) {
  const auto dir = fs::temp_directory_path() / "somfuse_acceptance_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto data = synthetic::generate({});
  write_dataset(dir / "synthetic.csv", data.records);

  pipeline::PipelineConfig config;
  config.dataset = dir / "synthetic.csv";
  config.output_dir = dir / "out";
  config.extractor = "baseline";
  config.stub_tiles = true;
  config.set("tiles.extent", "600");
  config.set("tiles.spacing", "200");
  config.set("tiles.pixels", "224");
  config.set("som.steps", "20000");
  config.set("jobs", "4");
  std::ostringstream log;
  const std::vector<pipeline::Stage> stages(std::begin(pipeline::kAllStages), std::end(pipeline::kAllStages));
  const auto result = pipeline::run_pipeline(config, stages, log);
  c.expect(result.exit_code == pipeline::kExitOk, "pipeline exit " + std::to_string(result.exit_code) + ": " + result.message);
  if (result.exit_code != pipeline::kExitOk) return;

  const auto predictions = inference::read_predictions(config.output_dir / pipeline::artifact::kPredictions);
  std::size_t correct = 0, total = 0;
  for (const auto& p : predictions) {
    const auto truth = synthetic::cluster_degree(data.cluster.at(p.query_id));
    for (Target t : kTargets) {
      ++total;
      correct += p.degrees[t] == truth;
    }
  }
  c.expect(predictions.size() == 10, "10 held-out queries");
  const double accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  std::printf("      held-out degree accuracy %.3f (%zu/%zu)\n", accuracy, correct, total);
  c.expect(accuracy >= 0.70, "accuracy " + std::to_string(accuracy));
  c.expect(accuracy >= 2.0 / 3.0, "at least twice the uniform baseline");
  fs::remove_all(dir);
}

void tsne_checks(Checks& c) {
  {
    const Matrix x = gaussian(6, 3, 17);
    const auto aff = tsne::conditional_probabilities(x, 30.0);
    const std::vector<double> y = {0.3, -1.2, 0.8, 2.1, -0.4, 1.5};
    const auto g = tsne::gradient(aff.joint, y);
    const double h = 1e-5;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      auto plus = y, minus = y;
      plus[i] += h;
      minus[i] -= h;
      const double fd = (tsne::kl_divergence(aff.joint, plus) - tsne::kl_divergence(aff.joint, minus)) / (2 * h);
      num += (fd - g[i]) * (fd - g[i]);
      den += g[i] * g[i];
    }
    c.expect(std::sqrt(num / den) < 1e-4, "finite-difference gradient error " + std::to_string(std::sqrt(num / den)));
  }
  // The second cluster is shifted `separation` sigma along the first axis.
  auto clusters = [](std::size_t per, std::size_t dim, double separation, std::uint64_t seed) {
    Matrix m = gaussian(2 * per, dim, seed);
    for (std::size_t i = per; i < 2 * per; ++i) m(i, 0) += separation;
    return m;
  };
  {
    tsne::TsneConfig config;
    config.perplexity = 8;
    config.seed = 2;
    tsne::Trace trace;
    tsne::tsne_1d(clusters(20, 4, 6.0, 5), config, &trace);
    double last = std::numeric_limits<double>::infinity();
    for (int it = 300; it <= 1000; it += 10) {
      const auto* row = trace.at(it);
      if (row == nullptr) {
        c.expect(false, "trace lacks iteration " + std::to_string(it));
        break;
      }
      c.expect(row->kl <= last + 1e-12, "KL rose at iteration " + std::to_string(it));
      last = row->kl;
    }
  }
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    tsne::TsneConfig config;
    config.seed = seed;
    const auto y = tsne::tsne_1d(clusters(10, 50, 20.0, 10 * seed), config).values;
    double within = 0.0, between = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t j = i + 1; j < 20; ++j) {
        const double d = std::abs(y[i] - y[j]);
        if ((i < 10) == (j < 10)) within = std::max(within, d);
        else between = std::min(between, d);
      }
    c.expect(within < between, "clusters overlap in 1-d (seed " + std::to_string(seed) + ")");
  }
}

void standardization(Checks& c) {
  const std::vector<double> small = {1, 2, 3};
  c.expect(standardize_column(small).values == std::vector<double>{-1, 0, 1}, "[1,2,3]");
  std::mt19937_64 rng(5);
  std::lognormal_distribution<double> heavy(3.0, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> column(3 + trial);
    for (auto& v : column) v = heavy(rng);
    const auto s = standardize_column(column);
    double mean = 0.0;
    for (double v : s.values) mean += v;
    mean /= static_cast<double>(s.values.size());
    double ss = 0.0;
    for (double v : s.values) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(s.values.size() - 1);
    c.expect(std::abs(mean) < 1e-9 && std::abs(var - 1.0) < 1e-9, "column " + std::to_string(trial));
  }
}

void som_checks(Checks& c) {
  som::SomConfig config;
  config.steps = 2000;
  config.seed = 3;
  const auto model = som::train_som(gaussian(80, 19, 1), config);
  const auto queries = gaussian(1000, 19, 2, 1.5);
  std::mt19937_64 rng(9);
  auto brute = [&](std::span<const double> x, const std::vector<std::uint8_t>* mask) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < model.nodes(); ++n) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < x.size(); ++d) {
        if (mask != nullptr && (*mask)[d] != 0) continue;
        d2 += (model.weight(n, d) - x[d]) * (model.weight(n, d) - x[d]);
      }
      if (d2 < best_d) {
        best_d = d2;
        best = n;
      }
    }
    return best;
  };
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    std::vector<std::uint8_t> mask(19);
    for (auto& m : mask) m = rng() % 4 == 0;
    mask[rng() % 19] = 0;
    mismatches += som::find_bmu(model, queries.row(i)) != brute(queries.row(i), nullptr);
    mismatches += som::find_bmu_masked(model, queries.row(i), mask) != brute(queries.row(i), &mask);
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " BMU mismatches");

  {
    Matrix one(1, 5, std::vector<double>{0.3, -1.2, 2.0, 0.0, 0.7});
    const auto m = som::train_som(one, config);
    double worst = 0.0;
    for (std::size_t n = 0; n < m.nodes(); ++n) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < 5; ++d) d2 += std::pow(m.weight(n, d) - one(0, d), 2);
      worst = std::max(worst, std::sqrt(d2));
    }
    c.expect(worst < 1e-3, "single-vector convergence " + std::to_string(worst));
  }

  {
    std::normal_distribution<double> g(0.0, 0.1);
    std::mt19937_64 r(11);
    const double centers[3][4] = {{-3, -3, 0, 1}, {3, 3, 0, -1}, {3, -3, 2, 0}};
    Matrix data(60, 4);
    for (std::size_t i = 0; i < 60; ++i)
      for (std::size_t d = 0; d < 4; ++d) data(i, d) = centers[i / 20][d] + g(r);
    som::SomConfig tc;
    tc.steps = 5000;
    tc.seed = 11;
    const auto m = som::train_som(data, tc);
    std::vector<std::size_t> bmu(60);
    for (std::size_t i = 0; i < 60; ++i) bmu[i] = som::find_bmu(m, data.row(i));
    std::size_t mean_bmu[3];
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<double> mean(4, 0.0);
      for (std::size_t i = 20 * k; i < 20 * k + 20; ++i)
        for (std::size_t d = 0; d < 4; ++d) mean[d] += data(i, d) / 20.0;
      mean_bmu[k] = som::find_bmu(m, mean);
      std::vector<double> nearest;
      for (std::size_t i = 20 * k; i < 20 * k + 20; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 20 * k; j < 20 * k + 20; ++j)
          if (j != i) best = std::min(best, m.grid_distance(bmu[i], bmu[j]));
        nearest.push_back(best);
      }
      std::nth_element(nearest.begin(), nearest.begin() + 10, nearest.end());
      c.expect(nearest[10] <= 1.0, "cluster " + std::to_string(k) + " is not contiguous");
    }
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        c.expect(m.grid_distance(mean_bmu[a], mean_bmu[b]) >= 2.0, "clusters adjacent on the grid");
    for (std::size_t i = 0; i < 60; ++i)
      for (std::size_t j = i + 1; j < 60; ++j)
        if (i / 20 != j / 20 && bmu[i] == bmu[j]) c.expect(false, "a node hosts two clusters");
  }

  const auto again = som::train_som(gaussian(80, 19, 1), config);
  c.expect(again == model, "seeded runs differ");

  const auto path = fs::temp_directory_path() / "somfuse_acceptance_model.json";
  som::save_model(model, path);
  c.expect(som::load_model(path) == model, "save/load round trip");
  fs::remove(path);
}

void encoding(Checks& c) {
  std::ifstream in(kFixtures / "table_a2.csv");
  const auto rows = csv::read(in);
  std::vector<std::vector<std::string>> corpus;
  for (std::size_t i = 1; i < rows.size(); ++i) corpus.push_back(tokenize(rows[i][1]));
  const auto vocab = build_vocabulary(corpus);
  const auto counts = encode_counts(corpus.at(1), vocab);
  std::map<std::uint32_t, int> histogram;
  for (auto n : counts.counts)
    if (n > 0) ++histogram[n];
  c.expect(counts.total() == 7, "entry 2 sums to " + std::to_string(counts.total()));
  c.expect(histogram == std::map<std::uint32_t, int>{{1, 5}, {2, 1}}, "multiplicity histogram");
}

}  // namespace

int main() {
  criterion("severity bands", 1.0, severity_bands);
  criterion("geo math", 1.0, geo_math);
  criterion("tile grid", 1.0, grid);
  criterion("evaluation recount", 1.0, appendix_recount);
  criterion("synthetic end-to-end", 120.0, synthetic_end_to_end);
  criterion("t-SNE", 30.0, tsne_checks);
  criterion("standardization", 1.0, standardization);
  criterion("SOM", 60.0, som_checks);
  criterion("text encoding", 1.0, encoding);
  std::printf("%s: %d criterion(s) failed\n", g_failed ? "FAILED" : "OK", g_failed);
  return g_failed == 0 ? 0 : 1;
}
