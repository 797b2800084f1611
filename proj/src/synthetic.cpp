#include "somfuse/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "somfuse/csv.hpp"
#include "somfuse/error.hpp"

namespace somfuse::synthetic {

namespace {

// Own draws instead of <random> distributions so output matches across
// standard libraries.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean, double sd) {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

 private:
  std::mt19937_64 rng_;
};

struct Profile {
  LatLon center;
  double magnitude;
  double urban_risk;
  double inform;
  double elevation;
  double employment;
  double construction;
  double renewable;
  double area;
  double population;
  double sst;
  std::array<const char*, 6> climate;
  std::array<const char*, 5> resources;
};

const std::array<Profile, 3> kProfiles = {{
    {{-19.0, 47.0}, 4.5, 2.0, 3.0, 150.0, 70.0, 1.0e8, 70.0, 5.8e5, 2.5e7, 26.0,
     {"temperate", "oceanic", "warm-summer", "mediterranean", "subpolar", "cold-summer"},
     {"timber", "graphite", "chromite", "coal", "bauxite"}},
    {{14.5, 121.0}, 6.0, 5.0, 5.5, 600.0, 60.0, 1.0e9, 25.0, 3.0e5, 1.1e8, 29.0,
     {"tropical", "monsoon", "rainforest", "savanna", "dry-winter", "humid"},
     {"nickel", "copper", "cobalt", "silver", "salt"}},
    {{36.0, 28.0}, 7.5, 8.0, 7.5, 1200.0, 45.0, 1.0e10, 10.0, 7.8e5, 8.4e7, 19.0,
     {"cold", "desert", "semi-arid", "hot-summer", "continental", "highland"},
     {"chromium", "boron", "antimony", "mercury", "feldspar"}},
}};

constexpr std::array<const char*, 4> kTypes = {"earthquake", "storm", "flood", "landslide"};
constexpr std::array<const char*, 3> kSharedClimate = {"subtropical", "arid", "polar"};

// Log-uniform inside the band so every value stays within it.
double band_value(Draw& draw, Target target, std::size_t cluster) {
  const auto band = severity_band(target);
  const std::array<double, 4> edges = {0.0, band.low_max, band.mid_max, band.high_max};
  const double lo = cluster == 0 ? 0.0 : std::log(edges[cluster] + 1.0);
  const double hi = std::log(edges[cluster + 1]);
  double v = std::exp(draw.uniform(lo, hi));
  if (cluster > 0 && v <= edges[cluster]) v = std::nextafter(edges[cluster], edges[cluster + 1]);
  return std::min(v, edges[cluster + 1]);
}

std::string words(Draw& draw, const auto& pool, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.empty()) out += ' ';
    out += pool[draw.index(pool.size())];
  }
  return out;
}

}  // namespace

SeverityDegree cluster_degree(std::size_t cluster) {
  if (cluster > 2) throw Error(ErrorCode::InvalidValue, "only three severity clusters exist");
  return static_cast<SeverityDegree>(cluster);
}

SyntheticDataset generate(const SyntheticOptions& options) {
  if (options.clusters < 1 || options.clusters > kProfiles.size()) {
    throw Error(ErrorCode::InvalidValue, "synthetic clusters must be between 1 and 3");
  }
  if (options.count < 2 || options.queries >= options.count) {
    throw Error(ErrorCode::InvalidValue, "synthetic dataset needs more records than held-out queries");
  }
  Draw draw(options.seed);
  SyntheticDataset out;

  // Every k-th record is held out, k chosen so the held-out rows spread evenly.
  const std::size_t stride = options.queries == 0 ? 0 : options.count / options.queries;
  std::size_t held_out = 0;

  for (std::size_t i = 0; i < options.count; ++i) {
    const std::size_t k = i % options.clusters;
    const Profile& p = kProfiles[k];
    DisasterRecord r;
    char id[16];
    std::snprintf(id, sizeof id, "syn-%03zu", i + 1);
    r.id = id;
    if (stride > 0 && held_out < options.queries && i % stride == stride - 1) {
      r.role = RecordRole::Query;
      ++held_out;
    }
    r.disaster_type = kTypes[draw.index(kTypes.size())];
    r.location = LatLon{p.center.latitude + draw.uniform(-1.5, 1.5), p.center.longitude + draw.uniform(-1.5, 1.5)};
    r.time = Date{static_cast<int>(2000 + draw.index(20)), static_cast<unsigned>(1 + draw.index(12)),
                  static_cast<unsigned>(1 + draw.index(28))};
    r.magnitude = draw.normal(p.magnitude, 0.3);
    r.deaths = static_cast<std::int64_t>(std::floor(band_value(draw, Target::Deaths, k)));
    r.affected = static_cast<std::int64_t>(std::floor(band_value(draw, Target::Affected, k)));
    r.damages = band_value(draw, Target::Damages, k);
    r.urban_risk_economy = draw.normal(p.urban_risk, 0.5);
    r.urban_risk_mortality = draw.normal(p.urban_risk * 0.8, 0.5);
    r.inform_index = draw.normal(p.inform, 0.4);
    r.elevation = draw.normal(p.elevation, p.elevation * 0.15);
    r.climate_types = words(draw, p.climate, 5) + " " + words(draw, kSharedClimate, 1);
    r.natural_resources = words(draw, p.resources, 4);
    r.employment_ratio = draw.normal(p.employment, 3.0);
    r.construction_value_added = p.construction * std::exp(draw.normal(0.0, 0.2));
    r.renewable_electricity = draw.normal(p.renewable, 3.0);
    r.area = p.area * std::exp(draw.normal(0.0, 0.1));
    r.population = p.population * std::exp(draw.normal(0.0, 0.1));
    r.sea_surface_temperature = draw.normal(p.sst, 0.7);
    out.cluster[r.id] = k;
    out.records.push_back(std::move(r));
  }
  return out;
}

void write_labels_csv(const SyntheticDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  csv::write_row(out, {"id", "role", "cluster", "degree"});
  for (const auto& r : data.records) {
    const std::size_t k = data.cluster.at(r.id);
    csv::write_row(out, {r.id, std::string(to_string(r.role)), std::to_string(k), std::string(to_string(cluster_degree(k)))});
  }
}

}  // namespace somfuse::synthetic
