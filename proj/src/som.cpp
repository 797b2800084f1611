#include "somfuse/som.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "somfuse/csv.hpp"
#include "somfuse/error.hpp"
#include "somfuse/simd/kernels.hpp"

namespace somfuse::som {

namespace {

constexpr int kModelFormatVersion = 1;

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Fisher-Yates with our own index draw; std::shuffle is not portable across
// standard libraries.
void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

std::size_t argmin(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j) {
    if (values[j] < values[best]) best = j;
  }
  return best;
}

std::size_t bmu_raw(const SomModel& model, const double* x, const std::uint8_t* skip, std::vector<double>& scratch) {
  scratch.resize(model.nodes());
  simd::active_kernels().squared_distances(model.codebook.data(), model.nodes(), model.nodes(), model.dimension, x,
                                           skip, scratch.data());
  return argmin(scratch);
}

void require_trained(const SomModel& model) {
  if (!model.trained()) throw Error(ErrorCode::NotFitted, "SOM model has not been trained");
}

void require_dimension(const SomModel& model, std::size_t size) {
  if (size != model.dimension) {
    throw Error(ErrorCode::InvalidValue, "vector has " + std::to_string(size) + " components, model expects " +
                                             std::to_string(model.dimension));
  }
}

SomModel train_impl(const Matrix& data, const std::vector<std::string>& ids, const SomConfig& config,
                    TrainingTrace* trace) {
  config.validate();
  if (data.rows() == 0 || data.cols() == 0) throw Error(ErrorCode::EmptyInput, "SOM training needs data");
  for (double v : data.data()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidValue, "SOM training data must be finite");
  }

  SomModel model;
  model.config = config;
  model.dimension = data.cols();
  const std::size_t nodes = model.nodes();
  const std::size_t dim = model.dimension;
  const std::size_t m = data.rows();

  std::mt19937_64 rng(config.seed);
  model.codebook.resize(dim * nodes);
  for (std::size_t d = 0; d < dim; ++d) {
    double lo = data(0, d);
    double hi = lo;
    for (std::size_t i = 1; i < m; ++i) {
      lo = std::min(lo, data(i, d));
      hi = std::max(hi, data(i, d));
    }
    for (std::size_t j = 0; j < nodes; ++j) model.codebook[d * nodes + j] = lo + (hi - lo) * unit_uniform(rng);
  }

  std::vector<double> grid_sq(nodes * nodes);
  for (std::size_t a = 0; a < nodes; ++a) {
    for (std::size_t b = 0; b < nodes; ++b) {
      const auto [ra, ca] = model.coordinates(a);
      const auto [rb, cb] = model.coordinates(b);
      const double dr = static_cast<double>(ra) - static_cast<double>(rb);
      const double dc = static_cast<double>(ca) - static_cast<double>(cb);
      grid_sq[a * nodes + b] = dr * dr + dc * dc;
    }
  }

  const auto& kernels = simd::active_kernels();
  std::vector<std::size_t> order(m);
  std::vector<double> dist(nodes);
  std::vector<double> rate(nodes);
  std::vector<double> x(dim);
  std::size_t next_checkpoint = 0;
  if (trace != nullptr) {
    std::sort(trace->checkpoints.begin(), trace->checkpoints.end());
    trace->quantization_errors.clear();
  }

  for (std::size_t t = 0; t < config.steps; ++t) {
    if (t % m == 0) {
      for (std::size_t i = 0; i < m; ++i) order[i] = i;
      shuffle(order, rng);
    }
    const auto sample = data.row(order[t % m]);
    std::copy(sample.begin(), sample.end(), x.begin());

    kernels.squared_distances(model.codebook.data(), nodes, nodes, dim, x.data(), nullptr, dist.data());
    const std::size_t bmu = argmin(dist);

    const double alpha = decay(config.initial_learning_rate, config.final_learning_rate, t, config.steps);
    const double sigma = decay(config.start_radius(), config.final_radius, t, config.steps);
    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t j = 0; j < nodes; ++j) rate[j] = alpha * std::exp(-grid_sq[bmu * nodes + j] * inv_two_sigma_sq);
    kernels.pull_toward(model.codebook.data(), nodes, nodes, dim, x.data(), rate.data());

    model.steps_trained = t + 1;
    if (trace != nullptr) {
      while (next_checkpoint < trace->checkpoints.size() && trace->checkpoints[next_checkpoint] == t + 1) {
        trace->quantization_errors.push_back(quantization_error(model, data));
        ++next_checkpoint;
      }
    }
  }

  // Final assignments and per-node representatives.
  std::vector<std::size_t> best_record(nodes, std::numeric_limits<std::size_t>::max());
  std::vector<double> best_distance(nodes, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = data.row(i);
    const std::size_t node = bmu_raw(model, row.data(), nullptr, dist);
    model.assignments.emplace_back(ids[i], node);
    if (dist[node] < best_distance[node]) {
      best_distance[node] = dist[node];
      best_record[node] = i;
    }
  }
  model.representatives.resize(nodes);
  for (std::size_t j = 0; j < nodes; ++j) {
    std::size_t source = j;
    if (best_record[j] == std::numeric_limits<std::size_t>::max()) {
      double nearest = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < nodes; ++k) {
        if (best_record[k] != std::numeric_limits<std::size_t>::max() && grid_sq[j * nodes + k] < nearest) {
          nearest = grid_sq[j * nodes + k];
          source = k;
        }
      }
    }
    model.representatives[j] = ids[best_record[source]];
  }
  return model;
}

}  // namespace

double SomConfig::start_radius() const noexcept {
  return initial_radius.value_or(static_cast<double>(std::max(rows, cols)) / 2.0);
}

void SomConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidValue, "SOM config: " + what); };
  if (rows < 2 || cols < 2) fail("rows and cols must be at least 2");
  if (steps < 1) fail("steps must be positive");
  if (!(final_learning_rate > 0.0) || !(final_learning_rate <= initial_learning_rate) || !(initial_learning_rate <= 1.0)) {
    fail("learning rates must satisfy 0 < final <= initial <= 1");
  }
  if (!(final_radius > 0.0) || !(final_radius <= start_radius())) fail("radii must satisfy 0 < final <= initial");
}

double neighborhood(double grid_distance, double sigma) noexcept {
  return std::exp(-(grid_distance * grid_distance) / (2.0 * sigma * sigma));
}

double decay(double from, double to, std::size_t step, std::size_t steps) noexcept {
  if (steps <= 1) return from;
  const double fraction = static_cast<double>(step) / static_cast<double>(steps - 1);
  return from * std::pow(to / from, fraction);
}

std::vector<double> SomModel::weights(std::size_t node) const {
  std::vector<double> out(dimension);
  for (std::size_t d = 0; d < dimension; ++d) out[d] = weight(node, d);
  return out;
}

double SomModel::grid_distance(std::size_t a, std::size_t b) const noexcept {
  const auto [ra, ca] = coordinates(a);
  const auto [rb, cb] = coordinates(b);
  return std::hypot(static_cast<double>(ra) - static_cast<double>(rb), static_cast<double>(ca) - static_cast<double>(cb));
}

std::optional<std::size_t> SomModel::assignment(std::string_view id) const noexcept {
  for (const auto& [name, node] : assignments) {
    if (name == id) return node;
  }
  return std::nullopt;
}

SomModel train_som(std::span<const FusedVector> data, const SomConfig& config, TrainingTrace* trace) {
  if (data.empty()) throw Error(ErrorCode::EmptyInput, "SOM training needs data");
  const std::size_t dim = data.front().components.size();
  std::vector<std::string> ids;
  Matrix matrix(data.size(), dim);
  std::set<std::string, std::less<>> seen;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& v = data[i];
    if (v.components.size() != dim) throw Error(ErrorCode::InvalidValue, "SOM training vectors differ in dimension");
    if (v.any_masked()) throw Error(ErrorCode::InvalidValue, "training vector '" + v.id + "' has masked components");
    if (!seen.insert(v.id).second) throw Error(ErrorCode::DuplicateRow, "duplicate training id '" + v.id + "'");
    std::copy(v.components.begin(), v.components.end(), matrix.row(i).begin());
    ids.push_back(v.id);
  }
  return train_impl(matrix, ids, config, trace);
}

SomModel train_som(const Matrix& data, const SomConfig& config, TrainingTrace* trace) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < data.rows(); ++i) ids.push_back(std::to_string(i));
  return train_impl(data, ids, config, trace);
}

std::size_t find_bmu(const SomModel& model, std::span<const double> x) {
  require_trained(model);
  require_dimension(model, x.size());
  std::vector<double> scratch;
  return bmu_raw(model, x.data(), nullptr, scratch);
}

std::size_t find_bmu_masked(const SomModel& model, std::span<const double> x, std::span<const std::uint8_t> mask) {
  require_trained(model);
  require_dimension(model, x.size());
  require_dimension(model, mask.size());
  if (std::all_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw Error(ErrorCode::EmptyMask, "every component is masked");
  }
  std::vector<double> scratch;
  return bmu_raw(model, x.data(), mask.data(), scratch);
}

std::size_t find_bmu_masked(const SomModel& model, const FusedVector& x) {
  return find_bmu_masked(model, x.components, x.mask);
}

Matrix component_plane(const SomModel& model, std::size_t attribute) {
  if (attribute >= model.dimension) {
    throw Error(ErrorCode::InvalidValue, "attribute index " + std::to_string(attribute) + " is out of range");
  }
  Matrix plane(model.config.rows, model.config.cols);
  std::copy_n(model.codebook.begin() + static_cast<std::ptrdiff_t>(attribute * model.nodes()), model.nodes(),
              plane.data().begin());
  return plane;
}

double quantization_error(const SomModel& model, const Matrix& data) {
  if (data.rows() == 0) throw Error(ErrorCode::EmptyInput, "quantization error needs data");
  require_dimension(model, data.cols());
  std::vector<double> scratch;
  double total = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const std::size_t node = bmu_raw(model, data.row(i).data(), nullptr, scratch);
    total += std::sqrt(scratch[node]);
  }
  return total / static_cast<double>(data.rows());
}

double quantization_error(const SomModel& model, std::span<const FusedVector> data) {
  std::vector<std::vector<double>> rows;
  for (const auto& v : data) rows.push_back(v.components);
  return quantization_error(model, Matrix::from_rows(rows));
}

std::string to_json(const SomModel& model) {
  nlohmann::ordered_json doc;
  doc["format_version"] = kModelFormatVersion;
  const auto& c = model.config;
  doc["config"] = {{"rows", c.rows},
                   {"cols", c.cols},
                   {"steps", c.steps},
                   {"initial_learning_rate", c.initial_learning_rate},
                   {"final_learning_rate", c.final_learning_rate},
                   {"initial_radius", c.initial_radius ? nlohmann::ordered_json(*c.initial_radius) : nlohmann::ordered_json()},
                   {"final_radius", c.final_radius},
                   {"seed", c.seed}};
  doc["dimension"] = model.dimension;
  doc["steps_trained"] = model.steps_trained;
  auto codebook = nlohmann::ordered_json::array();
  for (std::size_t j = 0; j < model.nodes() && !model.codebook.empty(); ++j) codebook.push_back(model.weights(j));
  doc["codebook"] = std::move(codebook);
  auto assignments = nlohmann::ordered_json::array();
  for (const auto& [id, node] : model.assignments) assignments.push_back({{"id", id}, {"node", node}});
  doc["assignments"] = std::move(assignments);
  doc["representatives"] = model.representatives;
  return doc.dump(1);
}

SomModel from_json(std::string_view text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (!doc.is_object() || doc.value("format_version", 0) != kModelFormatVersion) {
      throw Error(ErrorCode::FormatError, "SOM model: unsupported format_version");
    }
    SomModel model;
    const auto& c = doc.at("config");
    model.config.rows = c.at("rows").get<std::size_t>();
    model.config.cols = c.at("cols").get<std::size_t>();
    model.config.steps = c.at("steps").get<std::size_t>();
    model.config.initial_learning_rate = c.at("initial_learning_rate").get<double>();
    model.config.final_learning_rate = c.at("final_learning_rate").get<double>();
    if (!c.at("initial_radius").is_null()) model.config.initial_radius = c["initial_radius"].get<double>();
    model.config.final_radius = c.at("final_radius").get<double>();
    model.config.seed = c.at("seed").get<std::uint64_t>();
    model.config.validate();
    model.dimension = doc.at("dimension").get<std::size_t>();
    model.steps_trained = doc.at("steps_trained").get<std::size_t>();

    const auto& codebook = doc.at("codebook");
    const std::size_t nodes = model.nodes();
    if (codebook.size() != nodes) throw Error(ErrorCode::FormatError, "SOM model: codebook size does not match grid");
    model.codebook.resize(nodes * model.dimension);
    for (std::size_t j = 0; j < nodes; ++j) {
      const auto& w = codebook[j];
      if (w.size() != model.dimension) throw Error(ErrorCode::FormatError, "SOM model: ragged codebook");
      for (std::size_t d = 0; d < model.dimension; ++d) model.codebook[d * nodes + j] = w[d].get<double>();
    }
    for (const auto& a : doc.at("assignments")) {
      const auto node = a.at("node").get<std::size_t>();
      if (node >= nodes) throw Error(ErrorCode::FormatError, "SOM model: assignment outside the grid");
      model.assignments.emplace_back(a.at("id").get<std::string>(), node);
    }
    model.representatives = doc.at("representatives").get<std::vector<std::string>>();
    if (!model.representatives.empty() && model.representatives.size() != nodes) {
      throw Error(ErrorCode::FormatError, "SOM model: representative list does not match grid");
    }
    return model;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::FormatError, std::string("SOM model: ") + ex.what());
  } catch (const Error& ex) {
    if (ex.code() == ErrorCode::FormatError) throw;
    throw Error(ErrorCode::FormatError, std::string("SOM model: ") + ex.what());
  }
}

void save_model(const SomModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << to_json(model) << '\n';
}

SomModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

void write_component_planes(const SomModel& model, const AttributeSchema& schema, const std::filesystem::path& dir) {
  require_trained(model);
  std::filesystem::create_directories(dir);
  for (std::size_t a = 0; a < model.dimension; ++a) {
    const std::string name = a < schema.size() ? schema[a].name : "dim" + std::to_string(a);
    std::ofstream out(dir / ("plane_" + name + ".csv"), std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write component plane for '" + name + "'");
    const Matrix plane = component_plane(model, a);
    for (std::size_t r = 0; r < plane.rows(); ++r) {
      csv::Row row;
      for (std::size_t c = 0; c < plane.cols(); ++c) row.push_back(csv::format_double(plane(r, c)));
      csv::write_row(out, row);
    }
  }
  std::vector<std::size_t> hits(model.nodes(), 0);
  for (const auto& [id, node] : model.assignments) ++hits[node];
  std::ofstream out(dir / "node_map.csv", std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write node map");
  csv::write_row(out, {"node", "row", "col", "hits", "representative"});
  for (std::size_t j = 0; j < model.nodes(); ++j) {
    const auto [r, c] = model.coordinates(j);
    csv::write_row(out, {std::to_string(j), std::to_string(r), std::to_string(c), std::to_string(hits[j]),
                         j < model.representatives.size() ? model.representatives[j] : std::string{}});
  }
}

}  // namespace somfuse::som
