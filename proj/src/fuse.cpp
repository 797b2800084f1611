#include "somfuse/fuse.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "somfuse/csv.hpp"
#include "somfuse/error.hpp"

namespace somfuse {

namespace {
constexpr int kParamsFormatVersion = 1;
}

double log_transform(double x) noexcept { return std::copysign(std::log1p(std::abs(x)), x); }

double inverse_log_transform(double y) noexcept { return std::copysign(std::expm1(std::abs(y)), y); }

StandardizedColumn standardize_column(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::InvalidValue, "standardization needs at least 2 values");
  StandardizedColumn out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  if (!(out.stddev > 0.0)) throw Error(ErrorCode::DegenerateColumn, "column has zero variance");
  out.values.reserve(values.size());
  for (double v : values) out.values.push_back((v - out.mean) / out.stddev);
  return out;
}

// ---------------------------------------------------------------------------

const AttributeParams* NormalizationParams::find(std::string_view name) const noexcept {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const AttributeParams& NormalizationParams::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw Error(ErrorCode::NotFitted, "no normalization parameters for '" + std::string(name) + "'");
}

std::string NormalizationParams::to_json() const {
  nlohmann::ordered_json doc;
  doc["format_version"] = kParamsFormatVersion;
  doc["order"] = nlohmann::ordered_json::array();
  doc["attributes"] = nlohmann::ordered_json::object();
  for (const auto& e : entries_) {
    doc["order"].push_back(e.name);
    nlohmann::ordered_json item;
    item["mean"] = e.mean;
    item["stddev"] = e.stddev;
    item["log_applied"] = e.log_applied;
    item["degenerate"] = e.degenerate;
    item["fence"] = e.fence ? nlohmann::ordered_json::array({e.fence->lower, e.fence->upper}) : nlohmann::ordered_json();
    doc["attributes"][e.name] = std::move(item);
  }
  return doc.dump(2);
}

NormalizationParams NormalizationParams::from_json(std::string_view text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.value("format_version", 0) != kParamsFormatVersion) {
      throw Error(ErrorCode::FormatError, "normalization params: unsupported format_version");
    }
    std::vector<AttributeParams> entries;
    for (const auto& name : doc.at("order")) {
      const auto& item = doc.at("attributes").at(name.get<std::string>());
      AttributeParams p;
      p.name = name.get<std::string>();
      p.mean = item.at("mean").get<double>();
      p.stddev = item.at("stddev").get<double>();
      p.log_applied = item.at("log_applied").get<bool>();
      p.degenerate = item.value("degenerate", false);
      if (item.contains("fence") && !item["fence"].is_null()) {
        p.fence = WinsorFence{item["fence"].at(0).get<double>(), item["fence"].at(1).get<double>()};
      }
      if (!(p.stddev > 0.0)) throw Error(ErrorCode::FormatError, "normalization params: non-positive stddev for " + p.name);
      entries.push_back(std::move(p));
    }
    return NormalizationParams(std::move(entries));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::FormatError, std::string("normalization params: ") + ex.what());
  }
}

void NormalizationParams::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << to_json() << '\n';
}

NormalizationParams NormalizationParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

double apply_params(double value, const AttributeParams& params) noexcept {
  if (params.degenerate) return 0.0;
  double v = params.fence ? params.fence->clip(value) : value;
  if (params.log_applied) v = log_transform(v);
  return (v - params.mean) / params.stddev;
}

double apply_params(double value, const NormalizationParams& params, std::string_view name) {
  return apply_params(value, params.at(name));
}

double invert_params(double standardized, const AttributeParams& params) noexcept {
  if (params.degenerate) return params.mean;
  const double v = standardized * params.stddev + params.mean;
  return params.log_applied ? inverse_log_transform(v) : v;
}

// ---------------------------------------------------------------------------

bool FusedVector::any_masked() const noexcept {
  for (auto m : mask) {
    if (m != 0) return true;
  }
  return false;
}

FusedVector assemble_fused(std::string id, const SlotValues& slots, const AttributeSchema& schema,
                           const std::set<std::string, std::less<>>& masked) {
  FusedVector out;
  out.id = std::move(id);
  out.components.assign(schema.size(), 0.0);
  out.mask.assign(schema.size(), 0);
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& name = schema[i].name;
    if (masked.contains(name)) {
      out.mask[i] = 1;
      continue;
    }
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw Error(ErrorCode::MissingAttribute, "record '" + out.id + "' has no value for '" + name + "'");
    }
    if (!std::isfinite(it->second)) {
      throw Error(ErrorCode::InvalidValue, "record '" + out.id + "' has a non-finite '" + name + "'");
    }
    out.components[i] = it->second;
  }
  return out;
}

std::set<std::string, std::less<>> target_slots(const AttributeSchema& schema) {
  std::set<std::string, std::less<>> out;
  for (Target t : kTargets) {
    if (schema.contains(attribute_name(t))) out.emplace(attribute_name(t));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

bool is_reduced(Modality m) { return m == Modality::LatLon || m == Modality::Text || m == Modality::Image; }

std::uint64_t derive_seed(std::uint64_t base, std::size_t slot) {
  std::uint64_t x = base + 0x9E3779B97F4A7C15ull * (slot + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

[[noreturn]] void missing(const DisasterRecord& r, std::string_view name) {
  throw Error(ErrorCode::MissingAttribute, "record '" + r.id + "' has no value for '" + std::string(name) + "'");
}

}  // namespace

ReductionResult reduce_modalities(const std::vector<DisasterRecord>& training,
                                  const std::vector<DisasterRecord>& queries, const AttributeSchema& schema,
                                  const ReductionOptions& options,
                                  const std::map<std::string, Vocabulary>* vocabularies) {
  ReductionResult result;
  for (std::size_t slot = 0; slot < schema.size(); ++slot) {
    const auto& entry = schema[slot];
    if (!is_reduced(entry.modality)) continue;

    std::function<std::vector<double>(const DisasterRecord&)> vectorize;
    if (entry.modality == Modality::LatLon) {
      vectorize = [&](const DisasterRecord& r) {
        if (!r.location) missing(r, entry.name);
        return std::vector<double>{r.location->latitude, r.location->longitude};
      };
    } else if (entry.modality == Modality::Image) {
      vectorize = [&](const DisasterRecord& r) {
        if (!r.satellite_feature || r.satellite_feature->empty()) missing(r, entry.name);
        return *r.satellite_feature;
      };
    } else {
      Vocabulary vocab;
      if (vocabularies != nullptr && vocabularies->contains(entry.name)) {
        vocab = vocabularies->at(entry.name);
      } else {
        std::vector<std::vector<std::string>> corpus;
        for (const auto& r : training) {
          const auto text = text_attribute(r, entry.name);
          if (!text) missing(r, entry.name);
          corpus.push_back(tokenize(*text));
        }
        vocab = build_vocabulary(corpus);
      }
      result.vocabularies[entry.name] = vocab;
      const Vocabulary* vp = &result.vocabularies[entry.name];
      vectorize = [&, vp](const DisasterRecord& r) {
        const auto text = text_attribute(r, entry.name);
        if (!text) missing(r, entry.name);
        const auto counts = encode_counts(tokenize(*text), *vp);
        if (r.role == RecordRole::Query) result.dropped_tokens += counts.dropped;
        return counts.as_reals();
      };
    }

    std::vector<std::vector<double>> rows;
    rows.reserve(training.size());
    for (const auto& r : training) rows.push_back(vectorize(r));
    const Matrix points = Matrix::from_rows(rows);

    tsne::TsneConfig config = options.tsne;
    config.seed = derive_seed(options.seed, slot);
    tsne::Trace trace;
    const auto embedding = tsne::tsne_1d(points, config, &trace);
    result.perplexity_warnings += embedding.warnings;
    result.traces[entry.name] = std::move(trace);

    auto& coords = result.coordinates[entry.name];
    for (std::size_t i = 0; i < training.size(); ++i) coords[training[i].id] = embedding.values[i];
    for (const auto& q : queries) {
      const auto v = vectorize(q);
      if (v.size() != points.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "record '" + q.id + "' has a '" + entry.name +
                                                      "' vector of the wrong dimension");
      }
      coords[q.id] = tsne::embed_out_of_sample(points, embedding.values, v, config);
    }
  }
  return result;
}

void write_reductions_csv(const std::filesystem::path& path, const Reductions& reductions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  csv::Row header{"attribute", "id", "coordinate"};
  csv::write_row(out, header);
  for (const auto& [name, coords] : reductions) {
    for (const auto& [id, value] : coords) csv::write_row(out, {name, id, csv::format_double(value)});
  }
}

Reductions read_reductions_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, path.string());
  const auto rows = csv::read(in);
  if (rows.empty() || rows.front() != csv::Row{"attribute", "id", "coordinate"}) {
    throw Error(ErrorCode::FormatError, "reductions: bad header in " + path.string());
  }
  Reductions out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 3) throw Error(ErrorCode::FormatError, "reductions: bad row " + std::to_string(i + 1));
    out[rows[i][0]][rows[i][1]] = csv::parse_double(rows[i][2], "coordinate");
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::optional<double> raw_value(const DisasterRecord& r, const AttributeEntry& entry, const Reductions& reductions) {
  switch (entry.modality) {
    case Modality::Number:
      return numeric_attribute(r, entry.name);
    case Modality::Date:
      return r.time ? std::optional<double>(scalarize_time(*r.time)) : std::nullopt;
    default: {
      auto it = reductions.find(entry.name);
      if (it == reductions.end()) return std::nullopt;
      auto jt = it->second.find(r.id);
      if (jt == it->second.end()) return std::nullopt;
      return jt->second;
    }
  }
}

}  // namespace

FusedVector fuse_query(const DisasterRecord& record, const Reductions& reductions, const NormalizationParams& params,
                       const AttributeSchema& schema) {
  const auto masked = target_slots(schema);
  SlotValues slots;
  for (const auto& entry : schema.entries()) {
    if (masked.contains(entry.name)) continue;
    const auto value = raw_value(record, entry, reductions);
    if (!value) missing(record, entry.name);
    slots[entry.name] = apply_params(*value, params, entry.name);
  }
  return assemble_fused(record.id, slots, schema, masked);
}

FusionResult fit_fusion(const std::vector<DisasterRecord>& training, const std::vector<DisasterRecord>& queries,
                        const Reductions& reductions, const AttributeSchema& schema, const FusionOptions& options) {
  if (training.size() < 2) throw Error(ErrorCode::InvalidValue, "fusion needs at least 2 training records");
  FusionResult result;
  std::vector<AttributeParams> params;
  std::vector<SlotValues> slots(training.size());

  for (const auto& entry : schema.entries()) {
    std::vector<double> raw;
    raw.reserve(training.size());
    for (const auto& r : training) {
      const auto value = raw_value(r, entry, reductions);
      if (!value) missing(r, entry.name);
      raw.push_back(*value);
    }
    AttributeParams p;
    p.name = entry.name;
    if (entry.modality == Modality::Number) {
      if (options.winsor_k > 0.0) p.fence = fit_winsor_fence(raw, options.winsor_k);
      p.log_applied = options.log_attributes.contains(entry.name);
    }
    std::vector<double> transformed;
    transformed.reserve(raw.size());
    for (double v : raw) {
      double t = p.fence ? p.fence->clip(v) : v;
      transformed.push_back(p.log_applied ? log_transform(t) : t);
    }
    try {
      const auto column = standardize_column(transformed);
      p.mean = column.mean;
      p.stddev = column.stddev;
      for (std::size_t i = 0; i < training.size(); ++i) slots[i][entry.name] = column.values[i];
    } catch (const Error& ex) {
      if (ex.code() != ErrorCode::DegenerateColumn) throw;
      p.mean = transformed.front();
      p.stddev = 1.0;
      p.degenerate = true;
      for (std::size_t i = 0; i < training.size(); ++i) slots[i][entry.name] = 0.0;
    }
    params.push_back(std::move(p));
  }

  result.params = NormalizationParams(std::move(params));
  for (std::size_t i = 0; i < training.size(); ++i) {
    result.training.push_back(assemble_fused(training[i].id, slots[i], schema));
  }
  for (const auto& q : queries) result.queries.push_back(fuse_query(q, reductions, result.params, schema));
  return result;
}

void write_fused_csv(const std::filesystem::path& path, const std::vector<FusedVector>& vectors,
                     const AttributeSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  csv::Row header{"id"};
  for (const auto& e : schema.entries()) header.push_back(e.name);
  csv::write_row(out, header);
  for (const auto& v : vectors) {
    csv::Row row{v.id};
    for (std::size_t i = 0; i < v.components.size(); ++i) {
      row.push_back(v.mask[i] != 0 ? std::string{} : csv::format_double(v.components[i]));
    }
    csv::write_row(out, row);
  }
}

std::vector<FusedVector> read_fused_csv(const std::filesystem::path& path, const AttributeSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, path.string());
  const auto rows = csv::read(in);
  csv::Row expected{"id"};
  for (const auto& e : schema.entries()) expected.push_back(e.name);
  if (rows.empty() || rows.front() != expected) {
    throw Error(ErrorCode::FormatError, "fused vectors: header does not match the schema in " + path.string());
  }
  std::vector<FusedVector> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != expected.size()) throw Error(ErrorCode::FormatError, "fused vectors: bad row " + std::to_string(i + 1));
    FusedVector v;
    v.id = r[0];
    v.components.assign(schema.size(), 0.0);
    v.mask.assign(schema.size(), 0);
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (r[c + 1].empty()) {
        v.mask[c] = 1;
      } else {
        v.components[c] = csv::parse_double(r[c + 1], schema[c].name);
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace somfuse
