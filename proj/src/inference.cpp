#include "somfuse/inference.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "somfuse/csv.hpp"
#include "somfuse/error.hpp"

namespace somfuse::inference {

namespace {

constexpr int kReportFormatVersion = 1;
constexpr std::string_view kNoInfo = "no info";

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << text << '\n';
}

nlohmann::ordered_json tally_json(const Tally& t) {
  nlohmann::ordered_json j;
  j["correct"] = t.correct;
  j["over"] = t.over;
  j["under"] = t.under;
  j["excluded"] = t.excluded;
  j["compared"] = t.compared();
  // Rates are omitted, not zeroed, when nothing was compared.
  if (auto r = t.correct_rate()) j["correct_rate"] = *r;
  if (auto r = t.non_under_rate()) j["non_under_rate"] = *r;
  return j;
}

Tally tally_from_json(const nlohmann::json& j) {
  Tally t;
  t.correct = j.at("correct").get<std::size_t>();
  t.over = j.at("over").get<std::size_t>();
  t.under = j.at("under").get<std::size_t>();
  t.excluded = j.at("excluded").get<std::size_t>();
  return t;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

std::string_view to_string(Comparison c) noexcept {
  switch (c) {
    case Comparison::Correct: return "correct";
    case Comparison::Over: return "over";
    case Comparison::Under: return "under";
  }
  return "correct";
}

Comparison compare_degrees(SeverityDegree truth, SeverityDegree predicted) noexcept {
  if (predicted == truth) return Comparison::Correct;
  return predicted > truth ? Comparison::Over : Comparison::Under;
}

// ---------------------------------------------------------------------------

const std::vector<Recommendation>& RecommendationStore::at(std::size_t node) const {
  static const std::vector<Recommendation> kEmpty;
  if (node >= nodes_) throw Error(ErrorCode::InvalidValue, "node " + std::to_string(node) + " is outside the grid");
  auto it = entries_.find(node);
  return it == entries_.end() ? kEmpty : it->second;
}

void RecommendationStore::add(std::size_t node, Recommendation rec) {
  if (node >= nodes_) throw Error(ErrorCode::FormatError, "recommendation node " + std::to_string(node) + " is outside the grid");
  entries_[node].push_back(std::move(rec));
}

RecommendationStore RecommendationStore::from_json(std::string_view text, std::size_t nodes) {
  RecommendationStore store(nodes);
  if (blank(text)) return store;
  // The SAX-free parser keeps only the last duplicate key, so walk the raw
  // object with a callback that sees every key in order.
  std::vector<std::pair<std::string, nlohmann::json>> items;
  try {
    std::string pending_key;
    nlohmann::json::parser_callback_t collect = [&](int depth, nlohmann::json::parse_event_t event,
                                                    nlohmann::json& parsed) {
      if (depth == 1 && event == nlohmann::json::parse_event_t::key) pending_key = parsed.get<std::string>();
      if (depth == 1 && event == nlohmann::json::parse_event_t::array_end) {
        items.emplace_back(pending_key, parsed);
      }
      return true;
    };
    const auto doc = nlohmann::json::parse(text, collect);
    if (!doc.is_object()) throw Error(ErrorCode::FormatError, "recommendations: top level must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (!it.value().is_array()) throw Error(ErrorCode::FormatError, "recommendations: node '" + it.key() + "' must map to a list");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::FormatError, std::string("recommendations: ") + ex.what());
  }

  for (const auto& [key, list] : items) {
    std::size_t node = 0;
    const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), node);
    if (ec != std::errc{} || ptr != key.data() + key.size() || key.empty()) {
      throw Error(ErrorCode::FormatError, "recommendations: key '" + key + "' is not a node index");
    }
    if (node >= nodes) {
      throw Error(ErrorCode::FormatError, "recommendations: node " + key + " is outside a " + std::to_string(nodes) + "-node grid");
    }
    auto& bucket = store.entries_[node];
    for (const auto& item : list) {
      if (!item.is_object() || !item.contains("text") || !item["text"].is_string()) {
        throw Error(ErrorCode::FormatError, "recommendations: node " + key + " has an entry without text");
      }
      bucket.push_back({item["text"].get<std::string>(), item.value("source", std::string{})});
    }
  }
  return store;
}

RecommendationStore RecommendationStore::load(const std::filesystem::path& path, std::size_t nodes) {
  return from_json(slurp(path), nodes);
}

// ---------------------------------------------------------------------------

SeverityDegree Degrees::operator[](Target t) const noexcept {
  switch (t) {
    case Target::Deaths: return deaths;
    case Target::Affected: return affected;
    case Target::Damages: return damages;
  }
  return deaths;
}

SeverityDegree& Degrees::operator[](Target t) noexcept {
  switch (t) {
    case Target::Deaths: return deaths;
    case Target::Affected: return affected;
    case Target::Damages: return damages;
  }
  return deaths;
}

Prediction predict(const PredictContext& ctx, const FusedVector& query) {
  const auto& model = ctx.model;
  if (!model.trained() || model.representatives.size() != model.nodes()) {
    throw Error(ErrorCode::NotFitted, "SOM model has not been trained");
  }
  const auto targets = target_slots(ctx.schema);
  if (query.mask.size() != ctx.schema.size()) {
    throw Error(ErrorCode::InvalidValue, "query '" + query.id + "' does not match the schema width");
  }
  for (std::size_t i = 0; i < ctx.schema.size(); ++i) {
    const bool is_target = targets.contains(ctx.schema[i].name);
    if ((query.mask[i] != 0) != is_target) {
      throw Error(ErrorCode::InvalidValue, "query '" + query.id + "' must mask exactly the target slots");
    }
  }

  Prediction out;
  out.query_id = query.id;
  out.node = som::find_bmu_masked(model, query);
  out.representative_id = model.representatives[out.node];
  out.recommendations = ctx.store.nodes() > out.node ? ctx.store.at(out.node) : std::vector<Recommendation>{};

  if (ctx.source == DegreeSource::Representative) {
    auto rec = std::find_if(ctx.training.begin(), ctx.training.end(),
                            [&](const DisasterRecord& r) { return r.id == out.representative_id; });
    if (rec == ctx.training.end()) {
      throw Error(ErrorCode::MissingAttribute, "representative '" + out.representative_id + "' is not a training record");
    }
    for (Target t : kTargets) {
      const auto value = target_value(*rec, t);
      if (!value) {
        throw Error(ErrorCode::MissingAttribute, "representative '" + rec->id + "' has no " + std::string(to_string(t)));
      }
      out.degrees[t] = classify_severity(*value, t);
    }
  } else {
    if (ctx.params == nullptr) throw Error(ErrorCode::NotFitted, "codebook degrees need normalization parameters");
    for (Target t : kTargets) {
      const auto name = attribute_name(t);
      const auto index = ctx.schema.index_of(name);
      if (!index) throw Error(ErrorCode::MissingAttribute, "schema has no '" + std::string(name) + "' slot");
      const double raw = invert_params(model.weight(out.node, *index), ctx.params->at(name));
      out.degrees[t] = classify_severity(std::max(raw, 0.0), t);
    }
  }
  return out;
}

std::string predictions_to_json(std::span<const Prediction> predictions) {
  nlohmann::ordered_json doc;
  doc["format_version"] = kReportFormatVersion;
  auto list = nlohmann::ordered_json::array();
  for (const auto& p : predictions) {
    nlohmann::ordered_json item;
    item["query_id"] = p.query_id;
    item["node"] = p.node;
    item["representative_id"] = p.representative_id;
    for (Target t : kTargets) item["degrees"][std::string(to_string(t))] = std::string(to_string(p.degrees[t]));
    auto recs = nlohmann::ordered_json::array();
    for (const auto& r : p.recommendations) recs.push_back({{"text", r.text}, {"source", r.source}});
    item["recommendations"] = std::move(recs);
    list.push_back(std::move(item));
  }
  doc["predictions"] = std::move(list);
  return doc.dump(2);
}

void write_predictions(std::span<const Prediction> predictions, const std::filesystem::path& path) {
  write_text(path, predictions_to_json(predictions));
}

std::vector<Prediction> predictions_from_json(std::string_view text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.value("format_version", 0) != kReportFormatVersion) {
      throw Error(ErrorCode::FormatError, "predictions: unsupported format_version");
    }
    std::vector<Prediction> out;
    for (const auto& item : doc.at("predictions")) {
      Prediction p;
      p.query_id = item.at("query_id").get<std::string>();
      p.node = item.at("node").get<std::size_t>();
      p.representative_id = item.at("representative_id").get<std::string>();
      for (Target t : kTargets) p.degrees[t] = parse_degree(item.at("degrees").at(std::string(to_string(t))).get<std::string>());
      for (const auto& r : item.at("recommendations")) {
        p.recommendations.push_back({r.at("text").get<std::string>(), r.value("source", std::string{})});
      }
      out.push_back(std::move(p));
    }
    return out;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::FormatError, std::string("predictions: ") + ex.what());
  }
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  return predictions_from_json(slurp(path));
}

// ---------------------------------------------------------------------------

std::optional<double> Tally::correct_rate() const noexcept {
  if (compared() == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(compared());
}

std::optional<double> Tally::non_under_rate() const noexcept {
  if (compared() == 0) return std::nullopt;
  return static_cast<double>(correct + over) / static_cast<double>(compared());
}

std::string EvaluationReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["format_version"] = kReportFormatVersion;
  doc["overall"] = tally_json(overall);
  doc["per_target"] = nlohmann::ordered_json::object();
  for (const auto& [target, tally] : per_target) doc["per_target"][std::string(to_string(target))] = tally_json(tally);
  return doc.dump(2);
}

EvaluationReport EvaluationReport::from_json(std::string_view text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.value("format_version", 0) != kReportFormatVersion) {
      throw Error(ErrorCode::FormatError, "evaluation report: unsupported format_version");
    }
    EvaluationReport report;
    report.overall = tally_from_json(doc.at("overall"));
    for (const auto& [name, tally] : doc.at("per_target").items()) report.per_target[parse_target(name)] = tally_from_json(tally);
    return report;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::FormatError, std::string("evaluation report: ") + ex.what());
  }
}

EvaluationReport evaluate(std::span<const EvaluationRow> rows) {
  EvaluationReport report;
  for (const auto& row : rows) {
    Tally& tally = report.per_target[row.target];
    for (Tally* t : {&tally, &report.overall}) {
      if (!row.truth) {
        ++t->excluded;
        continue;
      }
      switch (compare_degrees(*row.truth, row.predicted)) {
        case Comparison::Correct: ++t->correct; break;
        case Comparison::Over: ++t->over; break;
        case Comparison::Under: ++t->under; break;
      }
    }
  }
  return report;
}

std::vector<EvaluationRow> read_evaluation_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, path.string());
  const auto rows = csv::read(in);
  if (rows.empty() || rows.front() != csv::Row{"target", "ground_truth", "prediction"}) {
    throw Error(ErrorCode::FormatError, "evaluation fixture: expected header target,ground_truth,prediction");
  }
  std::vector<EvaluationRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() == 1 && r[0].empty()) continue;
    if (r.size() != 3) throw Error(ErrorCode::FormatError, "evaluation fixture: bad row " + std::to_string(i + 1));
    EvaluationRow row;
    row.target = parse_target(r[0]);
    if (r[1] != kNoInfo) row.truth = parse_degree(r[1]);
    row.predicted = parse_degree(r[2]);
    out.push_back(row);
  }
  return out;
}

void write_evaluation_csv(std::span<const EvaluationRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  csv::write_row(out, {"target", "ground_truth", "prediction"});
  for (const auto& r : rows) {
    csv::write_row(out, {std::string(to_string(r.target)), r.truth ? std::string(to_string(*r.truth)) : std::string(kNoInfo),
                         std::string(to_string(r.predicted))});
  }
}

std::vector<EvaluationRow> evaluation_rows(std::span<const Prediction> predictions,
                                           std::span<const DisasterRecord> truth) {
  std::vector<EvaluationRow> out;
  for (Target t : kTargets) {
    for (const auto& p : predictions) {
      auto rec = std::find_if(truth.begin(), truth.end(), [&](const DisasterRecord& r) { return r.id == p.query_id; });
      EvaluationRow row;
      row.target = t;
      row.predicted = p.degrees[t];
      if (rec != truth.end()) {
        if (const auto value = target_value(*rec, t)) row.truth = classify_severity(*value, t);
      }
      out.push_back(row);
    }
  }
  return out;
}

}  // namespace somfuse::inference
