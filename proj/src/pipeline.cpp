#include "somfuse/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "somfuse/csv.hpp"
#include "somfuse/dataset.hpp"
#include "somfuse/encode.hpp"
#include "somfuse/error.hpp"
#include "somfuse/features.hpp"
#include "somfuse/fuse.hpp"
#include "somfuse/geo.hpp"
#include "somfuse/inference.hpp"

namespace somfuse::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kArtifactFormatVersion = 1;

// ---------------------------------------------------------------------------
// Config keys

using StageMask = std::uint32_t;
constexpr StageMask kAll = ~StageMask{0};
constexpr StageMask kNone = 0;

constexpr StageMask bit(Stage s) { return StageMask{1} << static_cast<unsigned>(s); }

struct KeyDef {
  std::string_view name;
  StageMask stages;  ///< stages whose outputs depend on the key
  std::function<void(PipelineConfig&, std::string_view)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw Error(ErrorCode::InvalidValue,
              "config: '" + std::string(key) + "' = '" + std::string(value) + "' is not " + std::string(expected));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value, "a number");
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  try {
    return csv::parse_double(value, key);
  } catch (const Error&) {
    bad_value(key, value, "a real number");
  }
}

bool parse_bool(std::string_view key, std::string_view value) {
  std::string v(value);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value, "a boolean");
}

template <typename M>
KeyDef path_key(std::string_view name, StageMask stages, M member) {
  return {name, stages, [member](PipelineConfig& c, std::string_view v) { c.*member = fs::path(std::string(v)); },
          [member](const PipelineConfig& c) { return (c.*member).generic_string(); }};
}

template <typename M>
KeyDef string_key(std::string_view name, StageMask stages, M member) {
  return {name, stages, [member](PipelineConfig& c, std::string_view v) { c.*member = std::string(v); },
          [member](const PipelineConfig& c) { return c.*member; }};
}

template <typename M>
KeyDef real_key(std::string_view name, StageMask stages, M member) {
  return {name, stages, [name, member](PipelineConfig& c, std::string_view v) { c.*member = parse_real(name, v); },
          [member](const PipelineConfig& c) { return csv::format_double(c.*member); }};
}

template <typename T, typename M>
KeyDef integer_key(std::string_view name, StageMask stages, M member) {
  return {name, stages, [name, member](PipelineConfig& c, std::string_view v) { c.*member = parse_number<T>(name, v); },
          [member](const PipelineConfig& c) { return std::to_string(c.*member); }};
}

template <typename M>
KeyDef bool_key(std::string_view name, StageMask stages, M member) {
  return {name, stages, [name, member](PipelineConfig& c, std::string_view v) { c.*member = parse_bool(name, v); },
          [member](const PipelineConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

std::string join(const std::set<std::string, std::less<>>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

const std::vector<KeyDef>& key_table() {
  using C = PipelineConfig;
  const StageMask tiles = bit(Stage::Tiles);
  const StageMask tsne = bit(Stage::Reduce);
  const StageMask train = bit(Stage::Train);
  static const std::vector<KeyDef> table = {
      path_key("dataset", bit(Stage::Ingest), &C::dataset),
      path_key("output_dir", kNone, &C::output_dir),
      path_key("schema", kAll, &C::schema),
      integer_key<std::uint64_t>("seed", kAll, &C::seed),
      integer_key<std::size_t>("jobs", kNone, &C::jobs),
      string_key("extractor", bit(Stage::Features), &C::extractor),
      path_key("embedding_cache", bit(Stage::Features), &C::embedding_cache),
      bool_key("tiles.stub", tiles, &C::stub_tiles),
      string_key("tiles.endpoint", tiles, &C::tile_endpoint),
      integer_key<int>("tiles.zoom", tiles, &C::tile_zoom),
      real_key("tiles.extent", tiles, &C::tile_extent),
      real_key("tiles.spacing", tiles, &C::tile_spacing),
      integer_key<std::size_t>("tiles.pixels", tiles, &C::tile_pixels),
      path_key("tiles.cache_dir", tiles, &C::tile_cache),
      integer_key<std::size_t>("tiles.retries", tiles, &C::tile_retries),
      real_key("tiles.rate_limit", kNone, &C::tile_rate_limit),
      integer_key<std::size_t>("tiles.timeout_ms", kNone, &C::tile_timeout_ms),
      real_key("tsne.perplexity", tsne, &C::tsne_perplexity),
      integer_key<int>("tsne.iterations", tsne, &C::tsne_iterations),
      real_key("tsne.learning_rate", tsne, &C::tsne_learning_rate),
      {"som.rows", train, [](C& c, std::string_view v) { c.som.rows = parse_number<std::size_t>("som.rows", v); },
       [](const C& c) { return std::to_string(c.som.rows); }},
      {"som.cols", train, [](C& c, std::string_view v) { c.som.cols = parse_number<std::size_t>("som.cols", v); },
       [](const C& c) { return std::to_string(c.som.cols); }},
      {"som.steps", train, [](C& c, std::string_view v) { c.som.steps = parse_number<std::size_t>("som.steps", v); },
       [](const C& c) { return std::to_string(c.som.steps); }},
      {"som.initial_learning_rate", train,
       [](C& c, std::string_view v) { c.som.initial_learning_rate = parse_real("som.initial_learning_rate", v); },
       [](const C& c) { return csv::format_double(c.som.initial_learning_rate); }},
      {"som.final_learning_rate", train,
       [](C& c, std::string_view v) { c.som.final_learning_rate = parse_real("som.final_learning_rate", v); },
       [](const C& c) { return csv::format_double(c.som.final_learning_rate); }},
      {"som.initial_radius", train,
       [](C& c, std::string_view v) {
         if (v == "auto" || v.empty()) {
           c.som.initial_radius.reset();
         } else {
           c.som.initial_radius = parse_real("som.initial_radius", v);
         }
       },
       [](const C& c) { return c.som.initial_radius ? csv::format_double(*c.som.initial_radius) : std::string("auto"); }},
      {"som.final_radius", train, [](C& c, std::string_view v) { c.som.final_radius = parse_real("som.final_radius", v); },
       [](const C& c) { return csv::format_double(c.som.final_radius); }},
      real_key("normalize.winsor_k", bit(Stage::Fuse), &C::winsor_k),
      {"normalize.log_attributes", bit(Stage::Fuse),
       [](C& c, std::string_view v) {
         c.log_attributes.clear();
         std::string item;
         std::stringstream ss{std::string(v)};
         while (std::getline(ss, item, ',')) {
           if (auto t = trim(item); !t.empty()) c.log_attributes.insert(t);
         }
       },
       [](const C& c) { return join(c.log_attributes); }},
      path_key("predict.recommendations", bit(Stage::Predict), &C::recommendations),
      string_key("predict.degree_source", bit(Stage::Predict), &C::degree_source),
      path_key("evaluate.fixture", bit(Stage::Evaluate), &C::evaluation_fixture),
  };
  return table;
}

const KeyDef& find_key(std::string_view name) {
  for (const auto& k : key_table()) {
    if (k.name == name) return k;
  }
  throw Error(ErrorCode::InvalidValue, "config: unknown key '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Artifacts and state

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, path.filename().string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

Stage producer_of(std::string_view name) {
  using namespace artifact;
  if (name == kRecords) return Stage::Ingest;
  if (name == kVocabularies) return Stage::Encode;
  if (name == kTiles) return Stage::Tiles;
  if (name == kEmbeddings) return Stage::Features;
  if (name == kReductions) return Stage::Reduce;
  if (name == kNormalization || name == kFusedTraining || name == kFusedQueries) return Stage::Fuse;
  if (name == kModel) return Stage::Train;
  if (name == kPredictions) return Stage::Predict;
  return Stage::Export;
}

std::vector<std::string_view> outputs_of(Stage stage) {
  using namespace artifact;
  switch (stage) {
    case Stage::Ingest: return {kRecords};
    case Stage::Encode: return {kVocabularies};
    case Stage::Tiles: return {kTiles};
    case Stage::Features: return {kEmbeddings};
    case Stage::Reduce: return {kReductions};
    case Stage::Fuse: return {kNormalization, kFusedTraining, kFusedQueries};
    case Stage::Train: return {kModel, kTrainingTrace};
    case Stage::Predict: return {kPredictions};
    case Stage::Evaluate: return {kEvaluation, kEvaluationRows};
    case Stage::Export: return {"planes/node_map.csv"};
  }
  return {};
}

struct Context {
  const PipelineConfig& config;
  AttributeSchema schema;
  fs::path out;
  std::ostream& log;

  fs::path path(std::string_view name) const { return out / name; }

  /// Named artifact from an earlier stage; MissingArtifact otherwise.
  fs::path require(std::string_view name) const {
    const fs::path p = path(name);
    if (!fs::exists(p)) {
      throw Error(ErrorCode::MissingArtifact, std::string(name) + " (produced by the '" +
                                                  std::string(to_string(producer_of(name))) + "' stage)");
    }
    return p;
  }
};

void check_version(const nlohmann::json& doc, std::string_view what) {
  const int version = doc.is_object() ? doc.value("format_version", 0) : 0;
  if (version != kArtifactFormatVersion) {
    throw Error(ErrorCode::FormatError, std::string(what) + " has format_version " + std::to_string(version) +
                                            ", expected " + std::to_string(kArtifactFormatVersion));
  }
}

std::vector<DisasterRecord> load_records(const Context& ctx) {
  const auto text = slurp(ctx.require(artifact::kRecords));
  return read_dataset_json(text);
}

std::map<std::string, Vocabulary> load_vocabularies(const Context& ctx) {
  const auto doc = nlohmann::json::parse(slurp(ctx.require(artifact::kVocabularies)));
  check_version(doc, artifact::kVocabularies);
  std::map<std::string, Vocabulary> out;
  for (const auto& [name, tokens] : doc.at("vocabularies").items()) {
    out[name] = Vocabulary::from_tokens(tokens.get<std::vector<std::string>>());
  }
  return out;
}

void split_roles(const std::vector<DisasterRecord>& records, std::vector<DisasterRecord>& training,
                 std::vector<DisasterRecord>& queries) {
  for (const auto& r : records) (r.role == RecordRole::Training ? training : queries).push_back(r);
}

std::string safe_name(std::string_view id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Stages

void run_ingest(const Context& ctx) {
  auto records = read_dataset(ctx.config.dataset);
  std::string problems;
  std::size_t training = 0;
  for (const auto& r : records) {
    if (r.role == RecordRole::Training) ++training;
    for (const auto& v : validate_record(r, ctx.schema)) {
      problems += "\n  " + r.id + ": " + v.field + ": " + v.message;
    }
  }
  if (!problems.empty()) throw Error(ErrorCode::InvalidValue, "dataset has invalid records:" + problems);
  if (training < 2) throw Error(ErrorCode::EmptyInput, "dataset needs at least two training records");
  write_text(ctx.path(artifact::kRecords), write_dataset_json(records, ctx.schema));
  ctx.log << "  " << records.size() << " records (" << training << " training)\n";
}

void run_encode(const Context& ctx) {
  const auto records = load_records(ctx);
  json doc;
  doc["format_version"] = kArtifactFormatVersion;
  doc["vocabularies"] = json::object();
  for (const auto& entry : ctx.schema.entries()) {
    if (entry.modality != Modality::Text) continue;
    std::vector<std::vector<std::string>> corpus;
    for (const auto& r : records) {
      if (r.role != RecordRole::Training) continue;
      const auto text = text_attribute(r, entry.name);
      if (!text) throw Error(ErrorCode::MissingAttribute, "record '" + r.id + "' has no '" + entry.name + "'");
      corpus.push_back(tokenize(*text));
    }
    const auto vocab = build_vocabulary(corpus);
    doc["vocabularies"][entry.name] = vocab.tokens();
    ctx.log << "  " << entry.name << ": " << vocab.size() << " tokens\n";
  }
  write_text(ctx.path(artifact::kVocabularies), doc.dump(2));
}

bool schema_has_image(const AttributeSchema& schema) {
  return std::any_of(schema.entries().begin(), schema.entries().end(),
                     [](const AttributeEntry& e) { return e.modality == Modality::Image; });
}

void run_tiles(const Context& ctx) {
  const auto records = load_records(ctx);
  const auto& c = ctx.config;
  std::unique_ptr<geo::TileClient> client;
  if (c.stub_tiles) {
    client = std::make_unique<geo::StubTileClient>(stage_seed(c.seed, "tiles"), c.tile_pixels);
  } else {
    geo::HttpTileClientConfig http;
    http.endpoint_template = c.tile_endpoint;
    http.api_key = geo::api_key_from_env();
    http.tile_pixels = c.tile_pixels;
    http.timeout = std::chrono::milliseconds(c.tile_timeout_ms);
    http.max_requests_per_second = c.tile_rate_limit;
    client = std::make_unique<geo::HttpTileClient>(http);
  }
  const geo::TileCache cache(c.tile_cache_dir());
  geo::FetchOptions options;
  options.retries = c.tile_retries;
  options.parallelism = c.jobs;

  const fs::path manifests = ctx.path("tile_manifests");
  fs::create_directories(manifests);
  json doc;
  doc["format_version"] = kArtifactFormatVersion;
  doc["zoom"] = c.tile_zoom;
  doc["extent"] = c.tile_extent;
  doc["spacing"] = c.tile_spacing;
  doc["stub"] = c.stub_tiles;
  doc["disasters"] = json::array();
  if (schema_has_image(ctx.schema)) {
    for (const auto& r : records) {
      if (!r.location) continue;
      const auto grid = geo::build_grid(*r.location, c.tile_extent, c.tile_spacing, c.tile_zoom);
      const auto manifest = geo::fetch_tiles(grid, *client, cache, options);
      const std::string file = safe_name(r.id) + ".csv";
      geo::write_manifest_csv(manifests / file, manifest);
      const std::size_t usable = manifest.count(geo::TileStatus::Fetched) + manifest.count(geo::TileStatus::Stubbed);
      if (usable == 0) ctx.log << "  warning: no usable tiles for " << r.id << '\n';
      doc["disasters"].push_back({{"id", r.id},
                                  {"manifest", "tile_manifests/" + file},
                                  {"tiles", manifest.entries.size()},
                                  {"usable", usable},
                                  {"failed", manifest.count(geo::TileStatus::Failed)},
                                  {"requests", manifest.requests}});
    }
  }
  ctx.log << "  " << doc["disasters"].size() << " tile grids\n";
  write_text(ctx.path(artifact::kTiles), doc.dump(2));
}

void run_features(const Context& ctx) {
  const auto& c = ctx.config;
  features::EmbeddingCache cache;
  if (c.extractor == "cache") {
    cache = features::read_embedding_cache(c.embedding_cache, static_cast<std::uint32_t>(features::kFeatureDim));
  } else {
    const auto doc = nlohmann::json::parse(slurp(ctx.require(artifact::kTiles)));
    check_version(doc, artifact::kTiles);
    const features::BaselineExtractor extractor;
    cache.extractor = extractor.name();
    cache.dimension = static_cast<std::uint32_t>(extractor.dimension());
    const auto& disasters = doc.at("disasters");
    std::vector<std::vector<features::PatchFeature>> per_disaster(disasters.size());
    parallel_for(disasters.size(), c.jobs, [&](std::size_t i) {
      const auto id = disasters[i].at("id").get<std::string>();
      const auto manifest = geo::read_manifest_csv(ctx.path(disasters[i].at("manifest").get<std::string>()));
      for (const auto& entry : manifest.entries) {
        if (entry.status != geo::TileStatus::Fetched && entry.status != geo::TileStatus::Stubbed) continue;
        const auto values = extractor.extract(features::to_patch(read_png(entry.path)));
        features::PatchFeature row;
        row.disaster_id = id;
        row.patch_index = static_cast<std::uint32_t>(entry.patch_index);
        row.vector.assign(values.begin(), values.end());
        per_disaster[i].push_back(std::move(row));
      }
    });
    for (auto& rows : per_disaster) {
      for (auto& row : rows) cache.rows.push_back(std::move(row));
    }
  }
  features::write_embedding_cache(cache, ctx.path(artifact::kEmbeddings));
  ctx.log << "  " << cache.rows.size() << " patch embeddings (" << cache.extractor << ")\n";
}

std::vector<DisasterRecord> records_with_features(const Context& ctx) {
  auto records = load_records(ctx);
  if (!schema_has_image(ctx.schema)) return records;
  const auto cache = features::read_embedding_cache(ctx.require(artifact::kEmbeddings));
  const auto pooled = features::aggregate_by_disaster(cache);
  for (auto& r : records) {
    if (auto it = pooled.find(r.id); it != pooled.end()) r.satellite_feature = it->second;
  }
  return records;
}

void run_reduce(const Context& ctx) {
  const auto records = records_with_features(ctx);
  const auto vocabularies = load_vocabularies(ctx);
  std::vector<DisasterRecord> training, queries;
  split_roles(records, training, queries);

  ReductionOptions options;
  options.tsne.perplexity = ctx.config.tsne_perplexity;
  options.tsne.iterations = ctx.config.tsne_iterations;
  options.tsne.learning_rate = ctx.config.tsne_learning_rate;
  options.seed = stage_seed(ctx.config.seed, "reduce");
  const auto result = reduce_modalities(training, queries, ctx.schema, options, &vocabularies);

  write_reductions_csv(ctx.path(artifact::kReductions), result.coordinates);
  for (const auto& [name, trace] : result.traces) trace.write_csv(ctx.path("tsne_trace_" + name + ".csv"));
  ctx.log << "  " << result.coordinates.size() << " modalities reduced";
  if (result.perplexity_warnings > 0) ctx.log << ", " << result.perplexity_warnings << " perplexity warnings";
  if (result.dropped_tokens > 0) ctx.log << ", " << result.dropped_tokens << " query tokens outside the vocabulary";
  ctx.log << '\n';
}

void run_fuse(const Context& ctx) {
  const auto records = load_records(ctx);
  const auto reductions = read_reductions_csv(ctx.require(artifact::kReductions));
  std::vector<DisasterRecord> training, queries;
  split_roles(records, training, queries);
  FusionOptions options;
  options.log_attributes = ctx.config.log_attributes;
  options.winsor_k = ctx.config.winsor_k;
  const auto result = fit_fusion(training, queries, reductions, ctx.schema, options);
  result.params.save(ctx.path(artifact::kNormalization));
  write_fused_csv(ctx.path(artifact::kFusedTraining), result.training, ctx.schema);
  write_fused_csv(ctx.path(artifact::kFusedQueries), result.queries, ctx.schema);
  ctx.log << "  " << result.training.size() << " training and " << result.queries.size() << " query vectors\n";
}

void run_train(const Context& ctx) {
  const auto data = read_fused_csv(ctx.require(artifact::kFusedTraining), ctx.schema);
  som::SomConfig config = ctx.config.som;
  config.seed = stage_seed(ctx.config.seed, "train");
  som::TrainingTrace trace;
  for (std::size_t k = 1; k <= 10; ++k) trace.checkpoints.push_back(std::max<std::size_t>(1, config.steps * k / 10));
  trace.checkpoints.erase(std::unique(trace.checkpoints.begin(), trace.checkpoints.end()), trace.checkpoints.end());
  const auto model = som::train_som(data, config, &trace);
  som::save_model(model, ctx.path(artifact::kModel));

  std::ofstream out(ctx.path(artifact::kTrainingTrace), std::ios::binary);
  csv::write_row(out, {"step", "quantization_error"});
  for (std::size_t i = 0; i < trace.quantization_errors.size(); ++i) {
    csv::write_row(out, {std::to_string(trace.checkpoints[i]), csv::format_double(trace.quantization_errors[i])});
  }
  ctx.log << "  " << model.steps_trained << " steps, quantization error "
          << csv::format_double(trace.quantization_errors.back()) << '\n';
}

void run_predict(const Context& ctx) {
  const auto model = som::load_model(ctx.require(artifact::kModel));
  const auto queries = read_fused_csv(ctx.require(artifact::kFusedQueries), ctx.schema);
  const auto records = load_records(ctx);
  std::vector<DisasterRecord> training, query_records;
  split_roles(records, training, query_records);

  const auto store = ctx.config.recommendations.empty()
                         ? inference::RecommendationStore(model.nodes())
                         : inference::RecommendationStore::load(ctx.config.recommendations, model.nodes());
  std::optional<NormalizationParams> params;
  inference::DegreeSource source = inference::DegreeSource::Representative;
  if (ctx.config.degree_source == "codebook") {
    params = NormalizationParams::load(ctx.require(artifact::kNormalization));
    source = inference::DegreeSource::Codebook;
  }
  const inference::PredictContext pc{model, store, training, ctx.schema, params ? &*params : nullptr, source};
  std::vector<inference::Prediction> predictions;
  for (const auto& q : queries) predictions.push_back(inference::predict(pc, q));
  inference::write_predictions(predictions, ctx.path(artifact::kPredictions));
  ctx.log << "  " << predictions.size() << " predictions\n";
}

void run_evaluate(const Context& ctx) {
  std::vector<inference::EvaluationRow> rows;
  if (!ctx.config.evaluation_fixture.empty()) {
    rows = inference::read_evaluation_csv(ctx.config.evaluation_fixture);
  } else {
    const auto predictions = inference::read_predictions(ctx.require(artifact::kPredictions));
    const auto records = load_records(ctx);
    rows = inference::evaluation_rows(predictions, records);
  }
  const auto report = inference::evaluate(rows);
  write_text(ctx.path(artifact::kEvaluation), report.to_json());
  inference::write_evaluation_csv(rows, ctx.path(artifact::kEvaluationRows));
  const auto& o = report.overall;
  ctx.log << "  correct " << o.correct << ", over " << o.over << ", under " << o.under << ", excluded " << o.excluded;
  if (auto r = o.correct_rate()) ctx.log << ", correct rate " << csv::format_double(*r);
  if (auto r = o.non_under_rate()) ctx.log << ", non-under rate " << csv::format_double(*r);
  ctx.log << '\n';
}

void run_export(const Context& ctx) {
  const auto model = som::load_model(ctx.require(artifact::kModel));
  som::write_component_planes(model, ctx.schema, ctx.path(artifact::kPlanes));
  ctx.log << "  " << model.dimension << " component planes\n";
}

void run_stage(Stage stage, const Context& ctx) {
  switch (stage) {
    case Stage::Ingest: return run_ingest(ctx);
    case Stage::Encode: return run_encode(ctx);
    case Stage::Tiles: return run_tiles(ctx);
    case Stage::Features: return run_features(ctx);
    case Stage::Reduce: return run_reduce(ctx);
    case Stage::Fuse: return run_fuse(ctx);
    case Stage::Train: return run_train(ctx);
    case Stage::Predict: return run_predict(ctx);
    case Stage::Evaluate: return run_evaluate(ctx);
    case Stage::Export: return run_export(ctx);
  }
}

/// Files a stage reads, so a changed input invalidates its stamp.
std::vector<fs::path> inputs_of(Stage stage, const Context& ctx) {
  using namespace artifact;
  const auto& c = ctx.config;
  auto p = [&](std::string_view name) { return ctx.path(name); };
  std::vector<fs::path> out;
  if (!c.schema.empty()) out.push_back(c.schema);
  switch (stage) {
    case Stage::Ingest: out.push_back(c.dataset); break;
    case Stage::Encode:
    case Stage::Tiles: out.push_back(p(kRecords)); break;
    case Stage::Features:
      out.push_back(c.extractor == "cache" ? c.embedding_cache : p(kTiles));
      break;
    case Stage::Reduce:
      out.insert(out.end(), {p(kRecords), p(kVocabularies)});
      if (schema_has_image(ctx.schema)) out.push_back(p(kEmbeddings));
      break;
    case Stage::Fuse: out.insert(out.end(), {p(kRecords), p(kReductions)}); break;
    case Stage::Train: out.push_back(p(kFusedTraining)); break;
    case Stage::Predict:
      out.insert(out.end(), {p(kModel), p(kFusedQueries), p(kRecords)});
      if (!c.recommendations.empty()) out.push_back(c.recommendations);
      if (c.degree_source == "codebook") out.push_back(p(kNormalization));
      break;
    case Stage::Evaluate:
      if (!c.evaluation_fixture.empty()) {
        out.push_back(c.evaluation_fixture);
      } else {
        out.insert(out.end(), {p(kPredictions), p(kRecords)});
      }
      break;
    case Stage::Export: out.push_back(p(kModel)); break;
  }
  return out;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Empty when an input is missing; the stage itself then reports it.
std::optional<std::string> fingerprint(Stage stage, const Context& ctx) {
  std::uint64_t h = fnv1a(to_string(stage));
  for (const auto& key : key_table()) {
    if ((key.stages & bit(stage)) == 0) continue;
    h = fnv1a(key.name, h);
    h = fnv1a("=" + key.get(ctx.config) + "\n", h);
  }
  for (const auto& input : inputs_of(stage, ctx)) {
    std::ifstream in(input, std::ios::binary);
    if (!in) return std::nullopt;
    std::stringstream buffer;
    buffer << in.rdbuf();
    h = fnv1a(buffer.str(), h);
  }
  return hex(h);
}

json load_state(const fs::path& path) {
  if (!fs::exists(path)) {
    json doc;
    doc["format_version"] = kArtifactFormatVersion;
    doc["stages"] = json::object();
    return doc;
  }
  json doc;
  try {
    doc = json::parse(slurp(path));
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::FormatError, std::string("pipeline state: ") + ex.what());
  }
  check_version(doc, artifact::kState);
  return doc;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::Ingest: return "ingest";
    case Stage::Encode: return "encode";
    case Stage::Tiles: return "tiles";
    case Stage::Features: return "features";
    case Stage::Reduce: return "reduce";
    case Stage::Fuse: return "fuse";
    case Stage::Train: return "train";
    case Stage::Predict: return "predict";
    case Stage::Evaluate: return "evaluate";
    case Stage::Export: return "export";
  }
  return "ingest";
}

Stage parse_stage(std::string_view text) {
  for (Stage s : kAllStages) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorCode::InvalidValue, "unknown stage '" + std::string(text) + "'");
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) noexcept {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) noexcept {
  std::uint64_t x = fnv1a(stage) ^ seed;
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

void PipelineConfig::set(std::string_view key, std::string_view value) { find_key(key).set(*this, value); }

std::string PipelineConfig::get(std::string_view key) const { return find_key(key).get(*this); }

std::vector<std::string> PipelineConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.emplace_back(k.name);
  return out;
}

PipelineConfig PipelineConfig::parse(std::string_view text) {
  PipelineConfig config;
  std::stringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::InvalidValue, "config line " + std::to_string(number) + ": expected key = value");
    }
    config.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return config;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidValue, "config file '" + path.string() + "' cannot be read");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string PipelineConfig::to_text() const {
  std::string out;
  for (const auto& k : key_table()) out += std::string(k.name) + " = " + k.get(*this) + "\n";
  return out;
}

void PipelineConfig::validate(std::span<const Stage> stages) const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidValue, "config: " + what); };
  auto wants = [&](Stage s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };

  if (output_dir.empty()) fail("output_dir must be set");
  if (jobs < 1) fail("jobs must be at least 1");
  if (extractor != "baseline" && extractor != "cache") fail("extractor must be 'baseline' or 'cache'");
  if (degree_source != "representative" && degree_source != "codebook") {
    fail("predict.degree_source must be 'representative' or 'codebook'");
  }
  if (tile_zoom < 0 || tile_zoom > geo::kMaxZoom) fail("tiles.zoom must lie in [0, 23]");
  if (!(tile_spacing > 0.0) || !(tile_extent >= tile_spacing)) fail("tiles need 0 < spacing <= extent");
  if (tile_pixels < 1) fail("tiles.pixels must be positive");
  if (!(winsor_k >= 0.0)) fail("normalize.winsor_k must be non-negative");
  if (!(tile_rate_limit >= 0.0)) fail("tiles.rate_limit must be non-negative");
  tsne::TsneConfig t;
  t.perplexity = tsne_perplexity;
  t.iterations = tsne_iterations;
  t.learning_rate = tsne_learning_rate;
  try {
    t.validate();
    som.validate();
  } catch (const Error& ex) {
    fail(ex.what());
  }
  const auto resolved = resolved_schema();
  for (const auto& name : log_attributes) {
    const auto idx = resolved.index_of(name);
    if (!idx || resolved[*idx].modality != Modality::Number) fail("log attribute '" + name + "' is not a numeric slot");
  }

  auto must_exist = [&](const fs::path& p, std::string_view key) {
    if (p.empty()) fail(std::string(key) + " must be set");
    if (!fs::exists(p)) fail(std::string(key) + " '" + p.string() + "' does not exist");
  };
  if (wants(Stage::Ingest)) must_exist(dataset, "dataset");
  if (wants(Stage::Features) && extractor == "cache") must_exist(embedding_cache, "embedding_cache");
  if (wants(Stage::Tiles) && !stub_tiles && tile_endpoint.empty()) fail("tiles.endpoint is required without stub tiles");
  if (wants(Stage::Predict) && !recommendations.empty()) must_exist(recommendations, "predict.recommendations");
  if (wants(Stage::Evaluate) && !evaluation_fixture.empty()) must_exist(evaluation_fixture, "evaluate.fixture");
}

AttributeSchema PipelineConfig::resolved_schema() const {
  if (schema.empty()) return default_schema();
  std::ifstream in(schema, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidValue, "config: schema '" + schema.string() + "' cannot be read");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return AttributeSchema::from_json(buffer.str());
}

fs::path PipelineConfig::tile_cache_dir() const { return tile_cache.empty() ? output_dir / "tiles" : tile_cache; }

RunResult run_pipeline(const PipelineConfig& config, std::span<const Stage> stages, std::ostream& log) {
  RunResult result;
  std::vector<Stage> ordered;
  for (Stage s : kAllStages) {
    if (std::find(stages.begin(), stages.end(), s) != stages.end()) ordered.push_back(s);
  }

  std::optional<Context> ctx;
  try {
    config.validate(ordered);
    fs::create_directories(config.output_dir);
    ctx.emplace(Context{config, config.resolved_schema(), config.output_dir, log});
  } catch (const std::exception& ex) {
    result.exit_code = kExitInvalidConfig;
    result.message = ex.what();
    return result;
  }

  const fs::path state_path = ctx->path(artifact::kState);
  for (Stage stage : ordered) {
    try {
      json state = load_state(state_path);
      const auto print = fingerprint(stage, *ctx);
      const auto outputs = outputs_of(stage);
      const bool present = std::all_of(outputs.begin(), outputs.end(),
                                       [&](std::string_view o) { return fs::exists(ctx->path(o)); });
      auto& stamp = state["stages"][std::string(to_string(stage))];
      if (!config.force && print && present && stamp.is_object() && stamp.value("fingerprint", "") == *print) {
        log << "[" << to_string(stage) << "] up to date\n";
        result.stages.push_back({stage, StageStatus::Reused});
        continue;
      }
      log << "[" << to_string(stage) << "]\n";
      run_stage(stage, *ctx);
      // Re-read so a stage never clobbers stamps written by another process.
      state = load_state(state_path);
      const auto after = fingerprint(stage, *ctx);
      state["stages"][std::string(to_string(stage))] = {{"fingerprint", after.value_or("")}, {"outputs", outputs}};
      write_text(state_path, state.dump(2));
      result.stages.push_back({stage, StageStatus::Ran});
    } catch (const Error& ex) {
      result.exit_code = ex.code() == ErrorCode::MissingArtifact ? kExitMissingArtifact : kExitStageFailed;
      result.message = ex.code() == ErrorCode::MissingArtifact
                           ? "missing artifact: " + ex.detail()
                           : std::string(to_string(stage)) + ": " + ex.what();
      return result;
    } catch (const std::exception& ex) {
      result.exit_code = kExitStageFailed;
      result.message = std::string(to_string(stage)) + ": " + ex.what();
      return result;
    }
  }
  return result;
}

}  // namespace somfuse::pipeline
