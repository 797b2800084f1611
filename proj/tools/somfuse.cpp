// Command-line front end: one subcommand per pipeline stage plus `run`,
// `config` and `synth`.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "somfuse/dataset.hpp"
#include "somfuse/error.hpp"
#include "somfuse/pipeline.hpp"
#include "somfuse/synthetic.hpp"

namespace pl = somfuse::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"somfuse: multimodal disaster fusion and SOM severity prediction"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string output_dir;
  std::string dataset;
  bool force = false;
  bool stub_tiles = false;
  std::vector<std::string> overrides;

  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "global seed; every stage seed derives from it");
  app.add_option("--jobs", jobs, "worker threads inside a stage")->check(CLI::PositiveNumber);
  app.add_option("--out", output_dir, "output directory");
  app.add_option("--dataset", dataset, "dataset file (.csv or .json)");
  app.add_flag("--force", force, "re-run stages even when their inputs are unchanged");
  app.add_flag("--stub-tiles", stub_tiles, "synthesize tiles offline instead of calling the tile endpoint");
  app.add_option("--set", overrides, "override a config key, e.g. --set som.steps=5000");

  std::vector<std::pair<CLI::App*, pl::Stage>> stage_commands;
  const char* help[] = {"validate the dataset and store it as records.json",
                        "build text vocabularies from training records",
                        "fetch or synthesize satellite tiles around each epicentre",
                        "extract patch embeddings into the EMB1 cache",
                        "reduce latlon, text and image modalities to one t-SNE coordinate each",
                        "normalize, standardize and assemble fused vectors",
                        "train the self-organizing map",
                        "predict severity degrees for query records",
                        "evaluate predictions (or a fixture table) against ground truth",
                        "write component planes and the node map as CSV"};
  for (std::size_t i = 0; i < std::size(pl::kAllStages); ++i) {
    const auto stage = pl::kAllStages[i];
    stage_commands.emplace_back(app.add_subcommand(std::string(pl::to_string(stage)), help[i]), stage);
  }
  auto* run = app.add_subcommand("run", "run every stage in order");

  auto* config_cmd = app.add_subcommand("config", "print the effective configuration");
  bool defaults_only = false;
  config_cmd->add_flag("--defaults", defaults_only, "print built-in defaults, ignoring --config and overrides");

  auto* synth = app.add_subcommand("synth", "write the synthetic three-cluster dataset");
  somfuse::synthetic::SyntheticOptions synth_options;
  std::string synth_out;
  std::string synth_labels;
  synth->add_option("--count", synth_options.count, "number of disasters");
  synth->add_option("--queries", synth_options.queries, "held-out query records");
  synth->add_option("--output", synth_out, "dataset path (.csv or .json)")->required();
  synth->add_option("--labels", synth_labels, "optional CSV of latent cluster labels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : pl::kExitInvalidConfig;
  }

  try {
    if (synth->parsed()) {
      if (seed) synth_options.seed = *seed;
      const auto data = somfuse::synthetic::generate(synth_options);
      somfuse::write_dataset(synth_out, data.records);
      if (!synth_labels.empty()) somfuse::synthetic::write_labels_csv(data, synth_labels);
      std::cerr << "wrote " << data.records.size() << " records to " << synth_out << '\n';
      return pl::kExitOk;
    }

    pl::PipelineConfig config;
    if (!(config_cmd->parsed() && defaults_only)) {
      if (!config_path.empty()) config = pl::PipelineConfig::load(config_path);
      for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw somfuse::Error(somfuse::ErrorCode::InvalidValue, "--set expects key=value");
        config.set(item.substr(0, eq), item.substr(eq + 1));
      }
      if (seed) config.seed = *seed;
      if (jobs) config.jobs = *jobs;
      if (!output_dir.empty()) config.output_dir = output_dir;
      if (!dataset.empty()) config.dataset = dataset;
      if (stub_tiles) config.stub_tiles = true;
      config.force = force;
    }

    if (config_cmd->parsed()) {
      std::cout << config.to_text();
      return pl::kExitOk;
    }

    std::vector<pl::Stage> stages;
    if (run->parsed()) {
      stages.assign(std::begin(pl::kAllStages), std::end(pl::kAllStages));
    } else {
      for (const auto& [cmd, stage] : stage_commands) {
        if (cmd->parsed()) stages.push_back(stage);
      }
    }
    const auto result = pl::run_pipeline(config, stages, std::cerr);
    if (result.exit_code != pl::kExitOk) std::cerr << "error: " << result.message << '\n';
    return result.exit_code;
  } catch (const somfuse::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pl::kExitInvalidConfig;
  }
}
