// Command-line front end: one subcommand per pipeline stage plus
// `run` (all stages), `validate` and `query`.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "psplat/formats.hpp"
#include "psplat/pipeline.hpp"

namespace {

using psplat::ExitCode;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("psplat");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("PSPLAT_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("PSPLAT_LOG must be error, info or debug; using info");
  }
}

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "Pipeline config JSON")->required();
  cmd->add_option("--seed", args.seed, "Override the config seed");
  cmd->add_option("--threads", args.threads, "Cap worker threads (0 = runtime default)");
  cmd->add_flag("--deterministic", args.deterministic, "Byte-reproducible artifacts and reports");
}

psplat::PipelineConfig load_config(const CommonArgs& args) {
  auto cfg = psplat::PipelineConfig::load(args.config);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.simulate.seed = *args.seed;
    cfg.distill.seed = *args.seed;
  }
  if (args.threads) cfg.threads = *args.threads;
  if (args.deterministic) cfg.deterministic = true;
  return cfg;
}

int run_query(const CommonArgs& args, const std::string& text) {
  const auto cfg = load_config(args);
  const auto queries = psplat::io::read_queries(cfg.queries);
  const auto labeling = psplat::io::read_panoptic(cfg.panoptic_path());
  const auto hits = psplat::text_query(labeling, queries, text);
  for (auto id : hits) {
    const auto& inst = labeling.instances[id];
    std::cout << "instance " << id << "  primitives " << inst.primitive_count << "  score " << inst.score << "\n";
  }
  if (hits.empty()) std::cout << "no instances of \"" << text << "\"\n";
  return 0;
}

int run_validate(const std::string& file) {
  const auto report = psplat::io::validate_file(file);
  std::cout << "format: " << report.format << "\n";
  for (const auto& v : report.violations) std::cout << "violation: " << v << "\n";
  if (report.ok()) {
    std::cout << "ok\n";
    return 0;
  }
  return static_cast<int>(ExitCode::MalformedFile);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Panoptic language-field pipeline over Gaussian primitive clouds"};
  app.require_subcommand(1);

  CommonArgs common;
  psplat::StageOptions options;
  std::string color_by;
  std::string distill_config;
  bool no_language = false;
  bool correlated = false;
  std::string query_text;
  std::string validate_path;
  std::vector<CLI::App*> stage_cmds;
  for (const auto& name : psplat::stage_names()) {
    auto* cmd = app.add_subcommand(name, "Run the " + name + " stage");
    add_common(cmd, common);
    if (name == "eval") {
      cmd->add_option("--min-miou", options.bounds.miou, "Fail with exit 6 below this mIoU");
      cmd->add_option("--min-macc", options.bounds.macc, "Fail with exit 6 below this mAcc");
      cmd->add_option("--min-prq-thing", options.bounds.prq_thing, "Fail with exit 6 below this PRQ(T)");
      cmd->add_option("--min-prq-stuff", options.bounds.prq_stuff, "Fail with exit 6 below this PRQ(S)");
    }
    if (name == "distill") {
      cmd->add_option("--distill-config", distill_config, "JSON overriding the distill section")
          ->check(CLI::ExistingFile);
    }
    if (name == "supersegment") cmd->add_flag("--no-language", no_language, "Geometry-only graph cuts");
    if (name == "simulate") {
      cmd->add_flag("--correlated-embeddings", correlated, "Less separated class embeddings");
    }
    if (name == "export") {
      cmd->add_option("--color-by", color_by, "instance, class or confidence")
          ->check(CLI::IsMember({"instance", "class", "confidence"}));
    }
    stage_cmds.push_back(cmd);
  }
  auto* run_cmd = app.add_subcommand("run", "Run every stage in canonical order");
  add_common(run_cmd, common);
  run_cmd->add_option("--distill-config", distill_config, "JSON overriding the distill section")
      ->check(CLI::ExistingFile);
  run_cmd->add_flag("--no-language", no_language, "Geometry-only graph cuts");
  auto* query_cmd = app.add_subcommand("query", "List instances matching a text query");
  add_common(query_cmd, common);
  query_cmd->add_option("--text", query_text, "Query name")->required();
  auto* validate_cmd = app.add_subcommand("validate", "Check a binary artifact");
  validate_cmd->add_option("file", validate_path, "File to check")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::ParameterOutOfRange);
  }

  try {
    if (validate_cmd->parsed()) return run_validate(validate_path);
    if (query_cmd->parsed()) return run_query(common, query_text);
    auto cfg = load_config(common);
    if (!color_by.empty()) cfg.color_by = color_by;
    if (!distill_config.empty()) cfg.load_distill_config(distill_config);
    if (no_language) cfg.cut.use_language = false;
    if (correlated) cfg.simulate.correlated_embeddings = true;
    if (run_cmd->parsed()) {
      for (const auto& stage : psplat::stage_names()) psplat::run_stage(stage, cfg, options);
      return 0;
    }
    for (auto* cmd : stage_cmds) {
      if (cmd->parsed()) psplat::run_stage(cmd->get_name(), cfg, options);
    }
    return 0;
  } catch (const psplat::Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(ExitCode::Failure);
  }
}
