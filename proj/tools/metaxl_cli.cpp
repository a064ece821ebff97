// metaxl: train / eval / analyze / gen-data / preset.

#include <spdlog/spdlog.h>

#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "metaxl/checkpoint.hpp"
#include "metaxl/config.hpp"
#include "metaxl/errors.hpp"
#include "metaxl/experiment.hpp"
#include "metaxl/trainer.hpp"

namespace {

using namespace metaxl;

int cmd_train(const std::string& config_path, const std::string& preset_name,
              const std::optional<std::string>& method, const std::optional<std::uint64_t>& seed,
              const std::optional<std::size_t>& placement, const std::optional<double>& beta,
              const std::optional<std::size_t>& steps, const std::string& out, std::size_t jobs) {
  ExperimentConfig config = !config_path.empty() ? load_experiment_config(config_path) : preset(preset_name);
  if (method) config.methods = {parse_method(*method)};
  if (seed) config.seeds = {*seed};
  if (placement) config.placements = {*placement};
  if (beta) config.betas = {*beta};
  if (steps) config.train.steps = *steps;
  if (!out.empty()) config.output_dir = out;

  spdlog::info("config {} ({}), run dir {}", config.name, config_hash(config),
               resolve_run_dir(config).string());
  const StudyReport report =
      run_study(config, jobs, [](const std::string& msg) { spdlog::info("{}", msg); });
  std::size_t failed = 0;
  for (const auto& c : report.cells) failed += !c.ok;
  if (failed) {
    spdlog::error("{} of {} cells failed; see {}", failed, report.cells.size(),
                  (report.run_dir / "metrics.csv").string());
    return 1;
  }
  spdlog::info("all {} cells finished; metrics in {}", report.cells.size(),
               (report.run_dir / "metrics.csv").string());
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const EncoderConfig& enc = ck.manifest.encoder;
  Dataset data = enc.task_kind == TaskKind::token_labeling
                     ? load_token_labeled(data_path, ck.manifest.label_names)
                     : load_sequence_labeled(data_path, enc.n_labels);
  const EvalReport r = evaluate(enc, ck.theta, data);
  nlohmann::ordered_json j = {{"checkpoint", checkpoint_path}, {"data", data_path},
                              {"n_examples", r.n_examples}, {"f1", r.f1}, {"loss", r.loss}};
  if (r.spans) {
    j["precision"] = r.spans->precision;
    j["recall"] = r.spans->recall;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_analyze(const std::string& run_dir, bool modified) {
  const AnalysisReport r = analyze_run(run_dir, modified);
  for (const auto& h : r.hausdorff) {
    spdlog::info("{}: hausdorff={:.4f} modified={:.4f} ({} vs {} vectors)", h.pair, h.hausdorff,
                 h.hausdorff_modified, h.n_source, h.n_target);
  }
  for (const auto& c : r.correlations) {
    spdlog::info("correlation {}: pearson={} over {} pairs", c.group, format_double(c.pearson), c.n_pairs);
  }
  if (r.correlations.empty()) spdlog::info("fewer than 3 language pairs per group; no correlation written");
  return 0;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out) {
  const SyntheticTaskSpec spec =
      spec_path.empty() ? SyntheticTaskSpec{} : parse_task_spec(read_file(spec_path));
  const SyntheticPair pair = generate_pair(spec);
  export_pair(pair, spec, out);
  spdlog::info("wrote {} source, {}/{}/{} target examples to {} (overlap {:.3f})", pair.source.size(),
               pair.target_train.size(), pair.target_dev.size(), pair.target_test.size(), out,
               pair.mapping.overlap());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metaxl: representation transformation experiments"};
  app.require_subcommand(1);

  std::string config_path, preset_name = "table2-shape", out;
  std::optional<std::string> method;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> placement, steps;
  std::optional<double> beta;
  std::size_t jobs = 1;
  auto* train = app.add_subcommand("train", "run every cell of an experiment");
  auto* cfg_opt = train->add_option("--config", config_path, "experiment config JSON")->check(CLI::ExistingFile);
  train->add_option("--preset", preset_name, "named preset when no --config is given")->excludes(cfg_opt);
  train->add_option("--method", method, "restrict to one method");
  train->add_option("--seed", seed, "restrict to one seed");
  train->add_option("--placement", placement, "restrict to one RTN placement");
  train->add_option("--beta", beta, "restrict to one outer learning rate");
  train->add_option("--steps", steps, "override the step count");
  train->add_option("--out", out, "run directory (default: $METAXL_OUTPUT_ROOT/<name>-<hash>)");
  train->add_option("--jobs", jobs, "cells trained in parallel")->check(CLI::PositiveNumber);

  std::string checkpoint, data;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a CoNLL or TSV file");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data)->required()->check(CLI::ExistingFile);

  std::string run_dir;
  bool modified = false;
  auto* analyze = app.add_subcommand("analyze", "Hausdorff, PCA and correlation over a run");
  analyze->add_option("--run-dir", run_dir)->required();
  analyze->add_flag("--modified", modified, "correlate the mean-based distance instead");

  std::string spec_path, data_out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic source/target pair");
  gen->add_option("--spec", spec_path, "task spec JSON (default spec when omitted)")->check(CLI::ExistingFile);
  gen->add_option("--out", data_out)->required();

  std::string show;
  auto* pre = app.add_subcommand("preset", "print a preset config as JSON");
  pre->add_option("name", show)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path, preset_name, method, seed, placement, beta, steps, out, jobs);
    if (*eval) return cmd_eval(checkpoint, data);
    if (*analyze) return cmd_analyze(run_dir, modified);
    if (*gen) return cmd_gen_data(spec_path, data_out);
    if (*pre) {
      std::cout << to_json(preset(show)) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
