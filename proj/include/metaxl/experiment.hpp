#pragma once

// Multi-seed studies: cell enumeration, parallel execution with per-cell
// failure isolation, persisted artifacts, and the representation analysis
// over a finished run directory.
//
// Run directory layout:
//   config.json            the experiment config
//   run.json               config hash and cell ids
//   metrics.csv            one row per cell (deterministic)
//   summary.csv            per-cell F1 and Hausdorff against the jt cell
//   timings.csv            wall time per cell (not deterministic)
//   cells/<id>/checkpoint.bin, losses.csv, evals.csv, reps.jsonl
//   analysis/hausdorff.csv, analysis/pca/<id>.csv, analysis/correlation.csv

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metaxl/analysis.hpp"
#include "metaxl/config.hpp"

namespace metaxl {

struct Cell {
  std::string id;
  Method method = Method::metaxl;
  std::uint64_t seed = 0;
  // Set for methods that use the RTN.
  std::optional<double> beta;
  std::optional<std::size_t> placement;
};

// Seed-major, then methods in config order, then placements, then betas.
std::vector<Cell> enumerate_cells(const ExperimentConfig& config);

struct CellResult {
  Cell cell;
  bool ok = false;
  std::string error;
  std::size_t best_step = 0;
  double dev_f1 = 0.0;
  double test_f1 = 0.0;
  std::size_t n_source = 0;  // representation vectors
  std::size_t n_target = 0;
  double hausdorff = 0.0;
  double hausdorff_modified = 0.0;
  double wall_seconds = 0.0;
};

struct StudyReport {
  std::string config_hash;
  std::filesystem::path run_dir;
  std::vector<CellResult> cells;

  bool all_ok() const;
};

using LogFn = std::function<void(const std::string&)>;

// Resolves the run directory: config.output_dir, else
// $METAXL_OUTPUT_ROOT/<name>-<hash>, else runs/<name>-<hash>.
std::filesystem::path resolve_run_dir(const ExperimentConfig& config);

// Validates the config and writes config.json before any training, so an
// unwritable directory fails early with IoError. Cell failures are
// recorded in the report and never abort other cells.
StudyReport run_study(const ExperimentConfig& config, std::size_t jobs = 1, const LogFn& log = {});

struct HausdorffRow {
  std::string pair;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  double hausdorff = 0.0;
  double hausdorff_modified = 0.0;
};

// Pearson correlation, across seeds, between the test-F1 gain of an RTN
// cell group over jt and its Hausdorff reduction relative to jt.
struct CorrelationRow {
  std::string group;
  std::size_t n_pairs = 0;
  double pearson = 0.0;  // NaN when either side has zero variance
};

struct AnalysisReport {
  std::string config_hash;
  std::vector<HausdorffRow> hausdorff;
  std::vector<CorrelationRow> correlations;  // only groups with >= 3 pairs
};

// Reads the dumps and metrics of a finished run, refusing artifacts whose
// config hash differs from run.json. With `modified` the correlation uses
// the mean-based distance.
AnalysisReport analyze_run(const std::filesystem::path& run_dir, bool modified = false);

// Representation dump helpers (JSON lines: a header record, then one
// {language, level, vector} record per vector).
std::string reps_jsonl(const std::string& config_hash, const std::string& cell,
                       const std::vector<RepresentationSet>& sets);
std::vector<RepresentationSet> parse_reps_jsonl(const std::string& text, std::string* config_hash);

// Minimal CSV support for the files above: '#' lines are comments.
std::string csv_field(const std::string& value);
std::vector<std::vector<std::string>> parse_csv(const std::string& text);
std::string format_double(double value);

}  // namespace metaxl
