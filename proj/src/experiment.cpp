#include "metaxl/experiment.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "metaxl/analysis.hpp"
#include "metaxl/checkpoint.hpp"
#include "metaxl/errors.hpp"
#include "metaxl/trainer.hpp"

namespace metaxl {

namespace fs = std::filesystem;

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

std::string hash_header(const std::string& hash) { return "# config_hash=" + hash + "\n"; }

std::string opt_double(const std::optional<double>& v) { return v ? format_double(*v) : ""; }
std::string opt_size(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : ""; }

RepLevel level_for(TaskKind task) {
  return task == TaskKind::token_labeling ? RepLevel::token : RepLevel::sequence;
}

// Reads the "# config_hash=" header of a CSV file.
std::string csv_hash(const std::string& text, const fs::path& path) {
  const std::string prefix = "# config_hash=";
  if (text.rfind(prefix, 0) != 0) {
    throw ContractError(path.string() + ": missing '# config_hash=' header");
  }
  const auto end = text.find('\n');
  return text.substr(prefix.size(), end - prefix.size());
}

void require_hash(const std::string& found, const std::string& expected, const fs::path& path) {
  if (found != expected) {
    throw ContractError(path.string() + " has config hash " + found + " but the run has " + expected +
                        "; refusing to mix artifacts from different configs");
  }
}

CellResult run_cell(const ExperimentConfig& config, const std::string& hash, const Cell& cell,
                    const fs::path& run_dir) {
  CellResult out;
  out.cell = cell;
  TrainConfig tc = config.train;
  tc.method = cell.method;
  tc.seed = cell.seed;
  if (cell.beta) tc.beta = *cell.beta;
  if (cell.placement) tc.placement = *cell.placement;

  const RunData data = load_run_data(config, cell.seed);
  const TrainResult tr = train(config.encoder, tc, data.source, data.target_train, &data.target_dev);
  out.best_step = tr.report.best_step;
  out.dev_f1 = tr.report.best_dev_f1;
  out.test_f1 = evaluate(config.encoder, tr.theta, data.target_test, tc.eval_batch).f1;
  out.wall_seconds = tr.report.wall_seconds;

  const fs::path dir = run_dir / "cells" / cell.id;
  Checkpoint ck;
  ck.manifest = {hash, cell.id, tr.report.best_step, out.dev_f1, config.encoder,
                 data.target_train.label_names};
  ck.theta = tr.theta;
  ck.phi = tr.state.phi;
  save_checkpoint(ck, dir / "checkpoint.bin");

  std::string losses = hash_header(hash) + "step,source_loss,target_loss\n";
  for (std::size_t i = 0; i < tr.state.history.size(); ++i) {
    losses += fmt::format("{},{},{}\n", i + 1, format_double(tr.state.history[i].source_loss),
                          format_double(tr.state.history[i].target_loss));
  }
  write_file(dir / "losses.csv", losses);
  std::string evals = hash_header(hash) + "step,dev_f1,dev_loss\n";
  for (const auto& e : tr.report.evals) {
    evals += fmt::format("{},{},{}\n", e.step, format_double(e.dev_f1), format_double(e.dev_loss));
  }
  write_file(dir / "evals.csv", evals);

  const RepLevel level = level_for(config.encoder.task_kind);
  const auto src = make_representation_set(
      extract_representations(config.encoder, tr.theta, data.rep_source, level), "source", level);
  const auto tgt = make_representation_set(
      extract_representations(config.encoder, tr.theta, data.rep_target, level), "target", level);
  write_file(dir / "reps.jsonl", reps_jsonl(hash, cell.id, {src, tgt}));
  out.n_source = src.vectors.size();
  out.n_target = tgt.vectors.size();
  out.hausdorff = hausdorff(src, tgt);
  out.hausdorff_modified = hausdorff_modified(src, tgt);
  out.ok = true;
  return out;
}

std::string metrics_csv(const StudyReport& report) {
  std::string s = hash_header(report.config_hash) +
                  "cell,method,seed,beta,placement,status,best_step,dev_f1,test_f1,n_source,"
                  "n_target,hausdorff,hausdorff_modified,error\n";
  for (const CellResult& r : report.cells) {
    const Cell& c = r.cell;
    s += fmt::format("{},{},{},{},{},{},", c.id, to_string(c.method), c.seed, opt_double(c.beta),
                     opt_size(c.placement), r.ok ? "ok" : "failed");
    if (r.ok) {
      s += fmt::format("{},{},{},{},{},{},{},", r.best_step, format_double(r.dev_f1),
                       format_double(r.test_f1), r.n_source, r.n_target, format_double(r.hausdorff),
                       format_double(r.hausdorff_modified));
    } else {
      s += ",,,,,,,";
    }
    s += csv_field(r.error) + "\n";
  }
  return s;
}

std::string summary_csv(const StudyReport& report) {
  std::map<std::uint64_t, const CellResult*> jt;
  for (const CellResult& r : report.cells) {
    if (r.cell.method == Method::jt && r.ok) jt[r.cell.seed] = &r;
  }
  std::string s = hash_header(report.config_hash) +
                  "method,seed,beta,placement,status,dev_f1,test_f1,hausdorff_before,hausdorff_after\n";
  for (const CellResult& r : report.cells) {
    const Cell& c = r.cell;
    s += fmt::format("{},{},{},{},{},", to_string(c.method), c.seed, opt_double(c.beta),
                     opt_size(c.placement), r.ok ? "ok" : "failed");
    if (!r.ok) {
      s += ",,,\n";
      continue;
    }
    const auto ref = jt.find(c.seed);
    s += fmt::format("{},{},{},{}\n", format_double(r.dev_f1), format_double(r.test_f1),
                     ref == jt.end() ? "" : format_double(ref->second->hausdorff),
                     format_double(r.hausdorff));
  }
  return s;
}

}  // namespace

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  return fmt::format("{}", value);
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n\r") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c == '\n' || c == '\r' ? ' ' : c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '#') {
      const auto nl = text.find('\n', i);
      i = nl == std::string::npos ? text.size() : nl + 1;
      continue;
    }
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    for (; i < text.size(); ++i) {
      const char c = text[i];
      if (quoted) {
        if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          field += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        row.push_back(std::move(field));
        field.clear();
      } else if (c == '\n') {
        ++i;
        break;
      } else if (c != '\r') {
        field += c;
      }
    }
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string reps_jsonl(const std::string& config_hash, const std::string& cell,
                       const std::vector<RepresentationSet>& sets) {
  std::string out = nlohmann::json{{"config_hash", config_hash}, {"cell", cell}}.dump() + "\n";
  for (const RepresentationSet& s : sets) {
    for (const auto& v : s.vectors) {
      out += nlohmann::json{{"language", s.language},
                            {"level", std::string(to_string(s.level))},
                            {"vector", v}}
                 .dump() +
             "\n";
    }
  }
  return out;
}

std::vector<RepresentationSet> parse_reps_jsonl(const std::string& text, std::string* config_hash) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::vector<double>>> vectors;
  std::map<std::string, RepLevel> levels;
  std::size_t line_no = 0, start = 0;
  bool header = false;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (!header) {
        if (config_hash) *config_hash = j.at("config_hash").get<std::string>();
        header = true;
        continue;
      }
      const auto lang = j.at("language").get<std::string>();
      const RepLevel level = parse_rep_level(j.at("level").get<std::string>());
      if (!vectors.count(lang)) {
        order.push_back(lang);
        levels[lang] = level;
      } else if (levels[lang] != level) {
        throw ParseError("language '" + lang + "' mixes representation levels", line_no);
      }
      vectors[lang].push_back(j.at("vector").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad representation record: ") + e.what(), line_no);
    }
  }
  if (!header) throw ParseError("representation dump has no header record", 1);
  std::vector<RepresentationSet> out;
  for (const auto& lang : order) {
    out.push_back(make_representation_set(std::move(vectors[lang]), lang, levels[lang]));
  }
  return out;
}

std::vector<Cell> enumerate_cells(const ExperimentConfig& config) {
  const std::vector<double> betas = config.betas.empty() ? std::vector<double>{config.train.beta} : config.betas;
  const std::vector<std::size_t> placements =
      config.placements.empty() ? std::vector<std::size_t>{config.train.placement} : config.placements;
  std::vector<Cell> cells;
  for (std::uint64_t seed : config.seeds) {
    for (Method m : config.methods) {
      const std::string base = fmt::format("{}-s{}", to_string(m), seed);
      if (!uses_rtn(m)) {
        cells.push_back({base, m, seed, std::nullopt, std::nullopt});
        continue;
      }
      for (std::size_t p : placements) {
        for (double b : betas) {
          cells.push_back({fmt::format("{}-p{}-b{}", base, p, format_double(b)), m, seed, b, p});
        }
      }
    }
  }
  return cells;
}

bool StudyReport::all_ok() const {
  return std::all_of(cells.begin(), cells.end(), [](const CellResult& r) { return r.ok; });
}

fs::path resolve_run_dir(const ExperimentConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  const std::string leaf = config.name + "-" + config_hash(config);
  if (const char* root = std::getenv("METAXL_OUTPUT_ROOT"); root && *root) return fs::path(root) / leaf;
  return fs::path("runs") / leaf;
}

StudyReport run_study(const ExperimentConfig& config, std::size_t jobs, const LogFn& log) {
  config.validate();
  StudyReport report;
  report.config_hash = config_hash(config);
  report.run_dir = resolve_run_dir(config);
  const std::vector<Cell> cells = enumerate_cells(config);

  // Everything that can fail on the filesystem is tried before training.
  write_file(report.run_dir / "config.json", to_json(config) + "\n");
  nlohmann::json run = {{"config_hash", report.config_hash}, {"name", config.name}};
  for (const Cell& c : cells) run["cells"].push_back(c.id);
  write_file(report.run_dir / "run.json", run.dump(2) + "\n");

  std::mutex log_mutex;
  auto say = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    log(msg);
  };

  report.cells.resize(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      say("start " + cells[i].id);
      try {
        report.cells[i] = run_cell(config, report.config_hash, cells[i], report.run_dir);
        say(fmt::format("done  {} dev_f1={:.4f} test_f1={:.4f} hausdorff={:.4f} ({:.1f}s)",
                        cells[i].id, report.cells[i].dev_f1, report.cells[i].test_f1,
                        report.cells[i].hausdorff, report.cells[i].wall_seconds));
      } catch (const std::exception& e) {
        report.cells[i] = CellResult{};
        report.cells[i].cell = cells[i];
        report.cells[i].error = e.what();
        say("FAIL  " + cells[i].id + ": " + e.what());
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  write_file(report.run_dir / "metrics.csv", metrics_csv(report));
  write_file(report.run_dir / "summary.csv", summary_csv(report));
  std::string timings = hash_header(report.config_hash) + "cell,wall_seconds\n";
  for (const CellResult& r : report.cells) {
    timings += fmt::format("{},{:.3f}\n", r.cell.id, r.wall_seconds);
  }
  write_file(report.run_dir / "timings.csv", timings);
  return report;
}

AnalysisReport analyze_run(const fs::path& run_dir, bool modified) {
  const fs::path run_json = run_dir / "run.json";
  const fs::path metrics_path = run_dir / "metrics.csv";
  if (!fs::exists(run_json) || !fs::exists(metrics_path)) {
    throw IoError("'" + run_dir.string() + "' is not a run directory: expected " + run_json.string() +
                  " and " + metrics_path.string() + " (written by 'metaxl train')");
  }
  AnalysisReport report;
  try {
    report.config_hash = nlohmann::json::parse(read_file(run_json)).at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(run_json.string() + ": " + e.what(), 1);
  }
  const std::string metrics_text = read_file(metrics_path);
  require_hash(csv_hash(metrics_text, metrics_path), report.config_hash, metrics_path);

  struct Row {
    std::string cell, method, beta, placement;
    std::uint64_t seed = 0;
    double test_f1 = 0.0;
  };
  std::vector<Row> rows;
  const auto table = parse_csv(metrics_text);
  if (table.empty()) throw ParseError(metrics_path.string() + ": empty", 1);
  const auto& head = table.front();
  auto col = [&](const std::string& name) {
    const auto it = std::find(head.begin(), head.end(), name);
    if (it == head.end()) throw ParseError(metrics_path.string() + ": no column '" + name + "'", 2);
    return static_cast<std::size_t>(it - head.begin());
  };
  const std::size_t c_cell = col("cell"), c_method = col("method"), c_seed = col("seed"),
                    c_beta = col("beta"), c_place = col("placement"), c_status = col("status"),
                    c_f1 = col("test_f1");
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto& t = table[i];
    if (t.size() != head.size()) {
      throw ParseError(metrics_path.string() + ": row has " + std::to_string(t.size()) + " fields", i + 2);
    }
    if (t[c_status] != "ok") continue;
    rows.push_back({t[c_cell], t[c_method], t[c_beta], t[c_place], std::stoull(t[c_seed]), std::stod(t[c_f1])});
  }

  const fs::path out_dir = run_dir / "analysis";
  std::string hcsv = hash_header(report.config_hash) + "pair,n_source,n_target,hausdorff,hausdorff_modified\n";
  std::map<std::string, double> distance;  // per cell, as used for correlation
  for (const Row& r : rows) {
    const fs::path dump = run_dir / "cells" / r.cell / "reps.jsonl";
    if (!fs::exists(dump)) {
      throw IoError("missing representation dump " + dump.string() + " for cell " + r.cell);
    }
    std::string dump_hash;
    const auto sets = parse_reps_jsonl(read_file(dump), &dump_hash);
    require_hash(dump_hash, report.config_hash, dump);
    if (sets.size() < 2) {
      throw ContractError(dump.string() + ": need representations for at least 2 languages, found " +
                          std::to_string(sets.size()));
    }
    for (std::size_t a = 0; a < sets.size(); ++a) {
      for (std::size_t b = a + 1; b < sets.size(); ++b) {
        HausdorffRow h{r.cell + ":" + sets[a].language + "-" + sets[b].language, sets[a].vectors.size(),
                       sets[b].vectors.size(), hausdorff(sets[a], sets[b]),
                       hausdorff_modified(sets[a], sets[b])};
        hcsv += fmt::format("{},{},{},{},{}\n", csv_field(h.pair), h.n_source, h.n_target,
                            format_double(h.hausdorff), format_double(h.hausdorff_modified));
        if (a == 0 && b == 1) distance[r.cell] = modified ? h.hausdorff_modified : h.hausdorff;
        report.hausdorff.push_back(std::move(h));
      }
    }

    std::vector<std::vector<double>> all;
    std::vector<const std::string*> language;
    for (const auto& s : sets) {
      for (const auto& v : s.vectors) {
        all.push_back(v);
        language.push_back(&s.language);
      }
    }
    if (all.size() >= 3 && all.front().size() >= 2) {
      const Pca2Result pca = pca2(all);
      std::string p = hash_header(report.config_hash) +
                      fmt::format("# explained={},{}\n", format_double(pca.explained[0]),
                                  format_double(pca.explained[1])) +
                      "x,y,language\n";
      for (std::size_t i = 0; i < all.size(); ++i) {
        p += fmt::format("{},{},{}\n", format_double(pca.points[i][0]), format_double(pca.points[i][1]),
                         csv_field(*language[i]));
      }
      write_file(out_dir / "pca" / (r.cell + ".csv"), p);
    }
  }
  write_file(out_dir / "hausdorff.csv", hcsv);

  // Seeds are the language pairs: each seed draws its own target language.
  std::map<std::uint64_t, const Row*> jt;
  for (const Row& r : rows) {
    if (r.method == "jt") jt[r.seed] = &r;
  }
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const Row& r : rows) {
    if (r.method == "jt" || r.method == "target_only") continue;
    const auto ref = jt.find(r.seed);
    if (ref == jt.end()) continue;
    const std::string key = r.method + (r.placement.empty() ? "" : "-p" + r.placement) +
                            (r.beta.empty() ? "" : "-b" + r.beta);
    groups[key].first.push_back(r.test_f1 - ref->second->test_f1);
    groups[key].second.push_back(distance.at(ref->second->cell) - distance.at(r.cell));
  }
  for (const auto& [key, xy] : groups) {
    if (xy.first.size() < 3) continue;
    double r = nan;
    try {
      r = pearson(xy.first, xy.second);
    } catch (const ContractError&) {
    }
    report.correlations.push_back({key, xy.first.size(), r});
  }
  const fs::path corr_path = out_dir / "correlation.csv";
  if (!report.correlations.empty()) {
    std::string c = hash_header(report.config_hash) +
                    fmt::format("# distance={}\n", modified ? "hausdorff_modified" : "hausdorff") +
                    "group,n_pairs,pearson\n";
    for (const auto& row : report.correlations) {
      c += fmt::format("{},{},{}\n", row.group, row.n_pairs, format_double(row.pearson));
    }
    write_file(corr_path, c);
  } else {
    std::error_code ec;
    fs::remove(corr_path, ec);
  }
  return report;
}

}  // namespace metaxl
