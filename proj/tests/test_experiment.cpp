#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "metaxl/checkpoint.hpp"
#include "metaxl/config.hpp"
#include "metaxl/errors.hpp"
#include "metaxl/experiment.hpp"
#include "metaxl/rtn.hpp"
#include "metaxl/trainer.hpp"

namespace metaxl {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("metaxl_test_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny_experiment(const fs::path& out) {
  ExperimentConfig c;
  c.name = "tiny";
  c.encoder.d_model = 8;
  c.encoder.n_layers = 2;
  c.encoder.n_heads = 2;
  c.encoder.d_ffn = 8;
  c.encoder.max_len = 16;
  c.synthetic->sizes = {40, 12, 10, 10};
  c.synthetic->seq_len_min = 3;
  c.synthetic->seq_len_max = 6;
  c.train.steps = 4;
  c.train.batch_source = 4;
  c.train.batch_target = 4;
  c.train.bottleneck_r = 3;
  c.train.eval_every = 2;
  c.rep_examples = 6;
  c.seeds = {0, 1};
  c.methods = {Method::target_only, Method::jt, Method::metaxl};
  c.output_dir = out.string();
  return c;
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = preset("table5-shape");
  c.betas = {0.01, 0.1};
  c.train.meta_grad_mode = MetaGradMode::fd_hvp;
  const std::string text = to_json(c);
  const ExperimentConfig back = parse_experiment_config(text);
  EXPECT_EQ(to_json(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, HashIgnoresKeyOrderAndOutputDir) {
  const std::string a = R"({"name":"x","seeds":[1,2],"train":{"alpha":0.1,"steps":7}})";
  const std::string b = R"({"train":{"steps":7,"alpha":0.1},"seeds":[1,2],"name":"x","output_dir":"elsewhere"})";
  EXPECT_EQ(config_hash(parse_experiment_config(a)), config_hash(parse_experiment_config(b)));
  const std::string c = R"({"name":"x","seeds":[1,2],"train":{"alpha":0.2,"steps":7}})";
  EXPECT_NE(config_hash(parse_experiment_config(a)), config_hash(parse_experiment_config(c)));
}

TEST(Config, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_experiment_config(R"({"trian":{}})"), ContractError);
  EXPECT_THROW(parse_experiment_config(R"({"train":{"alpah":1}})"), ContractError);
  EXPECT_THROW(parse_experiment_config(R"({"train":{"method":"maml"}})"), ContractError);
  try {
    parse_experiment_config("{\n\"name\": \"x\",\n oops}");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  ExperimentConfig both = parse_experiment_config(R"({"files":{"source":"a"}})");
  EXPECT_FALSE(both.synthetic.has_value());
  both.synthetic = SyntheticTaskSpec{};
  EXPECT_THROW(both.validate(), ContractError);
  ExperimentConfig mismatch;
  mismatch.encoder.n_labels = 7;
  EXPECT_THROW(mismatch.validate(), ContractError);
  ExperimentConfig dup;
  dup.seeds = {1, 1};
  EXPECT_THROW(dup.validate(), ContractError);
}

TEST(Config, Presets) {
  for (const auto& name : preset_names()) {
    const ExperimentConfig c = preset(name);
    EXPECT_NO_THROW(c.validate()) << name;
    EXPECT_EQ(c.name, name);
  }
  EXPECT_EQ(preset("table5-shape").placements, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(preset("table9"), ContractError);
}

TEST(Config, RunDataIsParallelForRepresentations) {
  ExperimentConfig c = tiny_experiment(scratch("rundata"));
  const RunData d = load_run_data(c, 1);
  ASSERT_EQ(d.rep_source.size(), 6u);
  for (std::size_t i = 0; i < d.rep_source.size(); ++i) {
    EXPECT_EQ(d.rep_target.examples[i], d.target_test.examples[i]);
    EXPECT_EQ(d.rep_source.examples[i].labels, d.rep_target.examples[i].labels);
  }
  EXPECT_EQ(d.source.role, Role::source);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  EncoderConfig enc;
  enc.d_model = 8;
  enc.n_heads = 2;
  Checkpoint ck;
  ck.manifest = {"0123456789abcdef", "metaxl-s0", 17, 0.625, enc, bio_inventory(2)};
  ck.theta = init_encoder(enc, 3);
  ck.theta["head.bias"] = Tensor::from({5}, {1e-310, -0.0, 1.0 / 3.0, 1e300, -2.5});
  ck.phi = rtn_init(8, 3, 4);
  const fs::path path = scratch("ckpt") / "c.bin";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_TRUE(bit_equal(back.theta, ck.theta));
  EXPECT_TRUE(bit_equal(back.phi, ck.phi));
  EXPECT_EQ(back.manifest.config_hash, ck.manifest.config_hash);
  EXPECT_EQ(back.manifest.cell, "metaxl-s0");
  EXPECT_EQ(back.manifest.step, 17u);
  EXPECT_EQ(back.manifest.metric, 0.625);
  EXPECT_EQ(back.manifest.label_names, ck.manifest.label_names);
  EXPECT_EQ(to_json(back.manifest.encoder), to_json(enc));
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
}

TEST(Checkpoint, NanMetricAndCorruption) {
  EncoderConfig enc;
  Checkpoint ck;
  ck.manifest.encoder = enc;
  ck.manifest.metric = std::nan("");
  ck.theta = init_encoder(enc, 0);
  const std::string bytes = serialize_checkpoint(ck);
  EXPECT_TRUE(std::isnan(deserialize_checkpoint(bytes).manifest.metric));
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), ParseError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), ParseError);
  EXPECT_THROW(load_checkpoint(scratch("missing") / "none.bin"), IoError);
}

TEST(Cells, RowCountContracts) {
  ExperimentConfig c = preset("table2-shape");
  c.seeds = {0, 1, 2};
  ASSERT_EQ(c.betas.size(), 2u);
  EXPECT_EQ(enumerate_cells(c).size(), 12u);
  c.betas.clear();
  EXPECT_EQ(enumerate_cells(c).size(), 9u);
  ExperimentConfig sweep = preset("table5-shape");
  sweep.seeds = {7};
  std::size_t metaxl = 0;
  for (const Cell& cell : enumerate_cells(sweep)) {
    if (cell.method == Method::metaxl) {
      ++metaxl;
      EXPECT_TRUE(cell.placement.has_value());
    }
  }
  EXPECT_EQ(metaxl, 6u);
  c.betas = {0.1, 0.2, 0.3};
  EXPECT_EQ(enumerate_cells(c).size(), 15u);
  EXPECT_EQ(enumerate_cells(c)[2].id, "metaxl-s0-p1-b0.1");
}

TEST(Csv, QuotedFields) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  const auto rows = parse_csv("# comment\nx,y\n1,\"a,\"\"b\"\"\"\n");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][1], "a,\"b\"");
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(std::nan("")), "nan");
}

TEST(Reps, JsonlRoundTrip) {
  const auto s = make_representation_set({{1, 2}, {0.1, 1e-17}}, "source", RepLevel::token);
  const auto t = make_representation_set({{3, 4}}, "target", RepLevel::token);
  std::string hash;
  const auto back = parse_reps_jsonl(reps_jsonl("h", "c", {s, t}), &hash);
  EXPECT_EQ(hash, "h");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].vectors, s.vectors);
  EXPECT_EQ(back[1].language, "target");
  EXPECT_EQ(back[1].level, RepLevel::token);
  EXPECT_THROW(parse_reps_jsonl("", nullptr), ParseError);
}

TEST(Study, WritesArtifactsDeterministically) {
  const fs::path out = scratch("study");
  const ExperimentConfig c = tiny_experiment(out);
  const StudyReport r = run_study(c);
  ASSERT_TRUE(r.all_ok()) << r.cells.front().error;
  EXPECT_EQ(r.cells.size(), 6u);
  for (const char* f : {"config.json", "run.json", "metrics.csv", "summary.csv", "timings.csv"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  for (const auto& cell : r.cells) {
    for (const char* f : {"checkpoint.bin", "losses.csv", "evals.csv", "reps.jsonl"}) {
      EXPECT_TRUE(fs::exists(out / "cells" / cell.cell.id / f)) << cell.cell.id << "/" << f;
    }
    EXPECT_GE(cell.test_f1, 0.0);
    EXPECT_LE(cell.test_f1, 1.0);
  }
  const std::string metrics = read_file(out / "metrics.csv");
  const std::string summary = read_file(out / "summary.csv");
  EXPECT_EQ(metrics.rfind("# config_hash=" + config_hash(c), 0), 0u);

  // Same config, parallel workers, fresh directory: identical bytes.
  const fs::path out2 = scratch("study2");
  ExperimentConfig c2 = c;
  c2.output_dir = out2.string();
  run_study(c2, 3);
  EXPECT_EQ(read_file(out2 / "metrics.csv"), metrics);
  EXPECT_EQ(read_file(out2 / "summary.csv"), summary);

  // The checkpoint reproduces the recorded test F1.
  const Checkpoint ck = load_checkpoint(out / "cells" / "metaxl-s1-p2-b0.05" / "checkpoint.bin");
  const RunData data = load_run_data(c, 1);
  EXPECT_EQ(evaluate(ck.manifest.encoder, ck.theta, data.target_test).f1, r.cells[5].test_f1);
}

TEST(Study, CellFailureIsIsolated) {
  const fs::path out = scratch("failure");
  ExperimentConfig c = tiny_experiment(out);
  c.seeds = {0};
  c.betas = {1e300};
  const StudyReport r = run_study(c);
  EXPECT_FALSE(r.all_ok());
  ASSERT_EQ(r.cells.size(), 3u);
  EXPECT_TRUE(r.cells[0].ok);
  EXPECT_TRUE(r.cells[1].ok);
  EXPECT_FALSE(r.cells[2].ok);
  EXPECT_NE(r.cells[2].error.find("step"), std::string::npos);
  EXPECT_NE(read_file(out / "metrics.csv").find(",failed,"), std::string::npos);
}

TEST(Study, UnwritableOutputFailsBeforeTraining) {
  const fs::path blocker = scratch("blocker");
  write_file(blocker, "not a directory");
  ExperimentConfig c = tiny_experiment(blocker / "run");
  EXPECT_THROW(run_study(c), IoError);
}

TEST(Study, RunDirFromEnvironment) {
  ExperimentConfig c = tiny_experiment("");
  c.output_dir.clear();
  ::setenv("METAXL_OUTPUT_ROOT", "/some/root", 1);
  EXPECT_EQ(resolve_run_dir(c), fs::path("/some/root") / ("tiny-" + config_hash(c)));
  ::unsetenv("METAXL_OUTPUT_ROOT");
  EXPECT_EQ(resolve_run_dir(c), fs::path("runs") / ("tiny-" + config_hash(c)));
}

// Hand-written run directory with chosen dumps and F1 values.
void write_fixture(const fs::path& dir, std::size_t n_seeds, bool identical) {
  const std::string hash = "feedfacefeedface";
  write_file(dir / "run.json", R"({"config_hash":")" + hash + "\"}");
  std::string m = "# config_hash=" + hash +
                  "\ncell,method,seed,beta,placement,status,best_step,dev_f1,test_f1,n_source,n_target,"
                  "hausdorff,hausdorff_modified,error\n";
  for (std::size_t s = 0; s < n_seeds; ++s) {
    for (const std::string method : {"jt", "metaxl"}) {
      const std::string id = method + "-s" + std::to_string(s);
      const double f1 = method == "jt" ? 0.5 : 0.5 + 0.1 * static_cast<double>(s);
      m += id + "," + method + "," + std::to_string(s) + ",,,ok,1,0.5," + format_double(f1) + ",2,2,0,0,\n";
      const double tilt = method == "jt" ? 1.0 : 1.0 / static_cast<double>(s + 2);
      const auto src = make_representation_set({{1, 0}, {0, 1}}, "source", RepLevel::sequence);
      const auto tgt = identical ? src
                                 : make_representation_set({{1, tilt}, {tilt, 1}}, "target",
                                                           RepLevel::sequence);
      auto named = tgt;
      named.language = "target";
      write_file(dir / "cells" / id / "reps.jsonl", reps_jsonl(hash, id, {src, named}));
    }
  }
  write_file(dir / "metrics.csv", m);
}

TEST(Analyze, IdenticalDumpsGiveZero) {
  const fs::path dir = scratch("analyze_zero");
  write_fixture(dir, 1, true);
  const AnalysisReport r = analyze_run(dir);
  ASSERT_EQ(r.hausdorff.size(), 2u);
  for (const auto& h : r.hausdorff) EXPECT_EQ(h.hausdorff, 0.0);
  EXPECT_TRUE(fs::exists(dir / "analysis" / "hausdorff.csv"));
}

TEST(Analyze, CorrelationNeedsThreePairs) {
  const fs::path two = scratch("analyze_two");
  write_fixture(two, 2, false);
  EXPECT_TRUE(analyze_run(two).correlations.empty());
  EXPECT_FALSE(fs::exists(two / "analysis" / "correlation.csv"));

  const fs::path three = scratch("analyze_three");
  write_fixture(three, 3, false);
  const AnalysisReport r = analyze_run(three);
  ASSERT_EQ(r.correlations.size(), 1u);
  EXPECT_EQ(r.correlations[0].n_pairs, 3u);
  // Larger F1 gains come with larger distance reductions by construction.
  EXPECT_GT(r.correlations[0].pearson, 0.9);
  EXPECT_TRUE(fs::exists(three / "analysis" / "correlation.csv"));
  EXPECT_TRUE(fs::exists(three / "analysis" / "pca" / "metaxl-s2.csv"));
}

TEST(Analyze, RepeatIsIdentical) {
  const fs::path dir = scratch("analyze_repeat");
  write_fixture(dir, 3, false);
  analyze_run(dir);
  const std::string first = read_file(dir / "analysis" / "hausdorff.csv");
  analyze_run(dir);
  EXPECT_EQ(read_file(dir / "analysis" / "hausdorff.csv"), first);
}

TEST(Analyze, RefusesMixedHashesAndMissingDumps) {
  const fs::path dir = scratch("analyze_mixed");
  write_fixture(dir, 1, false);
  const auto src = make_representation_set({{1, 0}}, "source", RepLevel::sequence);
  write_file(dir / "cells" / "jt-s0" / "reps.jsonl", reps_jsonl("0000000000000000", "jt-s0", {src, src}));
  EXPECT_THROW(analyze_run(dir), ContractError);

  fs::remove(dir / "cells" / "jt-s0" / "reps.jsonl");
  try {
    analyze_run(dir);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("jt-s0/reps.jsonl"), std::string::npos) << e.what();
  }
  EXPECT_THROW(analyze_run(scratch("not_a_run")), IoError);
}

}  // namespace
}  // namespace metaxl
