#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "metaxl/analysis.hpp"
#include "metaxl/bilevel.hpp"
#include "metaxl/checkpoint.hpp"
#include "metaxl/config.hpp"
#include "metaxl/errors.hpp"
#include "metaxl/experiment.hpp"
#include "metaxl/metrics.hpp"
#include "metaxl/trainer.hpp"

namespace py = pybind11;
using namespace metaxl;

namespace {

RepresentationSet as_set(std::vector<std::vector<double>> v, const char* name) {
  return make_representation_set(std::move(v), name, RepLevel::token);
}

py::dict cell_dict(const CellResult& r) {
  py::dict d;
  d["cell"] = r.cell.id;
  d["method"] = std::string(to_string(r.cell.method));
  d["seed"] = r.cell.seed;
  d["beta"] = r.cell.beta ? py::cast(*r.cell.beta) : py::none();
  d["placement"] = r.cell.placement ? py::cast(*r.cell.placement) : py::none();
  d["ok"] = r.ok;
  d["error"] = r.error;
  d["best_step"] = r.best_step;
  d["dev_f1"] = r.dev_f1;
  d["test_f1"] = r.test_f1;
  d["hausdorff"] = r.hausdorff;
  d["hausdorff_modified"] = r.hausdorff_modified;
  d["wall_seconds"] = r.wall_seconds;
  return d;
}

py::dict dataset_dict(const Dataset& data) {
  py::list examples;
  for (const Example& e : data.examples) {
    py::dict x;
    x["words"] = e.words;
    x["labels"] = e.labels;
    examples.append(x);
  }
  py::dict d;
  d["task"] = std::string(to_string(data.task));
  d["label_names"] = data.label_names;
  d["examples"] = examples;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the metaxl package";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  // Configuration.
  m.def("preset_names", &preset_names);
  m.def("preset", [](const std::string& name) { return to_json(preset(name)); },
        "Preset experiment config as a JSON string.", py::arg("name"));
  m.def("normalize_config", [](const std::string& text) { return to_json(parse_experiment_config(text)); },
        "Parses, validates and re-serializes an experiment config.", py::arg("config_json"));
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_experiment_config(text)); },
        py::arg("config_json"));

  // Experiments.
  m.def(
      "run_study",
      [](const std::string& text, std::size_t jobs) {
        const ExperimentConfig config = parse_experiment_config(text);
        StudyReport report;
        {
          py::gil_scoped_release release;
          report = run_study(config, jobs);
        }
        py::dict d;
        d["config_hash"] = report.config_hash;
        d["run_dir"] = report.run_dir.string();
        py::list cells;
        for (const CellResult& r : report.cells) cells.append(cell_dict(r));
        d["cells"] = cells;
        return d;
      },
      "Trains every cell and writes the run directory.", py::arg("config_json"), py::arg("jobs") = 1);
  m.def(
      "analyze_run",
      [](const std::string& run_dir, bool modified) {
        const AnalysisReport r = analyze_run(run_dir, modified);
        py::dict d;
        d["config_hash"] = r.config_hash;
        py::list h, c;
        for (const HausdorffRow& row : r.hausdorff) {
          h.append(py::dict(py::arg("pair") = row.pair, py::arg("n_source") = row.n_source,
                            py::arg("n_target") = row.n_target, py::arg("hausdorff") = row.hausdorff,
                            py::arg("hausdorff_modified") = row.hausdorff_modified));
        }
        for (const CorrelationRow& row : r.correlations) {
          c.append(py::dict(py::arg("group") = row.group, py::arg("n_pairs") = row.n_pairs,
                            py::arg("pearson") = row.pearson));
        }
        d["hausdorff"] = h;
        d["correlations"] = c;
        return d;
      },
      py::arg("run_dir"), py::arg("modified") = false);
  m.def(
      "evaluate_checkpoint",
      [](const std::string& checkpoint, const std::string& data_path) {
        const Checkpoint ck = load_checkpoint(checkpoint);
        const EncoderConfig& enc = ck.manifest.encoder;
        const Dataset data = enc.task_kind == TaskKind::token_labeling
                                 ? load_token_labeled(data_path, ck.manifest.label_names)
                                 : load_sequence_labeled(data_path, enc.n_labels);
        const EvalReport r = evaluate(enc, ck.theta, data);
        py::dict d;
        d["f1"] = r.f1;
        d["loss"] = r.loss;
        d["n_examples"] = r.n_examples;
        d["cell"] = ck.manifest.cell;
        d["config_hash"] = ck.manifest.config_hash;
        return d;
      },
      py::arg("checkpoint"), py::arg("data_path"));

  // Synthetic data.
  m.def(
      "generate_pair",
      [](const std::string& spec_json) {
        const SyntheticTaskSpec spec = spec_json.empty() ? SyntheticTaskSpec{} : parse_task_spec(spec_json);
        const SyntheticPair p = generate_pair(spec);
        py::dict d;
        d["source"] = dataset_dict(p.source);
        d["target_train"] = dataset_dict(p.target_train);
        d["target_dev"] = dataset_dict(p.target_dev);
        d["target_test"] = dataset_dict(p.target_test);
        d["overlap"] = p.mapping.overlap();
        return d;
      },
      py::arg("spec_json") = "");
  m.def(
      "export_pair",
      [](const std::string& spec_json, const std::string& out_dir) {
        const SyntheticTaskSpec spec = spec_json.empty() ? SyntheticTaskSpec{} : parse_task_spec(spec_json);
        export_pair(generate_pair(spec), spec, out_dir);
      },
      py::arg("spec_json"), py::arg("out_dir"));

  // Meta-gradient on the scalar problem L_s = (theta - phi)^2, L_t = theta^2.
  m.def(
      "scalar_meta_gradient",
      [](double theta, double phi, double alpha, const std::string& mode) {
        BilevelObjective obj;
        obj.source_loss = [](const ParamSet& t, const ParamSet& p) {
          Tensor diff = sub(t.at("theta"), p.at("phi"));
          return mul(diff, diff);
        };
        obj.target_loss = [](const ParamSet& t) { return mul(t.at("theta"), t.at("theta")); };
        return meta_gradient(obj, {{"theta", Tensor::scalar(theta)}}, {{"phi", Tensor::scalar(phi)}}, alpha,
                             parse_meta_grad_mode(mode))
            .grad.at("phi")
            .item();
      },
      py::arg("theta"), py::arg("phi"), py::arg("alpha"), py::arg("mode") = "unrolled");

  // Metrics and analysis.
  m.def(
      "span_f1",
      [](const std::vector<std::vector<std::string>>& gold, const std::vector<std::vector<std::string>>& pred) {
        const Prf r = span_f1(gold, pred);
        return py::make_tuple(r.precision, r.recall, r.f1);
      },
      "Micro (precision, recall, f1) over sentences of BIO tags.", py::arg("gold"), py::arg("predicted"));
  m.def(
      "extract_spans",
      [](const std::vector<std::string>& tags) {
        py::list out;
        for (const Span& s : extract_spans(tags)) out.append(py::make_tuple(s.type, s.start, s.end));
        return out;
      },
      py::arg("tags"));
  m.def("binary_f1", &binary_f1, py::arg("gold"), py::arg("predicted"));
  m.def("macro_f1", &macro_f1, py::arg("gold"), py::arg("predicted"), py::arg("n_classes"));
  m.def(
      "cosine_distance",
      [](const std::vector<double>& a, const std::vector<double>& b) { return cosine_distance(a, b); },
      py::arg("a"), py::arg("b"));
  m.def(
      "hausdorff",
      [](std::vector<std::vector<double>> s, std::vector<std::vector<double>> t, bool modified) {
        const auto a = as_set(std::move(s), "s"), b = as_set(std::move(t), "t");
        return modified ? hausdorff_modified(a, b) : hausdorff(a, b);
      },
      py::arg("s"), py::arg("t"), py::arg("modified") = false);
  m.def(
      "pca2",
      [](const std::vector<std::vector<double>>& x) {
        const Pca2Result r = pca2(x);
        py::dict d;
        d["points"] = r.points;
        d["explained"] = r.explained;
        d["components"] = r.components;
        d["total_variance"] = r.total_variance;
        return d;
      },
      py::arg("vectors"));
  m.def("pearson", &pearson, py::arg("xs"), py::arg("ys"));
}
