#include "metaxl/config.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"
#include "metaxl/errors.hpp"

namespace metaxl {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for, so a
// misspelled option fails loudly instead of silently keeping its default.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ContractError(where_ + ": expected a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ContractError(where_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ContractError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json encoder_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ffn", c.d_ffn},     {"max_len", c.max_len},
          {"task_kind", std::string(to_string(c.task_kind))},   {"n_labels", c.n_labels}};
}

EncoderConfig encoder_from(const json& j) {
  EncoderConfig c;
  ObjectReader r(j, "encoder");
  r.get("vocab_size", c.vocab_size);
  r.get("d_model", c.d_model);
  r.get("n_layers", c.n_layers);
  r.get("n_heads", c.n_heads);
  r.get("d_ffn", c.d_ffn);
  r.get("max_len", c.max_len);
  std::string task(to_string(c.task_kind));
  r.get("task_kind", task);
  c.task_kind = parse_task_kind(task);
  r.get("n_labels", c.n_labels);
  r.finish();
  return c;
}

json train_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"placement", c.placement},
          {"bottleneck_r", c.bottleneck_r},
          {"steps", c.steps},
          {"batch_source", c.batch_source},
          {"batch_target", c.batch_target},
          {"seed", c.seed},
          {"method", std::string(to_string(c.method))},
          {"meta_grad_mode", std::string(to_string(c.meta_grad_mode))},
          {"clip_norm", c.clip_norm},
          {"fd_scale", c.fd_scale},
          {"rtn_residual", c.rtn_residual},
          {"rtn_zero_w2", c.rtn_zero_w2},
          {"fresh_inner_batch", c.fresh_inner_batch},
          {"target_theta_update", c.target_theta_update},
          {"jt_schedule", std::string(to_string(c.jt_schedule))},
          {"eval_every", c.eval_every},
          {"eval_batch", c.eval_batch}};
}

TrainConfig train_from(const json& j) {
  TrainConfig c;
  ObjectReader r(j, "train");
  r.get("alpha", c.alpha);
  r.get("beta", c.beta);
  r.get("placement", c.placement);
  r.get("bottleneck_r", c.bottleneck_r);
  r.get("steps", c.steps);
  r.get("batch_source", c.batch_source);
  r.get("batch_target", c.batch_target);
  r.get("seed", c.seed);
  std::string method(to_string(c.method)), mode(to_string(c.meta_grad_mode)),
      schedule(to_string(c.jt_schedule));
  r.get("method", method);
  r.get("meta_grad_mode", mode);
  r.get("jt_schedule", schedule);
  c.method = parse_method(method);
  c.meta_grad_mode = parse_meta_grad_mode(mode);
  c.jt_schedule = parse_jt_schedule(schedule);
  r.get("clip_norm", c.clip_norm);
  r.get("fd_scale", c.fd_scale);
  r.get("rtn_residual", c.rtn_residual);
  r.get("rtn_zero_w2", c.rtn_zero_w2);
  r.get("fresh_inner_batch", c.fresh_inner_batch);
  r.get("target_theta_update", c.target_theta_update);
  r.get("eval_every", c.eval_every);
  r.get("eval_batch", c.eval_batch);
  r.finish();
  return c;
}

json spec_json(const SyntheticTaskSpec& s) {
  return {{"task_kind", std::string(to_string(s.task_kind))},
          {"vocab_low", s.vocab_low},
          {"vocab_high", s.vocab_high},
          {"n_labels", s.n_labels},
          {"seq_len_min", s.seq_len_min},
          {"seq_len_max", s.seq_len_max},
          {"entity_rate", s.entity_rate},
          {"sentiment_token_rate", s.sentiment_token_rate},
          {"shift", s.shift},
          {"seed", s.seed},
          {"sizes",
           {{"source", s.sizes.source_n},
            {"target_train", s.sizes.target_train_n},
            {"target_dev", s.sizes.target_dev_n},
            {"target_test", s.sizes.target_test_n}}}};
}

SyntheticTaskSpec spec_from(const json& j) {
  SyntheticTaskSpec s;
  ObjectReader r(j, "synthetic");
  std::string task(to_string(s.task_kind));
  r.get("task_kind", task);
  s.task_kind = parse_task_kind(task);
  r.get("vocab_low", s.vocab_low);
  r.get("vocab_high", s.vocab_high);
  r.get("n_labels", s.n_labels);
  r.get("seq_len_min", s.seq_len_min);
  r.get("seq_len_max", s.seq_len_max);
  r.get("entity_rate", s.entity_rate);
  r.get("sentiment_token_rate", s.sentiment_token_rate);
  r.get("shift", s.shift);
  r.get("seed", s.seed);
  if (r.has("sizes")) {
    ObjectReader z(r.at("sizes"), "synthetic.sizes");
    z.get("source", s.sizes.source_n);
    z.get("target_train", s.sizes.target_train_n);
    z.get("target_dev", s.sizes.target_dev_n);
    z.get("target_test", s.sizes.target_test_n);
    z.finish();
  }
  r.finish();
  return s;
}

json files_json(const DataFiles& f) {
  return {{"source", f.source},
          {"target_train", f.target_train},
          {"target_dev", f.target_dev},
          {"target_test", f.target_test},
          {"tag_inventory", f.tag_inventory}};
}

DataFiles files_from(const json& j) {
  DataFiles f;
  ObjectReader r(j, "files");
  r.get("source", f.source);
  r.get("target_train", f.target_train);
  r.get("target_dev", f.target_dev);
  r.get("target_test", f.target_test);
  r.get("tag_inventory", f.tag_inventory);
  r.finish();
  return f;
}

json experiment_json(const ExperimentConfig& c, bool with_output) {
  json j = {{"name", c.name},
            {"encoder", encoder_json(c.encoder)},
            {"train", train_json(c.train)},
            {"seeds", c.seeds},
            {"betas", c.betas},
            {"placements", c.placements},
            {"rep_examples", c.rep_examples}};
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.emplace_back(to_string(m));
  j["methods"] = methods;
  if (c.synthetic) j["synthetic"] = spec_json(*c.synthetic);
  if (c.files) j["files"] = files_json(*c.files);
  if (with_output) j["output_dir"] = c.output_dir;
  return j;
}

json parse_or_throw(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
    throw ParseError(std::string(what) + ": " + e.what(), line);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (synthetic.has_value() == files.has_value()) {
    throw ContractError("experiment config: give exactly one of 'synthetic' or 'files'");
  }
  encoder.validate();
  if (seeds.empty()) throw ContractError("experiment config: seeds must be nonempty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ContractError("experiment config: duplicate seed");
  }
  if (methods.empty()) throw ContractError("experiment config: methods must be nonempty");
  if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size()) {
    throw ContractError("experiment config: duplicate method");
  }
  if (rep_examples == 0) throw ContractError("experiment config: rep_examples must be > 0");
  for (double b : betas) {
    if (!(b >= 0.0)) throw ContractError("experiment config: betas must be >= 0");
  }
  for (Method m : methods) {
    TrainConfig t = train;
    t.method = m;
    t.validate(encoder);
    for (std::size_t p : placements) {
      t.placement = p;
      t.validate(encoder);
    }
  }
  if (synthetic) {
    synthetic->validate();
    if (synthetic->task_kind != encoder.task_kind) {
      throw ContractError("experiment config: synthetic task_kind differs from encoder task_kind");
    }
    if (synthetic->n_labels != encoder.n_labels) {
      throw ContractError("experiment config: synthetic n_labels " +
                          std::to_string(synthetic->n_labels) + " differs from encoder n_labels " +
                          std::to_string(encoder.n_labels));
    }
  } else if (encoder.task_kind == TaskKind::token_labeling &&
             files->tag_inventory.size() != encoder.n_labels) {
    throw ContractError("experiment config: tag_inventory has " +
                        std::to_string(files->tag_inventory.size()) +
                        " tags but encoder n_labels is " + std::to_string(encoder.n_labels));
  }
}

std::string to_json(const ExperimentConfig& config) { return experiment_json(config, true).dump(2); }

ExperimentConfig parse_experiment_config(const std::string& text) {
  const json j = parse_or_throw(text, "experiment config");
  ExperimentConfig c;
  ObjectReader r(j, "config");
  r.get("name", c.name);
  if (r.has("encoder")) c.encoder = encoder_from(r.at("encoder"));
  if (r.has("train")) c.train = train_from(r.at("train"));
  const bool has_files = r.has("files");
  if (r.has("synthetic")) {
    c.synthetic = spec_from(r.at("synthetic"));
  } else if (has_files) {
    c.synthetic.reset();
  } else {
    c.synthetic = SyntheticTaskSpec{};
  }
  if (has_files) c.files = files_from(r.at("files"));
  r.get("seeds", c.seeds);
  std::vector<std::string> methods;
  if (r.has("methods")) {
    r.get("methods", methods);
    c.methods.clear();
    for (const auto& m : methods) c.methods.push_back(parse_method(m));
  }
  r.get("betas", c.betas);
  r.get("placements", c.placements);
  r.get("rep_examples", c.rep_examples);
  r.get("output_dir", c.output_dir);
  r.finish();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  try {
    return parse_experiment_config(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  } catch (const ContractError& e) {
    throw ContractError(path.string() + ": " + e.what());
  }
}

std::string to_json(const EncoderConfig& config) { return encoder_json(config).dump(); }
EncoderConfig parse_encoder_config(const std::string& text) {
  return encoder_from(parse_or_throw(text, "encoder config"));
}
std::string to_json(const SyntheticTaskSpec& spec) { return spec_json(spec).dump(2); }
SyntheticTaskSpec parse_task_spec(const std::string& text) {
  return spec_from(parse_or_throw(text, "task spec"));
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  return fnv1a_hex(experiment_json(config, false).dump());
}

std::vector<std::string> preset_names() { return {"table2-shape", "table5-shape", "table6-shape"}; }

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig c;
  c.name = std::string(name);
  c.encoder = EncoderConfig{};
  c.synthetic = SyntheticTaskSpec{};
  c.synthetic->shift = 0.5;
  c.train.steps = 1500;
  c.train.batch_source = 16;
  c.train.batch_target = 16;
  // The base encoder here is trained from scratch, which needs a larger
  // step size than fine-tuning; beta is swept over {alpha / 10, alpha}.
  c.train.alpha = 0.4;
  c.train.beta = 0.4;
  c.betas = {0.04, 0.4};
  c.train.placement = 1;
  c.train.bottleneck_r = 16;
  c.train.eval_every = 50;
  c.seeds = {0, 1, 2, 3, 4};
  if (name == "table2-shape") {
    c.methods = {Method::target_only, Method::jt, Method::metaxl};
  } else if (name == "table5-shape") {
    c.methods = {Method::jt, Method::metaxl};
    c.placements = {0, 1, 2};
  } else if (name == "table6-shape") {
    c.methods = {Method::jt, Method::jt_rtn, Method::metaxl};
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ContractError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
  }
  return c;
}

RunData load_run_data(const ExperimentConfig& config, std::uint64_t seed) {
  RunData d;
  if (config.synthetic) {
    SyntheticTaskSpec spec = *config.synthetic;
    spec.seed += seed;
    SyntheticPair pair = generate_pair(spec);
    d.source = std::move(pair.source);
    d.target_train = std::move(pair.target_train);
    d.target_dev = std::move(pair.target_dev);
    d.target_test = std::move(pair.target_test);
    // Same latent sentences as the test split, written in both languages.
    VocabMapping identity = pair.mapping;
    for (std::size_t i = 0; i < identity.table.size(); ++i) identity.table[i] = static_cast<int>(i);
    identity.remapped = 0;
    const std::size_t n = std::min(config.rep_examples, spec.sizes.target_test_n);
    d.rep_source = generate_examples(spec, n, 4, identity, Role::source);
    d.rep_target = generate_examples(spec, n, 4, pair.mapping, Role::target);
    return d;
  }
  const DataFiles& f = *config.files;
  auto load = [&](const std::string& path, Role role) {
    Dataset data = config.encoder.task_kind == TaskKind::token_labeling
                       ? load_token_labeled(path, f.tag_inventory)
                       : load_sequence_labeled(path, config.encoder.n_labels);
    data.role = role;
    return data;
  };
  d.source = load(f.source, Role::source);
  d.target_train = load(f.target_train, Role::target);
  d.target_dev = load(f.target_dev, Role::target);
  d.target_test = load(f.target_test, Role::target);
  auto head = [&](const Dataset& data) {
    Dataset out = data;
    out.examples.resize(std::min(config.rep_examples, data.size()));
    return out;
  };
  d.rep_source = head(d.source);
  d.rep_target = head(d.target_test);
  return d;
}

}  // namespace metaxl
