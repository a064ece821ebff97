#include "metaxl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "metaxl/errors.hpp"
#include "metaxl/rtn.hpp"

namespace metaxl {

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

// Sub-stream ids under TrainConfig::seed.
constexpr std::uint64_t phi_stream = 3;
constexpr std::uint64_t target_stream = 11;
constexpr std::uint64_t source_stream = 12;
constexpr std::uint64_t fresh_stream = 13;

void check_dataset(const EncoderConfig& encoder, const Dataset& data, const char* what) {
  if (data.task != encoder.task_kind) {
    throw ContractError(std::string(what) + ": dataset task " + std::string(to_string(data.task)) +
                        " does not match the encoder task " +
                        std::string(to_string(encoder.task_kind)));
  }
  if (!data.label_names.empty() && data.label_names.size() != encoder.n_labels) {
    throw ContractError(std::string(what) + ": dataset has " +
                        std::to_string(data.label_names.size()) + " labels, encoder has " +
                        std::to_string(encoder.n_labels));
  }
}

std::vector<std::size_t> chunk(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return idx;
}

double plain_step(const EncoderConfig& encoder, EncoderParams& theta, const Batch& batch,
                  const TrainConfig& config) {
  ParamSet p = as_leaves(theta);
  const Tensor loss = task_loss(forward(encoder, p, batch).logits, batch);
  const double value = sgd_step(p, loss, config.alpha, config.clip_norm);
  theta = std::move(p);
  return value;
}

// Source step through the RTN on theta and phi together; alpha moves theta
// and beta moves phi, under one joint clip.
double joint_rtn_step(const EncoderConfig& encoder, TrainState& state, const Batch& batch,
                      const TrainConfig& config) {
  const ParamSet theta = as_leaves(state.theta);
  const ParamSet phi = as_leaves(state.phi);
  const Tensor loss =
      task_loss(forward(encoder, theta, batch,
                        make_rtn_hook(phi, config.placement, config.rtn_residual))
                    .logits,
                batch);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("source loss is not finite");
  ParamSet joint = theta;
  for (const auto& [name, t] : phi) joint.emplace("rtn." + name, t);
  const ParamSet g = grad(loss, joint);
  NoGradGuard no_grad;
  const double norm = global_norm(g);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  const double c = (config.clip_norm > 0.0 && norm > config.clip_norm) ? config.clip_norm / norm : 1.0;
  ParamSet g_theta, g_phi;
  for (const auto& [name, t] : theta) g_theta.emplace(name, g.at(name));
  for (const auto& [name, t] : phi) g_phi.emplace(name, g.at("rtn." + name));
  state.theta = detach(axpy(theta, -config.alpha * c, g_theta));
  state.phi = detach(axpy(phi, -config.beta * c, g_phi));
  return value;
}

Dataset concatenate(const Dataset& source, const Dataset& target) {
  Dataset merged = target;
  merged.examples = source.examples;
  merged.examples.insert(merged.examples.end(), target.examples.begin(), target.examples.end());
  return merged;
}

}  // namespace

EvalReport evaluate(const EncoderConfig& encoder, const EncoderParams& theta, const Dataset& data,
                    std::size_t batch_size) {
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  if (batch_size == 0) throw ContractError("evaluate: batch_size must be > 0");
  check_dataset(encoder, data, "evaluate");
  NoGradGuard no_grad;

  const bool tokens = data.task == TaskKind::token_labeling;
  int outside = 0;
  if (tokens) {
    const auto it = std::find(data.label_names.begin(), data.label_names.end(), "O");
    if (it != data.label_names.end()) outside = static_cast<int>(it - data.label_names.begin());
  }
  auto tag = [&](int label) {
    return data.label_names.empty() ? std::to_string(label)
                                    : data.label_names.at(static_cast<std::size_t>(label));
  };

  std::vector<std::vector<std::string>> gold_tags, pred_tags;
  std::vector<int> gold_cls, pred_cls;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const auto idx = chunk(begin, std::min(data.size(), begin + batch_size));
    const Batch batch = make_batch(data, idx, encoder.max_len);
    const Tensor logits = forward(encoder, theta, batch).logits;
    const std::vector<int> pred = predict(logits, batch);

    std::size_t labeled = 0;
    for (int l : batch.labels) labeled += l != ignore_label;
    if (labeled > 0) {
      loss_sum += task_loss(logits, batch).item() * static_cast<double>(labeled);
      loss_count += labeled;
    }

    for (std::size_t b = 0; b < idx.size(); ++b) {
      const Example& ex = data.examples[idx[b]];
      if (!tokens) {
        gold_cls.push_back(ex.labels.at(0));
        pred_cls.push_back(pred[b]);
        continue;
      }
      std::vector<std::string> g, p;
      for (int l : ex.labels) g.push_back(tag(l));
      for (std::size_t j = 0; j < batch.seq_len; ++j) {
        const std::size_t k = b * batch.seq_len + j;
        if (batch.labels[k] != ignore_label) p.push_back(tag(pred[k]));
      }
      while (p.size() < g.size()) p.push_back(tag(outside));
      gold_tags.push_back(std::move(g));
      pred_tags.push_back(std::move(p));
    }
  }

  EvalReport r;
  r.n_examples = data.size();
  r.loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
  if (tokens) {
    r.spans = span_f1(gold_tags, pred_tags);
    r.f1 = r.spans->f1;
  } else if (encoder.n_labels == 2) {
    r.f1 = binary_f1(gold_cls, pred_cls);
  } else {
    r.f1 = macro_f1(gold_cls, pred_cls, encoder.n_labels);
  }
  return r;
}

TrainState initial_state(const EncoderConfig& encoder, const TrainConfig& config) {
  TrainState state;
  state.theta = init_encoder(encoder, config.seed);
  if (uses_rtn(config.method)) {
    state.phi = rtn_init(encoder.d_model, config.bottleneck_r, stream_seed(config.seed, phi_stream),
                         config.rtn_zero_w2);
  }
  state.rng = Rng(config.seed);
  return state;
}

TrainResult train(const EncoderConfig& encoder, const TrainConfig& config, const Dataset& source,
                  const Dataset& target_train, const Dataset* dev) {
  encoder.validate();
  config.validate(encoder);
  if (target_train.empty()) throw ContractError("train: empty target dataset");
  check_dataset(encoder, target_train, "train");
  const bool needs_source = uses_rtn(config.method) ||
                            (config.method == Method::jt && config.jt_schedule == JtSchedule::alternating);
  if (needs_source && source.empty()) {
    throw ContractError("train: method " + std::string(to_string(config.method)) +
                        " needs a nonempty source dataset");
  }
  if (!source.empty()) check_dataset(encoder, source, "train");
  if (dev) {
    if (dev->empty()) throw ContractError("train: empty dev dataset");
    check_dataset(encoder, *dev, "train");
  }

  const auto started = std::chrono::steady_clock::now();
  TrainResult result;
  TrainState& state = result.state;
  state = initial_state(encoder, config);
  result.theta = state.theta;

  const bool concat = config.method == Method::jt && config.jt_schedule == JtSchedule::concat;
  const Dataset merged = concat ? concatenate(source, target_train) : Dataset{};
  const Dataset& target_pool = concat ? merged : target_train;
  BatchCycler target_cycler(target_pool.size(), stream_seed(config.seed, target_stream));
  std::optional<BatchCycler> source_cycler, fresh_cycler;
  if (!source.empty() && !concat && config.method != Method::target_only) {
    source_cycler.emplace(source.size(), stream_seed(config.seed, source_stream));
    if (config.fresh_inner_batch) fresh_cycler.emplace(source.size(), stream_seed(config.seed, fresh_stream));
  }

  auto run_eval = [&] {
    if (!dev) return;
    const EvalReport r = evaluate(encoder, state.theta, *dev, config.eval_batch);
    result.report.evals.push_back({state.step, r.f1, r.loss});
    if (r.f1 > result.report.best_dev_f1) {
      result.report.best_dev_f1 = r.f1;
      result.report.best_step = state.step;
      result.theta = state.theta;
    }
  };

  for (std::size_t s = 0; s < config.steps; ++s) {
    const EncoderParams theta_before = state.theta;
    const RTNParams phi_before = state.phi;
    const std::size_t history_before = state.history.size();
    const std::size_t step_before = state.step;
    try {
      StepLoss loss{nan, nan};
      if (config.method == Method::target_only || concat) {
        const Batch tb = make_batch(target_pool, target_cycler.next(config.batch_target), encoder.max_len);
        loss.target_loss = plain_step(encoder, state.theta, tb, config);
      } else {
        const Batch sb = make_batch(source, source_cycler->next(config.batch_source), encoder.max_len);
        const Batch tb =
            make_batch(target_train, target_cycler.next(config.batch_target), encoder.max_len);
        if (config.method == Method::jt) {
          loss.source_loss = plain_step(encoder, state.theta, sb, config);
          loss.target_loss = plain_step(encoder, state.theta, tb, config);
        } else if (config.method == Method::jt_rtn) {
          loss.source_loss = joint_rtn_step(encoder, state, sb, config);
          if (config.target_theta_update) loss.target_loss = plain_step(encoder, state.theta, tb, config);
        } else if (!config.fresh_inner_batch) {
          metaxl_step(encoder, state, sb, tb, config);
          loss = state.history.back();
          state.history.pop_back();
          --state.step;
          if (config.target_theta_update) plain_step(encoder, state.theta, tb, config);
        } else {
          // phi from the lookahead on sb; theta from a second source batch.
          const Batch fresh = make_batch(source, fresh_cycler->next(config.batch_source), encoder.max_len);
          const BilevelObjective obj =
              encoder_objective(encoder, sb, tb, config.placement, config.rtn_residual);
          const MetaUpdate up = metaxl_update(obj, as_leaves(state.theta), as_leaves(state.phi),
                                              config.alpha, config.beta, config.meta_grad_mode,
                                              config.clip_norm, config.fd_scale);
          ParamSet theta = as_leaves(state.theta);
          const Tensor fresh_loss = task_loss(
              forward(encoder, theta, fresh,
                      make_rtn_hook(state.phi, config.placement, config.rtn_residual))
                  .logits,
              fresh);
          sgd_step(theta, fresh_loss, config.alpha, config.clip_norm);
          state.theta = std::move(theta);
          state.phi = up.phi;
          loss = {up.source_loss, up.target_loss};
          if (config.target_theta_update) plain_step(encoder, state.theta, tb, config);
        }
      }
      state.history.push_back(loss);
      ++state.step;
    } catch (const NumericError& e) {
      state.theta = theta_before;
      state.phi = phi_before;
      state.history.resize(history_before);
      state.step = step_before;
      throw NumericError("step " + std::to_string(s + 1) + ": " + e.what());
    }
    if (config.eval_every > 0 && state.step % config.eval_every == 0 && state.step < config.steps) {
      run_eval();
    }
  }
  run_eval();
  if (!dev) result.theta = state.theta;

  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::vector<std::vector<double>> extract_representations(const EncoderConfig& encoder,
                                                         const EncoderParams& theta,
                                                         const Dataset& data, RepLevel level,
                                                         std::optional<std::size_t> layer,
                                                         std::size_t batch_size) {
  if (data.empty()) throw ContractError("extract_representations: empty dataset");
  if (batch_size == 0) throw ContractError("extract_representations: batch_size must be > 0");
  const std::size_t index = layer.value_or(encoder.n_layers);
  if (index > encoder.n_layers) {
    throw ContractError("extract_representations: layer " + std::to_string(index) +
                        " outside [0, " + std::to_string(encoder.n_layers) + "]");
  }
  if (level == RepLevel::token && data.task != TaskKind::token_labeling) {
    throw ContractError("extract_representations: token level needs a token-labeled dataset");
  }
  NoGradGuard no_grad;
  const std::size_t d = encoder.d_model;
  std::vector<std::vector<double>> out;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const auto idx = chunk(begin, std::min(data.size(), begin + batch_size));
    const Batch batch = make_batch(data, idx, encoder.max_len);
    const ForwardResult fr = forward(encoder, theta, batch);
    const auto h = fr.hidden.layers.at(index).data();
    auto row = [&](std::size_t b, std::size_t j) {
      const std::size_t off = (b * batch.seq_len + j) * d;
      return std::vector<double>(h.begin() + static_cast<std::ptrdiff_t>(off),
                                 h.begin() + static_cast<std::ptrdiff_t>(off + d));
    };
    for (std::size_t b = 0; b < idx.size(); ++b) {
      if (level == RepLevel::sequence) {
        out.push_back(row(b, 0));
        continue;
      }
      for (std::size_t j = 0; j < batch.seq_len; ++j) {
        if (batch.labels[b * batch.seq_len + j] != ignore_label) out.push_back(row(b, j));
      }
    }
  }
  return out;
}

}  // namespace metaxl
