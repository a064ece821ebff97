#include "metaxl/bilevel.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace metaxl {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::target_only: return "target_only";
    case Method::jt: return "jt";
    case Method::jt_rtn: return "jt_rtn";
    case Method::metaxl: return "metaxl";
  }
  return "?";
}

std::string_view to_string(MetaGradMode m) {
  switch (m) {
    case MetaGradMode::unrolled: return "unrolled";
    case MetaGradMode::analytic_expansion: return "analytic_expansion";
    case MetaGradMode::fd_hvp: return "fd_hvp";
  }
  return "?";
}

std::string_view to_string(JtSchedule s) {
  return s == JtSchedule::concat ? "concat" : "alternating";
}

Method parse_method(std::string_view text) {
  for (Method m : {Method::target_only, Method::jt, Method::jt_rtn, Method::metaxl}) {
    if (text == to_string(m)) return m;
  }
  if (text == "target") return Method::target_only;
  throw ContractError("unknown method '" + std::string(text) +
                      "' (expected target_only, jt, jt_rtn or metaxl)");
}

MetaGradMode parse_meta_grad_mode(std::string_view text) {
  for (MetaGradMode m :
       {MetaGradMode::unrolled, MetaGradMode::analytic_expansion, MetaGradMode::fd_hvp}) {
    if (text == to_string(m)) return m;
  }
  throw ContractError("unknown meta_grad_mode '" + std::string(text) + "'");
}

JtSchedule parse_jt_schedule(std::string_view text) {
  if (text == "concat") return JtSchedule::concat;
  if (text == "alternating") return JtSchedule::alternating;
  throw ContractError("unknown jt_schedule '" + std::string(text) + "'");
}

bool uses_rtn(Method m) { return m == Method::jt_rtn || m == Method::metaxl; }
bool uses_source(Method m) { return m != Method::target_only; }

void TrainConfig::validate(const EncoderConfig& encoder) const {
  if (!(alpha > 0.0)) throw ContractError("train config: alpha must be > 0");
  if (uses_rtn(method) && !(beta >= 0.0)) throw ContractError("train config: beta must be >= 0");
  if (placement > encoder.n_layers) {
    throw ContractError("train config: placement " + std::to_string(placement) + " outside [0, " +
                        std::to_string(encoder.n_layers) + "]");
  }
  if (uses_rtn(method) && (bottleneck_r == 0 || bottleneck_r >= encoder.d_model)) {
    throw ContractError("train config: bottleneck_r must satisfy 0 < r < d_model");
  }
  if (batch_source == 0 || batch_target == 0) throw ContractError("train config: batch sizes must be > 0");
  if (clip_norm < 0.0) throw ContractError("train config: clip_norm must be >= 0");
  if (!(fd_scale > 0.0)) throw ContractError("train config: fd_scale must be > 0");
}

LargeModelPreset large_model_preset(TaskKind task) {
  LargeModelPreset p;
  p.train.method = Method::metaxl;
  p.train.alpha = 3e-5;
  p.train.beta = 3e-5;
  p.beta_grid = {3e-5, 1e-6, 1e-7};
  p.epochs = 20;
  p.d_model = 768;
  if (task == TaskKind::token_labeling) {
    p.train.batch_source = p.train.batch_target = 16;
    p.train.bottleneck_r = 384;
    p.max_len = 200;
  } else {
    p.train.batch_source = p.train.batch_target = 12;
    p.train.bottleneck_r = 192;
    p.max_len = 256;
  }
  p.train.placement = 12;
  return p;
}

namespace {

void require_leaves(const ParamSet& params, const char* what) {
  for (const auto& [name, p] : params) {
    if (!p.requires_grad()) {
      throw ContractError(std::string(what) + " parameter '" + name +
                          "' is not differentiable; pass as_leaves(...)");
    }
  }
}

double finite_or_throw(const Tensor& loss, const char* what) {
  const double v = loss.item();
  if (!std::isfinite(v)) throw NumericError(std::string(what) + " loss is not finite");
  return v;
}

double clip_factor(double norm, double clip_norm) {
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  return (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
}

// dot(a, b) summed over every tensor of two parameter sets.
Tensor paired_dot(const ParamSet& a, const ParamSet& b) {
  Tensor total;
  for (const auto& [name, t] : a) {
    Tensor term = dot(t, b.at(name));
    total = total.defined() ? add(total, term) : term;
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

}  // namespace

InnerStep inner_step(const BilevelObjective& objective, const ParamSet& theta, const ParamSet& phi,
                     double alpha, double clip_norm) {
  require_leaves(theta, "theta");
  require_leaves(phi, "phi");
  InnerStep step;
  Tensor loss = objective.source_loss(theta, phi);
  step.source_loss = finite_or_throw(loss, "source");
  step.source_grad = grad(loss, theta, /*create_graph=*/true);
  step.clip_factor = clip_factor(global_norm(step.source_grad), clip_norm);
  const double lr = alpha * step.clip_factor;
  for (const auto& [name, p] : theta) {
    step.theta_prime.emplace(name, sub(p, scale(step.source_grad.at(name), lr)));
  }
  return step;
}

MetaGradient meta_gradient(const BilevelObjective& objective, const ParamSet& theta,
                           const ParamSet& phi, double alpha, MetaGradMode mode,
                           double clip_norm, double fd_scale) {
  GradModeGuard record(true);
  const ParamSet theta_leaves = as_leaves(theta);
  const ParamSet phi_leaves = as_leaves(phi);
  InnerStep inner = inner_step(objective, theta_leaves, phi_leaves, alpha, clip_norm);

  MetaGradient out;
  out.source_loss = inner.source_loss;
  out.theta_next = detach(inner.theta_prime);

  if (mode == MetaGradMode::unrolled) {
    Tensor target = objective.target_loss(inner.theta_prime);
    out.target_loss = finite_or_throw(target, "target");
    out.grad = detach(grad(target, phi_leaves));
    return out;
  }

  // v = grad_theta L_t evaluated at theta', held constant.
  const ParamSet lookahead = as_leaves(out.theta_next);
  Tensor target = objective.target_loss(lookahead);
  out.target_loss = finite_or_throw(target, "target");
  const ParamSet v = detach(grad(target, lookahead));
  const double lr = alpha * inner.clip_factor;

  if (mode == MetaGradMode::analytic_expansion) {
    Tensor contraction = paired_dot(inner.source_grad, v);
    out.grad = detach(scaled(grad(contraction, phi_leaves), -lr));
    return out;
  }

  // fd_hvp: mixed second derivative along v by central differences.
  const double v_norm = global_norm(v);
  if (v_norm == 0.0) {
    out.grad = zeros_like(phi);
    return out;
  }
  const double eps = fd_scale / v_norm;
  auto phi_grad_at = [&](double sign) {
    ParamSet shifted;
    {
      NoGradGuard no_grad;
      shifted = as_leaves(axpy(theta, sign * eps, v));
    }
    const ParamSet phi_fresh = as_leaves(phi);
    Tensor loss = objective.source_loss(shifted, phi_fresh);
    finite_or_throw(loss, "source");
    return grad(loss, phi_fresh);
  };
  const ParamSet plus = phi_grad_at(+1.0);
  const ParamSet minus = phi_grad_at(-1.0);
  NoGradGuard no_grad;
  ParamSet g;
  for (const auto& [name, p] : plus) {
    g.emplace(name, scale(sub(p, minus.at(name)), -lr / (2.0 * eps)));
  }
  out.grad = std::move(g);
  return out;
}

MetaUpdate metaxl_update(const BilevelObjective& objective, const ParamSet& theta,
                         const ParamSet& phi, double alpha, double beta, MetaGradMode mode,
                         double clip_norm, double fd_scale) {
  MetaGradient mg = meta_gradient(objective, theta, phi, alpha, mode, clip_norm, fd_scale);
  NoGradGuard no_grad;
  const double c = clip_factor(global_norm(mg.grad), clip_norm);
  MetaUpdate up;
  up.theta = std::move(mg.theta_next);
  up.phi = detach(axpy(phi, -beta * c, mg.grad));
  up.source_loss = mg.source_loss;
  up.target_loss = mg.target_loss;
  return up;
}

BilevelObjective encoder_objective(const EncoderConfig& encoder, const Batch& source,
                                   const Batch& target, std::size_t placement, bool rtn_residual) {
  if (source.role != Role::source) throw ContractError("encoder_objective: first batch must be a source batch");
  if (target.role != Role::target) throw ContractError("encoder_objective: second batch must be a target batch");
  BilevelObjective obj;
  obj.source_loss = [encoder, source, placement, rtn_residual](const ParamSet& theta,
                                                                const ParamSet& phi) {
    auto out = forward(encoder, theta, source, make_rtn_hook(phi, placement, rtn_residual));
    return task_loss(out.logits, source);
  };
  // Target batches always run through the plain base model.
  obj.target_loss = [encoder, target](const ParamSet& theta) {
    return task_loss(forward(encoder, theta, target).logits, target);
  };
  return obj;
}

MetaGradient meta_gradient(const EncoderConfig& encoder, const EncoderParams& theta,
                           const RTNParams& phi, const Batch& source, const Batch& target,
                           double alpha, MetaGradMode mode, std::size_t placement,
                           double clip_norm, bool rtn_residual, double fd_scale) {
  return meta_gradient(encoder_objective(encoder, source, target, placement, rtn_residual), theta,
                       phi, alpha, mode, clip_norm, fd_scale);
}

void metaxl_step(const EncoderConfig& encoder, TrainState& state, const Batch& source,
                 const Batch& target, const TrainConfig& config) {
  if (config.method != Method::metaxl) throw ContractError("metaxl_step: method must be metaxl");
  const BilevelObjective obj =
      encoder_objective(encoder, source, target, config.placement, config.rtn_residual);
  MetaUpdate up = metaxl_update(obj, state.theta, state.phi, config.alpha, config.beta,
                                config.meta_grad_mode, config.clip_norm, config.fd_scale);
  state.theta = std::move(up.theta);
  state.phi = std::move(up.phi);
  state.history.push_back({up.source_loss, up.target_loss});
  ++state.step;
}

double sgd_step(ParamSet& params, const Tensor& loss, double lr, double clip_norm) {
  const double value = finite_or_throw(loss, "training");
  ParamSet g = grad(loss, params);
  NoGradGuard no_grad;
  const double c = clip_factor(global_norm(g), clip_norm);
  params = detach(axpy(params, -lr * c, g));
  return value;
}

}  // namespace metaxl
