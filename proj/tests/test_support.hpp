#pragma once

// Shared test helpers: random tensors and a central finite-difference
// gradient oracle that never touches the backward rules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "metaxl/autograd.hpp"
#include "metaxl/encoder.hpp"
#include "metaxl/rng.hpp"
#include "metaxl/tensor.hpp"

namespace metaxl::testing {

inline Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(shape, std::move(v));
}

// Relative error with a small floor so exact zeros on both sides compare
// as equal instead of 0/0.
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using ScalarFn = std::function<Tensor(const ParamSet&)>;

// Central differences of f with respect to every element of every parameter.
inline ParamSet numeric_grad(const ScalarFn& f, const ParamSet& params, double eps = 1e-5) {
  NoGradGuard no_grad;
  ParamSet out;
  for (const auto& [name, p] : params) {
    std::vector<double> g(p.numel());
    std::vector<double> base = p.to_vector();
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto eval_at = [&](double x) {
        std::vector<double> moved = base;
        moved[i] = x;
        ParamSet shifted = params;
        shifted[name] = Tensor::from(p.shape(), std::move(moved));
        return f(shifted).item();
      };
      g[i] = (eval_at(base[i] + eps) - eval_at(base[i] - eps)) / (2.0 * eps);
    }
    out.emplace(name, Tensor::from(p.shape(), std::move(g)));
  }
  return out;
}

struct GradCheck {
  double max_rel = 0.0;
  double max_abs = 0.0;
};

inline GradCheck compare(const ParamSet& analytic, const ParamSet& numeric, double floor = 1e-8) {
  GradCheck r;
  for (const auto& [name, a] : analytic) {
    const auto da = a.data();
    const auto dn = numeric.at(name).data();
    for (std::size_t i = 0; i < da.size(); ++i) {
      r.max_rel = std::max(r.max_rel, rel_err(da[i], dn[i], floor));
      r.max_abs = std::max(r.max_abs, std::abs(da[i] - dn[i]));
    }
  }
  return r;
}

inline GradCheck check_gradients(const ScalarFn& f, const ParamSet& params, double eps = 1e-5,
                                 double floor = 1e-8) {
  ParamSet leaves = as_leaves(params);
  ParamSet analytic = grad(f(leaves), leaves);
  return compare(analytic, numeric_grad(f, params, eps), floor);
}

// Random batch for `cfg`: CLS first, random byte tokens, and a random amount
// of trailing padding on every row except the first.
inline Batch random_batch(const EncoderConfig& cfg, Rng& rng, std::size_t batch, std::size_t seq,
                          Role role = Role::target) {
  Batch b;
  b.batch_size = batch;
  b.seq_len = seq;
  b.role = role;
  b.task = cfg.task_kind;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t len = i == 0 ? seq : 2 + rng.below(seq - 1);
    for (std::size_t j = 0; j < seq; ++j) {
      const bool real = j < len;
      int tok = j == 0 ? special::cls : 33 + static_cast<int>(rng.below(90));
      if (!real) tok = special::pad;
      b.token_ids.push_back(tok);
      b.attention_mask.push_back(real ? 1 : 0);
      if (cfg.task_kind == TaskKind::token_labeling) {
        b.labels.push_back(real && j > 0 ? static_cast<int>(rng.below(cfg.n_labels)) : ignore_label);
      }
    }
    if (cfg.task_kind == TaskKind::sequence_classification) {
      b.labels.push_back(static_cast<int>(rng.below(cfg.n_labels)));
    }
  }
  return b;
}

inline EncoderConfig tiny_config(TaskKind task = TaskKind::token_labeling) {
  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ffn = 12;
  cfg.max_len = 8;
  cfg.task_kind = task;
  cfg.n_labels = 3;
  return cfg;
}

}  // namespace metaxl::testing
