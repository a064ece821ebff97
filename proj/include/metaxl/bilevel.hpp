#pragma once

// One-step-lookahead bi-level optimization of a transformation network phi
// against base parameters theta:
//
//   theta' = theta - alpha * grad_theta L_s(theta, phi)
//   phi   <- phi - beta * grad_phi L_t(theta'(phi))
//
// The outer gradient is available in three forms: differentiate L_t through
// the recorded inner step (unrolled), contract the recorded inner gradient
// with v = grad_theta L_t(theta') and differentiate that scalar
// (analytic_expansion), or a central difference of grad_phi L_s along v
// (fd_hvp).

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "metaxl/autograd.hpp"
#include "metaxl/encoder.hpp"
#include "metaxl/rng.hpp"
#include "metaxl/rtn.hpp"

namespace metaxl {

enum class Method { target_only, jt, jt_rtn, metaxl };
enum class MetaGradMode { unrolled, analytic_expansion, fd_hvp };
enum class JtSchedule { concat, alternating };

std::string_view to_string(Method m);
std::string_view to_string(MetaGradMode m);
std::string_view to_string(JtSchedule s);
Method parse_method(std::string_view text);
MetaGradMode parse_meta_grad_mode(std::string_view text);
JtSchedule parse_jt_schedule(std::string_view text);

bool uses_rtn(Method m);
bool uses_source(Method m);

struct TrainConfig {
  double alpha = 0.05;
  double beta = 0.05;
  std::size_t placement = 2;
  std::size_t bottleneck_r = 16;
  std::size_t steps = 400;
  std::size_t batch_source = 16;
  std::size_t batch_target = 16;
  std::uint64_t seed = 0;
  Method method = Method::metaxl;
  MetaGradMode meta_grad_mode = MetaGradMode::unrolled;
  // Global-norm clip applied to both updates; 0 disables.
  double clip_norm = 5.0;
  double fd_scale = 0.01;
  bool rtn_residual = false;
  bool rtn_zero_w2 = false;
  // Line-4 theta update from a second, freshly drawn source batch instead
  // of reusing the lookahead's inner gradient.
  bool fresh_inner_batch = false;
  // After each meta step, also take a plain SGD step on theta with the
  // step's target batch (metaxl and jt_rtn). See train().
  bool target_theta_update = true;
  JtSchedule jt_schedule = JtSchedule::concat;
  std::size_t eval_every = 50;
  std::size_t eval_batch = 64;

  void validate(const EncoderConfig& encoder) const;
};

// Documented large-model hyperparameters (base-size multilingual encoder).
// Not runnable at desk scale; kept as a named preset.
struct LargeModelPreset {
  TrainConfig train;
  std::vector<double> beta_grid;
  std::size_t epochs = 20;
  std::size_t max_len = 0;
  std::size_t d_model = 768;
};
LargeModelPreset large_model_preset(TaskKind task);

// Losses as functions of the parameter sets. source_loss sees phi; the
// target loss is evaluated on the plain model.
struct BilevelObjective {
  std::function<Tensor(const ParamSet& theta, const ParamSet& phi)> source_loss;
  std::function<Tensor(const ParamSet& theta)> target_loss;
};

struct InnerStep {
  ParamSet theta_prime;  // recorded nodes, differentiable w.r.t. phi
  ParamSet source_grad;  // recorded inner gradient
  double source_loss = 0.0;
  double clip_factor = 1.0;
};

// theta and phi must be differentiable leaves (see as_leaves). theta itself
// is not modified. The clip factor is computed from the gradient's norm and
// then held constant.
InnerStep inner_step(const BilevelObjective& objective, const ParamSet& theta, const ParamSet& phi,
                     double alpha, double clip_norm = 0.0);

struct MetaGradient {
  ParamSet grad;        // d L_t(theta') / d phi
  ParamSet theta_next;  // detached lookahead theta', i.e. the line-4 update
  double source_loss = 0.0;
  double target_loss = 0.0;  // L_t at theta'
};

// fd_hvp shifts theta by +-eps*v with eps = fd_scale / ||v||.
MetaGradient meta_gradient(const BilevelObjective& objective, const ParamSet& theta,
                           const ParamSet& phi, double alpha, MetaGradMode mode,
                           double clip_norm = 0.0, double fd_scale = 0.01);

struct MetaUpdate {
  ParamSet theta;
  ParamSet phi;
  double source_loss = 0.0;
  double target_loss = 0.0;
};

// Both updates from one shared inner forward/backward. Throws NumericError
// on non-finite losses; inputs are never modified.
MetaUpdate metaxl_update(const BilevelObjective& objective, const ParamSet& theta,
                         const ParamSet& phi, double alpha, double beta, MetaGradMode mode,
                         double clip_norm = 0.0, double fd_scale = 0.01);

// ---------------------------------------------------------------------------
// Encoder-bound forms.
// ---------------------------------------------------------------------------

BilevelObjective encoder_objective(const EncoderConfig& encoder, const Batch& source,
                                   const Batch& target, std::size_t placement,
                                   bool rtn_residual = false);

struct StepLoss {
  double source_loss = 0.0;  // NaN when the step had no source batch
  double target_loss = 0.0;  // NaN when the step had no target batch
};

struct TrainState {
  EncoderParams theta;
  RTNParams phi;
  std::size_t step = 0;
  std::vector<StepLoss> history;
  Rng rng{0};
};

MetaGradient meta_gradient(const EncoderConfig& encoder, const EncoderParams& theta,
                           const RTNParams& phi, const Batch& source, const Batch& target,
                           double alpha, MetaGradMode mode, std::size_t placement,
                           double clip_norm = 0.0, bool rtn_residual = false,
                           double fd_scale = 0.01);

// One MetaXL step. On any numeric failure the state is left untouched and
// NumericError propagates.
void metaxl_step(const EncoderConfig& encoder, TrainState& state, const Batch& source,
                 const Batch& target, const TrainConfig& config);

// theta <- theta - alpha * clip(grad L(theta)); returns the loss value.
double sgd_step(ParamSet& params, const Tensor& loss, double lr, double clip_norm);

}  // namespace metaxl
