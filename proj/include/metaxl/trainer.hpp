#pragma once

// Training loops for every method, evaluation, and hidden-state extraction.

#include <optional>
#include <vector>

#include "metaxl/analysis.hpp"
#include "metaxl/bilevel.hpp"
#include "metaxl/data.hpp"
#include "metaxl/metrics.hpp"

namespace metaxl {

struct EvalReport {
  double f1 = 0.0;
  double loss = 0.0;          // mean cross-entropy over labeled positions
  std::optional<Prf> spans;   // token labeling only
  std::size_t n_examples = 0;
};

// Span F1 for token labeling; binary F1 for two-class and macro F1 for
// multi-class sequence classification. Words cut off by max_len are
// scored as predicted O. Never sees phi.
EvalReport evaluate(const EncoderConfig& encoder, const EncoderParams& theta, const Dataset& data,
                    std::size_t batch_size = 64);

struct EvalPoint {
  std::size_t step = 0;
  double dev_f1 = 0.0;
  double dev_loss = 0.0;
};

struct TrainReport {
  std::vector<EvalPoint> evals;
  std::size_t best_step = 0;
  double best_dev_f1 = -1.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  EncoderParams theta;  // selected by best dev F1 (final theta without dev data)
  TrainState state;     // state after the last step
  TrainReport report;
};

// Runs config.steps steps of config.method.
//   target_only   SGD on target batches.
//   jt            concat: batches of batch_target from source ++ target;
//                 alternating: a source step then a target step.
//   jt_rtn        SGD on (theta, phi) jointly with source batches routed
//                 through the RTN, then a target step on theta.
//   metaxl        metaxl_step, then (target_theta_update) a target step.
// Dev evaluation runs every eval_every steps and after the last one. A step
// with a non-finite loss restores the pre-step state and throws
// NumericError naming the step.
TrainResult train(const EncoderConfig& encoder, const TrainConfig& config, const Dataset& source,
                  const Dataset& target_train, const Dataset* dev = nullptr);

// Initial state: theta from init_encoder(seed), phi from an independent
// stream when the method uses the RTN.
TrainState initial_state(const EncoderConfig& encoder, const TrainConfig& config);

// Hidden states at `layer` (default: the final layer). Token level keeps
// each word's first-byte position; sequence level keeps CLS.
std::vector<std::vector<double>> extract_representations(const EncoderConfig& encoder,
                                                         const EncoderParams& theta,
                                                         const Dataset& data, RepLevel level,
                                                         std::optional<std::size_t> layer = {},
                                                         std::size_t batch_size = 64);

}  // namespace metaxl
