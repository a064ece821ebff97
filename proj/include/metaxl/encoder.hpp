#pragma once

// A small post-layer-norm transformer encoder over byte tokens, with a
// token-labeling head or a CLS-pooled sequence-classification head.

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "metaxl/autograd.hpp"
#include "metaxl/tensor.hpp"

namespace metaxl {

enum class TaskKind { token_labeling, sequence_classification };
enum class Role { source, target };

std::string_view to_string(TaskKind kind);
std::string_view to_string(Role role);
TaskKind parse_task_kind(std::string_view text);

namespace special {
inline constexpr int pad = 256;
inline constexpr int cls = 257;
inline constexpr int sep = 258;
inline constexpr int reserved = 259;
}  // namespace special

// Label value excluded from the loss (PAD, CLS/SEP and word continuations).
inline constexpr int ignore_label = -1;

struct EncoderConfig {
  std::size_t vocab_size = 260;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_ffn = 64;
  std::size_t max_len = 32;
  TaskKind task_kind = TaskKind::token_labeling;
  std::size_t n_labels = 5;

  void validate() const;
};

// Base-model parameters keyed by path ("layer.0.attn.q", "head.weight", ...).
using EncoderParams = ParamSet;

// Row-major (batch x seq_len) token matrix plus labels. For token labeling
// `labels` is (batch x seq_len) with ignore_label on unlabeled positions;
// for sequence classification it has one entry per sequence.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<int> token_ids;
  std::vector<int> attention_mask;
  std::vector<int> labels;
  Role role = Role::target;
  TaskKind task = TaskKind::token_labeling;

  void validate(const EncoderConfig& config) const;
};

// index 0 = embedding output, index k = output of layer k.
struct HiddenStates {
  std::vector<Tensor> layers;
};

struct RtnHook {
  std::size_t layer = 0;
  std::function<Tensor(const Tensor&)> transform;
};

// Optional diagnostics collected during a forward pass.
struct ForwardTrace {
  std::vector<Tensor> attention;   // (batch, seq, seq) per layer and head
  std::vector<Tensor> normalized;  // layer-norm outputs before gain and bias
};

struct ForwardResult {
  Tensor logits;
  HiddenStates hidden;
};

// [CLS] + bytes (truncated to max_len - 2) + [SEP].
std::vector<int> tokenize(std::string_view text, std::size_t max_len);

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);
void check_encoder_params(const EncoderConfig& config, const EncoderParams& params);

ForwardResult forward(const EncoderConfig& config, const EncoderParams& params, const Batch& batch,
                      const std::optional<RtnHook>& hook = std::nullopt,
                      ForwardTrace* trace = nullptr);

// Mean cross-entropy over labeled positions (or sequences).
Tensor task_loss(const Tensor& logits, const Batch& batch);

// Arg-max label per labeled position (token labeling) or per sequence.
// Unlabeled positions get ignore_label.
std::vector<int> predict(const Tensor& logits, const Batch& batch);

}  // namespace metaxl
