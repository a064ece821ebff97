#include "metaxl/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metaxl/rng.hpp"

namespace metaxl {

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::token_labeling ? "token_labeling" : "sequence_classification";
}

std::string_view to_string(Role role) { return role == Role::source ? "source" : "target"; }

TaskKind parse_task_kind(std::string_view text) {
  if (text == "token_labeling") return TaskKind::token_labeling;
  if (text == "sequence_classification") return TaskKind::sequence_classification;
  throw ContractError("unknown task kind '" + std::string(text) + "'");
}

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ContractError("encoder: d_model (" + std::to_string(d_model) +
                        ") must be a positive multiple of n_heads (" + std::to_string(n_heads) + ")");
  }
  if (max_len < 2) throw ContractError("encoder: max_len must be at least 2");
  if (n_labels < 2) throw ContractError("encoder: n_labels must be at least 2");
  if (vocab_size <= static_cast<std::size_t>(special::sep)) {
    throw ContractError("encoder: vocab_size must cover the 256 byte values and special tokens");
  }
  if (d_ffn == 0) throw ContractError("encoder: d_ffn must be positive");
}

void Batch::validate(const EncoderConfig& config) const {
  const std::size_t cells = batch_size * seq_len;
  if (batch_size == 0 || seq_len == 0) throw ContractError("batch: empty");
  if (token_ids.size() != cells || attention_mask.size() != cells) {
    throw ShapeError("batch: token/mask size does not match " + std::to_string(batch_size) + "x" +
                     std::to_string(seq_len));
  }
  if (seq_len > config.max_len) {
    throw ContractError("batch: seq_len " + std::to_string(seq_len) + " exceeds max_len " +
                        std::to_string(config.max_len));
  }
  const std::size_t want = task == TaskKind::token_labeling ? cells : batch_size;
  if (labels.size() != want) throw ShapeError("batch: label count does not match task");
  if (task != config.task_kind) throw ContractError("batch: task kind differs from encoder head");
  if (task == TaskKind::sequence_classification) {
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (token_ids[b * seq_len] != special::cls) {
        throw ContractError("batch: sequence classification inputs must begin with CLS");
      }
    }
  }
}

std::vector<int> tokenize(std::string_view text, std::size_t max_len) {
  if (max_len < 2) throw ContractError("tokenize: max_len must be at least 2");
  const std::size_t keep = std::min(text.size(), max_len - 2);
  std::vector<int> ids;
  ids.reserve(keep + 2);
  ids.push_back(special::cls);
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(static_cast<unsigned char>(text[i]));
  ids.push_back(special::sep);
  return ids;
}

namespace {

std::string layer_key(std::size_t layer, std::string_view leaf) {
  return "layer." + std::to_string(layer) + "." + std::string(leaf);
}

Tensor uniform_tensor(Rng& rng, const Shape& shape, double bound) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(shape, std::move(v));
}

const Tensor& param(const EncoderParams& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw ContractError("encoder: missing parameter '" + key + "'");
  return it->second;
}

// gain * x + bias over the last axis.
Tensor affine(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return add(mul(x, gain), bias);
}

Tensor attention(const EncoderConfig& cfg, const EncoderParams& p, std::size_t layer,
                 const Tensor& x, const Tensor& key_mask, ForwardTrace* trace) {
  const std::size_t heads = cfg.n_heads;
  const std::size_t dh = cfg.d_model / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = matmul(x, param(p, layer_key(layer, "attn.q")));
  Tensor k = matmul(x, param(p, layer_key(layer, "attn.k")));
  Tensor v = matmul(x, param(p, layer_key(layer, "attn.v")));
  std::vector<Tensor> contexts;
  contexts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice(q, -1, h * dh, (h + 1) * dh);
    Tensor kh = heads == 1 ? k : slice(k, -1, h * dh, (h + 1) * dh);
    Tensor vh = heads == 1 ? v : slice(v, -1, h * dh, (h + 1) * dh);
    Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt), key_mask);
    Tensor probs = softmax(scores);
    if (trace) trace->attention.push_back(probs.detach());
    contexts.push_back(matmul(probs, vh));
  }
  Tensor ctx = heads == 1 ? contexts.front() : concat(contexts, -1);
  return matmul(ctx, param(p, layer_key(layer, "attn.o")));
}

Tensor normalize(const Tensor& x, const Tensor& gain, const Tensor& bias, ForwardTrace* trace) {
  Tensor n = layer_norm(x);
  if (trace) trace->normalized.push_back(n.detach());
  return affine(n, gain, bias);
}

}  // namespace

EncoderParams init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.d_model;
  const double w_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double w_ffn = 1.0 / std::sqrt(static_cast<double>(cfg.d_ffn));
  EncoderParams p;
  p["embed.token"] = uniform_tensor(rng, {cfg.vocab_size, d}, 1.0);
  p["embed.position"] = uniform_tensor(rng, {cfg.max_len, d}, 0.5);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (const char* name : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
      p[layer_key(l, name)] = uniform_tensor(rng, {d, d}, w_d);
    }
    p[layer_key(l, "ffn.w1")] = uniform_tensor(rng, {d, cfg.d_ffn}, w_d);
    p[layer_key(l, "ffn.b1")] = Tensor::zeros({cfg.d_ffn});
    p[layer_key(l, "ffn.w2")] = uniform_tensor(rng, {cfg.d_ffn, d}, w_ffn);
    p[layer_key(l, "ffn.b2")] = Tensor::zeros({d});
    p[layer_key(l, "ln1.gain")] = Tensor::full({d}, 1.0);
    p[layer_key(l, "ln1.bias")] = Tensor::zeros({d});
    p[layer_key(l, "ln2.gain")] = Tensor::full({d}, 1.0);
    p[layer_key(l, "ln2.bias")] = Tensor::zeros({d});
  }
  p["head.weight"] = uniform_tensor(rng, {d, cfg.n_labels}, w_d);
  p["head.bias"] = Tensor::zeros({cfg.n_labels});
  return p;
}

void check_encoder_params(const EncoderConfig& cfg, const EncoderParams& params) {
  const EncoderParams reference = [&] {
    NoGradGuard no_grad;
    return init_encoder(cfg, 0);
  }();
  if (!same_shapes(reference, params)) {
    throw ContractError("encoder parameters do not match the configuration");
  }
}

ForwardResult forward(const EncoderConfig& cfg, const EncoderParams& p, const Batch& batch,
                      const std::optional<RtnHook>& hook, ForwardTrace* trace) {
  batch.validate(cfg);
  if (hook && hook->layer > cfg.n_layers) {
    throw ContractError("forward: RTN placement " + std::to_string(hook->layer) +
                        " outside [0, " + std::to_string(cfg.n_layers) + "]");
  }
  const std::size_t B = batch.batch_size;
  const std::size_t S = batch.seq_len;

  std::vector<double> mask(B * S * S);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S; ++j) {
        mask[(b * S + i) * S + j] = batch.attention_mask[b * S + j] ? 0.0 : -1e9;
      }
    }
  }
  const Tensor key_mask = Tensor::from({B, S, S}, std::move(mask));

  ForwardResult result;
  auto emit = [&](Tensor h, std::size_t index) {
    if (hook && hook->layer == index) h = hook->transform(h);
    result.hidden.layers.push_back(h);
    return h;
  };

  Tensor h = add(embedding_lookup(param(p, "embed.token"), batch.token_ids, {B, S}),
                 slice(param(p, "embed.position"), 0, 0, S));
  h = emit(h, 0);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    Tensor a = attention(cfg, p, l, h, key_mask, trace);
    Tensor h1 = normalize(add(h, a), param(p, layer_key(l, "ln1.gain")),
                          param(p, layer_key(l, "ln1.bias")), trace);
    Tensor f = add(matmul(relu(add(matmul(h1, param(p, layer_key(l, "ffn.w1"))),
                                   param(p, layer_key(l, "ffn.b1")))),
                          param(p, layer_key(l, "ffn.w2"))),
                   param(p, layer_key(l, "ffn.b2")));
    h = normalize(add(h1, f), param(p, layer_key(l, "ln2.gain")),
                  param(p, layer_key(l, "ln2.bias")), trace);
    h = emit(h, l + 1);
  }

  if (cfg.task_kind == TaskKind::token_labeling) {
    result.logits = add(matmul(h, param(p, "head.weight")), param(p, "head.bias"));
  } else {
    Tensor cls = reshape(slice(h, 1, 0, 1), {B, cfg.d_model});
    result.logits = add(matmul(cls, param(p, "head.weight")), param(p, "head.bias"));
  }
  return result;
}

Tensor task_loss(const Tensor& logits, const Batch& batch) {
  if (batch.task == TaskKind::token_labeling) {
    if (logits.ndim() != 3) {
      throw ShapeError("task_loss: token logits must be (batch, seq, labels), got " +
                       shape_str(logits.shape()));
    }
    std::vector<int> labels = batch.labels;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!batch.attention_mask[i]) labels[i] = ignore_label;
    }
    const std::size_t rows = batch.batch_size * batch.seq_len;
    return cross_entropy(reshape(logits, {rows, logits.shape().back()}), labels);
  }
  return cross_entropy(logits, batch.labels);
}

std::vector<int> predict(const Tensor& logits, const Batch& batch) {
  const std::size_t classes = logits.shape().back();
  const auto z = logits.data();
  const std::size_t rows = z.size() / classes;
  std::vector<int> out(rows, ignore_label);
  for (std::size_t r = 0; r < rows; ++r) {
    if (batch.task == TaskKind::token_labeling &&
        (batch.labels[r] == ignore_label || !batch.attention_mask[r])) {
      continue;
    }
    const double* row = z.data() + r * classes;
    out[r] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

}  // namespace metaxl
