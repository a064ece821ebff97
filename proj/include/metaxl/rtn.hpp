#pragma once

#include <cstdint>

#include "metaxl/autograd.hpp"
#include "metaxl/encoder.hpp"

namespace metaxl {

// Parameters of the representation transformation network, keyed
// "w1" (d x r), "b1" (r), "w2" (r x d), "b2" (d).
using RTNParams = ParamSet;

// Bottlenecked feed-forward map applied to every position:
//   g(h) = w2^T relu(w1^T h + b1) + b2
// With `residual` the result is h + g(h) (ablation only).
Tensor rtn_forward(const RTNParams& phi, const Tensor& h, bool residual = false);

// w1 ~ U(-1/sqrt(d), 1/sqrt(d)), w2 ~ U(-1/sqrt(r), 1/sqrt(r)), zero biases.
// Requires 0 < r < d. `zero_w2` starts the network at the zero map.
RTNParams rtn_init(std::size_t d, std::size_t r, std::uint64_t seed, bool zero_w2 = false);

std::size_t rtn_width(const RTNParams& phi);
std::size_t rtn_bottleneck(const RTNParams& phi);

// Hook that routes the hidden state at `layer` through the network.
RtnHook make_rtn_hook(const RTNParams& phi, std::size_t layer, bool residual = false);

}  // namespace metaxl
