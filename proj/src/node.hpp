#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "metaxl/tensor.hpp"

namespace metaxl::detail {

// Returns one gradient per input (undefined where an input gets none).
using BackwardFn = std::function<std::vector<Tensor>(
    const std::vector<Tensor>& inputs, const Tensor& out, const Tensor& grad_out)>;

struct Node : std::enable_shared_from_this<Node> {
  Shape shape;
  std::shared_ptr<const std::vector<double>> data;
  OpKind op = OpKind::leaf;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

std::uint64_t next_node_id();

}  // namespace metaxl::detail
