#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metaxl/tensor.hpp"

namespace metaxl {

// Named parameters keyed by dot-separated path. std::map keeps iteration
// lexicographic, which every serializer and optimizer relies on.
using ParamSet = std::map<std::string, Tensor>;

// Gradient of a scalar `loss` with respect to every tensor in `params`.
// Parameters that do not reach the loss get exact zeros. With create_graph
// the returned gradients are recorded nodes and can be differentiated again.
ParamSet grad(const Tensor& loss, const ParamSet& params, bool create_graph = false);

// One recorded primitive application, in topological order.
struct RecordEntry {
  OpKind op;
  std::vector<std::uint64_t> inputs;
  std::uint64_t output;
};

// The recorded computation that produced `root`, inputs before outputs.
std::vector<RecordEntry> computation_record(const Tensor& root);

// ParamSet helpers. All return new tensors; nothing is mutated in place.
ParamSet detach(const ParamSet& params);
ParamSet as_leaves(const ParamSet& params);
ParamSet zeros_like(const ParamSet& params);
ParamSet axpy(const ParamSet& x, double a, const ParamSet& y);  // x + a*y
double global_norm(const ParamSet& params);
ParamSet scaled(const ParamSet& params, double factor);
std::size_t param_count(const ParamSet& params);
bool same_shapes(const ParamSet& a, const ParamSet& b);
bool bit_equal(const ParamSet& a, const ParamSet& b);

}  // namespace metaxl
