#include "metaxl/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include "node.hpp"

namespace metaxl {

namespace {

// Every node reachable from root through recorded edges, newest first.
// Node ids grow monotonically, so descending id is a reverse topological order.
std::vector<const detail::Node*> reverse_topological(const Tensor& root) {
  std::vector<const detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<const detail::Node*> stack{root.node()};
  seen.insert(root.node());
  while (!stack.empty()) {
    const detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const Tensor& in : n->inputs) {
      if (in.requires_grad() && seen.insert(in.node()).second) stack.push_back(in.node());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });
  return order;
}

}  // namespace

ParamSet grad(const Tensor& loss, const ParamSet& params, bool create_graph) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("grad: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  ParamSet result;
  if (!loss.requires_grad()) {
    for (const auto& [name, p] : params) result.emplace(name, Tensor::zeros(p.shape()));
    return result;
  }

  GradModeGuard mode(create_graph);
  std::unordered_map<const detail::Node*, Tensor> grads;
  grads.emplace(loss.node(), Tensor::full(loss.shape(), 1.0));

  std::unordered_set<const detail::Node*> wanted;
  for (const auto& [name, p] : params) wanted.insert(p.node());

  for (const detail::Node* n : reverse_topological(loss)) {
    auto it = grads.find(n);
    if (it == grads.end() || !n->backward) continue;
    const Tensor g = it->second;
    // Interior gradients are only needed until their node is processed.
    if (!wanted.contains(n)) grads.erase(it);
    // Owning handle: a create_graph pass may capture the output in new nodes
    // that outlive the forward graph.
    const Tensor out(std::const_pointer_cast<detail::Node>(n->shared_from_this()));
    std::vector<Tensor> in_grads = n->backward(n->inputs, out, g);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      const Tensor& in = n->inputs[i];
      if (!in.requires_grad() || i >= in_grads.size() || !in_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(in.node(), in_grads[i]);
      if (!inserted) slot->second = add(slot->second, in_grads[i]);
    }
  }

  for (const auto& [name, p] : params) {
    auto it = grads.find(p.node());
    if (it != grads.end()) {
      result.emplace(name, it->second);
    } else {
      result.emplace(name, Tensor::zeros(p.shape()));
    }
  }
  return result;
}

std::vector<RecordEntry> computation_record(const Tensor& root) {
  std::vector<RecordEntry> entries;
  if (!root.requires_grad()) return entries;
  auto order = reverse_topological(root);
  std::reverse(order.begin(), order.end());
  for (const detail::Node* n : order) {
    if (n->inputs.empty()) continue;
    RecordEntry e{n->op, {}, n->id};
    for (const Tensor& in : n->inputs) e.inputs.push_back(in.id());
    entries.push_back(std::move(e));
  }
  return entries;
}

ParamSet detach(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, p] : params) out.emplace(name, p.detach());
  return out;
}

ParamSet as_leaves(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, p] : params) out.emplace(name, p.as_leaf(true));
  return out;
}

ParamSet zeros_like(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, p] : params) out.emplace(name, Tensor::zeros(p.shape()));
  return out;
}

ParamSet axpy(const ParamSet& x, double a, const ParamSet& y) {
  ParamSet out;
  for (const auto& [name, p] : x) {
    auto it = y.find(name);
    if (it == y.end()) throw ContractError("axpy: missing parameter " + name);
    out.emplace(name, add(p, scale(it->second, a)));
  }
  return out;
}

double global_norm(const ParamSet& params) {
  double s = 0.0;
  for (const auto& [name, p] : params) {
    for (double v : p.data()) s += v * v;
  }
  return std::sqrt(s);
}

ParamSet scaled(const ParamSet& params, double factor) {
  ParamSet out;
  for (const auto& [name, p] : params) out.emplace(name, scale(p, factor));
  return out;
}

std::size_t param_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p.numel();
  return n;
}

bool same_shapes(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
  }
  return true;
}

bool bit_equal(const ParamSet& a, const ParamSet& b) {
  if (!same_shapes(a, b)) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    const auto da = ia->second.data();
    const auto db = ib->second.data();
    if (std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace metaxl
