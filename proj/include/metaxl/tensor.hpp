#pragma once

// Dense f64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto an immutable buffer plus, when it was
// produced by a recorded operation, the node that knows how to push a
// gradient back to its inputs. Backward rules are written in terms of the
// same differentiable operations, so differentiating a gradient (with
// create_graph) records a second graph on top of the first.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metaxl/errors.hpp"

namespace metaxl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  add,
  mul,
  relu,
  softmax,
  layer_norm,
  embedding_lookup,
  embedding_scatter,
  cross_entropy,
  mean,
  scale,
  transpose,
  reshape,
  concat,
  slice,
  sum_to,
  broadcast_to,
  sum_last,
  expand_last,
  rsqrt,
};

std::string_view op_name(OpKind kind);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  // Takes ownership of `data`; data.size() must equal the shape's element count.
  static Tensor from(const Shape& shape, std::vector<double> data);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(int axis) const;
  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  // Returns a fresh leaf sharing this tensor's buffer.
  Tensor detach() const;
  // A leaf handle on the same buffer that participates in differentiation.
  Tensor as_leaf(bool requires_grad = true) const;

  OpKind op() const;
  std::uint64_t id() const;
  const detail::Node* node() const noexcept { return node_.get(); }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Gradient recording is thread-local and on by default.
bool grad_mode_enabled();

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

// ---------------------------------------------------------------------------
// Primitive operations. Broadcasting is trailing-axis only: in add and mul
// the shorter operand's shape must be a suffix of the longer one's.
// ---------------------------------------------------------------------------

// (..., m, k) x (k, n), or batched (b..., m, k) x (b..., k, n).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor softmax(const Tensor& a);
// Normalizes the last axis to zero mean and unit variance (no gain/bias).
Tensor layer_norm(const Tensor& a, double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids, const Shape& ids_shape);
Tensor embedding_scatter(const Tensor& grad, std::span<const int> ids, std::size_t vocab);
// Mean negative log-likelihood over rows of (rows x classes) logits.
// Rows whose label is negative are ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor mean(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);

Tensor sum_to(const Tensor& a, const Shape& shape);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
// (..., n) -> (..., 1)
Tensor sum_last(const Tensor& a);
// (..., 1) -> (..., n)
Tensor expand_last(const Tensor& a, std::size_t n);
Tensor rsqrt(const Tensor& a);

// Composites.
Tensor sub(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean_last(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

bool all_finite(std::span<const double> values);
double l2_norm(const Tensor& a);

}  // namespace metaxl
