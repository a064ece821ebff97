#include "metaxl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "node.hpp"

namespace metaxl {

namespace detail {

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

using detail::BackwardFn;
using detail::Node;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::relu: return "relu";
    case OpKind::softmax: return "softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::embedding_scatter: return "embedding_scatter";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::mean: return "mean";
    case OpKind::scale: return "scale";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::sum_to: return "sum_to";
    case OpKind::broadcast_to: return "broadcast_to";
    case OpKind::sum_last: return "sum_last";
    case OpKind::expand_last: return "expand_last";
    case OpKind::rsqrt: return "rsqrt";
  }
  return "unknown";
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

namespace {

thread_local bool t_grad_mode = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::make_shared<const std::vector<double>>(std::move(data));
  node->id = detail::next_node_id();
  return node;
}

Tensor make_result(OpKind op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  if (!all_finite(data)) {
    throw NumericError(std::string(op_name(op)) + " produced a non-finite value");
  }
  auto node = new_node(std::move(shape), std::move(data));
  node->op = op;
  const bool record =
      t_grad_mode && std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (record) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, std::string_view op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

std::size_t norm_axis(int axis, std::size_t ndim, std::string_view op) {
  const auto n = static_cast<int>(ndim);
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(ndim));
  }
  return static_cast<std::size_t>(a);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
}

Tensor reduce_like(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return sum_to(g, shape);
}

template <class F>
Tensor elementwise(OpKind op, const Tensor& a, const Tensor& b, F f, BackwardFn backward) {
  require_defined(a, op_name(op));
  require_defined(b, op_name(op));
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), op_name(op));
  const std::size_t n = shape_numel(out_shape);
  const auto da = a.data();
  const auto db = b.data();
  const std::size_t na = da.size();
  const std::size_t nb = db.size();
  std::vector<double> out(n);
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(da[i], db[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(da[i % na], db[i % nb]);
  }
  return make_result(op, std::move(out_shape), std::move(out), {a, b}, std::move(backward));
}

// C += A(m x k) * B(k x n)
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

bool grad_mode_enabled() { return t_grad_mode; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_mode) { t_grad_mode = enabled; }
GradModeGuard::~GradModeGuard() { t_grad_mode = previous_; }

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(new_node(shape, std::vector<double>(shape_numel(shape), value)));
}

Tensor Tensor::scalar(double value) { return Tensor(new_node({}, {value})); }

Tensor Tensor::from(const Shape& shape, std::vector<double> data) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
  if (!all_finite(data)) throw NumericError("Tensor::from: non-finite input");
  return Tensor(new_node(shape, std::move(data)));
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::numel() const { return data().size(); }

std::size_t Tensor::dim(int axis) const { return shape()[norm_axis(axis, ndim(), "dim")]; }

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return {node_->data->data(), node_->data->size()};
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return data()[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor Tensor::detach() const { return as_leaf(false); }

Tensor Tensor::as_leaf(bool requires_grad) const {
  require_defined(*this, "as_leaf");
  auto node = std::make_shared<Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->id = detail::next_node_id();
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

OpKind Tensor::op() const { return node_ ? node_->op : OpKind::leaf; }
std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  const std::size_t k = sa.back();
  const std::size_t m = sa[sa.size() - 2];

  if (sb.size() == 2) {
    if (sb[0] != k) throw mismatch();
    const std::size_t n = sb[1];
    const std::size_t rows = a.numel() / k;
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    std::vector<double> out(rows * n, 0.0);
    gemm_acc(a.data().data(), b.data().data(), out.data(), rows, k, n);
    return make_result(OpKind::matmul, std::move(out_shape), std::move(out), {a, b},
                       [rows, k, n](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                         Tensor ga, gb;
                         if (in[0].requires_grad()) ga = matmul(g, transpose(in[1]));
                         if (in[1].requires_grad()) {
                           gb = matmul(transpose(reshape(in[0], {rows, k})), reshape(g, {rows, n}));
                         }
                         return std::vector<Tensor>{ga, gb};
                       });
  }

  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()) ||
      sb[sb.size() - 2] != k) {
    throw mismatch();
  }
  const std::size_t n = sb.back();
  const std::size_t batches = a.numel() / (m * k);
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batches * m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t bi = 0; bi < batches; ++bi) {
    gemm_acc(pa + bi * m * k, pb + bi * k * n, out.data() + bi * m * n, m, k, n);
  }
  return make_result(OpKind::matmul, std::move(out_shape), std::move(out), {a, b},
                     [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                       Tensor ga, gb;
                       if (in[0].requires_grad()) ga = matmul(g, transpose(in[1]));
                       if (in[1].requires_grad()) gb = matmul(transpose(in[0]), g);
                       return std::vector<Tensor>{ga, gb};
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(OpKind::add, a, b, [](double x, double y) { return x + y; },
                     [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                       Tensor ga, gb;
                       if (in[0].requires_grad()) ga = reduce_like(g, in[0].shape());
                       if (in[1].requires_grad()) gb = reduce_like(g, in[1].shape());
                       return std::vector<Tensor>{ga, gb};
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(OpKind::mul, a, b, [](double x, double y) { return x * y; },
                     [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                       Tensor ga, gb;
                       if (in[0].requires_grad()) ga = reduce_like(mul(g, in[1]), in[0].shape());
                       if (in[1].requires_grad()) gb = reduce_like(mul(g, in[0]), in[1].shape());
                       return std::vector<Tensor>{ga, gb};
                     });
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  const auto d = a.data();
  std::vector<double> out(d.size());
  std::vector<double> mask(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    mask[i] = d[i] > 0.0 ? 1.0 : 0.0;
    out[i] = d[i] > 0.0 ? d[i] : 0.0;
  }
  Tensor mask_t = Tensor::from(a.shape(), std::move(mask));
  return make_result(OpKind::relu, a.shape(), std::move(out), {a},
                     [mask_t](const std::vector<Tensor>&, const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{mul(g, mask_t)};
                     });
}

Tensor softmax(const Tensor& a) {
  require_defined(a, "softmax");
  if (a.ndim() == 0) throw ShapeError("softmax: needs at least one axis, got " + shape_str(a.shape()));
  const std::size_t n = a.shape().back();
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t r = 0; r < d.size() / n; ++r) {
    const double* x = d.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return make_result(OpKind::softmax, a.shape(), std::move(out), {a},
                     [n](const std::vector<Tensor>&, const Tensor& y, const Tensor& g) {
                       Tensor inner = sub(g, expand_last(sum_last(mul(g, y)), n));
                       return std::vector<Tensor>{mul(y, inner)};
                     });
}

Tensor layer_norm(const Tensor& a, double eps) {
  require_defined(a, "layer_norm");
  if (a.ndim() == 0) throw ShapeError("layer_norm: needs at least one axis");
  const std::size_t n = a.shape().back();
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t r = 0; r < d.size() / n; ++r) {
    const double* x = d.data() + r * n;
    double* y = out.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) y[j] = (x[j] - mu) * inv;
  }
  // The backward rule rebuilds 1/sigma from the input through recorded ops
  // so that second derivatives flow through the normalizer as well.
  return make_result(
      OpKind::layer_norm, a.shape(), std::move(out), {a},
      [n, eps](const std::vector<Tensor>& in, const Tensor& y, const Tensor& g) {
        const Tensor& x = in[0];
        Tensor centered = sub(x, expand_last(mean_last(x), n));
        Tensor var = mean_last(mul(centered, centered));
        Tensor inv = expand_last(rsqrt(add(var, Tensor::scalar(eps))), n);
        Tensor g_mean = expand_last(mean_last(g), n);
        Tensor gy_mean = expand_last(mean_last(mul(g, y)), n);
        return std::vector<Tensor>{mul(inv, sub(sub(g, g_mean), mul(y, gy_mean)))};
      });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids, const Shape& ids_shape) {
  require_defined(table, "embedding_lookup");
  if (table.ndim() != 2) {
    throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
  }
  if (shape_numel(ids_shape) != ids.size()) {
    throw ShapeError("embedding_lookup: ids shape " + shape_str(ids_shape) + " does not match " +
                     std::to_string(ids.size()) + " ids");
  }
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  const auto src = table.data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ContractError("embedding_lookup: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
    std::copy_n(src.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result(OpKind::embedding_lookup, std::move(out_shape), std::move(out), {table},
                     [saved = std::move(saved), vocab](const std::vector<Tensor>&, const Tensor&,
                                                       const Tensor& g) {
                       return std::vector<Tensor>{embedding_scatter(g, saved, vocab)};
                     });
}

Tensor embedding_scatter(const Tensor& grad, std::span<const int> ids, std::size_t vocab) {
  require_defined(grad, "embedding_scatter");
  if (grad.ndim() < 1) throw ShapeError("embedding_scatter: gradient needs a feature axis");
  const std::size_t d = grad.shape().back();
  if (grad.numel() != ids.size() * d) {
    throw ShapeError("embedding_scatter: gradient " + shape_str(grad.shape()) + " does not match " +
                     std::to_string(ids.size()) + " ids");
  }
  const auto src = grad.data();
  std::vector<double> out(vocab * d, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ContractError("embedding_scatter: id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    double* row = out.data() + static_cast<std::size_t>(ids[i]) * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += src[i * d + j];
  }
  Shape ids_shape(grad.shape().begin(), grad.shape().end() - 1);
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result(OpKind::embedding_scatter, {vocab, d}, std::move(out), {grad},
                     [saved = std::move(saved), ids_shape](const std::vector<Tensor>&, const Tensor&,
                                                           const Tensor& g) {
                       return std::vector<Tensor>{embedding_lookup(g, saved, ids_shape)};
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_defined(logits, "cross_entropy");
  if (logits.ndim() != 2) {
    throw ShapeError("cross_entropy: logits must be (rows, classes), got " + shape_str(logits.shape()));
  }
  const std::size_t rows = logits.shape()[0];
  const std::size_t classes = logits.shape()[1];
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  const auto z = logits.data();
  std::vector<double> target(rows * classes, 0.0);
  std::vector<double> row_mask(rows * classes, 0.0);
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0) continue;
    if (static_cast<std::size_t>(y) >= classes) {
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    const double* x = z.data() + r * classes;
    const double mx = *std::max_element(x, x + classes);
    double s = 0.0;
    for (std::size_t j = 0; j < classes; ++j) s += std::exp(x[j] - mx);
    total += mx + std::log(s) - x[y];
    target[r * classes + static_cast<std::size_t>(y)] = 1.0;
    std::fill_n(row_mask.begin() + static_cast<std::ptrdiff_t>(r * classes), classes, 1.0);
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: every position is masked");
  Tensor target_t = Tensor::from({rows, classes}, std::move(target));
  Tensor mask_t = Tensor::from({rows, classes}, std::move(row_mask));
  const double inv_count = 1.0 / static_cast<double>(count);
  return make_result(
      OpKind::cross_entropy, {}, {total * inv_count}, {logits},
      [target_t, mask_t, inv_count](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
        Tensor residual = sub(mul(softmax(in[0]), mask_t), target_t);
        return std::vector<Tensor>{scale(mul(residual, g), inv_count)};
      });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  const auto d = a.data();
  if (d.empty()) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : d) s += v;
  const double inv = 1.0 / static_cast<double>(d.size());
  return make_result(OpKind::mean, {}, {s * inv}, {a},
                     [inv](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{broadcast_to(scale(g, inv), in[0].shape())};
                     });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] * factor;
  return make_result(OpKind::scale, a.shape(), std::move(out), {a},
                     [factor](const std::vector<Tensor>&, const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{scale(g, factor)};
                     });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(s));
  const std::size_t m = s[s.size() - 2];
  const std::size_t n = s.back();
  const std::size_t batches = a.numel() / std::max<std::size_t>(m * n, 1);
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t b = 0; b < batches; ++b) {
    const double* x = d.data() + b * m * n;
    double* y = out.data() + b * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
    }
  }
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  return make_result(OpKind::transpose, std::move(out_shape), std::move(out), {a},
                     [](const std::vector<Tensor>&, const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{transpose(g)};
                     });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  if (shape == a.shape()) return a;
  auto d = a.data();
  return make_result(OpKind::reshape, shape, std::vector<double>(d.begin(), d.end()), {a},
                     [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{reshape(g, in[0].shape())};
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& first = parts.front().shape();
  const std::size_t ax = norm_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shape " + shape_str(s) + " does not match " + shape_str(first) +
                       " off axis " + std::to_string(ax));
    }
    out_shape[ax] += s[ax];
    widths.push_back(s[ax]);
  }
  const std::size_t outer = shape_numel(Shape(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(ax)));
  const std::size_t inner = shape_numel(Shape(first.begin() + static_cast<std::ptrdiff_t>(ax) + 1, first.end()));
  std::vector<double> out(shape_numel(out_shape));
  const std::size_t row = out_shape[ax] * inner;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto d = parts[p].data();
    const std::size_t chunk = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(d.data() + o * chunk, chunk, out.data() + o * row + offset);
    }
    offset += chunk;
  }
  return make_result(OpKind::concat, std::move(out_shape), std::move(out), parts,
                     [widths, ax](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                       std::vector<Tensor> grads(in.size());
                       std::size_t begin = 0;
                       for (std::size_t p = 0; p < in.size(); ++p) {
                         if (in[p].requires_grad()) {
                           grads[p] = slice(g, static_cast<int>(ax), begin, begin + widths[p]);
                         }
                         begin += widths[p];
                       }
                       return grads;
                     });
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  require_defined(a, "slice");
  const Shape& s = a.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "slice");
  if (begin >= end || end > s[ax]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for axis " + std::to_string(ax) + " of " + shape_str(s));
  }
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(ax)));
  const std::size_t inner = shape_numel(Shape(s.begin() + static_cast<std::ptrdiff_t>(ax) + 1, s.end()));
  Shape out_shape = s;
  out_shape[ax] = end - begin;
  const std::size_t chunk = (end - begin) * inner;
  const auto d = a.data();
  std::vector<double> out(outer * chunk);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(d.data() + o * s[ax] * inner + begin * inner, chunk, out.data() + o * chunk);
  }
  return make_result(OpKind::slice, std::move(out_shape), std::move(out), {a},
                     [ax, begin, end](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                       const Shape& full_shape = in[0].shape();
                       std::vector<Tensor> pieces;
                       if (begin > 0) {
                         Shape before = full_shape;
                         before[ax] = begin;
                         pieces.push_back(Tensor::zeros(before));
                       }
                       pieces.push_back(g);
                       if (end < full_shape[ax]) {
                         Shape after = full_shape;
                         after[ax] = full_shape[ax] - end;
                         pieces.push_back(Tensor::zeros(after));
                       }
                       return std::vector<Tensor>{pieces.size() == 1 ? g : concat(pieces, static_cast<int>(ax))};
                     });
}

Tensor sum_to(const Tensor& a, const Shape& shape) {
  require_defined(a, "sum_to");
  if (!is_suffix(shape, a.shape())) {
    throw ShapeError("sum_to: " + shape_str(shape) + " is not a trailing shape of " + shape_str(a.shape()));
  }
  const std::size_t n = shape_numel(shape);
  const auto d = a.data();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) out[i % n] += d[i];
  return make_result(OpKind::sum_to, shape, std::move(out), {a},
                     [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{broadcast_to(g, in[0].shape())};
                     });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  require_defined(a, "broadcast_to");
  if (!is_suffix(a.shape(), shape)) {
    throw ShapeError("broadcast_to: " + shape_str(a.shape()) + " is not a trailing shape of " +
                     shape_str(shape));
  }
  if (a.shape() == shape) return a;
  const auto d = a.data();
  const std::size_t n = d.size();
  std::vector<double> out(shape_numel(shape));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i % n];
  return make_result(OpKind::broadcast_to, shape, std::move(out), {a},
                     [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{sum_to(g, in[0].shape())};
                     });
}

Tensor sum_last(const Tensor& a) {
  require_defined(a, "sum_last");
  if (a.ndim() == 0) throw ShapeError("sum_last: needs at least one axis");
  const std::size_t n = a.shape().back();
  const auto d = a.data();
  std::vector<double> out(d.size() / n, 0.0);
  for (std::size_t r = 0; r < out.size(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += d[r * n + j];
    out[r] = s;
  }
  Shape out_shape = a.shape();
  out_shape.back() = 1;
  return make_result(OpKind::sum_last, std::move(out_shape), std::move(out), {a},
                     [n](const std::vector<Tensor>&, const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{expand_last(g, n)};
                     });
}

Tensor expand_last(const Tensor& a, std::size_t n) {
  require_defined(a, "expand_last");
  if (a.ndim() == 0 || a.shape().back() != 1) {
    throw ShapeError("expand_last: last axis must be 1, got " + shape_str(a.shape()));
  }
  const auto d = a.data();
  std::vector<double> out(d.size() * n);
  for (std::size_t r = 0; r < d.size(); ++r) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(r * n), n, d[r]);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  return make_result(OpKind::expand_last, std::move(out_shape), std::move(out), {a},
                     [](const std::vector<Tensor>&, const Tensor&, const Tensor& g) {
                       return std::vector<Tensor>{sum_last(g)};
                     });
}

Tensor rsqrt(const Tensor& a) {
  require_defined(a, "rsqrt");
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = 1.0 / std::sqrt(d[i]);
  return make_result(OpKind::rsqrt, a.shape(), std::move(out), {a},
                     [](const std::vector<Tensor>&, const Tensor& y, const Tensor& g) {
                       return std::vector<Tensor>{scale(mul(g, mul(y, mul(y, y))), -0.5)};
                     });
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }
Tensor neg(const Tensor& a) { return scale(a, -1.0); }
Tensor sum(const Tensor& a) { return sum_to(a, {}); }

Tensor mean_last(const Tensor& a) {
  return scale(sum_last(a), 1.0 / static_cast<double>(a.shape().back()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("dot: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  return sum(mul(a, b));
}

}  // namespace metaxl
