#include "metaxl/rtn.hpp"

#include <cmath>
#include <string>

#include "metaxl/rng.hpp"

namespace metaxl {

namespace {

const Tensor& get(const RTNParams& phi, const char* key) {
  auto it = phi.find(key);
  if (it == phi.end()) throw ContractError(std::string("rtn: missing parameter '") + key + "'");
  return it->second;
}

}  // namespace

std::size_t rtn_width(const RTNParams& phi) { return get(phi, "w1").shape()[0]; }
std::size_t rtn_bottleneck(const RTNParams& phi) { return get(phi, "w1").shape()[1]; }

Tensor rtn_forward(const RTNParams& phi, const Tensor& h, bool residual) {
  const Tensor& w1 = get(phi, "w1");
  const Tensor& w2 = get(phi, "w2");
  const std::size_t d = w1.shape()[0];
  if (h.ndim() == 0 || h.shape().back() != d) {
    throw ShapeError("rtn_forward: input " + shape_str(h.shape()) + " does not end in width " +
                     std::to_string(d));
  }
  const bool vector_input = h.ndim() == 1;
  Tensor x = vector_input ? reshape(h, {1, d}) : h;
  Tensor hidden = relu(add(matmul(x, w1), get(phi, "b1")));
  Tensor out = add(matmul(hidden, w2), get(phi, "b2"));
  if (residual) out = add(x, out);
  return vector_input ? reshape(out, {d}) : out;
}

RTNParams rtn_init(std::size_t d, std::size_t r, std::uint64_t seed, bool zero_w2) {
  if (r == 0 || r >= d) {
    throw ContractError("rtn_init: bottleneck r=" + std::to_string(r) + " must satisfy 0 < r < d=" +
                        std::to_string(d));
  }
  Rng rng(seed);
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(r));
  std::vector<double> w1(d * r), w2(r * d, 0.0);
  for (double& v : w1) v = rng.uniform(-bound1, bound1);
  if (!zero_w2) {
    for (double& v : w2) v = rng.uniform(-bound2, bound2);
  }
  RTNParams phi;
  phi["w1"] = Tensor::from({d, r}, std::move(w1));
  phi["b1"] = Tensor::zeros({r});
  phi["w2"] = Tensor::from({r, d}, std::move(w2));
  phi["b2"] = Tensor::zeros({d});
  return phi;
}

RtnHook make_rtn_hook(const RTNParams& phi, std::size_t layer, bool residual) {
  return RtnHook{layer, [phi, residual](const Tensor& h) { return rtn_forward(phi, h, residual); }};
}

}  // namespace metaxl
