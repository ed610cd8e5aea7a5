#include "hisem/nn.hpp"

#include <cmath>

#include "hisem/ops.hpp"

namespace hisem {

LinearParams make_linear(ParamStore& store, const std::string& name, std::size_t in,
                         std::size_t out, Rng& rng, bool with_bias) {
  LinearParams p;
  p.weight = store.add(name + ".weight",
                       normal_parameter({in, out}, rng, 1.0 / std::sqrt(static_cast<Real>(in))));
  if (with_bias) p.bias = store.add(name + ".bias", constant_parameter({out}, 0.0));
  return p;
}

ConvParams make_conv3x3(ParamStore& store, const std::string& name, std::size_t in,
                        std::size_t out, Rng& rng) {
  ConvParams p;
  p.weight = store.add(name + ".weight", normal_parameter({3, 3, in, out}, rng,
                                                         1.0 / std::sqrt(9.0 * static_cast<Real>(in))));
  p.bias = store.add(name + ".bias", constant_parameter({out}, 0.0));
  return p;
}

LayerNormParams make_layer_norm(ParamStore& store, const std::string& name, std::size_t dim) {
  return {store.add(name + ".gamma", constant_parameter({dim}, 1.0)),
          store.add(name + ".beta", constant_parameter({dim}, 0.0))};
}

SwiGluParams make_swiglu(ParamStore& store, const std::string& name, std::size_t dim,
                         std::size_t hidden, Rng& rng) {
  const Real in_std = 1.0 / std::sqrt(static_cast<Real>(dim));
  const Real out_std = 1.0 / std::sqrt(static_cast<Real>(hidden));
  SwiGluParams p;
  p.gate = store.add(name + ".gate", normal_parameter({dim, hidden}, rng, in_std));
  p.up = store.add(name + ".up", normal_parameter({dim, hidden}, rng, in_std));
  p.down = store.add(name + ".down", normal_parameter({hidden, dim}, rng, out_std));
  return p;
}

Tensor apply(const LinearParams& p, const Tensor& x) { return linear(x, p.weight, p.bias); }

Tensor apply(const LayerNormParams& p, const Tensor& x) { return layer_norm(x, p.gamma, p.beta); }

Tensor apply(const SwiGluParams& p, const Tensor& x) {
  Tensor gated = mul(silu(matmul(x, p.gate)), matmul(x, p.up));
  return matmul(gated, p.down);
}

Tensor apply_on_grid(const ConvParams& p, const Tensor& tokens, std::size_t height,
                     std::size_t width) {
  if (tokens.rank() != 2 || tokens.dim(0) != height * width) {
    throw DimensionError("token matrix " + to_string(tokens.shape()) + " does not fit a " +
                         std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  const std::size_t c = tokens.dim(1);
  Tensor grid = reshape(tokens, {height, width, c});
  Tensor out = conv3x3(grid, p.weight, p.bias);
  return reshape(out, {height * width, out.dim(2)});
}

}  // namespace hisem
