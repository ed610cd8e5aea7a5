#pragma once

#include <string>

#include "hisem/params.hpp"
#include "hisem/tensor.hpp"

// Small parameter bundles shared by the model blocks.

namespace hisem {

struct LinearParams {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], may be undefined
};

struct ConvParams {
  Tensor weight;  // [3 x 3 x in x out]
  Tensor bias;    // [out]
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

/// SiLU-gated feed-forward block: (SiLU(x Wg) * (x Wu)) Wd.
struct SwiGluParams {
  Tensor gate;  // [D x H]
  Tensor up;    // [D x H]
  Tensor down;  // [H x D]
};

LinearParams make_linear(ParamStore& store, const std::string& name, std::size_t in,
                         std::size_t out, Rng& rng, bool with_bias = true);
ConvParams make_conv3x3(ParamStore& store, const std::string& name, std::size_t in,
                        std::size_t out, Rng& rng);
LayerNormParams make_layer_norm(ParamStore& store, const std::string& name, std::size_t dim);
SwiGluParams make_swiglu(ParamStore& store, const std::string& name, std::size_t dim,
                         std::size_t hidden, Rng& rng);

Tensor apply(const LinearParams& p, const Tensor& x);
Tensor apply(const LayerNormParams& p, const Tensor& x);
Tensor apply(const SwiGluParams& p, const Tensor& x);
/// Token matrix [H*W x C] through a 3x3 conv laid out on an H x W grid.
Tensor apply_on_grid(const ConvParams& p, const Tensor& tokens, std::size_t height,
                     std::size_t width);

}  // namespace hisem
