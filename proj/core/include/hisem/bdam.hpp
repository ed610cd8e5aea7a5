#pragma once

#include <string>
#include <vector>

#include "hisem/nn.hpp"
#include "hisem/params.hpp"
#include "hisem/tensor.hpp"

// Bidirectional differential attention modulation: a stack of layers, each
// doing discrepancy-aware feature conditioning followed by bidirectional
// discrepancy-guided cross-temporal attention.

namespace hisem {

/// Paired token grids for the "before" (t1) and "after" (t2) observations.
struct BiTemporalFeatures {
  Tensor f_t1;  // [L x D]
  Tensor f_t2;  // [L x D]
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t tokens() const { return height * width; }
  std::size_t channels() const { return f_t1.dim(1); }
  /// Throws DimensionError unless both streams are [L x D] with L = H * W.
  void validate() const;
  BiTemporalFeatures swapped() const { return {f_t2, f_t1, height, width}; }
};

/// Projections for one attention direction d. The query comes from the
/// source stream, key and value from the other stream.
struct DirectionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  Tensor bias_proj;   // [D x 1], no constant term
  Tensor bias_scale;  // [1], alpha^(d)
};

struct BdamLayerParams {
  LinearParams cond_in;   // [2D -> hidden], ReLU
  LinearParams cond_out;  // [hidden -> D], sigmoid
  ConvParams conv_t1;
  ConvParams conv_t2;
  DirectionParams t1_to_t2;
  DirectionParams t2_to_t1;
  Tensor lambda_logit;  // [1]; lambda = sigmoid(lambda_logit) keeps it in [0, 1]
  LinearParams gate_t1;  // [2D -> D]
  LinearParams gate_t2;
  LayerNormParams norm_cond_t1;
  LayerNormParams norm_cond_t2;
  LayerNormParams norm_attn_t1;
  LayerNormParams norm_attn_t2;
};

struct BdamConfig {
  std::size_t dim = 64;
  std::size_t cond_hidden = 64;
  std::size_t layers = 3;
  /// Shares every t1/t2 parameter pair (convs, direction projections, gates,
  /// norms). The network is then symmetric under swapping the streams.
  bool tied = false;
  Real lambda_init = 0.5;
  Real bias_scale_init = 1.0;
};

BdamLayerParams make_bdam_layer(const BdamConfig& cfg, ParamStore& store, const std::string& prefix,
                                Rng& rng);
std::vector<BdamLayerParams> make_bdam(const BdamConfig& cfg, ParamStore& store,
                                       const std::string& prefix, Rng& rng);

/// |F_t1 - F_t2|
Tensor diff_features(const BiTemporalFeatures& x);

struct Conditioned {
  BiTemporalFeatures features;  // F + conv(F) + diff_hat per stream, before normalisation
  Tensor diff_hat;              // |F_t1 - F_t2| * G
  Tensor gate;                  // G in (0, 1), [L x D]
};

Conditioned feature_conditioning(const BiTemporalFeatures& x, const BdamLayerParams& p);

/// alpha * Diag(diff_hat . w); off-diagonal entries are exactly zero.
Tensor attention_bias(const Tensor& diff_hat, const Tensor& bias_proj, const Tensor& bias_scale);

/// The balancing coefficient lambda in [0, 1].
Tensor balance_coefficient(const BdamLayerParams& p);

struct DiffAttention {
  Tensor o_12;     // (A12 - lambda A21) V_t2
  Tensor o_21;     // (A21 - lambda A12) V_t1
  Tensor attn_12;  // softmax(Q_t1 K_t2^T / sqrt(d) + B12)
  Tensor attn_21;
  Tensor bias_12;
  Tensor bias_21;
};

DiffAttention bidirectional_diff_attention(const BiTemporalFeatures& x, const Tensor& diff_hat,
                                           const BdamLayerParams& p);

/// original + g * (attended - original), g = sigmoid([original; attended] Wg + bg).
Tensor gated_fusion(const Tensor& original, const Tensor& attended, const LinearParams& gate);

BiTemporalFeatures bdam_layer(const BiTemporalFeatures& x, const BdamLayerParams& p);

/// Applies every layer in order. When `per_layer` is non-null it receives
/// each layer's output.
BiTemporalFeatures bdam_forward(const BiTemporalFeatures& x, const std::vector<BdamLayerParams>& layers,
                                std::vector<BiTemporalFeatures>* per_layer = nullptr);

}  // namespace hisem
