#include "hisem/bdam.hpp"

#include <cmath>
#include <stdexcept>

#include "hisem/ops.hpp"

namespace hisem {

void BiTemporalFeatures::validate() const {
  if (!f_t1.defined() || !f_t2.defined()) throw DimensionError("bi-temporal features are unset");
  if (f_t1.rank() != 2 || f_t1.shape() != f_t2.shape()) {
    throw DimensionError("bi-temporal streams must share an [L x D] shape, got " +
                         to_string(f_t1.shape()) + " and " + to_string(f_t2.shape()));
  }
  if (height * width != f_t1.dim(0)) {
    throw DimensionError("grid " + std::to_string(height) + "x" + std::to_string(width) +
                         " does not cover " + std::to_string(f_t1.dim(0)) + " tokens");
  }
}

namespace {

DirectionParams make_direction(const BdamConfig& cfg, ParamStore& store, const std::string& name,
                               Rng& rng) {
  DirectionParams d;
  d.query = make_linear(store, name + ".query", cfg.dim, cfg.dim, rng, false);
  d.key = make_linear(store, name + ".key", cfg.dim, cfg.dim, rng, false);
  d.value = make_linear(store, name + ".value", cfg.dim, cfg.dim, rng, false);
  d.bias_proj = store.add(name + ".bias_proj",
                          normal_parameter({cfg.dim, 1}, rng, 1.0 / std::sqrt(static_cast<Real>(cfg.dim))));
  d.bias_scale = store.add(name + ".bias_scale", constant_parameter({1}, cfg.bias_scale_init));
  return d;
}

}  // namespace

BdamLayerParams make_bdam_layer(const BdamConfig& cfg, ParamStore& store, const std::string& prefix,
                                Rng& rng) {
  if (!(cfg.lambda_init > 0.0 && cfg.lambda_init < 1.0)) {
    throw std::invalid_argument("lambda_init must lie strictly inside (0, 1)");
  }
  BdamLayerParams p;
  p.cond_in = make_linear(store, prefix + ".cond_in", 2 * cfg.dim, cfg.cond_hidden, rng);
  p.cond_out = make_linear(store, prefix + ".cond_out", cfg.cond_hidden, cfg.dim, rng);
  p.conv_t1 = make_conv3x3(store, prefix + ".conv_t1", cfg.dim, cfg.dim, rng);
  p.t1_to_t2 = make_direction(cfg, store, prefix + ".t1_to_t2", rng);
  p.gate_t1 = make_linear(store, prefix + ".gate_t1", 2 * cfg.dim, cfg.dim, rng);
  p.norm_cond_t1 = make_layer_norm(store, prefix + ".norm_cond_t1", cfg.dim);
  p.norm_attn_t1 = make_layer_norm(store, prefix + ".norm_attn_t1", cfg.dim);
  if (cfg.tied) {
    p.conv_t2 = p.conv_t1;
    p.t2_to_t1 = p.t1_to_t2;
    p.gate_t2 = p.gate_t1;
    p.norm_cond_t2 = p.norm_cond_t1;
    p.norm_attn_t2 = p.norm_attn_t1;
  } else {
    p.conv_t2 = make_conv3x3(store, prefix + ".conv_t2", cfg.dim, cfg.dim, rng);
    p.t2_to_t1 = make_direction(cfg, store, prefix + ".t2_to_t1", rng);
    p.gate_t2 = make_linear(store, prefix + ".gate_t2", 2 * cfg.dim, cfg.dim, rng);
    p.norm_cond_t2 = make_layer_norm(store, prefix + ".norm_cond_t2", cfg.dim);
    p.norm_attn_t2 = make_layer_norm(store, prefix + ".norm_attn_t2", cfg.dim);
  }
  const Real logit = std::log(cfg.lambda_init / (1.0 - cfg.lambda_init));
  p.lambda_logit = store.add(prefix + ".lambda_logit", constant_parameter({1}, logit));
  return p;
}

std::vector<BdamLayerParams> make_bdam(const BdamConfig& cfg, ParamStore& store,
                                       const std::string& prefix, Rng& rng) {
  if (cfg.layers == 0) throw std::invalid_argument("BDAM needs at least one layer");
  std::vector<BdamLayerParams> layers;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers.push_back(make_bdam_layer(cfg, store, prefix + "." + std::to_string(l), rng));
  }
  return layers;
}

Tensor diff_features(const BiTemporalFeatures& x) {
  x.validate();
  return abs(sub(x.f_t1, x.f_t2));
}

Conditioned feature_conditioning(const BiTemporalFeatures& x, const BdamLayerParams& p) {
  Tensor diff = diff_features(x);
  Tensor hidden = relu(apply(p.cond_in, concat_cols(x.f_t1, x.f_t2)));
  Tensor gate = sigmoid(apply(p.cond_out, hidden));
  if (gate.shape() != diff.shape()) {
    throw DimensionError("conditioning gate " + to_string(gate.shape()) +
                         " does not match difference features " + to_string(diff.shape()));
  }
  Tensor diff_hat = mul(diff, gate);
  Tensor t1 = add(add(x.f_t1, apply_on_grid(p.conv_t1, x.f_t1, x.height, x.width)), diff_hat);
  Tensor t2 = add(add(x.f_t2, apply_on_grid(p.conv_t2, x.f_t2, x.height, x.width)), diff_hat);
  return {{t1, t2, x.height, x.width}, diff_hat, gate};
}

Tensor attention_bias(const Tensor& diff_hat, const Tensor& bias_proj, const Tensor& bias_scale) {
  Tensor scores = matmul(diff_hat, bias_proj);
  if (scores.dim(1) != 1) {
    throw DimensionError("bias projection must map each token to one score, got " +
                         to_string(scores.shape()));
  }
  return mul(diag(scores), bias_scale);
}

Tensor balance_coefficient(const BdamLayerParams& p) { return sigmoid(p.lambda_logit); }

DiffAttention bidirectional_diff_attention(const BiTemporalFeatures& x, const Tensor& diff_hat,
                                           const BdamLayerParams& p) {
  x.validate();
  const Real inv_sqrt_d = 1.0 / std::sqrt(static_cast<Real>(x.channels()));
  DiffAttention out;
  out.bias_12 = attention_bias(diff_hat, p.t1_to_t2.bias_proj, p.t1_to_t2.bias_scale);
  out.bias_21 = attention_bias(diff_hat, p.t2_to_t1.bias_proj, p.t2_to_t1.bias_scale);

  Tensor q1 = apply(p.t1_to_t2.query, x.f_t1);
  Tensor k2 = apply(p.t1_to_t2.key, x.f_t2);
  Tensor v2 = apply(p.t1_to_t2.value, x.f_t2);
  Tensor q2 = apply(p.t2_to_t1.query, x.f_t2);
  Tensor k1 = apply(p.t2_to_t1.key, x.f_t1);
  Tensor v1 = apply(p.t2_to_t1.value, x.f_t1);

  out.attn_12 = softmax_lastdim(add(scale(matmul(q1, transpose(k2)), inv_sqrt_d), out.bias_12));
  out.attn_21 = softmax_lastdim(add(scale(matmul(q2, transpose(k1)), inv_sqrt_d), out.bias_21));

  Tensor lambda = balance_coefficient(p);
  out.o_12 = matmul(sub(out.attn_12, mul(out.attn_21, lambda)), v2);
  out.o_21 = matmul(sub(out.attn_21, mul(out.attn_12, lambda)), v1);
  return out;
}

Tensor gated_fusion(const Tensor& original, const Tensor& attended, const LinearParams& gate) {
  if (original.shape() != attended.shape()) {
    throw DimensionError("gated_fusion: " + to_string(original.shape()) + " vs " +
                         to_string(attended.shape()));
  }
  Tensor g = sigmoid(apply(gate, concat_cols(original, attended)));
  return add(original, mul(g, sub(attended, original)));
}

BiTemporalFeatures bdam_layer(const BiTemporalFeatures& x, const BdamLayerParams& p) {
  Conditioned cond = feature_conditioning(x, p);
  BiTemporalFeatures hat{apply(p.norm_cond_t1, cond.features.f_t1),
                         apply(p.norm_cond_t2, cond.features.f_t2), x.height, x.width};
  DiffAttention attn = bidirectional_diff_attention(hat, cond.diff_hat, p);
  Tensor t1 = apply(p.norm_attn_t1, gated_fusion(hat.f_t1, attn.o_12, p.gate_t1));
  Tensor t2 = apply(p.norm_attn_t2, gated_fusion(hat.f_t2, attn.o_21, p.gate_t2));
  return {t1, t2, x.height, x.width};
}

BiTemporalFeatures bdam_forward(const BiTemporalFeatures& x, const std::vector<BdamLayerParams>& layers,
                                std::vector<BiTemporalFeatures>* per_layer) {
  if (layers.empty()) throw std::invalid_argument("bdam_forward: no layers");
  x.validate();
  BiTemporalFeatures cur = x;
  for (const auto& layer : layers) {
    cur = bdam_layer(cur, layer);
    if (per_layer != nullptr) per_layer->push_back(cur);
  }
  return cur;
}

}  // namespace hisem
