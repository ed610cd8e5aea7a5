#include "hisem/hasd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hisem/ops.hpp"

namespace hisem {

const char* to_string(RoutePath path) {
  return path == RoutePath::kChanged ? "changed" : "unchanged";
}

const char* to_string(RouteSource source) {
  return source == RouteSource::kGroundTruth ? "ground_truth" : "predicted";
}

void MoeConfig::validate() const {
  if (num_experts == 0 || num_groups == 0) throw std::invalid_argument("MoE needs experts and groups");
  if (num_experts % num_groups != 0) {
    throw std::invalid_argument("num_experts (" + std::to_string(num_experts) +
                                ") must be divisible by num_groups (" + std::to_string(num_groups) + ")");
  }
  if (groups_topk == 0 || groups_topk > num_groups) {
    throw std::invalid_argument("groups_topk must lie in [1, num_groups]");
  }
  if (experts_topk == 0 || experts_topk > groups_topk * group_size()) {
    throw std::invalid_argument("experts_topk must lie in [1, groups_topk * group size]");
  }
  if (expert_hidden == 0) throw std::invalid_argument("expert_hidden must be positive");
}

HasdParams make_hasd(const HasdConfig& cfg, ParamStore& store, const std::string& prefix, Rng& rng) {
  cfg.moe.validate();
  const Real in_std = 1.0 / std::sqrt(static_cast<Real>(cfg.dim));
  HasdParams p;
  p.router = store.add(prefix + ".router", normal_parameter({cfg.dim, 2}, rng, in_std));
  p.fuse_in = make_linear(store, prefix + ".fuse_in", 2 * cfg.dim, cfg.dim, rng);
  p.fuse_conv = make_conv3x3(store, prefix + ".fuse_conv", cfg.dim, cfg.dim, rng);
  p.expert_router = store.add(prefix + ".expert_router",
                              normal_parameter({cfg.dim, cfg.moe.num_experts}, rng, in_std));
  for (std::size_t e = 0; e < cfg.moe.num_experts; ++e) {
    p.experts.push_back(make_swiglu(store, prefix + ".expert." + std::to_string(e), cfg.dim,
                                    cfg.moe.expert_hidden, rng));
  }
  for (std::size_t s = 0; s < cfg.moe.num_shared_experts; ++s) {
    p.shared_experts.push_back(make_swiglu(store, prefix + ".shared." + std::to_string(s), cfg.dim,
                                           cfg.moe.expert_hidden, rng));
  }
  p.ffn_in = make_linear(store, prefix + ".ffn_in", cfg.dim, cfg.ffn_hidden, rng);
  p.ffn_out = make_linear(store, prefix + ".ffn_out", cfg.ffn_hidden, cfg.dim, rng);
  return p;
}

RoutePath route_from_logits(std::span<const Real> logits) {
  if (logits.size() != 2) throw DimensionError("image router expects two logits");
  return logits[1] > logits[0] ? RoutePath::kChanged : RoutePath::kUnchanged;
}

ImageRoute image_level_route(const BiTemporalFeatures& x, const Tensor& router) {
  x.validate();
  Tensor pooled = mean_rows(sub(x.f_t2, x.f_t1));
  ImageRoute out;
  out.logits = matmul(pooled, router);
  if (out.logits.numel() != 2) {
    throw DimensionError("image router must produce two logits, got " + to_string(out.logits.shape()));
  }
  Tensor probs = softmax_lastdim(detach(out.logits));
  out.decision.path_probs = {probs[0], probs[1]};
  out.decision.path = route_from_logits(out.logits.values());
  out.decision.path_weight = 1.0;
  out.decision.source = RouteSource::kPredicted;
  return out;
}

Tensor routing_loss(const Tensor& logits, int label) {
  if (label != 0 && label != 1) {
    throw std::out_of_range("routing label must be 0 or 1, got " + std::to_string(label));
  }
  const int target[1] = {label};
  return cross_entropy(reshape(logits, {1, 2}), target);
}

Tensor fusion_block(const BiTemporalFeatures& x, const HasdParams& p) {
  x.validate();
  Tensor h = apply(p.fuse_in, concat_cols(x.f_t1, x.f_t2));
  return relu(add(h, apply_on_grid(p.fuse_conv, h, x.height, x.width)));
}

Tensor expert_scores(const Tensor& fused, const Tensor& expert_router) {
  return sigmoid(matmul(fused, expert_router));
}

std::vector<TokenRoute> group_constrained_select(std::span<const Real> scores, std::size_t tokens,
                                                 const MoeConfig& cfg) {
  cfg.validate();
  const std::size_t e_count = cfg.num_experts;
  const std::size_t gsize = cfg.group_size();
  if (scores.size() != tokens * e_count) {
    throw DimensionError("expert scores hold " + std::to_string(scores.size()) + " values, expected " +
                         std::to_string(tokens) + "x" + std::to_string(e_count));
  }
  constexpr Real kMasked = -std::numeric_limits<Real>::infinity();
  std::vector<TokenRoute> routes(tokens);
  std::vector<Real> group_scores(cfg.num_groups);
  std::vector<Real> filtered(e_count);
  for (std::size_t n = 0; n < tokens; ++n) {
    const Real* row = scores.data() + n * e_count;
    for (std::size_t g = 0; g < cfg.num_groups; ++g) {
      group_scores[g] = *std::max_element(row + g * gsize, row + (g + 1) * gsize);
    }
    TopK groups = top_k(group_scores, cfg.groups_topk);
    std::fill(filtered.begin(), filtered.end(), kMasked);
    for (auto g : groups.indices) {
      std::copy(row + g * gsize, row + (g + 1) * gsize, filtered.begin() + static_cast<long>(g * gsize));
    }
    TopK experts = top_k(filtered, cfg.experts_topk);
    Real total = 0.0;
    for (Real v : experts.values) total += v;
    TokenRoute& r = routes[n];
    r.experts = experts.indices;
    for (Real v : experts.values) {
      // All-zero survivors (sigmoid underflow) share the weight evenly.
      r.weights.push_back(total > 0.0 ? v / total : 1.0 / static_cast<Real>(experts.values.size()));
    }
  }
  return routes;
}

std::vector<TokenRoute> group_constrained_select(const Tensor& scores, const MoeConfig& cfg) {
  if (scores.rank() != 2 || scores.dim(1) != cfg.num_experts) {
    throw DimensionError("expert scores " + to_string(scores.shape()) + " do not have " +
                         std::to_string(cfg.num_experts) + " columns");
  }
  return group_constrained_select(scores.values(), scores.dim(0), cfg);
}

Tensor routing_weights(const Tensor& scores, const std::vector<TokenRoute>& routes) {
  const std::size_t tokens = scores.dim(0), e_count = scores.dim(1);
  if (routes.size() != tokens) throw DimensionError("routing_weights: one route per token required");
  std::vector<Real> mask(tokens * e_count, 0.0);
  for (std::size_t n = 0; n < tokens; ++n) {
    for (auto e : routes[n].experts) mask[n * e_count + e] = 1.0;
  }
  return normalize_rows(mul(scores, Tensor({tokens, e_count}, std::move(mask))));
}

Tensor moe_forward(const Tensor& fused, const std::vector<TokenRoute>& routes, const Tensor& weights,
                   const HasdParams& p) {
  const std::size_t tokens = fused.dim(0), dim = fused.dim(1);
  const std::size_t e_count = p.experts.size();
  if (routes.size() != tokens || weights.rank() != 2 || weights.dim(0) != tokens ||
      weights.dim(1) != e_count) {
    throw DimensionError("moe_forward: routes/weights do not match " + to_string(fused.shape()));
  }
  auto wv = weights.values();
  std::vector<std::vector<std::size_t>> assigned(e_count);
  for (std::size_t n = 0; n < tokens; ++n) {
    Real total = 0.0;
    for (auto e : routes[n].experts) {
      if (e >= e_count) throw std::out_of_range("moe_forward: expert index out of range");
      total += wv[n * e_count + e];
      assigned[e].push_back(n);
    }
    if (std::fabs(total - 1.0) > 1e-6) {
      throw std::domain_error("moe_forward: routing weights of token " + std::to_string(n) +
                              " sum to " + std::to_string(total));
    }
  }
  Tensor out(Shape{tokens, dim}, 0.0);
  for (std::size_t e = 0; e < e_count; ++e) {
    if (assigned[e].empty()) continue;
    Tensor expert_out = apply(p.experts[e], gather_rows(fused, assigned[e]));
    Tensor w = gather_rows(select_column(weights, e), assigned[e]);
    out = index_add_rows(out, assigned[e], scale_rows(expert_out, w));
  }
  for (const auto& shared : p.shared_experts) out = add(out, apply(shared, fused));
  return out;
}

Tensor unchanged_path_ffn(const Tensor& fused, const HasdParams& p) {
  return add(fused, apply(p.ffn_out, relu(apply(p.ffn_in, fused))));
}

HasdOutput hasd_forward(const BiTemporalFeatures& x, const HasdParams& p, const MoeConfig& cfg,
                        std::optional<int> path_override) {
  ImageRoute route = image_level_route(x, p.router);
  HasdOutput out;
  out.logits = route.logits;
  out.decision = route.decision;
  if (path_override.has_value()) {
    if (*path_override != 0 && *path_override != 1) {
      throw std::out_of_range("path override must be 0 or 1");
    }
    out.decision.path = static_cast<RoutePath>(*path_override);
    out.decision.source = RouteSource::kGroundTruth;
  }
  Tensor fused = fusion_block(x, p);
  if (out.decision.path == RoutePath::kChanged) {
    Tensor scores = expert_scores(fused, p.expert_router);
    std::vector<TokenRoute> routes = group_constrained_select(scores, cfg);
    Tensor weights = routing_weights(scores, routes);
    out.visual = moe_forward(fused, routes, weights, p);
    out.decision.token_experts = std::move(routes);
  } else {
    out.visual = unchanged_path_ffn(fused, p);
  }
  return out;
}

std::vector<HasdOutput> hasd_forward_batch(const std::vector<BiTemporalFeatures>& batch,
                                           const HasdParams& p, const MoeConfig& cfg,
                                           const std::vector<std::optional<int>>& overrides) {
  if (!overrides.empty() && overrides.size() != batch.size()) {
    throw DimensionError("hasd_forward_batch: one override slot per sample required");
  }
  std::vector<HasdOutput> outs;
  outs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    outs.push_back(hasd_forward(batch[i], p, cfg, overrides.empty() ? std::nullopt : overrides[i]));
  }
  return outs;
}

}  // namespace hisem
