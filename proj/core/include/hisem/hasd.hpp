#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hisem/bdam.hpp"
#include "hisem/nn.hpp"
#include "hisem/params.hpp"
#include "hisem/tensor.hpp"

// Hierarchical adaptive semantic disentanglement: an image-level router picks
// the changed or unchanged path; changed pairs go through a token-level,
// group-constrained mixture of SwiGLU experts, unchanged pairs through a
// plain feed-forward block.

namespace hisem {

enum class RoutePath : int { kUnchanged = 0, kChanged = 1 };
enum class RouteSource { kPredicted, kGroundTruth };

const char* to_string(RoutePath path);
const char* to_string(RouteSource source);

/// Experts chosen for one token and their normalised weights, in selection
/// order (descending score).
struct TokenRoute {
  std::vector<std::size_t> experts;
  std::vector<Real> weights;
};

struct RoutingDecision {
  RoutePath path = RoutePath::kUnchanged;
  std::array<Real, 2> path_probs{0.5, 0.5};
  /// Weight given to the chosen path; a renormalised singleton, always 1.
  Real path_weight = 1.0;
  std::vector<TokenRoute> token_experts;  // empty on the unchanged path
  RouteSource source = RouteSource::kPredicted;
};

struct MoeConfig {
  std::size_t num_experts = 8;
  std::size_t num_groups = 4;
  std::size_t groups_topk = 2;
  std::size_t experts_topk = 2;
  std::size_t num_shared_experts = 1;
  std::size_t expert_hidden = 64;

  std::size_t group_size() const { return num_experts / num_groups; }
  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

struct HasdConfig {
  std::size_t dim = 64;
  std::size_t ffn_hidden = 64;
  MoeConfig moe;
};

struct HasdParams {
  Tensor router;         // W_g [D x 2], no constant term
  LinearParams fuse_in;  // 1x1 conv [2D -> D]
  ConvParams fuse_conv;  // 3x3 conv [D -> D]
  Tensor expert_router;  // W_c [D x E]
  std::vector<SwiGluParams> experts;
  std::vector<SwiGluParams> shared_experts;
  LinearParams ffn_in;
  LinearParams ffn_out;
};

HasdParams make_hasd(const HasdConfig& cfg, ParamStore& store, const std::string& prefix, Rng& rng);

/// argmax over two logits; ties go to the unchanged path.
RoutePath route_from_logits(std::span<const Real> logits);

struct ImageRoute {
  Tensor logits;  // [1 x 2]
  RoutingDecision decision;
};

/// Logits GAP(F_t2 - F_t1) . W_g, softmax probabilities, top-1 path.
ImageRoute image_level_route(const BiTemporalFeatures& x, const Tensor& router);

/// Cross-entropy of the two path logits against label 0 (unchanged) or 1.
Tensor routing_loss(const Tensor& logits, int label);

/// Concat streams, 1x1 conv to D, then relu(h + conv3x3(h)).
Tensor fusion_block(const BiTemporalFeatures& x, const HasdParams& p);

/// sigmoid(F_H . W_c), [L x E].
Tensor expert_scores(const Tensor& fused, const Tensor& expert_router);

/// Per token: max-pool expert scores within each contiguous group, keep the
/// top groups_topk groups, mask the rest to -inf, then keep the top
/// experts_topk experts. Weights are the chosen scores normalised to 1.
std::vector<TokenRoute> group_constrained_select(std::span<const Real> scores, std::size_t tokens,
                                                 const MoeConfig& cfg);
std::vector<TokenRoute> group_constrained_select(const Tensor& scores, const MoeConfig& cfg);

/// Differentiable [L x E] weight matrix: chosen scores normalised per token,
/// zero elsewhere.
Tensor routing_weights(const Tensor& scores, const std::vector<TokenRoute>& routes);

/// Y[n] = sum_{e in routes[n]} w[n, e] * f_e(F_H[n]) + sum_s f_s(F_H[n]).
/// Each expert runs only on the tokens routed to it.
Tensor moe_forward(const Tensor& fused, const std::vector<TokenRoute>& routes, const Tensor& weights,
                   const HasdParams& p);

/// x + W2 relu(W1 x + b1) + b2
Tensor unchanged_path_ffn(const Tensor& fused, const HasdParams& p);

struct HasdOutput {
  Tensor visual;  // [L x D]
  RoutingDecision decision;
  Tensor logits;  // router logits [1 x 2]
};

/// Routes (or takes `path_override`: 0 unchanged, 1 changed), fuses, and
/// dispatches to the matching path.
HasdOutput hasd_forward(const BiTemporalFeatures& x, const HasdParams& p, const MoeConfig& cfg,
                        std::optional<int> path_override = std::nullopt);

/// Per-sample dispatch over a batch; members may take different paths.
std::vector<HasdOutput> hasd_forward_batch(const std::vector<BiTemporalFeatures>& batch,
                                           const HasdParams& p, const MoeConfig& cfg,
                                           const std::vector<std::optional<int>>& overrides);

}  // namespace hisem
