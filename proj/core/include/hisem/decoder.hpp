#pragma once

#include <span>
#include <string>
#include <vector>

#include "hisem/nn.hpp"
#include "hisem/params.hpp"
#include "hisem/tensor.hpp"
#include "hisem/vocab.hpp"

// Transformer caption decoder: learned token and position embeddings,
// post-norm layers of causal self-attention, cross-attention over the visual
// tokens, and a ReLU feed-forward block. Attention is single-head.

namespace hisem {

/// Padded token-id sequences. Every row is BOS ... EOS followed by PAD.
struct CaptionBatch {
  std::vector<std::vector<int>> ids;  // [B x N]
  std::vector<std::size_t> lengths;   // real tokens per row, BOS and EOS included

  std::size_t batch() const { return ids.size(); }
  std::size_t width() const { return ids.empty() ? 0 : ids.front().size(); }
  bool is_pad(std::size_t b, std::size_t n) const { return n >= lengths[b]; }

  /// Pads BOS..EOS sequences to the longest one.
  static CaptionBatch from_sequences(const std::vector<std::vector<int>>& sequences);
  /// Throws if an id is outside [0, vocab_size) or a row is not BOS..EOS PAD*.
  void validate(std::size_t vocab_size) const;
};

struct DecoderConfig {
  std::size_t dim = 64;
  std::size_t ffn_hidden = 128;
  std::size_t layers = 1;
  std::size_t max_words = 24;
  std::size_t vocab_size = Vocabulary::kReserved;

  /// Positions needed for BOS + max_words + EOS.
  std::size_t max_positions() const { return max_words + 2; }
};

struct AttentionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams out;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  LayerNormParams norm_self;
  LayerNormParams norm_cross;
  LayerNormParams norm_ffn;
  LinearParams ffn_in;
  LinearParams ffn_out;
};

struct DecoderParams {
  Tensor token_embedding;     // [V x D]
  Tensor position_embedding;  // [max_positions x D]
  std::vector<DecoderLayerParams> layers;
  LinearParams output;  // [D -> V]
};

DecoderParams make_decoder(const DecoderConfig& cfg, ParamStore& store, const std::string& prefix,
                           Rng& rng);

/// Logits [n x V] for one token sequence; row i depends on ids[0..i] and the
/// visual tokens only.
Tensor decode_sequence(const Tensor& visual, std::span<const int> ids, const DecoderParams& p);

/// Logits [B x N x V]; every caption attends to the same visual tokens.
Tensor decoder_forward(const Tensor& visual, const CaptionBatch& captions, const DecoderParams& p);

/// Mean cross-entropy of predicting token n+1 from the prefix ending at n,
/// over real (non-pad) targets only.
Tensor caption_loss(const Tensor& logits, const CaptionBatch& targets);

/// Beam-1 decoding from BOS until EOS or `max_len` tokens. Returns the word
/// ids without BOS/EOS. Argmax ties go to the lowest id.
std::vector<int> generate_greedy(const Tensor& visual, const DecoderParams& p, std::size_t max_len);

}  // namespace hisem
