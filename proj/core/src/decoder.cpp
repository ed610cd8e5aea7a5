#include "hisem/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hisem/ops.hpp"

namespace hisem {

CaptionBatch CaptionBatch::from_sequences(const std::vector<std::vector<int>>& sequences) {
  CaptionBatch batch;
  std::size_t width = 0;
  for (const auto& s : sequences) width = std::max(width, s.size());
  for (const auto& s : sequences) {
    std::vector<int> row(s);
    row.resize(width, Vocabulary::kPad);
    batch.ids.push_back(std::move(row));
    batch.lengths.push_back(s.size());
  }
  return batch;
}

void CaptionBatch::validate(std::size_t vocab_size) const {
  if (lengths.size() != ids.size()) throw std::invalid_argument("caption batch: lengths do not match rows");
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const auto& row = ids[b];
    if (row.size() != width()) throw std::invalid_argument("caption batch: ragged rows");
    if (lengths[b] < 2 || lengths[b] > row.size()) {
      throw std::invalid_argument("caption batch: row " + std::to_string(b) + " has invalid length");
    }
    for (std::size_t n = 0; n < row.size(); ++n) {
      if (row[n] < 0 || static_cast<std::size_t>(row[n]) >= vocab_size) {
        throw std::out_of_range("caption batch: id " + std::to_string(row[n]) +
                                " outside vocabulary of " + std::to_string(vocab_size));
      }
    }
    if (row[0] != Vocabulary::kBos || row[lengths[b] - 1] != Vocabulary::kEos) {
      throw std::invalid_argument("caption batch: row " + std::to_string(b) + " is not BOS ... EOS");
    }
    for (std::size_t n = lengths[b]; n < row.size(); ++n) {
      if (row[n] != Vocabulary::kPad) throw std::invalid_argument("caption batch: non-pad after EOS");
    }
  }
}

namespace {

AttentionParams make_attention(ParamStore& store, const std::string& name, std::size_t dim, Rng& rng) {
  return {make_linear(store, name + ".query", dim, dim, rng),
          make_linear(store, name + ".key", dim, dim, rng),
          make_linear(store, name + ".value", dim, dim, rng),
          make_linear(store, name + ".out", dim, dim, rng)};
}

Tensor attend(const AttentionParams& p, const Tensor& queries, const Tensor& memory, bool causal) {
  const Real inv_sqrt_d = 1.0 / std::sqrt(static_cast<Real>(queries.dim(1)));
  Tensor q = apply(p.query, queries);
  Tensor k = apply(p.key, memory);
  Tensor v = apply(p.value, memory);
  Tensor logits = scale(matmul(q, transpose(k)), inv_sqrt_d);
  Tensor weights = causal ? causal_softmax(logits) : softmax_lastdim(logits);
  return apply(p.out, matmul(weights, v));
}

}  // namespace

DecoderParams make_decoder(const DecoderConfig& cfg, ParamStore& store, const std::string& prefix,
                           Rng& rng) {
  if (cfg.layers == 0) throw std::invalid_argument("decoder needs at least one layer");
  if (cfg.vocab_size <= Vocabulary::kReserved) {
    throw std::invalid_argument("decoder vocabulary holds no words");
  }
  DecoderParams p;
  p.token_embedding = store.add(prefix + ".token_embedding",
                                normal_parameter({cfg.vocab_size, cfg.dim}, rng, 1.0));
  p.position_embedding = store.add(prefix + ".position_embedding",
                                   normal_parameter({cfg.max_positions(), cfg.dim}, rng, 0.1));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string name = prefix + ".layer." + std::to_string(l);
    DecoderLayerParams layer;
    layer.self_attn = make_attention(store, name + ".self_attn", cfg.dim, rng);
    layer.cross_attn = make_attention(store, name + ".cross_attn", cfg.dim, rng);
    layer.norm_self = make_layer_norm(store, name + ".norm_self", cfg.dim);
    layer.norm_cross = make_layer_norm(store, name + ".norm_cross", cfg.dim);
    layer.norm_ffn = make_layer_norm(store, name + ".norm_ffn", cfg.dim);
    layer.ffn_in = make_linear(store, name + ".ffn_in", cfg.dim, cfg.ffn_hidden, rng);
    layer.ffn_out = make_linear(store, name + ".ffn_out", cfg.ffn_hidden, cfg.dim, rng);
    p.layers.push_back(layer);
  }
  p.output = make_linear(store, prefix + ".output", cfg.dim, cfg.vocab_size, rng);
  return p;
}

Tensor decode_sequence(const Tensor& visual, std::span<const int> ids, const DecoderParams& p) {
  const std::size_t n = ids.size();
  const std::size_t vocab = p.token_embedding.dim(0);
  if (n == 0) throw DimensionError("decode_sequence: empty token sequence");
  if (n > p.position_embedding.dim(0)) {
    throw DimensionError("decode_sequence: " + std::to_string(n) + " tokens exceed " +
                         std::to_string(p.position_embedding.dim(0)) + " positions");
  }
  if (visual.rank() != 2 || visual.dim(1) != p.token_embedding.dim(1)) {
    throw DimensionError("decode_sequence: visual tokens " + to_string(visual.shape()) +
                         " do not match model width");
  }
  std::vector<std::size_t> rows(n), positions(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
    positions[i] = i;
  }
  Tensor h = add(gather_rows(p.token_embedding, rows), gather_rows(p.position_embedding, positions));
  for (const auto& layer : p.layers) {
    h = apply(layer.norm_self, add(h, attend(layer.self_attn, h, h, true)));
    h = apply(layer.norm_cross, add(h, attend(layer.cross_attn, h, visual, false)));
    h = apply(layer.norm_ffn, add(h, apply(layer.ffn_out, relu(apply(layer.ffn_in, h)))));
  }
  return apply(p.output, h);
}

Tensor decoder_forward(const Tensor& visual, const CaptionBatch& captions, const DecoderParams& p) {
  const std::size_t vocab = p.token_embedding.dim(0);
  captions.validate(vocab);
  if (captions.batch() == 0) throw DimensionError("decoder_forward: empty caption batch");
  std::vector<Tensor> rows;
  for (const auto& seq : captions.ids) rows.push_back(decode_sequence(visual, seq, p));
  return reshape(concat_rows(rows), {captions.batch(), captions.width(), vocab});
}

Tensor caption_loss(const Tensor& logits, const CaptionBatch& targets) {
  if (logits.rank() != 3 || logits.dim(0) != targets.batch() || logits.dim(1) != targets.width()) {
    throw DimensionError("caption_loss: logits " + to_string(logits.shape()) +
                         " do not match the caption batch");
  }
  const std::size_t b_count = logits.dim(0), n_count = logits.dim(1), vocab = logits.dim(2);
  std::vector<int> next(b_count * n_count, -1);
  for (std::size_t b = 0; b < b_count; ++b) {
    for (std::size_t n = 0; n + 1 < targets.lengths[b]; ++n) next[b * n_count + n] = targets.ids[b][n + 1];
  }
  return cross_entropy(reshape(logits, {b_count * n_count, vocab}), next);
}

std::vector<int> generate_greedy(const Tensor& visual, const DecoderParams& p, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("generate_greedy: max_len must be >= 1");
  const std::size_t limit = std::min(max_len, p.position_embedding.dim(0));
  std::vector<int> seq{Vocabulary::kBos};
  while (seq.size() <= limit) {
    Tensor logits = decode_sequence(visual, seq, p);
    const std::size_t vocab = logits.dim(1);
    auto last = logits.values().subspan((seq.size() - 1) * vocab, vocab);
    const auto best = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    if (best == Vocabulary::kEos) break;
    seq.push_back(best);
  }
  return {seq.begin() + 1, seq.end()};
}

}  // namespace hisem
