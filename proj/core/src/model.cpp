#include "hisem/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "hisem/ops.hpp"

namespace hisem {

void ModelConfig::finalize() {
  if (dim == 0 || input_dim == 0) throw std::invalid_argument("model dims must be positive");
  if (height == 0 || width == 0) throw std::invalid_argument("grid extents must be positive");
  if (bdam.layers == 0) throw std::invalid_argument("bdam_layers must be >= 1");
  if (decoder.layers == 0) throw std::invalid_argument("decoder_layers must be >= 1");
  bdam.dim = dim;
  hasd.dim = dim;
  decoder.dim = dim;
  hasd.moe.validate();
}

HiSemModel::HiSemModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.finalize();
  Rng rng(seed);
  embedder_.project = make_linear(store_, "embed.project", cfg_.input_dim, cfg_.dim, rng);
  embedder_.position =
      store_.add("embed.position", normal_parameter({cfg_.height * cfg_.width, cfg_.dim}, rng, 0.1));
  bdam_ = make_bdam(cfg_.bdam, store_, "bdam", rng);
  hasd_ = make_hasd(cfg_.hasd, store_, "hasd", rng);
  decoder_ = make_decoder(cfg_.decoder, store_, "decoder", rng);
}

BiTemporalFeatures HiSemModel::embed(const BiTemporalFeatures& raw) const {
  raw.validate();
  if (raw.height != cfg_.height || raw.width != cfg_.width || raw.channels() != cfg_.input_dim) {
    throw DimensionError("input grid " + std::to_string(raw.height) + "x" + std::to_string(raw.width) + "x" +
                         std::to_string(raw.channels()) + " does not match model " +
                         std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) + "x" +
                         std::to_string(cfg_.input_dim));
  }
  auto one = [&](const Tensor& f) { return add(apply(embedder_.project, f), embedder_.position); };
  return {one(raw.f_t1), one(raw.f_t2), raw.height, raw.width};
}

EncodeResult HiSemModel::encode(const BiTemporalFeatures& raw, std::optional<int> path_override,
                                bool keep_layers) const {
  EncodeResult out;
  out.embedded = embed(raw);
  out.refined = bdam_forward(out.embedded, bdam_, keep_layers ? &out.layers : nullptr);
  out.hasd = hasd_forward(out.refined, hasd_, cfg_.hasd.moe, path_override);
  return out;
}

Tensor HiSemModel::caption_logits(const Tensor& visual, std::span<const int> ids) const {
  return decode_sequence(visual, ids, decoder_);
}

std::vector<int> HiSemModel::generate(const Tensor& visual) const {
  return generate_greedy(visual, decoder_, cfg_.decoder.max_words);
}

void HiSemModel::load_values(const std::vector<NamedTensor>& values) {
  for (const auto& entry : store_.entries()) {
    auto it = std::find_if(values.begin(), values.end(),
                           [&](const NamedTensor& v) { return v.name == entry.name; });
    if (it == values.end()) throw std::runtime_error("checkpoint lacks parameter " + entry.name);
    if (it->tensor.shape() != entry.tensor.shape()) {
      throw DimensionError("parameter " + entry.name + " has shape " + to_string(it->tensor.shape()) +
                           " in checkpoint, model expects " + to_string(entry.tensor.shape()));
    }
    Tensor target = entry.tensor;
    auto dst = target.mutable_values();
    auto src = it->tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace hisem
