#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hisem/bdam.hpp"
#include "hisem/decoder.hpp"
#include "hisem/hasd.hpp"
#include "hisem/params.hpp"

// Full captioner: token embedder -> BDAM stack -> HASD -> caption decoder.

namespace hisem {

struct ModelConfig {
  std::size_t input_dim = 64;  // channels of the raw feature grids
  std::size_t height = 7;
  std::size_t width = 7;
  std::size_t dim = 64;
  BdamConfig bdam;
  HasdConfig hasd;
  DecoderConfig decoder;

  /// Copies `dim` into the sub-configs and checks depths and grid extents.
  void finalize();
};

struct EmbedderParams {
  LinearParams project;  // [input_dim -> dim]
  Tensor position;       // [L x dim], shared by both streams
};

struct EncodeResult {
  BiTemporalFeatures embedded;  // BDAM input
  BiTemporalFeatures refined;   // BDAM output
  std::vector<BiTemporalFeatures> layers;  // filled only on request
  HasdOutput hasd;
};

class HiSemModel {
 public:
  /// Parameters are drawn from `seed` in registration order.
  HiSemModel(ModelConfig cfg, std::uint64_t seed);

  HiSemModel(const HiSemModel&) = delete;
  HiSemModel& operator=(const HiSemModel&) = delete;
  HiSemModel(HiSemModel&&) = default;
  HiSemModel& operator=(HiSemModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const EmbedderParams& embedder() const { return embedder_; }
  const std::vector<BdamLayerParams>& bdam() const { return bdam_; }
  const HasdParams& hasd() const { return hasd_; }
  const DecoderParams& decoder() const { return decoder_; }

  BiTemporalFeatures embed(const BiTemporalFeatures& raw) const;
  /// `path_override` forces the HASD path (0 unchanged, 1 changed).
  EncodeResult encode(const BiTemporalFeatures& raw, std::optional<int> path_override = std::nullopt,
                      bool keep_layers = false) const;
  /// Teacher-forced logits [n x V] for one BOS..EOS sequence.
  Tensor caption_logits(const Tensor& visual, std::span<const int> ids) const;
  std::vector<int> generate(const Tensor& visual) const;

  /// Overwrites every parameter from a name -> values table. Throws on a
  /// missing name or a shape mismatch.
  void load_values(const std::vector<NamedTensor>& values);

 private:
  ModelConfig cfg_;
  ParamStore store_;
  EmbedderParams embedder_;
  std::vector<BdamLayerParams> bdam_;
  HasdParams hasd_;
  DecoderParams decoder_;
};

}  // namespace hisem
