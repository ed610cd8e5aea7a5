#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "hisem/hasd.hpp"
#include "hisem/model.hpp"
#include "hisem/training.hpp"

// Run configuration: one JSON document. "train_data" and "out_dir" are
// required; every other field has a default. Unknown keys are rejected.
//
//   {
//     "train_data": "train.jsonl", "val_data": "val.jsonl", "out_dir": "run",
//     "seed": 0,
//     "model": {"dim": 64, "bdam_layers": 3, "bdam_cond_hidden": 64, "bdam_tied": false,
//               "hasd_ffn_hidden": 64, "decoder_layers": 1, "decoder_ffn_hidden": 128,
//               "max_words": 24, "min_freq": 1},
//     "moe":   {"num_experts": 8, "num_groups": 4, "groups_topk": 2, "experts_topk": 2,
//               "num_shared_experts": 1, "expert_hidden": 64},
//     "train": {"epochs": 50, "warmup_epochs": null, "lambda_cls": 0.8, "learning_rate": 1e-4,
//               "batch_size": 64, "grad_clip": 5.0, "routing": "gt",
//               "checkpoint_every": 0, "eval_every": 1}
//   }

namespace hisem {

/// Configuration problem; `key()` names the offending field ("train.epochs").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what);
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  std::filesystem::path train_data;
  std::optional<std::filesystem::path> val_data;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;

  std::size_t dim = 64;
  std::size_t bdam_layers = 3;
  std::size_t bdam_cond_hidden = 64;
  bool bdam_tied = false;
  std::size_t hasd_ffn_hidden = 64;
  std::size_t decoder_layers = 1;
  std::size_t decoder_ffn_hidden = 128;
  std::size_t max_words = 24;
  std::size_t min_freq = 1;

  MoeConfig moe;

  std::size_t epochs = 50;
  std::optional<std::size_t> warmup_epochs;
  double lambda_cls = 0.8;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  double grad_clip = 5.0;
  TrainRouting routing = TrainRouting::kGroundTruth;
  std::size_t checkpoint_every = 0;
  std::size_t eval_every = 1;
};

/// Parses and validates a config document. Relative paths stay as written.
RunConfig parse_run_config(const std::string& json_text);

/// Reads the file, parses it, applies HISEM_SEED when set, and resolves
/// relative data paths against the config file's directory. Throws
/// ConfigError when a referenced data file does not exist.
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies the HISEM_SEED environment variable, if set.
void apply_seed_override(RunConfig& cfg);

/// The full effective configuration, every default spelled out.
std::string to_json(const RunConfig& cfg);

ModelConfig make_model_config(const RunConfig& cfg, std::size_t input_dim, std::size_t height,
                              std::size_t width, std::size_t vocab_size);
TrainOptions make_train_options(const RunConfig& cfg);

}  // namespace hisem
