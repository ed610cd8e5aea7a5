#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hisem/config.hpp"
#include "hisem/data.hpp"
#include "hisem/evaluate.hpp"
#include "hisem/heatmap.hpp"
#include "hisem/model.hpp"
#include "hisem/training.hpp"
#include "hisem/vocab.hpp"

// Command bodies behind the hisem tool. A training run directory holds
// config.json (effective config), vocab.json, the checkpoints and the
// reports; a checkpoint is always loaded together with its directory's
// config.json and vocab.json.

namespace hisem {

struct GenSummary {
  std::size_t records = 0;
  std::size_t changed = 0;
  std::size_t unchanged = 0;
};

GenSummary run_gen(std::size_t n_pairs, std::uint64_t seed, const SynthConfig& synth,
                   const std::filesystem::path& out);

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);

/// Loads data, builds the vocabulary from every training caption, writes
/// config.json and vocab.json, and trains. Model weights are drawn from the
/// config seed.
TrainReport run_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume = std::nullopt,
                      bool verbose = false);

struct TrainedModel {
  RunConfig config;
  Vocabulary vocab;
  HiSemModel model;
};

TrainedModel load_trained(const std::filesystem::path& checkpoint);

struct EvalOutcome {
  EvalResult result;
  std::filesystem::path report_path;
  /// Present when the other routing mode is cached for the same hash.
  std::optional<std::vector<RhoRow>> rho;
  std::optional<std::filesystem::path> rho_path;
};

/// Writes eval_pre.json or eval_gt.json into `out_dir` (default: the
/// checkpoint's directory) and, when both modes match, rho.json.
EvalOutcome run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                     RouteSource routing, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct Description {
  std::string id;
  std::string caption;
  int label = 0;
  RoutingDecision decision;
};

/// Throws std::out_of_range for an unknown pair id.
const DatasetRecord& find_record(const std::vector<DatasetRecord>& records, const std::string& id);

/// `data` defaults to the run's training data.
Description run_describe(const std::filesystem::path& checkpoint, const std::string& pair_id,
                         const std::optional<std::filesystem::path>& data = std::nullopt,
                         RouteSource routing = RouteSource::kPredicted);

/// `identical` replaces the pair's t2 grid with its t1 grid.
std::vector<std::filesystem::path> run_heatmap(const std::filesystem::path& checkpoint, const std::string& pair_id,
                                               const std::filesystem::path& out_dir,
                                               const std::optional<std::filesystem::path>& data = std::nullopt,
                                               bool identical = false);

}  // namespace hisem
