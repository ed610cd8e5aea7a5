#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hisem/checkpoint.hpp"
#include "hisem/data.hpp"
#include "hisem/model.hpp"
#include "hisem/vocab.hpp"

// Curriculum training: caption cross-entropy plus a routing classification
// term that is detached during warm-up and then ramped in with a half-cosine.
// Epochs are numbered 0 .. T-1; epoch e uses ramp_factor(e).

namespace hisem {

struct CurriculumConfig {
  std::size_t total_epochs = 50;
  /// Defaults to 20% of total_epochs (rounded down) when unset.
  std::optional<std::size_t> warmup_epochs;
  Real lambda = 0.8;
  Real learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  std::size_t warmup() const;
  /// Throws std::invalid_argument unless 0 <= W < T, lambda >= 0, lr > 0, batch >= 1.
  void validate() const;
};

/// 0 for e < W, then 0.5 (1 - cos(pi (e - W) / (T - W))); 1 at e = T.
/// Throws std::out_of_range for e > T.
Real ramp_factor(std::size_t epoch, const CurriculumConfig& cfg);

/// Mean routing cross-entropy over a batch of [1 x 2] logits. During warm-up
/// the logits are detached, so nothing upstream receives a gradient from it.
Tensor classification_loss(const std::vector<Tensor>& logits, const std::vector<int>& labels,
                           std::size_t epoch, const CurriculumConfig& cfg);

/// L_cap + lambda * alpha(e) * L_cls; during warm-up exactly L_cap, with the
/// classification term cut from the tape.
Tensor total_loss(const Tensor& l_cap, const Tensor& l_cls, std::size_t epoch, const CurriculumConfig& cfg);

struct AdamConfig {
  Real learning_rate = 1e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

struct OptimizerState {
  AdamConfig hyper;
  std::vector<std::vector<Real>> m;  // one per ParamStore entry, same order
  std::vector<std::vector<Real>> v;
  std::uint64_t step = 0;

  static OptimizerState for_params(const ParamStore& store, AdamConfig hyper);
};

/// One bias-corrected Adam update from the gradients held by the store's
/// tensors. Parameters without a gradient buffer are treated as zero-grad.
/// Throws std::domain_error naming the first parameter with a non-finite
/// gradient, before anything is modified.
void optimizer_step(ParamStore& store, OptimizerState& state);

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm` <= 0 disables clipping.
Real clip_grad_norm(ParamStore& store, Real max_norm);

enum class TrainRouting { kGroundTruth, kPredicted };

struct TrainOptions {
  CurriculumConfig curriculum;
  Real grad_clip = 5.0;
  TrainRouting routing = TrainRouting::kGroundTruth;
  /// Write epoch_NNNN.ckpt after every N-th epoch; 0 disables.
  std::size_t checkpoint_every = 0;
  /// Validate (greedy decoding, S*_m) every N epochs and after the last; 0 disables.
  std::size_t eval_every = 1;
  std::filesystem::path out_dir;
  bool verbose = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  Real caption_loss = 0.0;
  Real routing_loss = 0.0;
  Real alpha = 0.0;
  Real router_accuracy = 0.0;  // percentage, predicted path vs label
  std::optional<Real> val_s_star_m;
  double wall_seconds = 0.0;  // kept out of the deterministic reports
};

struct TrainReport {
  std::vector<EpochRecord> rows;
  std::optional<std::size_t> best_epoch;
  std::optional<Real> best_val_s_star_m;

  std::string to_csv() const;
  std::string to_json() const;
  std::string timing_csv() const;
};

/// Greedy captions with predicted routing; returns S*_m of the whole set.
Real validation_score(const HiSemModel& model, const Vocabulary& vocab,
                      const std::vector<DatasetRecord>& records);

/// Checkpoint payload: parameters, Adam moments and step, epoch counter, best
/// validation score and the report rows so far.
std::vector<CheckpointEntry> training_snapshot(const HiSemModel& model, const OptimizerState& opt,
                                               const TrainReport& report, std::size_t epochs_done);

struct ResumeState {
  OptimizerState optimizer;
  TrainReport report;
  std::size_t epochs_done = 0;
};

/// Loads parameters into `model` and returns the rest of the snapshot.
ResumeState restore_snapshot(HiSemModel& model, const std::vector<CheckpointEntry>& entries,
                             AdamConfig hyper);

/// Trains on `train` (the caption target is each record's first caption),
/// validates on `val`, and writes model.ckpt, best.ckpt, epoch_NNNN.ckpt,
/// report.csv, report.json and timing.csv into options.out_dir.
TrainReport train_loop(HiSemModel& model, const Vocabulary& vocab, const std::vector<DatasetRecord>& train,
                       const std::vector<DatasetRecord>& val, const TrainOptions& options,
                       const std::optional<std::filesystem::path>& resume_from = std::nullopt);

}  // namespace hisem
