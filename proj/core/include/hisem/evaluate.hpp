#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hisem/data.hpp"
#include "hisem/hasd.hpp"
#include "hisem/metrics.hpp"
#include "hisem/model.hpp"
#include "hisem/vocab.hpp"

// Caption a dataset with predicted or ground-truth routing and score it per
// stratum; compare the two routing modes through the rho table.

namespace hisem {

struct Prediction {
  std::string id;
  std::string caption;
  int label = 0;
  RoutingDecision decision;
};

std::vector<Prediction> predict(const HiSemModel& model, const Vocabulary& vocab,
                                const std::vector<DatasetRecord>& records, RouteSource routing);

struct EvalResult {
  RouteSource routing = RouteSource::kPredicted;
  std::string hash;  // identifies the checkpoint + data pair
  std::array<MetricReport, 3> reports;  // all, changed, unchanged
  std::vector<Prediction> predictions;
};

EvalResult evaluate(const HiSemModel& model, const Vocabulary& vocab, const std::vector<DatasetRecord>& records,
                    RouteSource routing);

/// FNV-1a 64 over the bytes of each file in order, as 16 hex digits.
std::string content_hash(const std::vector<std::filesystem::path>& files);

std::string eval_to_json(const EvalResult& result);
/// Reads back the routing mode, hash and reports (predictions are skipped).
EvalResult eval_from_json(const std::string& text);

struct RhoCell {
  std::string metric;  // bleu1 .. s_star_m
  double pre = 0.0;
  double gt = 0.0;
  std::optional<double> rho;  // empty when the router accuracy did not move
};

struct RhoRow {
  Stratum stratum = Stratum::kAll;
  double acc_pre = 0.0;
  double acc_gt = 0.0;
  std::vector<RhoCell> cells;
};

/// One row per stratum; metrics absent from either report are skipped.
/// Throws std::invalid_argument when the two results have different hashes
/// or the wrong routing modes.
std::vector<RhoRow> rho_table(const EvalResult& pre, const EvalResult& gt);
std::string rho_to_json(const std::vector<RhoRow>& rows, const std::string& hash);
std::string format_rho(const std::vector<RhoRow>& rows);

}  // namespace hisem
