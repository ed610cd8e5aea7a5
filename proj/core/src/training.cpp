#include "hisem/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "hisem/metrics.hpp"
#include "hisem/ops.hpp"
#include "json.hpp"

namespace hisem {

std::size_t CurriculumConfig::warmup() const {
  return warmup_epochs.value_or(total_epochs / 5);
}

void CurriculumConfig::validate() const {
  if (total_epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (warmup() >= total_epochs) {
    throw std::invalid_argument("warmup_epochs (" + std::to_string(warmup()) + ") must be below epochs (" +
                                std::to_string(total_epochs) + ")");
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda_cls must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
}

Real ramp_factor(std::size_t epoch, const CurriculumConfig& cfg) {
  const std::size_t t = cfg.total_epochs, w = cfg.warmup();
  if (epoch > t) {
    throw std::out_of_range("ramp_factor: epoch " + std::to_string(epoch) + " exceeds total " + std::to_string(t));
  }
  if (epoch < w) return 0.0;
  if (epoch == t) return 1.0;
  const Real x = static_cast<Real>(epoch - w) / static_cast<Real>(t - w);
  return 0.5 * (1.0 - std::cos(std::numbers::pi * x));
}

Tensor classification_loss(const std::vector<Tensor>& logits, const std::vector<int>& labels,
                           std::size_t epoch, const CurriculumConfig& cfg) {
  if (logits.empty() || logits.size() != labels.size()) {
    throw std::invalid_argument("classification_loss: need one label per routing logit row");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::out_of_range("routing label must be 0 or 1, got " + std::to_string(l));
  }
  std::vector<Tensor> rows;
  rows.reserve(logits.size());
  const bool warm = epoch < cfg.warmup();
  for (const auto& l : logits) rows.push_back(warm ? detach(l) : l);
  return cross_entropy(concat_rows(rows), labels);
}

Tensor total_loss(const Tensor& l_cap, const Tensor& l_cls, std::size_t epoch, const CurriculumConfig& cfg) {
  if (l_cap.numel() != 1 || l_cls.numel() != 1) throw DimensionError("total_loss expects scalar losses");
  if (epoch < cfg.warmup()) return add(l_cap, scale(detach(l_cls), 0.0));
  return add(l_cap, scale(l_cls, cfg.lambda * ramp_factor(epoch, cfg)));
}

OptimizerState OptimizerState::for_params(const ParamStore& store, AdamConfig hyper) {
  OptimizerState s;
  s.hyper = hyper;
  for (const auto& e : store.entries()) {
    s.m.emplace_back(e.tensor.numel(), 0.0);
    s.v.emplace_back(e.tensor.numel(), 0.0);
  }
  return s;
}

void optimizer_step(ParamStore& store, OptimizerState& state) {
  const auto& entries = store.entries();
  if (state.m.size() != entries.size() || state.v.size() != entries.size()) {
    throw std::invalid_argument("optimizer state does not match the parameter set");
  }
  for (const auto& e : entries) {
    for (Real g : e.tensor.grad_view()) {
      if (!std::isfinite(g)) throw std::domain_error("non-finite gradient in parameter " + e.name);
    }
  }
  const AdamConfig& h = state.hyper;
  ++state.step;
  const Real t = static_cast<Real>(state.step);
  const Real c1 = 1.0 - std::pow(h.beta1, t);
  const Real c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor param = entries[p].tensor;
    auto values = param.mutable_values();
    auto grad = param.grad_view();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real g = grad.empty() ? 0.0 : grad[i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      values[i] -= h.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.eps);
    }
  }
}

Real clip_grad_norm(ParamStore& store, Real max_norm) {
  Real sq = 0.0;
  for (const auto& e : store.entries()) {
    for (Real g : e.tensor.grad_view()) sq += g * g;
  }
  const Real norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Real factor = max_norm / norm;
    for (const auto& e : store.entries()) {
      if (!e.tensor.has_grad()) continue;
      for (Real& g : e.tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

namespace {

std::string fmt(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

constexpr const char* kReportColumns[] = {"caption_loss", "routing_loss", "alpha", "router_accuracy",
                                          "val_s_star_m"};

}  // namespace

std::string TrainReport::to_csv() const {
  std::string out = "epoch,caption_loss,routing_loss,alpha,router_accuracy,val_s_star_m\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + fmt(r.caption_loss) + "," + fmt(r.routing_loss) + "," + fmt(r.alpha) +
           "," + fmt(r.router_accuracy) + "," + (r.val_s_star_m ? fmt(*r.val_s_star_m) : "") + "\n";
  }
  return out;
}

std::string TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["epoch"] = r.epoch;
    row["caption_loss"] = r.caption_loss;
    row["routing_loss"] = r.routing_loss;
    row["alpha"] = r.alpha;
    row["router_accuracy"] = r.router_accuracy;
    row["val_s_star_m"] = r.val_s_star_m ? nlohmann::ordered_json(*r.val_s_star_m) : nlohmann::ordered_json();
    j["epochs"].push_back(row);
  }
  j["best_epoch"] = best_epoch ? nlohmann::ordered_json(*best_epoch) : nlohmann::ordered_json();
  j["best_val_s_star_m"] = best_val_s_star_m ? nlohmann::ordered_json(*best_val_s_star_m) : nlohmann::ordered_json();
  return j.dump(2) + "\n";
}

std::string TrainReport::timing_csv() const {
  std::string out = "epoch,wall_seconds\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.3f\n", r.epoch, r.wall_seconds);
    out += buf;
  }
  return out;
}

Real validation_score(const HiSemModel& model, const Vocabulary& vocab, const std::vector<DatasetRecord>& records) {
  std::vector<std::string> preds;
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : records) {
    EncodeResult enc = model.encode(r.features());
    preds.push_back(vocab.decode(model.generate(enc.hasd.visual)));
    refs.push_back(r.captions);
  }
  return *score_corpus(preds, refs, true).s_star_m;
}

std::vector<CheckpointEntry> training_snapshot(const HiSemModel& model, const OptimizerState& opt,
                                               const TrainReport& report, std::size_t epochs_done) {
  std::vector<CheckpointEntry> out;
  const auto& entries = model.params().entries();
  for (const auto& e : entries) {
    auto v = e.tensor.values();
    out.push_back({e.name, e.tensor.shape(), {v.begin(), v.end()}});
  }
  for (std::size_t p = 0; p < entries.size(); ++p) {
    out.push_back({"adam.m/" + entries[p].name, entries[p].tensor.shape(), opt.m[p]});
    out.push_back({"adam.v/" + entries[p].name, entries[p].tensor.shape(), opt.v[p]});
  }
  auto scalar = [&](const std::string& name, Real v) { out.push_back({name, {1}, {v}}); };
  out.push_back({"meta.grid", {2}, {static_cast<Real>(model.config().height), static_cast<Real>(model.config().width)}});
  scalar("adam.step", static_cast<Real>(opt.step));
  scalar("train.epochs_done", static_cast<Real>(epochs_done));
  constexpr Real kNan = std::numeric_limits<Real>::quiet_NaN();
  scalar("train.best_epoch", report.best_epoch ? static_cast<Real>(*report.best_epoch) : kNan);
  scalar("train.best_val_s_star_m", report.best_val_s_star_m.value_or(kNan));
  const std::size_t n = report.rows.size();
  std::vector<std::vector<Real>> cols(std::size(kReportColumns), std::vector<Real>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = report.rows[i];
    cols[0][i] = r.caption_loss;
    cols[1][i] = r.routing_loss;
    cols[2][i] = r.alpha;
    cols[3][i] = r.router_accuracy;
    cols[4][i] = r.val_s_star_m.value_or(kNan);
  }
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out.push_back({std::string("report.") + kReportColumns[c], {n == 0 ? 1 : n}, n == 0 ? std::vector<Real>{kNan} : cols[c]});
  }
  return out;
}

ResumeState restore_snapshot(HiSemModel& model, const std::vector<CheckpointEntry>& entries, AdamConfig hyper) {
  model.load_values(to_named_tensors(entries));
  ResumeState s;
  s.optimizer = OptimizerState::for_params(model.params(), hyper);
  const auto& params = model.params().entries();
  for (std::size_t p = 0; p < params.size(); ++p) {
    s.optimizer.m[p] = find_entry(entries, "adam.m/" + params[p].name).values;
    s.optimizer.v[p] = find_entry(entries, "adam.v/" + params[p].name).values;
    if (s.optimizer.m[p].size() != params[p].tensor.numel() || s.optimizer.v[p].size() != params[p].tensor.numel()) {
      throw std::runtime_error("optimizer moments for " + params[p].name + " have the wrong size");
    }
  }
  s.optimizer.step = static_cast<std::uint64_t>(find_entry(entries, "adam.step").values.at(0));
  s.epochs_done = static_cast<std::size_t>(find_entry(entries, "train.epochs_done").values.at(0));
  const Real best_epoch = find_entry(entries, "train.best_epoch").values.at(0);
  const Real best_score = find_entry(entries, "train.best_val_s_star_m").values.at(0);
  if (!std::isnan(best_epoch)) s.report.best_epoch = static_cast<std::size_t>(best_epoch);
  if (!std::isnan(best_score)) s.report.best_val_s_star_m = best_score;
  std::vector<const std::vector<Real>*> cols;
  for (const char* c : kReportColumns) cols.push_back(&find_entry(entries, std::string("report.") + c).values);
  for (std::size_t i = 0; i < s.epochs_done; ++i) {
    EpochRecord r;
    r.epoch = i;
    r.caption_loss = cols[0]->at(i);
    r.routing_loss = cols[1]->at(i);
    r.alpha = cols[2]->at(i);
    r.router_accuracy = cols[3]->at(i);
    if (!std::isnan(cols[4]->at(i))) r.val_s_star_m = cols[4]->at(i);
    s.report.rows.push_back(r);
  }
  return s;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string epoch_name(std::size_t epochs_done) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu.ckpt", epochs_done);
  return buf;
}

}  // namespace

TrainReport train_loop(HiSemModel& model, const Vocabulary& vocab, const std::vector<DatasetRecord>& train,
                       const std::vector<DatasetRecord>& val, const TrainOptions& options,
                       const std::optional<std::filesystem::path>& resume_from) {
  const CurriculumConfig& cc = options.curriculum;
  cc.validate();
  if (train.empty()) throw std::invalid_argument("training set is empty");
  if (options.out_dir.empty()) throw std::invalid_argument("training needs an output directory");
  std::filesystem::create_directories(options.out_dir);

  const AdamConfig hyper{cc.learning_rate, 0.9, 0.999, 1e-8};
  OptimizerState opt = OptimizerState::for_params(model.params(), hyper);
  TrainReport report;
  std::size_t start = 0;
  if (resume_from) {
    ResumeState s = restore_snapshot(model, read_checkpoint(*resume_from), hyper);
    opt = std::move(s.optimizer);
    report = std::move(s.report);
    start = s.epochs_done;
    if (start > cc.total_epochs) {
      throw std::invalid_argument("checkpoint " + resume_from->string() + " is past the configured epochs");
    }
  }

  // Pre-encoded inputs and caption targets.
  const std::size_t max_words = model.config().decoder.max_words;
  std::vector<BiTemporalFeatures> inputs;
  std::vector<std::vector<int>> targets;
  for (const auto& r : train) {
    inputs.push_back(r.features());
    targets.push_back(vocab.encode_caption(r.captions.at(0), max_words));
  }

  for (std::size_t epoch = start; epoch < cc.total_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cc.seed, 0x5A17ULL + epoch));
    shuffle_rng.shuffle(order);

    Real cap_sum = 0.0, cls_sum = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cc.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cc.batch_size);
      Tape tape;
      std::vector<Tensor> cap_rows, route_logits;
      std::vector<int> next_tokens, labels;
      for (std::size_t k = b0; k < b1; ++k) {
        const std::size_t i = order[k];
        const int label = train[i].label;
        std::optional<int> override;
        if (options.routing == TrainRouting::kGroundTruth) override = label;
        EncodeResult enc = model.encode(inputs[i], override);
        const auto& ids = targets[i];
        cap_rows.push_back(model.caption_logits(enc.hasd.visual, ids));
        for (std::size_t n = 0; n + 1 < ids.size(); ++n) next_tokens.push_back(ids[n + 1]);
        next_tokens.push_back(-1);
        route_logits.push_back(enc.hasd.logits);
        labels.push_back(label);
        if (static_cast<int>(route_from_logits(enc.hasd.logits.values())) == label) ++correct;
      }
      Tensor l_cap = cross_entropy(concat_rows(cap_rows), next_tokens);
      Tensor l_cls = classification_loss(route_logits, labels, epoch, cc);
      Tensor loss = total_loss(l_cap, l_cls, epoch, cc);
      model.params().zero_grad();
      tape.backward(loss);
      clip_grad_norm(model.params(), options.grad_clip);
      optimizer_step(model.params(), opt);
      cap_sum += l_cap.item();
      cls_sum += l_cls.item();
      ++batches;
    }

    EpochRecord row;
    row.epoch = epoch;
    row.caption_loss = cap_sum / static_cast<Real>(batches);
    row.routing_loss = cls_sum / static_cast<Real>(batches);
    row.alpha = ramp_factor(epoch, cc);
    row.router_accuracy = 100.0 * static_cast<Real>(correct) / static_cast<Real>(train.size());
    const bool last = epoch + 1 == cc.total_epochs;
    const bool validate = !val.empty() && options.eval_every > 0 && ((epoch + 1) % options.eval_every == 0 || last);
    bool improved = false;
    if (validate) {
      row.val_s_star_m = validation_score(model, vocab, val);
      if (!report.best_val_s_star_m || *row.val_s_star_m > *report.best_val_s_star_m) {
        report.best_val_s_star_m = row.val_s_star_m;
        report.best_epoch = epoch;
        improved = true;
      }
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.rows.push_back(row);

    if (options.verbose) {
      std::fprintf(stderr, "epoch %zu  cap %.5f  cls %.5f  alpha %.4f  acc %.1f%s  (%.2fs)\n", epoch,
                   row.caption_loss, row.routing_loss, row.alpha, row.router_accuracy,
                   row.val_s_star_m ? ("  val S*_m " + std::to_string(*row.val_s_star_m)).c_str() : "",
                   row.wall_seconds);
    }
    const std::size_t done = epoch + 1;
    if (improved || (options.checkpoint_every > 0 && done % options.checkpoint_every == 0)) {
      const auto snap = training_snapshot(model, opt, report, done);
      if (improved) write_checkpoint(options.out_dir / "best.ckpt", snap);
      if (options.checkpoint_every > 0 && done % options.checkpoint_every == 0) {
        write_checkpoint(options.out_dir / epoch_name(done), snap);
      }
    }
  }

  write_checkpoint(options.out_dir / "model.ckpt", training_snapshot(model, opt, report, cc.total_epochs));
  write_text(options.out_dir / "report.csv", report.to_csv());
  write_text(options.out_dir / "report.json", report.to_json());
  write_text(options.out_dir / "timing.csv", report.timing_csv());
  return report;
}

}  // namespace hisem
