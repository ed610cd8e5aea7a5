#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "grad_cases.hpp"
#include "hisem/checkpoint.hpp"
#include "hisem/data.hpp"
#include "hisem/model.hpp"
#include "hisem/ops.hpp"
#include "hisem/training.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace hisem;
using hisem::testing::random_tensor;
using hisem::testing::slurp;
using hisem::testing::TempDir;

namespace {

CurriculumConfig curriculum(std::size_t t, std::optional<std::size_t> w) {
  CurriculumConfig c;
  c.total_epochs = t;
  c.warmup_epochs = w;
  return c;
}

Tensor scalar_param(Real v) { return Tensor::parameter({1}, {v}); }

ModelConfig tiny_model_config(std::size_t input_dim, std::size_t h, std::size_t w, std::size_t vocab) {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.height = h;
  cfg.width = w;
  cfg.dim = 4;
  cfg.bdam = testing::small_bdam(2);
  cfg.hasd = testing::small_hasd();
  cfg.decoder.ffn_hidden = 6;
  cfg.decoder.max_words = 12;
  cfg.decoder.vocab_size = vocab;
  cfg.finalize();
  return cfg;
}

struct TinyRun {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> val;
  Vocabulary vocab;
  ModelConfig cfg;

  TinyRun() {
    SynthConfig sc;
    sc.height = 2;
    sc.width = 2;
    sc.dim = 6;
    train = synth_generate(4, sc, 7);
    val = synth_generate(2, sc, 8);
    std::vector<std::string> caps;
    for (const auto& r : train) caps.insert(caps.end(), r.captions.begin(), r.captions.end());
    vocab = Vocabulary::build(caps, 1);
    cfg = tiny_model_config(sc.dim, 2, 2, vocab.size());
  }

  TrainOptions options(const std::filesystem::path& out, std::size_t epochs) const {
    TrainOptions o;
    o.curriculum.total_epochs = epochs;
    o.curriculum.learning_rate = 1e-2;
    o.curriculum.batch_size = 3;
    o.curriculum.seed = 5;
    o.out_dir = out;
    return o;
  }
};

}  // namespace

TEST_CASE("curriculum config") {
  CurriculumConfig c;
  CHECK(c.lambda == 0.8);
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.warmup() == 10);
  CHECK(curriculum(7, std::nullopt).warmup() == 1);
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(curriculum(5, 5).validate(), std::invalid_argument);
  CHECK_THROWS_AS(curriculum(0, 0).validate(), std::invalid_argument);
  auto bad = c;
  bad.lambda = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("ramp_factor") {
  const auto c = curriculum(10, 2);
  CHECK(ramp_factor(0, c) == 0.0);
  CHECK(ramp_factor(1, c) == 0.0);
  CHECK(ramp_factor(2, c) == 0.0);
  CHECK(ramp_factor(6, c) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(ramp_factor(10, c) == 1.0);
  CHECK_THROWS_AS(ramp_factor(11, c), std::out_of_range);
  for (std::size_t e = 2; e <= 10; ++e) {
    const Real oracle = 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<Real>(e - 2) / 8.0));
    CHECK(ramp_factor(e, c) == doctest::Approx(oracle).epsilon(1e-15));
  }
  for (std::size_t t = 1; t <= 40; ++t) {
    for (std::size_t w = 0; w < t; ++w) {
      const auto cfg = curriculum(t, w);
      Real prev = 0.0;
      for (std::size_t e = 0; e <= t; ++e) {
        const Real a = ramp_factor(e, cfg);
        REQUIRE(a >= prev);
        REQUIRE(a >= 0.0);
        REQUIRE(a <= 1.0);
        if (e < w) REQUIRE(a == 0.0);
        prev = a;
      }
      REQUIRE(prev == 1.0);
    }
  }
}

TEST_CASE("total_loss examples") {
  const auto c = curriculum(10, 2);
  Tensor cap = Tensor({1}, {1.25});
  Tensor cls = Tensor({1}, {0.5});
  CHECK(total_loss(cap, cls, 0, c).item() == 1.25);
  CHECK(total_loss(cap, cls, 10, c).item() == doctest::Approx(1.25 + 0.8 * 0.5).epsilon(1e-15));
  CHECK(total_loss(cap, cls, 6, c).item() == doctest::Approx(1.25 + 0.8 * 0.5 * 0.5).epsilon(1e-15));
  for (std::size_t e = 0; e <= 10; ++e) CHECK(total_loss(cap, Tensor({1}, {0.0}), e, c).item() == 1.25);
  CHECK_THROWS_AS(total_loss(Tensor({2}, {1.0, 2.0}), cls, 0, c), DimensionError);
}

TEST_CASE("classification_loss") {
  const auto c = curriculum(10, 2);
  Tensor logits = Tensor::parameter({1, 2}, {0.3, -0.2});
  const Real expected = std::log(1.0 + std::exp(-0.5));
  CHECK(classification_loss({logits}, {0}, 5, c).item() == doctest::Approx(expected).epsilon(1e-14));
  CHECK_THROWS_AS(classification_loss({logits}, {2}, 5, c), std::out_of_range);
  CHECK_THROWS_AS(classification_loss({logits}, {0, 1}, 5, c), std::invalid_argument);
  CHECK_THROWS_AS(classification_loss({}, {}, 5, c), std::invalid_argument);

  // Epoch 1 is warm-up (detached); epoch 2 is attached but alpha(W) = 0.
  for (std::size_t epoch : {1u, 2u}) {
    Tensor l = Tensor::parameter({1, 2}, {0.3, -0.2});
    Tape tape;
    Tensor loss = total_loss(Tensor::parameter({1}, {1.0}), classification_loss({l}, {0}, epoch, c), epoch, c);
    tape.backward(loss);
    CHECK(testing::max_abs(l.grad_view()) == 0.0);
  }
  Tensor l = Tensor::parameter({1, 2}, {0.3, -0.2});
  Tape tape;
  tape.backward(total_loss(Tensor::parameter({1}, {1.0}), classification_loss({l}, {0}, 3, c), 3, c));
  CHECK(testing::max_abs(l.grad_view()) > 0.0);
}

TEST_CASE("warm-up blocks the routing gradient into W_g") {
  // Ground-truth routing: the caption path never reads the router, so W_g
  // can only be reached through the classification term.
  Rng rng(3);
  ModelConfig cfg = tiny_model_config(3, 2, 2, 8);
  HiSemModel model(cfg, 11);
  testing::jitter(model.params(), rng);
  Tensor a = random_tensor({4, 3}, rng), b = random_tensor({4, 3}, rng);
  const std::vector<int> ids{Vocabulary::kBos, 4, 6, Vocabulary::kEos};
  const std::vector<int> next{4, 6, Vocabulary::kEos, -1};
  const auto c = curriculum(10, 2);
  const int label = 1;
  auto loss_at = [&](std::size_t epoch) {
    EncodeResult enc = model.encode({a, b, 2, 2}, label);
    Tensor l_cap = cross_entropy(model.caption_logits(enc.hasd.visual, ids), next);
    return total_loss(l_cap, classification_loss({enc.hasd.logits}, {label}, epoch, c), epoch, c);
  };
  Tensor router = model.hasd().router;
  auto probe = [&](std::size_t epoch) {
    Real worst = 0.0;
    auto values = router.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      values[i] = saved + 1e-4;
      const Real up = loss_at(epoch).item();
      values[i] = saved - 1e-4;
      const Real down = loss_at(epoch).item();
      values[i] = saved;
      worst = std::max(worst, std::fabs(up - down) / 2e-4);
    }
    return worst;
  };
  auto analytic = [&](std::size_t epoch) {
    model.params().zero_grad();
    Tape tape;
    tape.backward(loss_at(epoch));
    Real g = testing::max_abs(router.grad_view());
    model.params().zero_grad();
    return g;
  };
  CHECK(probe(0) == 0.0);
  CHECK(probe(1) == 0.0);
  CHECK(analytic(0) == 0.0);
  CHECK(analytic(1) == 0.0);
  CHECK(probe(5) > 1e-6);
  CHECK(analytic(5) == doctest::Approx(probe(5)).epsilon(1e-5));

  // The caption path still trains the shared trunk during warm-up.
  model.params().zero_grad();
  {
    Tape tape;
    tape.backward(loss_at(0));
  }
  CHECK(testing::max_abs(model.embedder().project.weight.grad_view()) > 0.0);
  model.params().zero_grad();
}

TEST_CASE("adam") {
  SUBCASE("zero gradients leave parameters unchanged and decay moments") {
    ParamStore store;
    Tensor x = store.add("x", Tensor::parameter({2}, {0.5, -1.5}));
    auto opt = OptimizerState::for_params(store, {});
    opt.m[0] = {0.2, -0.4};
    opt.v[0] = {0.01, 0.04};
    optimizer_step(store, opt);
    CHECK(x[0] == doctest::Approx(0.5 - 1e-4 * (0.18 / 0.1) / (std::sqrt(0.00999 / 0.001) + 1e-8)));
    // Parameters without a gradient buffer still count as zero-grad: with
    // fresh moments nothing moves at all.
    ParamStore fresh;
    Tensor y = fresh.add("y", Tensor::parameter({2}, {0.5, -1.5}));
    auto fresh_opt = OptimizerState::for_params(fresh, {});
    optimizer_step(fresh, fresh_opt);
    CHECK(y[0] == 0.5);
    CHECK(y[1] == -1.5);
    CHECK(fresh_opt.step == 1);
    CHECK(opt.m[0][0] == doctest::Approx(0.18));
    CHECK(opt.v[0][1] == doctest::Approx(0.04 * 0.999));
  }

  SUBCASE("hand single step") {
    ParamStore store;
    Tensor x = store.add("x", scalar_param(0.5));
    x.mutable_grad()[0] = 2.0;
    AdamConfig h;
    h.learning_rate = 0.1;
    auto opt = OptimizerState::for_params(store, h);
    optimizer_step(store, opt);
    // m = 0.1 * 2, v = 0.001 * 4; corrected: m^ = 2, v^ = 4.
    CHECK(opt.m[0][0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(opt.v[0][0] == doctest::Approx(0.004).epsilon(1e-15));
    CHECK(x[0] == doctest::Approx(0.5 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
  }

  SUBCASE("minimizes x^2") {
    ParamStore store;
    Tensor x = store.add("x", scalar_param(1.0));
    AdamConfig h;
    h.learning_rate = 1e-2;
    auto opt = OptimizerState::for_params(store, h);
    std::size_t steps = 0;
    while (std::fabs(x[0]) >= 1e-2 && steps < 2000) {
      store.zero_grad();
      Tape tape;
      tape.backward(mul(x, x));
      optimizer_step(store, opt);
      ++steps;
    }
    CHECK(std::fabs(x[0]) < 1e-2);
    // Scalar oracle of the same recurrence.
    Real xs = 1.0, m = 0.0, v = 0.0;
    for (std::size_t t = 1; t <= steps; ++t) {
      const Real g = 2.0 * xs;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      xs -= 1e-2 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(x[0] == doctest::Approx(xs).epsilon(1e-12));
  }

  SUBCASE("non-finite gradient names the parameter") {
    ParamStore store;
    Tensor a = store.add("encoder.a", scalar_param(1.0));
    Tensor b = store.add("encoder.b", scalar_param(2.0));
    a.mutable_grad()[0] = 1.0;
    b.mutable_grad()[0] = std::numeric_limits<Real>::quiet_NaN();
    auto opt = OptimizerState::for_params(store, {});
    try {
      optimizer_step(store, opt);
      FAIL("expected a domain_error");
    } catch (const std::domain_error& e) {
      CHECK(std::string(e.what()).find("encoder.b") != std::string::npos);
    }
    CHECK(a[0] == 1.0);
    CHECK(opt.step == 0);
  }

  SUBCASE("mismatched state") {
    ParamStore store;
    store.add("x", scalar_param(1.0));
    OptimizerState empty;
    CHECK_THROWS_AS(optimizer_step(store, empty), std::invalid_argument);
  }
}

TEST_CASE("clip_grad_norm") {
  ParamStore store;
  Tensor a = store.add("a", scalar_param(0.0));
  Tensor b = store.add("b", scalar_param(0.0));
  store.add("c", scalar_param(0.0));
  a.mutable_grad()[0] = 3.0;
  b.mutable_grad()[0] = 4.0;
  CHECK(clip_grad_norm(store, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == 3.0);
  CHECK(clip_grad_norm(store, 0.0) == doctest::Approx(5.0));
  CHECK(b.grad()[0] == 4.0);
  CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("checkpoint format") {
  const std::vector<CheckpointEntry> entries = {
      {"w", {2, 3}, {1, 2, 3, 4, 5, -6.5}},
      {"b", {1}, {std::numeric_limits<Real>::quiet_NaN()}},
      {"long.name/with.dots", {2}, {1e-300, 1e300}}};
  const auto bytes = encode_checkpoint(entries);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HSEM");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  // Header + entry bytes: 4 + 4 + 4, then per entry 4 + name + 4 + 8 rank + 8 numel.
  CHECK(bytes.size() == 12 + (4 + 1 + 4 + 16 + 48) + (4 + 1 + 4 + 8 + 8) + (4 + 19 + 4 + 8 + 16));

  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 3);
  CHECK(back[0].name == "w");
  CHECK(back[0].shape == Shape{2, 3});
  CHECK(back[0].values == entries[0].values);
  CHECK(std::isnan(back[1].values[0]));
  CHECK(back[2].values == entries[2].values);
  CHECK(encode_checkpoint(back) == bytes);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad_magic), doctest::Contains("magic"), std::runtime_error);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad_version), doctest::Contains("version"), std::runtime_error);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    std::vector<char> cut(bytes.begin(), bytes.begin() + static_cast<long>(n));
    REQUIRE_THROWS_AS(decode_checkpoint(cut), std::runtime_error);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), std::runtime_error);
  CHECK_THROWS_AS(encode_checkpoint({{"x", {2}, {1.0}}}), DimensionError);

  CHECK(has_entry(entries, "b"));
  CHECK_FALSE(has_entry(entries, "missing"));
  CHECK_THROWS_WITH_AS(find_entry(entries, "missing"), doctest::Contains("missing"), std::out_of_range);

  TempDir dir("ckpt");
  write_checkpoint(dir / "a.ckpt", entries);
  CHECK(read_checkpoint(dir / "a.ckpt").size() == 3);
  CHECK_THROWS_WITH_AS(read_checkpoint(dir / "nope.ckpt"), doctest::Contains("nope.ckpt"), std::runtime_error);
  testing::spit(dir / "junk.ckpt", "HSEM");
  CHECK_THROWS_WITH_AS(read_checkpoint(dir / "junk.ckpt"), doctest::Contains("junk.ckpt"), std::runtime_error);
}

TEST_CASE("snapshot round trip") {
  TinyRun run;
  HiSemModel model(run.cfg, 1);
  auto opt = OptimizerState::for_params(model.params(), {});
  opt.step = 7;
  opt.m[0][0] = 0.25;
  opt.v[1][0] = 0.5;
  TrainReport report;
  report.rows.push_back({0, 1.5, 0.7, 0.0, 50.0, std::nullopt, 3.0});
  report.rows.push_back({1, 1.2, 0.6, 0.5, 75.0, 12.5, 3.0});
  report.best_epoch = 1;
  report.best_val_s_star_m = 12.5;
  const auto snap = training_snapshot(model, opt, report, 2);

  HiSemModel other(run.cfg, 2);
  ResumeState s = restore_snapshot(other, snap, {});
  CHECK(s.epochs_done == 2);
  CHECK(s.optimizer.step == 7);
  CHECK(s.optimizer.m[0][0] == 0.25);
  CHECK(s.optimizer.v[1][0] == 0.5);
  CHECK(s.report.to_csv() == report.to_csv());
  CHECK(s.report.best_epoch == report.best_epoch);
  CHECK(s.report.best_val_s_star_m == report.best_val_s_star_m);
  const auto& pa = model.params().entries();
  const auto& pb = other.params().entries();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::equal(pa[i].tensor.values().begin(), pa[i].tensor.values().end(), pb[i].tensor.values().begin()));
  }
}

TEST_CASE("train_loop is reproducible and reports the ramp") {
  TinyRun run;
  TempDir dir("train");
  auto go = [&](const std::string& name) {
    HiSemModel model(run.cfg, 21);
    return train_loop(model, run.vocab, run.train, run.val, run.options(dir / name, 2));
  };
  const TrainReport a = go("a");
  const TrainReport b = go("b");
  CHECK(a.to_csv() == b.to_csv());
  CHECK(a.to_json() == b.to_json());
  CHECK(slurp(dir / "a" / "model.ckpt") == slurp(dir / "b" / "model.ckpt"));
  CHECK(slurp(dir / "a" / "best.ckpt") == slurp(dir / "b" / "best.ckpt"));
  for (const char* f : {"model.ckpt", "best.ckpt", "report.csv", "report.json", "timing.csv"}) {
    CHECK(std::filesystem::exists(dir / "a" / f));
  }
  CHECK(slurp(dir / "a" / "report.csv") == a.to_csv());

  REQUIRE(a.rows.size() == 2);
  const auto cc = run.options(dir.path(), 2).curriculum;
  for (const auto& r : a.rows) {
    CHECK(r.alpha == ramp_factor(r.epoch, cc));
    CHECK(std::isfinite(r.caption_loss));
    CHECK(r.router_accuracy >= 0.0);
    CHECK(r.router_accuracy <= 100.0);
    CHECK(r.val_s_star_m.has_value());
  }
  CHECK(a.best_epoch.has_value());

  auto j = nlohmann::json::parse(slurp(dir / "a" / "report.json"));
  CHECK(j["epochs"].size() == 2);
  CHECK(j["epochs"][1]["alpha"].get<Real>() == a.rows[1].alpha);
  CHECK(slurp(dir / "a" / "report.csv").rfind("epoch,caption_loss,routing_loss,alpha,router_accuracy,val_s_star_m\n", 0) == 0);
}

TEST_CASE("resume continues the same trajectory") {
  TinyRun run;
  TempDir dir("resume");
  auto opts = run.options(dir / "full", 4);
  opts.checkpoint_every = 2;
  opts.eval_every = 2;
  {
    HiSemModel model(run.cfg, 33);
    train_loop(model, run.vocab, run.train, run.val, opts);
  }
  REQUIRE(std::filesystem::exists(dir / "full" / "epoch_0002.ckpt"));
  REQUIRE(std::filesystem::exists(dir / "full" / "epoch_0004.ckpt"));
  auto resumed = opts;
  resumed.out_dir = dir / "resumed";
  {
    HiSemModel model(run.cfg, 999);  // parameters come from the checkpoint
    train_loop(model, run.vocab, run.train, run.val, resumed, dir / "full" / "epoch_0002.ckpt");
  }
  CHECK(slurp(dir / "full" / "model.ckpt") == slurp(dir / "resumed" / "model.ckpt"));
  CHECK(slurp(dir / "full" / "report.csv") == slurp(dir / "resumed" / "report.csv"));
  CHECK(slurp(dir / "full" / "report.json") == slurp(dir / "resumed" / "report.json"));

  // A checkpoint past the configured epochs is rejected.
  auto shorter = run.options(dir / "short", 3);
  HiSemModel model(run.cfg, 1);
  CHECK_THROWS_AS(train_loop(model, run.vocab, run.train, run.val, shorter, dir / "full" / "epoch_0004.ckpt"),
                  std::invalid_argument);
}

TEST_CASE("train_loop argument errors") {
  TinyRun run;
  TempDir dir("errors");
  HiSemModel model(run.cfg, 1);
  CHECK_THROWS_AS(train_loop(model, run.vocab, {}, run.val, run.options(dir / "x", 2)), std::invalid_argument);
  CHECK_THROWS_AS(train_loop(model, run.vocab, run.train, run.val, run.options({}, 2)), std::invalid_argument);
  auto bad = run.options(dir / "x", 2);
  bad.curriculum.warmup_epochs = 2;
  CHECK_THROWS_AS(train_loop(model, run.vocab, run.train, run.val, bad), std::invalid_argument);
  CHECK_THROWS_AS(train_loop(model, run.vocab, run.train, run.val, run.options(dir / "x", 2), dir / "missing.ckpt"),
                  std::runtime_error);
}
