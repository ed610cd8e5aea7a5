#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "grad_cases.hpp"
#include "hisem/decoder.hpp"
#include "hisem/ops.hpp"
#include "hisem/text.hpp"
#include "hisem/training.hpp"
#include "hisem/vocab.hpp"
#include "support.hpp"

using namespace hisem;
using hisem::testing::random_tensor;
using hisem::testing::to_vec;

namespace {

void fill(const Tensor& t, Real value) {
  Tensor h = t;
  for (auto& v : h.mutable_values()) v = value;
}

struct Tiny {
  DecoderConfig cfg;
  ParamStore store;
  DecoderParams p;
  Tensor visual;

  explicit Tiny(std::uint64_t seed, std::size_t vocab = 9, std::size_t max_words = 6) {
    Rng rng(seed);
    cfg.dim = 8;
    cfg.ffn_hidden = 12;
    cfg.max_words = max_words;
    cfg.vocab_size = vocab;
    p = make_decoder(cfg, store, "decoder", rng);
    visual = random_tensor({5, cfg.dim}, rng);
  }
};

std::vector<Real> log_softmax_row(std::span<const Real> row) {
  const Real m = *std::max_element(row.begin(), row.end());
  Real z = 0.0;
  for (Real x : row) z += std::exp(x - m);
  std::vector<Real> out;
  for (Real x : row) out.push_back(x - m - std::log(z));
  return out;
}

// Beam search over full prefixes; every candidate is rescored from scratch by
// its cumulative log-probability, so nothing is shared with the greedy loop.
std::vector<int> beam_search(const Tensor& visual, const DecoderParams& p, std::size_t width,
                             std::size_t max_len) {
  struct Beam {
    std::vector<int> ids;
    Real score;
    bool done;
  };
  std::vector<Beam> beams{{{Vocabulary::kBos}, 0.0, false}};
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<Beam> next;
    for (const auto& b : beams) {
      if (b.done) {
        next.push_back(b);
        continue;
      }
      Tensor logits = decode_sequence(visual, b.ids, p);
      const std::size_t vocab = logits.dim(1);
      auto lp = log_softmax_row(logits.values().subspan((b.ids.size() - 1) * vocab, vocab));
      for (std::size_t v = 0; v < vocab; ++v) {
        Beam c = b;
        c.score += lp[v];
        if (static_cast<int>(v) == Vocabulary::kEos) {
          c.done = true;
        } else {
          c.ids.push_back(static_cast<int>(v));
        }
        next.push_back(std::move(c));
      }
    }
    std::stable_sort(next.begin(), next.end(), [](const Beam& a, const Beam& b) { return a.score > b.score; });
    next.resize(std::min(width, next.size()));
    beams = std::move(next);
    if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.done; })) break;
  }
  return {beams.front().ids.begin() + 1, beams.front().ids.end()};
}

}  // namespace

TEST_CASE("decoder config") {
  DecoderConfig cfg;
  CHECK(cfg.dim == 64);
  CHECK(cfg.layers == 1);
  CHECK(cfg.max_positions() == cfg.max_words + 2);
  ParamStore store;
  Rng rng(1);
  CHECK_THROWS_AS(make_decoder(cfg, store, "d", rng), std::invalid_argument);
  cfg.vocab_size = 6;
  cfg.layers = 0;
  CHECK_THROWS_AS(make_decoder(cfg, store, "d", rng), std::invalid_argument);
}

TEST_CASE("caption batch") {
  auto batch = CaptionBatch::from_sequences({{1, 4, 5, 2}, {1, 2}});
  CHECK(batch.width() == 4);
  CHECK(batch.ids[1] == std::vector<int>{1, 2, 0, 0});
  CHECK(batch.lengths == std::vector<std::size_t>{4, 2});
  CHECK(batch.is_pad(1, 2));
  CHECK_FALSE(batch.is_pad(0, 3));
  CHECK_NOTHROW(batch.validate(6));
  CHECK_THROWS_AS(batch.validate(5), std::out_of_range);

  auto no_bos = CaptionBatch::from_sequences({{4, 5, 2}});
  CHECK_THROWS_AS(no_bos.validate(6), std::invalid_argument);
  auto no_eos = CaptionBatch::from_sequences({{1, 4, 5}});
  CHECK_THROWS_AS(no_eos.validate(6), std::invalid_argument);
  auto junk_pad = CaptionBatch::from_sequences({{1, 2}});
  junk_pad.ids[0].push_back(4);
  CHECK_THROWS_AS(junk_pad.validate(6), std::invalid_argument);
  auto negative = CaptionBatch::from_sequences({{1, -1, 2}});
  CHECK_THROWS_AS(negative.validate(6), std::out_of_range);
}

TEST_CASE("decoder_forward shape and id errors") {
  Tiny t(3);
  auto batch = CaptionBatch::from_sequences({{1, 4, 5, 6, 2}, {1, 7, 2}, {1, 8, 8, 2}});
  Tensor logits = decoder_forward(t.visual, batch, t.p);
  CHECK(logits.shape() == Shape{3, 5, 9});
  for (Real v : logits.values()) CHECK(std::isfinite(v));

  auto bad = CaptionBatch::from_sequences({{1, 9, 2}});
  CHECK_THROWS_AS(decoder_forward(t.visual, bad, t.p), std::out_of_range);
  std::vector<int> raw{1, 12};
  CHECK_THROWS_AS(decode_sequence(t.visual, raw, t.p), std::out_of_range);
  std::vector<int> too_long(t.cfg.max_positions() + 1, 4);
  CHECK_THROWS_AS(decode_sequence(t.visual, too_long, t.p), DimensionError);
  Rng rng(2);
  CHECK_THROWS_AS(decode_sequence(random_tensor({5, 3}, rng), raw, t.p), DimensionError);
}

TEST_CASE("causality: later tokens never reach earlier logits") {
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    Tiny t(seed);
    Rng rng(seed + 100);
    std::vector<int> ids{1};
    for (int i = 0; i < 6; ++i) ids.push_back(4 + static_cast<int>(rng.below(5)));
    const std::size_t vocab = t.cfg.vocab_size;
    Tensor base = decode_sequence(t.visual, ids, t.p);
    for (std::size_t n = 0; n + 1 < ids.size(); ++n) {
      auto changed = ids;
      changed[n + 1] = 4 + (changed[n + 1] - 4 + 1) % 5;
      Tensor other = decode_sequence(t.visual, changed, t.p);
      for (std::size_t i = 0; i <= n; ++i) {
        for (std::size_t v = 0; v < vocab; ++v) {
          REQUIRE(other[i * vocab + v] == base[i * vocab + v]);
        }
      }
      // The perturbed position itself must move, otherwise the test is vacuous.
      Real moved = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) {
        moved = std::max(moved, std::fabs(other[(n + 1) * vocab + v] - base[(n + 1) * vocab + v]));
      }
      CHECK(moved > 1e-6);
    }
  }
}

TEST_CASE("decoder gradients") {
  for (const auto& c : testing::composite_grad_cases()) {
    if (c.name != "decoder_layer") continue;
    for (std::uint64_t seed : {61u, 62u, 63u}) {
      CAPTURE(seed);
      CHECK(testing::run_case(c, seed).result.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("caption_loss examples") {
  auto batch = CaptionBatch::from_sequences({{1, 4, 5, 2}, {1, 6, 2}});

  SUBCASE("uniform logits give ln|V|") {
    Tensor logits({2, 4, 7}, std::vector<Real>(56, 0.3));
    CHECK(caption_loss(logits, batch).item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  }

  SUBCASE("saturated correct logits give about zero") {
    std::vector<Real> v(56, 0.0);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t n = 0; n + 1 < batch.lengths[b]; ++n) {
        v[(b * 4 + n) * 7 + static_cast<std::size_t>(batch.ids[b][n + 1])] = 60.0;
      }
    }
    CHECK(caption_loss(Tensor({2, 4, 7}, v), batch).item() < 1e-20);
  }

  SUBCASE("two-token vocabulary by hand") {
    // Row 1 0 1: predict 0 from position 0 and 1 from position 1.
    CaptionBatch two;
    two.ids = {{1, 0, 1}};
    two.lengths = {3};
    Tensor logits({1, 3, 2}, {1.0, 2.0, 0.5, -1.5, 9.0, -9.0});
    const Real expected = 0.5 * (std::log(1.0 + std::exp(1.0)) + std::log(1.0 + std::exp(2.0)));
    CHECK(caption_loss(logits, two).item() == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(caption_loss(Tensor({2, 3, 7}, std::vector<Real>(42, 0.0)), batch), DimensionError);
    CHECK_THROWS_AS(caption_loss(Tensor({8, 7}, std::vector<Real>(56, 0.0)), batch), DimensionError);
  }
}

TEST_CASE("caption_loss ignores padding and batch order") {
  Rng rng(17);
  auto batch = CaptionBatch::from_sequences({{1, 4, 5, 6, 2}, {1, 6, 2}, {1, 5, 5, 2}});
  Tensor logits = random_tensor({3, 5, 7}, rng, 2.0);
  const Real loss = caption_loss(logits, batch).item();

  // Oracle: mean over real targets only.
  Real total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t n = 0; n + 1 < batch.lengths[b]; ++n) {
      auto lp = log_softmax_row(logits.values().subspan((b * 5 + n) * 7, 7));
      total -= lp[static_cast<std::size_t>(batch.ids[b][n + 1])];
      ++count;
    }
  }
  CHECK(count == 4 + 2 + 3);
  CHECK(loss == doctest::Approx(total / static_cast<Real>(count)).epsilon(1e-12));

  // Garbage in the padded logits changes nothing.
  auto noisy = to_vec(logits);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t n = batch.lengths[b] - 1; n < 5; ++n) {
      for (std::size_t v = 0; v < 7; ++v) noisy[(b * 5 + n) * 7 + v] = 100.0 * rng.normal();
    }
  }
  CHECK(caption_loss(Tensor({3, 5, 7}, noisy), batch).item() == doctest::Approx(loss).epsilon(1e-12));

  // Reverse the batch order.
  CaptionBatch rev;
  std::vector<Real> rev_logits;
  for (std::size_t b = 3; b-- > 0;) {
    rev.ids.push_back(batch.ids[b]);
    rev.lengths.push_back(batch.lengths[b]);
    auto row = logits.values().subspan(b * 35, 35);
    rev_logits.insert(rev_logits.end(), row.begin(), row.end());
  }
  CHECK(caption_loss(Tensor({3, 5, 7}, rev_logits), rev).item() == doctest::Approx(loss).epsilon(1e-12));
}

TEST_CASE("generate_greedy") {
  SUBCASE("EOS-biased model emits an empty caption") {
    Tiny t(21);
    fill(t.p.output.weight, 0.0);
    fill(t.p.output.bias, 0.0);
    Tensor bias = t.p.output.bias;
    bias.mutable_values()[Vocabulary::kEos] = 5.0;
    CHECK(generate_greedy(t.visual, t.p, 10).empty());
  }

  SUBCASE("max_len bounds the output") {
    Tiny t(22);
    fill(t.p.output.weight, 0.0);
    fill(t.p.output.bias, 0.0);
    Tensor bias = t.p.output.bias;
    bias.mutable_values()[5] = 5.0;
    CHECK(generate_greedy(t.visual, t.p, 3) == std::vector<int>{5, 5, 5});
    CHECK(generate_greedy(t.visual, t.p, 1) == std::vector<int>{5});
    // Never longer than the position table allows.
    CHECK(generate_greedy(t.visual, t.p, 1000).size() == t.cfg.max_positions());
  }

  SUBCASE("argmax ties go to the lowest id") {
    Tiny t(23);
    fill(t.p.output.weight, 0.0);
    fill(t.p.output.bias, 0.0);
    Tensor bias = t.p.output.bias;
    bias.mutable_values()[6] = 1.0;
    bias.mutable_values()[4] = 1.0;
    CHECK(generate_greedy(t.visual, t.p, 2) == std::vector<int>{4, 4});
  }

  SUBCASE("max_len 0 is rejected") {
    Tiny t(24);
    CHECK_THROWS_AS(generate_greedy(t.visual, t.p, 0), std::invalid_argument);
  }

  SUBCASE("deterministic and equal to width-1 beam search") {
    for (std::uint64_t seed = 30; seed < 40; ++seed) {
      Tiny t(seed, 6, 3);
      Rng noise(seed);
      testing::jitter(t.store, noise, 0.5);
      const auto a = generate_greedy(t.visual, t.p, 3);
      const auto b = generate_greedy(t.visual, t.p, 3);
      CHECK(a == b);
      CHECK(a == beam_search(t.visual, t.p, 1, 3));
    }
  }
}

TEST_CASE("decoder memorizes ten captions") {
  const std::vector<std::string> captions = {
      "the scene is unchanged",          "a new building appears on the left",
      "nothing has changed here",        "two houses were built near the road",
      "the road is widened",             "a pond appears in the middle",
      "trees were removed at the top",   "a parking lot is added",
      "the field turns into houses",     "a bridge crosses the river now"};
  Vocabulary vocab = Vocabulary::build(captions, 1);
  DecoderConfig cfg;
  cfg.dim = 16;
  cfg.ffn_hidden = 32;
  cfg.max_words = 10;
  cfg.vocab_size = vocab.size();
  ParamStore store;
  Rng rng(99);
  DecoderParams p = make_decoder(cfg, store, "decoder", rng);
  std::vector<Tensor> visuals;
  std::vector<CaptionBatch> targets;
  for (const auto& c : captions) {
    visuals.push_back(random_tensor({4, cfg.dim}, rng));
    targets.push_back(CaptionBatch::from_sequences({vocab.encode_caption(c, cfg.max_words)}));
  }
  AdamConfig adam;
  adam.learning_rate = 1e-2;
  OptimizerState opt = OptimizerState::for_params(store, adam);
  Real loss = 1e9;
  std::size_t steps = 0;
  for (; steps < 500 && loss >= 0.05; ++steps) {
    for (const auto& e : store.entries()) Tensor(e.tensor).zero_grad();
    Tape tape;
    Tensor total;
    for (std::size_t i = 0; i < captions.size(); ++i) {
      Tensor l = caption_loss(decoder_forward(visuals[i], targets[i], p), targets[i]);
      total = i == 0 ? l : add(total, l);
    }
    total = scale(total, 1.0 / static_cast<Real>(captions.size()));
    loss = total.item();
    tape.backward(total);
    optimizer_step(store, opt);
  }
  MESSAGE("memorized after " << steps << " steps, loss " << loss);
  CHECK(loss < 0.05);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (vocab.decode(generate_greedy(visuals[i], p, cfg.max_words)) == captions[i]) ++exact;
  }
  CHECK(exact == captions.size());
}

TEST_CASE("tokenize and join") {
  CHECK(tokenize("A new Building, appears!") == std::vector<std::string>{"a", "new", "building", "appears"});
  CHECK(tokenize("  ").empty());
  CHECK(tokenize("left-side") == std::vector<std::string>{"left", "side"});
  CHECK(join({"a", "b", "c"}) == "a b c");
  CHECK(join({}) == "");
}

TEST_CASE("vocabulary") {
  SUBCASE("reserved ids") {
    Vocabulary v;
    CHECK(v.size() == Vocabulary::kReserved);
    CHECK(v.token(Vocabulary::kPad) == "<pad>");
    CHECK(v.token(Vocabulary::kBos) == "<bos>");
    CHECK(v.token(Vocabulary::kEos) == "<eos>");
    CHECK(v.token(Vocabulary::kUnk) == "<unk>");
    CHECK_THROWS_AS(v.token(4), std::out_of_range);
    CHECK_THROWS_AS(v.token(-1), std::out_of_range);
  }

  SUBCASE("min_freq") {
    auto v = Vocabulary::build({"a a b"}, 2);
    CHECK(v.word_tokens() == std::vector<std::string>{"a"});
    CHECK(v.id("b") == Vocabulary::kUnk);
    CHECK(Vocabulary::build({"a a b"}, Vocabulary::kNoMinimum).size() == Vocabulary::kReserved);
  }

  SUBCASE("ordered by frequency then token") {
    auto v = Vocabulary::build({"c b a", "b c", "d b c"}, 1);
    CHECK(v.word_tokens() == std::vector<std::string>{"b", "c", "a", "d"});
    CHECK(v.id("b") == 4);
  }

  SUBCASE("round trip") {
    auto v = Vocabulary::build({"the road is widened", "a pond appears"}, 1);
    const std::string s = "a pond is widened";
    CHECK(v.decode(v.encode(s)) == s);
    auto ids = v.encode_caption(s, 24);
    CHECK(ids.front() == Vocabulary::kBos);
    CHECK(ids.back() == Vocabulary::kEos);
    CHECK(v.decode(ids) == s);
    CHECK(v.encode_caption(s, 2).size() == 4);
    CHECK(v.decode(v.encode("a lake appears")) == "a <unk> appears");
    CHECK(Vocabulary::from_tokens(v.word_tokens()).word_tokens() == v.word_tokens());
    CHECK_THROWS_AS(Vocabulary::from_tokens({"x", "x"}), std::invalid_argument);
  }
}
