#include "hisem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>

#include "hisem/text.hpp"

namespace hisem {

namespace {

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, std::size_t>;

NGramCounts ngram_counts(const Sentence& s, std::size_t n) {
  NGramCounts counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[NGram(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i + n))];
  return counts;
}

void check_corpus(std::size_t n_cand, const std::vector<std::vector<std::string>>& references,
                  const char* metric) {
  if (n_cand == 0) throw std::invalid_argument(std::string(metric) + ": empty corpus");
  if (references.size() != n_cand) {
    throw std::invalid_argument(std::string(metric) + ": " + std::to_string(n_cand) + " candidates but " +
                                std::to_string(references.size()) + " reference sets");
  }
  for (const auto& refs : references) {
    if (refs.empty()) throw std::invalid_argument(std::string(metric) + ": candidate without references");
  }
}

std::vector<std::vector<Sentence>> tokenize_refs(const std::vector<std::vector<std::string>>& references) {
  std::vector<std::vector<Sentence>> out;
  out.reserve(references.size());
  for (const auto& refs : references) {
    std::vector<Sentence> toks;
    for (const auto& r : refs) toks.push_back(tokenize(r));
    out.push_back(std::move(toks));
  }
  return out;
}

std::vector<Sentence> tokenize_all(const std::vector<std::string>& sentences) {
  std::vector<Sentence> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(tokenize(s));
  return out;
}

}  // namespace

double bleu(const std::vector<std::string>& candidates,
            const std::vector<std::vector<std::string>>& references, int n) {
  check_corpus(candidates.size(), references, "bleu");
  if (n < 1 || n > 4) throw std::invalid_argument("bleu: n must be in 1..4, got " + std::to_string(n));
  const auto cands = tokenize_all(candidates);
  const auto refs = tokenize_refs(references);
  std::vector<double> matched(static_cast<std::size_t>(n), 0.0), total(static_cast<std::size_t>(n), 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const Sentence& c = cands[i];
    cand_len += static_cast<double>(c.size());
    std::size_t best = refs[i][0].size();
    for (const auto& r : refs[i]) {
      const auto d = [&](std::size_t len) { return len > c.size() ? len - c.size() : c.size() - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (std::size_t k = 1; k <= static_cast<std::size_t>(n); ++k) {
      const NGramCounts cc = ngram_counts(c, k);
      NGramCounts max_ref;
      for (const auto& r : refs[i]) {
        for (const auto& [g, cnt] : ngram_counts(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
      }
      for (const auto& [g, cnt] : cc) {
        auto it = max_ref.find(g);
        matched[k - 1] += static_cast<double>(std::min(cnt, it == max_ref.end() ? 0 : it->second));
        total[k - 1] += static_cast<double>(cnt);
      }
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
    double p = total[k] > 0.0 ? matched[k] / total[k] : 0.0;
    if (p == 0.0) p = 1e-9;
    log_sum += std::log(p);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / n);
}

namespace {

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_pair(const Sentence& c, const Sentence& r) {
  constexpr double kBeta = 1.2;
  const std::size_t lcs = lcs_length(c, r);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(c.size());
  const double rec = static_cast<double>(lcs) / static_cast<double>(r.size());
  return (1.0 + kBeta * kBeta) * p * rec / (rec + kBeta * kBeta * p);
}

}  // namespace

double rouge_l(const std::vector<std::string>& candidates,
               const std::vector<std::vector<std::string>>& references) {
  check_corpus(candidates.size(), references, "rouge_l");
  const auto cands = tokenize_all(candidates);
  const auto refs = tokenize_refs(references);
  double total = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double best = 0.0;
    for (const auto& r : refs[i]) best = std::max(best, rouge_pair(cands[i], r));
    total += best;
  }
  return 100.0 * total / static_cast<double>(cands.size());
}

namespace {

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

bool has_vowel(const std::string& s) { return std::any_of(s.begin(), s.end(), is_vowel); }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string stem(const std::string& word) {
  std::string w = word;
  if (w.size() > 4 && ends_with(w, "ies")) {
    w.replace(w.size() - 3, 3, "y");
  } else if (ends_with(w, "sses")) {
    w.erase(w.size() - 2);
  } else if (w.size() > 3 && ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") &&
             !ends_with(w, "is")) {
    w.pop_back();
  }
  for (const std::string suffix : {"ing", "ed"}) {
    if (ends_with(w, suffix)) {
      std::string base = w.substr(0, w.size() - suffix.size());
      if (base.size() >= 3 && has_vowel(base)) {
        const char last = base.back();
        if (base.size() >= 4 && last == base[base.size() - 2] && !is_vowel(last) && last != 'l' &&
            last != 's' && last != 'z') {
          base.pop_back();
        }
        w = base;
      }
      break;
    }
  }
  if (w.size() > 4 && w.back() == 'e') w.pop_back();
  return w;
}

MeteorAlignment meteor_align(const Sentence& candidate, const Sentence& reference) {
  constexpr std::size_t kFree = static_cast<std::size_t>(-1);
  std::vector<std::size_t> cand_to_ref(candidate.size(), kFree);
  std::vector<bool> ref_used(reference.size(), false);
  std::vector<std::string> cand_stems, ref_stems;
  for (const auto& w : candidate) cand_stems.push_back(stem(w));
  for (const auto& w : reference) ref_stems.push_back(stem(w));

  for (int stage = 0; stage < 2; ++stage) {
    const auto& ck = stage == 0 ? candidate : cand_stems;
    const auto& rk = stage == 0 ? reference : ref_stems;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (cand_to_ref[i] != kFree) continue;
      auto eligible = [&](std::size_t j) { return j < reference.size() && !ref_used[j] && rk[j] == ck[i]; };
      std::size_t pick = kFree;
      if (i > 0 && cand_to_ref[i - 1] != kFree && eligible(cand_to_ref[i - 1] + 1)) {
        pick = cand_to_ref[i - 1] + 1;
      } else if (i + 1 < candidate.size() && cand_to_ref[i + 1] != kFree && cand_to_ref[i + 1] > 0 &&
                 eligible(cand_to_ref[i + 1] - 1)) {
        pick = cand_to_ref[i + 1] - 1;
      } else {
        for (std::size_t j = 0; j < reference.size(); ++j) {
          if (eligible(j)) {
            pick = j;
            break;
          }
        }
      }
      if (pick != kFree) {
        cand_to_ref[i] = pick;
        ref_used[pick] = true;
      }
    }
  }

  MeteorAlignment a;
  std::size_t prev_ref = kFree;
  bool prev_matched = false;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (cand_to_ref[i] == kFree) {
      prev_matched = false;
      continue;
    }
    ++a.matches;
    if (!prev_matched || cand_to_ref[i] != prev_ref + 1) ++a.chunks;
    prev_ref = cand_to_ref[i];
    prev_matched = true;
  }
  return a;
}

double meteor_sentence(const Sentence& candidate, const Sentence& reference) {
  const MeteorAlignment a = meteor_align(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

double meteor_lite(const std::vector<std::string>& candidates,
                   const std::vector<std::vector<std::string>>& references) {
  check_corpus(candidates.size(), references, "meteor_lite");
  const auto cands = tokenize_all(candidates);
  const auto refs = tokenize_refs(references);
  double total = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double best = 0.0;
    for (const auto& r : refs[i]) best = std::max(best, meteor_sentence(cands[i], r));
    total += best;
  }
  return 100.0 * total / static_cast<double>(cands.size());
}

namespace {

constexpr std::size_t kCiderN = 4;
constexpr double kCiderSigma = 6.0;

struct CiderVec {
  std::array<std::map<NGram, double>, kCiderN> vec;
  std::array<double, kCiderN> norm{};
  std::size_t length = 0;
};

CiderVec cider_vector(const Sentence& s, const std::map<NGram, double>& df, double log_n) {
  CiderVec out;
  out.length = s.size();
  for (std::size_t n = 1; n <= kCiderN; ++n) {
    for (const auto& [g, tf] : ngram_counts(s, n)) {
      auto it = df.find(g);
      const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const double v = static_cast<double>(tf) * (log_n - d);
      out.vec[n - 1][g] = v;
      out.norm[n - 1] += v * v;
    }
  }
  for (auto& v : out.norm) v = std::sqrt(v);
  return out;
}

std::array<double, kCiderN> cider_sim(const CiderVec& hyp, const CiderVec& ref) {
  std::array<double, kCiderN> val{};
  const double delta = static_cast<double>(hyp.length) - static_cast<double>(ref.length);
  for (std::size_t n = 0; n < kCiderN; ++n) {
    for (const auto& [g, vh] : hyp.vec[n]) {
      auto it = ref.vec[n].find(g);
      if (it == ref.vec[n].end()) continue;
      val[n] += std::min(vh, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val[n] /= hyp.norm[n] * ref.norm[n];
    val[n] *= std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  }
  return val;
}

}  // namespace

double cider_d(const std::vector<std::string>& candidates,
               const std::vector<std::vector<std::string>>& references) {
  check_corpus(candidates.size(), references, "cider_d");
  const auto cands = tokenize_all(candidates);
  const auto refs = tokenize_refs(references);

  std::set<Sentence> distinct;
  std::map<NGram, double> df;
  for (const auto& ref_set : refs) {
    std::set<NGram> seen;
    for (const auto& r : ref_set) {
      distinct.insert(r);
      for (std::size_t n = 1; n <= kCiderN; ++n) {
        for (const auto& entry : ngram_counts(r, n)) seen.insert(entry.first);
      }
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  if (distinct.size() < 2) {
    std::clog << "warning: cider_d: references hold fewer than two distinct sentences; IDF is degenerate\n";
  }

  const double log_n = std::log(static_cast<double>(cands.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const CiderVec hyp = cider_vector(cands[i], df, log_n);
    std::array<double, kCiderN> score{};
    for (const auto& r : refs[i]) {
      const auto s = cider_sim(hyp, cider_vector(r, df, log_n));
      for (std::size_t n = 0; n < kCiderN; ++n) score[n] += s[n];
    }
    double avg = 0.0;
    for (double s : score) avg += s;
    avg /= static_cast<double>(kCiderN);
    avg /= static_cast<double>(refs[i].size());
    total += avg * 10.0;
  }
  return 100.0 * total / static_cast<double>(cands.size());
}

double s_star_m(double bleu4, double rouge, double meteor, double cider) {
  return (bleu4 + rouge + meteor + cider) / 4.0;
}

double rho_conversion(double score_pre, double score_gt, double acc_pre, double acc_gt) {
  const double d_acc = acc_gt - acc_pre;
  if (d_acc == 0.0) throw std::domain_error("rho_conversion: router accuracy did not change");
  return (score_gt - score_pre) / d_acc;
}

const char* to_string(Stratum s) {
  switch (s) {
    case Stratum::kChanged: return "changed";
    case Stratum::kUnchanged: return "unchanged";
    case Stratum::kAll: break;
  }
  return "all";
}

MetricReport score_corpus(const std::vector<std::string>& candidates,
                          const std::vector<std::vector<std::string>>& references, bool with_cider) {
  MetricReport r;
  r.n_samples = candidates.size();
  r.bleu1 = bleu(candidates, references, 1);
  r.bleu2 = bleu(candidates, references, 2);
  r.bleu3 = bleu(candidates, references, 3);
  r.bleu4 = bleu(candidates, references, 4);
  r.meteor = meteor_lite(candidates, references);
  r.rouge_l = rouge_l(candidates, references);
  if (with_cider) {
    r.cider_d = cider_d(candidates, references);
    r.s_star_m = s_star_m(*r.bleu4, *r.rouge_l, *r.meteor, *r.cider_d);
  }
  return r;
}

std::array<MetricReport, 3> stratified_evaluate(const std::vector<std::string>& predictions,
                                                const std::vector<std::vector<std::string>>& references,
                                                const std::vector<int>& labels,
                                                const std::vector<int>& paths) {
  const std::size_t n = predictions.size();
  if (references.size() != n || labels.size() != n || paths.size() != n) {
    throw std::invalid_argument("stratified_evaluate: predictions, references, labels and paths are misaligned");
  }
  std::array<MetricReport, 3> out;
  const std::array<Stratum, 3> strata{Stratum::kAll, Stratum::kChanged, Stratum::kUnchanged};
  for (std::size_t s = 0; s < strata.size(); ++s) {
    std::vector<std::string> cands;
    std::vector<std::vector<std::string>> refs;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool keep = strata[s] == Stratum::kAll || (strata[s] == Stratum::kChanged) == (labels[i] == 1);
      if (!keep) continue;
      cands.push_back(predictions[i]);
      refs.push_back(references[i]);
      if (paths[i] == labels[i]) ++correct;
    }
    MetricReport r;
    if (!cands.empty()) {
      r = score_corpus(cands, refs, strata[s] != Stratum::kUnchanged);
      r.router_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(cands.size());
    }
    r.stratum = strata[s];
    r.n_samples = cands.size();
    out[s] = r;
  }
  return out;
}

std::string format_reports(const std::vector<MetricReport>& reports) {
  auto cell = [](const std::optional<double>& v) {
    char buf[32];
    if (v) {
      std::snprintf(buf, sizeof buf, "%9.2f", *v);
    } else {
      std::snprintf(buf, sizeof buf, "%9s", "-");
    }
    return std::string(buf);
  };
  std::string out =
      "stratum       n   BLEU-1   BLEU-2   BLEU-3   BLEU-4   METEOR  ROUGE-L  CIDEr-D    S*_m   Acc(%)\n";
  for (const auto& r : reports) {
    char head[32];
    std::snprintf(head, sizeof head, "%-10s%4zu", to_string(r.stratum), r.n_samples);
    out += head;
    for (const auto* v : {&r.bleu1, &r.bleu2, &r.bleu3, &r.bleu4, &r.meteor, &r.rouge_l, &r.cider_d,
                          &r.s_star_m, &r.router_accuracy}) {
      out += cell(*v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace hisem
