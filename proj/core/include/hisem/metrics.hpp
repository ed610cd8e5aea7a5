#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

// Caption metrics over tokenised corpora. Every public scorer takes raw
// sentences, tokenises them with hisem::tokenize, and returns a percentage
// (CIDEr-D uses the same x100 scale and may exceed 100).

namespace hisem {

using Sentence = std::vector<std::string>;

/// Corpus BLEU-n: clipped n-gram precisions combined by geometric mean,
/// times the brevity penalty. Reference length per candidate is the closest
/// reference length (ties to the shorter). Zero precisions become 1e-9.
double bleu(const std::vector<std::string>& candidates,
            const std::vector<std::vector<std::string>>& references, int n);

/// Mean over candidates of the best LCS F-measure (beta = 1.2) over references.
double rouge_l(const std::vector<std::string>& candidates,
               const std::vector<std::vector<std::string>>& references);

/// Suffix-stripping stemmer used by METEOR-lite's second matching stage.
std::string stem(const std::string& word);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

/// Exact matches first, then stem matches among the leftovers. Within a stage
/// each candidate word (left to right) prefers the reference slot that
/// extends the chunk of a matched neighbour, else the leftmost free slot.
MeteorAlignment meteor_align(const Sentence& candidate, const Sentence& reference);
double meteor_sentence(const Sentence& candidate, const Sentence& reference);

/// Mean over candidates of the best single-reference METEOR-lite score.
double meteor_lite(const std::vector<std::string>& candidates,
                   const std::vector<std::vector<std::string>>& references);

/// CIDEr-D: TF-IDF n-gram vectors (n = 1..4, document frequency over
/// reference sets), clipped cosine with a Gaussian length penalty (sigma 6,
/// word counts), averaged over n and references, x10, corpus mean, x100.
/// Writes a warning to std::clog when the references hold fewer than two
/// distinct sentences.
double cider_d(const std::vector<std::string>& candidates,
               const std::vector<std::vector<std::string>>& references);

/// (BLEU-4 + ROUGE-L + METEOR + CIDEr-D) / 4
double s_star_m(double bleu4, double rouge, double meteor, double cider);

/// Score gain per point of router accuracy gain. Throws std::domain_error
/// when the accuracies are equal.
double rho_conversion(double score_pre, double score_gt, double acc_pre, double acc_gt);

enum class Stratum { kAll, kChanged, kUnchanged };
const char* to_string(Stratum s);

struct MetricReport {
  Stratum stratum = Stratum::kAll;
  std::size_t n_samples = 0;
  std::optional<double> bleu1, bleu2, bleu3, bleu4;
  std::optional<double> meteor;
  std::optional<double> rouge_l;
  std::optional<double> cider_d;   // omitted for the unchanged stratum
  std::optional<double> s_star_m;  // omitted for the unchanged stratum
  std::optional<double> router_accuracy;
};

/// Scores for one corpus; `with_cider` false leaves CIDEr-D and S*_m empty.
MetricReport score_corpus(const std::vector<std::string>& candidates,
                          const std::vector<std::vector<std::string>>& references, bool with_cider);

/// Reports for all / changed / unchanged pairs (in that order). `labels` are
/// ground-truth change labels, `paths` the image-level path actually taken.
/// Empty strata carry n_samples = 0 and no scores.
std::array<MetricReport, 3> stratified_evaluate(const std::vector<std::string>& predictions,
                                                const std::vector<std::vector<std::string>>& references,
                                                const std::vector<int>& labels,
                                                const std::vector<int>& paths);

/// Fixed-width text table, one row per report.
std::string format_reports(const std::vector<MetricReport>& reports);

}  // namespace hisem
