#pragma once

#include <array>
#include <string>
#include <vector>

// Published score tables, transcribed by hand. Used as arithmetic oracles for
// s_star_m and rho_conversion; the raw values are reported numbers, not
// something this code can reproduce by training.

namespace hisem::testing {

struct PublishedRow {
  std::string table;
  std::string method;
  double bleu4, meteor, rouge_l, cider_d, s_star_m;
};

inline std::vector<PublishedRow> published_s_star_rows() {
  return {
      {"LEVIR-CC", "RSICCFormer", 62.77, 39.61, 74.12, 134.12, 77.66},
      {"LEVIR-CC", "Chg2Cap", 64.39, 40.03, 75.12, 136.61, 79.04},
      {"LEVIR-CC", "PSNet", 62.11, 38.80, 73.60, 132.62, 76.78},
      {"LEVIR-CC", "CTMTNet", 64.69, 39.49, 74.54, 134.94, 78.42},
      {"LEVIR-CC", "Sen", 64.09, 39.59, 74.57, 136.02, 78.57},
      {"LEVIR-CC", "SFT", 62.87, 39.93, 74.69, 137.05, 78.64},
      {"LEVIR-CC", "Pix4Cap", 63.78, 39.96, 75.12, 136.76, 78.91},
      {"LEVIR-CC", "RSCaMa", 65.24, 39.91, 75.24, 136.56, 79.24},
      {"LEVIR-CC", "Diffusion-RSCC", 60.90, 37.80, 71.50, 125.60, 73.95},
      {"LEVIR-CC", "Mask Approx Net", 64.32, 39.91, 75.67, 137.71, 79.40},
      {"LEVIR-CC", "Prompt-CC", 63.54, 38.82, 73.72, 136.44, 78.13},
      {"LEVIR-CC", "Chareption", 62.53, 40.38, 74.72, 137.83, 77.58},
      {"LEVIR-CC", "KCFI", 65.30, 39.42, 75.47, 138.25, 79.61},
      {"LEVIR-CC", "HiSem", 65.82, 40.39, 75.77, 138.86, 80.21},
      {"WHU-CDC", "RSICCFormer", 66.54, 42.65, 73.91, 133.44, 79.14},
      {"WHU-CDC", "Chg2Cap", 62.71, 41.46, 77.95, 144.18, 81.58},
      {"WHU-CDC", "PSNet", 60.32, 36.97, 71.60, 130.52, 74.85},
      {"WHU-CDC", "Sen", 61.97, 36.76, 71.70, 133.57, 76.00},
      {"WHU-CDC", "SFT", 60.27, 37.34, 72.63, 134.64, 76.22},
      {"WHU-CDC", "Prompt-CC", 61.45, 36.99, 71.88, 134.50, 76.21},
      {"WHU-CDC", "Diffusion-RSCC", 63.76, 40.18, 73.80, 127.96, 76.43},
      {"WHU-CDC", "Mask Approx Net", 67.73, 43.89, 75.41, 135.31, 80.59},
      {"WHU-CDC", "CTMTNet", 69.00, 45.39, 79.23, 149.40, 85.76},
      {"WHU-CDC", "HiSem", 76.52, 48.77, 82.00, 158.35, 91.41},
  };
}

// One evaluation scope of a predicted-vs-ground-truth routing table. Score
// columns: BLEU-1..4, METEOR, ROUGE-L, then CIDEr-D and S*_m when present.
struct PublishedRhoBlock {
  std::string table;
  std::string scope;
  double acc_pre;
  std::vector<double> pre;
  std::vector<double> gt;
  std::vector<double> rho;
};

inline const std::array<const char*, 8> kRhoColumns = {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4",
                                                       "METEOR", "ROUGE-L", "CIDEr-D", "S*_m"};

inline std::vector<PublishedRhoBlock> published_rho_blocks() {
  const std::vector<double> perfect(6, 100.0);
  return {
      {"LEVIR-CC", "unchanged", 96.91, {97.22, 96.80, 96.57, 96.41, 75.75, 97.55}, perfect,
       {0.90, 1.04, 1.11, 1.16, 7.85, 0.79}},
      {"LEVIR-CC", "changed", 91.06, {77.89, 63.94, 51.15, 40.41, 25.92, 53.96, 65.12, 46.35},
       {79.69, 65.96, 52.95, 41.78, 27.05, 56.32, 69.54, 48.67}, {0.20, 0.23, 0.20, 0.15, 0.13, 0.26, 0.49, 0.26}},
      {"LEVIR-CC", "all", 93.99, {86.60, 78.74, 71.73, 65.82, 40.39, 75.77, 138.86, 80.21},
       {88.53, 80.91, 73.82, 67.69, 41.89, 78.17, 144.63, 83.09}, {0.32, 0.36, 0.35, 0.31, 0.25, 0.40, 0.96, 0.48}},
      {"WHU-CDC", "unchanged", 97.40, {98.07, 97.85, 97.77, 97.74, 77.94, 97.89}, perfect,
       {0.74, 0.83, 0.86, 0.87, 8.48, 0.81}},
      {"WHU-CDC", "changed", 80.08, {65.51, 50.92, 37.89, 28.49, 22.45, 47.78, 58.98, 39.42},
       {70.97, 57.42, 43.80, 33.15, 25.12, 53.66, 71.49, 45.86}, {0.27, 0.33, 0.30, 0.23, 0.13, 0.30, 0.63, 0.32}},
      {"WHU-CDC", "all", 91.91, {87.49, 82.89, 79.17, 76.52, 48.77, 82.00, 158.35, 91.41},
       {90.37, 86.16, 82.26, 79.28, 51.06, 85.30, 167.27, 95.73}, {0.36, 0.40, 0.38, 0.34, 0.28, 0.41, 1.10, 0.53}},
  };
}

}  // namespace hisem::testing
