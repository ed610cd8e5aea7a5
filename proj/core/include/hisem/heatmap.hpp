#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hisem/bdam.hpp"
#include "hisem/model.hpp"

// Difference heatmaps around the BDAM stack, written as binary PGM (P5).

namespace hisem {

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Channel-mean |F_t1 - F_t2| per grid cell, row-major [H x W].
std::vector<Real> mean_abs_diff(const BiTemporalFeatures& x);

/// Min-max scales to [0, 255] (rounded); a constant map becomes all zeros.
GrayImage to_gray(const std::vector<Real>& values, std::size_t height, std::size_t width);

void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

struct HeatmapSet {
  GrayImage baseline;              // BDAM input
  std::vector<GrayImage> layers;   // after each BDAM layer
};

HeatmapSet bdam_heatmaps(const HiSemModel& model, const BiTemporalFeatures& raw);

/// Writes <prefix>_input.pgm and <prefix>_layer<k>.pgm (k from 1); returns the paths.
std::vector<std::filesystem::path> write_heatmaps(const HeatmapSet& set, const std::filesystem::path& dir,
                                                  const std::string& prefix);

}  // namespace hisem
