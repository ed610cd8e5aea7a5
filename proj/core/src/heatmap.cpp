#include "hisem/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "hisem/ops.hpp"

namespace hisem {

std::vector<Real> mean_abs_diff(const BiTemporalFeatures& x) {
  x.validate();
  const std::size_t tokens = x.tokens(), dim = x.channels();
  auto a = x.f_t1.values();
  auto b = x.f_t2.values();
  std::vector<Real> out(tokens, 0.0);
  for (std::size_t n = 0; n < tokens; ++n) {
    Real s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) s += std::fabs(a[n * dim + c] - b[n * dim + c]);
    out[n] = s / static_cast<Real>(dim);
  }
  return out;
}

GrayImage to_gray(const std::vector<Real>& values, std::size_t height, std::size_t width) {
  if (values.size() != height * width) throw DimensionError("to_gray: value count does not match the grid");
  GrayImage img{height, width, std::vector<std::uint8_t>(values.size(), 0)};
  if (values.empty()) return img;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const Real range = *hi - *lo;
  if (!(range > 0.0)) return img;
  for (std::size_t i = 0; i < values.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / range));
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  GrayImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw std::runtime_error(path.string() + " is not an 8-bit P5 image");
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated pixel data");
  return img;
}

HeatmapSet bdam_heatmaps(const HiSemModel& model, const BiTemporalFeatures& raw) {
  EncodeResult enc = model.encode(raw, std::nullopt, true);
  HeatmapSet set;
  set.baseline = to_gray(mean_abs_diff(enc.embedded), raw.height, raw.width);
  for (const auto& layer : enc.layers) set.layers.push_back(to_gray(mean_abs_diff(layer), raw.height, raw.width));
  return set;
}

std::vector<std::filesystem::path> write_heatmaps(const HeatmapSet& set, const std::filesystem::path& dir,
                                                  const std::string& prefix) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  paths.push_back(dir / (prefix + "_input.pgm"));
  write_pgm(paths.back(), set.baseline);
  for (std::size_t k = 0; k < set.layers.size(); ++k) {
    paths.push_back(dir / (prefix + "_layer" + std::to_string(k + 1) + ".pgm"));
    write_pgm(paths.back(), set.layers[k]);
  }
  return paths;
}

}  // namespace hisem
