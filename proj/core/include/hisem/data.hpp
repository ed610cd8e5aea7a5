#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "hisem/bdam.hpp"
#include "hisem/tensor.hpp"

// Deterministic synthetic bi-temporal dataset. Each pair is a random "scene"
// token grid observed twice with small additive noise; changed pairs also
// carry a planted object pattern in one spatial region. Object signatures
// come from a fixed world seed, so datasets drawn with different seeds
// share their semantics.

namespace hisem {

enum class ObjectKind { kBuilding, kRoad, kTrees, kHouse, kNone };
enum class ChangeKind { kAppear, kDisappear, kNone };
enum class Location { kTopLeft, kTopRight, kBottomLeft, kBottomRight, kCenter };

const char* to_string(ObjectKind kind);
const char* to_string(ChangeKind kind);
/// Caption phrase, e.g. "top left corner".
const char* to_string(Location loc);

struct SceneSpec {
  std::size_t height = 7;
  std::size_t width = 7;
  ObjectKind object = ObjectKind::kNone;
  ChangeKind change = ChangeKind::kNone;
  Location location = Location::kCenter;
  std::uint64_t seed = 0;

  bool changed() const { return change != ChangeKind::kNone; }
};

struct DatasetRecord {
  std::string id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  std::vector<Real> f_t1;  // row-major [H x W x D]
  std::vector<Real> f_t2;
  int label = 0;  // 1 = changed
  std::vector<std::string> captions;

  BiTemporalFeatures features() const;
};

struct SynthConfig {
  std::size_t height = 7;
  std::size_t width = 7;
  std::size_t dim = 64;
  Real noise = 0.1;
  Real signal = 1.0;
  Real scene_std = 1.0;
  std::uint64_t world_seed = 0x5EEDC0DEULL;
};

inline constexpr std::size_t kCaptionsPerRecord = 5;

/// Five reference captions for a scene; the first is the canonical one.
std::vector<std::string> scene_captions(const SceneSpec& scene);

/// Grid cells covered by a location tag, as row-major token indices.
std::vector<std::size_t> location_cells(Location loc, std::size_t height, std::size_t width);

/// Scene layout for every pair: exactly floor(n/2) changed pairs at shuffled
/// positions, object/kind/location drawn uniformly.
std::vector<SceneSpec> synth_scenes(std::size_t n_pairs, const SynthConfig& cfg, std::uint64_t seed);

/// Throws std::invalid_argument when n_pairs < 2.
std::vector<DatasetRecord> synth_generate(std::size_t n_pairs, const SynthConfig& cfg,
                                          std::uint64_t seed);

/// Raised for malformed dataset files; `line()` is 1-based.
class DatasetFormatError : public std::runtime_error {
 public:
  DatasetFormatError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// One JSON object per line: {id, h, w, d, f_t1, f_t2, label, captions}.
void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path);
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path);

}  // namespace hisem
