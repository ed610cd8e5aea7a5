#include "hisem/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hisem/params.hpp"
#include "json.hpp"

namespace hisem {

const char* to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::kBuilding: return "building";
    case ObjectKind::kRoad: return "road";
    case ObjectKind::kTrees: return "trees";
    case ObjectKind::kHouse: return "house";
    case ObjectKind::kNone: break;
  }
  return "none";
}

const char* to_string(ChangeKind kind) {
  switch (kind) {
    case ChangeKind::kAppear: return "appear";
    case ChangeKind::kDisappear: return "disappear";
    case ChangeKind::kNone: break;
  }
  return "none";
}

const char* to_string(Location loc) {
  switch (loc) {
    case Location::kTopLeft: return "top left corner";
    case Location::kTopRight: return "top right corner";
    case Location::kBottomLeft: return "bottom left corner";
    case Location::kBottomRight: return "bottom right corner";
    case Location::kCenter: break;
  }
  return "center";
}

BiTemporalFeatures DatasetRecord::features() const {
  const Shape shape{height * width, dim};
  return {Tensor(shape, f_t1), Tensor(shape, f_t2), height, width};
}

std::vector<std::string> scene_captions(const SceneSpec& scene) {
  if (!scene.changed()) {
    return {"there is no change", "the scene is the same as before", "nothing has changed in the scene",
            "the two images look the same", "no change has occurred"};
  }
  const std::string loc = std::string("the ") + to_string(scene.location);
  const std::string obj = to_string(scene.object);
  const bool plural = scene.object == ObjectKind::kTrees;
  const std::string a = plural ? "some " + obj : "a " + obj;
  if (scene.change == ChangeKind::kAppear) {
    if (plural) {
      return {a + " appear in " + loc, "new " + obj + " are planted in " + loc,
              "there are new " + obj + " in " + loc, obj + " have been added in " + loc,
              loc + " now has " + obj};
    }
    return {a + " appears in " + loc, "a new " + obj + " is built in " + loc,
            "there is a new " + obj + " in " + loc, a + " has been added in " + loc,
            loc + " now has " + a};
  }
  if (plural) {
    return {a + " disappear from " + loc, "the " + obj + " in " + loc + " are removed",
            "the " + obj + " in " + loc + " are gone", obj + " have been cut down in " + loc,
            loc + " no longer has " + obj};
  }
  return {a + " disappears from " + loc, "the " + obj + " in " + loc + " is removed",
          "the " + obj + " in " + loc + " is gone", a + " has been demolished in " + loc,
          loc + " no longer has " + a};
}

std::vector<std::size_t> location_cells(Location loc, std::size_t height, std::size_t width) {
  const std::size_t rh = std::max<std::size_t>(1, (3 * height + 3) / 7);
  const std::size_t rw = std::max<std::size_t>(1, (3 * width + 3) / 7);
  std::size_t r0 = 0, c0 = 0;
  switch (loc) {
    case Location::kTopLeft: break;
    case Location::kTopRight: c0 = width - rw; break;
    case Location::kBottomLeft: r0 = height - rh; break;
    case Location::kBottomRight: r0 = height - rh; c0 = width - rw; break;
    case Location::kCenter: r0 = (height - rh) / 2; c0 = (width - rw) / 2; break;
  }
  std::vector<std::size_t> cells;
  for (std::size_t r = r0; r < r0 + rh; ++r) {
    for (std::size_t c = c0; c < c0 + rw; ++c) cells.push_back(r * width + c);
  }
  return cells;
}

std::vector<SceneSpec> synth_scenes(std::size_t n_pairs, const SynthConfig& cfg, std::uint64_t seed) {
  if (n_pairs < 2) throw std::invalid_argument("synth_generate needs at least 2 pairs, got " + std::to_string(n_pairs));
  Rng layout(mix_seed(seed, 0));
  std::vector<int> changed(n_pairs, 0);
  std::fill(changed.begin(), changed.begin() + static_cast<long>(n_pairs / 2), 1);
  layout.shuffle(changed);
  std::vector<SceneSpec> scenes(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    SceneSpec& s = scenes[i];
    s.height = cfg.height;
    s.width = cfg.width;
    s.seed = mix_seed(seed, i + 1);
    if (changed[i]) {
      s.object = static_cast<ObjectKind>(layout.below(4));
      s.change = static_cast<ChangeKind>(layout.below(2));
      s.location = static_cast<Location>(layout.below(5));
    }
  }
  return scenes;
}

namespace {

// Object signatures plus a change-salience direction, orthonormalised and
// scaled to unit RMS per channel.
std::vector<std::vector<Real>> world_directions(const SynthConfig& cfg) {
  constexpr std::size_t kDirections = 5;
  if (cfg.dim < kDirections) {
    throw std::invalid_argument("synthetic feature dim must be at least " + std::to_string(kDirections) +
                                " to hold the object signatures, got " + std::to_string(cfg.dim));
  }
  Rng rng(cfg.world_seed);
  std::vector<std::vector<Real>> dirs(kDirections, std::vector<Real>(cfg.dim));
  for (auto& d : dirs) {
    for (auto& v : d) v = rng.normal();
  }
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      Real dot = 0.0;
      for (std::size_t c = 0; c < cfg.dim; ++c) dot += dirs[i][c] * dirs[j][c];
      for (std::size_t c = 0; c < cfg.dim; ++c) dirs[i][c] -= dot * dirs[j][c];
    }
    Real norm = 0.0;
    for (Real v : dirs[i]) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw std::invalid_argument("synthetic object signatures are degenerate");
    for (Real& v : dirs[i]) v /= norm;
  }
  const Real rms_scale = std::sqrt(static_cast<Real>(cfg.dim));
  for (auto& d : dirs) {
    for (Real& v : d) v *= rms_scale;
  }
  return dirs;
}

}  // namespace

std::vector<DatasetRecord> synth_generate(std::size_t n_pairs, const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.height == 0 || cfg.width == 0 || cfg.dim == 0) {
    throw std::invalid_argument("synthetic grid and feature dim must be positive");
  }
  const auto scenes = synth_scenes(n_pairs, cfg, seed);
  const auto dirs = world_directions(cfg);
  const auto& salience = dirs[4];
  const std::size_t tokens = cfg.height * cfg.width;
  const std::size_t digits = std::to_string(n_pairs - 1).size();

  std::vector<DatasetRecord> records;
  records.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const SceneSpec& scene = scenes[i];
    Rng rng(scene.seed);
    DatasetRecord r;
    std::string id = std::to_string(i);
    r.id = "pair_" + std::string(digits - id.size(), '0') + id;
    r.height = cfg.height;
    r.width = cfg.width;
    r.dim = cfg.dim;
    r.f_t1.resize(tokens * cfg.dim);
    for (Real& v : r.f_t1) v = cfg.scene_std * rng.normal();
    r.f_t2 = r.f_t1;
    for (Real& v : r.f_t2) v += cfg.noise * rng.normal();
    if (scene.changed()) {
      const auto& sig = dirs[static_cast<std::size_t>(scene.object)];
      // appear: after = before + s + c; disappear: before = after + s - c.
      // Either way the after-minus-before difference has a +c component.
      const bool appear = scene.change == ChangeKind::kAppear;
      auto& target = appear ? r.f_t2 : r.f_t1;
      const Real c_sign = appear ? 1.0 : -1.0;
      for (auto cell : location_cells(scene.location, cfg.height, cfg.width)) {
        for (std::size_t c = 0; c < cfg.dim; ++c) {
          target[cell * cfg.dim + c] += cfg.signal * (sig[c] + c_sign * salience[c]);
        }
      }
    }
    r.label = scene.changed() ? 1 : 0;
    r.captions = scene_captions(scene);
    records.push_back(std::move(r));
  }
  return records;
}

DatasetFormatError::DatasetFormatError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["h"] = r.height;
    j["w"] = r.width;
    j["d"] = r.dim;
    j["f_t1"] = r.f_t1;
    j["f_t2"] = r.f_t2;
    j["label"] = r.label;
    j["captions"] = r.captions;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace {

DatasetRecord parse_record(const std::string& text, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetFormatError(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DatasetFormatError(line_no, "record is not a JSON object");
  DatasetRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.height = j.at("h").get<std::size_t>();
    r.width = j.at("w").get<std::size_t>();
    r.dim = j.at("d").get<std::size_t>();
    r.f_t1 = j.at("f_t1").get<std::vector<Real>>();
    r.f_t2 = j.at("f_t2").get<std::vector<Real>>();
    r.label = j.at("label").get<int>();
    r.captions = j.at("captions").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetFormatError(line_no, std::string("bad field: ") + e.what());
  }
  const std::size_t expected = r.height * r.width * r.dim;
  if (expected == 0) throw DatasetFormatError(line_no, "h, w and d must be positive");
  if (r.f_t1.size() != expected || r.f_t2.size() != expected) {
    throw DatasetFormatError(line_no, "feature arrays do not hold h*w*d = " + std::to_string(expected) + " values");
  }
  if (r.label != 0 && r.label != 1) throw DatasetFormatError(line_no, "label must be 0 or 1");
  if (r.captions.size() != kCaptionsPerRecord) {
    throw DatasetFormatError(line_no, "expected " + std::to_string(kCaptionsPerRecord) + " captions");
  }
  for (Real v : r.f_t1) {
    if (!std::isfinite(v)) throw DatasetFormatError(line_no, "non-finite feature value");
  }
  for (Real v : r.f_t2) {
    if (!std::isfinite(v)) throw DatasetFormatError(line_no, "non-finite feature value");
  }
  return r;
}

}  // namespace

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::vector<DatasetRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(parse_record(line, line_no));
  }
  if (records.empty()) std::clog << "warning: dataset " << path.string() << " is empty\n";
  return records;
}

}  // namespace hisem
