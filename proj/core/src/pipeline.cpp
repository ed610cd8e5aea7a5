#include "hisem/pipeline.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hisem/checkpoint.hpp"
#include "json.hpp"

namespace hisem {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

constexpr std::uint64_t kModelSalt = 0x3D0DE1ULL;

}  // namespace

GenSummary run_gen(std::size_t n_pairs, std::uint64_t seed, const SynthConfig& synth,
                   const std::filesystem::path& out) {
  const auto records = synth_generate(n_pairs, synth, seed);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  save_dataset(records, out);
  GenSummary s;
  s.records = records.size();
  for (const auto& r : records) (r.label == 1 ? s.changed : s.unchanged) += 1;
  return s;
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["tokens"] = vocab.word_tokens();
  write_text(path, j.dump(2) + "\n");
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    return Vocabulary::from_tokens(j.at("tokens").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

TrainReport run_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume, bool verbose) {
  const auto train = load_dataset(cfg.train_data);
  if (train.empty()) throw std::runtime_error("training data " + cfg.train_data.string() + " holds no records");
  const auto val = cfg.val_data ? load_dataset(*cfg.val_data) : train;
  const auto& first = train.front();
  for (const auto* set : {&train, &val}) {
    for (const auto& r : *set) {
      if (r.height != first.height || r.width != first.width || r.dim != first.dim) {
        throw std::runtime_error("record " + r.id + " has a different grid or feature dim than " + first.id);
      }
    }
  }
  std::vector<std::string> captions;
  for (const auto& r : train) captions.insert(captions.end(), r.captions.begin(), r.captions.end());
  const Vocabulary vocab = Vocabulary::build(captions, cfg.min_freq);

  std::filesystem::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "config.json", to_json(cfg));
  save_vocab(vocab, cfg.out_dir / "vocab.json");

  HiSemModel model(make_model_config(cfg, first.dim, first.height, first.width, vocab.size()),
                   mix_seed(cfg.seed, kModelSalt));
  TrainOptions options = make_train_options(cfg);
  options.verbose = verbose;
  return train_loop(model, vocab, train, val, options, resume);
}

TrainedModel load_trained(const std::filesystem::path& checkpoint) {
  const auto dir = checkpoint.parent_path();
  RunConfig cfg = parse_run_config(read_text(dir / "config.json"));
  Vocabulary vocab = load_vocab(dir / "vocab.json");
  const auto entries = read_checkpoint(checkpoint);
  const auto& embed = find_entry(entries, "embed.project.weight");
  const auto& grid = find_entry(entries, "meta.grid");
  if (embed.shape.size() != 2 || grid.values.size() != 2) throw std::runtime_error(checkpoint.string() + ": bad embedder or grid entry");
  const auto height = static_cast<std::size_t>(grid.values[0]);
  const auto width = static_cast<std::size_t>(grid.values[1]);
  HiSemModel model(make_model_config(cfg, embed.shape[0], height, width, vocab.size()), 0);
  model.load_values(to_named_tensors(entries));
  return {std::move(cfg), std::move(vocab), std::move(model)};
}

EvalOutcome run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                     RouteSource routing, const std::optional<std::filesystem::path>& out_dir) {
  TrainedModel tm = load_trained(checkpoint);
  const auto records = load_dataset(data);
  if (records.empty()) throw std::runtime_error("evaluation data " + data.string() + " holds no records");
  EvalOutcome out;
  out.result = evaluate(tm.model, tm.vocab, records, routing);
  out.result.hash = content_hash({checkpoint, data});
  const auto dir = out_dir.value_or(checkpoint.parent_path());
  std::filesystem::create_directories(dir);
  const bool gt = routing == RouteSource::kGroundTruth;
  out.report_path = dir / (gt ? "eval_gt.json" : "eval_pre.json");
  write_text(out.report_path, eval_to_json(out.result));

  const auto other_path = dir / (gt ? "eval_pre.json" : "eval_gt.json");
  if (std::filesystem::exists(other_path)) {
    const EvalResult other = eval_from_json(read_text(other_path));
    if (other.hash == out.result.hash && other.routing != routing) {
      out.rho = gt ? rho_table(other, out.result) : rho_table(out.result, other);
      out.rho_path = dir / "rho.json";
      write_text(*out.rho_path, rho_to_json(*out.rho, out.result.hash));
    }
  }
  return out;
}

const DatasetRecord& find_record(const std::vector<DatasetRecord>& records, const std::string& id) {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw std::out_of_range("unknown pair id " + id);
}

namespace {

std::filesystem::path data_for(const TrainedModel& tm, const std::filesystem::path& checkpoint,
                               const std::optional<std::filesystem::path>& data) {
  if (data) return *data;
  std::filesystem::path p = tm.config.train_data;
  if (p.is_relative() && !std::filesystem::exists(p)) p = checkpoint.parent_path() / p;
  return p;
}

}  // namespace

Description run_describe(const std::filesystem::path& checkpoint, const std::string& pair_id,
                         const std::optional<std::filesystem::path>& data, RouteSource routing) {
  TrainedModel tm = load_trained(checkpoint);
  const auto records = load_dataset(data_for(tm, checkpoint, data));
  const DatasetRecord& r = find_record(records, pair_id);
  std::optional<int> override;
  if (routing == RouteSource::kGroundTruth) override = r.label;
  EncodeResult enc = tm.model.encode(r.features(), override);
  Description d;
  d.id = r.id;
  d.label = r.label;
  d.caption = tm.vocab.decode(tm.model.generate(enc.hasd.visual));
  d.decision = enc.hasd.decision;
  return d;
}

std::vector<std::filesystem::path> run_heatmap(const std::filesystem::path& checkpoint, const std::string& pair_id,
                                               const std::filesystem::path& out_dir,
                                               const std::optional<std::filesystem::path>& data, bool identical) {
  TrainedModel tm = load_trained(checkpoint);
  const auto records = load_dataset(data_for(tm, checkpoint, data));
  BiTemporalFeatures x = find_record(records, pair_id).features();
  if (identical) x.f_t2 = x.f_t1;
  return write_heatmaps(bdam_heatmaps(tm.model, x), out_dir, pair_id);
}

}  // namespace hisem
