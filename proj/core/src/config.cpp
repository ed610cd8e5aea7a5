#include "hisem/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hisem {

using nlohmann::json;

ConfigError::ConfigError(std::string key, const std::string& what)
    : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

namespace {

// Typed access to one JSON object, remembering which keys were consumed so
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError(prefix_.empty() ? "" : prefix_, "expected a JSON object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  std::string full(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  std::size_t count(const std::string& key, std::size_t& out) {
    if (!has(key)) return out;
    const json& v = obj_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(full(key), "expected a non-negative integer");
    out = v.get<std::size_t>();
    return out;
  }

  void real(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(full(key), "expected a number");
    out = v.get<double>();
  }

  void flag(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(full(key), "expected true or false");
    out = v.get<bool>();
  }

  std::optional<std::string> text(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(full(key), "expected a string");
    return v.get<std::string>();
  }

  std::optional<Section> child(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return Section(obj_.at(key), full(key));
  }

  void reject_unknown() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(full(item.key()), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void check_positive(std::size_t v, const std::string& key) {
  if (v == 0) throw ConfigError(key, "must be >= 1");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
  RunConfig cfg;
  Section root(doc, "");
  auto train_data = root.text("train_data");
  if (!train_data) throw ConfigError("train_data", "missing required key");
  cfg.train_data = *train_data;
  auto out_dir = root.text("out_dir");
  if (!out_dir) throw ConfigError("out_dir", "missing required key");
  cfg.out_dir = *out_dir;
  if (auto v = root.text("val_data")) cfg.val_data = *v;
  if (root.has("seed")) {
    const json& s = doc.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
      throw ConfigError("seed", "expected a non-negative integer");
    }
    cfg.seed = s.get<std::uint64_t>();
  }

  if (auto m = root.child("model")) {
    m->count("dim", cfg.dim);
    m->count("bdam_layers", cfg.bdam_layers);
    m->count("bdam_cond_hidden", cfg.bdam_cond_hidden);
    m->flag("bdam_tied", cfg.bdam_tied);
    m->count("hasd_ffn_hidden", cfg.hasd_ffn_hidden);
    m->count("decoder_layers", cfg.decoder_layers);
    m->count("decoder_ffn_hidden", cfg.decoder_ffn_hidden);
    m->count("max_words", cfg.max_words);
    m->count("min_freq", cfg.min_freq);
    m->reject_unknown();
  }
  if (auto m = root.child("moe")) {
    m->count("num_experts", cfg.moe.num_experts);
    m->count("num_groups", cfg.moe.num_groups);
    m->count("groups_topk", cfg.moe.groups_topk);
    m->count("experts_topk", cfg.moe.experts_topk);
    m->count("num_shared_experts", cfg.moe.num_shared_experts);
    m->count("expert_hidden", cfg.moe.expert_hidden);
    m->reject_unknown();
  }
  if (auto t = root.child("train")) {
    t->count("epochs", cfg.epochs);
    if (t->has("warmup_epochs")) {
      std::size_t w = 0;
      t->count("warmup_epochs", w);
      cfg.warmup_epochs = w;
    }
    t->real("lambda_cls", cfg.lambda_cls);
    t->real("learning_rate", cfg.learning_rate);
    t->count("batch_size", cfg.batch_size);
    t->real("grad_clip", cfg.grad_clip);
    if (auto r = t->text("routing")) {
      if (*r == "gt") {
        cfg.routing = TrainRouting::kGroundTruth;
      } else if (*r == "pre") {
        cfg.routing = TrainRouting::kPredicted;
      } else {
        throw ConfigError("train.routing", "expected \"gt\" or \"pre\", got \"" + *r + "\"");
      }
    }
    t->count("checkpoint_every", cfg.checkpoint_every);
    t->count("eval_every", cfg.eval_every);
    t->reject_unknown();
  }
  root.reject_unknown();

  check_positive(cfg.dim, "model.dim");
  check_positive(cfg.bdam_layers, "model.bdam_layers");
  check_positive(cfg.bdam_cond_hidden, "model.bdam_cond_hidden");
  check_positive(cfg.hasd_ffn_hidden, "model.hasd_ffn_hidden");
  check_positive(cfg.decoder_layers, "model.decoder_layers");
  check_positive(cfg.decoder_ffn_hidden, "model.decoder_ffn_hidden");
  check_positive(cfg.max_words, "model.max_words");
  check_positive(cfg.min_freq, "model.min_freq");
  check_positive(cfg.epochs, "train.epochs");
  check_positive(cfg.batch_size, "train.batch_size");
  try {
    cfg.moe.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("moe", e.what());
  }
  if (cfg.warmup_epochs && *cfg.warmup_epochs >= cfg.epochs) {
    throw ConfigError("train.warmup_epochs", "must be below train.epochs");
  }
  if (!(cfg.lambda_cls >= 0.0)) throw ConfigError("train.lambda_cls", "must be >= 0");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
  return cfg;
}

void apply_seed_override(RunConfig& cfg) {
  const char* env = std::getenv("HISEM_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || *end != '\0' || env[0] == '-') {
    throw ConfigError("HISEM_SEED", std::string("not a non-negative integer: ") + env);
  }
  cfg.seed = v;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig cfg = parse_run_config(buf.str());
  apply_seed_override(cfg);
  const auto base = path.parent_path();
  auto resolve = [&](std::filesystem::path& p) {
    if (p.is_relative()) p = std::filesystem::absolute(base / p).lexically_normal();
  };
  resolve(cfg.train_data);
  resolve(cfg.out_dir);
  if (cfg.val_data) resolve(*cfg.val_data);
  if (!std::filesystem::exists(cfg.train_data)) {
    throw ConfigError("train_data", "file does not exist: " + cfg.train_data.string());
  }
  if (cfg.val_data && !std::filesystem::exists(*cfg.val_data)) {
    throw ConfigError("val_data", "file does not exist: " + cfg.val_data->string());
  }
  return cfg;
}

std::string to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["train_data"] = cfg.train_data.string();
  j["val_data"] = cfg.val_data ? nlohmann::ordered_json(cfg.val_data->string()) : nlohmann::ordered_json();
  j["out_dir"] = cfg.out_dir.string();
  j["seed"] = cfg.seed;
  j["model"] = {{"dim", cfg.dim},
                {"bdam_layers", cfg.bdam_layers},
                {"bdam_cond_hidden", cfg.bdam_cond_hidden},
                {"bdam_tied", cfg.bdam_tied},
                {"hasd_ffn_hidden", cfg.hasd_ffn_hidden},
                {"decoder_layers", cfg.decoder_layers},
                {"decoder_ffn_hidden", cfg.decoder_ffn_hidden},
                {"max_words", cfg.max_words},
                {"min_freq", cfg.min_freq}};
  j["moe"] = {{"num_experts", cfg.moe.num_experts},
              {"num_groups", cfg.moe.num_groups},
              {"groups_topk", cfg.moe.groups_topk},
              {"experts_topk", cfg.moe.experts_topk},
              {"num_shared_experts", cfg.moe.num_shared_experts},
              {"expert_hidden", cfg.moe.expert_hidden}};
  nlohmann::ordered_json t;
  t["epochs"] = cfg.epochs;
  t["warmup_epochs"] = cfg.warmup_epochs.value_or(cfg.epochs / 5);
  t["lambda_cls"] = cfg.lambda_cls;
  t["learning_rate"] = cfg.learning_rate;
  t["batch_size"] = cfg.batch_size;
  t["grad_clip"] = cfg.grad_clip;
  t["routing"] = cfg.routing == TrainRouting::kGroundTruth ? "gt" : "pre";
  t["checkpoint_every"] = cfg.checkpoint_every;
  t["eval_every"] = cfg.eval_every;
  j["train"] = t;
  return j.dump(2) + "\n";
}

ModelConfig make_model_config(const RunConfig& cfg, std::size_t input_dim, std::size_t height,
                              std::size_t width, std::size_t vocab_size) {
  ModelConfig m;
  m.input_dim = input_dim;
  m.height = height;
  m.width = width;
  m.dim = cfg.dim;
  m.bdam.layers = cfg.bdam_layers;
  m.bdam.cond_hidden = cfg.bdam_cond_hidden;
  m.bdam.tied = cfg.bdam_tied;
  m.hasd.ffn_hidden = cfg.hasd_ffn_hidden;
  m.hasd.moe = cfg.moe;
  m.decoder.layers = cfg.decoder_layers;
  m.decoder.ffn_hidden = cfg.decoder_ffn_hidden;
  m.decoder.max_words = cfg.max_words;
  m.decoder.vocab_size = vocab_size;
  m.finalize();
  return m;
}

TrainOptions make_train_options(const RunConfig& cfg) {
  TrainOptions o;
  o.curriculum.total_epochs = cfg.epochs;
  o.curriculum.warmup_epochs = cfg.warmup_epochs;
  o.curriculum.lambda = cfg.lambda_cls;
  o.curriculum.learning_rate = cfg.learning_rate;
  o.curriculum.batch_size = cfg.batch_size;
  o.curriculum.seed = cfg.seed;
  o.grad_clip = cfg.grad_clip;
  o.routing = cfg.routing;
  o.checkpoint_every = cfg.checkpoint_every;
  o.eval_every = cfg.eval_every;
  o.out_dir = cfg.out_dir;
  return o;
}

}  // namespace hisem
