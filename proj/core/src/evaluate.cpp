#include "hisem/evaluate.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "json.hpp"

namespace hisem {

using ojson = nlohmann::ordered_json;

std::vector<Prediction> predict(const HiSemModel& model, const Vocabulary& vocab,
                                const std::vector<DatasetRecord>& records, RouteSource routing) {
  std::vector<Prediction> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    std::optional<int> override;
    if (routing == RouteSource::kGroundTruth) override = r.label;
    EncodeResult enc = model.encode(r.features(), override);
    Prediction p;
    p.id = r.id;
    p.label = r.label;
    p.caption = vocab.decode(model.generate(enc.hasd.visual));
    p.decision = enc.hasd.decision;
    out.push_back(std::move(p));
  }
  return out;
}

EvalResult evaluate(const HiSemModel& model, const Vocabulary& vocab, const std::vector<DatasetRecord>& records,
                    RouteSource routing) {
  if (records.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult res;
  res.routing = routing;
  res.predictions = predict(model, vocab, records, routing);
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  std::vector<int> labels, paths;
  for (std::size_t i = 0; i < records.size(); ++i) {
    cands.push_back(res.predictions[i].caption);
    refs.push_back(records[i].captions);
    labels.push_back(records[i].label);
    paths.push_back(static_cast<int>(res.predictions[i].decision.path));
  }
  res.reports = stratified_evaluate(cands, refs, labels, paths);
  return res;
}

std::string content_hash(const std::vector<std::filesystem::path>& files) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + f.string());
    for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
      h ^= static_cast<unsigned char>(*it);
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

const char* routing_name(RouteSource s) { return s == RouteSource::kGroundTruth ? "gt" : "pre"; }

struct MetricField {
  const char* key;
  std::optional<double> MetricReport::*field;
};

constexpr MetricField kFields[] = {
    {"bleu1", &MetricReport::bleu1},     {"bleu2", &MetricReport::bleu2},   {"bleu3", &MetricReport::bleu3},
    {"bleu4", &MetricReport::bleu4},     {"meteor", &MetricReport::meteor}, {"rouge_l", &MetricReport::rouge_l},
    {"cider_d", &MetricReport::cider_d}, {"s_star_m", &MetricReport::s_star_m},
};

ojson report_json(const MetricReport& r) {
  ojson j;
  j["stratum"] = to_string(r.stratum);
  j["n_samples"] = r.n_samples;
  for (const auto& f : kFields) j[f.key] = (r.*f.field) ? ojson(*(r.*f.field)) : ojson();
  j["router_accuracy"] = r.router_accuracy ? ojson(*r.router_accuracy) : ojson();
  return j;
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  const std::string s = j.at("stratum").get<std::string>();
  r.stratum = s == "changed" ? Stratum::kChanged : s == "unchanged" ? Stratum::kUnchanged : Stratum::kAll;
  r.n_samples = j.at("n_samples").get<std::size_t>();
  for (const auto& f : kFields) {
    if (!j.at(f.key).is_null()) r.*f.field = j.at(f.key).get<double>();
  }
  if (!j.at("router_accuracy").is_null()) r.router_accuracy = j.at("router_accuracy").get<double>();
  return r;
}

}  // namespace

std::string eval_to_json(const EvalResult& result) {
  ojson j;
  j["routing"] = routing_name(result.routing);
  j["hash"] = result.hash;
  j["reports"] = ojson::array();
  for (const auto& r : result.reports) j["reports"].push_back(report_json(r));
  j["predictions"] = ojson::array();
  for (const auto& p : result.predictions) {
    ojson row;
    row["id"] = p.id;
    row["caption"] = p.caption;
    row["label"] = p.label;
    row["path"] = to_string(p.decision.path);
    row["source"] = to_string(p.decision.source);
    row["path_probs"] = {p.decision.path_probs[0], p.decision.path_probs[1]};
    j["predictions"].push_back(row);
  }
  return j.dump(2) + "\n";
}

EvalResult eval_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalResult r;
  r.routing = j.at("routing").get<std::string>() == "gt" ? RouteSource::kGroundTruth : RouteSource::kPredicted;
  r.hash = j.at("hash").get<std::string>();
  const auto& reports = j.at("reports");
  if (reports.size() != r.reports.size()) throw std::runtime_error("eval report must hold three strata");
  for (std::size_t i = 0; i < r.reports.size(); ++i) r.reports[i] = report_from_json(reports.at(i));
  return r;
}

std::vector<RhoRow> rho_table(const EvalResult& pre, const EvalResult& gt) {
  if (pre.routing != RouteSource::kPredicted || gt.routing != RouteSource::kGroundTruth) {
    throw std::invalid_argument("rho_table needs one predicted-routing and one ground-truth-routing result");
  }
  if (pre.hash != gt.hash) {
    throw std::invalid_argument("rho_table: results come from different checkpoint/data (" + pre.hash + " vs " +
                                gt.hash + ")");
  }
  std::vector<RhoRow> rows;
  for (std::size_t s = 0; s < pre.reports.size(); ++s) {
    const MetricReport& a = pre.reports[s];
    const MetricReport& b = gt.reports[s];
    if (!a.router_accuracy || !b.router_accuracy) continue;
    RhoRow row;
    row.stratum = a.stratum;
    row.acc_pre = *a.router_accuracy;
    row.acc_gt = *b.router_accuracy;
    for (const auto& f : kFields) {
      if (!(a.*f.field) || !(b.*f.field)) continue;
      RhoCell c;
      c.metric = f.key;
      c.pre = *(a.*f.field);
      c.gt = *(b.*f.field);
      if (row.acc_gt != row.acc_pre) c.rho = rho_conversion(c.pre, c.gt, row.acc_pre, row.acc_gt);
      row.cells.push_back(c);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string rho_to_json(const std::vector<RhoRow>& rows, const std::string& hash) {
  ojson j;
  j["hash"] = hash;
  j["rows"] = ojson::array();
  for (const auto& r : rows) {
    ojson row;
    row["stratum"] = to_string(r.stratum);
    row["acc_pre"] = r.acc_pre;
    row["acc_gt"] = r.acc_gt;
    ojson cells;
    for (const auto& c : r.cells) {
      cells[c.metric] = {{"pre", c.pre}, {"gt", c.gt}, {"rho", c.rho ? ojson(*c.rho) : ojson()}};
    }
    row["metrics"] = cells;
    j["rows"].push_back(row);
  }
  return j.dump(2) + "\n";
}

std::string format_rho(const std::vector<RhoRow>& rows) {
  std::string out;
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s pairs: router accuracy %.2f -> %.2f\n", to_string(r.stratum), r.acc_pre,
                  r.acc_gt);
    out += buf;
    for (const auto& c : r.cells) {
      if (c.rho) {
        std::snprintf(buf, sizeof buf, "  %-9s %8.2f -> %8.2f   rho %6.2f\n", c.metric.c_str(), c.pre, c.gt, *c.rho);
      } else {
        std::snprintf(buf, sizeof buf, "  %-9s %8.2f -> %8.2f   rho      -\n", c.metric.c_str(), c.pre, c.gt);
      }
      out += buf;
    }
  }
  return out;
}

}  // namespace hisem
