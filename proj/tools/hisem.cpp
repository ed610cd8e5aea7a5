// hisem: generate synthetic data, train, evaluate, describe pairs and dump
// BDAM heatmaps. Failures print one line, "error: <code>: <message>", to
// stderr and exit nonzero.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "hisem/pipeline.hpp"

namespace {

struct CliError {
  std::string code;
  std::string message;
  int exit_code;
};

[[noreturn]] void fail(const std::string& code, const std::string& message, int exit_code = 1) {
  throw CliError{code, message, exit_code};
}

hisem::RouteSource parse_routing(const std::string& s) {
  if (s == "gt") return hisem::RouteSource::kGroundTruth;
  if (s == "pre") return hisem::RouteSource::kPredicted;
  fail("usage", "--routing must be pre or gt, got " + s, 2);
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HiSem change captioning on synthetic bi-temporal features"};
  app.require_subcommand(1);

  std::size_t gen_n = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  hisem::SynthConfig synth;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset (JSON lines)");
  gen->add_option("--n", gen_n, "Number of pairs (>= 2)")->required();
  gen->add_option("--seed", gen_seed, "Generator seed")->required();
  gen->add_option("--out", gen_out, "Output file")->required();
  gen->add_option("--noise", synth.noise, "Gaussian noise amplitude")->capture_default_str();
  gen->add_option("--signal", synth.signal, "Planted signal amplitude")->capture_default_str();
  gen->add_option("--dim", synth.dim, "Feature channels")->capture_default_str();
  gen->add_option("--height", synth.height, "Grid rows")->capture_default_str();
  gen->add_option("--width", synth.width, "Grid columns")->capture_default_str();

  std::string train_config, train_resume;
  bool train_verbose = false;
  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", train_config, "Run config (JSON)")->required();
  train->add_option("--resume", train_resume, "Checkpoint to resume from");
  train->add_flag("--verbose", train_verbose, "Print one line per epoch");

  std::string eval_ckpt, eval_data, eval_routing = "pre", eval_out;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset file")->required();
  eval->add_option("--routing", eval_routing, "pre (predicted path) or gt (ground-truth path)")->capture_default_str();
  eval->add_option("--out-dir", eval_out, "Where to write eval_*.json (default: checkpoint dir)");

  std::string desc_ckpt, desc_id, desc_data, desc_routing = "pre";
  auto* describe = app.add_subcommand("describe", "Caption one pair and show its routing");
  describe->add_option("--checkpoint", desc_ckpt, "Checkpoint file")->required();
  describe->add_option("--pair-id", desc_id, "Record id")->required();
  describe->add_option("--data", desc_data, "Dataset file (default: the run's training data)");
  describe->add_option("--routing", desc_routing, "pre or gt")->capture_default_str();

  std::string heat_ckpt, heat_id, heat_out, heat_data;
  bool heat_identical = false;
  auto* heatmap = app.add_subcommand("heatmap", "Write |F1 - F2| maps before and after each BDAM layer");
  heatmap->add_option("--checkpoint", heat_ckpt, "Checkpoint file")->required();
  heatmap->add_option("--pair-id", heat_id, "Record id")->required();
  heatmap->add_option("--out", heat_out, "Output directory")->required();
  heatmap->add_option("--data", heat_data, "Dataset file (default: the run's training data)");
  heatmap->add_flag("--identical", heat_identical, "Feed the t1 grid as both observations");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      fail("usage", e.what(), 2);
    }

    auto opt_path = [](const std::string& s) -> std::optional<std::filesystem::path> {
      if (s.empty()) return std::nullopt;
      return std::filesystem::path(s);
    };

    if (*gen) {
      const auto s = hisem::run_gen(gen_n, gen_seed, synth, gen_out);
      std::printf("wrote %zu records to %s (changed %zu, unchanged %zu)\n", s.records, gen_out.c_str(), s.changed,
                  s.unchanged);
    } else if (*train) {
      hisem::RunConfig cfg = hisem::load_run_config(train_config);
      const auto report = hisem::run_train(cfg, opt_path(train_resume), train_verbose);
      const auto& last = report.rows.back();
      std::printf("trained %zu epochs: caption loss %.5f, routing loss %.5f, router accuracy %.1f%%\n",
                  report.rows.size(), last.caption_loss, last.routing_loss, last.router_accuracy);
      std::printf("checkpoint: %s\n", (cfg.out_dir / "model.ckpt").c_str());
    } else if (*eval) {
      const auto out = hisem::run_eval(eval_ckpt, eval_data, parse_routing(eval_routing), opt_path(eval_out));
      std::vector<hisem::MetricReport> rows(out.result.reports.begin(), out.result.reports.end());
      std::printf("routing: %s\n%s", eval_routing.c_str(), hisem::format_reports(rows).c_str());
      std::printf("report: %s\n", out.report_path.c_str());
      if (out.rho) std::printf("\n%srho table: %s\n", hisem::format_rho(*out.rho).c_str(), out.rho_path->c_str());
    } else if (*describe) {
      const auto d = hisem::run_describe(desc_ckpt, desc_id, opt_path(desc_data), parse_routing(desc_routing));
      std::printf("pair: %s\ncaption: %s\npath: %s\nsource: %s\npath_probs: %.6f %.6f\n", d.id.c_str(),
                  d.caption.c_str(), hisem::to_string(d.decision.path), hisem::to_string(d.decision.source),
                  d.decision.path_probs[0], d.decision.path_probs[1]);
    } else if (*heatmap) {
      const auto paths = hisem::run_heatmap(heat_ckpt, heat_id, heat_out, opt_path(heat_data), heat_identical);
      for (const auto& p : paths) std::printf("%s\n", p.c_str());
    }
    return 0;
  } catch (const CliError& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.code.c_str(), one_line(e.message).c_str());
    return e.exit_code;
  } catch (const hisem::ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", one_line(e.what()).c_str());
  } catch (const hisem::DatasetFormatError& e) {
    std::fprintf(stderr, "error: data: %s\n", one_line(e.what()).c_str());
  } catch (const std::out_of_range& e) {
    std::fprintf(stderr, "error: not_found: %s\n", one_line(e.what()).c_str());
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: invalid: %s\n", one_line(e.what()).c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: runtime: %s\n", one_line(e.what()).c_str());
  }
  return 1;
}
