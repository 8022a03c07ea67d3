// distalign: run weight-alignment experiments, evaluate the KL loss and render reports.
//
//   distalign run <config.json> [--out DIR]
//   distalign eval-loss <p_0> <p_1> ...
//   distalign report <trace.csv> [--svg out.svg]
//
// Exit codes: 0 success / converged, 2 solver stopped without converging, 1 error.
// DIST_ALIGN_LOG sets the log level (trace, debug, info, warn, error, off).

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "distalign/core.hpp"
#include "distalign/error.hpp"
#include "distalign/experiment.hpp"
#include "distalign/report.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using namespace distalign;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("distalign");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("DIST_ALIGN_LOG")) spdlog::set_level(spdlog::level::from_str(level));
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = load_config(config_path);
  spdlog::info("{} on {} backend, {} groups, {} samples per evaluation", to_string(cfg.solver),
               to_string(cfg.backend), cfg.groups(), cfg.oracle.num_samples);
  std::optional<fs::path> dir;
  if (!out_dir.empty()) dir = fs::path(out_dir);
  const auto outcome = run_experiment(cfg, dir);
  const auto& trace = outcome.result.trace;
  for (const auto& r : trace.records()) {
    if (cfg.solver == SolverKind::Ida || trace.size() <= 50) spdlog::debug("t={} kl={:.6f}", r.t, r.kl);
  }
  const auto& best = trace.records()[trace.best_index()];
  spdlog::info("{} after {} evaluations; final KL {:.6f}, best KL {:.6f} at t={}",
               outcome.result.converged ? "converged" : "not converged", trace.size(), trace.back().kl, best.kl,
               best.t);
  spdlog::info("wrote {} and {}", outcome.trace_path.string(), outcome.summary_path.string());
  return outcome.result.converged ? 0 : 2;
}

int cmd_eval_loss(const std::vector<std::string>& args) {
  if (args.size() < 2) throw InvalidInput("eval-loss needs at least two values");
  std::vector<double> values;
  double sum = 0.0;
  for (const auto& s : args) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::logic_error&) {
      throw InvalidInput("not a number: '" + s + "'");
    }
    if (used != s.size()) throw InvalidInput("not a number: '" + s + "'");
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("values must be finite and non-negative");
    values.push_back(v);
    sum += v;
  }
  if (!(sum > 0.0)) throw InvalidInput("values must have a positive sum");
  for (double& v : values) v /= sum;
  std::printf("%.6f\n", kl_to_uniform(NormalizedDistribution(std::move(values))));
  return 0;
}

std::vector<std::string> labels_near(const fs::path& trace_path) {
  const auto summary = trace_path.parent_path() / "summary.json";
  std::ifstream in(summary);
  if (!in) return {};
  const auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_object() && doc.contains("labels") && doc["labels"].is_array()) {
    try {
      return doc["labels"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception&) {
    }
  }
  return {};
}

int cmd_report(const std::string& trace_path, const std::string& svg_path) {
  std::ifstream in(trace_path);
  if (!in) throw InvalidInput("cannot open " + trace_path);
  const auto rows = read_trace_csv(in);
  std::cout << render_markdown(rows, labels_near(trace_path));
  if (!svg_path.empty()) {
    std::ofstream svg(svg_path);
    if (!svg) throw InvalidInput("cannot write " + svg_path);
    svg << render_svg(rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Distribution alignment for black-box categorical generators"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* run = app.add_subcommand("run", "Run the solver described by a config file");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory (overrides output_dir in the config)");

  std::vector<std::string> probs;
  auto* eval = app.add_subcommand("eval-loss", "Print the KL divergence of the normalized values to uniform");
  eval->add_option("values", probs, "Non-negative frequencies or counts")->required();

  std::string trace_path, svg_path;
  auto* report = app.add_subcommand("report", "Render a trace as a markdown table");
  report->add_option("trace", trace_path, "trace.csv written by `run`")->required();
  report->add_option("--svg", svg_path, "Also write a KL-vs-iteration chart");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir);
    if (*eval) return cmd_eval_loss(probs);
    if (*report) return cmd_report(trace_path, svg_path);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
