#pragma once

// Experiment configs, the run driver and the on-disk trace/summary formats.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "distalign/guidance.hpp"
#include "distalign/oracles.hpp"
#include "distalign/solvers.hpp"
#include "json.hpp"

namespace distalign {

enum class SolverKind { Ida, Rs };

struct ToyBackendConfig {
  /// Component distribution the prompt asks for; what the unguided generator produces.
  /// Normalized on load.
  std::vector<double> prior;
  /// Unconditioned component distribution; empty means uniform.
  std::vector<double> unconditioned;
  double component_std = ToyTestbedDefaults::kComponentStd;
  double radius = 1.0;
  std::vector<Vec> means;  // empty means equal angles on a circle
  int steps = ToyTestbedDefaults::kSteps;
  double beta_start = ToyTestbedDefaults::kBetaStart;
  double beta_end = ToyTestbedDefaults::kBetaEnd;
  GuidanceParams guidance = ToyTestbedDefaults::guidance();
  unsigned threads = 0;
};

struct SimBackendConfig {
  std::size_t hidden_dim = 8;
  std::uint64_t weight_seed = 0;
  bool sample_noise = true;
};

struct RemoteBackendConfig {
  std::string endpoint;
  std::string prompt;
  RetryPolicy retry;
};

struct ExperimentConfig {
  int version = 1;
  std::vector<std::string> labels;
  Backend backend = Backend::ToyDiffusion;
  std::optional<ToyBackendConfig> toy;
  std::optional<SimBackendConfig> sim;
  std::optional<RemoteBackendConfig> remote;
  SolverKind solver = SolverKind::Ida;
  IdaParams ida;
  RsParams rs;
  OracleConfig oracle;
  std::string output_dir = "out";

  std::size_t groups() const noexcept { return labels.size(); }
};

/// Strict parse: unknown keys and inconsistent group counts throw InvalidConfig.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

std::unique_ptr<Oracle> make_oracle(const ExperimentConfig& cfg);

SolverResult run_solver(const ExperimentConfig& cfg, const Oracle& oracle);

struct RunOutcome {
  SolverResult result;
  std::filesystem::path trace_path;
  std::filesystem::path summary_path;
};

/// Builds the oracle, runs the configured solver and writes trace.csv and
/// summary.json into `output_dir` (or cfg.output_dir).
RunOutcome run_experiment(const ExperimentConfig& cfg,
                          const std::optional<std::filesystem::path>& output_dir = std::nullopt);

/// One row of trace.csv.
struct TraceRow {
  std::size_t iter = 0;
  double kl = 0.0;
  std::vector<double> a;
  std::vector<double> freq;
};

/// Columns: iter, kl, a_0..a_{n-1}, freq_0..freq_{n-1}; reals with 9 significant digits.
void write_trace_csv(std::ostream& out, const SolverTrace& trace);
std::vector<TraceRow> read_trace_csv(std::istream& in);

nlohmann::json make_summary(const ExperimentConfig& cfg, const SolverResult& result);

const char* to_string(Backend backend);
const char* to_string(SolverKind solver);

}  // namespace distalign
