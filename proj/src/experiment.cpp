#include "distalign/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "distalign/error.hpp"

namespace distalign {

using nlohmann::json;

const char* to_string(Backend backend) {
  switch (backend) {
    case Backend::ToyDiffusion: return "toy-diffusion";
    case Backend::SoftmaxSim: return "softmax-sim";
    case Backend::Remote: return "remote";
  }
  return "unknown";
}

const char* to_string(SolverKind solver) { return solver == SolverKind::Ida ? "ida" : "rs"; }

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw InvalidConfig(where + " must be a JSON object");
  const std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw InvalidConfig("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

double read_extended_real(const json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw InvalidConfig(where + " must be a number, \"inf\" or \"-inf\"");
}

// Relative weights; rescaled to sum to one so table rows can be pasted verbatim.
std::vector<double> read_weights(const json& v, const std::string& where) {
  auto w = v.get<std::vector<double>>();
  double sum = 0.0;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidConfig(where + " entries must be finite and non-negative");
    sum += x;
  }
  if (!(sum > 0.0)) throw InvalidConfig(where + " must have a positive sum");
  for (double& x : w) x /= sum;
  return w;
}

void require_groups(std::size_t n, std::size_t got, const std::string& what) {
  if (got != n)
    throw InvalidConfig("labels has " + std::to_string(n) + " entries but " + what + " has " +
                        std::to_string(got) + " entries");
}

Backend parse_backend(const std::string& s) {
  if (s == "toy-diffusion") return Backend::ToyDiffusion;
  if (s == "softmax-sim") return Backend::SoftmaxSim;
  if (s == "remote") return Backend::Remote;
  throw InvalidConfig("unknown backend '" + s + "'");
}

ToyBackendConfig parse_toy(const json& obj, std::size_t n) {
  check_keys(obj, {"prior", "unconditioned", "component_std", "radius", "means", "schedule", "guidance", "threads"},
             "toy");
  ToyBackendConfig toy;
  if (!obj.contains("prior")) throw InvalidConfig("toy.prior is required");
  toy.prior = read_weights(obj.at("prior"), "toy.prior");
  require_groups(n, toy.prior.size(), "toy.prior");
  if (obj.contains("unconditioned")) {
    const auto& u = obj.at("unconditioned");
    if (u.is_string() && u.get<std::string>() == "uniform") {
      toy.unconditioned.clear();
    } else if (u.is_string() && u.get<std::string>() == "prior") {
      toy.unconditioned = toy.prior;
    } else if (u.is_array()) {
      toy.unconditioned = read_weights(u, "toy.unconditioned");
      require_groups(n, toy.unconditioned.size(), "toy.unconditioned");
    } else {
      throw InvalidConfig("toy.unconditioned must be \"uniform\", \"prior\" or an array");
    }
  }
  read(obj, "component_std", toy.component_std);
  read(obj, "radius", toy.radius);
  read(obj, "means", toy.means);
  if (!toy.means.empty()) require_groups(n, toy.means.size(), "toy.means");
  read(obj, "threads", toy.threads);
  if (obj.contains("schedule")) {
    const auto& s = obj.at("schedule");
    check_keys(s, {"steps", "beta_start", "beta_end"}, "toy.schedule");
    read(s, "steps", toy.steps);
    read(s, "beta_start", toy.beta_start);
    read(s, "beta_end", toy.beta_end);
  }
  if (obj.contains("guidance")) {
    const auto& g = obj.at("guidance");
    check_keys(g, {"guidance_scale", "safety_scale", "threshold", "warmup"}, "toy.guidance");
    read(g, "guidance_scale", toy.guidance.guidance_scale);
    read(g, "safety_scale", toy.guidance.safety_scale);
    if (g.contains("threshold")) toy.guidance.threshold = read_extended_real(g.at("threshold"), "toy.guidance.threshold");
    read(g, "warmup", toy.guidance.warmup);
  }
  return toy;
}

SimBackendConfig parse_sim(const json& obj) {
  check_keys(obj, {"hidden_dim", "weight_seed", "sample_noise"}, "sim");
  SimBackendConfig sim;
  read(obj, "hidden_dim", sim.hidden_dim);
  read(obj, "weight_seed", sim.weight_seed);
  read(obj, "sample_noise", sim.sample_noise);
  return sim;
}

RemoteBackendConfig parse_remote(const json& obj) {
  check_keys(obj, {"endpoint", "prompt", "max_attempts", "initial_backoff_ms", "timeout_ms"}, "remote");
  RemoteBackendConfig remote;
  if (!obj.contains("endpoint")) throw InvalidConfig("remote.endpoint is required");
  remote.endpoint = obj.at("endpoint").get<std::string>();
  read(obj, "prompt", remote.prompt);
  read(obj, "max_attempts", remote.retry.max_attempts);
  if (obj.contains("initial_backoff_ms"))
    remote.retry.initial_backoff = std::chrono::milliseconds(obj.at("initial_backoff_ms").get<std::int64_t>());
  if (obj.contains("timeout_ms"))
    remote.retry.timeout = std::chrono::milliseconds(obj.at("timeout_ms").get<std::int64_t>());
  return remote;
}

IdaParams parse_ida(const json& obj) {
  check_keys(obj, {"alpha", "threshold", "max_iters", "baseline_mode"}, "ida");
  IdaParams p;
  read(obj, "alpha", p.alpha);
  read(obj, "threshold", p.threshold);
  read(obj, "max_iters", p.max_iters);
  if (obj.contains("baseline_mode")) {
    const auto mode = obj.at("baseline_mode").get<std::string>();
    if (mode == "off") p.baseline_mode = BaselineMode::Off;
    else if (mode == "zero-weights") p.baseline_mode = BaselineMode::ZeroWeights;
    else throw InvalidConfig("ida.baseline_mode must be \"off\" or \"zero-weights\"");
  }
  return p;
}

RsParams parse_rs(const json& obj) {
  check_keys(obj, {"eta", "population", "max_iters", "threshold", "baseline", "momentum", "init_seed"}, "rs");
  RsParams p;
  read(obj, "eta", p.eta);
  read(obj, "population", p.population);
  read(obj, "max_iters", p.max_iters);
  if (obj.contains("threshold")) p.threshold = read_extended_real(obj.at("threshold"), "rs.threshold");
  read(obj, "momentum", p.momentum);
  read(obj, "init_seed", p.init_seed);
  if (obj.contains("baseline")) {
    const auto b = obj.at("baseline").get<std::string>();
    if (b == "none") p.baseline = RewardBaseline::None;
    else if (b == "mean") p.baseline = RewardBaseline::Mean;
    else if (b == "min") p.baseline = RewardBaseline::Min;
    else throw InvalidConfig("rs.baseline must be \"none\", \"mean\" or \"min\"");
  }
  return p;
}

ExperimentConfig parse_config_unchecked(const json& doc) {
  check_keys(doc, {"version", "labels", "backend", "toy", "sim", "remote", "solver", "ida", "rs", "oracle",
                   "output_dir"},
             "config");
  ExperimentConfig cfg;
  if (!doc.contains("version")) throw InvalidConfig("config is missing 'version'");
  cfg.version = doc.at("version").get<int>();
  if (cfg.version != 1) throw InvalidConfig("unsupported config version " + std::to_string(cfg.version));
  if (!doc.contains("labels")) throw InvalidConfig("config is missing 'labels'");
  cfg.labels = doc.at("labels").get<std::vector<std::string>>();
  AttributeSet::one_hot(cfg.labels);  // validates count and uniqueness
  const std::size_t n = cfg.labels.size();

  cfg.backend = parse_backend(doc.value("backend", std::string("toy-diffusion")));
  cfg.oracle.backend = cfg.backend;
  switch (cfg.backend) {
    case Backend::ToyDiffusion:
      if (!doc.contains("toy")) throw InvalidConfig("backend toy-diffusion needs a 'toy' section");
      cfg.toy = parse_toy(doc.at("toy"), n);
      break;
    case Backend::SoftmaxSim:
      cfg.sim = doc.contains("sim") ? parse_sim(doc.at("sim")) : SimBackendConfig{};
      break;
    case Backend::Remote:
      if (!doc.contains("remote")) throw InvalidConfig("backend remote needs a 'remote' section");
      cfg.remote = parse_remote(doc.at("remote"));
      break;
  }

  const auto solver = doc.value("solver", std::string("ida"));
  if (solver == "ida") cfg.solver = SolverKind::Ida;
  else if (solver == "rs") cfg.solver = SolverKind::Rs;
  else throw InvalidConfig("solver must be \"ida\" or \"rs\"");
  if (doc.contains("ida")) cfg.ida = parse_ida(doc.at("ida"));
  if (doc.contains("rs")) cfg.rs = parse_rs(doc.at("rs"));

  if (doc.contains("oracle")) {
    const auto& o = doc.at("oracle");
    check_keys(o, {"num_samples", "seed"}, "oracle");
    read(o, "num_samples", cfg.oracle.num_samples);
    read(o, "seed", cfg.oracle.seed);
  }
  if (cfg.oracle.num_samples < 1) throw InvalidConfig("oracle.num_samples must be >= 1");
  read(doc, "output_dir", cfg.output_dir);
  return cfg;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_real(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw InvalidInput("bad number in trace: '" + s + "'");
  return v;
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  try {
    return parse_config_unchecked(doc);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open config " + path.string());
  const auto doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw InvalidConfig("config " + path.string() + " is not valid JSON");
  return parse_config(doc);
}

std::unique_ptr<Oracle> make_oracle(const ExperimentConfig& cfg) {
  const std::size_t n = cfg.groups();
  switch (cfg.backend) {
    case Backend::ToyDiffusion: {
      const auto& toy = cfg.toy.value();
      const NormalizedDistribution unconditioned =
          toy.unconditioned.empty() ? NormalizedDistribution::uniform(n) : NormalizedDistribution(toy.unconditioned);
      MixtureModel mix = toy.means.empty() ? MixtureModel::on_circle(unconditioned, toy.component_std, toy.radius)
                                           : MixtureModel(toy.means, toy.component_std, unconditioned);
      return std::make_unique<ToyDiffusionOracle>(AttributeSet::one_hot(cfg.labels), std::move(mix),
                                                  ConditionSpec{NormalizedDistribution(toy.prior)}, toy.guidance,
                                                  make_schedule(toy.steps, toy.beta_start, toy.beta_end),
                                                  toy.threads);
    }
    case Backend::SoftmaxSim: {
      const auto& sim = cfg.sim.value();
      return std::make_unique<SoftmaxSimOracle>(
          make_sim_oracle({n, sim.hidden_dim, sim.weight_seed, sim.sample_noise}));
    }
    case Backend::Remote: {
      const auto& remote = cfg.remote.value();
      return std::make_unique<RemoteOracle>(remote.endpoint, remote.prompt, cfg.labels, remote.retry);
    }
  }
  throw InvalidConfig("unknown backend");
}

SolverResult run_solver(const ExperimentConfig& cfg, const Oracle& oracle) {
  return cfg.solver == SolverKind::Ida ? ida_run(oracle, cfg.groups(), cfg.ida, cfg.oracle)
                                       : rs_run(oracle, cfg.groups(), cfg.rs, cfg.oracle);
}

RunOutcome run_experiment(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& output_dir) {
  const auto oracle = make_oracle(cfg);
  auto result = run_solver(cfg, *oracle);

  const std::filesystem::path dir = output_dir.value_or(std::filesystem::path(cfg.output_dir));
  std::filesystem::create_directories(dir);
  RunOutcome outcome{std::move(result), dir / "trace.csv", dir / "summary.json"};
  {
    std::ofstream out(outcome.trace_path, std::ios::binary);
    if (!out) throw InvalidConfig("cannot write " + outcome.trace_path.string());
    write_trace_csv(out, outcome.result.trace);
  }
  {
    std::ofstream out(outcome.summary_path, std::ios::binary);
    if (!out) throw InvalidConfig("cannot write " + outcome.summary_path.string());
    out << make_summary(cfg, outcome.result).dump(2) << '\n';
  }
  return outcome;
}

void write_trace_csv(std::ostream& out, const SolverTrace& trace) {
  if (trace.empty()) throw InvalidInput("cannot write an empty trace");
  const std::size_t n = trace.back().a.size();
  out << "iter,kl";
  for (std::size_t i = 0; i < n; ++i) out << ",a_" << i;
  for (std::size_t i = 0; i < n; ++i) out << ",freq_" << i;
  out << '\n';
  for (const auto& r : trace.records()) {
    out << r.t << ',' << format_real(r.kl);
    for (double v : r.a.values()) out << ',' << format_real(v);
    for (double v : r.sbar.probs()) out << ',' << format_real(v);
    out << '\n';
  }
}

std::vector<TraceRow> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("trace file is empty");
  const auto header = split_csv(line);
  if (header.size() < 6 || header[0] != "iter" || header[1] != "kl" || (header.size() - 2) % 2 != 0)
    throw InvalidInput("trace header is not iter,kl,a_*,freq_*");
  const std::size_t n = (header.size() - 2) / 2;
  for (std::size_t i = 0; i < n; ++i) {
    if (header[2 + i] != "a_" + std::to_string(i) || header[2 + n + i] != "freq_" + std::to_string(i))
      throw InvalidInput("trace header columns are out of order");
  }
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw InvalidInput("trace row " + std::to_string(rows.size()) + " has " + std::to_string(cells.size()) +
                         " cells, expected " + std::to_string(header.size()));
    TraceRow row;
    try {
      std::size_t used = 0;
      row.iter = std::stoull(cells[0], &used);
      if (used != cells[0].size()) throw InvalidInput("bad iteration index");
      row.kl = parse_real(cells[1]);
      for (std::size_t i = 0; i < n; ++i) row.a.push_back(parse_real(cells[2 + i]));
      for (std::size_t i = 0; i < n; ++i) row.freq.push_back(parse_real(cells[2 + n + i]));
    } catch (const std::logic_error&) {
      throw InvalidInput("trace row " + std::to_string(rows.size()) + " does not parse");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidInput("trace has no rows");
  return rows;
}

json make_summary(const ExperimentConfig& cfg, const SolverResult& result) {
  const auto& trace = result.trace;
  const auto best = trace.best_index();
  json s;
  s["version"] = 1;
  s["solver"] = to_string(cfg.solver);
  s["backend"] = to_string(cfg.backend);
  s["labels"] = cfg.labels;
  s["converged"] = result.converged;
  s["evaluations"] = trace.size();
  s["final_kl"] = trace.back().kl;
  s["final_frequencies"] = std::vector<double>(trace.back().sbar.probs().begin(), trace.back().sbar.probs().end());
  s["best_iteration"] = trace.records()[best].t;
  s["best_kl"] = trace.records()[best].kl;
  s["weights"] = std::vector<double>(result.weights.values().begin(), result.weights.values().end());
  s["num_samples"] = cfg.oracle.num_samples;
  s["seed"] = cfg.oracle.seed;
  if (!result.rounds.empty()) {
    s["rounds"] = result.rounds.size();
    double best_mean = result.rounds.front().mean_loss;
    for (const auto& r : result.rounds) best_mean = std::min(best_mean, r.mean_loss);
    s["best_round_mean_kl"] = best_mean;
  }
  return s;
}

}  // namespace distalign
