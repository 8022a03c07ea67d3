// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "distalign/core.hpp"
#include "distalign/error.hpp"
#include "distalign/experiment.hpp"
#include "distalign/guidance.hpp"
#include "distalign/oracles.hpp"
#include "distalign/solvers.hpp"
#include "protocol_harness.hpp"

using namespace distalign;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail.clear();
    pass = false;
    if (!detail.empty()) detail += "; ";
    detail += why;
  }
  void note(const std::string& what) {
    if (!pass) return;
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ExperimentConfig preset(const std::string& name) { return load_config(fs::path(DISTALIGN_PRESET_DIR) / (name + ".json")); }

SolverResult run(const ExperimentConfig& cfg) {
  const auto oracle = make_oracle(cfg);
  return run_solver(cfg, *oracle);
}

double kl_of(std::vector<double> p) {
  double s = 0;
  for (double v : p) s += v;
  for (double& v : p) v /= s;
  return kl_to_uniform(NormalizedDistribution(p));
}

// ---------------------------------------------------------------- 1

Verdict kl_arithmetic() {
  Verdict v;
  struct Row {
    std::vector<double> p;
    double want, tol;
  };
  const std::vector<Row> rows{
      {{0.74, 0.26}, 0.1200, 5e-4},
      {{0.48, 0.52}, 0.0008, 5e-4},
      {{0.49, 0.51}, 0.0002, 5e-4},
      {{0.384, 0.242, 0.061, 0.040, 0.141, 0.131}, 0.238, 2e-3},
      {{0.172, 0.182, 0.172, 0.192, 0.141, 0.141}, 0.007, 2e-3},
      {{1.0, 0.0}, 0.6931, 5e-4},
      {{0.90, 0.10}, 0.3680, 5e-4},
      {{0.02, 0.98}, 0.5951, 5e-4},
      {{0.20, 0.80}, 0.1927, 5e-4},
  };
  for (const auto& r : rows) {
    const double got = kl_of(r.p);
    if (std::abs(got - r.want) > r.tol) v.fail("KL " + fmt("%.6f", got) + " vs " + fmt("%.4f", r.want));
  }
  v.note(std::to_string(rows.size()) + " values");
  return v;
}

// ---------------------------------------------------------------- 2, 3

Verdict ida_convergence(const std::string& name, std::size_t samples, std::size_t max_t, int need) {
  Verdict v;
  auto cfg = preset(name);
  cfg.oracle.num_samples = samples;
  int ok = 0;
  std::string finals;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cfg.oracle.seed = seed;
    const auto r = run(cfg);
    const bool hit = r.converged && r.trace.back().t <= max_t;
    ok += hit;
    finals += (finals.empty() ? "" : ",") + std::to_string(r.trace.back().t) + (hit ? "" : "*");
  }
  const std::string summary = std::to_string(ok) + "/10 converged within " + std::to_string(max_t) +
                              " iterations (final t: " + finals + ")";
  if (ok < need) v.fail(summary);
  v.note(summary);
  return v;
}

// ---------------------------------------------------------------- 4

Verdict rs_slow_ida_fast() {
  Verdict v;
  const SimCalibration cal;
  const auto seeds = calibrated_sim_seeds(cal, 10);
  auto rs_cfg = preset("sim-rs");
  auto ida_cfg = preset("sim-ida");
  double rs_worst = std::numeric_limits<double>::infinity();
  double ida_worst = 0;
  int rs_ok = 0, ida_ok = 0;
  for (auto s : seeds) {
    rs_cfg.sim->weight_seed = s;
    const auto rs = run(rs_cfg);
    double best_mean = std::numeric_limits<double>::infinity();
    for (const auto& round : rs.rounds) best_mean = std::min(best_mean, round.mean_loss);
    rs_worst = std::min(rs_worst, best_mean);
    rs_ok += best_mean > 0.10;

    ida_cfg.sim->weight_seed = s;
    const auto ida = run(ida_cfg);
    const double best = ida.trace.records()[ida.trace.best_index()].kl;
    ida_worst = std::max(ida_worst, best);
    ida_ok += best < 0.05 && ida.trace.size() <= 10;
  }
  const std::string rs_text = "RS best round-mean KL > 0.10 on " + std::to_string(rs_ok) + "/10 (lowest " +
                              fmt("%.4f", rs_worst) + ")";
  const std::string ida_text = "IDA KL < 0.05 on " + std::to_string(ida_ok) + "/10 (worst " + fmt("%.4f", ida_worst) + ")";
  if (rs_ok < 10) v.fail(rs_text);
  if (ida_ok < 10) v.fail(ida_text);
  v.note(rs_text);
  v.note(ida_text);
  return v;
}

// ---------------------------------------------------------------- 5

Verdict occupations() {
  Verdict v;
  for (const char* job : {"ceo", "politician", "professor", "cashier", "housekeeper", "teacher"}) {
    const auto r = run(preset(std::string("occupation-") + job));
    const double first = r.trace.records().front().kl;
    const double best = r.trace.records()[r.trace.best_index()].kl;
    const std::string text = std::string(job) + " " + fmt("%.4f", first) + "->" + fmt("%.4f", best);
    if (!(best * 10 <= first)) v.fail(text);
    v.note(text);
  }
  return v;
}

// ---------------------------------------------------------------- 6

NormalizedDistribution random_dist(std::size_t n, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> w(n);
  double s = 0;
  for (auto& x : w) s += (x = g(rng) + 1e-3);
  for (auto& x : w) x /= s;
  return NormalizedDistribution(w);
}

long double log_q(const std::vector<long double>& z, int t, const NormalizedDistribution& c, const MixtureModel& mix,
                  const DiffusionSchedule& sched) {
  const long double abar = sched.alpha_bar(t);
  const long double s = mix.component_std();
  const long double var = (1 - abar) + abar * s * s;
  long double total = 0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    long double d2 = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const long double diff = z[j] - std::sqrt(abar) * mix.means()[i][j];
      d2 += diff * diff;
    }
    total += c[i] * std::exp(-d2 / (2 * var)) / (2 * std::acos(-1.0L) * var);
  }
  return std::log(total);
}

std::string score_check() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(-2.0, 2.0);
  const auto sched = ToyTestbedDefaults::schedule();
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 5;
    const auto mix = MixtureModel::on_circle(NormalizedDistribution::uniform(n), 0.15 + 0.1 * (trial % 3));
    const auto c = random_dist(n, rng);
    const int t = 1 + static_cast<int>(rng() % sched.steps());
    const std::vector<double> z{coord(rng), coord(rng)};
    const auto eps = conditional_epsilon(z, t, ConditionSpec{c}, mix, sched);
    const double scale = std::sqrt(1.0 - sched.alpha_bar(t));
    double num = 0, den = 0;
    for (std::size_t j = 0; j < 2; ++j) {
      const long double h = 1e-5;
      std::vector<long double> up(z.begin(), z.end()), down(z.begin(), z.end());
      up[j] += h;
      down[j] -= h;
      const double fd = static_cast<double>((log_q(up, t, c, mix, sched) - log_q(down, t, c, mix, sched)) / (2 * h));
      num += std::pow(-eps[j] / scale - fd, 2);
      den += fd * fd;
    }
    if (den < 1e-6) continue;
    worst = std::max(worst, std::sqrt(num / den));
  }
  return worst < 1e-5 ? "" : "score relative error " + fmt("%.2e", worst);
}

std::string degeneration_check() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coord(-2.0, 2.0);
  const auto sched = ToyTestbedDefaults::schedule();
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 4;
    const auto mix = MixtureModel::on_circle(random_dist(n, rng));
    const ConditionSpec prompt{random_dist(n, rng)}, unsafe{random_dist(n, rng)};
    const std::vector<double> z{coord(rng), coord(rng)};
    const int t = 1 + static_cast<int>(rng() % sched.steps());
    const GuidanceParams p{1.0 + 3.0 * (trial % 3), 1.5, 0.01, 0};
    const auto cond = conditional_epsilon(z, t, prompt, mix, sched);
    const auto uncond = conditional_epsilon(z, t, ConditionSpec{mix.prior()}, mix, sched);
    const auto cfg = cfg_epsilon(z, t, prompt, p, mix, sched);

    auto off = p;
    off.safety_scale = 0;
    auto closed = p;
    closed.threshold = -std::numeric_limits<double>::infinity();
    auto g1 = p;
    g1.guidance_scale = 1;
    auto g0 = p;
    g0.guidance_scale = 0;
    if (sld_epsilon(z, t, prompt, unsafe, off, mix, sched, 0) != cfg) return "s_S = 0 differs from plain guidance";
    if (sld_epsilon(z, t, prompt, unsafe, closed, mix, sched, 0) != cfg) return "closed gate differs from plain guidance";
    if (cfg_epsilon(z, t, prompt, g1, mix, sched) != cond) return "unit guidance differs from the conditional";
    if (cfg_epsilon(z, t, prompt, g0, mix, sched) != uncond) return "zero guidance differs from the unconditional";
  }
  return "";
}

std::string chi_square_check() {
  const NormalizedDistribution prior({0.74, 0.26});
  GuidanceParams off = ToyTestbedDefaults::guidance();
  off.safety_scale = 0;
  const ToyDiffusionOracle oracle(AttributeSet::one_hot({"a", "b"}), MixtureModel::on_circle(prior),
                                  ConditionSpec{prior}, off, ToyTestbedDefaults::schedule());
  const std::size_t n = 10000;
  const auto c = oracle.evaluate(WeightVector::zeros(2), {n, 2024, Backend::ToyDiffusion});
  double chi2 = 0;
  for (std::size_t i = 0; i < 2; ++i) chi2 += std::pow(c[i] - prior[i] * n, 2) / (prior[i] * n);
  return chi2 < 10.828 ? "" : "chi-square " + fmt("%.2f", chi2);
}

std::string suppression_check() {
  // Raising a_i must not raise the share of group i, up to 3 sigma of sampling noise.
  const NormalizedDistribution prompt({0.74, 0.26});
  const ToyDiffusionOracle oracle(AttributeSet::one_hot({"a", "b"}),
                                  MixtureModel::on_circle(NormalizedDistribution::uniform(2)), ConditionSpec{prompt},
                                  ToyTestbedDefaults::guidance(), ToyTestbedDefaults::schedule());
  const std::size_t n = 20000;
  for (std::size_t i = 0; i < 2; ++i) {
    double prev = -1;
    for (int k = -2; k <= 2; ++k) {
      std::vector<double> a(2, 0.0);
      a[i] = k;
      const auto c = oracle.evaluate(WeightVector(a), {n, 31, Backend::ToyDiffusion});
      const double share = static_cast<double>(c[i]) / n;
      if (prev >= 0) {
        const double slack = 3 * std::sqrt(2 * 0.25 / n);
        if (share > prev + slack)
          return "group " + std::to_string(i) + " share rose from " + fmt("%.4f", prev) + " to " + fmt("%.4f", share);
      }
      prev = share;
    }
  }
  return "";
}

std::string conservation_check() {
  for (const char* name : {"gender-toy", "ethnic-toy", "sim-ida"}) {
    const auto r = run(preset(name));
    for (const auto& rec : r.trace.records()) {
      double s = 0;
      for (double x : rec.a.values()) s += x;
      if (std::abs(s) > 1e-9) return std::string(name) + " weight sum " + fmt("%.3e", s);
    }
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string rerun_check() {
  const auto root = fs::temp_directory_path() / ("distalign-acceptance-" + std::to_string(::getpid()));
  std::string problem;
  for (const char* name : {"gender-toy", "sim-rs"}) {
    const auto cfg = preset(name);
    fs::remove_all(root);
    const auto a = run_experiment(cfg, root / "a");
    const auto b = run_experiment(cfg, root / "b");
    if (slurp(a.trace_path) != slurp(b.trace_path) || slurp(a.summary_path) != slurp(b.summary_path))
      problem = std::string(name) + " rerun differs";
    if (!problem.empty()) break;
  }
  fs::remove_all(root);
  return problem;
}

Verdict properties() {
  Verdict v;
  const std::vector<std::pair<const char*, std::function<std::string()>>> checks{
      {"score", score_check},           {"degenerations", degeneration_check}, {"chi-square", chi_square_check},
      {"suppression", suppression_check}, {"conservation", conservation_check}, {"rerun", rerun_check},
  };
  for (const auto& [name, check] : checks) {
    std::string problem;
    try {
      problem = check();
    } catch (const std::exception& e) {
      problem = e.what();
    }
    if (!problem.empty()) v.fail(std::string(name) + ": " + problem);
  }
  v.note(std::to_string(checks.size()) + " property checks");
  return v;
}

// ---------------------------------------------------------------- 7

Verdict protocol() {
  Verdict v;
  const auto fixtures = harness::load_fixtures(DISTALIGN_FIXTURE_DIR "/protocol");
  int malformed = 0;
  for (const auto& f : fixtures) {
    const auto problem = harness::replay(f);
    if (!problem.empty()) v.fail(f.name + ": " + problem);
    malformed += f.expect.contains("error");
  }
  if (fixtures.size() < 10) v.fail("only " + std::to_string(fixtures.size()) + " fixtures");

  RetryPolicy retry;
  retry.initial_backoff = std::chrono::milliseconds(5);
  const std::vector<std::string> labels{"a", "b"};
  const OracleConfig cfg{100, 0, Backend::Remote};
  {
    harness::StubServer down([](const nlohmann::json&, int) { return harness::Reply{503, "{}"}; });
    try {
      remote_evaluate(down.endpoint(), WeightVector::zeros(2), "p", labels, cfg, retry);
      v.fail("persistent 503 was accepted");
    } catch (const OracleUnavailable&) {
    }
    if (down.hits() != 3) v.fail("persistent 503 saw " + std::to_string(down.hits()) + " attempts");
  }
  {
    harness::StubServer flaky([](const nlohmann::json&, int hit) {
      return hit < 3 ? harness::Reply{503, "{}"} : harness::Reply{200, R"({"counts":[50,50],"num_samples":100})"};
    });
    try {
      remote_evaluate(flaky.endpoint(), WeightVector::zeros(2), "p", labels, cfg, retry);
    } catch (const std::exception& e) {
      v.fail(std::string("recovery on third attempt failed: ") + e.what());
    }
    if (flaky.hits() != 3) v.fail("flaky server saw " + std::to_string(flaky.hits()) + " attempts");
  }
  v.note(std::to_string(fixtures.size()) + " fixtures, " + std::to_string(malformed) + " malformed rejected, 3 attempts");
  return v;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    double budget_s;
    std::function<Verdict()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "KL arithmetic", 1, kl_arithmetic},
      {2, "IDA two-group convergence", 60, [] { return ida_convergence("gender-toy", 1000, 3, 9); }},
      {3, "IDA six-group convergence", 300, [] { return ida_convergence("ethnic-toy", 2000, 5, 8); }},
      {4, "RS slow vs IDA fast on the sim oracle", 600, rs_slow_ida_fast},
      {5, "occupation presets", 300, occupations},
      {6, "guidance property suite", 600, properties},
      {7, "protocol conformance", 60, protocol},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v.fail(std::string("error: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.budget_s) v.fail("took " + fmt("%.1f", secs) + " s, budget " + fmt("%.0f", c.budget_s) + " s");
    failed += !v.pass;
    std::printf("%s criterion %d %s: %s (%.2f s)\n", v.pass ? "PASS" : "FAIL", c.id, c.title, v.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
