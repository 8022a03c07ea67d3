#include "distalign/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "distalign/random.hpp"

namespace distalign {

void SolverTrace::append(TraceRecord record) {
  if (!records_.empty() && record.t <= records_.back().t)
    throw InvalidInput("trace records must have strictly increasing t");
  if (records_.empty() && record.t != 0) throw InvalidInput("trace must start at t = 0");
  if (!(record.kl >= 0.0)) throw InvalidInput("trace KL must be non-negative");
  records_.push_back(std::move(record));
}

std::size_t SolverTrace::best_index() const {
  if (records_.empty()) throw InvalidInput("empty trace has no best record");
  std::size_t best = 0;
  for (std::size_t i = 1; i < records_.size(); ++i) {
    if (records_[i].kl < records_[best].kl) best = i;
  }
  return best;
}

std::uint64_t evaluation_seed(std::uint64_t run_seed, std::size_t evaluation) {
  return derive_seed(run_seed, 0x1da0000000000000ULL + evaluation);
}

namespace {

void check_common(const Oracle& oracle, std::size_t n) {
  if (n < 2) throw InvalidConfig("solvers need n >= 2 groups");
  if (oracle.arity() != n)
    throw InvalidConfig("oracle arity " + std::to_string(oracle.arity()) + " does not match n = " +
                        std::to_string(n));
}

struct Measurement {
  NormalizedDistribution sbar;
  double kl;
};

// Runs one oracle call, converting failures into SolverError with the trace so far.
template <typename Call>
Measurement measure(Call&& call, const SolverTrace& trace) {
  try {
    auto sbar = normalize_frequency(call());
    const double kl = kl_to_uniform(sbar);
    return {std::move(sbar), kl};
  } catch (const SolverError&) {
    throw;
  } catch (const std::exception& e) {
    throw SolverError(std::string("oracle evaluation failed: ") + e.what(), trace);
  }
}

}  // namespace

SolverResult ida_run(const Oracle& oracle, std::size_t n, const IdaParams& params, const OracleConfig& cfg) {
  check_common(oracle, n);
  if (!(params.alpha > 0.0) || !std::isfinite(params.alpha)) throw InvalidConfig("IDA alpha must be > 0");
  if (!(params.threshold > 0.0)) throw InvalidConfig("IDA threshold must be > 0");
  if (params.max_iters < 1) throw InvalidConfig("IDA max_iters must be >= 1");

  const double uniform = 1.0 / static_cast<double>(n);
  SolverTrace trace;
  std::vector<double> a(n, 0.0);

  for (std::size_t t = 0; t < params.max_iters; ++t) {
    if (t >= 1) {
      const auto prev = trace.back().sbar.probs();
      const double step = t == 1 ? 1.0 : params.alpha;
      for (std::size_t i = 0; i < n; ++i) {
        const double residual = prev[i] - uniform;
        a[i] = t == 1 ? residual : a[i] + step * residual;
      }
    }
    WeightVector weights(a);
    OracleConfig c = cfg;
    c.seed = evaluation_seed(cfg.seed, t);
    const bool unguided = t == 0 && params.baseline_mode == BaselineMode::Off;
    auto m = measure(
        [&] { return unguided ? oracle.evaluate_unguided(c) : oracle.evaluate(weights, c); }, trace);
    trace.append(TraceRecord{t, t, weights, std::move(m.sbar), m.kl, std::nullopt});
    if (m.kl < params.threshold) return SolverResult{std::move(weights), std::move(trace), true, {}};
  }

  WeightVector best = trace.records()[trace.best_index()].a;
  return SolverResult{std::move(best), std::move(trace), false, {}};
}

std::vector<double> policy_gradient(std::span<const WeightVector> candidates, std::span<const double> rewards,
                                    const WeightVector& mean, RewardBaseline baseline) {
  if (candidates.size() != rewards.size() || candidates.empty())
    throw InvalidInput("policy gradient needs one reward per candidate");
  double v = 0.0;
  switch (baseline) {
    case RewardBaseline::None:
      break;
    case RewardBaseline::Mean:
      v = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
      break;
    case RewardBaseline::Min:
      v = *std::min_element(rewards.begin(), rewards.end());
      break;
  }
  std::vector<double> grad(mean.size(), 0.0);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (candidates[k].size() != mean.size()) throw InvalidInput("candidate dimension mismatch");
    const double centered = rewards[k] - v;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += centered * (candidates[k][i] - mean[i]);
  }
  return grad;
}

SolverResult rs_run(const Oracle& oracle, std::size_t n, const RsParams& params, const OracleConfig& cfg) {
  check_common(oracle, n);
  if (!(params.eta > 0.0) || !std::isfinite(params.eta)) throw InvalidConfig("RS eta must be > 0");
  if (params.population < 1) throw InvalidConfig("RS population must be >= 1");
  if (params.max_iters < 1) throw InvalidConfig("RS max_iters must be >= 1");
  if (!(params.threshold > 0.0)) throw InvalidConfig("RS threshold must be > 0");
  if (!(params.momentum >= 0.0 && params.momentum < 1.0)) throw InvalidConfig("RS momentum must lie in [0, 1)");

  Rng rng(params.init_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> policy(n);
  for (double& x : policy) x = normal(rng);
  std::vector<double> velocity(n, 0.0);

  SolverResult result{WeightVector::zeros(n), SolverTrace{}, false, {}};
  double best_kl = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;

  for (std::size_t round = 0; round < params.max_iters; ++round) {
    const WeightVector mean(policy);
    std::vector<WeightVector> candidates;
    candidates.reserve(params.population);
    for (std::size_t k = 0; k < params.population; ++k) {
      std::vector<double> a(policy);
      for (double& x : a) x += normal(rng);
      candidates.emplace_back(std::move(a));
    }

    std::vector<TraceRecord> pending;
    std::vector<double> losses, rewards;
    for (const auto& cand : candidates) {
      OracleConfig c = cfg;
      c.seed = evaluation_seed(cfg.seed, evaluations);
      auto m = [&] {
        try {
          return measure([&] { return oracle.evaluate(cand, c); }, result.trace);
        } catch (const SolverError& e) {
          SolverTrace partial = result.trace;
          for (auto& r : pending) partial.append(std::move(r));
          throw SolverError(e.what(), std::move(partial));
        }
      }();
      losses.push_back(m.kl);
      rewards.push_back(std::exp(-m.kl));
      if (m.kl < best_kl) {
        best_kl = m.kl;
        result.weights = cand;
      }
      pending.push_back(TraceRecord{evaluations, round, cand, std::move(m.sbar), m.kl, std::nullopt});
      ++evaluations;
    }

    const auto [rmin, rmax] = std::minmax_element(rewards.begin(), rewards.end());
    const double loss_sum = std::accumulate(losses.begin(), losses.end(), 0.0);
    const RewardStats stats{std::accumulate(rewards.begin(), rewards.end(), 0.0) / rewards.size(), *rmin, *rmax};
    for (auto& r : pending) {
      r.reward_stats = stats;
      result.trace.append(std::move(r));
    }
    result.rounds.push_back(
        RoundSummary{round, mean, loss_sum, loss_sum / static_cast<double>(losses.size()), stats});

    if (loss_sum < params.threshold) {
      result.converged = true;
      return result;
    }

    const auto grad = policy_gradient(candidates, rewards, mean, params.baseline);
    for (std::size_t i = 0; i < n; ++i) {
      velocity[i] = params.momentum * velocity[i] + grad[i];
      policy[i] += params.eta * velocity[i];
    }
  }
  return result;
}

}  // namespace distalign
