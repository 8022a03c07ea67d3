#include "distalign/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "distalign/error.hpp"

namespace distalign {

void Oracle::check_arity(const WeightVector& a) const {
  if (a.size() != arity())
    throw InvalidInput("weight vector has " + std::to_string(a.size()) + " entries, oracle expects " +
                       std::to_string(arity()));
}

std::vector<std::uint64_t> apportion(const NormalizedDistribution& p, std::uint64_t total) {
  const std::size_t n = p.size();
  std::vector<std::uint64_t> counts(n);
  std::vector<double> remainder(n);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = p[i] * static_cast<double>(total);
    const double floor = std::floor(exact);
    counts[i] = static_cast<std::uint64_t>(floor);
    remainder[i] = exact - floor;
    assigned += static_cast<std::int64_t>(counts[i]);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Stable sort keeps the lowest index first among equal remainders.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return remainder[l] > remainder[r]; });
  std::int64_t leftover = static_cast<std::int64_t>(total) - assigned;
  for (std::size_t k = 0; leftover > 0; k = (k + 1) % n, --leftover) ++counts[order[k]];
  // Only reachable when the probabilities overshoot one by rounding.
  for (auto it = order.rbegin(); leftover < 0; ++it) {
    if (it == order.rend()) it = order.rbegin();
    if (counts[*it] > 0) {
      --counts[*it];
      ++leftover;
    }
  }
  return counts;
}

std::vector<std::uint64_t> sample_counts(const NormalizedDistribution& p, std::uint64_t total, Rng& rng) {
  const std::size_t n = p.size();
  std::vector<std::uint64_t> counts(n, 0);
  std::uint64_t remaining = total;
  double mass_left = 1.0;
  for (std::size_t i = 0; i + 1 < n && remaining > 0; ++i) {
    const double q = mass_left > 0.0 ? std::clamp(p[i] / mass_left, 0.0, 1.0) : 1.0;
    std::binomial_distribution<std::uint64_t> draw(remaining, q);
    counts[i] = draw(rng);
    remaining -= counts[i];
    mass_left -= p[i];
  }
  counts[n - 1] += remaining;
  return counts;
}

// ---------------------------------------------------------------- toy diffusion

ToyDiffusionOracle::ToyDiffusionOracle(AttributeSet attrs, MixtureModel mix, ConditionSpec prompt,
                                       GuidanceParams params, DiffusionSchedule sched, unsigned threads)
    : attrs_(std::move(attrs)),
      mix_(std::move(mix)),
      prompt_(std::move(prompt)),
      params_(params),
      sched_(std::move(sched)),
      threads_(threads) {
  if (mix_.size() != attrs_.size())
    throw InvalidConfig("mixture has " + std::to_string(mix_.size()) + " components but there are " +
                        std::to_string(attrs_.size()) + " groups");
  if (attrs_.dimension() != mix_.size())
    throw InvalidConfig("guidance directions must be distributions over the mixture components");
  if (prompt_.weights.size() != mix_.size())
    throw InvalidConfig("prompt condition has " + std::to_string(prompt_.weights.size()) +
                        " weights, mixture has " + std::to_string(mix_.size()));
  if (!std::isfinite(params_.guidance_scale) || !std::isfinite(params_.safety_scale) ||
      params_.guidance_scale < 0.0 || params_.safety_scale < 0.0)
    throw InvalidConfig("guidance scales must be finite and non-negative");
  if (params_.warmup < 0 || params_.warmup > sched_.steps())
    throw InvalidConfig("warmup must lie in [0, T]");
  if (threads_ == 0) threads_ = std::max(1u, std::thread::hardware_concurrency());
}

FrequencyVector ToyDiffusionOracle::evaluate(const WeightVector& a, const OracleConfig& cfg) const {
  check_arity(a);
  return run(compose_unsafe(a, attrs_), params_, cfg);
}

FrequencyVector ToyDiffusionOracle::evaluate_unguided(const OracleConfig& cfg) const {
  GuidanceParams off = params_;
  off.safety_scale = 0.0;
  return run(prompt_, off, cfg);
}

FrequencyVector ToyDiffusionOracle::run(const ConditionSpec& unsafe, const GuidanceParams& params,
                                        const OracleConfig& cfg) const {
  if (cfg.num_samples == 0) throw InvalidInput("num_samples must be >= 1");
  const std::size_t total = cfg.num_samples;
  std::vector<std::size_t> labels(total);
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads_, total));
  std::vector<std::exception_ptr> errors(workers);

  auto work = [&](unsigned w) {
    try {
      for (std::size_t k = w; k < total; k += workers) {
        Rng rng(derive_seed(cfg.seed, k));
        const Vec x0 = reverse_sample(rng, prompt_, unsafe, params, mix_, sched_);
        labels[k] = classify(x0, mix_);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<std::uint64_t> counts(arity(), 0);
  for (std::size_t label : labels) ++counts[label];
  return FrequencyVector(std::move(counts));
}

// ------------------------------------------------------------------ simulation

SoftmaxSimOracle::SoftmaxSimOracle(SimNetwork net, bool sample_noise)
    : net_(std::move(net)), sample_noise_(sample_noise) {
  const std::size_t n = net_.groups();
  const std::size_t h = net_.hidden();
  if (n < 2) throw InvalidConfig("simulation network needs at least two outputs");
  if (h < 1) throw InvalidConfig("simulation network needs hidden_dim >= 1");
  if (net_.w1.size() != h || net_.w2.size() != n)
    throw InvalidConfig("simulation network layer shapes are inconsistent");
  for (const auto& row : net_.w1) {
    if (row.size() != n) throw InvalidConfig("simulation network layer shapes are inconsistent");
  }
  for (const auto& row : net_.w2) {
    if (row.size() != h) throw InvalidConfig("simulation network layer shapes are inconsistent");
  }
}

NormalizedDistribution SoftmaxSimOracle::probabilities(const WeightVector& a) const {
  check_arity(a);
  const auto x = a.values();
  std::vector<double> hidden(net_.hidden());
  for (std::size_t j = 0; j < hidden.size(); ++j) {
    double acc = net_.b1[j];
    for (std::size_t i = 0; i < x.size(); ++i) acc += net_.w1[j][i] * x[i];
    hidden[j] = std::tanh(acc);
  }
  std::vector<double> logits(net_.groups());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    double acc = net_.b2[k];
    for (std::size_t j = 0; j < hidden.size(); ++j) acc += net_.w2[k][j] * hidden[j];
    logits[k] = acc;
  }
  return softmax(WeightVector(std::move(logits)));
}

FrequencyVector SoftmaxSimOracle::evaluate(const WeightVector& a, const OracleConfig& cfg) const {
  if (cfg.num_samples == 0) throw InvalidInput("num_samples must be >= 1");
  const auto p = probabilities(a);
  if (!sample_noise_) return FrequencyVector(apportion(p, cfg.num_samples));
  Rng rng(cfg.seed);
  return FrequencyVector(sample_counts(p, cfg.num_samples, rng));
}

SoftmaxSimOracle make_sim_oracle(const SimOracleSpec& spec) {
  if (spec.n < 2) throw InvalidConfig("simulation oracle needs n >= 2");
  if (spec.hidden_dim < 1) throw InvalidConfig("simulation oracle needs hidden_dim >= 1");
  Rng rng(spec.weight_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SimNetwork net;
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(spec.n));
  const double hidden_scale = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
  net.w1.assign(spec.hidden_dim, std::vector<double>(spec.n));
  for (auto& row : net.w1)
    for (double& w : row) w = normal(rng) * in_scale;
  net.b1.resize(spec.hidden_dim);
  for (double& b : net.b1) b = normal(rng);
  net.w2.assign(spec.n, std::vector<double>(spec.hidden_dim));
  for (auto& row : net.w2)
    for (double& w : row) w = normal(rng) * hidden_scale;
  net.b2.resize(spec.n);
  for (double& b : net.b2) b = normal(rng);
  return SoftmaxSimOracle(std::move(net), spec.sample_noise);
}

bool sim_seed_qualifies(const SimCalibration& cal, std::uint64_t seed) {
  const auto oracle = make_sim_oracle({cal.n, cal.hidden_dim, seed, false});
  const auto origin = WeightVector::zeros(cal.n);
  const auto p0 = oracle.probabilities(origin);
  if (std::abs(kl_to_uniform(p0) - cal.target_kl) > cal.kl_tolerance) return false;

  // Slope of p_i along e_i - 1/n: the direction a residual update moves in.
  constexpr double h = 1e-6;
  const double share = 1.0 / static_cast<double>(cal.n);
  for (std::size_t i = 0; i < cal.n; ++i) {
    std::vector<double> up(cal.n, -h * share), down(cal.n, h * share);
    up[i] += h;
    down[i] -= h;
    const double slope =
        (oracle.probabilities(WeightVector(up))[i] - oracle.probabilities(WeightVector(down))[i]) / (2 * h);
    if (!(slope < 0.0)) return false;
  }

  // Walk the ray of the first residual step, a = x (p(0) - 1/n). KL must fall
  // monotonically and reach balance_kl, so negative feedback can actually get there.
  std::vector<double> dir(cal.n), a(cal.n);
  for (std::size_t i = 0; i < cal.n; ++i) dir[i] = p0[i] - share;
  double prev = kl_to_uniform(p0);
  for (std::size_t k = 1; k <= cal.ray_steps; ++k) {
    const double x = cal.ray_length * static_cast<double>(k) / static_cast<double>(cal.ray_steps);
    for (std::size_t i = 0; i < cal.n; ++i) a[i] = x * dir[i];
    const double kl = kl_to_uniform(oracle.probabilities(WeightVector(a)));
    if (kl < cal.balance_kl) return true;
    if (kl > prev) return false;
    prev = kl;
  }
  return false;
}

std::vector<std::uint64_t> calibrated_sim_seeds(const SimCalibration& cal, std::size_t count,
                                                std::uint64_t first_seed, std::uint64_t max_scan) {
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = first_seed; s < first_seed + max_scan && seeds.size() < count; ++s) {
    if (sim_seed_qualifies(cal, s)) seeds.push_back(s);
  }
  if (seeds.size() < count)
    throw InvalidConfig("only " + std::to_string(seeds.size()) + " calibrated seeds found in scan range");
  return seeds;
}

}  // namespace distalign
