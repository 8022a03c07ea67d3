#include "distalign/guidance.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "distalign/error.hpp"

namespace distalign {

DiffusionSchedule::DiffusionSchedule(std::vector<double> betas, std::vector<double> sigmas)
    : betas_(std::move(betas)), sigmas_(std::move(sigmas)) {
  if (betas_.empty()) throw InvalidConfig("schedule needs at least one step");
  if (sigmas_.size() != betas_.size())
    throw InvalidConfig("schedule has " + std::to_string(betas_.size()) + " betas but " +
                        std::to_string(sigmas_.size()) + " sigmas");
  alphas_.reserve(betas_.size());
  alpha_bars_.reserve(betas_.size());
  double running = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const double b = betas_[i];
    if (!(b > 0.0 && b < 1.0)) throw InvalidConfig("beta out of (0, 1): " + std::to_string(b));
    if (!(sigmas_[i] >= 0.0) || !std::isfinite(sigmas_[i]))
      throw InvalidConfig("sigma must be finite and non-negative");
    alphas_.push_back(1.0 - b);
    running *= 1.0 - b;
    if (!(running > 0.0)) throw InvalidConfig("cumulative alpha underflowed to zero");
    alpha_bars_.push_back(running);
  }
}

std::size_t DiffusionSchedule::index(int t) const {
  if (t < 1 || t > steps())
    throw InvalidInput("step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  return static_cast<std::size_t>(t - 1);
}

DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw InvalidConfig("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw InvalidConfig("schedule needs 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  std::vector<double> sigmas(betas.size());
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
    sigmas[i] = std::sqrt(betas[i]);
  }
  return DiffusionSchedule(std::move(betas), std::move(sigmas));
}

MixtureModel::MixtureModel(std::vector<Vec> means, double component_std, NormalizedDistribution prior)
    : means_(std::move(means)), component_std_(component_std), prior_(std::move(prior)) {
  if (means_.empty()) throw InvalidConfig("mixture needs at least one component");
  if (!(component_std > 0.0) || !std::isfinite(component_std))
    throw InvalidConfig("component std must be positive");
  if (prior_.size() != means_.size())
    throw InvalidConfig("mixture has " + std::to_string(means_.size()) + " means but prior has " +
                        std::to_string(prior_.size()) + " entries");
  const std::size_t d = means_.front().size();
  if (d == 0) throw InvalidConfig("mixture dimension must be >= 1");
  for (std::size_t i = 0; i < means_.size(); ++i) {
    if (means_[i].size() != d) throw InvalidConfig("mixture means have mismatched dimensions");
    for (std::size_t j = 0; j < i; ++j) {
      if (means_[i] == means_[j]) throw InvalidConfig("mixture means must be pairwise distinct");
    }
  }
}

MixtureModel MixtureModel::on_circle(NormalizedDistribution prior, double component_std, double radius) {
  const std::size_t n = prior.size();
  std::vector<Vec> means;
  means.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    means.push_back({radius * std::cos(angle), radius * std::sin(angle)});
  }
  return MixtureModel(std::move(means), component_std, std::move(prior));
}

namespace {

// Per-(z, t) quantities shared by all conditions: scaled means and squared
// distances. The Gaussian normalizer is common to every component and cancels.
struct ComponentTerms {
  std::vector<Vec> scaled_means;
  std::vector<double> half_sq_dist;  // |z - m_i|^2 / (2 v_t)
  double variance = 0.0;
  double eps_scale = 0.0;  // sqrt(1 - abar_t)
};

ComponentTerms component_terms(std::span<const double> z, int t, const MixtureModel& mix,
                               const DiffusionSchedule& sched) {
  if (z.size() != mix.dim())
    throw InvalidInput("state has dimension " + std::to_string(z.size()) + ", mixture has " +
                       std::to_string(mix.dim()));
  const double abar = sched.alpha_bar(t);
  const double root_abar = std::sqrt(abar);
  const double s = mix.component_std();
  ComponentTerms terms;
  terms.variance = (1.0 - abar) + abar * s * s;
  terms.eps_scale = std::sqrt(1.0 - abar);
  terms.scaled_means.reserve(mix.size());
  terms.half_sq_dist.reserve(mix.size());
  for (const auto& mu : mix.means()) {
    Vec m(mu.size());
    double d2 = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
      m[j] = root_abar * mu[j];
      const double diff = z[j] - m[j];
      d2 += diff * diff;
    }
    terms.scaled_means.push_back(std::move(m));
    terms.half_sq_dist.push_back(d2 / (2.0 * terms.variance));
  }
  return terms;
}

Vec epsilon_from_terms(std::span<const double> z, const ComponentTerms& terms,
                       const NormalizedDistribution& weights) {
  const std::size_t n = terms.scaled_means.size();
  if (weights.size() != n)
    throw InvalidInput("condition has " + std::to_string(weights.size()) +
                       " weights, mixture has " + std::to_string(n) + " components");
  std::vector<double> log_w(n, -std::numeric_limits<double>::infinity());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] > 0.0) {
      log_w[i] = std::log(weights[i]) - terms.half_sq_dist[i];
      top = std::max(top, log_w[i]);
    }
  }
  double norm = 0.0;
  std::vector<double> resp(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] > 0.0) {
      resp[i] = std::exp(log_w[i] - top);
      norm += resp[i];
    }
  }
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericDegenerate("all responsibilities vanished");

  Vec eps(z.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (resp[i] == 0.0) continue;
    const double r = resp[i] / norm;
    for (std::size_t j = 0; j < z.size(); ++j) eps[j] += r * (terms.scaled_means[i][j] - z[j]);
  }
  const double factor = -terms.eps_scale / terms.variance;
  for (double& e : eps) e *= factor;
  return eps;
}

}  // namespace

Vec conditional_epsilon(std::span<const double> z, int t, const ConditionSpec& c,
                        const MixtureModel& mix, const DiffusionSchedule& sched) {
  return epsilon_from_terms(z, component_terms(z, t, mix, sched), c.weights);
}

Vec cfg_epsilon(std::span<const double> z, int t, const ConditionSpec& prompt,
                const GuidanceParams& params, const MixtureModel& mix,
                const DiffusionSchedule& sched) {
  const auto terms = component_terms(z, t, mix, sched);
  const Vec uncond = epsilon_from_terms(z, terms, mix.prior());
  const Vec cond = epsilon_from_terms(z, terms, prompt.weights);
  Vec out(z.size());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = std::lerp(uncond[j], cond[j], params.guidance_scale);
  return out;
}

ConditionSpec compose_unsafe(const WeightVector& a, const AttributeSet& attrs) {
  if (a.size() != attrs.size())
    throw InvalidInput("weight vector has " + std::to_string(a.size()) + " entries, attribute set has " +
                       std::to_string(attrs.size()) + " groups");
  const auto coeffs = softmax(a);
  Vec u(attrs.dimension(), 0.0);
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const auto& g = attrs.directions()[i];
    for (std::size_t j = 0; j < u.size(); ++j) u[j] += coeffs[i] * g[j];
  }
  double sum = 0.0;
  for (double x : u) {
    if (x < 0.0) throw InvalidDirection("composed unsafe condition has a negative entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > NormalizedDistribution::kSumTolerance)
    throw InvalidDirection("composed unsafe condition sums to " + std::to_string(sum));
  for (double& x : u) x = std::min(x, 1.0);
  return ConditionSpec{NormalizedDistribution(std::move(u))};
}

Vec sld_epsilon(std::span<const double> z, int t, const ConditionSpec& prompt,
                const ConditionSpec& unsafe, const GuidanceParams& params,
                const MixtureModel& mix, const DiffusionSchedule& sched, int step_from_start) {
  const auto terms = component_terms(z, t, mix, sched);
  const Vec uncond = epsilon_from_terms(z, terms, mix.prior());
  const Vec cond = epsilon_from_terms(z, terms, prompt.weights);
  const bool active = step_from_start >= params.warmup;
  Vec out(z.size());
  if (!active) {
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] = std::lerp(uncond[j], cond[j], params.guidance_scale);
    return out;
  }
  const Vec unsafe_eps = epsilon_from_terms(z, terms, unsafe.weights);
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double gate = (cond[j] - unsafe_eps[j]) < params.threshold ? params.safety_scale : 0.0;
    const double gamma = gate * (unsafe_eps[j] - uncond[j]);
    out[j] = std::lerp(uncond[j], cond[j] - gamma, params.guidance_scale);
  }
  return out;
}

Vec reverse_sample(Rng& rng, const ConditionSpec& prompt, const ConditionSpec& unsafe,
                   const GuidanceParams& params, const MixtureModel& mix,
                   const DiffusionSchedule& sched) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec x(mix.dim());
  for (double& v : x) v = normal(rng);
  const int steps = sched.steps();
  for (int t = steps; t >= 1; --t) {
    Vec eps;
    try {
      eps = sld_epsilon(x, t, prompt, unsafe, params, mix, sched, steps - t);
    } catch (const NumericDegenerate&) {
      // A finite but astronomically large state overflows every squared distance.
      throw DivergenceError("reverse sampling diverged at step " + std::to_string(t), t);
    }
    const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
    const double inv_root_alpha = 1.0 / std::sqrt(sched.alpha(t));
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - coef * eps[j]) * inv_root_alpha;
    if (t > 1) {
      const double sigma = sched.sigma(t);
      for (double& v : x) v += sigma * normal(rng);
    }
    for (double v : x) {
      if (!std::isfinite(v))
        throw DivergenceError("reverse sampling diverged at step " + std::to_string(t), t);
    }
  }
  return x;
}

std::size_t classify(std::span<const double> x0, const MixtureModel& mix) {
  if (x0.size() != mix.dim()) throw InvalidInput("sample dimension does not match the mixture");
  const double inv_two_var = 1.0 / (2.0 * mix.component_std() * mix.component_std());
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const double p = mix.prior()[i];
    if (p <= 0.0) continue;
    double d2 = 0.0;
    for (std::size_t j = 0; j < x0.size(); ++j) {
      const double diff = x0[j] - mix.means()[i][j];
      d2 += diff * diff;
    }
    const double score = std::log(p) - d2 * inv_two_var;
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

}  // namespace distalign
