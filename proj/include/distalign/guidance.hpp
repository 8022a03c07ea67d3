#pragma once

// Analytic Gaussian-mixture diffusion testbed.
//
// Clean data is a mixture of isotropic Gaussians, so every diffused marginal
// q_t(z | c) = sum_i c_i N(z; sqrt(abar_t) mu_i, v_t I), v_t = (1 - abar_t) + abar_t sigma^2,
// has a closed-form score. A "condition" is a weight vector over components;
// attribute guidance directions are the one-hot weight vectors. Noise
// predictions are exact: eps(z, t, c) = -sqrt(1 - abar_t) * grad_z log q_t(z | c).

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "distalign/core.hpp"
#include "distalign/random.hpp"

namespace distalign {

using Vec = std::vector<double>;

/// Variance schedule. Step indices are 1-based: t = 1 .. steps().
class DiffusionSchedule {
 public:
  /// `sigmas` is the per-step sampling noise scale.
  DiffusionSchedule(std::vector<double> betas, std::vector<double> sigmas);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(index(t)); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  double alpha_bar(int t) const { return alpha_bars_.at(index(t)); }
  double sigma(int t) const { return sigmas_.at(index(t)); }

 private:
  std::size_t index(int t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> sigmas_;
};

/// Linear betas from beta_start to beta_end inclusive, sigma_t = sqrt(beta_t).
DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end);

/// Mixture of isotropic Gaussians with a shared component std. `prior` is the
/// unconditioned component distribution.
class MixtureModel {
 public:
  MixtureModel(std::vector<Vec> means, double component_std, NormalizedDistribution prior);

  /// n components with means at equal angles on a circle of the given radius in R^2.
  static MixtureModel on_circle(NormalizedDistribution prior, double component_std = 0.15,
                                double radius = 1.0);

  std::size_t size() const noexcept { return means_.size(); }
  std::size_t dim() const noexcept { return means_.front().size(); }
  const std::vector<Vec>& means() const noexcept { return means_; }
  double component_std() const noexcept { return component_std_; }
  const NormalizedDistribution& prior() const noexcept { return prior_; }

 private:
  std::vector<Vec> means_;
  double component_std_;
  NormalizedDistribution prior_;
};

/// A condition is a distribution over mixture components.
struct ConditionSpec {
  NormalizedDistribution weights;
};

struct GuidanceParams {
  double guidance_scale = 7.5;  // s_g
  double safety_scale = 1.5;    // s_S
  /// Element-wise gate: safety guidance applies where (eps_p - eps_S)_j < threshold.
  double threshold = 0.01;
  /// Number of reverse steps from the start of sampling with the safety term off.
  int warmup = 0;

  static constexpr double kOpenGate = std::numeric_limits<double>::infinity();
};

/// Default settings of the toy testbed. The gate is fully open and classifier-free
/// guidance is unit scale; see README for why these differ from GuidanceParams{}.
struct ToyTestbedDefaults {
  static constexpr std::size_t kDim = 2;
  static constexpr double kComponentStd = 0.15;
  static constexpr int kSteps = 200;
  static constexpr double kBetaStart = 1e-4;
  static constexpr double kBetaEnd = 0.1;

  static GuidanceParams guidance() { return GuidanceParams{1.0, 2.0, GuidanceParams::kOpenGate, 0}; }
  static DiffusionSchedule schedule() { return make_schedule(kSteps, kBetaStart, kBetaEnd); }
};

Vec conditional_epsilon(std::span<const double> z, int t, const ConditionSpec& c,
                        const MixtureModel& mix, const DiffusionSchedule& sched);

/// Classifier-free guidance against the unconditioned model (the mixture prior).
Vec cfg_epsilon(std::span<const double> z, int t, const ConditionSpec& prompt,
                const GuidanceParams& params, const MixtureModel& mix,
                const DiffusionSchedule& sched);

/// Unsafe condition u = sum_i softmax(a)_i g_i. Throws InvalidDirection unless
/// u is a distribution over the mixture components.
ConditionSpec compose_unsafe(const WeightVector& a, const AttributeSet& attrs);

/// Classifier-free guidance with the gated safety term subtracted inside the
/// guidance bracket. `step_from_start` counts reverse steps already taken.
Vec sld_epsilon(std::span<const double> z, int t, const ConditionSpec& prompt,
                const ConditionSpec& unsafe, const GuidanceParams& params,
                const MixtureModel& mix, const DiffusionSchedule& sched, int step_from_start);

/// Ancestral sampling from x_T ~ N(0, I) down to x_0 using sld_epsilon.
/// Throws DivergenceError if the state becomes non-finite.
Vec reverse_sample(Rng& rng, const ConditionSpec& prompt, const ConditionSpec& unsafe,
                   const GuidanceParams& params, const MixtureModel& mix,
                   const DiffusionSchedule& sched);

/// Posterior argmax over mixture components of the clean sample; ties go to the
/// lowest index.
std::size_t classify(std::span<const double> x0, const MixtureModel& mix);

}  // namespace distalign
