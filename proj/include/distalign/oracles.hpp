#pragma once

// Black-box oracles mapping a weight vector to per-group sample counts.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distalign/core.hpp"
#include "distalign/guidance.hpp"

namespace distalign {

enum class Backend { ToyDiffusion, SoftmaxSim, Remote };

struct OracleConfig {
  std::size_t num_samples = 100;
  std::uint64_t seed = 0;
  Backend backend = Backend::ToyDiffusion;
};

class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual std::size_t arity() const = 0;

  /// Counts over arity() groups summing to cfg.num_samples. Pure in (oracle, a, cfg.seed).
  virtual FrequencyVector evaluate(const WeightVector& a, const OracleConfig& cfg) const = 0;

  /// The generator with debiasing guidance switched off. Backends without such a
  /// switch evaluate the zero weight vector.
  virtual FrequencyVector evaluate_unguided(const OracleConfig& cfg) const {
    return evaluate(WeightVector::zeros(arity()), cfg);
  }

 protected:
  void check_arity(const WeightVector& a) const;
};

/// Largest-remainder apportionment of `total` items; ties go to the lowest index.
std::vector<std::uint64_t> apportion(const NormalizedDistribution& p, std::uint64_t total);

/// Multinomial draw of `total` items, one binomial per group.
std::vector<std::uint64_t> sample_counts(const NormalizedDistribution& p, std::uint64_t total, Rng& rng);

/// Analytic mixture diffusion sampled under multi-directional safety guidance.
///
/// The mixture prior is the unconditioned model; `prompt` is the condition the
/// generator is asked for. Each sample k draws from its own stream seeded with
/// derive_seed(cfg.seed, k), so counts do not depend on thread scheduling.
class ToyDiffusionOracle final : public Oracle {
 public:
  ToyDiffusionOracle(AttributeSet attrs, MixtureModel mix, ConditionSpec prompt,
                     GuidanceParams params, DiffusionSchedule sched, unsigned threads = 0);

  std::size_t arity() const override { return attrs_.size(); }
  FrequencyVector evaluate(const WeightVector& a, const OracleConfig& cfg) const override;
  FrequencyVector evaluate_unguided(const OracleConfig& cfg) const override;

  const MixtureModel& mixture() const noexcept { return mix_; }
  const GuidanceParams& params() const noexcept { return params_; }

 private:
  FrequencyVector run(const ConditionSpec& unsafe, const GuidanceParams& params,
                      const OracleConfig& cfg) const;

  AttributeSet attrs_;
  MixtureModel mix_;
  ConditionSpec prompt_;
  GuidanceParams params_;
  DiffusionSchedule sched_;
  unsigned threads_;
};

/// One-hidden-layer tanh network followed by a softmax.
struct SimNetwork {
  std::vector<std::vector<double>> w1;  // hidden x n
  std::vector<double> b1;               // hidden
  std::vector<std::vector<double>> w2;  // n x hidden
  std::vector<double> b2;               // n

  std::size_t groups() const noexcept { return b2.size(); }
  std::size_t hidden() const noexcept { return b1.size(); }
};

struct SimOracleSpec {
  std::size_t n = 2;
  std::size_t hidden_dim = 8;
  std::uint64_t weight_seed = 0;
  /// Draw multinomial counts when true, otherwise apportion the exact probabilities.
  bool sample_noise = true;
};

class SoftmaxSimOracle final : public Oracle {
 public:
  SoftmaxSimOracle(SimNetwork net, bool sample_noise);

  std::size_t arity() const override { return net_.groups(); }
  FrequencyVector evaluate(const WeightVector& a, const OracleConfig& cfg) const override;

  NormalizedDistribution probabilities(const WeightVector& a) const;
  const SimNetwork& network() const noexcept { return net_; }

 private:
  SimNetwork net_;
  bool sample_noise_;
};

SoftmaxSimOracle make_sim_oracle(const SimOracleSpec& spec);

/// Selection rule for the simulation presets: network seeds whose output at a = 0
/// has the requested KL, whose own-group response is suppressive
/// (p_i falls when a_i rises against the mean of a, for all i at a = 0), and whose KL falls
/// monotonically below balance_kl along the ray a = x (p(0) - 1/n), x in (0, ray_length].
struct SimCalibration {
  std::size_t n = 2;
  std::size_t hidden_dim = 8;
  double target_kl = 0.24;
  double kl_tolerance = 0.05;
  double balance_kl = 0.01;
  double ray_length = 20.0;
  std::size_t ray_steps = 2000;
};

bool sim_seed_qualifies(const SimCalibration& cal, std::uint64_t seed);

/// The first `count` qualifying seeds at or after `first_seed`.
std::vector<std::uint64_t> calibrated_sim_seeds(const SimCalibration& cal, std::size_t count,
                                                std::uint64_t first_seed = 0,
                                                std::uint64_t max_scan = 1'000'000);

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::milliseconds timeout{60'000};
};

/// Client for the HTTP evaluate endpoint. Transport failures and 5xx answers are
/// retried with exponential backoff; contract violations are not.
class RemoteOracle final : public Oracle {
 public:
  RemoteOracle(std::string endpoint, std::string prompt, std::vector<std::string> labels,
               RetryPolicy retry = {});

  std::size_t arity() const override { return labels_.size(); }
  FrequencyVector evaluate(const WeightVector& a, const OracleConfig& cfg) const override;

  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  std::string endpoint_;
  std::string prompt_;
  std::vector<std::string> labels_;
  RetryPolicy retry_;
};

/// One-shot form of RemoteOracle::evaluate.
FrequencyVector remote_evaluate(const std::string& endpoint, const WeightVector& a,
                                const std::string& prompt, const std::vector<std::string>& labels,
                                const OracleConfig& cfg, const RetryPolicy& retry = {});

/// Request body of the evaluate endpoint.
std::string encode_evaluate_request(const WeightVector& a, const std::string& prompt,
                                    const std::vector<std::string>& labels, const OracleConfig& cfg);

/// Validates a 200 response body against the request; throws ProtocolError.
FrequencyVector decode_evaluate_response(const std::string& body, std::size_t n,
                                         std::size_t num_samples);

}  // namespace distalign
