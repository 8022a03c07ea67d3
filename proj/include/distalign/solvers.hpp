#pragma once

// Weight optimizers over a black-box oracle: Iterative Distribution Alignment
// (residual feedback) and a Gaussian-policy REINFORCE solver.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "distalign/core.hpp"
#include "distalign/error.hpp"
#include "distalign/oracles.hpp"

namespace distalign {

/// What the t = 0 evaluation of IDA measures.
enum class BaselineMode {
  Off,          // the generator with debiasing guidance disabled
  ZeroWeights,  // the guided generator at a = 0
};

struct IdaParams {
  double alpha = 1.0;
  double threshold = 0.005;
  std::size_t max_iters = 10;
  BaselineMode baseline_mode = BaselineMode::Off;
};

enum class RewardBaseline { None, Mean, Min };

struct RsParams {
  double eta = 0.01;
  std::size_t population = 60;
  std::size_t max_iters = 1000;
  /// Compared against the sum of candidate losses of one round.
  double threshold = 1e-3;
  RewardBaseline baseline = RewardBaseline::Mean;
  double momentum = 0.9;
  std::uint64_t init_seed = 0;
};

struct RewardStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// One oracle evaluation. `t` numbers evaluations from zero; `round` is the
/// solver iteration the evaluation belongs to (equal to t for IDA).
struct TraceRecord {
  std::size_t t = 0;
  std::size_t round = 0;
  WeightVector a;
  NormalizedDistribution sbar;
  double kl = 0.0;
  std::optional<RewardStats> reward_stats;
};

class SolverTrace {
 public:
  void append(TraceRecord record);

  const std::vector<TraceRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const TraceRecord& back() const { return records_.back(); }

  /// Index of the record with the smallest KL; earliest wins ties.
  std::size_t best_index() const;

 private:
  std::vector<TraceRecord> records_;
};

/// Per-round summary of the policy-gradient solver.
struct RoundSummary {
  std::size_t round = 0;
  WeightVector policy_mean;
  double loss_sum = 0.0;
  double mean_loss = 0.0;
  RewardStats rewards;
};

struct SolverResult {
  WeightVector weights;
  SolverTrace trace;
  bool converged = false;
  std::vector<RoundSummary> rounds;  // populated by rs_run only
};

/// An oracle failure during a solver run, carrying the records gathered so far.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, SolverTrace trace) : Error(what), trace_(std::move(trace)) {}
  const SolverTrace& trace() const noexcept { return trace_; }

 private:
  SolverTrace trace_;
};

/// Seed of the i-th oracle evaluation of a run seeded with `run_seed`.
std::uint64_t evaluation_seed(std::uint64_t run_seed, std::size_t evaluation);

SolverResult ida_run(const Oracle& oracle, std::size_t n, const IdaParams& params, const OracleConfig& cfg);

SolverResult rs_run(const Oracle& oracle, std::size_t n, const RsParams& params, const OracleConfig& cfg);

/// Score-function estimate sum_k (R_k - v) (a_k - A) of the policy gradient of
/// the expected reward under N(A, I).
std::vector<double> policy_gradient(std::span<const WeightVector> candidates, std::span<const double> rewards,
                                    const WeightVector& mean, RewardBaseline baseline);

}  // namespace distalign
