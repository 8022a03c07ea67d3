#pragma once

// Domain types and the distribution math shared by every other module:
// softmax over weights, count normalization and the KL-to-uniform loss.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace distalign {

/// Probability vector over n groups. Entries lie in [0, 1] and sum to one
/// within kSumTolerance.
class NormalizedDistribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit NormalizedDistribution(std::vector<double> probs);

  static NormalizedDistribution uniform(std::size_t n);

  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_.at(i); }

  friend bool operator==(const NormalizedDistribution&, const NormalizedDistribution&) = default;

 private:
  std::vector<double> probs_;
};

/// The optimization variable: one finite coefficient per attribute group.
class WeightVector {
 public:
  explicit WeightVector(std::vector<double> values);

  static WeightVector zeros(std::size_t n);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_.at(i); }

  friend bool operator==(const WeightVector&, const WeightVector&) = default;

 private:
  std::vector<double> values_;
};

/// Per-group sample counts. The total is always at least one.
class FrequencyVector {
 public:
  explicit FrequencyVector(std::vector<std::uint64_t> counts);

  std::span<const std::uint64_t> counts() const noexcept { return counts_; }
  std::uint64_t total() const noexcept { return total_; }
  std::size_t size() const noexcept { return counts_.size(); }
  std::uint64_t operator[](std::size_t i) const { return counts_.at(i); }

  friend bool operator==(const FrequencyVector&, const FrequencyVector&) = default;

 private:
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// Group labels and their guidance directions g_i.
class AttributeSet {
 public:
  AttributeSet(std::vector<std::string> labels, std::vector<std::vector<double>> directions);

  /// Directions are the standard basis vectors e_i of R^n.
  static AttributeSet one_hot(std::vector<std::string> labels);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dimension() const noexcept { return directions_.front().size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<std::vector<double>>& directions() const noexcept { return directions_; }

 private:
  std::vector<std::string> labels_;
  std::vector<std::vector<double>> directions_;
};

NormalizedDistribution softmax(const WeightVector& a);

NormalizedDistribution normalize_frequency(const FrequencyVector& s);

/// sum_i p_i ln(n p_i) with 0 ln 0 := 0.
double kl_to_uniform(const NormalizedDistribution& p);

}  // namespace distalign
