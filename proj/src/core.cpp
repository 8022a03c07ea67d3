#include "distalign/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "distalign/error.hpp"

namespace distalign {

NormalizedDistribution::NormalizedDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw InvalidInput("distribution must have at least one entry");
  double sum = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0)
      throw InvalidInput("distribution entry out of [0, 1]: " + std::to_string(p));
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance)
    throw InvalidInput("distribution sums to " + std::to_string(sum) + ", expected 1");
}

NormalizedDistribution NormalizedDistribution::uniform(std::size_t n) {
  if (n == 0) throw InvalidInput("uniform distribution needs n >= 1");
  return NormalizedDistribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

WeightVector::WeightVector(std::vector<double> values) : values_(std::move(values)) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]))
      throw InvalidInput("weight " + std::to_string(i) + " is not finite");
  }
}

WeightVector WeightVector::zeros(std::size_t n) { return WeightVector(std::vector<double>(n, 0.0)); }

FrequencyVector::FrequencyVector(std::vector<std::uint64_t> counts) : counts_(std::move(counts)) {
  total_ = std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
  if (total_ == 0) throw EmptySample("frequency vector has no samples");
}

AttributeSet::AttributeSet(std::vector<std::string> labels, std::vector<std::vector<double>> directions)
    : labels_(std::move(labels)), directions_(std::move(directions)) {
  if (labels_.size() < 2) throw InvalidInput("an attribute set needs at least two groups");
  if (directions_.size() != labels_.size())
    throw InvalidInput("attribute set has " + std::to_string(labels_.size()) + " labels but " +
                       std::to_string(directions_.size()) + " directions");
  std::set<std::string> seen;
  for (const auto& label : labels_) {
    if (label.empty()) throw InvalidInput("attribute labels must be non-empty");
    if (!seen.insert(label).second) throw InvalidInput("duplicate attribute label: " + label);
  }
  const std::size_t dim = directions_.front().size();
  if (dim == 0) throw InvalidInput("guidance directions must have dimension >= 1");
  for (const auto& g : directions_) {
    if (g.size() != dim) throw InvalidInput("guidance directions have mismatched dimensions");
  }
}

AttributeSet AttributeSet::one_hot(std::vector<std::string> labels) {
  const std::size_t n = labels.size();
  std::vector<std::vector<double>> directions(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) directions[i][i] = 1.0;
  return AttributeSet(std::move(labels), std::move(directions));
}

NormalizedDistribution softmax(const WeightVector& a) {
  const auto v = a.values();
  if (v.empty()) throw InvalidInput("softmax of an empty weight vector");
  const double top = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - top);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return NormalizedDistribution(std::move(out));
}

NormalizedDistribution normalize_frequency(const FrequencyVector& s) {
  const double total = static_cast<double>(s.total());
  std::vector<double> probs;
  probs.reserve(s.size());
  for (auto c : s.counts()) probs.push_back(static_cast<double>(c) / total);
  return NormalizedDistribution(std::move(probs));
}

double kl_to_uniform(const NormalizedDistribution& p) {
  const double n = static_cast<double>(p.size());
  double kl = 0.0;
  for (double pi : p.probs()) {
    if (pi > 0.0) kl += pi * std::log(n * pi);
  }
  // Rounding can push an exactly-uniform input a hair below zero.
  return std::max(kl, 0.0);
}

}  // namespace distalign
