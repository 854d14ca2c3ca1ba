#pragma once

// Per-group categorical distributions over positions, N-way sampling without
// replacement, and the exact probability / score of a sampled mask.

#include <cstdint>
#include <span>
#include <vector>

#include "nmpg/nm_core.hpp"
#include "nmpg/rng.hpp"

namespace nmpg {

/// Largest N for which the N! permutation sum is evaluated.
inline constexpr int kMaxPermutationKeep = 6;

/// Floor applied to probabilities before taking logs in log_prob.
inline constexpr double kProbabilityFloor = 1e-300;

/// Flat logits vector; group i occupies [i*M, (i+1)*M).
class GroupLogits {
 public:
  GroupLogits(SparsityPattern pattern, std::vector<double> values);

  const SparsityPattern& pattern() const noexcept { return pattern_; }
  std::size_t dim() const noexcept { return values_.size(); }
  std::size_t group_count() const noexcept {
    return values_.size() / static_cast<std::size_t>(pattern_.group_size);
  }
  const std::vector<double>& values() const noexcept { return values_; }
  std::span<const double> group(std::size_t i) const;

  friend bool operator==(const GroupLogits&, const GroupLogits&) = default;

 private:
  SparsityPattern pattern_;
  std::vector<double> values_;
};

using CategoricalGroup = std::vector<double>;

/// Max-subtracted softmax; throws Numeric on non-finite input.
CategoricalGroup softmax_group(std::span<const double> logits);

/// log softmax computed as x - logsumexp(x).
std::vector<double> log_softmax_group(std::span<const double> logits);

/// Draws N distinct positions sequentially: at each step position k is drawn
/// with probability psi_k / (mass of the positions not drawn yet). Consumes
/// exactly N uniforms from `rng`.
GroupBits sample_group(std::span<const double> logits, int n_keep, RandomStream& rng);

/// Samples every group from its own substream derived from (seed, step, group).
NMMask sample_mask(const GroupLogits& logits, std::uint64_t seed, std::uint64_t step);

/// log p(m_i | pi_i) as the log of the sum over all N! draw orders.
double group_log_prob(std::span<const std::uint8_t> mask_group,
                      std::span<const double> logits_group, SparsityPattern pattern);

double group_mask_prob(std::span<const std::uint8_t> mask_group,
                       std::span<const double> logits_group, SparsityPattern pattern);

/// Closed-form d log p(m_i | pi_i) / d pi_i written into `out` (length M).
void group_grad_log_prob(std::span<const std::uint8_t> mask_group,
                         std::span<const double> logits_group, SparsityPattern pattern,
                         std::span<double> out);

/// Sum of per-group log probabilities, each floored at kProbabilityFloor.
double log_prob(const NMMask& mask, const GroupLogits& logits);

/// Score vector: gradient of log p(m | pi) with respect to every logit.
std::vector<double> grad_log_prob(const NMMask& mask, const GroupLogits& logits);

}  // namespace nmpg
