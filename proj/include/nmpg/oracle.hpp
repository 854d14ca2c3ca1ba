#pragma once

// Brute-force ground truth over the complete product mask space, plus Monte
// Carlo statistics of the three gradient estimators.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nmpg/pge.hpp"
#include "nmpg/sampling.hpp"
#include "nmpg/tasks.hpp"

namespace nmpg {

/// Upper bound on C(M,N)^(d/M) for exact enumeration.
inline constexpr std::uint64_t kMaxFullMasks = 1'000'000;

/// Throws Capacity when the product mask space exceeds kMaxFullMasks.
std::uint64_t full_mask_count(SparsityPattern pattern, std::size_t d);

struct MaskTerm {
  std::span<const std::uint8_t> bits;
  double probability;
  std::span<const double> score;  // grad log p(m | pi)
};

/// Calls `visit` once per full mask, in lexicographic order of group indices.
void for_each_mask(const GroupLogits& logits, const std::function<void(const MaskTerm&)>& visit);

struct ExactObjective {
  double value = 0.0;             // Phi(pi)
  std::vector<double> gradient;   // grad Phi(pi); empty from exact_phi
};

double total_probability(const GroupLogits& logits);

/// Phi(pi) = sum_m p(m | pi) * mean_xi f(m * w, xi).
ExactObjective exact_phi(const GroupLogits& logits, const ToyTask& task);

/// Adds grad Phi(pi) = sum_m mean_f(m) p(m | pi) grad log p(m | pi).
ExactObjective exact_grad_phi(const GroupLogits& logits, const ToyTask& task);

struct EstimatorStats {
  EstimatorKind kind = EstimatorKind::Vanilla;
  std::size_t sample_count = 0;
  std::vector<double> mean;
  std::vector<double> variance;        // per coordinate, unbiased
  std::vector<double> standard_error;  // sqrt(variance / n)
  double variance_trace = 0.0;
  double variance_trace_se = 0.0;      // standard error of variance_trace
};

/// Draws `samples` independent (mask, minibatch) pairs. Sample s uses
/// sample_mask(logits, seed, s) and a minibatch drawn uniformly from its own
/// substream, so two calls with the same seed see identical draws whatever
/// the estimator kind or delta.
EstimatorStats estimator_stats(EstimatorKind kind, const GroupLogits& logits,
                               const ToyTask& task, const NMMask& baseline, double delta,
                               std::size_t samples, std::uint64_t seed);

/// Variance-minimizing scalar baseline for g_sr:
/// sum_m p |s|^2 (f(m) - f(m0)) / sum_m p |s|^2, with s the score of m.
double optimal_delta(const GroupLogits& logits, const ToyTask& task, const NMMask& baseline);

/// Runs the smoothing tracker for `steps` samples at fixed logits, starting
/// from zero, and returns its final value.
double converged_tracker_delta(const GroupLogits& logits, const ToyTask& task,
                               const NMMask& baseline, double alpha, std::size_t steps,
                               std::uint64_t seed);

/// Largest |mean - exact| / SE over coordinates. A coordinate with SE == 0
/// contributes 0 when it matches within 1e-12 and infinity otherwise.
double max_standardized_error(const EstimatorStats& stats, std::span<const double> exact);

}  // namespace nmpg
