#include "nmpg/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nmpg/error.hpp"

namespace nmpg {
namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t k = 0; k < values.size(); ++k) {
    require(std::isfinite(values[k]), ErrorKind::Numeric,
            std::string(what) + " entry " + std::to_string(k) + " is not finite");
  }
}

double logsumexp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

void check_group_args(std::span<const std::uint8_t> mask_group,
                      std::span<const double> logits_group, SparsityPattern pattern) {
  require(logits_group.size() == static_cast<std::size_t>(pattern.group_size) &&
              mask_group.size() == logits_group.size(),
          ErrorKind::Dimension, "group length does not match M=" +
                                    std::to_string(pattern.group_size));
  require(is_valid_group(mask_group, pattern), ErrorKind::InvalidArgument,
          "mask group is not " + std::to_string(pattern.n_keep) + "-hot");
  // N = M has a single mask with p = 1; no permutation sum is needed.
  require(pattern.n_keep == pattern.group_size || pattern.n_keep <= kMaxPermutationKeep, ErrorKind::Capacity,
          "exact mask probability needs N <= " + std::to_string(kMaxPermutationKeep) +
              ", got N=" + std::to_string(pattern.n_keep));
}

/// Per-order quantities for one draw order sigma of the kept set.
struct OrderTerms {
  double log_weight = 0.0;           // log prod_j psi_sigma(j) / rem_j
  std::vector<double> log_rem;       // log of the undrawn mass before step j
  std::vector<double> drawn_mass;    // mass drawn before step j
};

/// Evaluates one draw order. The undrawn mass before step j is accumulated
/// from the positions still available rather than as 1 - (drawn mass), so it
/// never suffers cancellation when a few positions dominate.
OrderTerms order_terms(std::span<const int> order, std::span<const double> log_psi,
                       std::span<const double> psi, std::span<const int> unkept) {
  const std::size_t n = order.size();
  OrderTerms t;
  t.log_rem.resize(n);
  t.drawn_mass.resize(n);

  std::vector<double> pool;
  pool.reserve(log_psi.size());
  for (int k : unkept) pool.push_back(log_psi[static_cast<std::size_t>(k)]);
  const std::size_t tail = pool.size();
  for (int k : order) pool.push_back(log_psi[static_cast<std::size_t>(k)]);

  double drawn = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    // Available before step j: every unkept position plus order[j..n).
    std::vector<double> avail(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(tail));
    avail.insert(avail.end(), pool.begin() + static_cast<std::ptrdiff_t>(tail + j), pool.end());
    t.log_rem[j] = logsumexp(avail);
    t.drawn_mass[j] = drawn;
    t.log_weight += log_psi[static_cast<std::size_t>(order[j])] - t.log_rem[j];
    drawn += psi[static_cast<std::size_t>(order[j])];
  }
  return t;
}

struct GroupSplit {
  std::vector<int> kept;
  std::vector<int> unkept;
};

GroupSplit split_group(std::span<const std::uint8_t> mask_group) {
  GroupSplit s;
  for (std::size_t k = 0; k < mask_group.size(); ++k) {
    (mask_group[k] ? s.kept : s.unkept).push_back(static_cast<int>(k));
  }
  return s;
}

}  // namespace

GroupLogits::GroupLogits(SparsityPattern pattern, std::vector<double> values)
    : pattern_(SparsityPattern::make(pattern.n_keep, pattern.group_size)),
      values_(std::move(values)) {
  pattern_.group_count(values_.size());
  require_finite(values_, "logits");
}

std::span<const double> GroupLogits::group(std::size_t i) const {
  const auto m = static_cast<std::size_t>(pattern_.group_size);
  return std::span<const double>(values_).subspan(i * m, m);
}

CategoricalGroup softmax_group(std::span<const double> logits) {
  require_finite(logits, "softmax input");
  const double hi = *std::max_element(logits.begin(), logits.end());
  CategoricalGroup p(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - hi);
    total += p[k];
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> log_softmax_group(std::span<const double> logits) {
  require_finite(logits, "softmax input");
  const double lse = logsumexp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

GroupBits sample_group(std::span<const double> logits, int n_keep, RandomStream& rng) {
  const auto psi = softmax_group(logits);
  const std::size_t m = psi.size();
  GroupBits bits(m, 0);
  for (int step = 0; step < n_keep; ++step) {
    double rem = 0.0;
    std::size_t available = 0;
    for (std::size_t k = 0; k < m; ++k) {
      if (!bits[k]) {
        rem += psi[k];
        ++available;
      }
    }
    const double u = rng.uniform();
    std::size_t pick = m;
    if (rem > 0.0) {
      const double target = u * rem;
      double cum = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        if (bits[k] || psi[k] <= 0.0) continue;
        pick = k;  // last positive-mass candidate absorbs rounding at the end
        cum += psi[k];
        if (target < cum) break;
      }
    } else {
      // Every remaining position underflowed to zero mass; the 0/0 := 1
      // convention makes them equally likely.
      auto index = static_cast<std::size_t>(u * static_cast<double>(available));
      for (std::size_t k = 0; k < m; ++k) {
        if (bits[k]) continue;
        if (index-- == 0) {
          pick = k;
          break;
        }
      }
    }
    bits[pick] = 1;
  }
  return bits;
}

NMMask sample_mask(const GroupLogits& logits, std::uint64_t seed, std::uint64_t step) {
  const auto m = static_cast<std::size_t>(logits.pattern().group_size);
  std::vector<std::uint8_t> bits(logits.dim(), 0);
  for (std::size_t i = 0; i < logits.group_count(); ++i) {
    auto rng = RandomStream::derive(seed, stream_tag::kMaskSample, step, i);
    const auto g = sample_group(logits.group(i), logits.pattern().n_keep, rng);
    std::copy(g.begin(), g.end(), bits.begin() + static_cast<std::ptrdiff_t>(i * m));
  }
  return NMMask(logits.pattern(), std::move(bits));
}

double group_log_prob(std::span<const std::uint8_t> mask_group,
                      std::span<const double> logits_group, SparsityPattern pattern) {
  check_group_args(mask_group, logits_group, pattern);
  if (pattern.n_keep == pattern.group_size) return 0.0;
  const auto log_psi = log_softmax_group(logits_group);
  const auto psi = softmax_group(logits_group);
  auto [order, unkept] = split_group(mask_group);

  std::vector<double> log_weights;
  do {
    log_weights.push_back(order_terms(order, log_psi, psi, unkept).log_weight);
  } while (std::next_permutation(order.begin(), order.end()));
  return logsumexp(log_weights);
}

double group_mask_prob(std::span<const std::uint8_t> mask_group,
                       std::span<const double> logits_group, SparsityPattern pattern) {
  return std::exp(group_log_prob(mask_group, logits_group, pattern));
}

void group_grad_log_prob(std::span<const std::uint8_t> mask_group,
                         std::span<const double> logits_group, SparsityPattern pattern,
                         std::span<double> out) {
  check_group_args(mask_group, logits_group, pattern);
  require(out.size() == logits_group.size(), ErrorKind::Dimension,
          "gradient output has wrong length");
  if (pattern.n_keep == pattern.group_size) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const std::size_t m = logits_group.size();
  const auto n = static_cast<std::size_t>(pattern.n_keep);
  const auto log_psi = log_softmax_group(logits_group);
  const auto psi = softmax_group(logits_group);
  auto [order, unkept] = split_group(mask_group);

  std::vector<OrderTerms> terms;
  std::vector<std::vector<int>> orders;
  std::vector<double> log_weights;
  do {
    terms.push_back(order_terms(order, log_psi, psi, unkept));
    orders.push_back(order);
    log_weights.push_back(terms.back().log_weight);
  } while (std::next_permutation(order.begin(), order.end()));
  const double log_p = logsumexp(log_weights);

  // Product-of-psi part: sum_sigma w_sigma (I[k kept] - N psi_k) with the
  // posterior weights w_sigma summing to one.
  for (std::size_t k = 0; k < m; ++k) {
    out[k] = (mask_group[k] ? 1.0 : 0.0) - static_cast<double>(n) * psi[k];
  }

  // Renormalization part: for each order and step j, position k contributes
  // psi_k (I[j > rank_k] - S_{j-1}) / (1 - S_{j-1}). When k was already drawn
  // the ratio is exactly psi_k; otherwise it is -(psi_k / rem_j) * S_{j-1}
  // and psi_k / rem_j <= 1 because k is still in the pool.
  std::vector<std::size_t> rank(m);
  for (std::size_t s = 0; s < terms.size(); ++s) {
    const double w = std::exp(log_weights[s] - log_p);
    if (w == 0.0) continue;
    const auto& t = terms[s];
    std::fill(rank.begin(), rank.end(), n);  // unkept positions never drawn
    for (std::size_t j = 0; j < n; ++j) rank[static_cast<std::size_t>(orders[s][j])] = j;
    for (std::size_t k = 0; k < m; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j > rank[k]) {
          acc += psi[k];
        } else if (t.drawn_mass[j] > 0.0) {
          acc -= std::exp(log_psi[k] - t.log_rem[j]) * t.drawn_mass[j];
        }
      }
      out[k] += w * acc;
    }
  }
}

double log_prob(const NMMask& mask, const GroupLogits& logits) {
  require(mask.pattern() == logits.pattern() && mask.dim() == logits.dim(),
          ErrorKind::Dimension, "mask and logits have incompatible shapes");
  const double floor = std::log(kProbabilityFloor);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.group_count(); ++i) {
    total += std::max(group_log_prob(mask.group(i), logits.group(i), logits.pattern()), floor);
  }
  return total;
}

std::vector<double> grad_log_prob(const NMMask& mask, const GroupLogits& logits) {
  require(mask.pattern() == logits.pattern() && mask.dim() == logits.dim(),
          ErrorKind::Dimension, "mask and logits have incompatible shapes");
  const auto m = static_cast<std::size_t>(logits.pattern().group_size);
  std::vector<double> out(logits.dim(), 0.0);
  for (std::size_t i = 0; i < logits.group_count(); ++i) {
    group_grad_log_prob(mask.group(i), logits.group(i), logits.pattern(),
                        std::span<double>(out).subspan(i * m, m));
  }
  return out;
}

}  // namespace nmpg
