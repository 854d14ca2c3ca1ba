#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

#include "nmpg/error.hpp"
#include "nmpg/harness.hpp"
#include "nmpg/rng.hpp"

namespace nmpg {
namespace {

// Accumulates PASS/FAIL lines for one verify invocation.
class Report {
 public:
  explicit Report(const LineSink& sink) : sink_(sink) {}

  void check(bool pass, std::string_view property, std::string_view detail) {
    std::string line = pass ? "PASS " : "FAIL ";
    line += property;
    if (!detail.empty()) {
      line += ' ';
      line += detail;
    }
    sink_(line);
    all_ &= pass;
  }
  bool all_passed() const { return all_; }

 private:
  const LineSink& sink_;
  bool all_ = true;
};

std::vector<SparsityPattern> patterns_up_to(int max_m, int max_n) {
  std::vector<SparsityPattern> out;
  for (int m = 1; m <= max_m; ++m) {
    for (int n = 1; n <= std::min(m, max_n); ++n) out.push_back(SparsityPattern::make(n, m));
  }
  return out;
}

std::vector<double> normal_logits(RandomStream& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

void verify_algebra(Report& report, std::uint64_t seed) {
  std::string failing;
  for (auto p : patterns_up_to(8, 8)) {
    if (!verify_representation(p)) failing += " " + p.to_string();
  }
  report.check(failing.empty(), "algebra.representation",
               failing.empty() ? "patterns=all M<=8" : "instance=" + failing);

  auto rng = RandomStream::derive(seed, stream_tag::kVerify, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const bool binary = trial % 2 == 0;
    std::vector<double> a(8), b(8), c(8);
    for (std::size_t k = 0; k < 8; ++k) {
      a[k] = binary ? static_cast<double>(rng.below(2)) : rng.uniform();
      b[k] = binary ? static_cast<double>(rng.below(2)) : rng.uniform();
      c[k] = binary ? static_cast<double>(rng.below(2)) : rng.uniform();
    }
    const auto ab = oplus(a, b), ba = oplus(b, a);
    const auto left = oplus(ab, c), right = oplus(a, oplus(b, c));
    for (std::size_t k = 0; k < 8; ++k) {
      worst = std::max({worst, std::abs(ab[k] - ba[k]), std::abs(left[k] - right[k])});
    }
  }
  report.check(worst <= 1e-15, "algebra.oplus_commutative_associative", "max_err=" + num(worst));

  bool norms = true;
  for (auto p : patterns_up_to(8, 8)) {
    std::vector<int> idx(static_cast<std::size_t>(p.group_size));
    for (int k = 0; k < p.group_size; ++k) idx[static_cast<std::size_t>(k)] = k;
    for (int trial = 0; trial < 10; ++trial) {
      for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
      const auto v = compose_basis(std::span<const int>(idx.data(), static_cast<std::size_t>(p.n_keep)),
                                   p.group_size);
      double l1 = 0.0;
      for (double x : v) l1 += x;
      norms = norms && l1 == p.n_keep;
    }
  }
  report.check(norms, "algebra.compose_basis_l1", "");
}

void verify_probability(Report& report, std::uint64_t seed) {
  const SparsityPattern listed[] = {SparsityPattern::make(1, 4), SparsityPattern::make(2, 4),
                                    SparsityPattern::make(3, 4), SparsityPattern::make(2, 6),
                                    SparsityPattern::make(4, 8)};
  for (auto p : listed) {
    auto rng = RandomStream::derive(seed, stream_tag::kVerify, 2, static_cast<std::uint64_t>(p.n_keep * 100 + p.group_size));
    const auto masks = enumerate_masks(p);
    double worst = 0.0, worst_shift_p = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const double scale = 0.5 + 2.5 * (trial % 4);
      const auto logits = normal_logits(rng, static_cast<std::size_t>(p.group_size), scale);
      auto shifted = logits;
      const double c = 10.0 * rng.normal();
      for (double& x : shifted) x += c;
      double total = 0.0;
      for (const auto& m : masks) {
        const double pr = group_mask_prob(m, logits, p);
        total += pr;
        worst_shift_p = std::max(worst_shift_p, std::abs(pr - group_mask_prob(m, shifted, p)));
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
    report.check(worst <= 1e-10, "probability.normalization",
                 "pattern=" + p.to_string() + " max_err=" + num(worst));
    report.check(worst_shift_p <= 1e-12, "probability.shift_invariance",
                 "pattern=" + p.to_string() + " max_err=" + num(worst_shift_p));
  }

  const auto p24 = SparsityPattern::make(2, 4);
  const double c = 10.0;
  const double closed = std::exp(2 * c) / ((std::exp(c) + 1.0) * (std::exp(c) + 2.0));
  const std::vector<double> peaked{0.0, c, c, 0.0};
  const GroupBits middle{0, 1, 1, 0};
  const double exact = group_mask_prob(middle, peaked, p24);
  report.check(std::abs(exact - closed) <= 1e-12, "probability.closed_form_C10",
               "p=" + num(exact) + " closed_form=" + num(closed));

  // Empirical frequencies of the sampler against the exact probabilities.
  const std::size_t draws = 100000;
  const std::vector<std::vector<double>> settings{{0.0, 0.0, 0.0, 0.0}, peaked, {0.3, -1.2, 2.0, 0.7}};
  const auto masks = enumerate_masks(p24);
  for (std::size_t si = 0; si < settings.size(); ++si) {
    const GroupLogits logits(p24, settings[si]);
    std::map<GroupBits, std::size_t> counts;
    for (std::size_t s = 0; s < draws; ++s) {
      const NMMask m = sample_mask(logits, seed ^ 0x5A5A, s);
      ++counts[GroupBits(m.bits().begin(), m.bits().end())];
    }
    // 3-SE per mask where the normal approximation holds (expected count
    // n p (1 - p) >= 10); every mask enters a chi-square goodness-of-fit test
    // with low-count cells (expected < 5) pooled.
    double worst_z = 0.0, chi2 = 0.0, pooled_expected = 0.0, pooled_observed = 0.0;
    int cells = 0;
    const auto n = static_cast<double>(draws);
    for (const auto& m : masks) {
      const double pr = group_mask_prob(m, settings[si], p24);
      const double observed = static_cast<double>(counts[m]);
      if (n * pr * (1.0 - pr) >= 10.0) {
        const double se = std::sqrt(pr * (1.0 - pr) / n);
        worst_z = std::max(worst_z, std::abs(observed / n - pr) / se);
      }
      if (n * pr >= 5.0) {
        chi2 += (observed - n * pr) * (observed - n * pr) / (n * pr);
        ++cells;
      } else {
        pooled_expected += n * pr;
        pooled_observed += observed;
      }
    }
    if (pooled_expected > 0.0) {
      chi2 += (pooled_observed - pooled_expected) * (pooled_observed - pooled_expected) /
              pooled_expected;
      ++cells;
    }
    const double p_value = cells > 1 ? boost::math::gamma_q(0.5 * (cells - 1), 0.5 * chi2) : 1.0;
    report.check(worst_z <= 3.0 && p_value >= 0.0027, "probability.sampling_frequency",
                 "setting=" + std::to_string(si) + " max_abs_z=" + num(worst_z) +
                     " chi2_p=" + num(p_value));
  }
}

void verify_gradients(Report& report, std::uint64_t seed) {
  const SparsityPattern listed[] = {SparsityPattern::make(1, 4), SparsityPattern::make(2, 4),
                                    SparsityPattern::make(3, 4), SparsityPattern::make(2, 6),
                                    SparsityPattern::make(4, 8)};
  for (auto p : listed) {
    auto rng = RandomStream::derive(seed, stream_tag::kVerify, 3, static_cast<std::uint64_t>(p.n_keep * 100 + p.group_size));
    const auto masks = enumerate_masks(p);
    const auto m = static_cast<std::size_t>(p.group_size);
    double worst_rel = 0.0, worst_sum = 0.0, worst_shift = 0.0;
    std::string fd_fail;
    for (int trial = 0; trial < 200; ++trial) {
      const GroupLogits logits(p, normal_logits(rng, m, 1.0 + (trial % 3)));
      const NMMask mask(p, masks[rng.below(masks.size())]);
      const auto g = grad_log_prob(mask, logits);
      const auto fd = finite_difference_score(mask, logits, 1e-5);
      for (std::size_t k = 0; k < m; ++k) {
        const double err = std::abs(g[k] - fd[k]);
        const bool ok = std::abs(g[k]) < 1e-6 ? err <= 1e-8 : err <= 1e-5 * std::abs(g[k]);
        if (std::abs(g[k]) >= 1e-6) worst_rel = std::max(worst_rel, err / std::abs(g[k]));
        if (!ok && fd_fail.empty()) fd_fail = " instance=trial" + std::to_string(trial);
      }
      double sum = 0.0;
      for (double x : g) sum += x;
      worst_sum = std::max(worst_sum, std::abs(sum));

      auto shifted = logits.values();
      const double c = 5.0 * rng.normal();
      for (double& x : shifted) x += c;
      const auto gs = grad_log_prob(mask, GroupLogits(p, shifted));
      for (std::size_t k = 0; k < m; ++k) worst_shift = std::max(worst_shift, std::abs(gs[k] - g[k]));
    }
    report.check(fd_fail.empty(), "gradients.finite_difference",
                 "pattern=" + p.to_string() + " max_rel_err=" + num(worst_rel) + fd_fail);
    report.check(worst_sum <= 1e-8, "gradients.zero_sum",
                 "pattern=" + p.to_string() + " max_err=" + num(worst_sum));
    report.check(worst_shift <= 1e-10, "gradients.shift_invariance",
                 "pattern=" + p.to_string() + " max_err=" + num(worst_shift));
  }

  // Score mean zero by enumeration on every pattern with M <= 8, N <= 6.
  std::string failing;
  double worst_mean = 0.0;
  for (auto p : patterns_up_to(8, kMaxPermutationKeep)) {
    auto rng = RandomStream::derive(seed, stream_tag::kVerify, 4, static_cast<std::uint64_t>(p.n_keep * 100 + p.group_size));
    const auto masks = enumerate_masks(p);
    const auto m = static_cast<std::size_t>(p.group_size);
    for (int trial = 0; trial < 5; ++trial) {
      const auto logits = normal_logits(rng, m, 1.5);
      std::vector<double> mean(m, 0.0), g(m);
      for (const auto& mk : masks) {
        const double pr = group_mask_prob(mk, logits, p);
        group_grad_log_prob(mk, logits, p, g);
        for (std::size_t k = 0; k < m; ++k) mean[k] += pr * g[k];
      }
      for (double x : mean) {
        worst_mean = std::max(worst_mean, std::abs(x));
        if (std::abs(x) > 1e-10 && failing.find(p.to_string()) == std::string::npos) {
          failing += " " + p.to_string();
        }
      }
    }
  }
  report.check(failing.empty(), "gradients.score_mean_zero",
               "max_err=" + num(worst_mean) + (failing.empty() ? "" : " instance=" + failing));
}

void verify_unbiasedness(Report& report, std::uint64_t seed) {
  const std::string id = "unbiased-d8-v1";
  const RunConfig config = oracle_config(id);
  const BuiltTask built = build_task(config);
  const NMMask m0 = initial_mask(config, built);
  const std::size_t samples = 100000;

  for (const auto& lc : oracle_logits_cases(config, m0)) {
    const auto exact = exact_grad_phi(lc.logits, built.task);
    report.check(std::abs(total_probability(lc.logits) - 1.0) <= 1e-9,
                 "unbiasedness.total_probability", "instance=" + id + "/" + lc.id);

    // Finite differences of the exact objective.
    double worst_rel = 0.0;
    bool fd_ok = true;
    auto values = lc.logits.values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + 1e-5;
      const double up = exact_phi(GroupLogits(config.pattern, values), built.task).value;
      values[k] = saved - 1e-5;
      const double down = exact_phi(GroupLogits(config.pattern, values), built.task).value;
      values[k] = saved;
      const double g = exact.gradient[k];
      const double err = std::abs((up - down) / 2e-5 - g);
      if (std::abs(g) < 1e-6) {
        fd_ok = fd_ok && err <= 1e-8;
      } else {
        worst_rel = std::max(worst_rel, err / std::abs(g));
        fd_ok = fd_ok && err <= 1e-5 * std::abs(g);
      }
    }
    report.check(fd_ok, "unbiasedness.exact_gradient_fd",
                 "instance=" + id + "/" + lc.id + " max_rel_err=" + num(worst_rel));

    const double delta = converged_tracker_delta(lc.logits, built.task, m0, config.alpha, 2000, seed);
    for (EstimatorKind kind :
         {EstimatorKind::Vanilla, EstimatorKind::Residual, EstimatorKind::SmoothedResidual}) {
      const auto st = estimator_stats(kind, lc.logits, built.task, m0, delta, samples, seed);
      const double z = max_standardized_error(st, exact.gradient);
      report.check(z <= 3.0, "unbiasedness.mean_within_3se",
                   "instance=" + id + "/" + lc.id + " kind=" + to_string(kind) +
                       " max_abs_z=" + num(z));
    }
  }
}

}  // namespace

ExitStatus run_verify(std::string_view scope, std::uint64_t seed, const LineSink& sink) {
  Report report(sink);
  const bool all = scope == "all";
  bool known = all;
  if (all || scope == "algebra") { verify_algebra(report, seed); known = true; }
  if (all || scope == "probability") { verify_probability(report, seed); known = true; }
  if (all || scope == "gradients") { verify_gradients(report, seed); known = true; }
  if (all || scope == "unbiasedness") { verify_unbiasedness(report, seed); known = true; }
  require(known, ErrorKind::Config,
          "unknown verify scope '" + std::string(scope) +
              "' (expected algebra, probability, gradients, unbiasedness or all)");
  return report.all_passed() ? ExitStatus::Ok : ExitStatus::PropertyFailure;
}

}  // namespace nmpg
