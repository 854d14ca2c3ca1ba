#include "nmpg/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "nmpg/error.hpp"
#include "nmpg/rng.hpp"

namespace nmpg {
namespace {

struct GroupTable {
  std::vector<GroupBits> masks;
  std::vector<std::vector<double>> probs;   // [group][local mask]
  std::vector<std::vector<std::vector<double>>> scores;  // [group][local mask][M]
};

GroupTable build_table(const GroupLogits& logits) {
  const auto pattern = logits.pattern();
  GroupTable t;
  t.masks = enumerate_masks(pattern);
  const std::size_t groups = logits.group_count();
  const auto m = static_cast<std::size_t>(pattern.group_size);
  t.probs.assign(groups, std::vector<double>(t.masks.size()));
  t.scores.assign(groups, std::vector<std::vector<double>>(t.masks.size(), std::vector<double>(m)));
  for (std::size_t i = 0; i < groups; ++i) {
    for (std::size_t j = 0; j < t.masks.size(); ++j) {
      t.probs[i][j] = group_mask_prob(t.masks[j], logits.group(i), pattern);
      group_grad_log_prob(t.masks[j], logits.group(i), pattern, t.scores[i][j]);
    }
  }
  return t;
}

unsigned worker_count() {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return std::min(hw, 8u);
}

}  // namespace

std::uint64_t full_mask_count(SparsityPattern pattern, std::size_t d) {
  pattern.require_enumerable();
  const std::size_t groups = pattern.group_count(d);
  const std::uint64_t per_group = binomial(pattern.group_size, pattern.n_keep);
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < groups; ++i) {
    require(total <= kMaxFullMasks / per_group, ErrorKind::Capacity,
            "full mask space C(M,N)^(d/M) for d=" + std::to_string(d) + ", pattern " +
                pattern.to_string() + " exceeds " + std::to_string(kMaxFullMasks));
    total *= per_group;
  }
  return total;
}

void for_each_mask(const GroupLogits& logits,
                   const std::function<void(const MaskTerm&)>& visit) {
  full_mask_count(logits.pattern(), logits.dim());
  const auto table = build_table(logits);
  const std::size_t groups = logits.group_count();
  const auto m = static_cast<std::size_t>(logits.pattern().group_size);
  const std::size_t local = table.masks.size();

  std::vector<std::size_t> index(groups, 0);
  std::vector<std::uint8_t> bits(logits.dim());
  std::vector<double> score(logits.dim());
  while (true) {
    double p = 1.0;
    for (std::size_t i = 0; i < groups; ++i) {
      const auto j = index[i];
      p *= table.probs[i][j];
      std::copy(table.masks[j].begin(), table.masks[j].end(), bits.begin() + static_cast<std::ptrdiff_t>(i * m));
      std::copy(table.scores[i][j].begin(), table.scores[i][j].end(),
                score.begin() + static_cast<std::ptrdiff_t>(i * m));
    }
    visit(MaskTerm{bits, p, score});

    // Odometer increment, last group fastest.
    std::size_t g = groups;
    while (g > 0) {
      --g;
      if (++index[g] < local) break;
      index[g] = 0;
      if (g == 0) return;
    }
  }
}

double total_probability(const GroupLogits& logits) {
  double total = 0.0;
  for_each_mask(logits, [&](const MaskTerm& t) { total += t.probability; });
  return total;
}

ExactObjective exact_phi(const GroupLogits& logits, const ToyTask& task) {
  require(task.dim() == logits.dim() && task.pattern() == logits.pattern(),
          ErrorKind::Dimension, "logits do not match the task");
  ExactObjective out;
  for_each_mask(logits, [&](const MaskTerm& t) {
    out.value += t.probability * task.mean_loss(t.bits);
  });
  return out;
}

ExactObjective exact_grad_phi(const GroupLogits& logits, const ToyTask& task) {
  require(task.dim() == logits.dim() && task.pattern() == logits.pattern(),
          ErrorKind::Dimension, "logits do not match the task");
  ExactObjective out;
  out.gradient.assign(logits.dim(), 0.0);
  for_each_mask(logits, [&](const MaskTerm& t) {
    const double f = task.mean_loss(t.bits);
    out.value += t.probability * f;
    for (std::size_t k = 0; k < t.score.size(); ++k) {
      out.gradient[k] += f * t.probability * t.score[k];
    }
  });
  return out;
}

EstimatorStats estimator_stats(EstimatorKind kind, const GroupLogits& logits,
                               const ToyTask& task, const NMMask& baseline, double delta,
                               std::size_t samples, std::uint64_t seed) {
  require(samples >= 2, ErrorKind::InvalidArgument, "estimator statistics need >= 2 samples");
  require(task.dim() == logits.dim() && baseline.dim() == logits.dim(), ErrorKind::Dimension,
          "logits, task and baseline differ in dimension");
  const std::size_t d = logits.dim();

  std::vector<double> baseline_loss(task.minibatch_count());
  for (std::size_t b = 0; b < baseline_loss.size(); ++b) {
    baseline_loss[b] = task.eval_loss(baseline, b);
  }
  const SmoothingTracker tracker{delta, 0.0};

  // Every sample is computed independently into its own row, then reduced in
  // index order, so results do not depend on the thread count.
  std::vector<double> draws(samples * d);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const NMMask mask = sample_mask(logits, seed, s);
      auto rng = RandomStream::derive(seed, stream_tag::kEstimatorStats, s);
      StepRecord rec;
      rec.step = s;
      rec.minibatch_id = static_cast<std::size_t>(rng.below(task.minibatch_count()));
      rec.loss = task.eval_loss(mask, rec.minibatch_id);
      rec.baseline_loss = baseline_loss[rec.minibatch_id];
      rec.residual = rec.loss - rec.baseline_loss;
      const auto g = estimate(kind, rec, grad_log_prob(mask, logits), tracker);
      std::copy(g.begin(), g.end(), draws.begin() + static_cast<std::ptrdiff_t>(s * d));
    }
  };
  const unsigned workers = worker_count();
  std::vector<std::jthread> threads;
  const std::size_t chunk = (samples + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(samples, w * chunk);
    const std::size_t end = std::min(samples, begin + chunk);
    if (begin < end) threads.emplace_back(work, begin, end);
  }
  threads.clear();

  EstimatorStats st;
  st.kind = kind;
  st.sample_count = samples;
  st.mean.assign(d, 0.0);
  st.variance.assign(d, 0.0);
  st.standard_error.assign(d, 0.0);
  const auto n = static_cast<double>(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t k = 0; k < d; ++k) st.mean[k] += draws[s * d + k];
  }
  for (double& v : st.mean) v /= n;

  double q_sum = 0.0, q_sq = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double q = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double e = draws[s * d + k] - st.mean[k];
      st.variance[k] += e * e;
      q += e * e;
    }
    q_sum += q;
    q_sq += q * q;
  }
  for (std::size_t k = 0; k < d; ++k) {
    st.variance[k] /= n - 1.0;
    st.variance_trace += st.variance[k];
    st.standard_error[k] = std::sqrt(st.variance[k] / n);
  }
  const double q_mean = q_sum / n;
  const double q_var = std::max(0.0, (q_sq - n * q_mean * q_mean) / (n - 1.0));
  st.variance_trace_se = std::sqrt(q_var / n) * n / (n - 1.0);
  return st;
}

double optimal_delta(const GroupLogits& logits, const ToyTask& task, const NMMask& baseline) {
  require(task.dim() == logits.dim() && baseline.dim() == logits.dim(), ErrorKind::Dimension,
          "logits, task and baseline differ in dimension");
  const double baseline_mean = task.mean_loss(baseline.bits());
  double num = 0.0, den = 0.0;
  for_each_mask(logits, [&](const MaskTerm& t) {
    double norm2 = 0.0;
    for (double s : t.score) norm2 += s * s;
    const double w = t.probability * norm2;
    num += w * (task.mean_loss(t.bits) - baseline_mean);
    den += w;
  });
  return den > 0.0 ? num / den : 0.0;
}

double converged_tracker_delta(const GroupLogits& logits, const ToyTask& task,
                               const NMMask& baseline, double alpha, std::size_t steps,
                               std::uint64_t seed) {
  SmoothingTracker tracker{0.0, alpha};
  const MinibatchSchedule schedule(task.minibatch_count(), seed);
  std::vector<std::optional<double>> cache(task.minibatch_count());
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t b = schedule.at(t);
    const NMMask mask = sample_mask(logits, seed, t);
    if (!cache[b]) cache[b] = task.eval_loss(baseline, b);
    tracker = update_tracker(tracker, task.eval_loss(mask, b) - *cache[b]);
  }
  return tracker.delta;
}

double max_standardized_error(const EstimatorStats& stats, std::span<const double> exact) {
  require(exact.size() == stats.mean.size(), ErrorKind::Dimension,
          "exact gradient length does not match the statistics");
  double worst = 0.0;
  for (std::size_t k = 0; k < exact.size(); ++k) {
    const double diff = std::abs(stats.mean[k] - exact[k]);
    if (stats.standard_error[k] > 0.0) {
      worst = std::max(worst, diff / stats.standard_error[k]);
    } else if (diff > 1e-12) {
      worst = std::numeric_limits<double>::infinity();
    }
  }
  return worst;
}

}  // namespace nmpg
