#include "nmpg/pge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nmpg/rng.hpp"

namespace nmpg {

const char* to_string(EstimatorKind kind) noexcept {
  switch (kind) {
    case EstimatorKind::Vanilla: return "vanilla";
    case EstimatorKind::Residual: return "residual";
    case EstimatorKind::SmoothedResidual: return "smoothed_residual";
  }
  return "unknown";
}

EstimatorKind estimator_from_string(std::string_view text) {
  if (text == "vanilla") return EstimatorKind::Vanilla;
  if (text == "residual") return EstimatorKind::Residual;
  if (text == "smoothed_residual") return EstimatorKind::SmoothedResidual;
  fail(ErrorKind::InvalidArgument, "unknown estimator '" + std::string(text) +
                                       "' (expected vanilla, residual or smoothed_residual)");
}

SmoothingTracker update_tracker(SmoothingTracker tracker, double residual) {
  tracker.delta = tracker.alpha * tracker.delta + (1.0 - tracker.alpha) * residual;
  return tracker;
}

GroupLogits init_logits(const NMMask& m0, double magnitude) {
  require(std::isfinite(magnitude), ErrorKind::InvalidArgument,
          "logits magnitude must be finite");
  std::vector<double> values(m0.dim());
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = m0.bits()[k] ? magnitude : 0.0;
  return GroupLogits(m0.pattern(), std::move(values));
}

std::vector<double> estimate(EstimatorKind kind, const StepRecord& record,
                             std::span<const double> score, const SmoothingTracker& tracker) {
  require(std::isfinite(record.loss) && std::isfinite(record.baseline_loss),
          ErrorKind::Numeric,
          "non-finite loss at step " + std::to_string(record.step) + " (loss=" +
              std::to_string(record.loss) + ", baseline=" +
              std::to_string(record.baseline_loss) + ", minibatch=" +
              std::to_string(record.minibatch_id) + ")");
  double scalar = 0.0;
  switch (kind) {
    case EstimatorKind::Vanilla: scalar = record.loss; break;
    case EstimatorKind::Residual: scalar = record.residual; break;
    case EstimatorKind::SmoothedResidual: scalar = record.residual - tracker.delta; break;
  }
  std::vector<double> out(score.size());
  for (std::size_t k = 0; k < score.size(); ++k) out[k] = scalar * score[k];
  return out;
}

TrainerState apply_update(TrainerState state, std::span<const double> estimate) {
  require(estimate.size() == state.logits.dim(), ErrorKind::Dimension,
          "estimate length does not match logits");
  std::vector<double> next = state.logits.values();
  for (std::size_t k = 0; k < next.size(); ++k) {
    require(std::isfinite(estimate[k]), ErrorKind::Numeric,
            "non-finite gradient estimate at coordinate " + std::to_string(k) +
                " (step " + std::to_string(state.step) + ")");
    next[k] -= state.learning_rate * estimate[k];
    require(std::isfinite(next[k]), ErrorKind::Numeric,
            "logit " + std::to_string(k) + " became non-finite at step " +
                std::to_string(state.step));
  }
  state.logits = GroupLogits(state.logits.pattern(), std::move(next));
  ++state.step;
  return state;
}

MinibatchSchedule::MinibatchSchedule(std::size_t minibatch_count, std::uint64_t seed)
    : count_(minibatch_count), seed_(seed) {
  require(count_ >= 1, ErrorKind::InvalidArgument, "schedule needs at least one minibatch");
}

std::size_t MinibatchSchedule::at(std::uint64_t step) const {
  const std::uint64_t epoch = step / count_;
  if (epoch != cached_epoch_) {
    order_.resize(count_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    auto rng = RandomStream::derive(seed_, stream_tag::kMinibatch, epoch);
    for (std::size_t i = count_; i > 1; --i) {
      std::swap(order_[i - 1], order_[rng.below(i)]);
    }
    cached_epoch_ = epoch;
  }
  return order_[step % count_];
}

TrainResult train(const ToyTask& task, const TrainConfig& config, TrainerState initial) {
  require(config.alpha >= 0.0 && config.alpha < 1.0, ErrorKind::InvalidArgument,
          "alpha must lie in [0, 1)");
  require(initial.logits.pattern() == task.pattern() && initial.logits.dim() == task.dim(),
          ErrorKind::Dimension, "initial logits do not match the task");
  require(initial.baseline_mask.pattern() == task.pattern() &&
              initial.baseline_mask.dim() == task.dim(),
          ErrorKind::Dimension, "baseline mask does not match the task");

  TrainResult result{std::move(initial), {}, {}};
  TrainerState& state = result.state;
  state.learning_rate = config.learning_rate;
  state.rng_seed = config.seed;
  state.tracker.alpha = config.alpha;
  result.records.reserve(config.iterations);

  const MinibatchSchedule schedule(task.minibatch_count(), config.seed);
  std::vector<std::optional<double>> baseline_cache(task.minibatch_count());
  double baseline_sum = 0.0;

  for (std::uint64_t t = 0; t < config.iterations; ++t) {
    StepRecord rec;
    rec.step = state.step;
    rec.minibatch_id = schedule.at(state.step);

    const NMMask mask = sample_mask(state.logits, config.seed, state.step);
    rec.loss = task.eval_loss(mask, rec.minibatch_id);
    auto& cached = baseline_cache[rec.minibatch_id];
    if (!cached) cached = task.eval_loss(state.baseline_mask, rec.minibatch_id);
    rec.baseline_loss = *cached;
    rec.residual = rec.loss - rec.baseline_loss;

    try {
      const auto score = grad_log_prob(mask, state.logits);
      const auto g = estimate(config.estimator, rec, score, state.tracker);
      TrainerState next = apply_update(state, g);
      state = std::move(next);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numeric) throw;
      throw TrainingAborted(e.what(), state, std::move(result.records));
    }
    state.tracker = update_tracker(state.tracker, rec.residual);
    rec.delta = state.tracker.delta;
    result.records.push_back(rec);

    baseline_sum += rec.baseline_loss;
    if (config.refresh_fraction) {
      const double mean_baseline = baseline_sum / static_cast<double>(t + 1);
      if (state.tracker.delta <= -*config.refresh_fraction * mean_baseline) {
        state.baseline_mask = extract_final_mask(state.logits);
        std::fill(baseline_cache.begin(), baseline_cache.end(), std::nullopt);
        state.tracker.delta = 0.0;
        baseline_sum = 0.0;
        result.refresh_steps.push_back(state.step);
      }
    }
  }
  return result;
}

TrainResult train(const ToyTask& task, const TrainConfig& config, const NMMask& m0,
                  double logits_magnitude) {
  TrainerState initial{init_logits(m0, logits_magnitude),
                       SmoothingTracker{0.0, config.alpha},
                       m0,
                       0,
                       config.learning_rate,
                       config.seed};
  return train(task, config, std::move(initial));
}

NMMask extract_final_mask(const GroupLogits& logits) {
  return top_n_mask(logits.values(), logits.pattern());
}

NMMask multi_sample_select(const GroupLogits& logits, const ToyTask& task, std::size_t k,
                           std::uint64_t seed) {
  require(k >= 1, ErrorKind::InvalidArgument, "multi-sample selection needs k >= 1");
  std::optional<NMMask> best;
  double best_loss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    NMMask candidate = sample_mask(logits, seed, i);
    if (k == 1) return candidate;
    const double loss = task.calibration_loss(candidate.bits());
    if (!best || loss < best_loss) {
      best = std::move(candidate);
      best_loss = loss;
    }
  }
  return *std::move(best);
}

}  // namespace nmpg
