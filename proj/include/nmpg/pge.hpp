#pragma once

// Score-function (policy-gradient) estimators over the mask distribution and
// the forward-only training loop that learns group logits.

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nmpg/error.hpp"
#include "nmpg/nm_core.hpp"
#include "nmpg/sampling.hpp"
#include "nmpg/tasks.hpp"

namespace nmpg {

enum class EstimatorKind { Vanilla, Residual, SmoothedResidual };

const char* to_string(EstimatorKind kind) noexcept;
EstimatorKind estimator_from_string(std::string_view text);

/// Exponential moving average of loss residuals: delta <- a*delta + (1-a)*r.
struct SmoothingTracker {
  double delta = 0.0;
  double alpha = 0.99;
};

SmoothingTracker update_tracker(SmoothingTracker tracker, double residual);

struct StepRecord {
  std::uint64_t step = 0;
  std::size_t minibatch_id = 0;
  double loss = 0.0;           // f(m_t * w, xi)
  double baseline_loss = 0.0;  // f(m_0 * w, xi)
  double residual = 0.0;       // loss - baseline_loss
  double delta = 0.0;          // tracker value after this step's update
};

struct TrainerState {
  GroupLogits logits;
  SmoothingTracker tracker;
  NMMask baseline_mask;
  std::uint64_t step = 0;
  double learning_rate = 0.0;
  std::uint64_t rng_seed = 0;
};

/// pi_0 = C at kept positions of m_0 and 0 elsewhere.
GroupLogits init_logits(const NMMask& m0, double magnitude);

/// scalar * score, with scalar = loss, residual, or residual - delta.
std::vector<double> estimate(EstimatorKind kind, const StepRecord& record,
                             std::span<const double> score, const SmoothingTracker& tracker);

/// logits <- logits - eta * estimate; step + 1. Throws Numeric when the
/// estimate or the resulting logits are not finite.
TrainerState apply_update(TrainerState state, std::span<const double> estimate);

/// Cyclic pass over minibatch ids, reshuffled every epoch from the seed.
class MinibatchSchedule {
 public:
  MinibatchSchedule(std::size_t minibatch_count, std::uint64_t seed);
  std::size_t at(std::uint64_t step) const;

 private:
  std::size_t count_;
  std::uint64_t seed_;
  mutable std::uint64_t cached_epoch_ = UINT64_MAX;
  mutable std::vector<std::size_t> order_;
};

struct TrainConfig {
  EstimatorKind estimator = EstimatorKind::SmoothedResidual;
  double learning_rate = 1.0;
  double alpha = 0.99;
  std::uint64_t seed = 0;
  std::uint64_t iterations = 0;
  /// Replace m_0 by the current top-N mask once delta <= -fraction * (mean
  /// baseline loss). Off when empty.
  std::optional<double> refresh_fraction;
};

struct TrainResult {
  TrainerState state;
  std::vector<StepRecord> records;
  std::vector<std::uint64_t> refresh_steps;
};

/// Thrown when an update produces non-finite values; carries the last valid
/// state and the records emitted so far.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& message, TrainerState last_state,
                  std::vector<StepRecord> records)
      : Error(ErrorKind::Numeric, message),
        last_state_(std::move(last_state)),
        records_(std::move(records)) {}

  const TrainerState& last_state() const noexcept { return last_state_; }
  const std::vector<StepRecord>& records() const noexcept { return records_; }

 private:
  TrainerState last_state_;
  std::vector<StepRecord> records_;
};

/// Runs the training loop from `initial`. The baseline loss f(m_0 * w, xi) is
/// cached per minibatch id because m_0 and xi are both fixed.
TrainResult train(const ToyTask& task, const TrainConfig& config, TrainerState initial);

/// Convenience overload: initial logits m_0 * C.
TrainResult train(const ToyTask& task, const TrainConfig& config, const NMMask& m0,
                  double logits_magnitude);

/// Per group, the N highest logits; ties go to the lowest index.
NMMask extract_final_mask(const GroupLogits& logits);

/// Draws k masks (draw i uses sample_mask(logits, seed, i)) and returns the
/// one with the lowest calibration loss; the earliest draw wins ties.
NMMask multi_sample_select(const GroupLogits& logits, const ToyTask& task, std::size_t k,
                           std::uint64_t seed);

}  // namespace nmpg
