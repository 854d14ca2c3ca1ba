#pragma once

// Forward-only toy objectives f(m * w, xi) with known structure.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmpg/nm_core.hpp"

namespace nmpg {

enum class LossKind { SquaredError, CrossEntropy };
enum class ModelKind { Linear, Mlp };

const char* to_string(LossKind kind) noexcept;
LossKind loss_kind_from_string(std::string_view text);

/// Dataset layout shared by every toy task.
///
/// A sample is a short sequence of `sequence_length` input rows (the analogue
/// of a tokenized text sample); a minibatch is `batch_size` consecutive
/// samples. With `confine_loss` the raw loss r is mapped to
/// 1 + offset/2 + r/(2(1 + r)), which keeps every loss value inside [1, 2).
struct DataOptions {
  std::size_t batch_size = 8;
  std::size_t sequence_length = 1;
  LossKind loss = LossKind::SquaredError;
  double batch_offset_spread = 0.0;  // per-minibatch additive offsets in [0, spread]
  bool confine_loss = false;
  std::size_t calibration_batches = 0;  // 0 = every minibatch
};

class ToyTask {
 public:
  struct Model {
    ModelKind kind = ModelKind::Linear;
    std::size_t input_dim = 0;
    std::size_t hidden_width = 0;       // Mlp only
    std::vector<double> first_layer;    // masked weights, length d
    std::vector<double> hidden_bias;    // Mlp only
    std::vector<double> output_weights; // Mlp only
    double output_bias = 0.0;
  };

  ToyTask(SparsityPattern pattern, Model model, std::vector<double> inputs,
          std::vector<double> targets, const DataOptions& options, std::uint64_t seed);

  const SparsityPattern& pattern() const noexcept { return pattern_; }
  std::size_t dim() const noexcept { return model_.first_layer.size(); }
  const std::vector<double>& weights() const noexcept { return model_.first_layer; }
  const Model& model() const noexcept { return model_; }
  LossKind loss_kind() const noexcept { return options_.loss; }
  const DataOptions& options() const noexcept { return options_; }

  std::size_t sample_count() const noexcept { return sample_count_; }
  std::size_t minibatch_count() const noexcept { return batches_.size(); }
  const std::vector<std::size_t>& calibration() const noexcept { return calibration_; }
  const std::vector<double>& batch_offsets() const noexcept { return offsets_; }

  /// f(m * w, xi) for minibatch `minibatch`; pure and deterministic.
  double eval_loss(const NMMask& mask, std::size_t minibatch) const;
  double eval_loss(std::span<const std::uint8_t> bits, std::size_t minibatch) const;

  /// Loss of the unmasked model on a minibatch.
  double eval_dense_loss(std::size_t minibatch) const;

  /// Average of eval_loss over every minibatch (the exact expectation over xi).
  double mean_loss(std::span<const std::uint8_t> bits) const;

  /// Average of eval_loss over the calibration minibatches.
  double calibration_loss(std::span<const std::uint8_t> bits) const;

 private:
  struct Batch {
    std::size_t first_row;
    std::size_t row_count;
  };

  double eval_masked(std::span<const double> effective_weights, std::size_t minibatch) const;
  double row_output(std::span<const double> w, std::size_t row) const;

  SparsityPattern pattern_;
  Model model_;
  std::vector<double> inputs_;   // rows x input_dim
  std::vector<double> targets_;  // rows
  DataOptions options_;
  std::size_t sample_count_ = 0;
  std::vector<Batch> batches_;
  std::vector<double> offsets_;
  std::vector<std::size_t> calibration_;
};

struct PlantedInstance {
  ToyTask task;
  NMMask planted_mask;
  double noise_level = 0.0;
};

/// Linear regression whose targets come from the planted mask:
/// y = (m* * w)^T x + noise. Weight magnitudes are drawn from [0.5, 1.5] with
/// random signs so every coordinate carries signal. With zero noise and at
/// least d rows the design is checked to be full rank, which makes m* the
/// unique zero-loss mask.
PlantedInstance make_planted_linear(std::size_t d, SparsityPattern pattern,
                                    std::size_t n_samples, double noise_level,
                                    std::uint64_t seed, const DataOptions& options = {});

/// Two-layer tanh perceptron; only the first layer (d weights) is masked.
/// Targets come from the same network with the dense first layer.
ToyTask make_mlp_task(std::size_t d, SparsityPattern pattern, std::size_t hidden_width,
                      std::size_t n_samples, std::uint64_t seed,
                      const DataOptions& options = {}, double noise_level = 0.0);

/// Per group, keep the N largest scores; ties go to the lowest index.
NMMask top_n_mask(std::span<const double> scores, SparsityPattern pattern);

/// Per group, keep the N largest |w|; ties go to the lowest index.
NMMask magnitude_mask(std::span<const double> weights, SparsityPattern pattern);

/// A uniformly random valid mask.
NMMask random_mask(SparsityPattern pattern, std::size_t d, std::uint64_t seed);

}  // namespace nmpg
