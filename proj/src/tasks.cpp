#include "nmpg/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nmpg/error.hpp"
#include "nmpg/rng.hpp"

namespace nmpg {
namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Cholesky-based positive-definiteness test on the Gram matrix X^T X.
bool gram_is_positive_definite(const std::vector<double>& x, std::size_t rows,
                               std::size_t cols) {
  std::vector<double> g(cols * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * cols;
    for (std::size_t i = 0; i < cols; ++i) {
      for (std::size_t j = 0; j <= i; ++j) g[i * cols + j] += row[i] * row[j];
    }
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < cols; ++i) scale = std::max(scale, g[i * cols + i]);
  const double tol = 1e-10 * std::max(scale, 1.0);
  for (std::size_t j = 0; j < cols; ++j) {
    double diag = g[j * cols + j];
    for (std::size_t k = 0; k < j; ++k) diag -= g[j * cols + k] * g[j * cols + k];
    if (diag <= tol) return false;
    const double root = std::sqrt(diag);
    g[j * cols + j] = root;
    for (std::size_t i = j + 1; i < cols; ++i) {
      double v = g[i * cols + j];
      for (std::size_t k = 0; k < j; ++k) v -= g[i * cols + k] * g[j * cols + k];
      g[i * cols + j] = v / root;
    }
  }
  return true;
}

std::vector<int> random_subset(int m, int n, RandomStream& rng) {
  std::vector<int> pos(static_cast<std::size_t>(m));
  std::iota(pos.begin(), pos.end(), 0);
  for (int i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(i) +
                   rng.below(static_cast<std::uint64_t>(m - i));
    std::swap(pos[static_cast<std::size_t>(i)], pos[j]);
  }
  pos.resize(static_cast<std::size_t>(n));
  return pos;
}

void check_options(const DataOptions& options, std::size_t n_samples) {
  require(n_samples >= 1, ErrorKind::InvalidArgument, "dataset needs at least one sample");
  require(options.batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be positive");
  require(options.sequence_length >= 1, ErrorKind::InvalidArgument,
          "sequence length must be positive");
  require(options.batch_offset_spread >= 0.0 && std::isfinite(options.batch_offset_spread),
          ErrorKind::InvalidArgument, "batch offset spread must be finite and >= 0");
  require(!options.confine_loss || options.batch_offset_spread <= 1.0,
          ErrorKind::InvalidArgument, "confined losses need batch offset spread <= 1");
}

}  // namespace

const char* to_string(LossKind kind) noexcept {
  return kind == LossKind::SquaredError ? "squared_error" : "cross_entropy";
}

LossKind loss_kind_from_string(std::string_view text) {
  if (text == "squared_error") return LossKind::SquaredError;
  if (text == "cross_entropy") return LossKind::CrossEntropy;
  fail(ErrorKind::InvalidArgument, "unknown loss kind '" + std::string(text) + "'");
}

ToyTask::ToyTask(SparsityPattern pattern, Model model, std::vector<double> inputs,
                 std::vector<double> targets, const DataOptions& options, std::uint64_t seed)
    : pattern_(pattern),
      model_(std::move(model)),
      inputs_(std::move(inputs)),
      targets_(std::move(targets)),
      options_(options) {
  pattern_.group_count(model_.first_layer.size());
  require(model_.input_dim > 0 && inputs_.size() % model_.input_dim == 0, ErrorKind::Dimension,
          "input matrix does not match the model input width");
  const std::size_t rows = inputs_.size() / model_.input_dim;
  require(rows == targets_.size(), ErrorKind::Dimension, "inputs and targets differ in rows");
  require(rows % options_.sequence_length == 0, ErrorKind::Dimension,
          "row count is not a multiple of the sequence length");
  sample_count_ = rows / options_.sequence_length;
  check_options(options_, sample_count_);

  for (std::size_t s = 0; s < sample_count_; s += options_.batch_size) {
    const std::size_t count = std::min(options_.batch_size, sample_count_ - s);
    batches_.push_back({s * options_.sequence_length, count * options_.sequence_length});
  }
  offsets_.resize(batches_.size(), 0.0);
  if (options_.batch_offset_spread > 0.0) {
    for (std::size_t b = 0; b < batches_.size(); ++b) {
      auto rng = RandomStream::derive(seed, stream_tag::kTaskData, 1, b);
      offsets_[b] = options_.batch_offset_spread * rng.uniform();
    }
  }
  const std::size_t calib = options_.calibration_batches == 0
                                ? batches_.size()
                                : std::min(options_.calibration_batches, batches_.size());
  calibration_.resize(calib);
  std::iota(calibration_.begin(), calibration_.end(), std::size_t{0});
}

double ToyTask::row_output(std::span<const double> w, std::size_t row) const {
  const double* x = inputs_.data() + row * model_.input_dim;
  if (model_.kind == ModelKind::Linear) {
    double z = 0.0;
    for (std::size_t k = 0; k < model_.input_dim; ++k) z += w[k] * x[k];
    return z;
  }
  double out = model_.output_bias;
  for (std::size_t h = 0; h < model_.hidden_width; ++h) {
    const double* wr = w.data() + h * model_.input_dim;
    double a = model_.hidden_bias[h];
    for (std::size_t k = 0; k < model_.input_dim; ++k) a += wr[k] * x[k];
    out += model_.output_weights[h] * std::tanh(a);
  }
  return out;
}

double ToyTask::eval_masked(std::span<const double> w, std::size_t minibatch) const {
  require(minibatch < batches_.size(), ErrorKind::InvalidArgument,
          "minibatch id " + std::to_string(minibatch) + " out of range [0, " +
              std::to_string(batches_.size()) + ")");
  const auto& batch = batches_[minibatch];
  double total = 0.0;
  for (std::size_t r = batch.first_row; r < batch.first_row + batch.row_count; ++r) {
    const double z = row_output(w, r);
    if (options_.loss == LossKind::SquaredError) {
      const double e = z - targets_[r];
      total += e * e;
    } else {
      total += softplus(z) - targets_[r] * z;
    }
  }
  const double raw = total / static_cast<double>(batch.row_count);
  if (options_.confine_loss) {
    return 1.0 + 0.5 * offsets_[minibatch] + 0.5 * raw / (1.0 + raw);
  }
  return raw + offsets_[minibatch];
}

double ToyTask::eval_loss(std::span<const std::uint8_t> bits, std::size_t minibatch) const {
  require(bits.size() == dim(), ErrorKind::Dimension, "mask length does not match task");
  std::vector<double> w(dim());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = bits[k] ? model_.first_layer[k] : 0.0;
  return eval_masked(w, minibatch);
}

double ToyTask::eval_loss(const NMMask& mask, std::size_t minibatch) const {
  require(mask.pattern() == pattern_, ErrorKind::Dimension, "mask pattern does not match task");
  return eval_loss(std::span<const std::uint8_t>(mask.bits()), minibatch);
}

double ToyTask::eval_dense_loss(std::size_t minibatch) const {
  return eval_masked(model_.first_layer, minibatch);
}

double ToyTask::mean_loss(std::span<const std::uint8_t> bits) const {
  double total = 0.0;
  for (std::size_t b = 0; b < batches_.size(); ++b) total += eval_loss(bits, b);
  return total / static_cast<double>(batches_.size());
}

double ToyTask::calibration_loss(std::span<const std::uint8_t> bits) const {
  double total = 0.0;
  for (std::size_t b : calibration_) total += eval_loss(bits, b);
  return total / static_cast<double>(calibration_.size());
}

PlantedInstance make_planted_linear(std::size_t d, SparsityPattern pattern,
                                    std::size_t n_samples, double noise_level,
                                    std::uint64_t seed, const DataOptions& options) {
  const std::size_t groups = pattern.group_count(d);
  require(noise_level >= 0.0 && std::isfinite(noise_level), ErrorKind::InvalidArgument,
          "noise level must be finite and >= 0");
  check_options(options, n_samples);

  auto weight_rng = RandomStream::derive(seed, stream_tag::kTaskData, 2);
  std::vector<double> w(d);
  for (double& v : w) {
    const double magnitude = 0.5 + weight_rng.uniform();
    v = weight_rng.uniform() < 0.5 ? -magnitude : magnitude;
  }

  auto mask_rng = RandomStream::derive(seed, stream_tag::kTaskData, 3);
  std::vector<std::vector<int>> kept(groups);
  for (auto& g : kept) {
    g = random_subset(pattern.group_size, pattern.n_keep, mask_rng);
    std::sort(g.begin(), g.end());
  }
  NMMask planted = NMMask::from_groups(pattern, kept);

  const std::size_t rows = n_samples * options.sequence_length;
  auto data_rng = RandomStream::derive(seed, stream_tag::kTaskData, 4);
  std::vector<double> x(rows * d);
  for (double& v : x) v = data_rng.normal();
  std::vector<double> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double z = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      if (planted.bits()[k]) z += w[k] * x[r * d + k];
    }
    z += noise_level * data_rng.normal();
    y[r] = options.loss == LossKind::SquaredError ? z : (z > 0.0 ? 1.0 : 0.0);
  }

  if (noise_level == 0.0 && options.loss == LossKind::SquaredError) {
    require(rows >= d && gram_is_positive_definite(x, rows, d), ErrorKind::InvalidArgument,
            "planted instance is not identifiable: the " + std::to_string(rows) +
                " input rows do not span all " + std::to_string(d) + " coordinates");
  }

  ToyTask::Model model;
  model.kind = ModelKind::Linear;
  model.input_dim = d;
  model.first_layer = std::move(w);
  ToyTask task(pattern, std::move(model), std::move(x), std::move(y), options, seed);
  return PlantedInstance{std::move(task), std::move(planted), noise_level};
}

ToyTask make_mlp_task(std::size_t d, SparsityPattern pattern, std::size_t hidden_width,
                      std::size_t n_samples, std::uint64_t seed, const DataOptions& options,
                      double noise_level) {
  require(hidden_width > 0, ErrorKind::InvalidArgument, "hidden width must be positive");
  pattern.group_count(d);
  require(d % hidden_width == 0, ErrorKind::Dimension,
          "first-layer weight count " + std::to_string(d) +
              " is not divisible by the hidden width " + std::to_string(hidden_width));
  check_options(options, n_samples);
  const std::size_t input_dim = d / hidden_width;

  auto rng = RandomStream::derive(seed, stream_tag::kTaskData, 5);
  ToyTask::Model model;
  model.kind = ModelKind::Mlp;
  model.input_dim = input_dim;
  model.hidden_width = hidden_width;
  model.first_layer.resize(d);
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (double& v : model.first_layer) v = 2.0 * in_scale * rng.normal();
  model.hidden_bias.resize(hidden_width);
  for (double& v : model.hidden_bias) v = 0.1 * rng.normal();
  model.output_weights.resize(hidden_width);
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(hidden_width));
  for (double& v : model.output_weights) v = out_scale * rng.normal();
  model.output_bias = 0.0;

  const std::size_t rows = n_samples * options.sequence_length;
  auto data_rng = RandomStream::derive(seed, stream_tag::kTaskData, 6);
  std::vector<double> x(rows * input_dim);
  for (double& v : x) v = data_rng.normal();

  // Teacher targets use the dense first layer.
  std::vector<double> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double out = model.output_bias;
    for (std::size_t h = 0; h < hidden_width; ++h) {
      double a = model.hidden_bias[h];
      for (std::size_t k = 0; k < input_dim; ++k) {
        a += model.first_layer[h * input_dim + k] * x[r * input_dim + k];
      }
      out += model.output_weights[h] * std::tanh(a);
    }
    out += noise_level * data_rng.normal();
    y[r] = options.loss == LossKind::SquaredError ? out : (out > 0.0 ? 1.0 : 0.0);
  }
  return ToyTask(pattern, std::move(model), std::move(x), std::move(y), options, seed);
}

NMMask top_n_mask(std::span<const double> scores, SparsityPattern pattern) {
  const std::size_t groups = pattern.group_count(scores.size());
  const auto m = static_cast<std::size_t>(pattern.group_size);
  std::vector<std::uint8_t> bits(scores.size(), 0);
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < groups; ++i) {
    const auto g = scores.subspan(i * m, m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
    for (int j = 0; j < pattern.n_keep; ++j) bits[i * m + order[static_cast<std::size_t>(j)]] = 1;
  }
  return NMMask(pattern, std::move(bits));
}

NMMask magnitude_mask(std::span<const double> weights, SparsityPattern pattern) {
  std::vector<double> magnitude(weights.size());
  std::transform(weights.begin(), weights.end(), magnitude.begin(),
                 [](double v) { return std::abs(v); });
  return top_n_mask(magnitude, pattern);
}

NMMask random_mask(SparsityPattern pattern, std::size_t d, std::uint64_t seed) {
  const std::size_t groups = pattern.group_count(d);
  auto rng = RandomStream::derive(seed, stream_tag::kInitMask);
  std::vector<std::vector<int>> kept(groups);
  for (auto& g : kept) g = random_subset(pattern.group_size, pattern.n_keep, rng);
  return NMMask::from_groups(pattern, kept);
}

}  // namespace nmpg
