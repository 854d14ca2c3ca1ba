#pragma once

// Run configuration, on-disk formats, and the command implementations shared
// by the C API and the CLI.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nmpg/oracle.hpp"
#include "nmpg/pge.hpp"
#include "nmpg/tasks.hpp"

namespace nmpg {

inline constexpr int kConfigVersion = 1;

enum class TaskKind { PlantedLinear, Mlp };
enum class InitMaskSource { Magnitude, Random, Planted, File };

/// Flat key = value configuration; '#' starts a comment. Unknown keys and
/// a missing or unsupported `version` are errors.
struct RunConfig {
  // task
  TaskKind task = TaskKind::PlantedLinear;
  std::size_t dim = 64;
  SparsityPattern pattern{2, 4};
  std::size_t samples = 256;
  std::size_t hidden_width = 4;
  double noise = 0.0;
  DataOptions data;
  std::optional<std::uint64_t> task_seed;  // defaults to seed

  // training
  EstimatorKind estimator = EstimatorKind::SmoothedResidual;
  double learning_rate = 1.0;
  double alpha = 0.99;
  double logits_magnitude = 10.0;
  InitMaskSource init_mask = InitMaskSource::Magnitude;
  std::string init_mask_file;
  std::uint64_t seed = 0;
  std::uint64_t iterations = 1000;
  std::optional<double> refresh_fraction;
  std::string output_dir = "out";

  // reports
  std::size_t variance_samples = 100000;
  std::size_t tracker_steps = 2000;
  std::size_t curve_window = 100;
  std::size_t sweep_samples = 10000;

  std::uint64_t effective_task_seed() const { return task_seed.value_or(seed); }
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies one key = value assignment with the same validation as the parser.
/// On error `config` is left unchanged.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// Cross-field checks (file existence, eta > 0 unless iterations == 0, ...).
void validate_config(const RunConfig& config);

/// Serializes every key in canonical order (round-trips through parse_config).
std::string to_text(const RunConfig& config);

struct BuiltTask {
  ToyTask task;
  std::optional<NMMask> planted;
};

BuiltTask build_task(const RunConfig& config);
NMMask initial_mask(const RunConfig& config, const BuiltTask& built);

// Checkpoint: "key value" header lines (the baseline mask as packed hex),
// "end", then d little-endian float64 logits.
std::string encode_checkpoint(const TrainerState& state);
TrainerState decode_checkpoint(std::string_view bytes);

/// Versioned fixed instances used by `verify` and the acceptance suite.
/// Known ids: "unbiased-d8-v1" (noisy planted linear, d=8, 2:4) and
/// "confined-d8-v1" (same shape, losses confined to [1, 2) with per-minibatch
/// offsets).
RunConfig oracle_config(std::string_view id);

struct LogitsCase {
  std::string id;
  GroupLogits logits;
};

/// Three logits settings per instance: zeros, m_0 * 1.5, and N(0, 1) draws.
std::vector<LogitsCase> oracle_logits_cases(const RunConfig& config, const NMMask& m0);

/// One JSON object per line, fields: step, minibatch_id, loss, baseline_loss,
/// residual, delta.
std::string step_record_line(const StepRecord& record);

struct MemoryReport {
  SparsityPattern pattern;
  std::uint64_t dim = 0;
  std::uint64_t per_position_logits = 0;  // one logit per weight
  std::uint64_t per_pattern_logits = 0;   // one logit per admissible group mask
  /// per_pattern / per_position as a reduced fraction.
  std::uint64_t ratio_numerator = 0;
  std::uint64_t ratio_denominator = 0;
  double ratio() const {
    return static_cast<double>(ratio_numerator) / static_cast<double>(ratio_denominator);
  }
};

MemoryReport memory_report(SparsityPattern pattern, std::uint64_t d);
std::string memory_report_line(const MemoryReport& report);

using LineSink = std::function<void(std::string_view)>;

/// Exit statuses shared by the commands, the C API and the CLI.
enum class ExitStatus : int { Ok = 0, PropertyFailure = 1, Config = 2, Numeric = 3, Io = 4 };

// Commands write their artifacts under `out_dir` and stream summary lines to
// `sink`. They return Ok or PropertyFailure and throw Error otherwise.
ExitStatus run_train(const RunConfig& config, const std::filesystem::path& out_dir,
                     const LineSink& sink);
ExitStatus run_verify(std::string_view scope, std::uint64_t seed, const LineSink& sink);
ExitStatus run_variance_report(const RunConfig& config, const std::filesystem::path& out_dir,
                               const LineSink& sink);
ExitStatus run_c_sweep(const RunConfig& config, std::span<const double> c_values,
                       const std::filesystem::path& out_dir, const LineSink& sink);

ExitStatus exit_status_for(ErrorKind kind) noexcept;

/// Independent reference for log p(m_i | pi_i): direct permutation sum in
/// extended precision. Test oracle only.
long double reference_group_log_prob(std::span<const std::uint8_t> mask,
                                     std::span<const long double> logits);

/// Central finite differences of the reference log probability with respect
/// to every logit, evaluated in extended precision.
std::vector<double> finite_difference_score(const NMMask& mask, const GroupLogits& logits,
                                            double step);

}  // namespace nmpg
