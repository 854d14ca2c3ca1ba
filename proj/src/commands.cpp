#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nmpg/error.hpp"
#include "nmpg/harness.hpp"
#include "nmpg/rng.hpp"

namespace nmpg {
namespace {

using Json = nlohmann::ordered_json;

void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  require(static_cast<bool>(out), ErrorKind::Io, "write to " + path.string() + " failed");
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorKind::Io,
          "cannot create output directory " + dir.string() + ": " + ec.message());
}

std::string records_text(const std::vector<StepRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += step_record_line(r);
    out += '\n';
  }
  return out;
}

double tail_mean_residual(const std::vector<StepRecord>& records, std::size_t window) {
  if (records.empty()) return 0.0;
  const std::size_t n = std::min(window, records.size());
  double sum = 0.0;
  for (std::size_t i = records.size() - n; i < records.size(); ++i) sum += records[i].residual;
  return sum / static_cast<double>(n);
}

TrainConfig train_config(const RunConfig& c) {
  return TrainConfig{c.estimator, c.learning_rate, c.alpha, c.seed, c.iterations,
                     c.refresh_fraction};
}

}  // namespace

ExitStatus run_train(const RunConfig& config, const std::filesystem::path& out_dir,
                     const LineSink& sink) {
  validate_config(config);
  const BuiltTask built = build_task(config);
  const NMMask m0 = initial_mask(config, built);
  ensure_dir(out_dir);
  write_file(out_dir / "config.txt", to_text(config));

  TrainerState initial{init_logits(m0, config.logits_magnitude),
                       SmoothingTracker{0.0, config.alpha},
                       m0,
                       0,
                       config.learning_rate,
                       config.seed};
  if (config.iterations == 0) {
    write_file(out_dir / "checkpoint.ckpt", encode_checkpoint(initial));
    Json j;
    j["iterations"] = 0;
    j["checkpoint"] = "checkpoint.ckpt";
    sink(j.dump());
    return ExitStatus::Ok;
  }

  TrainResult result{initial, {}, {}};
  try {
    result = train(built.task, train_config(config), std::move(initial));
  } catch (const TrainingAborted& e) {
    write_file(out_dir / "steps.jsonl", records_text(e.records()));
    write_file(out_dir / "abort.ckpt", encode_checkpoint(e.last_state()));
    throw;
  }

  const NMMask final_mask = extract_final_mask(result.state.logits);
  write_file(out_dir / "steps.jsonl", records_text(result.records));
  write_file(out_dir / "checkpoint.ckpt", encode_checkpoint(result.state));
  write_file(out_dir / "final_mask.txt", to_text(final_mask));

  Json j;
  j["estimator"] = to_string(config.estimator);
  j["iterations"] = config.iterations;
  j["final_delta"] = result.state.tracker.delta;
  j["final_mean_residual"] = tail_mean_residual(result.records, 1000);
  j["final_mask_loss"] = built.task.mean_loss(final_mask.bits());
  j["initial_mask_loss"] = built.task.mean_loss(m0.bits());
  j["baseline_refreshes"] = result.refresh_steps.size();
  if (built.planted) {
    j["recovery"] = final_mask == *built.planted;
  }
  const std::string line = j.dump();
  write_file(out_dir / "summary.json", line + "\n");
  sink(line);
  return ExitStatus::Ok;
}

ExitStatus run_variance_report(const RunConfig& config, const std::filesystem::path& out_dir,
                               const LineSink& sink) {
  validate_config(config);
  full_mask_count(config.pattern, config.dim);
  require(config.variance_samples >= 1000, ErrorKind::Config,
          "config field 'variance_samples': must be >= 1000");
  const BuiltTask built = build_task(config);
  const ToyTask& task = built.task;
  const NMMask m0 = initial_mask(config, built);
  const GroupLogits logits = init_logits(m0, config.logits_magnitude);

  std::string report;
  auto emit = [&](const Json& j) {
    const std::string line = j.dump();
    report += line;
    report += '\n';
    sink(line);
  };
  bool ok = true;

  const auto exact = exact_grad_phi(logits, task);
  const double delta_opt = optimal_delta(logits, task, m0);
  const double delta_tracker =
      converged_tracker_delta(logits, task, m0, config.alpha, config.tracker_steps, config.seed);
  {
    Json j;
    j["record"] = "instance";
    j["pattern"] = config.pattern.to_string();
    j["dim"] = config.dim;
    j["minibatches"] = task.minibatch_count();
    j["logits_magnitude"] = config.logits_magnitude;
    j["phi"] = exact.value;
    j["optimal_delta"] = delta_opt;
    j["tracker_delta"] = delta_tracker;
    j["tracker_steps"] = config.tracker_steps;
    emit(j);
  }

  struct Row {
    std::string label;
    EstimatorKind kind;
    double delta;
    EstimatorStats stats;
  };
  const double eps = delta_opt == 0.0 ? 0.1 : 0.5 * std::abs(delta_opt);
  std::vector<Row> rows;
  auto add = [&](std::string label, EstimatorKind kind, double delta) {
    rows.push_back({std::move(label), kind, delta,
                    estimator_stats(kind, logits, task, m0, delta, config.variance_samples,
                                    config.seed)});
  };
  add("vanilla", EstimatorKind::Vanilla, 0.0);
  add("residual", EstimatorKind::Residual, 0.0);
  add("smoothed_residual", EstimatorKind::SmoothedResidual, delta_tracker);
  add("smoothed_residual@optimal", EstimatorKind::SmoothedResidual, delta_opt);
  add("smoothed_residual@optimal-eps", EstimatorKind::SmoothedResidual, delta_opt - eps);
  add("smoothed_residual@optimal+eps", EstimatorKind::SmoothedResidual, delta_opt + eps);

  for (const auto& r : rows) {
    const double z = max_standardized_error(r.stats, exact.gradient);
    const bool unbiased = z <= 3.0;
    if (r.label.find('@') == std::string::npos) ok = ok && unbiased;
    Json j;
    j["record"] = "estimator";
    j["kind"] = r.label;
    j["delta"] = r.delta;
    j["samples"] = r.stats.sample_count;
    j["variance_trace"] = r.stats.variance_trace;
    j["variance_trace_se"] = r.stats.variance_trace_se;
    j["max_abs_z"] = z;
    j["unbiased_3se"] = unbiased;
    emit(j);
  }

  // The ordering claim assumes f(m, xi) > f(m_0, xi) / 2 for every pair.
  bool condition = true;
  for_each_mask(logits, [&](const MaskTerm& t) {
    for (std::size_t b = 0; condition && b < task.minibatch_count(); ++b) {
      if (!(task.eval_loss(t.bits, b) > 0.5 * task.eval_loss(m0, b))) condition = false;
    }
  });
  {
    const double vp = rows[0].stats.variance_trace;
    const double vr = rows[1].stats.variance_trace;
    const double vsr = rows[2].stats.variance_trace;
    Json j;
    j["record"] = "ordering";
    j["var_vanilla"] = vp;
    j["var_residual"] = vr;
    j["var_smoothed_residual"] = vsr;
    if (!condition) {
      j["status"] = "skipped";
      j["reason"] = "some (mask, minibatch) pair has f(m) <= f(m0)/2";
    } else {
      const bool pass = vsr <= vr && vr <= 0.95 * vp;
      ok = ok && pass;
      j["status"] = pass ? "pass" : "fail";
    }
    emit(j);
  }
  {
    const auto& at = rows[3].stats;
    const double v = at.variance_trace;
    const double tol = 3.0 * at.variance_trace_se;
    const bool pass = v <= rows[4].stats.variance_trace + tol &&
                      v <= rows[5].stats.variance_trace + tol;
    ok = ok && pass;
    Json j;
    j["record"] = "optimal_delta";
    j["epsilon"] = eps;
    j["var_minus"] = rows[4].stats.variance_trace;
    j["var_at"] = v;
    j["var_plus"] = rows[5].stats.variance_trace;
    j["status"] = pass ? "pass" : "fail";
    emit(j);
  }

  for (EstimatorKind kind :
       {EstimatorKind::Vanilla, EstimatorKind::Residual, EstimatorKind::SmoothedResidual}) {
    TrainConfig tc = train_config(config);
    tc.estimator = kind;
    const auto result = train(task, tc, m0, config.logits_magnitude);
    const std::size_t w = config.curve_window;
    for (std::size_t begin = 0; begin < result.records.size(); begin += w) {
      const std::size_t end = std::min(result.records.size(), begin + w);
      double sum = 0.0;
      for (std::size_t i = begin; i < end; ++i) sum += result.records[i].residual;
      Json j;
      j["record"] = "curve";
      j["estimator"] = to_string(kind);
      j["step_end"] = end;
      j["mean_residual"] = sum / static_cast<double>(end - begin);
      emit(j);
    }
  }

  ensure_dir(out_dir);
  write_file(out_dir / "variance_report.jsonl", report);
  return ok ? ExitStatus::Ok : ExitStatus::PropertyFailure;
}

ExitStatus run_c_sweep(const RunConfig& config, std::span<const double> c_values,
                       const std::filesystem::path& out_dir, const LineSink& sink) {
  validate_config(config);
  require(!c_values.empty(), ErrorKind::Config, "c-sweep: empty list of C values");
  require(config.sweep_samples >= 1, ErrorKind::Config, "config field 'sweep_samples': must be >= 1");
  const BuiltTask built = build_task(config);
  const ToyTask& task = built.task;
  const NMMask m0 = initial_mask(config, built);
  const std::size_t groups = m0.group_count();
  const auto m = static_cast<std::size_t>(config.pattern.group_size);

  std::vector<double> base_loss(task.minibatch_count());
  for (std::size_t b = 0; b < base_loss.size(); ++b) base_loss[b] = task.eval_loss(m0, b);

  std::vector<double> sorted(c_values.begin(), c_values.end());
  std::sort(sorted.begin(), sorted.end());

  std::string report;
  bool ok = true;
  double previous = -1.0;
  for (std::size_t ci = 0; ci < sorted.size(); ++ci) {
    const double c = sorted[ci];
    const GroupLogits logits = init_logits(m0, c);
    double analytic_sum = 0.0;
    for (std::size_t g = 0; g < groups; ++g) {
      analytic_sum += group_mask_prob(m0.group(g), logits.group(g), config.pattern);
    }
    const double analytic = analytic_sum / static_cast<double>(groups);

    std::uint64_t matches = 0, worse = 0, better = 0;
    for (std::size_t s = 0; s < config.sweep_samples; ++s) {
      const NMMask mask = sample_mask(logits, config.seed, s);
      for (std::size_t g = 0; g < groups; ++g) {
        if (std::equal(mask.bits().begin() + static_cast<std::ptrdiff_t>(g * m),
                       mask.bits().begin() + static_cast<std::ptrdiff_t>((g + 1) * m),
                       m0.bits().begin() + static_cast<std::ptrdiff_t>(g * m))) {
          ++matches;
        }
      }
      auto rng = RandomStream::derive(config.seed, stream_tag::kSweep, s);
      const auto b = static_cast<std::size_t>(rng.below(task.minibatch_count()));
      const double f = task.eval_loss(mask, b);
      if (f > base_loss[b]) ++worse;
      else if (f < base_loss[b]) ++better;
    }
    const double n = static_cast<double>(config.sweep_samples * groups);
    const double freq = static_cast<double>(matches) / n;
    const double se = std::sqrt(analytic * (1.0 - analytic) / n);
    const bool within = std::abs(freq - analytic) <= 3.0 * se ||
                        (se == 0.0 && freq == analytic);
    const bool monotone = freq >= previous;
    ok = ok && within && monotone;
    previous = freq;

    Json j;
    j["C"] = c;
    j["samples"] = config.sweep_samples;
    j["groups"] = groups;
    j["match_frequency"] = freq;
    j["match_probability"] = analytic;
    j["binomial_se"] = se;
    j["within_3se"] = within;
    j["non_decreasing"] = monotone;
    j["fraction_loss_above_m0"] = static_cast<double>(worse) / static_cast<double>(config.sweep_samples);
    j["fraction_loss_below_m0"] = static_cast<double>(better) / static_cast<double>(config.sweep_samples);
    const std::string line = j.dump();
    report += line;
    report += '\n';
    sink(line);
  }
  ensure_dir(out_dir);
  write_file(out_dir / "c_sweep.jsonl", report);
  return ok ? ExitStatus::Ok : ExitStatus::PropertyFailure;
}

}  // namespace nmpg
