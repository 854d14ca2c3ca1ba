#include <doctest.h>

#include <cmath>
#include <numeric>

#include "nmpg/error.hpp"
#include "nmpg/harness.hpp"
#include "nmpg/oracle.hpp"

using namespace nmpg;

namespace {
const SparsityPattern k24 = SparsityPattern::make(2, 4);

// Linear task with one minibatch per coordinate: input 2 e_k, target 2 w_k,
// so the mean loss over minibatches is |m * w - w|^2.
ToyTask reconstruction_task(const std::vector<double>& w, SparsityPattern p) {
  const std::size_t d = w.size();
  ToyTask::Model model;
  model.input_dim = d;
  model.first_layer = w;
  std::vector<double> inputs(d * d, 0.0), targets(d);
  for (std::size_t k = 0; k < d; ++k) {
    inputs[k * d + k] = 2.0;
    targets[k] = 2.0 * w[k];
  }
  DataOptions opts;
  opts.batch_size = 1;
  return ToyTask(p, model, inputs, targets, opts, 0);
}

// Zero weights and constant targets c: every mask has loss c^2.
ToyTask constant_task(std::size_t d, SparsityPattern p, double c) {
  ToyTask::Model model;
  model.input_dim = d;
  model.first_layer.assign(d, 0.0);
  std::vector<double> inputs(4 * d, 1.0), targets(4, c);
  DataOptions opts;
  opts.batch_size = 2;
  return ToyTask(p, model, inputs, targets, opts, 0);
}

GroupLogits normal_logits(SparsityPattern p, std::size_t d, std::uint64_t seed) {
  auto rng = RandomStream::derive(seed, 5);
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  return GroupLogits(p, v);
}
}  // namespace

TEST_CASE("total probability is one") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    CHECK(total_probability(normal_logits(k24, 8, s)) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(total_probability(normal_logits(SparsityPattern::make(2, 6), 12, 1)) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("for_each_mask visits the product space in order") {
  const auto logits = normal_logits(k24, 8, 3);
  std::size_t count = 0;
  double total = 0.0;
  for_each_mask(logits, [&](const MaskTerm& t) {
    ++count;
    total += t.probability;
    CHECK(t.probability == doctest::Approx(std::exp(log_prob(NMMask(k24, {t.bits.begin(), t.bits.end()}), logits))));
  });
  CHECK(count == 36);
  CHECK(total == doctest::Approx(1.0));
  CHECK(full_mask_count(k24, 8) == 36);
  CHECK_THROWS_AS(full_mask_count(k24, 64), Error);
}

TEST_CASE("exact objective on the reconstruction example") {
  const auto task = reconstruction_task({1, 0, 0, 1}, k24);
  const GroupLogits uniform(k24, {0, 0, 0, 0});
  CHECK(exact_phi(uniform, task).value == doctest::Approx(1.0));

  // Point-mass logits concentrate on m0.
  const NMMask m0(k24, {1, 0, 0, 1});
  const auto sharp = init_logits(m0, 40.0);
  CHECK(exact_phi(sharp, task).value == doctest::Approx(task.mean_loss(m0.bits())).epsilon(1e-9));
  const NMMask other(k24, {0, 1, 1, 0});
  CHECK(exact_phi(init_logits(other, 40.0), task).value == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("constant loss") {
  const auto task = constant_task(8, k24, 1.5);
  const auto logits = normal_logits(k24, 8, 4);
  const auto obj = exact_grad_phi(logits, task);
  CHECK(obj.value == doctest::Approx(2.25));
  for (double g : obj.gradient) CHECK(std::abs(g) < 1e-12);

  const NMMask m0 = magnitude_mask(logits.values(), k24);
  CHECK(optimal_delta(logits, task, m0) == doctest::Approx(0.0));

  const auto residual = estimator_stats(EstimatorKind::Residual, logits, task, m0, 0.0, 500, 1);
  CHECK(residual.variance_trace == 0.0);
  const auto vanilla = estimator_stats(EstimatorKind::Vanilla, logits, task, m0, 0.0, 500, 1);
  CHECK(vanilla.variance_trace > 0.0);
  CHECK(max_standardized_error(residual, obj.gradient) == 0.0);
}

TEST_CASE("exact gradient matches finite differences of the exact objective") {
  const auto inst = make_planted_linear(8, k24, 16, 0.1, 12);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto logits = normal_logits(k24, 8, 20 + s);
    const auto grad = exact_grad_phi(logits, inst.task).gradient;
    const double h = 1e-5;
    for (std::size_t k = 0; k < 8; ++k) {
      auto plus = logits.values(), minus = logits.values();
      plus[k] += h;
      minus[k] -= h;
      const double fd = (exact_phi(GroupLogits(k24, plus), inst.task).value -
                         exact_phi(GroupLogits(k24, minus), inst.task).value) /
                        (2 * h);
      CHECK(grad[k] == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
    }
  }
}

TEST_CASE("N = M has a single mask and zero gradient") {
  const auto p44 = SparsityPattern::make(4, 4);
  const auto inst = make_planted_linear(8, p44, 16, 0.1, 3);
  const auto logits = normal_logits(p44, 8, 1);
  const auto obj = exact_grad_phi(logits, inst.task);
  CHECK(obj.value == doctest::Approx(inst.task.mean_loss(NMMask::all_ones(p44, 8).bits())));
  for (double g : obj.gradient) CHECK(g == 0.0);
}

TEST_CASE("capacity limit is reported") {
  const auto inst = make_planted_linear(64, k24, 128, 0.1, 3);
  const GroupLogits logits(k24, std::vector<double>(64, 0.0));
  try {
    exact_phi(logits, inst.task);
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capacity);
  }
}

TEST_CASE("optimal delta is the score-weighted mean residual") {
  const auto inst = make_planted_linear(8, k24, 16, 0.1, 5);
  const auto logits = normal_logits(k24, 8, 6);
  const NMMask m0 = magnitude_mask(inst.task.weights(), k24);
  const double base = inst.task.mean_loss(m0.bits());
  double num = 0.0, den = 0.0;
  for_each_mask(logits, [&](const MaskTerm& t) {
    const double s2 = std::inner_product(t.score.begin(), t.score.end(), t.score.begin(), 0.0);
    num += t.probability * s2 * (inst.task.mean_loss(t.bits) - base);
    den += t.probability * s2;
  });
  CHECK(optimal_delta(logits, inst.task, m0) == doctest::Approx(num / den));

  // Smoothed residual at delta* has a trace no larger than nearby deltas.
  const double ds = optimal_delta(logits, inst.task, m0);
  const auto at = estimator_stats(EstimatorKind::SmoothedResidual, logits, inst.task, m0, ds,
                                  20000, 9);
  for (double off : {-0.2, 0.2}) {
    const auto near = estimator_stats(EstimatorKind::SmoothedResidual, logits, inst.task, m0,
                                      ds + off, 20000, 9);
    CHECK(at.variance_trace <= near.variance_trace);
  }
}

TEST_CASE("estimator statistics are reproducible and unbiased") {
  const auto inst = make_planted_linear(8, k24, 16, 0.1, 5);
  const auto logits = normal_logits(k24, 8, 7);
  const NMMask m0 = magnitude_mask(inst.task.weights(), k24);
  const auto exact = exact_grad_phi(logits, inst.task).gradient;

  for (auto kind : {EstimatorKind::Vanilla, EstimatorKind::Residual,
                    EstimatorKind::SmoothedResidual}) {
    const auto a = estimator_stats(kind, logits, inst.task, m0, 0.01, 20000, 3);
    const auto b = estimator_stats(kind, logits, inst.task, m0, 0.01, 20000, 3);
    CHECK(a.mean == b.mean);
    CHECK(a.variance_trace == b.variance_trace);
    CHECK(max_standardized_error(a, exact) < 4.5);
  }

  // Serial recomputation of the first coordinate's mean.
  const auto st = estimator_stats(EstimatorKind::Residual, logits, inst.task, m0, 0.0, 64, 11);
  double sum = 0.0;
  for (std::size_t s = 0; s < 64; ++s) {
    const NMMask mask = sample_mask(logits, 11, s);
    auto rng = RandomStream::derive(11, stream_tag::kEstimatorStats, s);
    const auto b = static_cast<std::size_t>(rng.below(inst.task.minibatch_count()));
    const double r = inst.task.eval_loss(mask, b) - inst.task.eval_loss(m0, b);
    sum += r * grad_log_prob(mask, logits)[0];
  }
  CHECK(st.mean[0] == doctest::Approx(sum / 64).epsilon(1e-12));
}

TEST_CASE("converged tracker is deterministic") {
  const auto inst = make_planted_linear(8, k24, 16, 0.1, 5);
  const auto logits = normal_logits(k24, 8, 7);
  const NMMask m0 = magnitude_mask(inst.task.weights(), k24);
  const double a = converged_tracker_delta(logits, inst.task, m0, 0.99, 2000, 4);
  CHECK(a == converged_tracker_delta(logits, inst.task, m0, 0.99, 2000, 4));
  CHECK(converged_tracker_delta(logits, inst.task, m0, 0.99, 0, 4) == 0.0);
}

TEST_CASE("oracle instances") {
  for (const char* id : {"unbiased-d8-v1", "confined-d8-v1"}) {
    const auto config = oracle_config(id);
    const auto built = build_task(config);
    const auto m0 = initial_mask(config, built);
    const auto cases = oracle_logits_cases(config, m0);
    REQUIRE(cases.size() == 3);
    CHECK(cases[0].id == "zeros");
    CHECK(cases[1].logits == init_logits(m0, 1.5));
    CHECK(full_mask_count(config.pattern, config.dim) == 36);
  }
  CHECK_THROWS_AS(oracle_config("unknown"), Error);
}
