#include <doctest.h>

#include <cmath>

#include "nmpg/error.hpp"
#include "nmpg/oracle.hpp"
#include "nmpg/tasks.hpp"

using namespace nmpg;

namespace {
const SparsityPattern k24 = SparsityPattern::make(2, 4);

NMMask complement_within_groups(const NMMask& m) {
  std::vector<std::uint8_t> bits(m.bits());
  for (auto& b : bits) b = b ? 0 : 1;
  return NMMask(m.pattern(), bits);
}
}  // namespace

TEST_CASE("noiseless planted instance has a unique zero-loss mask") {
  DataOptions opts;
  opts.batch_size = 4;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto inst = make_planted_linear(8, k24, 32, 0.0, seed, opts);
    const auto& task = inst.task;
    CHECK(task.mean_loss(inst.planted_mask.bits()) == 0.0);
    for (std::size_t b = 0; b < task.minibatch_count(); ++b) {
      CHECK(task.eval_loss(inst.planted_mask, b) == 0.0);
    }
    CHECK(task.mean_loss(complement_within_groups(inst.planted_mask).bits()) > 0.0);

    // Enumerate all 36 masks.
    const GroupLogits uniform(k24, std::vector<double>(8, 0.0));
    std::size_t zero_loss = 0, visited = 0;
    for_each_mask(uniform, [&](const MaskTerm& t) {
      ++visited;
      const double f = task.mean_loss(t.bits);
      if (f < 1e-20) {
        ++zero_loss;
        CHECK(std::equal(t.bits.begin(), t.bits.end(), inst.planted_mask.bits().begin()));
      } else {
        CHECK(f > 1e-3);
      }
    });
    CHECK(visited == 36);
    CHECK(zero_loss == 1);
  }
}

TEST_CASE("planted instance with d = 12 stays identifiable") {
  const auto p = SparsityPattern::make(1, 3);
  const auto inst = make_planted_linear(12, p, 24, 0.0, 4);
  const GroupLogits uniform(p, std::vector<double>(12, 0.0));
  std::size_t zero_loss = 0;
  for_each_mask(uniform, [&](const MaskTerm& t) {
    if (inst.task.mean_loss(t.bits) < 1e-20) ++zero_loss;
  });
  CHECK(zero_loss == 1);
}

TEST_CASE("underdetermined noiseless designs are rejected") {
  CHECK_THROWS_AS(make_planted_linear(16, k24, 8, 0.0, 1), Error);
  DataOptions seq;
  seq.sequence_length = 4;
  CHECK_NOTHROW(make_planted_linear(16, k24, 4, 0.0, 1, seq));
}

TEST_CASE("eval_loss is pure and checks its inputs") {
  const auto inst = make_planted_linear(16, k24, 40, 0.2, 9);
  const auto m = magnitude_mask(inst.task.weights(), k24);
  for (std::size_t b = 0; b < inst.task.minibatch_count(); ++b) {
    CHECK(inst.task.eval_loss(m, b) == inst.task.eval_loss(m, b));
    CHECK(inst.task.eval_loss(m, b) >= 0.0);
  }
  CHECK_THROWS_AS(inst.task.eval_loss(m, inst.task.minibatch_count()), Error);
  CHECK_THROWS_AS(inst.task.eval_loss(NMMask::all_ones(k24, 8), 0), Error);
}

TEST_CASE("same seed reproduces the task exactly") {
  const auto a = make_planted_linear(16, k24, 40, 0.2, 9);
  const auto b = make_planted_linear(16, k24, 40, 0.2, 9);
  const auto c = make_planted_linear(16, k24, 40, 0.2, 10);
  CHECK(a.task.weights() == b.task.weights());
  CHECK(a.planted_mask == b.planted_mask);
  CHECK(a.task.weights() != c.task.weights());
}

TEST_CASE("minibatch layout") {
  DataOptions opts;
  opts.batch_size = 3;
  opts.sequence_length = 2;
  const auto inst = make_planted_linear(8, k24, 10, 0.1, 2, opts);
  CHECK(inst.task.sample_count() == 10);
  CHECK(inst.task.minibatch_count() == 4);  // 3 + 3 + 3 + 1 samples
}

TEST_CASE("confined losses stay in [1, 2) and keep the half-baseline condition") {
  DataOptions opts;
  opts.batch_size = 4;
  opts.confine_loss = true;
  opts.batch_offset_spread = 1.0;
  const auto inst = make_planted_linear(8, k24, 32, 0.05, 5, opts);
  const GroupLogits uniform(k24, std::vector<double>(8, 0.0));
  const auto m0 = magnitude_mask(inst.task.weights(), k24);
  for_each_mask(uniform, [&](const MaskTerm& t) {
    for (std::size_t b = 0; b < inst.task.minibatch_count(); ++b) {
      const double f = inst.task.eval_loss(t.bits, b);
      CHECK(f >= 1.0);
      CHECK(f < 2.0);
      CHECK(f > 0.5 * inst.task.eval_loss(m0, b));
    }
  });
  CHECK_THROWS_AS(make_planted_linear(8, k24, 32, 0.05, 5,
                                      DataOptions{4, 1, LossKind::SquaredError, 1.5, true, 0}),
                  Error);
}

TEST_CASE("cross-entropy loss is finite and non-negative") {
  DataOptions opts;
  opts.loss = LossKind::CrossEntropy;
  const auto inst = make_planted_linear(8, k24, 32, 0.0, 6, opts);
  const GroupLogits uniform(k24, std::vector<double>(8, 0.0));
  for_each_mask(uniform, [&](const MaskTerm& t) {
    const double f = inst.task.mean_loss(t.bits);
    CHECK(std::isfinite(f));
    CHECK(f >= 0.0);
  });
}

TEST_CASE("mlp task") {
  const auto p44 = SparsityPattern::make(4, 4);
  const auto task = make_mlp_task(16, p44, 4, 64, 3);
  for (std::size_t b = 0; b < task.minibatch_count(); ++b) {
    CHECK(task.eval_loss(NMMask::all_ones(p44, 16), b) == task.eval_dense_loss(b));
  }
  CHECK_THROWS_AS(make_mlp_task(16, k24, 0, 64, 3), Error);

  const auto sparse = make_mlp_task(16, k24, 4, 64, 3);
  const auto again = make_mlp_task(16, k24, 4, 64, 3);
  const auto m = random_mask(k24, 16, 8);
  CHECK(sparse.mean_loss(m.bits()) == again.mean_loss(m.bits()));
  CHECK(std::isfinite(sparse.mean_loss(m.bits())));
}

TEST_CASE("magnitude_mask examples") {
  const std::vector<double> w{0.1, -3, 2, 0.5};
  CHECK(magnitude_mask(w, k24).bits() == std::vector<std::uint8_t>{0, 1, 1, 0});

  const std::vector<double> flat{1, -1, 1, -1, 2, 2, -2, 2};
  CHECK(magnitude_mask(flat, k24).bits() == std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1, 0, 0});

  const auto p44 = SparsityPattern::make(4, 4);
  CHECK(magnitude_mask(w, p44).bits() == std::vector<std::uint8_t>{1, 1, 1, 1});
}

TEST_CASE("magnitude_mask is invariant to positive rescaling") {
  auto rng = RandomStream::derive(77, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> w(16), scaled(16);
    const double s = 0.01 + 100 * rng.uniform();
    for (std::size_t k = 0; k < 16; ++k) {
      w[k] = rng.normal();
      scaled[k] = s * w[k];
    }
    CHECK(magnitude_mask(w, k24) == magnitude_mask(scaled, k24));
  }
}

TEST_CASE("random_mask is valid and seeded") {
  CHECK(random_mask(k24, 64, 1) == random_mask(k24, 64, 1));
  CHECK(random_mask(k24, 64, 1) != random_mask(k24, 64, 2));
}
