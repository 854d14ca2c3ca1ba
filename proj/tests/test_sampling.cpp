#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include "nmpg/error.hpp"
#include "nmpg/harness.hpp"
#include "nmpg/sampling.hpp"

using namespace nmpg;

namespace {

const SparsityPattern k24 = SparsityPattern::make(2, 4);

double closed_form(double c) {
  return std::exp(2 * c) / ((std::exp(c) + 1.0) * (std::exp(c) + 2.0));
}

std::vector<double> random_logits(RandomStream& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("softmax examples") {
  const std::vector<double> zeros{0, 0, 0, 0};
  for (double p : softmax_group(zeros)) CHECK(p == doctest::Approx(0.25));

  const std::vector<double> peaked{0, 10, 10, 0};
  const auto s = softmax_group(peaked);
  const double tail = 1.0 / (2 * std::exp(10.0) + 2);
  CHECK(s[0] == doctest::Approx(tail).epsilon(1e-12));
  CHECK(s[0] == doctest::Approx(2.270e-5).epsilon(1e-3));
  CHECK(s[1] == doctest::Approx(0.5 - tail).epsilon(1e-12));

  for (double c : {-700.0, 0.0, 3.5, 800.0}) {
    const std::vector<double> pair{c, c + 1};
    const auto q = softmax_group(pair);
    CHECK(q[0] == doctest::Approx(1 / (1 + std::exp(1.0))));
  }

  const std::vector<double> bad{0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(softmax_group(bad), Error);
}

TEST_CASE("GroupLogits rejects bad shapes and values") {
  CHECK_THROWS_AS(GroupLogits(k24, {0, 0, 0}), Error);
  CHECK_THROWS_AS(GroupLogits(k24, {0, 0, std::nan(""), 0}), Error);
}

TEST_CASE("group_mask_prob examples") {
  const std::vector<double> uniform{0, 0, 0, 0};
  const GroupBits m1100{1, 1, 0, 0};
  CHECK(group_mask_prob(m1100, uniform, k24) == doctest::Approx(1.0 / 6).epsilon(1e-14));

  const std::vector<double> peaked{0, 10, 10, 0};
  const GroupBits m0110{0, 1, 1, 0};
  CHECK(std::abs(group_mask_prob(m0110, peaked, k24) - closed_form(10)) < 1e-14);
  CHECK(group_mask_prob(m0110, peaked, k24) == doctest::Approx(0.999864).epsilon(1e-6));

  const GroupBits bad{1, 1, 1, 0};
  CHECK_THROWS_AS(group_mask_prob(bad, uniform, k24), Error);

  const auto p77 = SparsityPattern::make(7, 8);
  const std::vector<double> z8(8, 0.0);
  const GroupBits seven{1, 1, 1, 1, 1, 1, 1, 0};
  try {
    group_mask_prob(seven, z8, p77);
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capacity);
  }
}

TEST_CASE("closed form for the peaked group holds across C") {
  for (double c : {0.0, 1.0, 2.5, 6.0, 10.0, 20.0}) {
    const std::vector<double> pi{0, c, c, 0};
    const GroupBits m{0, 1, 1, 0};
    CHECK(group_mask_prob(m, pi, k24) == doctest::Approx(closed_form(c)).epsilon(1e-13));
  }
}

TEST_CASE("group_mask_prob agrees with the extended-precision reference") {
  auto rng = RandomStream::derive(21, 1);
  for (auto p : {SparsityPattern::make(1, 4), SparsityPattern::make(2, 4),
                 SparsityPattern::make(3, 5), SparsityPattern::make(2, 6),
                 SparsityPattern::make(4, 8), SparsityPattern::make(6, 8)}) {
    const auto masks = enumerate_masks(p);
    for (int t = 0; t < 20; ++t) {
      const auto pi = random_logits(rng, static_cast<std::size_t>(p.group_size), 2.0);
      const auto& m = masks[rng.below(masks.size())];
      const std::vector<long double> wide(pi.begin(), pi.end());
      CHECK(group_log_prob(m, pi, p) ==
            doctest::Approx(static_cast<double>(reference_group_log_prob(m, wide))).epsilon(1e-12));
    }
  }
}

TEST_CASE("normalization over every pattern with M <= 8, N <= 4") {
  auto rng = RandomStream::derive(22, 1);
  for (int mm = 1; mm <= 8; ++mm) {
    for (int n = 1; n <= std::min(mm, 4); ++n) {
      const auto p = SparsityPattern::make(n, mm);
      const auto masks = enumerate_masks(p);
      for (int t = 0; t < 100; ++t) {
        const auto pi = random_logits(rng, static_cast<std::size_t>(mm), 0.5 + t % 5);
        double total = 0.0;
        for (const auto& m : masks) total += group_mask_prob(m, pi, p);
        CHECK(std::abs(total - 1.0) <= 1e-10);
      }
    }
  }
}

TEST_CASE("shift invariance of p and its score") {
  auto rng = RandomStream::derive(23, 1);
  const auto masks = enumerate_masks(k24);
  for (int t = 0; t < 100; ++t) {
    const auto pi = random_logits(rng, 4, 2.0);
    auto shifted = pi;
    const double c = 50.0 * rng.normal();
    for (double& x : shifted) x += c;
    const auto& m = masks[rng.below(masks.size())];
    CHECK(std::abs(group_mask_prob(m, pi, k24) - group_mask_prob(m, shifted, k24)) <= 1e-12);
    std::vector<double> g(4), gs(4);
    group_grad_log_prob(m, pi, k24, g);
    group_grad_log_prob(m, shifted, k24, gs);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(g[k] - gs[k]) <= 1e-10);
  }
}

TEST_CASE("degenerate logits follow the 0/0 := 1 convention") {
  // psi underflows to exactly 0 at the unkept positions after max subtraction.
  const std::vector<double> pi{0, 1000, 1000, 0};
  CHECK(group_mask_prob(GroupBits{0, 1, 1, 0}, pi, k24) == doctest::Approx(1.0));
  const double rare = group_mask_prob(GroupBits{1, 0, 0, 1}, pi, k24);
  CHECK(rare >= 0.0);
  CHECK(rare < 1e-300);
  const GroupLogits logits(k24, pi);
  const NMMask m(k24, {1, 0, 0, 1});
  CHECK(std::isfinite(log_prob(m, logits)));
  CHECK(log_prob(m, logits) == doctest::Approx(std::log(kProbabilityFloor)));
  for (double x : grad_log_prob(NMMask(k24, {0, 1, 1, 0}), logits)) CHECK(std::isfinite(x));
}

TEST_CASE("log_prob examples") {
  const auto p44 = SparsityPattern::make(4, 4);
  CHECK(log_prob(NMMask::all_ones(p44, 4), GroupLogits(p44, {3, -1, 2, 0})) == 0.0);

  const GroupLogits uniform8(k24, std::vector<double>(8, 0.0));
  CHECK(log_prob(NMMask(k24, {1, 1, 0, 0, 0, 1, 0, 1}), uniform8) ==
        doctest::Approx(2 * std::log(1.0 / 6)));

  const GroupLogits peaked(k24, {0, 10, 10, 0});
  CHECK(log_prob(NMMask(k24, {0, 1, 1, 0}), peaked) == doctest::Approx(-1.362e-4).epsilon(1e-3));

  CHECK_THROWS_AS(log_prob(NMMask(k24, {0, 1, 1, 0}), uniform8), Error);
}

TEST_CASE("score examples") {
  const auto p44 = SparsityPattern::make(4, 4);
  for (double g : grad_log_prob(NMMask::all_ones(p44, 4), GroupLogits(p44, {1, 2, 3, 4}))) {
    CHECK(g == 0.0);
  }

  const auto p14 = SparsityPattern::make(1, 4);
  const std::vector<double> pi{0.3, -1.0, 2.0, 0.5};
  const auto psi = softmax_group(pi);
  const auto g = grad_log_prob(NMMask(p14, {0, 0, 1, 0}), GroupLogits(p14, pi));
  for (int k = 0; k < 4; ++k) {
    CHECK(g[k] == doctest::Approx((k == 2 ? 1.0 : 0.0) - psi[k]).epsilon(1e-13));
  }
}

TEST_CASE("closed-form score matches finite differences") {
  auto rng = RandomStream::derive(24, 1);
  for (auto p : {SparsityPattern::make(1, 4), SparsityPattern::make(2, 4),
                 SparsityPattern::make(3, 4), SparsityPattern::make(2, 6),
                 SparsityPattern::make(4, 8)}) {
    const auto masks = enumerate_masks(p);
    const auto m = static_cast<std::size_t>(p.group_size);
    for (int t = 0; t < 200; ++t) {
      const GroupLogits logits(p, random_logits(rng, 2 * m, 1.0 + t % 3));
      std::vector<std::uint8_t> bits;
      for (int g = 0; g < 2; ++g) {
        const auto& pick = masks[rng.below(masks.size())];
        bits.insert(bits.end(), pick.begin(), pick.end());
      }
      const NMMask mask(p, bits);
      const auto g = grad_log_prob(mask, logits);
      const auto fd = finite_difference_score(mask, logits, 1e-5);
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double err = std::abs(g[k] - fd[k]);
        if (std::abs(g[k]) < 1e-6) {
          CHECK(err <= 1e-8);
        } else {
          CHECK(err <= 1e-5 * std::abs(g[k]));
        }
      }
    }
  }
}

TEST_CASE("score sums to zero per group and has zero mean") {
  auto rng = RandomStream::derive(25, 1);
  for (int mm = 2; mm <= 8; ++mm) {
    for (int n = 1; n <= std::min(mm, kMaxPermutationKeep); ++n) {
      const auto p = SparsityPattern::make(n, mm);
      const auto masks = enumerate_masks(p);
      const auto m = static_cast<std::size_t>(mm);
      const auto pi = random_logits(rng, m, 1.5);
      std::vector<double> mean(m, 0.0), g(m);
      for (const auto& mk : masks) {
        group_grad_log_prob(mk, pi, p, g);
        double sum = 0.0;
        for (double x : g) sum += x;
        CHECK(std::abs(sum) <= 1e-8);
        const double pr = group_mask_prob(mk, pi, p);
        for (std::size_t k = 0; k < m; ++k) mean[k] += pr * g[k];
      }
      for (double x : mean) CHECK(std::abs(x) <= 1e-10);
    }
  }
}

TEST_CASE("sample_mask") {
  SUBCASE("N = M always keeps everything") {
    const auto p44 = SparsityPattern::make(4, 4);
    const GroupLogits logits(p44, {5, -3, 0, 1, 2, 2, 2, 2});
    for (std::uint64_t s = 0; s < 50; ++s) {
      CHECK(sample_mask(logits, 3, s) == NMMask::all_ones(p44, 8));
    }
  }
  SUBCASE("deterministic per (seed, step)") {
    const GroupLogits logits(k24, {0.1, 0.2, -0.5, 1.0, 0, 0, 0, 0});
    CHECK(sample_mask(logits, 9, 4) == sample_mask(logits, 9, 4));
    int same = 0;
    for (std::uint64_t s = 0; s < 20; ++s) same += sample_mask(logits, 9, s) == sample_mask(logits, 10, s);
    CHECK(same < 20);
  }
  SUBCASE("uniform logits give uniform masks") {
    const GroupLogits logits(k24, {0, 0, 0, 0});
    std::map<std::vector<std::uint8_t>, int> counts;
    const int n = 100000;
    for (int s = 0; s < n; ++s) ++counts[sample_mask(logits, 17, static_cast<std::uint64_t>(s)).bits()];
    CHECK(counts.size() == 6);
    const double se = std::sqrt((1.0 / 6) * (5.0 / 6) / n);
    for (const auto& [bits, c] : counts) CHECK(std::abs(c / double(n) - 1.0 / 6) <= 3 * se);
  }
  SUBCASE("peaked logits match the closed form") {
    const GroupLogits logits(k24, {0, 10, 10, 0});
    const NMMask target(k24, {0, 1, 1, 0});
    const int n = 100000;
    int hits = 0;
    for (int s = 0; s < n; ++s) hits += sample_mask(logits, 18, static_cast<std::uint64_t>(s)) == target;
    const double p = closed_form(10);
    CHECK(std::abs(hits / double(n) - p) <= 3 * std::sqrt(p * (1 - p) / n));
  }
}

TEST_CASE("sample_group consumes exactly N uniforms") {
  const std::vector<double> pi{0.4, -0.2, 1.3, 0.0, 0.7};
  auto a = RandomStream::derive(1, 2);
  auto b = RandomStream::derive(1, 2);
  sample_group(pi, 3, a);
  for (int i = 0; i < 3; ++i) b.uniform();
  CHECK(a() == b());
}
