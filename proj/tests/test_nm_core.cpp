#include <doctest.h>

#include <algorithm>
#include <set>

#include "nmpg/error.hpp"
#include "nmpg/nm_core.hpp"
#include "nmpg/rng.hpp"

using namespace nmpg;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an nmpg::Error");
  return ErrorKind::Config;
}

}  // namespace

TEST_CASE("pattern construction and parsing") {
  const auto p = SparsityPattern::parse("2:4");
  CHECK(p.n_keep == 2);
  CHECK(p.group_size == 4);
  CHECK(p.to_string() == "2:4");
  CHECK(p.group_count(64) == 16);

  CHECK(kind_of([] { SparsityPattern::make(0, 4); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { SparsityPattern::make(5, 4); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { SparsityPattern::parse("2-4"); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { SparsityPattern::parse("2:4x"); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { SparsityPattern::make(2, 4).group_count(6); }) == ErrorKind::Dimension);
  CHECK(kind_of([] { SparsityPattern::make(2, 17).require_enumerable(); }) ==
        ErrorKind::Capacity);
}

TEST_CASE("oplus examples") {
  const std::vector<double> e1{1, 0, 0, 0}, e2{0, 1, 0, 0};
  CHECK(oplus(e1, e2) == GroupVector{1, 1, 0, 0});
  const std::vector<double> a{0, 1, 1, 0};
  CHECK(oplus(a, a) == a);
  const std::vector<double> h{0.5, 0};
  CHECK(oplus(h, h) == GroupVector{0.75, 0});
  CHECK(kind_of([&] { oplus(e1, h); }) == ErrorKind::Dimension);
}

TEST_CASE("oplus is commutative and associative") {
  auto rng = RandomStream::derive(1, 99);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(6), b(6), c(6);
    for (std::size_t k = 0; k < 6; ++k) {
      a[k] = rng.uniform();
      b[k] = static_cast<double>(rng.below(2));
      c[k] = rng.uniform();
    }
    const auto ab = oplus(a, b);
    CHECK(ab == oplus(b, a));
    const auto l = oplus(ab, c), r = oplus(a, oplus(b, c));
    for (std::size_t k = 0; k < 6; ++k) CHECK(l[k] == doctest::Approx(r[k]).epsilon(1e-15));
  }
}

TEST_CASE("compose_basis") {
  const int p23[] = {1, 2};
  CHECK(compose_basis(p23, 4) == GroupVector{0, 1, 1, 0});
  const int p1[] = {0};
  CHECK(compose_basis(p1, 4) == GroupVector{1, 0, 0, 0});
  const int all[] = {0, 1, 2, 3};
  CHECK(compose_basis(all, 4) == GroupVector{1, 1, 1, 1});
  const int dup[] = {1, 1};
  CHECK(kind_of([&] { compose_basis(dup, 4); }) == ErrorKind::InvalidArgument);
  const int out_of_range[] = {4};
  CHECK(kind_of([&] { compose_basis(out_of_range, 4); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("enumerate_masks order and counts") {
  const auto m24 = enumerate_masks(SparsityPattern::make(2, 4));
  REQUIRE(m24.size() == 6);
  CHECK(m24.front() == GroupBits{0, 0, 1, 1});
  CHECK(m24.back() == GroupBits{1, 1, 0, 0});
  CHECK(std::is_sorted(m24.begin(), m24.end()));
  CHECK(std::set<GroupBits>(m24.begin(), m24.end()).size() == 6);

  CHECK(enumerate_masks(SparsityPattern::make(4, 4)) == std::vector<GroupBits>{{1, 1, 1, 1}});
  CHECK(enumerate_masks(SparsityPattern::make(4, 8)).size() == 70);
  CHECK(enumerate_masks(SparsityPattern::make(8, 16)).size() == 12870);
  CHECK(binomial(16, 8) == 12870);
}

TEST_CASE("representation holds for every pattern with M <= 8") {
  for (int m = 1; m <= 8; ++m) {
    for (int n = 1; n <= m; ++n) {
      CAPTURE(n);
      CAPTURE(m);
      CHECK(verify_representation(SparsityPattern::make(n, m)));
    }
  }
}

TEST_CASE("NMMask validation") {
  const auto p = SparsityPattern::make(2, 4);
  CHECK_NOTHROW(NMMask(p, {0, 1, 1, 0, 1, 0, 0, 1}));
  CHECK(kind_of([&] { NMMask(p, {0, 1, 1, 1, 1, 0, 0, 1}); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([&] { NMMask(p, {0, 1, 1, 0, 1, 0}); }) == ErrorKind::Dimension);
  CHECK(kind_of([&] { NMMask(p, {0, 2, 0, 0}); }) == ErrorKind::InvalidArgument);

  const auto m = NMMask::from_groups(p, {{1, 2}, {0, 3}});
  CHECK(m.bits() == std::vector<std::uint8_t>{0, 1, 1, 0, 1, 0, 0, 1});
  CHECK(m.kept_positions(1) == std::vector<int>{0, 3});
  CHECK(NMMask::all_ones(SparsityPattern::make(4, 4), 8).bits() ==
        std::vector<std::uint8_t>(8, 1));
}

TEST_CASE("mask text and packed round trips") {
  const auto p = SparsityPattern::make(2, 4);
  auto rng = RandomStream::derive(5, 1);
  std::vector<std::vector<int>> kept;
  for (int g = 0; g < 5; ++g) {
    std::vector<int> idx{0, 1, 2, 3};
    for (std::size_t i = 4; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    kept.push_back({idx[0], idx[1]});
  }
  const auto m = NMMask::from_groups(p, kept);

  const auto text = to_text(m);
  CHECK(text.rfind("NM 2 4 20\n", 0) == 0);
  CHECK(mask_from_text(text) == m);
  CHECK(unpack_bits(p, m.dim(), pack_bits(m)) == m);
  CHECK(pack_bits(m).size() == 3);
  CHECK(mask_from_packed_file(to_packed_file(m)) == m);

  CHECK(kind_of([] { mask_from_text("NM 2 4 4\n0111\n"); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { mask_from_text("XX 2 4 4\n0110\n"); }) == ErrorKind::Io);
}

TEST_CASE("packed bits are little-endian within bytes") {
  const auto p = SparsityPattern::make(1, 4);
  const NMMask m(p, {1, 0, 0, 0, 0, 0, 0, 1});
  CHECK(pack_bits(m) == std::vector<std::uint8_t>{0x81});
}
