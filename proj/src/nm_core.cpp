#include "nmpg/nm_core.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <set>

#include "nmpg/error.hpp"

namespace nmpg {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

SparsityPattern SparsityPattern::make(int n_keep, int group_size) {
  require(group_size >= 1 && n_keep >= 1 && n_keep <= group_size,
          ErrorKind::InvalidArgument,
          "sparsity pattern must satisfy 1 <= N <= M, got " +
              std::to_string(n_keep) + ":" + std::to_string(group_size));
  return SparsityPattern{n_keep, group_size};
}

SparsityPattern SparsityPattern::parse(std::string_view text) {
  const auto colon = text.find(':');
  require(colon != std::string_view::npos, ErrorKind::InvalidArgument,
          "pattern must look like N:M, got '" + std::string(text) + "'");
  auto parse_int = [&](std::string_view part) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
    require(ec == std::errc{} && ptr == part.data() + part.size(),
            ErrorKind::InvalidArgument,
            "pattern must look like N:M, got '" + std::string(text) + "'");
    return value;
  };
  return make(parse_int(text.substr(0, colon)), parse_int(text.substr(colon + 1)));
}

std::string SparsityPattern::to_string() const {
  return std::to_string(n_keep) + ":" + std::to_string(group_size);
}

void SparsityPattern::require_enumerable() const {
  require(group_size <= kMaxEnumerableGroupSize, ErrorKind::Capacity,
          "group size " + std::to_string(group_size) +
              " exceeds the exact-enumeration bound of " +
              std::to_string(kMaxEnumerableGroupSize));
}

std::size_t SparsityPattern::group_count(std::size_t d) const {
  const auto m = static_cast<std::size_t>(group_size);
  require(d > 0 && d % m == 0, ErrorKind::Dimension,
          "dimension " + std::to_string(d) + " is not a positive multiple of M=" +
              std::to_string(group_size));
  return d / m;
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t result = 1;
  for (int i = 1; i <= k; ++i) {
    result = result * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  }
  return result;
}

GroupVector oplus(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::Dimension,
          "oplus operands differ in length: " + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()));
  GroupVector out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    out[k] = 1.0 - (1.0 - a[k]) * (1.0 - b[k]);
  }
  return out;
}

GroupVector compose_basis(std::span<const int> positions, int group_size) {
  require(group_size >= 1, ErrorKind::InvalidArgument, "group size must be positive");
  std::vector<bool> seen(static_cast<std::size_t>(group_size), false);
  GroupVector acc(static_cast<std::size_t>(group_size), 0.0);
  for (int pos : positions) {
    require(pos >= 0 && pos < group_size, ErrorKind::InvalidArgument,
            "basis position " + std::to_string(pos) + " outside [0, " +
                std::to_string(group_size) + ")");
    require(!seen[static_cast<std::size_t>(pos)], ErrorKind::InvalidArgument,
            "duplicate basis position " + std::to_string(pos));
    seen[static_cast<std::size_t>(pos)] = true;
    GroupVector basis(static_cast<std::size_t>(group_size), 0.0);
    basis[static_cast<std::size_t>(pos)] = 1.0;
    acc = oplus(acc, basis);
  }
  return acc;
}

std::vector<GroupBits> enumerate_masks(SparsityPattern pattern) {
  pattern.require_enumerable();
  const auto m = static_cast<std::size_t>(pattern.group_size);
  const auto n = static_cast<std::size_t>(pattern.n_keep);

  // Lexicographic order on bit vectors: the smallest has its ones at the end,
  // and std::next_permutation walks the multiset {0^(M-N), 1^N} ascending.
  GroupBits bits(m, 0);
  std::fill(bits.end() - static_cast<std::ptrdiff_t>(n), bits.end(), std::uint8_t{1});
  std::vector<GroupBits> out;
  out.reserve(binomial(pattern.group_size, pattern.n_keep));
  do {
    out.push_back(bits);
  } while (std::next_permutation(bits.begin(), bits.end()));
  return out;
}

bool verify_representation(SparsityPattern pattern) {
  pattern.require_enumerable();
  const int m = pattern.group_size;
  const int n = pattern.n_keep;

  std::uint64_t ordered = 1;
  for (int i = 0; i < n; ++i) ordered *= static_cast<std::uint64_t>(m - i);
  require(ordered <= kMaxOrderedSelections, ErrorKind::Capacity,
          "pattern " + pattern.to_string() + " has " + std::to_string(ordered) +
              " ordered selections, above the verification bound");

  std::set<GroupBits> composed;
  std::vector<int> chosen;
  std::vector<bool> used(static_cast<std::size_t>(m), false);
  bool well_formed = true;

  // Depth-first walk over all ordered selections of N distinct basis vectors.
  auto walk = [&](auto&& self, GroupVector acc) -> void {
    if (static_cast<int>(chosen.size()) == n) {
      GroupBits bits(acc.size());
      for (std::size_t k = 0; k < acc.size(); ++k) {
        if (acc[k] != 0.0 && acc[k] != 1.0) well_formed = false;
        bits[k] = acc[k] == 1.0 ? 1 : 0;
      }
      composed.insert(std::move(bits));
      return;
    }
    for (int j = 0; j < m; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      used[static_cast<std::size_t>(j)] = true;
      chosen.push_back(j);
      GroupVector basis(static_cast<std::size_t>(m), 0.0);
      basis[static_cast<std::size_t>(j)] = 1.0;
      self(self, oplus(acc, basis));
      chosen.pop_back();
      used[static_cast<std::size_t>(j)] = false;
    }
  };
  walk(walk, GroupVector(static_cast<std::size_t>(m), 0.0));

  const auto enumerated = enumerate_masks(pattern);
  const std::set<GroupBits> expected(enumerated.begin(), enumerated.end());
  return well_formed && composed == expected;
}

bool is_valid_group(std::span<const std::uint8_t> group, SparsityPattern pattern) {
  if (group.size() != static_cast<std::size_t>(pattern.group_size)) return false;
  int ones = 0;
  for (auto b : group) {
    if (b > 1) return false;
    ones += b;
  }
  return ones == pattern.n_keep;
}

NMMask::NMMask(SparsityPattern pattern, std::vector<std::uint8_t> bits)
    : pattern_(SparsityPattern::make(pattern.n_keep, pattern.group_size)),
      bits_(std::move(bits)) {
  const std::size_t groups = pattern_.group_count(bits_.size());
  for (std::size_t i = 0; i < groups; ++i) {
    require(is_valid_group(group(i), pattern_), ErrorKind::InvalidArgument,
            "group " + std::to_string(i) + " does not keep exactly " +
                std::to_string(pattern_.n_keep) + " of " +
                std::to_string(pattern_.group_size) + " entries");
  }
}

NMMask NMMask::from_groups(SparsityPattern pattern,
                           const std::vector<std::vector<int>>& kept) {
  const auto m = static_cast<std::size_t>(pattern.group_size);
  std::vector<std::uint8_t> bits(kept.size() * m, 0);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (int pos : kept[i]) {
      require(pos >= 0 && pos < pattern.group_size, ErrorKind::InvalidArgument,
              "kept position out of range");
      bits[i * m + static_cast<std::size_t>(pos)] = 1;
    }
  }
  return NMMask(pattern, std::move(bits));
}

NMMask NMMask::all_ones(SparsityPattern pattern, std::size_t d) {
  require(pattern.n_keep == pattern.group_size, ErrorKind::InvalidArgument,
          "all-ones mask requires N == M");
  return NMMask(pattern, std::vector<std::uint8_t>(d, 1));
}

std::span<const std::uint8_t> NMMask::group(std::size_t i) const {
  const auto m = static_cast<std::size_t>(pattern_.group_size);
  return std::span<const std::uint8_t>(bits_).subspan(i * m, m);
}

std::vector<int> NMMask::kept_positions(std::size_t i) const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(pattern_.n_keep));
  const auto g = group(i);
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (g[k]) out.push_back(static_cast<int>(k));
  }
  return out;
}

}  // namespace nmpg
