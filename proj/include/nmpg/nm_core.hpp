#pragma once

// Mask-space algebra for (N:M) semi-structured sparsity.
//
// A weight vector of length d is split into d/M contiguous, non-overlapping
// groups in storage order. A valid mask keeps exactly N entries per group.
// Positions inside a group are 0-based throughout the C++ API.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nmpg {

/// Largest group size for which masks or permutations are enumerated.
inline constexpr int kMaxEnumerableGroupSize = 16;

/// Upper bound on ordered selections visited by verify_representation.
inline constexpr std::uint64_t kMaxOrderedSelections = 50'000'000;

struct SparsityPattern {
  int n_keep = 0;      // N
  int group_size = 0;  // M

  /// Throws InvalidArgument unless 1 <= N <= M.
  static SparsityPattern make(int n_keep, int group_size);

  /// Parses "N:M".
  static SparsityPattern parse(std::string_view text);

  std::string to_string() const;

  /// Throws Capacity when M exceeds kMaxEnumerableGroupSize.
  void require_enumerable() const;

  /// Number of groups for a flat vector of length d; throws Dimension when d
  /// is not a positive multiple of M.
  std::size_t group_count(std::size_t d) const;

  friend bool operator==(const SparsityPattern&, const SparsityPattern&) = default;
};

using GroupVector = std::vector<double>;
using GroupBits = std::vector<std::uint8_t>;

std::uint64_t binomial(int n, int k);

/// Coordinate-wise probabilistic sum 1 - (1 - a) * (1 - b).
GroupVector oplus(std::span<const double> a, std::span<const double> b);

/// Indicator of `positions` built as the probabilistic sum of basis vectors.
GroupVector compose_basis(std::span<const int> positions, int group_size);

/// All C(M, N) binary vectors with exactly N ones, lexicographic ascending.
std::vector<GroupBits> enumerate_masks(SparsityPattern pattern);

/// True iff the set of probabilistic sums over every ordered selection of N
/// distinct basis vectors equals the enumerated mask set.
bool verify_representation(SparsityPattern pattern);

/// Binary mask of length d with exactly N ones in each group of M.
class NMMask {
 public:
  NMMask(SparsityPattern pattern, std::vector<std::uint8_t> bits);

  /// Mask built from per-group kept positions (each list of size N).
  static NMMask from_groups(SparsityPattern pattern,
                            const std::vector<std::vector<int>>& kept);

  static NMMask all_ones(SparsityPattern pattern, std::size_t d);

  const SparsityPattern& pattern() const noexcept { return pattern_; }
  std::size_t dim() const noexcept { return bits_.size(); }
  std::size_t group_count() const noexcept {
    return bits_.size() / static_cast<std::size_t>(pattern_.group_size);
  }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  std::span<const std::uint8_t> group(std::size_t i) const;

  /// Kept positions of group i in increasing order.
  std::vector<int> kept_positions(std::size_t i) const;

  friend bool operator==(const NMMask&, const NMMask&) = default;

 private:
  SparsityPattern pattern_;
  std::vector<std::uint8_t> bits_;
};

/// Checks that a single group has exactly N ones and only 0/1 entries.
bool is_valid_group(std::span<const std::uint8_t> group, SparsityPattern pattern);

// Serialization. Text form: "NM <N> <M> <d>" then d/M lines of M chars.
// Packed form: bit i of the stream is weight i, bit (i % 8) of byte i / 8.
// Packed file form: text line "NMB <N> <M> <d>" followed by the packed bytes.
std::string to_text(const NMMask& mask);
NMMask mask_from_text(std::string_view text);
std::vector<std::uint8_t> pack_bits(const NMMask& mask);
NMMask unpack_bits(SparsityPattern pattern, std::size_t d,
                   std::span<const std::uint8_t> packed);
std::string to_packed_file(const NMMask& mask);
NMMask mask_from_packed_file(std::string_view bytes);

}  // namespace nmpg
