#pragma once

// Dyadic geometry for centered trees.
//
// A centered tree of depth D splits, at every node, one coordinate chosen at
// random with probabilities p at the midpoint of the node's box. Cells are
// therefore dyadic boxes prod_j [a_j, a_j + 2^-K_j) with sum_j K_j = D, and
// the box containing x is fully described by the split counts K_j and the
// leading K_j binary digits of each x_j.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace crf {

/// Deepest supported centered tree; per-coordinate digits come from a 64-bit
/// fixed-point code and breadth-first node indices must fit in 64 bits.
inline constexpr int kMaxTreeDepth = 63;

/// Split counts up to this value give endpoints that are exact doubles.
inline constexpr int kExactDigits = 53;

/// Raised when a requested binary expansion exceeds double precision.
class PrecisionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// floor(x * 2^64) for x in [0, 1): the first 64 binary digits of x, most
/// significant first. Throws std::invalid_argument outside [0, 1).
std::uint64_t fixed_point_code(double x);

/// The leading `digits` binary digits of a fixed-point code as an integer.
constexpr std::uint64_t leading_digits(std::uint64_t code, int digits) noexcept {
  return digits == 0 ? 0 : code >> (64 - digits);
}

class SelectionProbs {
 public:
  /// Validates p_j >= 0 and |sum p - 1| <= 1e-12.
  explicit SelectionProbs(std::vector<double> p);

  static SelectionProbs uniform(std::size_t dim);
  /// 1/S on the strong coordinates and 0 elsewhere.
  static SelectionProbs ideal(std::size_t dim, std::span<const std::size_t> strong);

  std::size_t dim() const noexcept { return p_.size(); }
  double operator[](std::size_t j) const { return p_[j]; }
  std::span<const double> values() const noexcept { return p_; }

  /// Coordinates with positive probability, in increasing order.
  std::vector<std::size_t> support() const;
  /// True when a single coordinate carries all the mass, so every tree
  /// built from these probabilities is the same partition.
  bool is_deterministic() const noexcept { return support_size_ == 1; }

  /// Inverse-CDF draw from u in [0, 1); never returns a zero-probability
  /// coordinate.
  std::size_t sample(double u) const noexcept;

  friend bool operator==(const SelectionProbs&, const SelectionProbs&) = default;

 private:
  std::vector<double> p_;
  std::vector<double> cdf_;
  std::size_t last_positive_ = 0;
  std::size_t support_size_ = 0;
};

/// A product of half-open dyadic intervals [prefix_j 2^-K_j, (prefix_j+1) 2^-K_j).
class DyadicCell {
 public:
  DyadicCell() = default;
  /// Validates equal lengths, 0 <= K_j <= kMaxTreeDepth and prefix_j < 2^K_j.
  DyadicCell(std::vector<int> counts, std::vector<std::uint64_t> prefixes);

  static DyadicCell unit(std::size_t dim);

  std::size_t dim() const noexcept { return counts_.size(); }
  std::span<const int> counts() const noexcept { return counts_; }
  std::span<const std::uint64_t> prefixes() const noexcept { return prefixes_; }
  int count(std::size_t j) const { return counts_[j]; }
  std::uint64_t prefix(std::size_t j) const { return prefixes_[j]; }

  /// Total number of splits, sum_j K_j.
  int depth() const noexcept;

  // Endpoints are exact for K_j <= kExactDigits.
  double lower(std::size_t j) const;
  double upper(std::size_t j) const;
  double width(std::size_t j) const;
  /// 2^-sum K_j.
  double volume() const;

  bool contains(std::span<const double> x) const;
  /// Membership test on precomputed fixed-point codes (one per coordinate).
  bool contains_codes(std::span<const std::uint64_t> codes) const noexcept;

  /// The two children of a split along coordinate j.
  DyadicCell child(std::size_t j, bool upper_half) const;

  friend bool operator==(const DyadicCell&, const DyadicCell&) = default;

 private:
  std::vector<int> counts_;
  std::vector<std::uint64_t> prefixes_;
};

struct LeafAssignment {
  DyadicCell cell;
  /// Breadth-first index of the leaf among the 2^D leaves, in [0, 2^D).
  std::uint64_t leaf = 0;

  std::span<const int> counts() const noexcept { return cell.counts(); }
};

/// A lazily realized centered tree. The coordinate split at a node is a pure
/// function of (seed, breadth-first node index), so nothing is materialized
/// and two routings of the same tree always agree.
class CenteredTree {
 public:
  CenteredTree(std::uint64_t seed, int depth, SelectionProbs probs);

  /// ceil(log2 k) for a requested leaf count k >= 1, computed exactly.
  static int depth_for_leaves(double leaves);

  std::uint64_t seed() const noexcept { return seed_; }
  int depth() const noexcept { return depth_; }
  std::size_t dim() const noexcept { return probs_.dim(); }
  const SelectionProbs& probs() const noexcept { return probs_; }

  /// Coordinate split at node `node` (root is 0, children of i are 2i+1, 2i+2).
  std::size_t split_coordinate(std::uint64_t node) const noexcept;

 private:
  std::uint64_t seed_;
  int depth_;
  SelectionProbs probs_;
};

/// The leaf of `tree` containing x. Requires x in [0,1)^d.
LeafAssignment route(const CenteredTree& tree, std::span<const double> x);

/// Leaf reached by a point given as fixed-point codes; fills `counts` (size d).
std::uint64_t route_codes(const CenteredTree& tree, std::span<const std::uint64_t> codes,
                          std::span<int> counts);

/// Left/right endpoints of the dyadic interval of length 2^-k containing x,
/// i.e. the binary expansion of x stopped after k digits.
struct Interval {
  double lower;
  double upper;
};
Interval endpoints_from_expansion(double x, int k);

/// Lebesgue measure of the intersection of two cells, computed geometrically
/// from the endpoints (integer arithmetic at a common dyadic scale).
double overlap_volume(const DyadicCell& a, const DyadicCell& b);

/// 2^{-D - (1/2) sum_j |K_j - K'_j|} from the split counts of the cells that
/// contain x in the two trees.
double overlap_via_counts(std::span<const double> x, const CenteredTree& a, const CenteredTree& b);

/// Same quantity as a base-2 logarithm, usable when the volume would underflow.
double log2_overlap_via_counts(std::span<const double> x, const CenteredTree& a,
                               const CenteredTree& b);

}  // namespace crf
