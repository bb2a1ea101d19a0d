#include "crf/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "crf/rng.hpp"

namespace crf {

namespace {

void require_unit_point(std::span<const double> x, std::size_t dim) {
  if (x.size() != dim) {
    throw std::invalid_argument("point has dimension " + std::to_string(x.size()) +
                                ", expected " + std::to_string(dim));
  }
}

}  // namespace

std::uint64_t fixed_point_code(double x) {
  if (!(x >= 0.0 && x < 1.0)) {
    throw std::invalid_argument("coordinate " + std::to_string(x) + " outside [0, 1)");
  }
  return static_cast<std::uint64_t>(std::ldexp(x, 64));
}

// ---------------------------------------------------------------------------
// SelectionProbs

SelectionProbs::SelectionProbs(std::vector<double> p) : p_(std::move(p)) {
  if (p_.empty()) throw std::invalid_argument("selection probabilities must be non-empty");
  double total = 0.0;
  cdf_.reserve(p_.size());
  for (std::size_t j = 0; j < p_.size(); ++j) {
    if (!(p_[j] >= 0.0) || !std::isfinite(p_[j])) {
      throw std::invalid_argument("selection probability p[" + std::to_string(j) +
                                  "] must be finite and non-negative");
    }
    total += p_[j];
    cdf_.push_back(total);
    if (p_[j] > 0.0) {
      last_positive_ = j;
      ++support_size_;
    }
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("selection probabilities sum to " + std::to_string(total) +
                                ", expected 1");
  }
}

SelectionProbs SelectionProbs::uniform(std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("dimension must be positive");
  return SelectionProbs(std::vector<double>(dim, 1.0 / static_cast<double>(dim)));
}

SelectionProbs SelectionProbs::ideal(std::size_t dim, std::span<const std::size_t> strong) {
  if (strong.empty()) throw std::invalid_argument("strong set must be non-empty");
  std::vector<double> p(dim, 0.0);
  for (std::size_t j : strong) {
    if (j >= dim) throw std::invalid_argument("strong coordinate out of range");
    if (p[j] != 0.0) throw std::invalid_argument("strong coordinates must be distinct");
    p[j] = 1.0 / static_cast<double>(strong.size());
  }
  return SelectionProbs(std::move(p));
}

std::vector<std::size_t> SelectionProbs::support() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < p_.size(); ++j)
    if (p_[j] > 0.0) out.push_back(j);
  return out;
}

std::size_t SelectionProbs::sample(double u) const noexcept {
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) return last_positive_;
  return static_cast<std::size_t>(it - cdf_.begin());
}

// ---------------------------------------------------------------------------
// DyadicCell

DyadicCell::DyadicCell(std::vector<int> counts, std::vector<std::uint64_t> prefixes)
    : counts_(std::move(counts)), prefixes_(std::move(prefixes)) {
  if (counts_.size() != prefixes_.size()) {
    throw std::invalid_argument("cell counts and prefixes differ in length");
  }
  if (counts_.empty()) throw std::invalid_argument("cell dimension must be positive");
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    if (counts_[j] < 0 || counts_[j] > kMaxTreeDepth) {
      throw std::invalid_argument("split count out of range in coordinate " + std::to_string(j));
    }
    if (prefixes_[j] >> counts_[j] != 0) {
      throw std::invalid_argument("prefix exceeds 2^K in coordinate " + std::to_string(j));
    }
  }
}

DyadicCell DyadicCell::unit(std::size_t dim) {
  return DyadicCell(std::vector<int>(dim, 0), std::vector<std::uint64_t>(dim, 0));
}

int DyadicCell::depth() const noexcept { return std::accumulate(counts_.begin(), counts_.end(), 0); }

double DyadicCell::lower(std::size_t j) const {
  return std::ldexp(static_cast<double>(prefixes_[j]), -counts_[j]);
}

double DyadicCell::upper(std::size_t j) const {
  return std::ldexp(static_cast<double>(prefixes_[j] + 1), -counts_[j]);
}

double DyadicCell::width(std::size_t j) const { return std::ldexp(1.0, -counts_[j]); }

double DyadicCell::volume() const { return std::ldexp(1.0, -depth()); }

bool DyadicCell::contains(std::span<const double> x) const {
  require_unit_point(x, dim());
  for (std::size_t j = 0; j < dim(); ++j) {
    if (!(x[j] >= 0.0 && x[j] < 1.0)) return false;
    if (leading_digits(fixed_point_code(x[j]), counts_[j]) != prefixes_[j]) return false;
  }
  return true;
}

bool DyadicCell::contains_codes(std::span<const std::uint64_t> codes) const noexcept {
  for (std::size_t j = 0; j < counts_.size(); ++j)
    if (leading_digits(codes[j], counts_[j]) != prefixes_[j]) return false;
  return true;
}

DyadicCell DyadicCell::child(std::size_t j, bool upper_half) const {
  if (j >= dim()) throw std::invalid_argument("child coordinate out of range");
  if (counts_[j] >= kMaxTreeDepth) throw PrecisionError("cell cannot be split further");
  DyadicCell out = *this;
  out.counts_[j] += 1;
  out.prefixes_[j] = 2 * prefixes_[j] + (upper_half ? 1 : 0);
  return out;
}

// ---------------------------------------------------------------------------
// CenteredTree

CenteredTree::CenteredTree(std::uint64_t seed, int depth, SelectionProbs probs)
    : seed_(seed), depth_(depth), probs_(std::move(probs)) {
  if (depth_ < 0 || depth_ > kMaxTreeDepth) {
    throw std::invalid_argument("tree depth must lie in [0, " + std::to_string(kMaxTreeDepth) +
                                "]");
  }
}

int CenteredTree::depth_for_leaves(double leaves) {
  if (!(leaves >= 1.0) || !std::isfinite(leaves)) {
    throw std::invalid_argument("leaf count must be a finite value >= 1");
  }
  int depth = 0;
  while (std::ldexp(1.0, depth) < leaves) {
    if (++depth > kMaxTreeDepth) throw std::invalid_argument("leaf count too large");
  }
  return depth;
}

std::size_t CenteredTree::split_coordinate(std::uint64_t node) const noexcept {
  return probs_.sample(to_unit(derive_seed(seed_, node)));
}

std::uint64_t route_codes(const CenteredTree& tree, std::span<const std::uint64_t> codes,
                          std::span<int> counts) {
  std::fill(counts.begin(), counts.end(), 0);
  std::uint64_t node = 0;
  for (int level = 0; level < tree.depth(); ++level) {
    const std::size_t j = tree.split_coordinate(node);
    const std::uint64_t bit = (codes[j] >> (63 - counts[j])) & 1U;
    ++counts[j];
    node = 2 * node + 1 + bit;
  }
  return node - ((std::uint64_t{1} << tree.depth()) - 1);
}

LeafAssignment route(const CenteredTree& tree, std::span<const double> x) {
  require_unit_point(x, tree.dim());
  std::vector<std::uint64_t> codes(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) codes[j] = fixed_point_code(x[j]);
  std::vector<int> counts(x.size());
  const std::uint64_t leaf = route_codes(tree, codes, counts);
  std::vector<std::uint64_t> prefixes(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) prefixes[j] = leading_digits(codes[j], counts[j]);
  return LeafAssignment{DyadicCell(std::move(counts), std::move(prefixes)), leaf};
}

// ---------------------------------------------------------------------------
// Expansions and overlaps

Interval endpoints_from_expansion(double x, int k) {
  if (k < 0) throw std::invalid_argument("digit count must be non-negative");
  if (k > kExactDigits) {
    throw PrecisionError("expansion to " + std::to_string(k) + " digits is not exact in double");
  }
  const std::uint64_t prefix = leading_digits(fixed_point_code(x), k);
  const double lower = std::ldexp(static_cast<double>(prefix), -k);
  return Interval{lower, lower + std::ldexp(1.0, -k)};
}

double overlap_volume(const DyadicCell& a, const DyadicCell& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("cells differ in dimension");
  double volume = 1.0;
  for (std::size_t j = 0; j < a.dim(); ++j) {
    const int scale = std::max(a.count(j), b.count(j));
    const int shift_a = scale - a.count(j);
    const int shift_b = scale - b.count(j);
    const std::uint64_t lo = std::max(a.prefix(j) << shift_a, b.prefix(j) << shift_b);
    const std::uint64_t hi = std::min((a.prefix(j) + 1) << shift_a, (b.prefix(j) + 1) << shift_b);
    if (hi <= lo) return 0.0;
    volume *= std::ldexp(static_cast<double>(hi - lo), -scale);
  }
  return volume;
}

namespace {

int count_discrepancy(std::span<const double> x, const CenteredTree& a, const CenteredTree& b) {
  if (a.depth() != b.depth()) throw std::invalid_argument("trees differ in depth");
  if (a.dim() != b.dim()) throw std::invalid_argument("trees differ in dimension");
  const LeafAssignment la = route(a, x);
  const LeafAssignment lb = route(b, x);
  int total = 0;
  for (std::size_t j = 0; j < a.dim(); ++j) total += std::abs(la.cell.count(j) - lb.cell.count(j));
  return total;  // always even: both count vectors sum to D
}

}  // namespace

double log2_overlap_via_counts(std::span<const double> x, const CenteredTree& a,
                               const CenteredTree& b) {
  return -static_cast<double>(a.depth()) - 0.5 * count_discrepancy(x, a, b);
}

double overlap_via_counts(std::span<const double> x, const CenteredTree& a, const CenteredTree& b) {
  const int discrepancy = count_discrepancy(x, a, b);
  return std::ldexp(1.0, -a.depth() - discrepancy / 2);
}

}  // namespace crf
