#pragma once

// Data-driven coordinate selection.
//
// At a node, a random subset of M_n coordinates is examined; for each one the
// CART-style split minimizing the weighted within-child variance is found on
// a second sample, and the split coordinate is drawn uniformly among the
// subset members attaining the smallest criterion. The empirical frequency of
// each coordinate estimates its selection probability p_j.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "crf/core.hpp"
#include "crf/forest.hpp"
#include "crf/rng.hpp"

namespace crf {

enum class SubsetDraw { WithoutReplacement, WithReplacement };

/// Relative tolerance that defines the set of minimizers.
inline constexpr double kTieTolerance = 1e-12;

/// (1/N) [sum_left (y - mean_left)^2 + sum_right (y - mean_right)^2].
/// An empty side contributes nothing. Throws if total == 0 or total is less
/// than the number of values supplied.
double empirical_delta(std::span<const double> left, std::span<const double> right,
                       std::size_t total);

struct SplitEvaluation {
  std::size_t coord = 0;
  double split = 0.0;
  double criterion = 0.0;
};

/// Best split of `node` along `coord` over midpoints between consecutive
/// distinct sample values (ties toward the smallest split). Returns nullopt
/// when fewer than two distinct coordinate values fall in the node.
std::optional<SplitEvaluation> best_split(const Dataset& data, const DyadicCell& node,
                                          std::size_t coord);

/// Draws the examined subset: M_n distinct coordinates, or M_n independent
/// draws whose distinct values form the subset.
std::vector<std::size_t> draw_subset(std::size_t dim, std::size_t subset_size, SubsetDraw draw,
                                     Engine& engine);

/// Uniform draw among the subset members whose score lies within
/// kTieTolerance (relative) of the subset minimum. Infinite scores mark
/// unsplittable coordinates; if all are infinite the draw is uniform over the
/// subset.
std::size_t pick_minimizer(std::span<const double> scores, std::span<const std::size_t> subset,
                           Engine& engine);

std::size_t select_coordinate(const Dataset& data, const DyadicCell& node, std::size_t subset_size,
                              Engine& engine, SubsetDraw draw = SubsetDraw::WithoutReplacement);

/// Root-cell selection frequencies over `trials` independent subset draws on
/// a fixed second sample.
SelectionProbs estimate_selection_probs(const Dataset& data, std::size_t subset_size,
                                        std::size_t trials, Engine& engine,
                                        SubsetDraw draw = SubsetDraw::WithoutReplacement);

struct SelectionEstimate {
  std::vector<double> frequency;
  std::vector<double> std_error;
};

/// Root-cell selection frequencies where every trial draws a fresh second
/// sample of size n from `model` (seed derive_seed(seed, trial)). This is the
/// probability over both the sample and the subset draw.
SelectionEstimate learn_selection_probs(const ModelSpec& model, std::size_t n,
                                        std::size_t subset_size, std::size_t trials,
                                        std::uint64_t seed, SubsetDraw draw, unsigned threads = 1);

/// (1/S)[1 - (1 - S/d)^{M_n}](1 + xi): the approximate selection probability
/// of a strong coordinate under with-replacement subset draws.
double approx_strong_selection_prob(std::size_t sparsity, std::size_t dim, std::size_t subset_size,
                                    double xi = 0.0);

struct AdaptiveCounts {
  std::vector<int> counts;
};

/// Adaptive tree for the noiseless linear model: at each of `depth` steps,
/// draw a subset and increment K_j for j maximizing |beta_j|^2 4^{-K_j-2}
/// (uniform among ties). Scores are compared in log2 form so very deep trees
/// do not underflow.
AdaptiveCounts adaptive_linear_tree(std::span<const double> beta, std::size_t subset_size,
                                    int depth, Engine& engine,
                                    SubsetDraw draw = SubsetDraw::WithoutReplacement);

/// K_j ~ D/S - (1/S) log2(|b_j|/|b_S|) for j < S and
/// K_S ~ D/S + (1/S) sum_{j<S} log2(|b_j|/|b_S|), for |b_1| >= ... >= |b_S| > 0.
std::vector<double> approx_split_counts(std::span<const double> beta, double depth);

}  // namespace crf
