#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "crf/core.hpp"
#include "crf/forest.hpp"

namespace crf {

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;  // zero for exact evaluations
};

enum class EvalMode { Exact, MonteCarlo };

/// Cap on the number of (composition, composition) pairs visited by exact
/// enumeration.
inline constexpr std::size_t kMaxEnumerationPairs = 10'000'000;

// ---------------------------------------------------------------------------
// Multinomial correlation E[2^{-(1/2) sum_j |M_j - M'_j|}]

/// Number of compositions of `trials` into `parts` non-negative parts.
double composition_count(int trials, std::size_t parts);

/// Exact value by enumerating every pair of outcomes. Throws
/// std::length_error when the pair count exceeds kMaxEnumerationPairs.
double halving_expectation_exact(int trials, std::span<const double> p);

/// Monte Carlo over `samples` independent outcome pairs.
Estimate halving_expectation_mc(int trials, std::span<const double> p, std::size_t samples,
                                std::uint64_t seed);

Estimate multinomial_halving_expectation(int trials, std::span<const double> p, EvalMode mode,
                                         std::size_t samples = 0, std::uint64_t seed = 0);

/// Two categories: E[2^{-|A - B|}] for A, B ~ Binomial(m, p1), in O(m) via
/// one-sided geometric sums. Valid for any m.
double binary_halving_expectation(int trials, double p1);

/// 8^{k-1} / sqrt(m^{k-1} p_1 ... p_{k-1} p_k^{k-1}).
double multinomial_upper_bound(int trials, std::span<const double> p);

/// C^{k-1} / sqrt(m^{k-1} p_1 ... p_k).
double multinomial_lower_form(int trials, std::span<const double> p, double constant);

struct NormalApproximation {
  double exact;
  double approx;  // 1 / (log 2 * sqrt(pi m p1 p2))
  double ratio;   // exact / approx
};

NormalApproximation normal_approx_check(int trials, double p1);

// ---------------------------------------------------------------------------
// Cell overlap of two independent trees

/// E[lambda(A(X,Theta) cap A(X,Theta'))] = 2^{-D} E[2^{-(1/2) sum |K - K'|}].
Estimate expected_overlap(const SelectionProbs& probs, int depth, EvalMode mode,
                          std::size_t samples = 0, std::uint64_t seed = 0);

/// Direct Monte Carlo: uniform X, two independent trees, geometric overlap.
Estimate tree_pair_overlap_mc(const SelectionProbs& probs, int depth, std::size_t samples,
                              std::uint64_t seed, unsigned threads = 1);

// ---------------------------------------------------------------------------
// Log-log rate fits

struct RateFit {
  double exponent = 0.0;
  double intercept = 0.0;  // natural log
  double std_error = 0.0;  // of the exponent
  double r_squared = 0.0;
  std::vector<std::pair<double, double>> points;
};

/// OLS of log(value) on log(scale). Needs >= 3 points with positive entries.
RateFit fit_rate_exponent(std::span<const std::pair<double, double>> points);

// ---------------------------------------------------------------------------
// Monte Carlo risk and its bias/variance decomposition

struct SimulationSetup {
  ModelSpec model;
  std::size_t n = 0;
  double leaves = 2.0;  // k_n; trees have depth ceil(log2 k_n)
  SelectionProbs probs = SelectionProbs::uniform(1);
  std::size_t trees = 100;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  int depth() const { return CenteredTree::depth_for_leaves(leaves); }
  void validate() const;
};

struct DecompositionOptions {
  std::size_t outer = 32;    // independent groups; standard errors are across groups
  std::size_t inner = 4;     // datasets per group, shared by the group's queries
  std::size_t queries = 64;  // query points per group
};

struct DecompositionEstimate {
  Estimate variance;           // E Var(f_M(X) | X) of the M-tree forest
  Estimate forest_noise;       // part of `variance` due to finite M: E[s^2_trees / M]
  Estimate variance_infinite;  // variance - forest_noise: the infinite-forest term
  Estimate bias_sq;            // E (E[f_M(X) | X] - f(X))^2, corrected
  Estimate bias_correction;    // mean subtracted variance / inner
  Estimate total_mse;          // direct E (f_M(X) - f(X))^2 on the same draws
  std::size_t outer = 0;
  std::size_t inner = 0;
  std::size_t queries = 0;
  std::size_t trees = 0;
};

/// Per group: Q uniform query points and `inner` independent datasets (each
/// with its own M trees). The conditional variance at each query is the
/// unbiased sample variance over datasets (the average of
/// (1/2)(f(X;D) - f(X;D'))^2 over dataset pairs); the squared bias subtracts
/// variance / inner from the squared mean error.
DecompositionEstimate mc_bias_variance(const SimulationSetup& setup,
                                       const DecompositionOptions& options);

/// E (f_M(X) - f(X))^2 over fresh datasets, trees and query points;
/// standard error across replicates.
Estimate mc_risk(const SimulationSetup& setup, std::size_t replicates, std::size_t queries);

/// E (f_M(x) - f(x))^2 at fixed points, one estimate per point.
std::vector<Estimate> pointwise_mse(const SimulationSetup& setup,
                                    std::span<const std::vector<double>> points,
                                    std::size_t replicates);

}  // namespace crf
