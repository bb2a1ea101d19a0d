#pragma once

// Closed-form rates and bounds for centered random forests.
// `log` is natural, `log2` is base 2; both appear exactly where the formulas
// use them. Leaf counts are the continuous k_n, not 2^ceil(log2 k_n).

#include <cstddef>

namespace crf {

struct BoundInputs {
  double n = 0.0;
  double leaves = 2.0;  // k_n
  std::size_t sparsity = 1;
  std::size_t dim = 1;
  double sigma = 0.0;
  double lipschitz = 0.0;
  double sup_bound = 0.0;  // B
  double xi = 0.0;
  /// Use B^2 rather than B in the empty-cell term.
  bool square_sup_bound = false;

  /// (1/S)(1 + xi).
  double selection_prob() const;
  /// Throws std::invalid_argument when an invariant fails.
  void validate() const;
};

/// 2 log(1 - p/2) / (2 log(1 - p/2) - log 2), for p in (0, 1].
double alpha_exponent(double p);

/// 12 sigma^2 (k/n) (8S)^{S-1} / ((1+xi)^{S-1} sqrt(log2^{S-1} k)).
double variance_upper_bound(const BoundInputs& b);

/// S L^2 k^{2 log2(1-p/2)+1}/(n+1) + S^2 L^2 k^{2 log2(1-p/2)} + B e^{-n/(2k)}.
double bias_upper_bound(const BoundInputs& b);

/// bias_upper_bound + variance_upper_bound.
double risk_upper_bound(const BoundInputs& b);

/// (S^{3-S} (L/sigma)^2 n sqrt(log2^{S-1} n))^{1 - alpha_S} with alpha_S at p = 1/S.
double optimal_leaf_count(double n, std::size_t sparsity, double lipschitz, double sigma);

/// Nearest power of two to k on a log scale (ties round up).
double round_to_power_of_two(double leaves);

struct ReferenceRates {
  double alpha_new;   // alpha_S at p = 1/S
  double alpha_biau;  // 1 / (S (4/3) log 2 + 1)
  double minimax_d;   // 2 / (d + 2)
  double minimax_s;   // 2 / (S + 2)
  double approx_new;  // 1 / (S log 2 + 1)
};

ReferenceRates reference_rates(std::size_t sparsity, std::size_t dim);

struct LowerBoundForms {
  double variance_floor;  // C^{S-1} S^{S/2} sigma^2 k / (n sqrt(log2^{S-1} k))
  double bias_floor;      // C ||beta||_S^2 k^{2 log2(1 - 1/(2S))}
};

/// Lower-bound shapes with the unknown universal constant C supplied by the
/// caller; only their scaling in k and n is meaningful.
LowerBoundForms lower_bound_forms(const BoundInputs& b, double beta_norm, double constant);

}  // namespace crf
