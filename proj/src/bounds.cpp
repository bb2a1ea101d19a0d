#include "crf/bounds.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace crf {

double BoundInputs::selection_prob() const {
  return (1.0 / static_cast<double>(sparsity)) * (1.0 + xi);
}

void BoundInputs::validate() const {
  if (!(n > 0.0)) throw std::invalid_argument("n must be positive");
  if (!(leaves >= 2.0)) throw std::invalid_argument("leaf count k_n must be at least 2");
  if (sparsity < 1 || sparsity > dim) throw std::invalid_argument("need 1 <= S <= d");
  if (!(sigma >= 0.0) || !(lipschitz >= 0.0) || !(sup_bound >= 0.0)) {
    throw std::invalid_argument("sigma, L and B must be non-negative");
  }
  const double p = selection_prob();
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("p_n = (1+xi)/S must lie in (0, 1]");
}

double alpha_exponent(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in (0, 1]");
  const double a = 2.0 * std::log(1.0 - p / 2.0);
  return a / (a - std::numbers::ln2);
}

double variance_upper_bound(const BoundInputs& b) {
  b.validate();
  const double s_minus_1 = static_cast<double>(b.sparsity) - 1.0;
  const double s = static_cast<double>(b.sparsity);
  return 12.0 * b.sigma * b.sigma * (b.leaves / b.n) * std::pow(8.0 * s, s_minus_1) /
         (std::pow(1.0 + b.xi, s_minus_1) * std::sqrt(std::pow(std::log2(b.leaves), s_minus_1)));
}

double bias_upper_bound(const BoundInputs& b) {
  b.validate();
  const double s = static_cast<double>(b.sparsity);
  const double l2 = b.lipschitz * b.lipschitz;
  const double exponent = 2.0 * std::log2(1.0 - b.selection_prob() / 2.0);
  const double sup = b.square_sup_bound ? b.sup_bound * b.sup_bound : b.sup_bound;
  return s * l2 * std::pow(b.leaves, exponent + 1.0) / (b.n + 1.0) +
         s * s * l2 * std::pow(b.leaves, exponent) + sup * std::exp(-b.n / (2.0 * b.leaves));
}

double risk_upper_bound(const BoundInputs& b) { return bias_upper_bound(b) + variance_upper_bound(b); }

double optimal_leaf_count(double n, std::size_t sparsity, double lipschitz, double sigma) {
  if (!(n >= 2.0)) throw std::invalid_argument("n must be at least 2");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (sparsity < 1) throw std::invalid_argument("S must be positive");
  const double s = static_cast<double>(sparsity);
  const double alpha = alpha_exponent(1.0 / s);
  const double ratio = lipschitz / sigma;
  const double base = std::pow(s, 3.0 - s) * ratio * ratio * n *
                      std::sqrt(std::pow(std::log2(n), s - 1.0));
  return std::pow(base, 1.0 - alpha);
}

double round_to_power_of_two(double leaves) {
  if (!(leaves > 0.0)) throw std::invalid_argument("leaf count must be positive");
  return std::exp2(std::round(std::log2(leaves)));
}

ReferenceRates reference_rates(std::size_t sparsity, std::size_t dim) {
  if (sparsity < 1 || sparsity > dim) throw std::invalid_argument("need 1 <= S <= d");
  const double s = static_cast<double>(sparsity);
  const double d = static_cast<double>(dim);
  return ReferenceRates{
      alpha_exponent(1.0 / s),
      1.0 / (s * (4.0 / 3.0) * std::numbers::ln2 + 1.0),
      2.0 / (d + 2.0),
      2.0 / (s + 2.0),
      1.0 / (s * std::numbers::ln2 + 1.0),
  };
}

LowerBoundForms lower_bound_forms(const BoundInputs& b, double beta_norm, double constant) {
  b.validate();
  if (!(constant > 0.0)) throw std::invalid_argument("universal constant must be positive");
  const double s = static_cast<double>(b.sparsity);
  LowerBoundForms out;
  out.variance_floor = std::pow(constant, s - 1.0) * std::pow(s, s / 2.0) * b.sigma * b.sigma *
                       b.leaves / (b.n * std::sqrt(std::pow(std::log2(b.leaves), s - 1.0)));
  out.bias_floor = constant * beta_norm * beta_norm *
                   std::pow(b.leaves, 2.0 * std::log2(1.0 - 1.0 / (2.0 * s)));
  return out;
}

}  // namespace crf
