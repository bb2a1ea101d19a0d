#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crf/core.hpp"
#include "crf/rng.hpp"

namespace crf {

/// n observations (x_i, y_i) with x_i in [0,1)^d, stored row-major.
class Dataset {
 public:
  Dataset(std::size_t dim, std::vector<double> xs, std::vector<double> ys);

  std::size_t size() const noexcept { return ys_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> x(std::size_t i) const { return {xs_.data() + i * dim_, dim_}; }
  double y(std::size_t i) const { return ys_[i]; }
  std::span<const double> ys() const noexcept { return ys_; }
  /// Fixed-point codes of x_i, one per coordinate.
  std::span<const std::uint64_t> codes(std::size_t i) const { return {codes_.data() + i * dim_, dim_}; }

 private:
  std::size_t dim_;
  std::vector<double> xs_;
  std::vector<double> ys_;
  std::vector<std::uint64_t> codes_;
};

enum class ModelKind { SparseLinear, LipschitzTest, Constant, Indicator };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Regression function plus additive Gaussian noise, Y = f(X) + sigma * Z.
///
///   sparse-linear   f(x) = <beta, x>, beta zero off the strong set
///   lipschitz-test  f(x) = (L / sqrt(S)) * sum_{j in strong} |x_j - 1/2|
///   constant        f(x) = c
///   indicator       f(x) = 1{x_j <= 1/2 for every strong j}
struct ModelSpec {
  ModelKind kind = ModelKind::SparseLinear;
  std::size_t dim = 1;
  std::vector<std::size_t> strong{0};
  std::vector<double> beta;      // sparse-linear only, length dim
  double lipschitz_scale = 1.0;  // lipschitz-test only
  double constant = 0.0;         // constant only
  double sigma = 0.0;

  static ModelSpec sparse_linear(std::vector<double> beta, double sigma);
  static ModelSpec lipschitz_test(std::size_t dim, std::vector<std::size_t> strong, double lipschitz,
                                  double sigma);
  static ModelSpec constant_function(std::size_t dim, double value, double sigma);
  static ModelSpec indicator(std::size_t dim, std::vector<std::size_t> strong, double sigma);

  /// Throws std::invalid_argument on inconsistent fields.
  void validate() const;

  double operator()(std::span<const double> x) const;

  std::size_t sparsity() const noexcept { return strong.size(); }
  /// Lipschitz constant w.r.t. the Euclidean norm (infinite for indicator).
  double lipschitz() const;
  /// sup |f| over the unit cube.
  double sup_norm() const;
};

/// Draws n points uniformly from [0,1)^d and responses from the model.
Dataset generate_dataset(const ModelSpec& model, std::size_t n, Engine& engine);

/// Mean of y_i over training points in the leaf of x, or 0 for an empty leaf.
double tree_predict(const CenteredTree& tree, const Dataset& data, std::span<const double> x);

/// M centered trees sharing depth and selection probabilities, averaged over a
/// training set. Construction stores seeds only; see ForestIndex for the
/// precomputed leaf tables used by large simulations.
class ForestModel {
 public:
  /// Tree m uses seed derive_seed(seed, m).
  ForestModel(std::shared_ptr<const Dataset> data, SelectionProbs probs, int depth,
              std::size_t trees, std::uint64_t seed);

  std::size_t tree_count() const noexcept { return trees_.size(); }
  const CenteredTree& tree(std::size_t m) const { return trees_[m]; }
  const Dataset& data() const noexcept { return *data_; }
  int depth() const noexcept { return trees_.front().depth(); }
  const SelectionProbs& probs() const noexcept { return trees_.front().probs(); }

 private:
  std::shared_ptr<const Dataset> data_;
  std::vector<CenteredTree> trees_;
};

/// (1/M) sum_m tree_predict(tree_m, data, x).
double forest_predict(const ForestModel& model, std::span<const double> x);

/// Averaged per-observation weights (1/M) sum_m W_i(x, Theta_m).
std::vector<double> weights(const ForestModel& model, std::span<const double> x);

/// Per-tree leaf sums and counts, built once per (tree, dataset) so each query
/// costs O(D). Trees up to depth kDenseDepth use flat tables indexed by node;
/// deeper trees keep a sorted list of occupied leaves.
class ForestIndex {
 public:
  static constexpr int kDenseDepth = 20;

  explicit ForestIndex(const ForestModel& model);

  struct Prediction {
    double mean = 0.0;           // forest prediction
    double tree_variance = 0.0;  // sample variance of the per-tree predictions
  };

  double predict(std::span<const double> x) const;
  Prediction predict_with_spread(std::span<const double> x) const;
  double tree_prediction(std::size_t m, std::span<const double> x) const;

  std::size_t tree_count() const noexcept { return tables_.size(); }

 private:
  struct LeafTable;
  static double lookup(const LeafTable& table, std::span<const std::uint64_t> codes,
                       std::span<int> scratch);
  std::vector<std::uint64_t> query_codes(std::span<const double> x) const;

  std::size_t dim_;
  bool shared_ = false;
  std::vector<std::shared_ptr<const LeafTable>> tables_;
};

}  // namespace crf
