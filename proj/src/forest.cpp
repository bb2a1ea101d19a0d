#include "crf/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "crf/parallel.hpp"

namespace crf {

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::size_t dim, std::vector<double> xs, std::vector<double> ys)
    : dim_(dim), xs_(std::move(xs)), ys_(std::move(ys)) {
  if (dim_ == 0) throw std::invalid_argument("dataset dimension must be positive");
  if (ys_.empty()) throw std::invalid_argument("dataset must contain at least one observation");
  if (xs_.size() != ys_.size() * dim_) {
    throw std::invalid_argument("dataset has " + std::to_string(xs_.size()) + " coordinates for " +
                                std::to_string(ys_.size()) + " responses in dimension " +
                                std::to_string(dim_));
  }
  for (double y : ys_)
    if (!std::isfinite(y)) throw std::invalid_argument("responses must be finite");
  codes_.resize(xs_.size());
  std::transform(xs_.begin(), xs_.end(), codes_.begin(), fixed_point_code);
}

// ---------------------------------------------------------------------------
// ModelSpec

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::SparseLinear: return "sparse-linear";
    case ModelKind::LipschitzTest: return "lipschitz-test";
    case ModelKind::Constant: return "constant";
    case ModelKind::Indicator: return "indicator";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "sparse-linear") return ModelKind::SparseLinear;
  if (name == "lipschitz-test") return ModelKind::LipschitzTest;
  if (name == "constant") return ModelKind::Constant;
  if (name == "indicator") return ModelKind::Indicator;
  throw std::invalid_argument("unknown model kind '" + name +
                              "' (expected sparse-linear, lipschitz-test, constant or indicator)");
}

ModelSpec ModelSpec::sparse_linear(std::vector<double> beta, double sigma) {
  ModelSpec spec;
  spec.kind = ModelKind::SparseLinear;
  spec.dim = beta.size();
  spec.strong.clear();
  for (std::size_t j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) spec.strong.push_back(j);
  spec.beta = std::move(beta);
  spec.sigma = sigma;
  spec.validate();
  return spec;
}

ModelSpec ModelSpec::lipschitz_test(std::size_t dim, std::vector<std::size_t> strong,
                                    double lipschitz, double sigma) {
  ModelSpec spec;
  spec.kind = ModelKind::LipschitzTest;
  spec.dim = dim;
  spec.strong = std::move(strong);
  spec.lipschitz_scale = lipschitz;
  spec.sigma = sigma;
  spec.validate();
  return spec;
}

ModelSpec ModelSpec::constant_function(std::size_t dim, double value, double sigma) {
  ModelSpec spec;
  spec.kind = ModelKind::Constant;
  spec.dim = dim;
  spec.strong.resize(dim);
  std::iota(spec.strong.begin(), spec.strong.end(), std::size_t{0});
  spec.constant = value;
  spec.sigma = sigma;
  spec.validate();
  return spec;
}

ModelSpec ModelSpec::indicator(std::size_t dim, std::vector<std::size_t> strong, double sigma) {
  ModelSpec spec;
  spec.kind = ModelKind::Indicator;
  spec.dim = dim;
  spec.strong = std::move(strong);
  spec.sigma = sigma;
  spec.validate();
  return spec;
}

void ModelSpec::validate() const {
  if (dim == 0) throw std::invalid_argument("model dimension must be positive");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("noise sigma must be finite and non-negative");
  }
  if (kind != ModelKind::Constant && strong.empty()) {
    throw std::invalid_argument("strong set must be non-empty");
  }
  std::vector<bool> seen(dim, false);
  for (std::size_t j : strong) {
    if (j >= dim) throw std::invalid_argument("strong coordinate " + std::to_string(j) + " >= dim");
    if (seen[j]) throw std::invalid_argument("strong coordinates must be distinct");
    seen[j] = true;
  }
  switch (kind) {
    case ModelKind::SparseLinear:
      if (beta.size() != dim) throw std::invalid_argument("beta must have length dim");
      for (std::size_t j = 0; j < dim; ++j) {
        if (!std::isfinite(beta[j])) throw std::invalid_argument("beta must be finite");
        if (!seen[j] && beta[j] != 0.0) {
          throw std::invalid_argument("beta is non-zero off the strong set at coordinate " +
                                      std::to_string(j));
        }
      }
      break;
    case ModelKind::LipschitzTest:
      if (!(lipschitz_scale >= 0.0) || !std::isfinite(lipschitz_scale)) {
        throw std::invalid_argument("Lipschitz constant must be finite and non-negative");
      }
      break;
    case ModelKind::Constant:
      if (!std::isfinite(constant)) throw std::invalid_argument("constant must be finite");
      break;
    case ModelKind::Indicator:
      break;
  }
}

double ModelSpec::operator()(std::span<const double> x) const {
  switch (kind) {
    case ModelKind::SparseLinear: {
      double s = 0.0;
      for (std::size_t j : strong) s += beta[j] * x[j];
      return s;
    }
    case ModelKind::LipschitzTest: {
      double s = 0.0;
      for (std::size_t j : strong) s += std::abs(x[j] - 0.5);
      return lipschitz_scale / std::sqrt(static_cast<double>(strong.size())) * s;
    }
    case ModelKind::Constant:
      return constant;
    case ModelKind::Indicator:
      for (std::size_t j : strong)
        if (x[j] > 0.5) return 0.0;
      return 1.0;
  }
  return 0.0;
}

double ModelSpec::lipschitz() const {
  switch (kind) {
    case ModelKind::SparseLinear: {
      double s = 0.0;
      for (double b : beta) s += b * b;
      return std::sqrt(s);
    }
    case ModelKind::LipschitzTest: return lipschitz_scale;
    case ModelKind::Constant: return 0.0;
    case ModelKind::Indicator: return std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

double ModelSpec::sup_norm() const {
  switch (kind) {
    case ModelKind::SparseLinear: {
      double s = 0.0;
      for (double b : beta) s += std::abs(b);
      return s;
    }
    case ModelKind::LipschitzTest:
      return lipschitz_scale * std::sqrt(static_cast<double>(strong.size())) / 2.0;
    case ModelKind::Constant: return std::abs(constant);
    case ModelKind::Indicator: return 1.0;
  }
  return 0.0;
}

Dataset generate_dataset(const ModelSpec& model, std::size_t n, Engine& engine) {
  model.validate();
  std::vector<double> xs(n * model.dim);
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> x(xs.data() + i * model.dim, model.dim);
    for (double& v : x) v = uniform01(engine);
    ys[i] = model(x);
    if (model.sigma > 0.0) ys[i] += model.sigma * standard_normal(engine);
  }
  return Dataset(model.dim, std::move(xs), std::move(ys));
}

// ---------------------------------------------------------------------------
// Direct (scan-based) predictors

double tree_predict(const CenteredTree& tree, const Dataset& data, std::span<const double> x) {
  if (tree.dim() != data.dim()) throw std::invalid_argument("tree and data differ in dimension");
  const LeafAssignment leaf = route(tree, x);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (leaf.cell.contains_codes(data.codes(i))) {
      sum += data.y(i);
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

ForestModel::ForestModel(std::shared_ptr<const Dataset> data, SelectionProbs probs, int depth,
                         std::size_t trees, std::uint64_t seed)
    : data_(std::move(data)) {
  if (!data_) throw std::invalid_argument("forest requires a dataset");
  if (trees == 0) throw std::invalid_argument("forest requires at least one tree");
  if (probs.dim() != data_->dim()) {
    throw std::invalid_argument("selection probabilities and data differ in dimension");
  }
  trees_.reserve(trees);
  for (std::size_t m = 0; m < trees; ++m) trees_.emplace_back(derive_seed(seed, m), depth, probs);
}

double forest_predict(const ForestModel& model, std::span<const double> x) {
  double total = 0.0;
  for (std::size_t m = 0; m < model.tree_count(); ++m)
    total += tree_predict(model.tree(m), model.data(), x);
  return total / static_cast<double>(model.tree_count());
}

std::vector<double> weights(const ForestModel& model, std::span<const double> x) {
  const Dataset& data = model.data();
  std::vector<double> w(data.size(), 0.0);
  std::vector<std::size_t> members;
  const double per_tree = 1.0 / static_cast<double>(model.tree_count());
  for (std::size_t m = 0; m < model.tree_count(); ++m) {
    const LeafAssignment leaf = route(model.tree(m), x);
    members.clear();
    for (std::size_t i = 0; i < data.size(); ++i)
      if (leaf.cell.contains_codes(data.codes(i))) members.push_back(i);
    if (members.empty()) continue;
    const double share = per_tree / static_cast<double>(members.size());
    for (std::size_t i : members) w[i] += share;
  }
  return w;
}

// ---------------------------------------------------------------------------
// ForestIndex

struct ForestIndex::LeafTable {
  CenteredTree tree;
  bool dense = true;
  std::vector<std::uint16_t> coords;  // dense: split coordinate per internal node
  std::vector<std::uint64_t> leaves;  // sparse: occupied leaf ids, sorted
  std::vector<double> sums;
  std::vector<std::uint32_t> counts;

  explicit LeafTable(const CenteredTree& t) : tree(t) {}

  std::uint64_t leaf_of(std::span<const std::uint64_t> codes, std::span<int> k) const {
    if (!dense) return route_codes(tree, codes, k);
    std::fill(k.begin(), k.end(), 0);
    std::uint64_t node = 0;
    const int depth = tree.depth();
    for (int level = 0; level < depth; ++level) {
      const std::size_t j = coords[node];
      const std::uint64_t bit = (codes[j] >> (63 - k[j])) & 1U;
      ++k[j];
      node = 2 * node + 1 + bit;
    }
    return node - ((std::uint64_t{1} << depth) - 1);
  }
};

ForestIndex::ForestIndex(const ForestModel& model) : dim_(model.data().dim()) {
  const Dataset& data = model.data();
  const int depth = model.depth();
  std::vector<int> scratch(dim_);

  auto build = [&](const CenteredTree& tree) {
    auto table = std::make_shared<LeafTable>(tree);
    table->dense = depth <= kDenseDepth;
    if (table->dense) {
      const std::uint64_t internal = (std::uint64_t{1} << depth) - 1;
      table->coords.resize(internal);
      for (std::uint64_t node = 0; node < internal; ++node)
        table->coords[node] = static_cast<std::uint16_t>(tree.split_coordinate(node));
      table->sums.assign(internal + 1, 0.0);
      table->counts.assign(internal + 1, 0);
      for (std::size_t i = 0; i < data.size(); ++i) {
        const std::uint64_t leaf = table->leaf_of(data.codes(i), scratch);
        table->sums[leaf] += data.y(i);
        ++table->counts[leaf];
      }
    } else {
      std::vector<std::pair<std::uint64_t, std::size_t>> keyed(data.size());
      for (std::size_t i = 0; i < data.size(); ++i)
        keyed[i] = {route_codes(tree, data.codes(i), scratch), i};
      std::sort(keyed.begin(), keyed.end());
      for (const auto& [leaf, i] : keyed) {
        if (table->leaves.empty() || table->leaves.back() != leaf) {
          table->leaves.push_back(leaf);
          table->sums.push_back(0.0);
          table->counts.push_back(0);
        }
        table->sums.back() += data.y(i);
        ++table->counts.back();
      }
    }
    return std::shared_ptr<const LeafTable>(std::move(table));
  };

  if (dim_ > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument("dimension too large for leaf tables");
  }
  tables_.reserve(model.tree_count());
  if (model.probs().is_deterministic()) {
    // Every tree is the same partition.
    tables_.assign(model.tree_count(), build(model.tree(0)));
    shared_ = true;
  } else {
    for (std::size_t m = 0; m < model.tree_count(); ++m) tables_.push_back(build(model.tree(m)));
  }
}

std::vector<std::uint64_t> ForestIndex::query_codes(std::span<const double> x) const {
  if (x.size() != dim_) throw std::invalid_argument("query point has wrong dimension");
  std::vector<std::uint64_t> codes(dim_);
  std::transform(x.begin(), x.end(), codes.begin(), fixed_point_code);
  return codes;
}

double ForestIndex::lookup(const LeafTable& table, std::span<const std::uint64_t> codes,
                           std::span<int> scratch) {
  const std::uint64_t leaf = table.leaf_of(codes, scratch);
  std::size_t slot = leaf;
  if (!table.dense) {
    const auto it = std::lower_bound(table.leaves.begin(), table.leaves.end(), leaf);
    if (it == table.leaves.end() || *it != leaf) return 0.0;
    slot = static_cast<std::size_t>(it - table.leaves.begin());
  }
  const std::uint32_t count = table.counts[slot];
  return count == 0 ? 0.0 : table.sums[slot] / static_cast<double>(count);
}

double ForestIndex::tree_prediction(std::size_t m, std::span<const double> x) const {
  const auto codes = query_codes(x);
  std::vector<int> scratch(dim_);
  return lookup(*tables_.at(m), codes, scratch);
}

double ForestIndex::predict(std::span<const double> x) const {
  return predict_with_spread(x).mean;
}

ForestIndex::Prediction ForestIndex::predict_with_spread(std::span<const double> x) const {
  const auto codes = query_codes(x);
  std::vector<int> scratch(dim_);
  const auto m_count = static_cast<double>(tables_.size());
  Prediction out;
  if (shared_) {
    out.mean = lookup(*tables_.front(), codes, scratch);
    return out;
  }
  double total = 0.0;
  double total_sq = 0.0;
  for (const auto& table : tables_) {
    const double v = lookup(*table, codes, scratch);
    total += v;
    total_sq += v * v;
  }
  out.mean = total / m_count;
  if (tables_.size() > 1) {
    out.tree_variance = std::max(0.0, (total_sq - m_count * out.mean * out.mean) / (m_count - 1.0));
  }
  return out;
}

}  // namespace crf
