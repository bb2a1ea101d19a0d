#include "crf/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "crf/parallel.hpp"

namespace crf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sum_squared_deviation(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss;
}

void require_subset_size(std::size_t dim, std::size_t subset_size) {
  if (subset_size < 1 || subset_size > dim) {
    throw std::invalid_argument("subset size must lie in [1, " + std::to_string(dim) + "]");
  }
}

std::vector<double> subset_scores(const Dataset& data, const DyadicCell& node,
                                  std::span<const std::size_t> subset) {
  std::vector<double> scores(data.dim(), kInf);
  for (std::size_t j : subset) {
    if (const auto eval = best_split(data, node, j)) scores[j] = eval->criterion;
  }
  return scores;
}

}  // namespace

double empirical_delta(std::span<const double> left, std::span<const double> right,
                       std::size_t total) {
  if (total == 0) throw std::invalid_argument("node sample size must be positive");
  if (total < left.size() + right.size()) {
    throw std::invalid_argument("node sample size is smaller than the number of values");
  }
  const double n = static_cast<double>(total);
  return sum_squared_deviation(left) / n + sum_squared_deviation(right) / n;
}

std::optional<SplitEvaluation> best_split(const Dataset& data, const DyadicCell& node,
                                          std::size_t coord) {
  if (node.dim() != data.dim()) throw std::invalid_argument("node and data differ in dimension");
  if (coord >= data.dim()) throw std::invalid_argument("split coordinate out of range");

  std::vector<std::pair<double, double>> points;  // (x_coord, y)
  for (std::size_t i = 0; i < data.size(); ++i)
    if (node.contains_codes(data.codes(i))) points.emplace_back(data.x(i)[coord], data.y(i));
  if (points.size() < 2) return std::nullopt;
  std::sort(points.begin(), points.end());
  if (points.front().first == points.back().first) return std::nullopt;

  // Prefix sums of centred responses keep the one-pass variance stable.
  const auto count = points.size();
  double centre = 0.0;
  for (const auto& p : points) centre += p.second;
  centre /= static_cast<double>(count);
  double total_sum = 0.0, total_sq = 0.0;
  for (const auto& p : points) {
    const double v = p.second - centre;
    total_sum += v;
    total_sq += v * v;
  }

  const double n = static_cast<double>(count);
  double best = kInf;
  std::size_t best_index = 0;
  double left_sum = 0.0, left_sq = 0.0;
  for (std::size_t i = 0; i + 1 < count; ++i) {
    const double v = points[i].second - centre;
    left_sum += v;
    left_sq += v * v;
    if (points[i].first == points[i + 1].first) continue;
    const double nl = static_cast<double>(i + 1);
    const double nr = n - nl;
    const double right_sum = total_sum - left_sum;
    const double right_sq = total_sq - left_sq;
    const double sse = (left_sq - left_sum * left_sum / nl) + (right_sq - right_sum * right_sum / nr);
    const double criterion = std::max(0.0, sse) / n;
    if (best == kInf || criterion < best - kTieTolerance * std::abs(best)) {
      best = criterion;
      best_index = i;
    }
  }

  std::vector<double> left, right;
  left.reserve(best_index + 1);
  right.reserve(count - best_index - 1);
  for (std::size_t i = 0; i < count; ++i) (i <= best_index ? left : right).push_back(points[i].second);

  SplitEvaluation out;
  out.coord = coord;
  out.split = 0.5 * (points[best_index].first + points[best_index + 1].first);
  out.criterion = empirical_delta(left, right, count);
  return out;
}

std::vector<std::size_t> draw_subset(std::size_t dim, std::size_t subset_size, SubsetDraw draw,
                                     Engine& engine) {
  require_subset_size(dim, subset_size);
  std::vector<std::size_t> subset;
  if (draw == SubsetDraw::WithoutReplacement) {
    std::vector<std::size_t> pool(dim);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < subset_size; ++i) {
      const std::size_t pick = i + uniform_index(engine, dim - i);
      std::swap(pool[i], pool[pick]);
    }
    subset.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(subset_size));
    std::sort(subset.begin(), subset.end());
  } else {
    for (std::size_t i = 0; i < subset_size; ++i) subset.push_back(uniform_index(engine, dim));
    std::sort(subset.begin(), subset.end());
    subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
  }
  return subset;
}

std::size_t pick_minimizer(std::span<const double> scores, std::span<const std::size_t> subset,
                           Engine& engine) {
  if (subset.empty()) throw std::invalid_argument("coordinate subset is empty");
  double best = kInf;
  for (std::size_t j : subset) best = std::min(best, scores[j]);
  std::vector<std::size_t> winners;
  for (std::size_t j : subset) {
    if (best == kInf || scores[j] <= best + kTieTolerance * std::abs(best)) winners.push_back(j);
  }
  return winners[uniform_index(engine, winners.size())];
}

std::size_t select_coordinate(const Dataset& data, const DyadicCell& node, std::size_t subset_size,
                              Engine& engine, SubsetDraw draw) {
  const auto subset = draw_subset(data.dim(), subset_size, draw, engine);
  const auto scores = subset_scores(data, node, subset);
  return pick_minimizer(scores, subset, engine);
}

SelectionProbs estimate_selection_probs(const Dataset& data, std::size_t subset_size,
                                        std::size_t trials, Engine& engine, SubsetDraw draw) {
  if (trials == 0) throw std::invalid_argument("trials must be positive");
  require_subset_size(data.dim(), subset_size);
  // The root criterion of each coordinate does not depend on the trial.
  std::vector<std::size_t> all(data.dim());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto scores = subset_scores(data, DyadicCell::unit(data.dim()), all);

  std::vector<double> hits(data.dim(), 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto subset = draw_subset(data.dim(), subset_size, draw, engine);
    hits[pick_minimizer(scores, subset, engine)] += 1.0;
  }
  for (double& h : hits) h /= static_cast<double>(trials);
  return SelectionProbs(std::move(hits));
}

SelectionEstimate learn_selection_probs(const ModelSpec& model, std::size_t n,
                                        std::size_t subset_size, std::size_t trials,
                                        std::uint64_t seed, SubsetDraw draw, unsigned threads) {
  if (trials == 0) throw std::invalid_argument("trials must be positive");
  if (n == 0) throw std::invalid_argument("sample size must be positive");
  model.validate();
  require_subset_size(model.dim, subset_size);

  std::vector<std::size_t> chosen(trials);
  parallel_for(trials, threads, [&](std::size_t t) {
    Engine engine = make_engine(derive_seed(seed, t));
    const Dataset data = generate_dataset(model, n, engine);
    const auto subset = draw_subset(model.dim, subset_size, draw, engine);
    const auto scores = subset_scores(data, DyadicCell::unit(model.dim), subset);
    chosen[t] = pick_minimizer(scores, subset, engine);
  });

  SelectionEstimate out;
  out.frequency.assign(model.dim, 0.0);
  for (std::size_t j : chosen) out.frequency[j] += 1.0;
  const double total = static_cast<double>(trials);
  for (double& f : out.frequency) f /= total;
  for (double f : out.frequency) out.std_error.push_back(std::sqrt(f * (1.0 - f) / total));
  return out;
}

double approx_strong_selection_prob(std::size_t sparsity, std::size_t dim, std::size_t subset_size,
                                    double xi) {
  if (sparsity == 0 || sparsity > dim) throw std::invalid_argument("need 1 <= S <= d");
  const double s = static_cast<double>(sparsity);
  const double miss = std::pow(1.0 - s / static_cast<double>(dim), static_cast<double>(subset_size));
  return (1.0 / s) * (1.0 - miss) * (1.0 + xi);
}

AdaptiveCounts adaptive_linear_tree(std::span<const double> beta, std::size_t subset_size,
                                    int depth, Engine& engine, SubsetDraw draw) {
  if (beta.empty()) throw std::invalid_argument("beta must be non-empty");
  if (std::all_of(beta.begin(), beta.end(), [](double b) { return b == 0.0; })) {
    throw std::invalid_argument("beta must have a non-zero entry");
  }
  if (depth < 0) throw std::invalid_argument("depth must be non-negative");
  require_subset_size(beta.size(), subset_size);

  // log2 of |beta_j|^2 4^{-K_j-2}, without the K-dependent part.
  std::vector<double> base(beta.size());
  for (std::size_t j = 0; j < beta.size(); ++j)
    base[j] = beta[j] == 0.0 ? -kInf : 2.0 * std::log2(std::abs(beta[j]));

  AdaptiveCounts out;
  out.counts.assign(beta.size(), 0);
  std::vector<std::size_t> winners;
  for (int step = 0; step < depth; ++step) {
    const auto subset = draw_subset(beta.size(), subset_size, draw, engine);
    double best = -kInf;
    for (std::size_t j : subset) best = std::max(best, base[j] - 2.0 * (out.counts[j] + 2));
    winners.clear();
    for (std::size_t j : subset) {
      const double score = base[j] - 2.0 * (out.counts[j] + 2);
      if (best == -kInf || score >= best - kTieTolerance * std::max(1.0, std::abs(best)))
        winners.push_back(j);
    }
    ++out.counts[winners[uniform_index(engine, winners.size())]];
  }
  return out;
}

std::vector<double> approx_split_counts(std::span<const double> beta, double depth) {
  if (beta.empty()) throw std::invalid_argument("beta must be non-empty");
  for (std::size_t j = 0; j < beta.size(); ++j) {
    if (beta[j] == 0.0 || !std::isfinite(beta[j])) {
      throw std::invalid_argument("coefficients must be finite and non-zero");
    }
    if (j > 0 && std::abs(beta[j]) > std::abs(beta[j - 1])) {
      throw std::invalid_argument("coefficients must be ordered by decreasing magnitude");
    }
  }
  const auto s = static_cast<double>(beta.size());
  const double last = std::abs(beta.back());
  std::vector<double> out(beta.size());
  double spread = 0.0;
  for (std::size_t j = 0; j + 1 < beta.size(); ++j) {
    const double ratio = std::log2(std::abs(beta[j]) / last);
    out[j] = depth / s - ratio / s;
    spread += ratio;
  }
  out.back() = depth / s + spread / s;
  return out;
}

}  // namespace crf
