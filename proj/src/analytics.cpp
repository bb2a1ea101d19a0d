#include "crf/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "crf/parallel.hpp"
#include "crf/rng.hpp"

namespace crf {

namespace {

// Stream tags for the seed hierarchy.
enum : std::uint64_t {
  kTagQueries = 1,
  kTagData = 2,
  kTagTrees = 3,
  kTagChunk = 4,
};

constexpr std::size_t kChunks = 64;

void require_probabilities(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("probability vector must be non-empty");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("probabilities must be non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("probabilities must sum to 1");
}

struct Outcome {
  std::vector<int> counts;
  double probability;
};

void enumerate_compositions(int remaining, std::size_t part, std::span<const double> p,
                            double log_prob, std::vector<int>& counts, std::vector<Outcome>& out) {
  if (part + 1 == p.size()) {
    if (remaining > 0 && p[part] == 0.0) return;
    counts[part] = remaining;
    const double term = remaining == 0 ? 0.0
                                       : remaining * std::log(p[part]) - std::lgamma(remaining + 1.0);
    out.push_back({counts, std::exp(log_prob + term)});
    return;
  }
  for (int c = 0; c <= remaining; ++c) {
    if (c > 0 && p[part] == 0.0) break;
    counts[part] = c;
    const double term = c == 0 ? 0.0 : c * std::log(p[part]) - std::lgamma(c + 1.0);
    enumerate_compositions(remaining - c, part + 1, p, log_prob + term, counts, out);
  }
}

double halving_term(std::span<const int> a, std::span<const int> b) {
  int discrepancy = 0;
  for (std::size_t j = 0; j < a.size(); ++j) discrepancy += std::abs(a[j] - b[j]);
  return std::ldexp(1.0, -discrepancy / 2);  // discrepancy is even
}

/// Splits `samples` into fixed chunks with positional seeds and returns the
/// per-sample values' mean and standard error.
template <class Draw>
Estimate chunked_mc(std::size_t samples, std::uint64_t seed, unsigned threads, Draw&& draw) {
  if (samples < 2) throw std::invalid_argument("Monte Carlo needs at least two samples");
  const std::size_t chunks = std::min(kChunks, samples);
  std::vector<double> sums(chunks), sq(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Engine engine = make_engine(derive_seed(seed, kTagChunk, c));
    const std::size_t begin = samples * c / chunks;
    const std::size_t end = samples * (c + 1) / chunks;
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = draw(engine);
      s += v;
      s2 += v * v;
    }
    sums[c] = s;
    sq[c] = s2;
  });
  const double n = static_cast<double>(samples);
  const double mean = pairwise_sum(sums) / n;
  const double var = std::max(0.0, (pairwise_sum(sq) - n * mean * mean) / (n - 1.0));
  return Estimate{mean, std::sqrt(var / n)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Multinomial correlation

double composition_count(int trials, std::size_t parts) {
  if (trials < 0 || parts == 0) throw std::invalid_argument("need trials >= 0 and parts >= 1");
  // C(trials + parts - 1, parts - 1)
  double out = 1.0;
  for (std::size_t i = 1; i < parts; ++i)
    out = out * static_cast<double>(trials + static_cast<int>(i)) / static_cast<double>(i);
  return std::round(out);
}

double halving_expectation_exact(int trials, std::span<const double> p) {
  require_probabilities(p);
  if (trials < 0) throw std::invalid_argument("trials must be non-negative");
  const double outcomes = composition_count(trials, p.size());
  if (outcomes * outcomes > static_cast<double>(kMaxEnumerationPairs)) {
    throw std::length_error("exact enumeration needs " + std::to_string(outcomes * outcomes) +
                            " pair terms, above the limit of " +
                            std::to_string(kMaxEnumerationPairs));
  }
  std::vector<Outcome> support;
  std::vector<int> counts(p.size());
  enumerate_compositions(trials, 0, p, std::lgamma(trials + 1.0), counts, support);

  std::vector<double> rows(support.size());
  for (std::size_t a = 0; a < support.size(); ++a) {
    double row = 0.0;
    for (const Outcome& b : support) row += b.probability * halving_term(support[a].counts, b.counts);
    rows[a] = support[a].probability * row;
  }
  return pairwise_sum(rows);
}

Estimate halving_expectation_mc(int trials, std::span<const double> p, std::size_t samples,
                                std::uint64_t seed) {
  require_probabilities(p);
  if (trials < 0) throw std::invalid_argument("trials must be non-negative");
  const SelectionProbs categorical(std::vector<double>(p.begin(), p.end()));
  return chunked_mc(samples, seed, 1, [&](Engine& engine) {
    std::vector<int> a(p.size(), 0), b(p.size(), 0);
    for (int t = 0; t < trials; ++t) {
      ++a[categorical.sample(uniform01(engine))];
      ++b[categorical.sample(uniform01(engine))];
    }
    return halving_term(a, b);
  });
}

Estimate multinomial_halving_expectation(int trials, std::span<const double> p, EvalMode mode,
                                         std::size_t samples, std::uint64_t seed) {
  if (mode == EvalMode::Exact) return Estimate{halving_expectation_exact(trials, p), 0.0};
  return halving_expectation_mc(trials, p, samples, seed);
}

double binary_halving_expectation(int trials, double p1) {
  if (trials < 0) throw std::invalid_argument("trials must be non-negative");
  if (!(p1 >= 0.0 && p1 <= 1.0)) throw std::invalid_argument("p1 must lie in [0, 1]");
  const auto m = static_cast<std::size_t>(trials);
  std::vector<double> pmf(m + 1, 0.0);
  if (p1 == 0.0 || p1 == 1.0) {
    pmf[p1 == 0.0 ? 0 : m] = 1.0;
  } else {
    const double lp = std::log(p1), lq = std::log1p(-p1);
    for (std::size_t a = 0; a <= m; ++a) {
      const double k = static_cast<double>(a);
      pmf[a] = std::exp(std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) -
                        std::lgamma(trials - k + 1.0) + k * lp + (trials - k) * lq);
    }
  }
  // below[a] = sum_{b<=a} pmf[b] 2^{-(a-b)}, above[a] = sum_{b>=a} pmf[b] 2^{-(b-a)}
  std::vector<double> below(m + 1), above(m + 1);
  for (std::size_t a = 0; a <= m; ++a) below[a] = pmf[a] + (a > 0 ? below[a - 1] / 2.0 : 0.0);
  for (std::size_t a = m + 1; a-- > 0;) above[a] = pmf[a] + (a < m ? above[a + 1] / 2.0 : 0.0);
  std::vector<double> terms(m + 1);
  for (std::size_t a = 0; a <= m; ++a) terms[a] = pmf[a] * (below[a] + above[a] - pmf[a]);
  return pairwise_sum(terms);
}

double multinomial_upper_bound(int trials, std::span<const double> p) {
  require_probabilities(p);
  if (trials < 1) throw std::invalid_argument("trials must be positive");
  const auto k = static_cast<double>(p.size());
  double denom = std::pow(static_cast<double>(trials), k - 1.0);
  for (std::size_t j = 0; j + 1 < p.size(); ++j) denom *= p[j];
  denom *= std::pow(p.back(), k - 1.0);
  return std::pow(8.0, k - 1.0) / std::sqrt(denom);
}

double multinomial_lower_form(int trials, std::span<const double> p, double constant) {
  require_probabilities(p);
  if (trials < 1) throw std::invalid_argument("trials must be positive");
  const auto k = static_cast<double>(p.size());
  double denom = std::pow(static_cast<double>(trials), k - 1.0);
  for (double v : p) denom *= v;
  return std::pow(constant, k - 1.0) / std::sqrt(denom);
}

NormalApproximation normal_approx_check(int trials, double p1) {
  if (!(p1 > 0.0 && p1 < 1.0)) throw std::invalid_argument("p1 must lie in (0, 1)");
  if (trials < 1) throw std::invalid_argument("trials must be positive");
  NormalApproximation out;
  out.exact = binary_halving_expectation(trials, p1);
  out.approx = 1.0 / (std::numbers::ln2 * std::sqrt(std::numbers::pi * trials * p1 * (1.0 - p1)));
  out.ratio = out.exact / out.approx;
  return out;
}

// ---------------------------------------------------------------------------
// Overlaps

Estimate expected_overlap(const SelectionProbs& probs, int depth, EvalMode mode,
                          std::size_t samples, std::uint64_t seed) {
  if (depth < 0) throw std::invalid_argument("depth must be non-negative");
  // Coordinates that are never split contribute K_j = K'_j = 0.
  std::vector<double> positive;
  for (std::size_t j : probs.support()) positive.push_back(probs[j]);
  const double scale = std::ldexp(1.0, -depth);
  const Estimate e = multinomial_halving_expectation(depth, positive, mode, samples, seed);
  return Estimate{scale * e.value, scale * e.std_error};
}

Estimate tree_pair_overlap_mc(const SelectionProbs& probs, int depth, std::size_t samples,
                              std::uint64_t seed, unsigned threads) {
  const std::size_t dim = probs.dim();
  return chunked_mc(samples, seed, threads, [&](Engine& engine) {
    std::vector<double> x(dim);
    for (double& v : x) v = uniform01(engine);
    const CenteredTree a(engine(), depth, probs);
    const CenteredTree b(engine(), depth, probs);
    return overlap_volume(route(a, x).cell, route(b, x).cell);
  });
}

// ---------------------------------------------------------------------------
// Rate fits

RateFit fit_rate_exponent(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw std::invalid_argument("rate fit needs at least three points");
  RateFit fit;
  fit.points.assign(points.begin(), points.end());
  std::vector<double> lx, ly;
  for (const auto& [scale, value] : points) {
    if (!(scale > 0.0) || !(value > 0.0)) {
      throw std::invalid_argument("rate fit needs positive scales and values");
    }
    lx.push_back(std::log(scale));
    ly.push_back(std::log(value));
  }
  const double n = static_cast<double>(points.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("rate fit needs at least two distinct scales");
  fit.exponent = sxy / sxx;
  fit.intercept = my - fit.exponent * mx;
  const double residual = std::max(0.0, syy - fit.exponent * sxy);
  fit.std_error = std::sqrt(residual / (n - 2.0) / sxx);
  fit.r_squared = syy == 0.0 ? 1.0 : 1.0 - residual / syy;
  return fit;
}

// ---------------------------------------------------------------------------
// Monte Carlo risk

void SimulationSetup::validate() const {
  model.validate();
  if (n == 0) throw std::invalid_argument("sample size must be positive");
  if (trees == 0) throw std::invalid_argument("tree count must be positive");
  if (probs.dim() != model.dim) {
    throw std::invalid_argument("selection probabilities and model differ in dimension");
  }
  (void)depth();
}

namespace {

std::vector<double> uniform_points(std::size_t count, std::size_t dim, Engine& engine) {
  std::vector<double> xs(count * dim);
  for (double& v : xs) v = uniform01(engine);
  return xs;
}

ForestModel fit_replicate(const SimulationSetup& setup, std::uint64_t data_seed,
                          std::uint64_t tree_seed) {
  Engine engine = make_engine(data_seed);
  auto data = std::make_shared<const Dataset>(generate_dataset(setup.model, setup.n, engine));
  return ForestModel(std::move(data), setup.probs, setup.depth(), setup.trees, tree_seed);
}

}  // namespace

DecompositionEstimate mc_bias_variance(const SimulationSetup& setup,
                                       const DecompositionOptions& options) {
  setup.validate();
  if (options.outer < 2) throw std::invalid_argument("need at least two outer replicates");
  if (options.inner < 2) throw std::invalid_argument("need at least two inner replicates");
  if (options.queries < 1) throw std::invalid_argument("need at least one query point");

  const std::size_t dim = setup.model.dim;
  const std::size_t outer = options.outer, inner = options.inner, queries = options.queries;

  std::vector<std::vector<double>> query_points(outer);
  for (std::size_t g = 0; g < outer; ++g) {
    Engine engine = make_engine(derive_seed(setup.seed, kTagQueries, g));
    query_points[g] = uniform_points(queries, dim, engine);
  }

  // predictions[(g * inner + i) * queries + q], same layout for tree spreads.
  std::vector<double> predictions(outer * inner * queries);
  std::vector<double> spreads(outer * inner * queries);
  parallel_for(outer * inner, setup.threads, [&](std::size_t job) {
    const std::size_t g = job / inner, i = job % inner;
    const ForestModel model = fit_replicate(setup, derive_seed(setup.seed, kTagData, g, i),
                                            derive_seed(setup.seed, kTagTrees, g, i));
    const ForestIndex index(model);
    for (std::size_t q = 0; q < queries; ++q) {
      const auto pred = index.predict_with_spread({query_points[g].data() + q * dim, dim});
      predictions[job * queries + q] = pred.mean;
      spreads[job * queries + q] = pred.tree_variance;
    }
  });

  const double r = static_cast<double>(inner);
  const double m = static_cast<double>(setup.trees);
  std::vector<double> var_g(outer), noise_g(outer), bias_g(outer), corr_g(outer), mse_g(outer);
  std::vector<double> var_q(queries), noise_q(queries), bias_q(queries), corr_q(queries),
      mse_q(queries), column(inner), sq(inner), noise(inner);
  for (std::size_t g = 0; g < outer; ++g) {
    for (std::size_t q = 0; q < queries; ++q) {
      const double truth = setup.model({query_points[g].data() + q * dim, dim});
      for (std::size_t i = 0; i < inner; ++i) {
        column[i] = predictions[(g * inner + i) * queries + q];
        sq[i] = (column[i] - truth) * (column[i] - truth);
        noise[i] = spreads[(g * inner + i) * queries + q] / m;
      }
      const MeanStderr stats = mean_stderr(column);
      const double sample_var = stats.std_error * stats.std_error * r;
      var_q[q] = sample_var;
      noise_q[q] = pairwise_sum(noise) / r;
      corr_q[q] = sample_var / r;
      bias_q[q] = (stats.mean - truth) * (stats.mean - truth) - corr_q[q];
      mse_q[q] = pairwise_sum(sq) / r;
    }
    const double qn = static_cast<double>(queries);
    var_g[g] = pairwise_sum(var_q) / qn;
    noise_g[g] = pairwise_sum(noise_q) / qn;
    bias_g[g] = pairwise_sum(bias_q) / qn;
    corr_g[g] = pairwise_sum(corr_q) / qn;
    mse_g[g] = pairwise_sum(mse_q) / qn;
  }
  std::vector<double> infinite_g(outer);
  for (std::size_t g = 0; g < outer; ++g) infinite_g[g] = var_g[g] - noise_g[g];

  auto summarize = [](std::span<const double> v) {
    const MeanStderr s = mean_stderr(v);
    return Estimate{s.mean, s.std_error};
  };
  DecompositionEstimate out;
  out.variance = summarize(var_g);
  out.forest_noise = summarize(noise_g);
  out.variance_infinite = summarize(infinite_g);
  out.bias_sq = summarize(bias_g);
  out.bias_correction = summarize(corr_g);
  out.total_mse = summarize(mse_g);
  out.outer = outer;
  out.inner = inner;
  out.queries = queries;
  out.trees = setup.trees;
  return out;
}

Estimate mc_risk(const SimulationSetup& setup, std::size_t replicates, std::size_t queries) {
  setup.validate();
  if (replicates < 1) throw std::invalid_argument("need at least one replicate");
  if (queries < 1) throw std::invalid_argument("need at least one query point");
  const std::size_t dim = setup.model.dim;
  std::vector<double> per_replicate(replicates);
  parallel_for(replicates, setup.threads, [&](std::size_t rep) {
    const ForestModel model = fit_replicate(setup, derive_seed(setup.seed, kTagData, rep),
                                            derive_seed(setup.seed, kTagTrees, rep));
    const ForestIndex index(model);
    Engine engine = make_engine(derive_seed(setup.seed, kTagQueries, rep));
    const auto xs = uniform_points(queries, dim, engine);
    std::vector<double> err(queries);
    for (std::size_t q = 0; q < queries; ++q) {
      const std::span<const double> x(xs.data() + q * dim, dim);
      const double e = index.predict(x) - setup.model(x);
      err[q] = e * e;
    }
    per_replicate[rep] = pairwise_sum(err) / static_cast<double>(queries);
  });
  const MeanStderr s = mean_stderr(per_replicate);
  return Estimate{s.mean, s.std_error};
}

std::vector<Estimate> pointwise_mse(const SimulationSetup& setup,
                                    std::span<const std::vector<double>> points,
                                    std::size_t replicates) {
  setup.validate();
  if (replicates < 2) throw std::invalid_argument("need at least two replicates");
  for (const auto& x : points) {
    if (x.size() != setup.model.dim) throw std::invalid_argument("point has wrong dimension");
  }
  std::vector<double> err(replicates * points.size());
  parallel_for(replicates, setup.threads, [&](std::size_t rep) {
    const ForestModel model = fit_replicate(setup, derive_seed(setup.seed, kTagData, rep),
                                            derive_seed(setup.seed, kTagTrees, rep));
    const ForestIndex index(model);
    for (std::size_t k = 0; k < points.size(); ++k) {
      const double e = index.predict(points[k]) - setup.model(points[k]);
      err[k * replicates + rep] = e * e;
    }
  });
  std::vector<Estimate> out;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const MeanStderr s = mean_stderr(std::span<const double>(err).subspan(k * replicates, replicates));
    out.push_back({s.mean, s.std_error});
  }
  return out;
}

}  // namespace crf
