#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "crf/adaptive.hpp"

using namespace crf;

namespace {

Dataset from_function(std::size_t dim, std::size_t n, std::uint64_t seed, double (*f)(std::span<const double>)) {
  Engine engine = make_engine(seed);
  std::vector<double> xs(dim * n), ys(n);
  for (double& v : xs) v = uniform01(engine);
  for (std::size_t i = 0; i < n; ++i) ys[i] = f({xs.data() + i * dim, dim});
  return Dataset(dim, std::move(xs), std::move(ys));
}

}  // namespace

TEST_CASE("empirical criterion") {
  const std::vector<double> zeros{0.0, 0.0}, ones{1.0, 1.0}, mixed{0.0, 1.0};
  CHECK(empirical_delta(zeros, ones, 4) == 0.0);
  CHECK(empirical_delta(mixed, mixed, 4) == 0.25);
  const std::vector<double> v{1.0, 2.0, 6.0};
  CHECK(empirical_delta(v, {}, 3) == doctest::Approx(14.0 / 3.0));
  CHECK(empirical_delta({}, v, 3) == doctest::Approx(14.0 / 3.0));
  CHECK_THROWS(empirical_delta({}, {}, 0));
  CHECK_THROWS(empirical_delta(v, v, 5));

  // Shift invariance.
  const std::vector<double> a{0.3, 1.7, 2.2}, b{5.0, 4.1};
  std::vector<double> a2 = a, b2 = b;
  for (double& x : a2) x += 100.0;
  for (double& x : b2) x += 100.0;
  CHECK(empirical_delta(a, b, 5) == doctest::Approx(empirical_delta(a2, b2, 5)).epsilon(1e-9));
}

TEST_CASE("best split") {
  const auto root = DyadicCell::unit(2);
  SUBCASE("step function is split at the jump") {
    const Dataset d = from_function(2, 200, 1, [](std::span<const double> x) { return x[0] > 0.5 ? 1.0 : 0.0; });
    const auto s = best_split(d, root, 0);
    REQUIRE(s);
    CHECK(s->criterion == 0.0);
    double below = 0.0, above = 1.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v = d.x(i)[0];
      if (v <= 0.5) below = std::max(below, v);
      if (v > 0.5) above = std::min(above, v);
    }
    CHECK(s->split == doctest::Approx(0.5 * (below + above)));
  }
  SUBCASE("constant responses give zero and the smallest split") {
    const Dataset d(1, {0.7, 0.1, 0.4}, {2.0, 2.0, 2.0});
    const auto s = best_split(d, DyadicCell::unit(1), 0);
    REQUIRE(s);
    CHECK(s->criterion == 0.0);
    CHECK(s->split == doctest::Approx(0.25));
  }
  SUBCASE("unsplittable nodes") {
    const Dataset one(1, {0.3}, {1.0});
    CHECK_FALSE(best_split(one, DyadicCell::unit(1), 0));
    const Dataset tied(2, {0.3, 0.1, 0.3, 0.9}, {1.0, 2.0});
    CHECK_FALSE(best_split(tied, root, 0));
    CHECK(best_split(tied, root, 1));
    // Only points inside the node count.
    const Dataset outside(1, {0.1, 0.2, 0.9}, {0.0, 1.0, 2.0});
    CHECK_FALSE(best_split(outside, DyadicCell({1}, {1}), 0));
  }
  SUBCASE("errors") {
    const Dataset d(1, {0.3, 0.4}, {1.0, 2.0});
    CHECK_THROWS(best_split(d, root, 0));
    CHECK_THROWS(best_split(d, DyadicCell::unit(1), 1));
  }
  SUBCASE("noiseless linear response splits near the midpoint") {
    const Dataset d = from_function(1, 20'000, 2, [](std::span<const double> x) { return x[0]; });
    const auto s = best_split(d, DyadicCell::unit(1), 0);
    REQUIRE(s);
    CHECK(s->split == doctest::Approx(0.5).epsilon(0.01));
    const auto inner = best_split(d, DyadicCell({2}, {1}), 0);  // [0.25, 0.5)
    REQUIRE(inner);
    CHECK(inner->split == doctest::Approx(0.375).epsilon(0.01));
  }
}

TEST_CASE("midpoint criterion in the noiseless linear model") {
  // Node [a, b) with width w and y = beta x: splitting at the midpoint reduces
  // the node variance by beta^2 w^2 / 16 and leaves beta^2 w^2 / 48.
  const double beta = 3.0;
  const std::size_t n = 100'000;
  const DyadicCell node({2}, {1});  // [0.25, 0.5)
  const double w = 0.25;
  Engine engine = make_engine(4);
  std::vector<double> left, right, all;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = node.lower(0) + w * uniform01(engine);
    (x < node.lower(0) + w / 2 ? left : right).push_back(beta * x);
    all.push_back(beta * x);
  }
  const double node_variance = empirical_delta(all, {}, n);
  const double after = empirical_delta(left, right, n);
  CHECK(node_variance - after == doctest::Approx(beta * beta * w * w / 16.0).epsilon(0.05));
  CHECK(after == doctest::Approx(beta * beta * w * w / 48.0).epsilon(0.05));
}

TEST_CASE("subset draws") {
  Engine engine = make_engine(5);
  for (int i = 0; i < 100; ++i) {
    const auto s = draw_subset(6, 4, SubsetDraw::WithoutReplacement, engine);
    CHECK(s.size() == 4);
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    const auto r = draw_subset(6, 4, SubsetDraw::WithReplacement, engine);
    CHECK(!r.empty());
    CHECK(r.size() <= 4);
    CHECK(std::is_sorted(r.begin(), r.end()));
  }
  CHECK(draw_subset(3, 3, SubsetDraw::WithoutReplacement, engine) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS(draw_subset(3, 0, SubsetDraw::WithoutReplacement, engine));
  CHECK_THROWS(draw_subset(3, 4, SubsetDraw::WithReplacement, engine));
}

TEST_CASE("minimizer choice") {
  Engine engine = make_engine(6);
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> scores{0.5, 0.2, 0.2 * (1 + 1e-14), 0.9};
  const std::vector<std::size_t> all{0, 1, 2, 3};
  std::array<int, 4> hits{};
  for (int i = 0; i < 4000; ++i) ++hits[pick_minimizer(scores, all, engine)];
  CHECK(hits[0] == 0);
  CHECK(hits[3] == 0);
  CHECK(hits[1] > 1800);
  CHECK(hits[2] > 1800);

  const std::vector<double> none{inf, inf, inf};
  const std::vector<std::size_t> two{0, 2};
  std::array<int, 3> uniform_hits{};
  for (int i = 0; i < 2000; ++i) ++uniform_hits[pick_minimizer(none, two, engine)];
  CHECK(uniform_hits[1] == 0);
  CHECK(uniform_hits[0] > 900);
  CHECK(uniform_hits[2] > 900);
}

TEST_CASE("coordinate selection") {
  Engine engine = make_engine(7);
  SUBCASE("one dimension") {
    const Dataset d = from_function(1, 50, 3, [](std::span<const double> x) { return x[0]; });
    for (int i = 0; i < 10; ++i) CHECK(select_coordinate(d, DyadicCell::unit(1), 1, engine) == 0);
  }
  SUBCASE("a coordinate that explains y is always chosen with M_n = d") {
    const Dataset d = from_function(4, 300, 4, [](std::span<const double> x) { return x[2] < 0.5 ? 0.0 : 1.0; });
    for (int i = 0; i < 50; ++i) CHECK(select_coordinate(d, DyadicCell::unit(4), 4, engine) == 2);
  }
  SUBCASE("pure noise is symmetric") {
    const ModelSpec noise = ModelSpec::constant_function(3, 0.0, 1.0);
    const auto est = learn_selection_probs(noise, 200, 3, 10'000, 11, SubsetDraw::WithoutReplacement);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(est.frequency[j] - 1.0 / 3.0) < 3.0 * est.std_error[j]);
    }
  }
  SUBCASE("fixed-sample estimates") {
    const Dataset d = from_function(2, 400, 5, [](std::span<const double> x) { return x[0] + x[1]; });
    const auto one = estimate_selection_probs(d, 1, 1, engine);
    int ones = 0;
    for (double v : one.values()) ones += v == 1.0 ? 1 : 0;
    CHECK(ones == 1);
    const auto p = estimate_selection_probs(d, 1, 4000, engine);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(0.1));
  }
}

TEST_CASE("selection learning with weak coordinates") {
  const auto model = ModelSpec::sparse_linear({1.0, 1.0, 0.0, 0.0}, 0.0);
  const auto est = learn_selection_probs(model, 500, 4, 400, 3, SubsetDraw::WithoutReplacement);
  CHECK(est.frequency[2] == 0.0);
  CHECK(est.frequency[3] == 0.0);
  CHECK(est.frequency[0] + est.frequency[1] == doctest::Approx(1.0));
  CHECK(std::abs(est.frequency[0] - 0.5) < 4.0 * est.std_error[0]);

  // Worker count does not change the result.
  const auto threaded = learn_selection_probs(model, 500, 4, 400, 3, SubsetDraw::WithoutReplacement, 3);
  CHECK(threaded.frequency == est.frequency);

  CHECK(approx_strong_selection_prob(2, 4, 4) == doctest::Approx(0.5 * (1 - std::pow(0.5, 4))));
  CHECK(approx_strong_selection_prob(2, 2, 1) == 0.5);
  CHECK_THROWS(approx_strong_selection_prob(3, 2, 1));
}

TEST_CASE("adaptive linear tree") {
  Engine engine = make_engine(8);
  SUBCASE("equal coefficients alternate") {
    const std::vector<double> beta{1.0, 1.0};
    CHECK(adaptive_linear_tree(beta, 2, 4, engine).counts == std::vector<int>{2, 2});
  }
  SUBCASE("zero coefficient never wins") {
    const std::vector<double> beta{1.0, 0.0};
    CHECK(adaptive_linear_tree(beta, 2, 5, engine).counts == std::vector<int>{5, 0});
  }
  SUBCASE("depth is fully used") {
    const std::vector<double> beta{0.9, -0.2, 0.5, 0.01};
    for (std::size_t m : {1, 2, 4}) {
      const auto k = adaptive_linear_tree(beta, m, 200, engine).counts;
      CHECK(std::accumulate(k.begin(), k.end(), 0) == 200);
    }
  }
  SUBCASE("deep trees do not underflow") {
    const std::vector<double> beta(8, 1.0);
    const auto k = adaptive_linear_tree(beta, 8, 1024, engine).counts;
    for (int v : k) CHECK(v == 128);
  }
  SUBCASE("errors") {
    const std::vector<double> zero{0.0, 0.0};
    CHECK_THROWS(adaptive_linear_tree(zero, 2, 3, engine));
    const std::vector<double> beta{1.0};
    CHECK_THROWS(adaptive_linear_tree(beta, 1, -1, engine));
    CHECK_THROWS(adaptive_linear_tree(beta, 2, 1, engine));
  }
}

TEST_CASE("approximate split counts") {
  const std::vector<double> equal{1.0, 1.0, 1.0};
  for (double k : approx_split_counts(equal, 12)) CHECK(k == 4.0);
  const std::vector<double> two{2.0, 1.0};
  const auto k = approx_split_counts(two, 10);
  CHECK(k[0] == doctest::Approx(4.5));
  CHECK(k[1] == doctest::Approx(5.5));
  const std::vector<double> many{0.9, -0.7, 0.3, 0.05};
  const auto km = approx_split_counts(many, 100);
  CHECK(std::accumulate(km.begin(), km.end(), 0.0) == doctest::Approx(100.0));
  const std::vector<double> with_zero{1.0, 0.0};
  CHECK_THROWS(approx_split_counts(with_zero, 4));
  const std::vector<double> unordered{0.5, 1.0};
  CHECK_THROWS(approx_split_counts(unordered, 4));
}

TEST_CASE("adaptive trees stay within the approximation's tolerance") {
  // Tolerance per coordinate: 1 + sum_{j<S} log2(|b_j| / |b_S|).
  Engine engine = make_engine(9);
  const std::vector<double> beta{1.0, 0.6, 0.45, 0.2};
  const int depth = 64;
  const auto approx = approx_split_counts(beta, depth);
  double spread = 0.0;
  for (std::size_t j = 0; j + 1 < beta.size(); ++j) spread += std::log2(beta[j] / beta.back());
  for (int t = 0; t < 20; ++t) {
    const auto k = adaptive_linear_tree(beta, beta.size(), depth, engine).counts;
    for (std::size_t j = 0; j < beta.size(); ++j) CHECK(std::abs(k[j] - approx[j]) <= 1.0 + spread);
  }
}
