#include <doctest.h>

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "crf/analytics.hpp"
#include "crf/bounds.hpp"

using namespace crf;

namespace {

double combined(double a, double b) { return std::sqrt(a * a + b * b); }

SimulationSetup small_setup(ModelSpec model, std::size_t n, double leaves, std::uint64_t seed) {
  SimulationSetup s;
  s.probs = SelectionProbs::ideal(model.dim, model.strong);
  s.model = std::move(model);
  s.n = n;
  s.leaves = leaves;
  s.trees = 20;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("composition counts") {
  CHECK(composition_count(2, 2) == 3);
  CHECK(composition_count(8, 3) == 45);
  CHECK(composition_count(0, 4) == 1);
  CHECK(composition_count(5, 1) == 1);
  CHECK_THROWS(composition_count(-1, 2));
  CHECK_THROWS(composition_count(3, 0));
}

TEST_CASE("exact halving expectation") {
  const std::vector<double> half{0.5, 0.5};
  CHECK(halving_expectation_exact(1, half) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(halving_expectation_exact(2, half) == doctest::Approx(0.65625).epsilon(1e-15));
  CHECK(halving_expectation_exact(0, half) == 1.0);
  // One category: counts always agree.
  const std::vector<double> one{1.0};
  CHECK(halving_expectation_exact(7, one) == doctest::Approx(1.0));
  // A zero-probability category changes nothing.
  const std::vector<double> padded{0.5, 0.0, 0.5};
  CHECK(halving_expectation_exact(5, padded) == doctest::Approx(halving_expectation_exact(5, half)));

  const std::vector<double> wide{0.25, 0.25, 0.25, 0.25};
  CHECK_THROWS_AS(halving_expectation_exact(100, wide), std::length_error);
  const std::vector<double> bad{0.5, 0.6};
  CHECK_THROWS(halving_expectation_exact(3, bad));
}

TEST_CASE("binary fast path matches enumeration") {
  for (double p : {0.5, 0.3, 0.05}) {
    const std::vector<double> probs{p, 1.0 - p};
    for (int m = 0; m <= 40; ++m) {
      CAPTURE(m);
      CHECK(binary_halving_expectation(m, p) ==
            doctest::Approx(halving_expectation_exact(m, probs)).epsilon(1e-12));
    }
  }
  CHECK(binary_halving_expectation(10, 0.0) == 1.0);
  CHECK(binary_halving_expectation(10, 1.0) == 1.0);
  CHECK_THROWS(binary_halving_expectation(10, 1.5));
}

TEST_CASE("Monte Carlo halving expectation") {
  const std::vector<double> p{0.2, 0.3, 0.5};
  const Estimate mc = halving_expectation_mc(6, p, 200'000, 42);
  const double exact = halving_expectation_exact(6, p);
  CHECK(mc.std_error > 0.0);
  CHECK(std::abs(mc.value - exact) < 3.0 * mc.std_error);

  const Estimate via = multinomial_halving_expectation(6, p, EvalMode::MonteCarlo, 200'000, 42);
  CHECK(via.value == mc.value);
  CHECK(multinomial_halving_expectation(6, p, EvalMode::Exact).value == exact);
  CHECK_THROWS(halving_expectation_mc(6, p, 1, 42));
}

TEST_CASE("upper bound and lower form") {
  for (int m = 1; m <= 10; ++m) {
    for (const std::vector<double>& p :
         {std::vector<double>{0.5, 0.5}, std::vector<double>{0.3, 0.7}, std::vector<double>{0.2, 0.3, 0.5}}) {
      CHECK(halving_expectation_exact(m, p) <= multinomial_upper_bound(m, p));
    }
  }
  const std::vector<double> half{0.5, 0.5};
  CHECK(multinomial_upper_bound(4, half) == doctest::Approx(8.0 / std::sqrt(4 * 0.25)));
  CHECK(multinomial_lower_form(4, half, 0.5) == doctest::Approx(0.5 / std::sqrt(1.0)));
}

TEST_CASE("normal approximation for two categories") {
  const auto a = normal_approx_check(100, 0.5);
  CHECK(a.ratio >= 0.5);
  CHECK(a.ratio <= 2.0);
  CHECK(a.approx == doctest::Approx(1.0 / (std::numbers::ln2 * std::sqrt(std::numbers::pi * 25.0))));
  // The discrete sum converges to 3 f(0) rather than (2 / log 2) f(0), so the
  // ratio approaches 1.5 log 2 from below.
  const double limit = 1.5 * std::numbers::ln2;
  const auto b = normal_approx_check(1000, 0.5);
  const auto c = normal_approx_check(10'000, 0.5);
  CHECK(a.ratio < b.ratio);
  CHECK(b.ratio < c.ratio);
  CHECK(std::abs(c.ratio - limit) < std::abs(b.ratio - limit));
  CHECK(c.ratio == doctest::Approx(limit).epsilon(1e-3));
  CHECK_THROWS(normal_approx_check(10, 0.0));
}

TEST_CASE("expected overlap") {
  const SelectionProbs one({0.0, 1.0});
  for (int d = 0; d < 10; ++d) CHECK(expected_overlap(one, d, EvalMode::Exact).value == std::ldexp(1.0, -d));
  const SelectionProbs half = SelectionProbs::uniform(2);
  CHECK(expected_overlap(half, 1, EvalMode::Exact).value == doctest::Approx(0.375));

  for (int d : {3, 8, 12}) {
    CAPTURE(d);
    const SelectionProbs p({0.25, 0.25, 0.5});
    const double exact = expected_overlap(p, d, EvalMode::Exact).value;
    const Estimate mc = expected_overlap(p, d, EvalMode::MonteCarlo, 100'000, 5);
    CHECK(std::abs(mc.value - exact) < 3.0 * mc.std_error);
    const Estimate direct = tree_pair_overlap_mc(p, d, 100'000, 6);
    CHECK(std::abs(direct.value - exact) < 3.0 * direct.std_error);
  }
  // Worker count does not change Monte Carlo output.
  const SelectionProbs p = SelectionProbs::uniform(3);
  CHECK(tree_pair_overlap_mc(p, 6, 5000, 9, 1).value == tree_pair_overlap_mc(p, 6, 5000, 9, 4).value);
}

TEST_CASE("rate fits") {
  std::vector<std::pair<double, double>> pts;
  for (double s : {2.0, 4.0, 8.0, 16.0}) pts.emplace_back(s, std::pow(s, -0.5));
  auto fit = fit_rate_exponent(pts);
  CHECK(fit.exponent == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fit.std_error == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(fit.r_squared == doctest::Approx(1.0));

  pts.clear();
  for (double s : {1.0, 3.0, 10.0}) pts.emplace_back(s, 3.0 * s * s);
  fit = fit_rate_exponent(pts);
  CHECK(fit.exponent == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(fit.points.size() == 3);

  pts.emplace_back(4.0, 0.0);
  CHECK_THROWS(fit_rate_exponent(pts));
  const std::vector<std::pair<double, double>> two{{1, 1}, {2, 2}};
  CHECK_THROWS(fit_rate_exponent(two));
}

TEST_CASE("bias / variance decomposition") {
  SUBCASE("constant function without noise") {
    const auto setup = small_setup(ModelSpec::constant_function(2, 1.5, 0.0), 200, 4, 1);
    const auto d = mc_bias_variance(setup, {4, 2, 16});
    CHECK(d.variance.value == doctest::Approx(0.0).scale(1e-12));
    // Empty cells predict 0, so the only error comes from them.
    CHECK(d.bias_sq.value == doctest::Approx(d.total_mse.value).scale(1e-12));
    CHECK(d.bias_sq.value < 1e-6);
  }
  SUBCASE("pure noise has no bias") {
    const auto setup = small_setup(ModelSpec::constant_function(2, 0.0, 1.0), 512, 16, 2);
    const auto d = mc_bias_variance(setup, {16, 4, 32});
    CHECK(std::abs(d.bias_sq.value) < 3.0 * d.bias_sq.std_error);
    CHECK(d.variance.value > 0.0);
    CHECK(d.forest_noise.value > 0.0);
    CHECK(d.variance_infinite.value < d.variance.value);
  }
  SUBCASE("identity and agreement with direct risk") {
    auto setup = small_setup(ModelSpec::sparse_linear({1.0}, 0.1), 256, 8, 3);
    const auto d = mc_bias_variance(setup, {16, 4, 32});
    CHECK(d.bias_sq.value + d.variance.value == doctest::Approx(d.total_mse.value).epsilon(1e-12));
    setup.seed = 4;
    const auto r = mc_risk(setup, 200, 32);
    CHECK(std::abs(r.value - d.total_mse.value) < 3.0 * combined(r.std_error, d.total_mse.std_error));
  }
  SUBCASE("variance stays below the upper bound") {
    for (double k : {4.0, 16.0, 64.0}) {
      auto setup = small_setup(ModelSpec::sparse_linear({1.0}, 0.1), 512, k, 5);
      const auto d = mc_bias_variance(setup, {8, 3, 32});
      BoundInputs b;
      b.n = 512;
      b.leaves = k;
      b.sigma = 0.1;
      CHECK(d.variance_infinite.value - 3.0 * d.variance_infinite.std_error <= variance_upper_bound(b));
    }
  }
  SUBCASE("deterministic across worker counts") {
    auto setup = small_setup(ModelSpec::sparse_linear({1.0, -1.0}, 0.5), 128, 8, 6);
    const auto a = mc_bias_variance(setup, {4, 2, 8});
    setup.threads = 3;
    const auto b = mc_bias_variance(setup, {4, 2, 8});
    CHECK(a.variance.value == b.variance.value);
    CHECK(a.bias_sq.value == b.bias_sq.value);
  }
  SUBCASE("invalid options") {
    const auto setup = small_setup(ModelSpec::sparse_linear({1.0}, 0.1), 64, 4, 1);
    CHECK_THROWS(mc_bias_variance(setup, {1, 2, 4}));
    CHECK_THROWS(mc_bias_variance(setup, {4, 1, 4}));
    CHECK_THROWS(mc_bias_variance(setup, {4, 2, 0}));
    CHECK_THROWS(mc_risk(setup, 0, 4));
  }
}

TEST_CASE("risk and pointwise error") {
  SUBCASE("noiseless constant on a saturated grid") {
    auto setup = small_setup(ModelSpec::constant_function(1, 2.0, 0.0), 400, 4, 7);
    CHECK(mc_risk(setup, 5, 20).value == 0.0);
  }
  SUBCASE("pointwise") {
    auto setup = small_setup(ModelSpec::sparse_linear({1.0}, 0.2), 256, 8, 8);
    const std::vector<std::vector<double>> pts{{0.1}, {0.55}};
    const auto mse = pointwise_mse(setup, pts, 50);
    REQUIRE(mse.size() == 2);
    for (const auto& e : mse) {
      CHECK(e.value > 0.0);
      CHECK(e.std_error > 0.0);
    }
    const std::vector<std::vector<double>> wrong{{0.1, 0.2}};
    CHECK_THROWS(pointwise_mse(setup, wrong, 10));
  }
}
