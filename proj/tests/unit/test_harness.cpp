#include <doctest.h>

#include <clocale>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "crf/harness.hpp"

using namespace crf;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("crf-harness-" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

ExperimentConfig quick(ExperimentKind kind) {
  ExperimentConfig c = default_config(kind);
  c.seed = 11;
  c.trees = 8;
  c.replicates = 4;
  c.queries = 8;
  c.outer = 2;
  c.inner = 2;
  c.samples = 2000;
  c.trials = 100;
  c.n_grid = {64, 128};
  if (kind == ExperimentKind::AdaptiveHist) c.depth = 64;
  if (kind == ExperimentKind::LearnProbs) c.n_grid = {200};
  if (kind == ExperimentKind::Consistency) c.point_count = 3;
  if (kind == ExperimentKind::Overlap) c.depths = {1, 4, 8};
  if (kind == ExperimentKind::Multinomial) c.m_grid = {1, 2, 50};
  return c;
}

}  // namespace

TEST_CASE("experiment names") {
  for (auto kind : all_experiments()) CHECK(experiment_kind_from_string(to_string(kind)) == kind);
  CHECK(all_experiments().size() == 8);
  CHECK_THROWS_AS(experiment_kind_from_string("sweep"), ConfigError);
}

TEST_CASE("number formatting is locale independent") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1.0 / 3.0) == "0.33333333333333331");
  CHECK(format_double(1e-20) == "9.9999999999999995e-21");
  CHECK(format_double(std::nan("")) == "nan");
  std::setlocale(LC_ALL, "de_DE.UTF-8");  // no-op if the locale is absent
  CHECK(format_double(2.25) == "2.25");
  std::setlocale(LC_ALL, "C");
  CHECK(std::stod(format_double(0.1)) == 0.1);
}

TEST_CASE("bounds table") {
  const CsvTable t = bounds_table(12, 12);
  REQUIRE(t.rows.size() == 12);
  CHECK(t.header == std::vector<std::string>{"S", "alpha_new", "alpha_biau", "minimax_d", "minimax_S", "approx_new"});
  CHECK(t.number(0, "alpha_new") == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    CHECK(t.number(r, "alpha_new") > t.number(r, "alpha_biau"));
    if (r > 0) CHECK(t.number(r, "alpha_new") < t.number(r - 1, "alpha_new"));
  }
  CHECK_THROWS(bounds_table(3, 2));
}

TEST_CASE("config parsing") {
  const auto base = default_config(ExperimentKind::RiskSweep);
  SUBCASE("fields are applied") {
    const auto c = parse_config(R"({
      "experiment": "risk-sweep", "seed": 18446744073709551615, "trees": 7, "threads": 2,
      "model": {"kind": "lipschitz-test", "dim": 2, "lipschitz": 1.5, "sigma": 0.2},
      "n": [100, 200], "leaves": [4, 8], "replicates": 9
    })", base);
    CHECK(*c.seed == 18446744073709551615ull);
    CHECK(c.trees == 7);
    CHECK(c.threads == 2);
    CHECK(c.model.kind == ModelKind::LipschitzTest);
    CHECK(c.model.strong == std::vector<std::size_t>{0, 1});
    CHECK(c.model.lipschitz_scale == 1.5);
    CHECK(c.leaf_rule == LeafRule::Explicit);
    CHECK(c.leaves == std::vector<double>{4, 8});
    CHECK(c.replicates == 9);
    CHECK_NOTHROW(c.validate());
  }
  SUBCASE("syntax errors name the line") {
    try {
      (void)parse_config("{\n  \"seed\": 1,\n  \"trees\": ,\n}", base);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("field errors name the field") {
    auto message = [&](const std::string& text) {
      try {
        (void)parse_config(text, base).validate();
      } catch (const ConfigError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(message(R"({"seed": -1})").find("'seed'") != std::string::npos);
    CHECK(message(R"({"seed": 1, "n": [10, "x"]})").find("'n[1]'") != std::string::npos);
    CHECK(message(R"({"seed": 1, "tress": 3})").find("'tress': unknown field") != std::string::npos);
    CHECK(message(R"({"seed": 1, "model": {"kind": "cubic"}})").find("'model.kind'") != std::string::npos);
    CHECK(message(R"({"seed": 1, "model": {"beta": [1, 0], "strong": [1]}})").find("'model'") != std::string::npos);
    CHECK(message(R"({"seed": 1, "experiment": "overlap"})").find("'experiment'") != std::string::npos);
    CHECK(message(R"({"seed": 1, "n": []})").find("'n'") != std::string::npos);
    CHECK(message(R"({"seed": 1, "probs": [0.5]})").find("'probs'") != std::string::npos);
    CHECK(message(R"({"seed": 1, "leaves": "many"})").find("'leaves'") != std::string::npos);
    CHECK(message(R"({"n": [10]})").find("'seed'") != std::string::npos);
    CHECK(message(R"([1, 2])").find("object") != std::string::npos);
  }
  SUBCASE("optimal leaves need a finite Lipschitz constant and noise") {
    auto c = default_config(ExperimentKind::RiskSweep);
    c.seed = 1;
    c.model = ModelSpec::indicator(2, {0, 1}, 0.1);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.model = ModelSpec::sparse_linear({1.0}, 0.0);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("round trip through JSON") {
    auto c = quick(ExperimentKind::Consistency);
    c.points = {{0.2, 0.3}, {0.6, 0.1}};
    c.uniform_probs = true;
    const auto back = parse_config(config_to_json(c), default_config(ExperimentKind::Consistency));
    CHECK(config_to_json(back) == config_to_json(c));
  }
}

TEST_CASE("seed requirements") {
  auto c = default_config(ExperimentKind::Overlap);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  auto hist = default_config(ExperimentKind::AdaptiveHist);
  CHECK_NOTHROW(hist.validate());  // falls back to the coefficient seed
  CHECK_NOTHROW(default_config(ExperimentKind::BoundsTable).validate());
  CHECK(experiment_seed(1, ExperimentKind::Overlap) != experiment_seed(1, ExperimentKind::Decompose));
}

TEST_CASE("every experiment runs and is deterministic") {
  for (auto kind : all_experiments()) {
    CAPTURE(to_string(kind));
    auto c = quick(kind);
    const CsvTable a = run_experiment(c);
    CHECK(!a.rows.empty());
    for (const auto& row : a.rows) REQUIRE(row.size() == a.header.size());
    c.threads = 3;
    const CsvTable b = run_experiment(c);
    CHECK(to_csv(a) == to_csv(b));
  }
}

TEST_CASE("experiment tables") {
  SUBCASE("risk sweep columns") {
    const auto t = run_experiment(quick(ExperimentKind::RiskSweep));
    for (const char* col : {"n", "k_n", "mse", "stderr", "M", "replicates", "seed", "risk_bound"})
      CHECK_NOTHROW((void)t.column(col));
    // S = 1, L = 1, sigma = 0.1: k_n = (100 n)^{1/3} rounded to a power of two.
    CHECK(t.number(0, "k_n") == 16);
    CHECK(t.number(1, "k_n") == 32);
  }
  SUBCASE("adaptive histogram") {
    auto c = quick(ExperimentKind::AdaptiveHist);
    c.equal_beta = true;
    const auto t = run_experiment(c);
    CHECK(t.rows.size() == 8 * 8);
    for (std::size_t r = 0; r < t.rows.size(); ++r) CHECK(t.number(r, "K") == 8);
  }
  SUBCASE("multinomial rows carry exact values") {
    const auto t = run_experiment(quick(ExperimentKind::Multinomial));
    CHECK(t.number(0, "exact") == doctest::Approx(0.75));
    CHECK(t.number(1, "exact") == doctest::Approx(0.65625));
    CHECK(std::isfinite(t.number(2, "normal_approx")));
    CHECK(std::isnan(t.number(3, "normal_approx")));  // three categories
  }
  SUBCASE("consistency uses n^0.6 leaves") {
    const auto t = run_experiment(quick(ExperimentKind::Consistency));
    CHECK(t.number(0, "k_n") == doctest::Approx(std::pow(64.0, 0.6)));
    CHECK(t.number(0, "depth") == 4);
  }
}

TEST_CASE("run writes artifacts") {
  auto c = quick(ExperimentKind::Overlap);
  c.out_dir = scratch("run");
  const RunResult r = run(c);
  CHECK(r.rows == 3);
  CHECK(std::filesystem::exists(r.csv));
  const std::string manifest = slurp(r.manifest);
  CHECK(manifest.find("\"status\": \"complete\"") != std::string::npos);
  CHECK(manifest.find("\"wall_time_seconds\"") != std::string::npos);
  CHECK(manifest.find("forest_size") != std::string::npos);
  const std::string first = slurp(r.csv);

  // Re-running from the manifest reproduces the CSV byte for byte.
  auto again = load_config(r.manifest, default_config(ExperimentKind::Overlap));
  again.out_dir = scratch("run-again");
  CHECK(slurp(run(again).csv) == first);

  auto blocked = c;
  blocked.out_dir = scratch("blocked");
  std::ofstream(blocked.out_dir) << "file in the way";
  CHECK_THROWS_AS(run(blocked), std::runtime_error);
}
