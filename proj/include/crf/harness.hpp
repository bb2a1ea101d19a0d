#pragma once

// Experiment orchestration behind the forest-lab CLI.
//
// Configuration precedence, lowest first: built-in defaults for the
// experiment kind, then the JSON config file, then command-line flags.
//
// Seeds: experiment = derive_seed(root, 0x100 + kind index); row r of the
// output table uses derive_seed(experiment, r); inside a row, data, tree and
// query streams are split further by tag and replicate (see analytics.cpp).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "crf/adaptive.hpp"
#include "crf/forest.hpp"

namespace crf {

inline constexpr std::string_view kLibraryVersion = "0.1.0";

enum class ExperimentKind {
  RiskSweep,
  Decompose,
  Overlap,
  Multinomial,
  AdaptiveHist,
  LearnProbs,
  BoundsTable,
  Consistency,
};

std::string to_string(ExperimentKind kind);
/// Throws ConfigError for an unknown name.
ExperimentKind experiment_kind_from_string(const std::string& name);
std::vector<ExperimentKind> all_experiments();

/// Invalid configuration; maps to exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How the leaf count k_n is chosen for each n.
enum class LeafRule {
  Explicit,  // every value in `leaves`, crossed with the n grid
  Optimal,   // optimal_leaf_count rounded to a power of two
  Power,     // n^leaf_exponent
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::RiskSweep;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = "out";
  unsigned threads = 1;
  std::size_t trees = 100;  // M

  ModelSpec model;
  /// Selection probabilities; empty means 1/S on the strong coordinates.
  std::vector<double> probs;
  bool uniform_probs = false;

  std::vector<std::size_t> n_grid;
  LeafRule leaf_rule = LeafRule::Optimal;
  std::vector<double> leaves;
  double leaf_exponent = 0.6;

  std::size_t replicates = 50;
  std::size_t queries = 64;
  std::size_t outer = 16;
  std::size_t inner = 4;
  std::size_t samples = 100'000;

  std::vector<int> depths;                  // overlap
  std::vector<int> m_grid;                  // multinomial trial counts
  std::vector<std::vector<double>> p_grid;  // multinomial probability vectors

  std::uint64_t beta_seed = 7;  // adaptive-hist
  int depth = 1024;
  bool equal_beta = false;
  std::size_t subset_size = 0;  // M_n; 0 means d
  SubsetDraw draw = SubsetDraw::WithoutReplacement;

  std::size_t trials = 2000;  // learn-probs root trials
  double xi = 0.0;

  std::size_t sparsity_max = 12;  // bounds-table
  std::size_t table_dim = 12;

  std::vector<std::vector<double>> points;  // consistency; empty means drawn
  std::size_t point_count = 10;

  SelectionProbs selection_probs() const;
  std::size_t effective_subset_size() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

ExperimentConfig default_config(ExperimentKind kind);

/// Applies a JSON document on top of `base`. A manifest written by run() is
/// accepted too; its "config" object is used. Throws ConfigError with the
/// line and column of syntax errors or the path of the offending field.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base);
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base);

/// Resolved configuration as a JSON document accepted by parse_config.
std::string config_to_json(const ExperimentConfig& config);

std::uint64_t experiment_seed(std::uint64_t root, ExperimentKind kind);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;  // throws std::out_of_range
  double number(std::size_t row, std::string_view name) const;
};

/// 17 significant digits, '.' decimal point, independent of the locale.
std::string format_double(double value);
std::string to_csv(const CsvTable& table);

/// Rows (S, alpha_new, alpha_biau, minimax_d, minimax_S, approx_new), S = 1..s_max.
CsvTable bounds_table(std::size_t sparsity_max, std::size_t dim);

/// Computes the experiment's table without touching the file system.
CsvTable run_experiment(const ExperimentConfig& config);

struct RunResult {
  std::filesystem::path csv;
  std::filesystem::path manifest;
  std::size_t rows = 0;
  double seconds = 0.0;
};

/// Writes manifest.json (status "running"), computes the table, writes
/// <experiment>.csv and finalizes the manifest.
RunResult run(const ExperimentConfig& config);

}  // namespace crf
