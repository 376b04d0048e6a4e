#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "km/dataset.hpp"
#include "km/divergence.hpp"
#include "km/gp.hpp"
#include "km/grammar.hpp"
#include "km/mds.hpp"
#include "km/search.hpp"

namespace km::bench {

/// One synthetic benchmark: closed-form 2-D objective on its standard box.
struct BenchmarkFunction {
  std::string name;
  Eigen::Vector2d lo;
  Eigen::Vector2d hi;
  double (*eval)(double x1, double x2) = nullptr;
};

[[nodiscard]] const std::vector<BenchmarkFunction>& benchmark_functions();
/// Throws std::invalid_argument listing the valid names.
[[nodiscard]] const BenchmarkFunction& benchmark_by_name(const std::string& name);

/// n low-discrepancy samples (n >= 4) of the named function over its standard
/// box, normalized per Dataset rules. Deterministic given seed.
[[nodiscard]] Dataset sample_benchmark(const std::string& name, int n, std::uint64_t seed);

/// Full method-comparison experiment: dataset -> library -> distance matrix
/// (cached) -> embedding (cached) -> one search trace per (method, seed).
struct ExperimentConfig {
  // Dataset: a named benchmark, or a CSV series when csv_path is set.
  std::string benchmark = "ackley";
  int samples = 40;
  std::uint64_t data_seed = 0;
  std::string csv_path;
  std::string x_column;
  std::string y_column;

  // Methods: bo_multiscale | bo_rbf | random | ga (mock proposer).
  std::vector<std::string> methods{"bo_multiscale", "random"};
  int n_init = 3;
  int iters = 12;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double ga_mutation_p = 0.7;

  divergence::Kind kind = divergence::Kind::sqrt_js_sq;
  int matrix_samples = 64;  // QMC hyperparameter draws per kernel
  std::uint64_t matrix_seed = 1;
  int library_depth = 3;
  int embed_dim = 15;

  std::string output_dir = "out";

  /// Throws std::invalid_argument on any malformed field combination.
  void validate() const;
  [[nodiscard]] std::string to_json() const;
  [[nodiscard]] static ExperimentConfig from_json(const std::string& text);
  /// Lineage key embedded in the artifacts this config produces.
  [[nodiscard]] std::string hash() const;
};

struct MethodCurve {
  std::string method;
  // Index t = best observed LML after search round t (t = 0 is the initial
  // design; GA rounds are generations), aggregated across completed seeds.
  std::vector<double> mean_best;
  std::vector<double> std_best;  // population standard deviation
  double wall_mean = 0.0;        // seconds per completed run
  double wall_std = 0.0;
  int completed = 0;  // seeds that finished; failures are recorded, not fatal
};

struct ComparisonSummary {
  std::string config_hash;
  int iters = 0;
  std::vector<MethodCurve> curves;
};

/// Executes every (method, seed) cell, persists each trace under
/// output_dir/traces/, writes summary.csv + summary.json + comparison.svg and
/// a manifest.json listing every artifact with its content hash and the
/// config hash. The distance matrix and embedding are cached under
/// output_dir/cache keyed by (library hash, kind, S, seed), so re-runs skip
/// the O(N^2) build. Summary statistics cover completed seeds only.
[[nodiscard]] ComparisonSummary run_experiment(const ExperimentConfig& config);

/// Plot-ready rows: iteration,method,mean_best_lml,std_best_lml.
[[nodiscard]] std::string summary_to_csv(const ComparisonSummary& summary);

/// Recomputes the summary from traces persisted in output_dir (summary is
/// derived data; this must reproduce run_experiment's result exactly).
[[nodiscard]] ComparisonSummary summarize_traces(const ExperimentConfig& config);

struct VerifyReport {
  bool ok = false;
  std::vector<std::string> mismatches;  // human-readable, one per failure
};

/// Re-hashes every artifact listed in output_dir/manifest.json and re-derives
/// the config hash from the embedded config.
[[nodiscard]] VerifyReport verify_experiment(const std::string& output_dir);

/// Single-objective minimization with a GP surrogate over the benchmark's
/// continuous domain (no library, no snapping): expected improvement over a
/// low-discrepancy candidate pool refined by Nelder-Mead. Both kernel arms
/// share identical initial designs per seed.
struct DownstreamConfig {
  std::string benchmark = "ackley";
  std::string surrogate_expr = "(SE * (RQ + RQ))";
  std::string baseline_expr = "SE";
  int n_init = 5;
  int budget = 25;  // total objective evaluations per arm, >= n_init
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  gp::FitBudget fit_budget{4, 150};
};

struct DownstreamResult {
  // seeds x budget cumulative best (minimum) objective value after each
  // evaluation; row order follows config.seeds.
  Eigen::MatrixXd best_surrogate;
  Eigen::MatrixXd best_baseline;
  std::string surrogate_expr;
  std::string baseline_expr;
};

[[nodiscard]] DownstreamResult downstream_bo(const DownstreamConfig& config);

/// Rows: iteration,arm,mean_best_objective,std_best_objective.
[[nodiscard]] std::string downstream_to_csv(const DownstreamResult& result);

}  // namespace km::bench
