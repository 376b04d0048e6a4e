#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "km/dataset.hpp"
#include "km/gp.hpp"
#include "km/grammar.hpp"
#include "km/mds.hpp"
#include "km/surrogate.hpp"

namespace km::search {

/// Failed GP fits enter the trace with this sentinel and are excluded from
/// surrogate data and standardization statistics.
inline constexpr double kFailedFitSentinel = -1e6;

struct TraceRecord {
  int iteration = 0;
  int kernel_index = -1;
  std::string expr;
  double lml = 0.0;
  double best_lml = 0.0;     // running max of fitted LML
  double acquisition = 0.0;  // EI at the chosen coordinate (0 for init/random)
  double wall_clock_s = 0.0;
};

struct SearchTrace {
  std::string method;  // bo_rbf | bo_multiscale | random | ga
  std::uint64_t seed = 0;
  std::vector<TraceRecord> records;
  bool exhausted_early = false;
  int failed_proposals = 0;   // GA: invalid proposals where the parent was retained
  std::string abort_reason;   // nonempty when a run stopped early (partial trace)

  [[nodiscard]] double best_lml() const;
  [[nodiscard]] std::string best_expr() const;
  [[nodiscard]] double total_seconds() const;
};

/// One JSON object per record, one per line.
[[nodiscard]] std::string trace_to_jsonl(const SearchTrace& trace);
[[nodiscard]] SearchTrace trace_from_jsonl(const std::string& text);
/// Summary JSON {method, seed, best expr, best lml, total seconds}.
[[nodiscard]] std::string trace_summary_json(const SearchTrace& trace);
void save_trace(const SearchTrace& trace, const std::string& jsonl_path);

/// Next kernel to evaluate. continuous_snap maximizes EI from 16 starts
/// (8 uniform in the embedding bounding box, 8 perturbations of the best
/// observed coordinate) and snaps the optimum to the nearest unevaluated
/// embedding row; discrete_argmax scores every unevaluated row directly.
/// Ties break toward the lowest index and evaluated indices are never
/// returned. Throws ExhaustedLibraryError when nothing is left.
[[nodiscard]] int propose_next(const surrogate::Model& model, const mds::Embedding& embedding,
                               const std::vector<int>& evaluated, surrogate::ProposeMode mode,
                               std::uint64_t seed);

/// Objective abstraction: maps a library index to the value BO maximizes.
/// The default objective fits a GP to the dataset and returns its LML
/// (kFailedFitSentinel when the fit fails).
using Objective = std::function<double(int)>;

[[nodiscard]] Objective lml_objective(const grammar::KernelLibrary& library, const Dataset& data,
                                      const gp::FitBudget& budget, std::uint64_t seed);

/// Bayesian optimization over the embedded library: n_init seeded distinct
/// kernels, then iters acquisition rounds (surrogate refit on standardized
/// non-sentinel observations each round). Deterministic given the seed
/// except for wall_clock_s fields.
[[nodiscard]] SearchTrace run_bo(const grammar::KernelLibrary& library,
                                 const mds::Embedding& embedding, const Dataset& data,
                                 const surrogate::Config& config, int n_init, int iters,
                                 std::uint64_t seed);
[[nodiscard]] SearchTrace run_bo_objective(const grammar::KernelLibrary& library,
                                           const mds::Embedding& embedding,
                                           const Objective& objective,
                                           const surrogate::Config& config, int n_init, int iters,
                                           std::uint64_t seed);

/// Uniform without-replacement baseline with the same record format.
[[nodiscard]] SearchTrace run_random(const grammar::KernelLibrary& library, const Dataset& data,
                                     int budget, std::uint64_t seed);
[[nodiscard]] SearchTrace run_random_objective(const grammar::KernelLibrary& library,
                                               const Objective& objective, int budget,
                                               std::uint64_t seed);

}  // namespace km::search
