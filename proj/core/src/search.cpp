#include "km/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "km/errors.hpp"
#include "km/io.hpp"
#include "km/optim.hpp"
#include "km/rng.hpp"

namespace km::search {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

int snap_to_unevaluated(const Eigen::VectorXd& z, const mds::Embedding& embedding,
                        const std::vector<bool>& taken) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < embedding.n(); ++i) {
    if (taken[static_cast<std::size_t>(i)]) continue;
    const double d = (embedding.Z.row(i).transpose() - z).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

double SearchTrace::best_lml() const {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : records) best = std::max(best, r.lml);
  return best;
}

std::string SearchTrace::best_expr() const {
  double best = -std::numeric_limits<double>::infinity();
  std::string expr;
  for (const auto& r : records) {
    if (r.lml > best) {
      best = r.lml;
      expr = r.expr;
    }
  }
  return expr;
}

double SearchTrace::total_seconds() const {
  double total = 0.0;
  for (const auto& r : records) total += r.wall_clock_s;
  return total;
}

std::string trace_to_jsonl(const SearchTrace& trace) {
  std::string out;
  for (const auto& r : trace.records) {
    nlohmann::json j;
    j["iteration"] = r.iteration;
    j["kernel_index"] = r.kernel_index;
    j["expr"] = r.expr;
    j["lml"] = r.lml;
    j["best_lml"] = r.best_lml;
    j["acquisition"] = r.acquisition;
    j["wall_clock_s"] = r.wall_clock_s;
    j["method"] = trace.method;
    j["seed"] = trace.seed;
    out += j.dump() + "\n";
  }
  return out;
}

SearchTrace trace_from_jsonl(const std::string& text) {
  SearchTrace trace;
  std::size_t at = 0;
  while (at < text.size()) {
    std::size_t end = text.find('\n', at);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(at, end - at);
    at = end + 1;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    TraceRecord r;
    r.iteration = j.at("iteration").get<int>();
    r.kernel_index = j.at("kernel_index").get<int>();
    r.expr = j.at("expr").get<std::string>();
    r.lml = j.at("lml").get<double>();
    r.best_lml = j.at("best_lml").get<double>();
    r.acquisition = j.value("acquisition", 0.0);
    r.wall_clock_s = j.value("wall_clock_s", 0.0);
    trace.method = j.value("method", trace.method);
    trace.seed = j.value("seed", trace.seed);
    trace.records.push_back(std::move(r));
  }
  return trace;
}

std::string trace_summary_json(const SearchTrace& trace) {
  nlohmann::json j;
  j["method"] = trace.method;
  j["seed"] = trace.seed;
  j["best_expr"] = trace.best_expr();
  j["best_lml"] = trace.best_lml();
  j["total_seconds"] = trace.total_seconds();
  j["evaluations"] = trace.records.size();
  j["exhausted_early"] = trace.exhausted_early;
  j["failed_proposals"] = trace.failed_proposals;
  j["abort_reason"] = trace.abort_reason;
  return j.dump(2) + "\n";
}

void save_trace(const SearchTrace& trace, const std::string& jsonl_path) {
  io::write_file(jsonl_path, trace_to_jsonl(trace));
  io::write_file(jsonl_path + ".summary.json", trace_summary_json(trace));
}

int propose_next(const surrogate::Model& model, const mds::Embedding& embedding,
                 const std::vector<int>& evaluated, surrogate::ProposeMode mode,
                 std::uint64_t seed) {
  const int n = embedding.n();
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  for (int idx : evaluated) {
    if (idx >= 0 && idx < n) taken[static_cast<std::size_t>(idx)] = true;
  }
  if (std::all_of(taken.begin(), taken.end(), [](bool b) { return b; })) {
    throw ExhaustedLibraryError("propose_next: every library kernel has been evaluated");
  }

  const double best = model.best_observed();

  if (mode == surrogate::ProposeMode::discrete_argmax) {
    int best_idx = -1;
    double best_ei = -1.0;
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      const double ei = surrogate::expected_improvement(model, embedding.Z.row(i), best);
      if (ei > best_ei) {
        best_ei = ei;
        best_idx = i;
      }
    }
    return best_idx;
  }

  // continuous_snap: maximize EI inside the embedding bounding box from 16
  // deterministic starts, then snap to the nearest unevaluated row.
  const int p = embedding.p();
  optim::Bounds box;
  box.lo = embedding.Z.colwise().minCoeff();
  box.hi = embedding.Z.colwise().maxCoeff();
  // Guard degenerate axes so the optimizer has a nonempty box.
  for (int d = 0; d < p; ++d) {
    if (!(box.hi[d] > box.lo[d])) {
      box.lo[d] -= 1e-9;
      box.hi[d] += 1e-9;
    }
  }

  const auto neg_ei = [&](const Eigen::VectorXd& z) -> double {
    return -surrogate::expected_improvement(model, z, best);
  };

  Rng rng(derive_seed(seed, "propose"));
  const Eigen::VectorXd range = box.hi - box.lo;
  const Eigen::VectorXd best_coord = model.best_coordinate();

  Eigen::MatrixXd starts(16, p);
  for (int s = 0; s < 8; ++s) {
    for (int d = 0; d < p; ++d) starts(s, d) = box.lo[d] + rng.uniform() * range[d];
  }
  for (int s = 8; s < 16; ++s) {
    for (int d = 0; d < p; ++d) {
      const double v = best_coord[d] + 0.1 * range[d] * rng.normal();
      starts(s, d) = std::clamp(v, box.lo[d], box.hi[d]);
    }
  }

  const optim::Result opt = optim::multi_start_minimize(neg_ei, box, starts, 200);
  return snap_to_unevaluated(opt.x, embedding, taken);
}

Objective lml_objective(const grammar::KernelLibrary& library, const Dataset& data,
                        const gp::FitBudget& budget, std::uint64_t seed) {
  return [&library, data, budget, seed](int index) -> double {
    const auto& entry = library.entries[static_cast<std::size_t>(index)];
    try {
      const gp::FittedGP fit =
          gp::fit_gp(entry.expr, data, budget, derive_seed(seed, "fit-gp", static_cast<std::uint64_t>(index)));
      return fit.lml;
    } catch (const FitError&) {
      return kFailedFitSentinel;
    } catch (const NumericalError&) {
      return kFailedFitSentinel;
    }
  };
}

namespace {

SearchTrace run_bo_impl(const grammar::KernelLibrary& library, const mds::Embedding& embedding,
                        const Objective& objective, const surrogate::Config& config, int n_init,
                        int iters, std::uint64_t seed) {
  const int n = library.size();
  if (embedding.n() != n) {
    throw std::invalid_argument("run_bo: embedding rows must match library size");
  }
  if (n_init < 2) throw std::invalid_argument("run_bo: n_init must be >= 2");
  if (n_init + iters > n) {
    throw std::invalid_argument("run_bo: n_init + iters exceeds library size");
  }

  SearchTrace trace;
  trace.method = config.kind == surrogate::Kind::rbf ? "bo_rbf" : "bo_multiscale";
  trace.seed = seed;

  std::vector<int> evaluated;
  std::vector<double> observed;  // raw objective values, sentinel included
  double best = -std::numeric_limits<double>::infinity();

  const auto evaluate = [&](int index, double acquisition) {
    const double t0 = now_seconds();
    const double value = objective(index);
    const double t1 = now_seconds();
    evaluated.push_back(index);
    observed.push_back(value);
    best = std::max(best, value);
    TraceRecord r;
    r.iteration = static_cast<int>(trace.records.size());
    r.kernel_index = index;
    r.expr = library.entries[static_cast<std::size_t>(index)].expr.canonical_string();
    r.lml = value;
    r.best_lml = best;
    r.acquisition = acquisition;
    r.wall_clock_s = t1 - t0;
    trace.records.push_back(std::move(r));
  };

  // Seeded distinct initial design.
  {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "bo-init"));
    rng.shuffle(order);
    for (int i = 0; i < n_init; ++i) evaluate(order[static_cast<std::size_t>(i)], 0.0);
  }

  for (int iter = 0; iter < iters; ++iter) {
    // Sentinel observations stay in the evaluated set but never reach the
    // surrogate or its standardization statistics.
    Eigen::MatrixXd coords(evaluated.size(), embedding.p());
    Eigen::VectorXd values(static_cast<Eigen::Index>(evaluated.size()));
    Eigen::Index valid = 0;
    for (std::size_t i = 0; i < evaluated.size(); ++i) {
      if (observed[i] <= kFailedFitSentinel) continue;
      coords.row(valid) = embedding.Z.row(evaluated[i]);
      values[valid] = observed[i];
      ++valid;
    }

    int choice = -1;
    double acquisition = 0.0;
    if (valid >= 2) {
      const surrogate::Model model =
          surrogate::fit_surrogate(config, coords.topRows(valid), values.head(valid),
                                   derive_seed(seed, "surrogate", static_cast<std::uint64_t>(iter)));
      choice = propose_next(model, embedding, evaluated, config.mode,
                            derive_seed(seed, "propose", static_cast<std::uint64_t>(iter)));
      acquisition =
          surrogate::expected_improvement(model, embedding.Z.row(choice), model.best_observed());
    } else {
      // Not enough valid observations to fit a surrogate: fall back to a
      // seeded unevaluated pick so the trace stays deterministic.
      std::vector<bool> taken(static_cast<std::size_t>(n), false);
      for (int idx : evaluated) taken[static_cast<std::size_t>(idx)] = true;
      std::vector<int> remaining;
      for (int i = 0; i < n; ++i) {
        if (!taken[static_cast<std::size_t>(i)]) remaining.push_back(i);
      }
      if (remaining.empty()) {
        trace.exhausted_early = true;
        break;
      }
      Rng rng(derive_seed(seed, "bo-fallback", static_cast<std::uint64_t>(iter)));
      choice = remaining[static_cast<std::size_t>(rng.below(remaining.size()))];
    }
    evaluate(choice, acquisition);
  }
  return trace;
}

}  // namespace

SearchTrace run_bo_objective(const grammar::KernelLibrary& library, const mds::Embedding& embedding,
                             const Objective& objective, const surrogate::Config& config,
                             int n_init, int iters, std::uint64_t seed) {
  return run_bo_impl(library, embedding, objective, config, n_init, iters, seed);
}

SearchTrace run_bo(const grammar::KernelLibrary& library, const mds::Embedding& embedding,
                   const Dataset& data, const surrogate::Config& config, int n_init, int iters,
                   std::uint64_t seed) {
  return run_bo_impl(library, embedding, lml_objective(library, data, gp::FitBudget{}, seed),
                     config, n_init, iters, seed);
}

SearchTrace run_random_objective(const grammar::KernelLibrary& library, const Objective& objective,
                                 int budget, std::uint64_t seed) {
  const int n = library.size();
  if (budget < 1 || budget > n) {
    throw std::invalid_argument("run_random: budget must be in [1, library size]");
  }
  SearchTrace trace;
  trace.method = "random";
  trace.seed = seed;

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "random-order"));
  rng.shuffle(order);

  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < budget; ++i) {
    const int index = order[static_cast<std::size_t>(i)];
    const double t0 = now_seconds();
    const double value = objective(index);
    const double t1 = now_seconds();
    best = std::max(best, value);
    TraceRecord r;
    r.iteration = i;
    r.kernel_index = index;
    r.expr = library.entries[static_cast<std::size_t>(index)].expr.canonical_string();
    r.lml = value;
    r.best_lml = best;
    r.acquisition = 0.0;
    r.wall_clock_s = t1 - t0;
    trace.records.push_back(std::move(r));
  }
  return trace;
}

SearchTrace run_random(const grammar::KernelLibrary& library, const Dataset& data, int budget,
                       std::uint64_t seed) {
  return run_random_objective(library, lml_objective(library, data, gp::FitBudget{}, seed), budget,
                              seed);
}

}  // namespace km::search
