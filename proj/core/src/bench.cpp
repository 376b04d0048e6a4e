#include "km/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "km/errors.hpp"
#include "km/ga.hpp"
#include "km/hash.hpp"
#include "km/io.hpp"
#include "km/optim.hpp"
#include "km/qmc.hpp"
#include "km/rng.hpp"
#include "km/surrogate.hpp"
#include "km/svg.hpp"

namespace km::bench {

namespace {

constexpr double kPi = std::numbers::pi;

double eggholder_f(double x1, double x2) {
  return -(x2 + 47.0) * std::sin(std::sqrt(std::abs(x2 + x1 / 2.0 + 47.0))) -
         x1 * std::sin(std::sqrt(std::abs(x1 - (x2 + 47.0))));
}

double ackley_f(double x1, double x2) {
  const double sq = 0.5 * (x1 * x1 + x2 * x2);
  const double cs = 0.5 * (std::cos(2.0 * kPi * x1) + std::cos(2.0 * kPi * x2));
  return -20.0 * std::exp(-0.2 * std::sqrt(sq)) - std::exp(cs) + 20.0 + std::exp(1.0);
}

double dropwave_f(double x1, double x2) {
  const double r2 = x1 * x1 + x2 * x2;
  return -(1.0 + std::cos(12.0 * std::sqrt(r2))) / (0.5 * r2 + 2.0);
}

double schwefel_f(double x1, double x2) {
  return 418.9829 * 2.0 - x1 * std::sin(std::sqrt(std::abs(x1))) -
         x2 * std::sin(std::sqrt(std::abs(x2)));
}

double rastrigin_f(double x1, double x2) {
  return 20.0 + (x1 * x1 - 10.0 * std::cos(2.0 * kPi * x1)) +
         (x2 * x2 - 10.0 * std::cos(2.0 * kPi * x2));
}

double levy_f(double x1, double x2) {
  const double w1 = 1.0 + (x1 - 1.0) / 4.0;
  const double w2 = 1.0 + (x2 - 1.0) / 4.0;
  const double s1 = std::sin(kPi * w1);
  const double sw = std::sin(kPi * w1 + 1.0);
  const double s2 = std::sin(2.0 * kPi * w2);
  return s1 * s1 + (w1 - 1.0) * (w1 - 1.0) * (1.0 + 10.0 * sw * sw) +
         (w2 - 1.0) * (w2 - 1.0) * (1.0 + s2 * s2);
}

double bukin_f(double x1, double x2) {
  return 100.0 * std::sqrt(std::abs(x2 - 0.01 * x1 * x1)) + 0.01 * std::abs(x1 + 10.0);
}

std::string valid_names() {
  std::string names;
  for (const auto& f : benchmark_functions()) {
    if (!names.empty()) names += ", ";
    names += f.name;
  }
  return names;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pop_std_of(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (const double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

const std::vector<BenchmarkFunction>& benchmark_functions() {
  static const std::vector<BenchmarkFunction> fns = {
      {"eggholder", Eigen::Vector2d(-512.0, -512.0), Eigen::Vector2d(512.0, 512.0), &eggholder_f},
      {"ackley", Eigen::Vector2d(-5.0, -5.0), Eigen::Vector2d(5.0, 5.0), &ackley_f},
      {"dropwave", Eigen::Vector2d(-5.12, -5.12), Eigen::Vector2d(5.12, 5.12), &dropwave_f},
      {"schwefel", Eigen::Vector2d(-500.0, -500.0), Eigen::Vector2d(500.0, 500.0), &schwefel_f},
      {"rastrigin", Eigen::Vector2d(-5.12, -5.12), Eigen::Vector2d(5.12, 5.12), &rastrigin_f},
      {"levy", Eigen::Vector2d(-10.0, -10.0), Eigen::Vector2d(10.0, 10.0), &levy_f},
      {"bukin", Eigen::Vector2d(-15.0, -3.0), Eigen::Vector2d(-5.0, 3.0), &bukin_f},
  };
  return fns;
}

const BenchmarkFunction& benchmark_by_name(const std::string& name) {
  for (const auto& f : benchmark_functions()) {
    if (f.name == name) return f;
  }
  throw std::invalid_argument("unknown benchmark '" + name + "' (valid: " + valid_names() + ")");
}

Dataset sample_benchmark(const std::string& name, int n, std::uint64_t seed) {
  if (n < 4) throw std::invalid_argument("sample_benchmark: n must be >= 4");
  const BenchmarkFunction& fn = benchmark_by_name(name);
  qmc::SobolSequence sobol(2, derive_seed(seed, "bench-sample"));
  const Eigen::MatrixXd u = sobol.points(n);
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double x1 = fn.lo[0] + u(i, 0) * (fn.hi[0] - fn.lo[0]);
    const double x2 = fn.lo[1] + u(i, 1) * (fn.hi[1] - fn.lo[1]);
    X(i, 0) = x1;
    X(i, 1) = x2;
    y[i] = fn.eval(x1, x2);
  }
  return Dataset::from_raw(X, y);
}

void ExperimentConfig::validate() const {
  if (csv_path.empty()) {
    (void)benchmark_by_name(benchmark);  // throws with the valid list
    if (samples < 4) throw std::invalid_argument("experiment: samples must be >= 4");
  } else {
    if (x_column.empty() || y_column.empty()) {
      throw std::invalid_argument("experiment: csv_path requires x_column and y_column");
    }
  }
  if (methods.empty()) throw std::invalid_argument("experiment: methods must be non-empty");
  for (const auto& m : methods) {
    if (m != "bo_multiscale" && m != "bo_rbf" && m != "random" && m != "ga") {
      throw std::invalid_argument("experiment: unknown method '" + m +
                                  "' (valid: bo_multiscale, bo_rbf, random, ga)");
    }
    if (std::count(methods.begin(), methods.end(), m) != 1) {
      throw std::invalid_argument("experiment: duplicate method '" + m + "'");
    }
  }
  if (seeds.empty()) throw std::invalid_argument("experiment: seeds must be non-empty");
  if (n_init < 2) throw std::invalid_argument("experiment: n_init must be >= 2");
  if (iters < 0) throw std::invalid_argument("experiment: iters must be >= 0");
  if (library_depth < 1 || library_depth > 3) {
    throw std::invalid_argument("experiment: library_depth must be 1..3");
  }
  if (!(ga_mutation_p >= 0.0 && ga_mutation_p <= 1.0)) {
    throw std::invalid_argument("experiment: ga_mutation_p must be in [0, 1]");
  }
  if (matrix_samples < 1) throw std::invalid_argument("experiment: matrix_samples must be >= 1");
  if (embed_dim < 1) throw std::invalid_argument("experiment: embed_dim must be >= 1");
  if (output_dir.empty()) throw std::invalid_argument("experiment: output_dir must be set");
}

std::string ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["benchmark"] = benchmark;
  j["samples"] = samples;
  j["data_seed"] = data_seed;
  j["csv_path"] = csv_path;
  j["x_column"] = x_column;
  j["y_column"] = y_column;
  j["methods"] = methods;
  j["n_init"] = n_init;
  j["iters"] = iters;
  j["seeds"] = seeds;
  j["ga_mutation_p"] = ga_mutation_p;
  j["kind"] = divergence::kind_name(kind);
  j["matrix_samples"] = matrix_samples;
  j["matrix_seed"] = matrix_seed;
  j["library_depth"] = library_depth;
  j["embed_dim"] = embed_dim;
  j["output_dir"] = output_dir;
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ExperimentConfig c;
  c.benchmark = j.value("benchmark", c.benchmark);
  c.samples = j.value("samples", c.samples);
  c.data_seed = j.value("data_seed", c.data_seed);
  c.csv_path = j.value("csv_path", c.csv_path);
  c.x_column = j.value("x_column", c.x_column);
  c.y_column = j.value("y_column", c.y_column);
  if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
  c.n_init = j.value("n_init", c.n_init);
  c.iters = j.value("iters", c.iters);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.ga_mutation_p = j.value("ga_mutation_p", c.ga_mutation_p);
  if (j.contains("kind")) c.kind = divergence::kind_from_name(j.at("kind").get<std::string>());
  c.matrix_samples = j.value("matrix_samples", c.matrix_samples);
  c.matrix_seed = j.value("matrix_seed", c.matrix_seed);
  c.library_depth = j.value("library_depth", c.library_depth);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.output_dir = j.value("output_dir", c.output_dir);
  return c;
}

std::string ExperimentConfig::hash() const { return hash_hex(to_json()); }

namespace {

Dataset experiment_dataset(const ExperimentConfig& config) {
  if (!config.csv_path.empty()) {
    return load_csv_series(config.csv_path, config.x_column, config.y_column).dataset;
  }
  return sample_benchmark(config.benchmark, config.samples, config.data_seed);
}

std::string trace_path(const ExperimentConfig& config, const std::string& method,
                       std::uint64_t seed) {
  return config.output_dir + "/traces/" + method + "_seed" + std::to_string(seed) + ".jsonl";
}

/// Best observed LML after search round t. Round 0 is the initial design;
/// BO/random rounds append one record each, GA rounds are generations.
double best_at_round(const search::SearchTrace& trace, int n_init, int t) {
  if (trace.records.empty()) return search::kFailedFitSentinel;
  if (trace.method == "ga") {
    double best = search::kFailedFitSentinel;
    for (const auto& r : trace.records) {
      if (r.iteration <= t) best = r.best_lml;
    }
    return best;
  }
  const std::size_t count =
      std::min(trace.records.size(), static_cast<std::size_t>(n_init + t));
  return trace.records[count - 1].best_lml;
}

search::SearchTrace run_cell(const ExperimentConfig& config, const std::string& method,
                             std::uint64_t seed, const grammar::KernelLibrary& library,
                             const mds::Embedding& embedding, const Dataset& data) {
  if (method == "bo_multiscale" || method == "bo_rbf") {
    surrogate::Config scfg;
    scfg.kind = method == "bo_rbf" ? surrogate::Kind::rbf : surrogate::Kind::multiscale;
    const search::Objective objective =
        search::lml_objective(library, data, gp::FitBudget{}, seed);
    return search::run_bo_objective(library, embedding, objective, scfg, config.n_init,
                                    config.iters, seed);
  }
  if (method == "random") {
    const search::Objective objective =
        search::lml_objective(library, data, gp::FitBudget{}, seed);
    return search::run_random_objective(library, objective, config.n_init + config.iters, seed);
  }
  if (method == "ga") {
    ga::Config gcfg;
    gcfg.population = 6;
    gcfg.crossovers_per_iter = 1;
    gcfg.mutation_p = config.ga_mutation_p;
    gcfg.max_depth = config.library_depth;
    gcfg.temperature = 0.7;
    gcfg.iters = config.iters;
    gcfg.seed = seed;
    ga::MockProposer proposer(seed);
    return ga::run_ga(library, data, gcfg, proposer);
  }
  throw std::invalid_argument("unknown method '" + method + "'");
}

struct CellOutcome {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
};

ComparisonSummary summarize_from_disk(const ExperimentConfig& config) {
  ComparisonSummary summary;
  summary.config_hash = config.hash();
  summary.iters = config.iters;
  for (const auto& method : config.methods) {
    MethodCurve curve;
    curve.method = method;
    std::vector<search::SearchTrace> traces;
    for (const std::uint64_t seed : config.seeds) {
      const std::string path = trace_path(config, method, seed);
      if (!io::file_exists(path)) continue;
      traces.push_back(search::trace_from_jsonl(io::read_file(path)));
    }
    curve.completed = static_cast<int>(traces.size());
    if (!traces.empty()) {
      for (int t = 0; t <= config.iters; ++t) {
        std::vector<double> bests;
        bests.reserve(traces.size());
        for (const auto& tr : traces) bests.push_back(best_at_round(tr, config.n_init, t));
        const double m = mean_of(bests);
        curve.mean_best.push_back(m);
        curve.std_best.push_back(pop_std_of(bests, m));
      }
      std::vector<double> walls;
      walls.reserve(traces.size());
      for (const auto& tr : traces) walls.push_back(tr.total_seconds());
      curve.wall_mean = mean_of(walls);
      curve.wall_std = pop_std_of(walls, curve.wall_mean);
    }
    summary.curves.push_back(std::move(curve));
  }
  return summary;
}

std::string summary_json(const ComparisonSummary& s) {
  nlohmann::json j;
  j["config_hash"] = s.config_hash;
  j["iters"] = s.iters;
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& c : s.curves) {
    nlohmann::json jc;
    jc["method"] = c.method;
    jc["completed"] = c.completed;
    jc["mean_best"] = c.mean_best;
    jc["std_best"] = c.std_best;
    jc["wall_mean_s"] = c.wall_mean;
    jc["wall_std_s"] = c.wall_std;
    curves.push_back(std::move(jc));
  }
  j["curves"] = std::move(curves);
  return j.dump(2) + "\n";
}

std::string comparison_svg(const ComparisonSummary& s, const std::string& dataset_label) {
  std::vector<svg::Series> series;
  for (const auto& c : s.curves) {
    if (c.mean_best.empty()) continue;
    svg::Series sr;
    sr.label = c.method;
    for (std::size_t t = 0; t < c.mean_best.size(); ++t) {
      sr.x.push_back(static_cast<double>(t));
      sr.y.push_back(c.mean_best[t]);
    }
    series.push_back(std::move(sr));
  }
  return svg::line_chart(series, "Best LML vs iteration (" + dataset_label + ")", "iteration",
                         "best LML (mean over seeds)");
}

}  // namespace

ComparisonSummary run_experiment(const ExperimentConfig& config) {
  config.validate();
  const grammar::KernelLibrary library =
      grammar::generate_library(config.library_depth, grammar::default_bases());
  if (config.n_init + config.iters > library.size()) {
    throw std::invalid_argument("experiment: n_init + iters exceeds the library size (" +
                                std::to_string(library.size()) + ")");
  }

  const Dataset data = experiment_dataset(config);

  std::filesystem::create_directories(config.output_dir + "/cache");
  std::filesystem::create_directories(config.output_dir + "/traces");

  // Distance matrix and embedding, cached by their own lineage key so every
  // config sharing (library, kind, S, seed) reuses the same files.
  const std::string cache_key = library.hash() + "_" +
                                std::string(divergence::kind_name(config.kind)) + "_S" +
                                std::to_string(config.matrix_samples) + "_seed" +
                                std::to_string(config.matrix_seed);
  const std::string dm_path = config.output_dir + "/cache/dm_" + cache_key + ".csv";
  divergence::DistanceMatrix dm;
  if (io::file_exists(dm_path)) {
    dm = divergence::load_distance_matrix(dm_path);
  } else {
    const divergence::ReferenceGrid grid = divergence::make_reference_grid();
    dm = divergence::build_distance_matrix(library, grid, config.kind, config.matrix_samples,
                                           config.matrix_seed);
    divergence::save_distance_matrix(dm, dm_path);
  }

  const std::string emb_path =
      config.output_dir + "/cache/emb_" + cache_key + "_p" + std::to_string(config.embed_dim) +
      ".csv";
  mds::Embedding embedding;
  if (io::file_exists(emb_path)) {
    embedding = mds::load_embedding(emb_path);
  } else {
    embedding = mds::classical_mds(dm, config.embed_dim);
    mds::save_embedding(embedding, emb_path);
  }

  // Independent (method, seed) cells on a bounded worker pool; each cell
  // writes only its own trace files.
  struct Cell {
    std::string method;
    std::uint64_t seed = 0;
  };
  std::vector<Cell> cells;
  for (const auto& method : config.methods) {
    for (const std::uint64_t seed : config.seeds) cells.push_back({method, seed});
  }
  std::vector<CellOutcome> outcomes(cells.size());

  std::atomic<std::size_t> cursor{0};
  const auto worker = [&]() {
    while (true) {
      const std::size_t at = cursor.fetch_add(1);
      if (at >= cells.size()) return;
      const Cell& cell = cells[at];
      CellOutcome& out = outcomes[at];
      out.method = cell.method;
      out.seed = cell.seed;
      try {
        const search::SearchTrace trace =
            run_cell(config, cell.method, cell.seed, library, embedding, data);
        search::save_trace(trace, trace_path(config, cell.method, cell.seed));
        out.ok = true;
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_threads = std::min<std::size_t>(hw, cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  // Summary is derived data: recompute it from the persisted traces.
  const ComparisonSummary summary = summarize_from_disk(config);

  const std::string dataset_label =
      config.csv_path.empty() ? config.benchmark
                              : std::filesystem::path(config.csv_path).filename().string();
  io::write_file(config.output_dir + "/config.json", config.to_json());
  io::write_file(config.output_dir + "/summary.csv", summary_to_csv(summary));
  io::write_file(config.output_dir + "/summary.json", summary_json(summary));
  io::write_file(config.output_dir + "/comparison.svg", comparison_svg(summary, dataset_label));

  // Manifest: config hash plus the content hash of every artifact.
  nlohmann::json manifest;
  manifest["config_hash"] = config.hash();
  manifest["config"] = nlohmann::json::parse(config.to_json());
  nlohmann::json artifacts = nlohmann::json::array();
  std::vector<std::string> files = {"config.json", "summary.csv", "summary.json",
                                    "comparison.svg"};
  files.push_back("cache/dm_" + cache_key + ".csv");
  files.push_back("cache/dm_" + cache_key + ".csv.meta.json");
  files.push_back("cache/emb_" + cache_key + "_p" + std::to_string(config.embed_dim) + ".csv");
  files.push_back("cache/emb_" + cache_key + "_p" + std::to_string(config.embed_dim) +
                  ".csv.meta.json");
  for (const auto& outcome : outcomes) {
    if (!outcome.ok) continue;
    const std::string rel =
        "traces/" + outcome.method + "_seed" + std::to_string(outcome.seed) + ".jsonl";
    files.push_back(rel);
    files.push_back(rel + ".summary.json");
  }
  for (const auto& rel : files) {
    nlohmann::json entry;
    entry["path"] = rel;
    entry["hash"] = hash_hex(io::read_file(config.output_dir + "/" + rel));
    artifacts.push_back(std::move(entry));
  }
  manifest["artifacts"] = std::move(artifacts);
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& outcome : outcomes) {
    if (outcome.ok) continue;
    nlohmann::json f;
    f["method"] = outcome.method;
    f["seed"] = outcome.seed;
    f["error"] = outcome.error;
    failures.push_back(std::move(f));
  }
  manifest["failures"] = std::move(failures);
  io::write_file(config.output_dir + "/manifest.json", manifest.dump(2) + "\n");

  return summary;
}

std::string summary_to_csv(const ComparisonSummary& summary) {
  std::string out = "iteration,method,mean_best_lml,std_best_lml\n";
  for (int t = 0; t <= summary.iters; ++t) {
    for (const auto& c : summary.curves) {
      if (static_cast<std::size_t>(t) >= c.mean_best.size()) continue;
      out += std::to_string(t) + "," + c.method + "," +
             io::format_double(c.mean_best[static_cast<std::size_t>(t)]) + "," +
             io::format_double(c.std_best[static_cast<std::size_t>(t)]) + "\n";
    }
  }
  return out;
}

ComparisonSummary summarize_traces(const ExperimentConfig& config) {
  config.validate();
  return summarize_from_disk(config);
}

VerifyReport verify_experiment(const std::string& output_dir) {
  VerifyReport report;
  const std::string manifest_path = output_dir + "/manifest.json";
  if (!io::file_exists(manifest_path)) {
    report.mismatches.push_back("missing manifest: " + manifest_path);
    return report;
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(manifest_path));
  } catch (const std::exception& e) {
    report.mismatches.push_back(std::string("unreadable manifest: ") + e.what());
    return report;
  }

  try {
    const ExperimentConfig config =
        ExperimentConfig::from_json(manifest.at("config").dump());
    const std::string expected = manifest.at("config_hash").get<std::string>();
    if (config.hash() != expected) {
      report.mismatches.push_back("config hash mismatch: manifest says " + expected +
                                  ", recomputed " + config.hash());
    }
  } catch (const std::exception& e) {
    report.mismatches.push_back(std::string("config block unreadable: ") + e.what());
  }

  for (const auto& entry : manifest.value("artifacts", nlohmann::json::array())) {
    const std::string rel = entry.at("path").get<std::string>();
    const std::string expected = entry.at("hash").get<std::string>();
    const std::string full = output_dir + "/" + rel;
    if (!io::file_exists(full)) {
      report.mismatches.push_back("missing artifact: " + rel);
      continue;
    }
    const std::string actual = hash_hex(io::read_file(full));
    if (actual != expected) {
      report.mismatches.push_back("hash mismatch for " + rel + ": manifest says " + expected +
                                  ", file hashes to " + actual);
    }
  }
  report.ok = report.mismatches.empty();
  return report;
}

namespace {

/// Expected improvement for minimization on the model's standardized scale.
double ei_min(double mu, double sigma, double best) {
  if (sigma <= 1e-12) return std::max(best - mu, 0.0);
  const double u = (best - mu) / sigma;
  const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * kPi);
  const double cdf = 0.5 * std::erfc(-u / std::sqrt(2.0));
  return (best - mu) * cdf + sigma * pdf;
}

Eigen::VectorXd run_downstream_arm(const BenchmarkFunction& fn, const grammar::KernelExpr& expr,
                                   const Eigen::MatrixXd& X0, const Eigen::VectorXd& y0,
                                   const DownstreamConfig& config, std::uint64_t seed) {
  const int budget = config.budget;
  Eigen::MatrixXd X = X0;
  Eigen::VectorXd y = y0;

  const auto normalize_row = [](const Dataset& ds, double x1, double x2) {
    Eigen::RowVector2d z;
    for (int d = 0; d < 2; ++d) {
      const double lo = ds.x_min[d];
      const double hi = ds.x_max[d];
      const double v = d == 0 ? x1 : x2;
      z[d] = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    }
    return z;
  };

  for (int t = static_cast<int>(X0.rows()); t < budget; ++t) {
    const Dataset ds = Dataset::from_raw(X, y);
    Eigen::RowVector2d next;
    bool picked = false;
    try {
      const gp::FittedGP model =
          gp::fit_gp(expr, ds, config.fit_budget,
                     derive_seed(seed, "ds-fit", static_cast<std::uint64_t>(t)));
      const double best = ds.y.minCoeff();

      // Candidate pool + local refinement of the best candidate.
      qmc::SobolSequence pool_seq(2, derive_seed(seed, "ds-pool", static_cast<std::uint64_t>(t)));
      const Eigen::MatrixXd pool = pool_seq.points(256);
      double best_ei = -1.0;
      Eigen::RowVector2d best_x = Eigen::RowVector2d::Zero();
      for (int i = 0; i < pool.rows(); ++i) {
        const double x1 = fn.lo[0] + pool(i, 0) * (fn.hi[0] - fn.lo[0]);
        const double x2 = fn.lo[1] + pool(i, 1) * (fn.hi[1] - fn.lo[1]);
        const gp::PredictResult pr = gp::posterior_predict(model, normalize_row(ds, x1, x2));
        const double ei = ei_min(pr.mean[0], std::sqrt(pr.var[0]), best);
        if (ei > best_ei) {
          best_ei = ei;
          best_x << x1, x2;
        }
      }

      optim::Bounds box;
      box.lo = fn.lo;
      box.hi = fn.hi;
      const auto neg_ei = [&](const Eigen::VectorXd& x) {
        const gp::PredictResult pr =
            gp::posterior_predict(model, normalize_row(ds, x[0], x[1]));
        return -ei_min(pr.mean[0], std::sqrt(pr.var[0]), best);
      };
      const optim::Result refined = optim::nelder_mead(neg_ei, box, best_x.transpose(), 100);
      next << refined.x[0], refined.x[1];
      picked = true;
    } catch (const FitError&) {
    } catch (const NumericalError&) {
    }
    if (!picked) {
      // Surrogate failed: fall back to a seeded uniform point so both arms
      // keep identical budgets.
      Rng rng(derive_seed(seed, "ds-fallback", static_cast<std::uint64_t>(t)));
      next << fn.lo[0] + rng.uniform() * (fn.hi[0] - fn.lo[0]),
          fn.lo[1] + rng.uniform() * (fn.hi[1] - fn.lo[1]);
    }

    X.conservativeResize(X.rows() + 1, Eigen::NoChange);
    X.row(X.rows() - 1) = next;
    y.conservativeResize(y.size() + 1);
    y[y.size() - 1] = fn.eval(next[0], next[1]);
  }

  Eigen::VectorXd curve(budget);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < budget; ++i) {
    best = std::min(best, y[i]);
    curve[i] = best;
  }
  return curve;
}

}  // namespace

DownstreamResult downstream_bo(const DownstreamConfig& config) {
  if (config.n_init < 2) throw std::invalid_argument("downstream: n_init must be >= 2");
  if (config.budget < config.n_init) {
    throw std::invalid_argument("downstream: budget must be >= n_init");
  }
  if (config.seeds.empty()) throw std::invalid_argument("downstream: seeds must be non-empty");
  const BenchmarkFunction& fn = benchmark_by_name(config.benchmark);
  const grammar::KernelExpr surrogate_expr = grammar::parse_expr(config.surrogate_expr);
  const grammar::KernelExpr baseline_expr = grammar::parse_expr(config.baseline_expr);

  DownstreamResult result;
  result.surrogate_expr = surrogate_expr.canonical_string();
  result.baseline_expr = baseline_expr.canonical_string();
  result.best_surrogate.resize(static_cast<Eigen::Index>(config.seeds.size()), config.budget);
  result.best_baseline.resize(static_cast<Eigen::Index>(config.seeds.size()), config.budget);

  for (std::size_t si = 0; si < config.seeds.size(); ++si) {
    const std::uint64_t seed = config.seeds[si];
    // Shared initial design for both arms.
    qmc::SobolSequence init_seq(2, derive_seed(seed, "ds-init"));
    const Eigen::MatrixXd u = init_seq.points(config.n_init);
    Eigen::MatrixXd X0(config.n_init, 2);
    Eigen::VectorXd y0(config.n_init);
    for (int i = 0; i < config.n_init; ++i) {
      const double x1 = fn.lo[0] + u(i, 0) * (fn.hi[0] - fn.lo[0]);
      const double x2 = fn.lo[1] + u(i, 1) * (fn.hi[1] - fn.lo[1]);
      X0(i, 0) = x1;
      X0(i, 1) = x2;
      y0[i] = fn.eval(x1, x2);
    }
    result.best_surrogate.row(static_cast<Eigen::Index>(si)) =
        run_downstream_arm(fn, surrogate_expr, X0, y0, config, seed).transpose();
    result.best_baseline.row(static_cast<Eigen::Index>(si)) =
        run_downstream_arm(fn, baseline_expr, X0, y0, config, seed).transpose();
  }
  return result;
}

std::string downstream_to_csv(const DownstreamResult& result) {
  std::string out = "iteration,arm,mean_best_objective,std_best_objective\n";
  const int budget = static_cast<int>(result.best_surrogate.cols());
  const auto emit = [&](const Eigen::MatrixXd& curves, const std::string& arm) {
    for (int t = 0; t < budget; ++t) {
      std::vector<double> vals;
      vals.reserve(static_cast<std::size_t>(curves.rows()));
      for (int s = 0; s < curves.rows(); ++s) vals.push_back(curves(s, t));
      const double m = mean_of(vals);
      out += std::to_string(t + 1) + "," + arm + "," + io::format_double(m) + "," +
             io::format_double(pop_std_of(vals, m)) + "\n";
    }
  };
  emit(result.best_surrogate, result.surrogate_expr);
  emit(result.best_baseline, result.baseline_expr);
  return out;
}

}  // namespace km::bench
