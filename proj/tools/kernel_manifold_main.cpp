// kernel-manifold: command-line front end for the kernel search toolkit.
//
// Subcommands: library, distances, diagnose, embed, search, ga-search, bench,
// downstream-bo, verify. All outputs are CSV / JSON-lines / JSON / SVG files;
// LLM credentials come from the environment only.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "km/bench.hpp"
#include "km/dataset.hpp"
#include "km/divergence.hpp"
#include "km/errors.hpp"
#include "km/ga.hpp"
#include "km/grammar.hpp"
#include "km/io.hpp"
#include "km/llm.hpp"
#include "km/mds.hpp"
#include "km/search.hpp"
#include "km/surrogate.hpp"

namespace {

/// Parses "7", "1..5", or "1,4,9" into a seed list.
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  const auto range_at = text.find("..");
  if (range_at != std::string::npos) {
    const std::uint64_t lo = std::stoull(text.substr(0, range_at));
    const std::uint64_t hi = std::stoull(text.substr(range_at + 2));
    if (hi < lo) throw std::invalid_argument("seed range '" + text + "' is descending");
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::size_t at = 0;
  while (at < text.size()) {
    const auto comma = text.find(',', at);
    const std::string piece =
        text.substr(at, comma == std::string::npos ? std::string::npos : comma - at);
    if (!piece.empty()) seeds.push_back(std::stoull(piece));
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  if (seeds.empty()) throw std::invalid_argument("no seeds in '" + text + "'");
  return seeds;
}

std::vector<km::grammar::BaseKind> parse_bases(const std::string& text) {
  std::vector<km::grammar::BaseKind> bases;
  std::size_t at = 0;
  while (at < text.size()) {
    const auto comma = text.find(',', at);
    const std::string piece =
        text.substr(at, comma == std::string::npos ? std::string::npos : comma - at);
    if (!piece.empty()) bases.push_back(km::grammar::base_from_name(piece));
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  if (bases.empty()) throw std::invalid_argument("no base kernels in '" + text + "'");
  return bases;
}

struct DataSource {
  std::string csv_path;
  std::string x_column = "x";
  std::string y_column = "y";
  std::string benchmark;
  int samples = 40;
  std::uint64_t data_seed = 0;
};

void add_data_flags(CLI::App* cmd, DataSource& src) {
  cmd->add_option("--data", src.csv_path, "CSV file with the training series");
  cmd->add_option("--x-column", src.x_column, "x column name (default x)");
  cmd->add_option("--y-column", src.y_column, "y column name (default y)");
  cmd->add_option("--benchmark", src.benchmark,
                  "benchmark function sampled when no --data is given");
  cmd->add_option("--samples", src.samples, "benchmark sample count (default 40)");
  cmd->add_option("--data-seed", src.data_seed, "benchmark sampling seed (default 0)");
}

km::Dataset load_data(const DataSource& src) {
  if (!src.csv_path.empty()) {
    const km::CsvLoadReport report =
        km::load_csv_series(src.csv_path, src.x_column, src.y_column);
    if (report.dropped_rows > 0) {
      std::cerr << "note: dropped " << report.dropped_rows << " non-finite rows from "
                << src.csv_path << "\n";
    }
    return report.dataset;
  }
  if (!src.benchmark.empty()) {
    return km::bench::sample_benchmark(src.benchmark, src.samples, src.data_seed);
  }
  throw std::invalid_argument("either --data or --benchmark is required");
}

void print_trace_line(const km::search::SearchTrace& trace, const std::string& path) {
  std::printf("%s seed=%llu evals=%zu best_lml=%.6f best=%s -> %s\n", trace.method.c_str(),
              static_cast<unsigned long long>(trace.seed), trace.records.size(),
              trace.best_lml(), trace.best_expr().c_str(), path.c_str());
}

int run_library(const std::string& bases_text, int max_depth, const std::string& out) {
  const km::grammar::KernelLibrary lib =
      km::grammar::generate_library(max_depth, parse_bases(bases_text));
  km::grammar::save_library(lib, out);
  std::printf("library: %d kernels (max depth %d) -> %s (hash %s)\n", lib.size(), max_depth,
              out.c_str(), lib.hash().c_str());
  return 0;
}

int run_distances(const std::string& library_path, const std::string& kind_text, int samples,
                  std::uint64_t seed, const std::string& transform_text, double eps,
                  double radius, const std::string& out) {
  const km::grammar::KernelLibrary lib = km::grammar::load_library(library_path);
  const km::divergence::ReferenceGrid grid = km::divergence::make_reference_grid();
  km::divergence::DistanceMatrix dm = km::divergence::build_distance_matrix(
      lib, grid, km::divergence::kind_from_name(kind_text), samples, seed);
  if (transform_text == "log1p") {
    dm = km::divergence::transform_log1p(dm);
  } else if (transform_text == "log_eps") {
    dm = km::divergence::transform_log_eps(dm, eps);
  } else if (transform_text == "chordal") {
    dm = km::divergence::transform_chordal(dm, radius);
  } else if (transform_text != "none") {
    throw std::invalid_argument("unknown transform '" + transform_text +
                                "' (valid: none, log1p, log_eps, chordal)");
  }
  km::divergence::save_distance_matrix(dm, out);
  std::printf("distances: %dx%d %s (S=%d seed=%llu transform=%s) -> %s\n", dm.size(), dm.size(),
              kind_text.c_str(), samples, static_cast<unsigned long long>(seed),
              transform_text.c_str(), out.c_str());
  return 0;
}

int run_diagnose(const std::string& matrix_path, int top) {
  const km::divergence::DistanceMatrix dm = km::divergence::load_distance_matrix(matrix_path);
  const km::divergence::GramSpectrum spec = km::divergence::gram_spectrum(dm.D);
  std::printf("matrix: %s (%dx%d, kind=%s, transform=%s)\n", matrix_path.c_str(), dm.size(),
              dm.size(), km::divergence::kind_name(dm.kind),
              km::divergence::transform_name(dm.transform));
  std::printf("min eigenvalue:      %.12g\n", spec.min_eigenvalue);
  std::printf("negative-mass ratio: %.12g\n", spec.negative_mass);
  const int shown = std::min<int>(top, static_cast<int>(spec.eigenvalues.size()));
  std::printf("top %d eigenvalues:\n", shown);
  for (int i = 0; i < shown; ++i) std::printf("  %2d  %.12g\n", i + 1, spec.eigenvalues[i]);
  return 0;
}

int run_embed(const std::string& matrix_path, int dim, bool curve, int max_dim, double tolerance,
              int kmeans_k, std::uint64_t kmeans_seed, const std::string& out) {
  const km::divergence::DistanceMatrix dm = km::divergence::load_distance_matrix(matrix_path);
  if (curve) {
    const km::mds::ReconstructionCurve rc =
        km::mds::reconstruction_curve(dm, std::min(max_dim, dm.size() - 1));
    km::mds::save_curve(rc, out);
    const km::mds::DimensionSelection sel = km::mds::select_dimension(rc, tolerance);
    std::printf("curve: %zu dims -> %s; selected dim %d (%s, tolerance %.3g of median %.6g)\n",
                rc.dims.size(), out.c_str(), sel.dim,
                sel.converged ? "converged" : "not converged", tolerance, rc.median_offdiag);
    return 0;
  }
  const km::mds::Embedding emb = km::mds::classical_mds(dm, dim);
  km::mds::save_embedding(emb, out);
  std::printf("embedding: %dx%d (requested p=%d, dropped negative mass %.6g) -> %s\n", emb.n(),
              emb.p(), emb.requested_p, emb.dropped_negative_mass, out.c_str());
  if (kmeans_k > 1) {
    const km::mds::ClusterReport report = km::mds::kmeans_validate(emb, dm, kmeans_k, kmeans_seed);
    std::printf("kmeans k=%d: intra median %.6g, inter median %.6g (%d iterations)\n", report.k,
                report.intra_median, report.inter_median, report.iterations);
  }
  return 0;
}

int run_search(const std::string& library_path, const std::string& embedding_path,
               const DataSource& src, const std::string& method, int n_init, int iters,
               const std::string& seeds_text, const std::string& out_dir) {
  const km::grammar::KernelLibrary lib = km::grammar::load_library(library_path);
  const km::mds::Embedding emb = km::mds::load_embedding(embedding_path);
  const km::Dataset data = load_data(src);
  std::filesystem::create_directories(out_dir);
  for (const std::uint64_t seed : parse_seeds(seeds_text)) {
    km::search::SearchTrace trace;
    if (method == "random") {
      trace = km::search::run_random(lib, data, n_init + iters, seed);
    } else {
      km::surrogate::Config cfg;
      cfg.kind = km::surrogate::kind_from_name(method == "bo_rbf" ? "rbf" : "multiscale");
      if (method != "bo_rbf" && method != "bo_multiscale") {
        throw std::invalid_argument("unknown method '" + method +
                                    "' (valid: bo_multiscale, bo_rbf, random)");
      }
      trace = km::search::run_bo(lib, emb, data, cfg, n_init, iters, seed);
    }
    const std::string path =
        out_dir + "/" + method + "_seed" + std::to_string(seed) + ".jsonl";
    km::search::save_trace(trace, path);
    print_trace_line(trace, path);
  }
  return 0;
}

int run_ga_search(const std::string& library_path, const DataSource& src, double p,
                  int max_depth, const std::string& proposer_text, int population, int iters,
                  double temperature, const std::string& seeds_text, const std::string& out_dir,
                  const std::string& replay_log, bool replay_only) {
  const km::grammar::KernelLibrary lib = km::grammar::load_library(library_path);
  const km::Dataset data = load_data(src);
  std::filesystem::create_directories(out_dir);

  std::unique_ptr<km::llm::LlmClient> client;
  if (proposer_text == "llm") {
    km::llm::ClientConfig cfg = km::llm::config_from_env();
    if (!replay_log.empty()) cfg.replay_log_path = replay_log;
    cfg.replay_only = replay_only;
    client = std::make_unique<km::llm::LlmClient>(cfg);
  } else if (proposer_text != "mock") {
    throw std::invalid_argument("unknown proposer '" + proposer_text + "' (valid: mock, llm)");
  }

  int exit_code = 0;
  for (const std::uint64_t seed : parse_seeds(seeds_text)) {
    km::ga::Config cfg;
    cfg.population = population;
    cfg.mutation_p = p;
    if (max_depth > 0) cfg.max_depth = max_depth;
    cfg.temperature = temperature;
    cfg.iters = iters;
    cfg.seed = seed;

    km::search::SearchTrace trace;
    if (client) {
      km::llm::LlmProposer proposer(*client);
      trace = km::ga::run_ga(lib, data, cfg, proposer);
    } else {
      km::ga::MockProposer proposer(seed);
      trace = km::ga::run_ga(lib, data, cfg, proposer);
    }
    const std::string path = out_dir + "/ga_seed" + std::to_string(seed) + ".jsonl";
    km::search::save_trace(trace, path);
    print_trace_line(trace, path);
    if (!trace.abort_reason.empty()) {
      std::cerr << "ga-search aborted (seed " << seed << "): " << trace.abort_reason
                << "; partial trace saved to " << path << "\n";
      exit_code = 1;
      break;
    }
  }
  return exit_code;
}

int run_bench(const std::string& config_path, const std::string& output_dir) {
  km::bench::ExperimentConfig cfg;
  if (!config_path.empty()) {
    cfg = km::bench::ExperimentConfig::from_json(km::io::read_file(config_path));
  }
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  const km::bench::ComparisonSummary summary = km::bench::run_experiment(cfg);
  std::printf("experiment %s -> %s\n", summary.config_hash.c_str(), cfg.output_dir.c_str());
  for (const auto& curve : summary.curves) {
    if (curve.mean_best.empty()) {
      std::printf("  %-14s no completed runs\n", curve.method.c_str());
      continue;
    }
    std::printf("  %-14s final mean best LML %.6f (std %.6f, %d/%zu runs, %.2fs mean)\n",
                curve.method.c_str(), curve.mean_best.back(), curve.std_best.back(),
                curve.completed, cfg.seeds.size(), curve.wall_mean);
  }
  return 0;
}

int run_downstream(const std::string& benchmark, const std::string& surrogate,
                   const std::string& baseline, int n_init, int budget,
                   const std::string& seeds_text, const std::string& out) {
  km::bench::DownstreamConfig cfg;
  cfg.benchmark = benchmark;
  cfg.surrogate_expr = surrogate;
  cfg.baseline_expr = baseline;
  cfg.n_init = n_init;
  cfg.budget = budget;
  cfg.seeds = parse_seeds(seeds_text);
  const km::bench::DownstreamResult result = km::bench::downstream_bo(cfg);
  km::io::write_file(out, km::bench::downstream_to_csv(result));
  const Eigen::Index last = result.best_surrogate.cols() - 1;
  std::printf("downstream %s: %s final mean best %.6f vs %s %.6f -> %s\n", benchmark.c_str(),
              result.surrogate_expr.c_str(), result.best_surrogate.col(last).mean(),
              result.baseline_expr.c_str(), result.best_baseline.col(last).mean(), out.c_str());
  return 0;
}

int run_verify(const std::string& dir) {
  const km::bench::VerifyReport report = km::bench::verify_experiment(dir);
  if (report.ok) {
    std::printf("verify: %s OK\n", dir.c_str());
    return 0;
  }
  std::printf("verify: %s FAILED (%zu problems)\n", dir.c_str(), report.mismatches.size());
  for (const auto& m : report.mismatches) std::printf("  %s\n", m.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel-manifold: Gaussian process kernel search toolkit"};
  app.require_subcommand(1);

  // library
  auto* lib_cmd = app.add_subcommand("library", "Generate the kernel library manifest");
  std::string lib_bases = "SE,PER,RQ";
  int lib_depth = 3;
  std::string lib_out = "library.json";
  lib_cmd->add_option("--bases", lib_bases, "comma-separated base kernels (default SE,PER,RQ)");
  lib_cmd->add_option("--max-depth", lib_depth, "maximum leaf count (default 3)");
  lib_cmd->add_option("--out", lib_out, "output JSON path");

  // distances
  auto* dist_cmd = app.add_subcommand("distances", "Build a pairwise divergence matrix");
  std::string dist_library = "library.json";
  std::string dist_kind = "sqrt_js_sq";
  int dist_samples = 64;
  std::uint64_t dist_seed = 7;
  std::string dist_transform = "none";
  double dist_eps = 1e-12;
  double dist_radius = 1.0;
  std::string dist_out = "D.csv";
  dist_cmd->add_option("--library", dist_library, "library manifest JSON");
  dist_cmd->add_option("--kind", dist_kind,
                       "hellinger_sq | kl_sym | js | sqrt_js_sq (default sqrt_js_sq)");
  dist_cmd->add_option("--samples", dist_samples, "Monte Carlo sample count S (default 64)");
  dist_cmd->add_option("--seed", dist_seed, "sampling seed (default 7)");
  dist_cmd->add_option("--transform", dist_transform,
                       "none | log1p | log_eps | chordal (default none)");
  dist_cmd->add_option("--eps", dist_eps, "epsilon for log_eps (default 1e-12)");
  dist_cmd->add_option("--radius", dist_radius, "sphere radius for chordal (default 1)");
  dist_cmd->add_option("--out", dist_out, "output CSV path");

  // diagnose
  auto* diag_cmd = app.add_subcommand("diagnose", "Print the Gram spectrum of a matrix");
  std::string diag_matrix;
  int diag_top = 10;
  diag_cmd->add_option("--matrix", diag_matrix, "distance matrix CSV")->required();
  diag_cmd->add_option("--top", diag_top, "eigenvalues to print (default 10)");

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "Classical MDS embedding of a matrix");
  std::string embed_matrix;
  int embed_dim = 15;
  bool embed_curve = false;
  int embed_max_dim = 100;
  double embed_tolerance = 0.05;
  int embed_kmeans = 0;
  std::uint64_t embed_kmeans_seed = 0;
  std::string embed_out = "Z.csv";
  embed_cmd->add_option("--matrix", embed_matrix, "distance matrix CSV")->required();
  embed_cmd->add_option("--dim", embed_dim, "embedding dimension (default 15)");
  embed_cmd->add_flag("--curve", embed_curve, "emit the reconstruction curve instead");
  embed_cmd->add_option("--max-dim", embed_max_dim, "curve upper dimension (default 100)");
  embed_cmd->add_option("--tolerance", embed_tolerance,
                        "dimension selection tolerance (default 0.05)");
  embed_cmd->add_option("--kmeans", embed_kmeans, "also run k-means validation with this k");
  embed_cmd->add_option("--kmeans-seed", embed_kmeans_seed, "k-means seed (default 0)");
  embed_cmd->add_option("--out", embed_out, "output CSV path");

  // search
  auto* search_cmd = app.add_subcommand("search", "Kernel search over the embedded library");
  std::string search_library = "library.json";
  std::string search_embedding = "Z.csv";
  DataSource search_src;
  std::string search_method = "bo_multiscale";
  int search_n_init = 3;
  int search_iters = 12;
  std::string search_seeds = "1";
  std::string search_out = "runs";
  search_cmd->add_option("--library", search_library, "library manifest JSON");
  search_cmd->add_option("--embedding", search_embedding, "embedding CSV");
  add_data_flags(search_cmd, search_src);
  search_cmd->add_option("--method", search_method,
                         "bo_multiscale | bo_rbf | random (default bo_multiscale)");
  search_cmd->add_option("--n-init", search_n_init, "initial design size (default 3)");
  search_cmd->add_option("--iters", search_iters, "search iterations (default 12)");
  search_cmd->add_option("--seed", search_seeds, "seed, list, or range like 1..5");
  search_cmd->add_option("--out", search_out, "output directory (default runs)");

  // ga-search
  auto* ga_cmd = app.add_subcommand("ga-search", "Evolutionary kernel search");
  std::string ga_library = "library.json";
  DataSource ga_src;
  double ga_p = 0.7;
  int ga_max_depth = 3;
  std::string ga_proposer = "mock";
  int ga_population = 6;
  int ga_iters = 12;
  double ga_temperature = 0.7;
  std::string ga_seeds = "1";
  std::string ga_out = "runs";
  std::string ga_replay_log;
  bool ga_replay_only = false;
  ga_cmd->add_option("--library", ga_library, "library manifest JSON");
  add_data_flags(ga_cmd, ga_src);
  ga_cmd->add_option("--p", ga_p, "mutation probability (default 0.7)");
  ga_cmd->add_option("--max-depth", ga_max_depth,
                     "maximum kernel depth; 0 = unrestricted (default 3)");
  ga_cmd->add_option("--proposer", ga_proposer, "mock | llm (default mock)");
  ga_cmd->add_option("--population", ga_population, "population size (default 6)");
  ga_cmd->add_option("--iters", ga_iters, "generations (default 12)");
  ga_cmd->add_option("--temperature", ga_temperature, "proposer temperature (default 0.7)");
  ga_cmd->add_option("--seed", ga_seeds, "seed, list, or range like 1..5");
  ga_cmd->add_option("--out", ga_out, "output directory (default runs)");
  ga_cmd->add_option("--replay-log", ga_replay_log, "LLM replay log path override");
  ga_cmd->add_flag("--replay-only", ga_replay_only, "answer only from the replay log");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Run a multi-method comparison experiment");
  std::string bench_config;
  std::string bench_out;
  bench_cmd->add_option("--config", bench_config, "ExperimentConfig JSON file");
  bench_cmd->add_option("--output-dir", bench_out, "override the output directory");

  // downstream-bo
  auto* ds_cmd = app.add_subcommand("downstream-bo",
                                    "Compare two GP surrogates on a benchmark function");
  std::string ds_benchmark = "ackley";
  std::string ds_surrogate = "(SE * (RQ + RQ))";
  std::string ds_baseline = "SE";
  int ds_n_init = 5;
  int ds_budget = 25;
  std::string ds_seeds = "1..5";
  std::string ds_out = "downstream.csv";
  ds_cmd->add_option("--benchmark", ds_benchmark, "benchmark function (default ackley)");
  ds_cmd->add_option("--surrogate", ds_surrogate, "surrogate kernel expression");
  ds_cmd->add_option("--baseline", ds_baseline, "baseline kernel expression (default SE)");
  ds_cmd->add_option("--n-init", ds_n_init, "shared initial design size (default 5)");
  ds_cmd->add_option("--budget", ds_budget, "total evaluations per arm (default 25)");
  ds_cmd->add_option("--seed", ds_seeds, "seed, list, or range like 1..5");
  ds_cmd->add_option("--out", ds_out, "output CSV path");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "Re-hash experiment artifacts");
  std::string verify_dir = "out";
  verify_cmd->add_option("--dir", verify_dir, "experiment output directory (default out)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (lib_cmd->parsed()) return run_library(lib_bases, lib_depth, lib_out);
    if (dist_cmd->parsed()) {
      return run_distances(dist_library, dist_kind, dist_samples, dist_seed, dist_transform,
                           dist_eps, dist_radius, dist_out);
    }
    if (diag_cmd->parsed()) return run_diagnose(diag_matrix, diag_top);
    if (embed_cmd->parsed()) {
      return run_embed(embed_matrix, embed_dim, embed_curve, embed_max_dim, embed_tolerance,
                       embed_kmeans, embed_kmeans_seed, embed_out);
    }
    if (search_cmd->parsed()) {
      return run_search(search_library, search_embedding, search_src, search_method,
                        search_n_init, search_iters, search_seeds, search_out);
    }
    if (ga_cmd->parsed()) {
      return run_ga_search(ga_library, ga_src, ga_p, ga_max_depth, ga_proposer, ga_population,
                           ga_iters, ga_temperature, ga_seeds, ga_out, ga_replay_log,
                           ga_replay_only);
    }
    if (bench_cmd->parsed()) return run_bench(bench_config, bench_out);
    if (ds_cmd->parsed()) {
      return run_downstream(ds_benchmark, ds_surrogate, ds_baseline, ds_n_init, ds_budget,
                            ds_seeds, ds_out);
    }
    if (verify_cmd->parsed()) return run_verify(verify_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
