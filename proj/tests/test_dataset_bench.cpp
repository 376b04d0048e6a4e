#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>
#include <Eigen/Core>

#include "km/bench.hpp"
#include "km/dataset.hpp"
#include "km/errors.hpp"
#include "km/io.hpp"
#include "km/search.hpp"
#include "km/svg.hpp"

using namespace km;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& stem) {
  static std::atomic<int> counter{0};
  const fs::path dir =
      fs::temp_directory_path() / "km_bench_tests" / (stem + "_" + std::to_string(counter++));
  fs::remove_all(dir);  // leftovers from earlier runs must not leak in
  fs::create_directories(dir);
  return dir.string();
}

std::string fresh_file(const std::string& stem) {
  return fresh_dir(stem) + "/" + stem + ".csv";
}

}  // namespace

TEST_CASE("raw datasets normalize inputs and standardize targets") {
  Eigen::MatrixXd X(4, 2);
  X << 0.0, 10.0, 2.0, 10.0, 4.0, 10.0, 8.0, 10.0;
  Eigen::VectorXd y(4);
  y << 3.0, 5.0, 7.0, 9.0;
  const auto ds = Dataset::from_raw(X, y);

  CHECK(ds.n() == 4);
  CHECK(ds.d() == 2);
  CHECK(ds.X.col(0).minCoeff() == 0.0);
  CHECK(ds.X.col(0).maxCoeff() == 1.0);
  CHECK(ds.X(1, 0) == doctest::Approx(0.25).epsilon(1e-15));
  // Constant input dimensions collapse to zero rather than dividing by zero.
  CHECK(ds.X.col(1).cwiseAbs().maxCoeff() == 0.0);

  CHECK(ds.y.mean() == doctest::Approx(0.0).epsilon(1e-14));
  const double var = ds.y.array().square().mean();
  CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ds.y_mean == doctest::Approx(6.0));

  // The metadata inverts the mapping exactly.
  CHECK((ds.denormalize_X() - X).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ds.denormalize_y() - y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("constant targets keep unit scale instead of dividing by zero") {
  Eigen::MatrixXd X(3, 1);
  X << 0.0, 1.0, 2.0;
  Eigen::VectorXd y = Eigen::VectorXd::Constant(3, 4.5);
  const auto ds = Dataset::from_raw(X, y);
  CHECK(ds.y_std == 1.0);
  CHECK(ds.y.cwiseAbs().maxCoeff() < 1e-15);
  CHECK((ds.denormalize_y() - y).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("datasets reject tiny or non-finite input") {
  Eigen::MatrixXd X(1, 1);
  X << 0.0;
  Eigen::VectorXd y(1);
  y << 1.0;
  CHECK_THROWS_AS((void)Dataset::from_raw(X, y), std::invalid_argument);

  Eigen::MatrixXd X2(2, 1);
  X2 << 0.0, std::nan("");
  Eigen::VectorXd y2(2);
  y2 << 1.0, 2.0;
  CHECK_THROWS_AS((void)Dataset::from_raw(X2, y2), std::invalid_argument);

  Eigen::MatrixXd X3(2, 1);
  X3 << 0.0, 1.0;
  Eigen::VectorXd y3(2);
  y3 << 1.0, INFINITY;
  CHECK_THROWS_AS((void)Dataset::from_raw(X3, y3), std::invalid_argument);

  Eigen::VectorXd y_short(1);
  y_short << 1.0;
  CHECK_THROWS_AS((void)Dataset::from_raw(X3, y_short), std::invalid_argument);
}

TEST_CASE("normalized wrapper keeps values verbatim with identity metadata") {
  Eigen::MatrixXd X(1, 2);
  X << 0.25, 0.75;
  Eigen::VectorXd y(1);
  y << -1.5;
  const auto ds = Dataset::from_normalized(X, y);
  CHECK(ds.n() == 1);
  CHECK(ds.X(0, 1) == 0.75);
  CHECK(ds.y(0) == -1.5);
  CHECK(ds.denormalize_y()(0) == -1.5);
}

TEST_CASE("csv series load drops bad rows, sorts by x and reports columns") {
  const std::string path = fresh_file("series");
  io::write_file(path,
                 "t,extra,value\n"
                 "3.0,9,30.0\n"
                 "1.0,9,10.0\n"
                 "2.0,9,nan\n"
                 "2.5,9,25.0\n");
  const auto report = load_csv_series(path, "t", "value");
  CHECK(report.dropped_rows == 1);
  REQUIRE(report.dataset.n() == 3);
  // Sorted by x: raw order 1.0, 2.5, 3.0.
  const Eigen::MatrixXd raw_x = report.dataset.denormalize_X();
  CHECK(raw_x(0, 0) == doctest::Approx(1.0));
  CHECK(raw_x(1, 0) == doctest::Approx(2.5));
  CHECK(raw_x(2, 0) == doctest::Approx(3.0));
  const Eigen::VectorXd raw_y = report.dataset.denormalize_y();
  CHECK(raw_y(0) == doctest::Approx(10.0));
  CHECK(raw_y(2) == doctest::Approx(30.0));

  CHECK_THROWS_WITH_AS((void)load_csv_series(path, "missing", "value"),
                       doctest::Contains("missing"), std::invalid_argument);
  CHECK_THROWS_AS((void)load_csv_series(path + ".nope", "t", "value"), std::runtime_error);

  const std::string empty_path = fresh_file("empty");
  io::write_file(empty_path, "t,value\nnan,1\n2,nan\n");
  CHECK_THROWS_WITH_AS((void)load_csv_series(empty_path, "t", "value"),
                       doctest::Contains("usable"), std::invalid_argument);
}

TEST_CASE("month stamps become uniformly spaced decimal years") {
  const std::string path = fresh_file("months");
  io::write_file(path,
                 "month,passengers\n"
                 "1949-01,112\n"
                 "1949-02,118\n"
                 "1949-03,132\n"
                 "1949-04,129\n");
  const auto report = load_csv_series(path, "month", "passengers");
  CHECK(report.dropped_rows == 0);
  REQUIRE(report.dataset.n() == 4);
  const Eigen::MatrixXd raw_x = report.dataset.denormalize_X();
  for (int i = 0; i + 1 < 4; ++i) {
    CHECK(raw_x(i + 1, 0) - raw_x(i, 0) == doctest::Approx(1.0 / 12.0).epsilon(1e-9));
  }
  CHECK(raw_x(0, 0) == doctest::Approx(1949.0 + 0.5 / 12.0).epsilon(1e-12));
}

TEST_CASE("saved datasets reload with the original raw values") {
  Eigen::MatrixXd X(5, 2);
  X << 0.0, -3.0, 1.0, -1.0, 2.0, 0.0, 3.0, 2.0, 4.0, 5.0;
  Eigen::VectorXd y(5);
  y << 10.0, 11.5, 9.0, 14.25, 8.0;
  const auto ds = Dataset::from_raw(X, y);

  const std::string path = fresh_file("roundtrip");
  save_dataset_csv(ds, path);
  const auto back = load_csv_dataset(path, {"x0", "x1"}, "y");
  CHECK(back.dropped_rows == 0);
  REQUIRE(back.dataset.n() == 5);
  CHECK((back.dataset.denormalize_X() - X).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.dataset.denormalize_y() - y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("benchmark functions reproduce their published optima") {
  struct Golden {
    const char* name;
    double x1, x2, value;
  };
  const std::vector<Golden> goldens = {
      {"eggholder", 512.0, 404.2319, -959.6406627106155},
      {"ackley", 0.0, 0.0, 0.0},
      {"dropwave", 0.0, 0.0, -1.0},
      {"schwefel", 420.9687, 420.9687, 2.545567497236334e-05},
      {"rastrigin", 0.0, 0.0, 0.0},
      {"levy", 1.0, 1.0, 0.0},
      {"bukin", -10.0, 1.0, 0.0},
  };
  for (const auto& g : goldens) {
    const auto& f = bench::benchmark_by_name(g.name);
    CHECK(std::abs(f.eval(g.x1, g.x2) - g.value) < 1e-9);
    // The optimum lies inside the advertised box.
    CHECK(g.x1 >= f.lo[0]);
    CHECK(g.x1 <= f.hi[0]);
    CHECK(g.x2 >= f.lo[1]);
    CHECK(g.x2 <= f.hi[1]);
  }
}

TEST_CASE("the benchmark catalog is fixed and closed") {
  const auto& all = bench::benchmark_functions();
  REQUIRE(all.size() == 7);
  const std::vector<std::string> names = {"eggholder", "ackley",    "dropwave", "schwefel",
                                          "rastrigin", "levy", "bukin"};
  for (std::size_t i = 0; i < names.size(); ++i) CHECK(all[i].name == names[i]);

  CHECK(all[0].lo == Eigen::Vector2d(-512.0, -512.0));
  CHECK(all[0].hi == Eigen::Vector2d(512.0, 512.0));
  // Bukin's box is asymmetric.
  const auto& bukin = bench::benchmark_by_name("bukin");
  CHECK(bukin.lo == Eigen::Vector2d(-15.0, -3.0));
  CHECK(bukin.hi == Eigen::Vector2d(-5.0, 3.0));

  CHECK_THROWS_WITH_AS((void)bench::benchmark_by_name("rosenbrock"), doctest::Contains("ackley"),
                       std::invalid_argument);
}

TEST_CASE("benchmark sampling is deterministic and stays inside the box") {
  const auto a = bench::sample_benchmark("dropwave", 24, 7);
  const auto b = bench::sample_benchmark("dropwave", 24, 7);
  CHECK(a.X == b.X);
  CHECK(a.y == b.y);
  const auto c = bench::sample_benchmark("dropwave", 24, 8);
  CHECK(a.y != c.y);

  CHECK(a.n() == 24);
  CHECK(a.d() == 2);
  const auto& f = bench::benchmark_by_name("dropwave");
  const Eigen::MatrixXd raw = a.denormalize_X();
  for (int i = 0; i < raw.rows(); ++i) {
    for (int j = 0; j < 2; ++j) {
      CHECK(raw(i, j) > f.lo[j]);
      CHECK(raw(i, j) < f.hi[j]);
    }
    // Targets are the function values at the raw points.
    const double expected = f.eval(raw(i, 0), raw(i, 1));
    CHECK(a.denormalize_y()(i) == doctest::Approx(expected).epsilon(1e-10));
  }

  CHECK_THROWS_AS((void)bench::sample_benchmark("dropwave", 3, 0), std::invalid_argument);
}

TEST_CASE("experiment configs round-trip through json with a stable hash") {
  bench::ExperimentConfig cfg;
  cfg.benchmark = "levy";
  cfg.samples = 30;
  cfg.data_seed = 11;
  cfg.methods = {"bo_multiscale", "ga"};
  cfg.n_init = 4;
  cfg.iters = 6;
  cfg.seeds = {3, 1, 4};
  cfg.ga_mutation_p = 0.4;
  cfg.kind = divergence::Kind::hellinger_sq;
  cfg.matrix_samples = 16;
  cfg.matrix_seed = 5;
  cfg.library_depth = 2;
  cfg.embed_dim = 7;
  cfg.output_dir = "elsewhere";

  const std::string text = cfg.to_json();
  const auto back = bench::ExperimentConfig::from_json(text);
  CHECK(back.to_json() == text);
  CHECK(back.hash() == cfg.hash());
  CHECK(back.kind == divergence::Kind::hellinger_sq);
  CHECK(back.seeds == cfg.seeds);

  auto other = cfg;
  other.iters = 7;
  CHECK(other.hash() != cfg.hash());
}

TEST_CASE("experiment validation rejects malformed configurations") {
  bench::ExperimentConfig cfg;

  auto expect_invalid = [](bench::ExperimentConfig c, const char* needle) {
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains(needle), std::invalid_argument);
  };

  {
    auto c = cfg;
    c.methods = {};
    expect_invalid(c, "methods");
  }
  {
    auto c = cfg;
    c.methods = {"random", "random"};
    expect_invalid(c, "duplicate");
  }
  {
    auto c = cfg;
    c.methods = {"gradient_descent"};
    expect_invalid(c, "unknown method");
  }
  {
    auto c = cfg;
    c.seeds = {};
    expect_invalid(c, "seeds");
  }
  {
    auto c = cfg;
    c.n_init = 1;
    expect_invalid(c, "n_init");
  }
  {
    auto c = cfg;
    c.iters = -1;
    expect_invalid(c, "iters");
  }
  {
    auto c = cfg;
    c.library_depth = 4;
    expect_invalid(c, "library_depth");
  }
  {
    auto c = cfg;
    c.ga_mutation_p = -0.1;
    expect_invalid(c, "ga_mutation_p");
  }
  {
    auto c = cfg;
    c.samples = 3;
    expect_invalid(c, "samples");
  }
  {
    auto c = cfg;
    c.csv_path = "data.csv";  // x/y columns missing
    expect_invalid(c, "csv_path");
  }
  {
    auto c = cfg;
    c.matrix_samples = 0;
    expect_invalid(c, "matrix_samples");
  }
  {
    auto c = cfg;
    c.embed_dim = 0;
    expect_invalid(c, "embed_dim");
  }
  {
    auto c = cfg;
    c.output_dir = "";
    expect_invalid(c, "output_dir");
  }
  // A budget larger than the library fails at run time.
  auto c = cfg;
  c.library_depth = 1;
  c.n_init = 2;
  c.iters = 5;  // 2 + 5 > 3 kernels
  c.output_dir = fresh_dir("overbudget");
  CHECK_THROWS_WITH_AS((void)bench::run_experiment(c), doctest::Contains("library size"),
                       std::invalid_argument);
}

TEST_CASE("a small experiment produces consistent, verifiable artifacts") {
  bench::ExperimentConfig cfg;
  cfg.benchmark = "dropwave";
  cfg.samples = 12;
  cfg.data_seed = 1;
  cfg.methods = {"bo_rbf", "random", "ga"};
  cfg.n_init = 3;
  cfg.iters = 2;
  cfg.seeds = {1, 2};
  cfg.library_depth = 2;
  cfg.matrix_samples = 8;
  cfg.matrix_seed = 3;
  cfg.embed_dim = 5;
  cfg.output_dir = fresh_dir("experiment");

  const auto summary = bench::run_experiment(cfg);
  CHECK(summary.config_hash == cfg.hash());
  CHECK(summary.iters == 2);
  REQUIRE(summary.curves.size() == 3);
  for (const auto& curve : summary.curves) {
    CHECK(curve.completed == 2);
    REQUIRE(curve.mean_best.size() == 3);  // init + two rounds
    REQUIRE(curve.std_best.size() == 3);
    // Best-so-far curves never decrease.
    for (std::size_t t = 1; t < curve.mean_best.size(); ++t) {
      CHECK(curve.mean_best[t] >= curve.mean_best[t - 1] - 1e-12);
    }
  }

  for (const std::string name :
       {"config.json", "summary.csv", "summary.json", "comparison.svg", "manifest.json",
        "traces/bo_rbf_seed1.jsonl", "traces/bo_rbf_seed1.jsonl.summary.json",
        "traces/random_seed2.jsonl", "traces/ga_seed1.jsonl"}) {
    CHECK(io::file_exists(cfg.output_dir + "/" + name));
  }
  // Exactly one cached distance matrix and one cached embedding (plus
  // sidecars) back the run.
  int dm_files = 0, emb_files = 0;
  for (const auto& entry : fs::directory_iterator(cfg.output_dir + "/cache")) {
    const std::string stem = entry.path().filename().string();
    if (stem.rfind("dm_", 0) == 0 && entry.path().extension() == ".csv") ++dm_files;
    if (stem.rfind("emb_", 0) == 0 && entry.path().extension() == ".csv") ++emb_files;
  }
  CHECK(dm_files == 1);
  CHECK(emb_files == 1);

  // The summary is pure derived data: recomputing it from the persisted
  // traces reproduces it bit for bit.
  const auto rederived = bench::summarize_traces(cfg);
  CHECK(bench::summary_to_csv(rederived) == bench::summary_to_csv(summary));

  const std::string csv = bench::summary_to_csv(summary);
  CHECK(csv.rfind("iteration,method,mean_best_lml,std_best_lml\n", 0) == 0);
  int lines = 0;
  for (const char ch : csv) lines += ch == '\n' ? 1 : 0;
  CHECK(lines == 1 + 3 * 3);  // header + methods x (iters + 1)

  const auto verify = bench::verify_experiment(cfg.output_dir);
  CHECK(verify.ok);
  CHECK(verify.mismatches.empty());

  // Tampering with any listed artifact is caught.
  const std::string summary_path = cfg.output_dir + "/summary.csv";
  const std::string original = io::read_file(summary_path);
  io::write_file(summary_path, original + "tampered\n");
  const auto broken = bench::verify_experiment(cfg.output_dir);
  CHECK_FALSE(broken.ok);
  REQUIRE(!broken.mismatches.empty());
  bool mentions = false;
  for (const auto& m : broken.mismatches) mentions = mentions || m.find("summary.csv") != std::string::npos;
  CHECK(mentions);
  io::write_file(summary_path, original);

  // Re-running in place reuses the cache and reproduces the summary exactly.
  const auto again = bench::run_experiment(cfg);
  CHECK(bench::summary_to_csv(again) == csv);
  CHECK(bench::verify_experiment(cfg.output_dir).ok);
}

TEST_CASE("a zero-iteration experiment reports the initial design's best") {
  bench::ExperimentConfig cfg;
  cfg.benchmark = "ackley";
  cfg.samples = 10;
  cfg.data_seed = 2;
  cfg.methods = {"random"};
  cfg.n_init = 3;
  cfg.iters = 0;
  cfg.seeds = {4};
  cfg.library_depth = 1;
  cfg.matrix_samples = 4;
  cfg.matrix_seed = 1;
  cfg.embed_dim = 2;
  cfg.output_dir = fresh_dir("zero_iters");

  const auto summary = bench::run_experiment(cfg);
  REQUIRE(summary.curves.size() == 1);
  REQUIRE(summary.curves[0].mean_best.size() == 1);

  const auto trace = search::trace_from_jsonl(
      io::read_file(cfg.output_dir + "/traces/random_seed4.jsonl"));
  REQUIRE(trace.records.size() == 3);
  CHECK(summary.curves[0].mean_best[0] == trace.records[2].best_lml);
  CHECK(summary.curves[0].std_best[0] == 0.0);
}

TEST_CASE("svg charts are self-contained and deterministic") {
  svg::Series a{"alpha", {0, 1, 2, 3}, {1.0, 0.5, 0.25, 0.2}};
  svg::Series b{"beta", {0, 1, 2, 3}, {0.9, std::nan(""), 0.3, 0.1}};
  const std::string chart = svg::line_chart({a, b}, "title text", "rounds", "score");
  CHECK(chart.rfind("<svg", 0) == 0);
  CHECK(chart.find("</svg>") != std::string::npos);
  CHECK(chart.find("polyline") != std::string::npos);
  CHECK(chart.find("title text") != std::string::npos);
  CHECK(chart.find("alpha") != std::string::npos);
  CHECK(chart.find("beta") != std::string::npos);
  CHECK(chart.find("href") == std::string::npos);  // no external references
  CHECK(svg::line_chart({a, b}, "title text", "rounds", "score") == chart);

  svg::Series bad{"bad", {0, 1}, {1.0}};
  CHECK_THROWS_AS((void)svg::line_chart({bad}, "t", "x", "y"), std::invalid_argument);
  svg::Series hollow{"hollow", {0, 1}, {std::nan(""), std::nan("")}};
  CHECK_THROWS_AS((void)svg::line_chart({hollow}, "t", "x", "y"), std::invalid_argument);
}

TEST_CASE("downstream arms share initial designs and repeat exactly") {
  bench::DownstreamConfig cfg;
  cfg.benchmark = "ackley";
  cfg.surrogate_expr = "(SE * (RQ + RQ))";
  cfg.baseline_expr = "SE";
  cfg.n_init = 5;
  cfg.budget = 5;  // no optimization rounds: curves are the shared init
  cfg.seeds = {1, 2};
  cfg.fit_budget = {2, 60};

  const auto result = bench::downstream_bo(cfg);
  // Reported expressions are canonicalized.
  CHECK(result.surrogate_expr == "((RQ + RQ) * SE)");
  CHECK(result.baseline_expr == "SE");
  REQUIRE(result.best_surrogate.rows() == 2);
  REQUIRE(result.best_surrogate.cols() == 5);
  CHECK(result.best_surrogate == result.best_baseline);
  for (int s = 0; s < 2; ++s) {
    for (int t = 1; t < 5; ++t) {
      CHECK(result.best_surrogate(s, t) <= result.best_surrogate(s, t - 1));
    }
  }
  // Different seeds draw different designs.
  CHECK(result.best_surrogate.row(0) != result.best_surrogate.row(1));
}

TEST_CASE("downstream optimization is deterministic and improves on the design") {
  bench::DownstreamConfig cfg;
  cfg.benchmark = "dropwave";
  cfg.n_init = 4;
  cfg.budget = 6;
  cfg.seeds = {3};
  cfg.fit_budget = {2, 60};

  const auto once = bench::downstream_bo(cfg);
  const auto twice = bench::downstream_bo(cfg);
  CHECK(bench::downstream_to_csv(once) == bench::downstream_to_csv(twice));
  CHECK(once.best_surrogate == twice.best_surrogate);
  CHECK(once.best_baseline == twice.best_baseline);

  const std::string csv = bench::downstream_to_csv(once);
  CHECK(csv.rfind("iteration,arm,mean_best_objective,std_best_objective\n", 0) == 0);
  int lines = 0;
  for (const char ch : csv) lines += ch == '\n' ? 1 : 0;
  CHECK(lines == 1 + 2 * 6);  // header + two arms x budget
  CHECK(csv.find("((RQ + RQ) * SE)") != std::string::npos);
  CHECK(csv.find(",SE,") != std::string::npos);

  // Curves never rise and cover the full budget.
  for (int t = 1; t < 6; ++t) {
    CHECK(once.best_surrogate(0, t) <= once.best_surrogate(0, t - 1));
    CHECK(once.best_baseline(0, t) <= once.best_baseline(0, t - 1));
  }
}

TEST_CASE("downstream configuration errors are rejected up front") {
  bench::DownstreamConfig cfg;
  cfg.budget = 3;  // below n_init = 5
  CHECK_THROWS_WITH_AS((void)bench::downstream_bo(cfg), doctest::Contains("budget"),
                       std::invalid_argument);
  cfg = {};
  cfg.n_init = 1;
  cfg.budget = 6;
  CHECK_THROWS_AS((void)bench::downstream_bo(cfg), std::invalid_argument);
  cfg = {};
  cfg.seeds = {};
  CHECK_THROWS_AS((void)bench::downstream_bo(cfg), std::invalid_argument);
  cfg = {};
  cfg.surrogate_expr = "SE ++ RQ";
  CHECK_THROWS_AS((void)bench::downstream_bo(cfg), ParseError);
  cfg = {};
  cfg.benchmark = "unknown";
  CHECK_THROWS_AS((void)bench::downstream_bo(cfg), std::invalid_argument);
}
