#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "km/errors.hpp"
#include "km/grammar.hpp"
#include "km/rng.hpp"

using namespace km;
using grammar::BaseKind;
using grammar::KernelExpr;

namespace {

// Independent oracle: enumerate every distinct canonical form with up to
// max_leaves leaves by brute-force tree assembly, ignoring the library
// generator entirely.
std::set<std::string> enumerate_canonicals(int max_leaves) {
  std::vector<KernelExpr> pool;
  for (const BaseKind b : grammar::default_bases()) pool.push_back(KernelExpr::leaf(b));
  std::set<std::string> seen;
  for (const auto& e : pool) seen.insert(e.canonical_string());
  // Grow by combining any two pool members whose total leaf count fits.
  bool changed = true;
  while (changed) {
    changed = false;
    const std::vector<KernelExpr> snapshot = pool;
    for (const auto& a : snapshot) {
      for (const auto& b : snapshot) {
        if (a.leaf_count() + b.leaf_count() > max_leaves) continue;
        for (const bool is_sum : {true, false}) {
          const KernelExpr combined = is_sum ? KernelExpr::sum({a, b})
                                             : KernelExpr::product({a, b});
          if (seen.insert(combined.canonical_string()).second) {
            pool.push_back(combined);
            changed = true;
          }
        }
      }
    }
  }
  return seen;
}

}  // namespace

TEST_CASE("base kernel names round-trip") {
  for (const BaseKind b : grammar::default_bases()) {
    CHECK(grammar::base_from_name(grammar::base_name(b)) == b);
  }
  CHECK_THROWS_AS((void)grammar::base_from_name("MATERN"), std::invalid_argument);
}

TEST_CASE("hyperparameter schemas carry the documented boxes") {
  const auto& se = grammar::base_schema(BaseKind::SE);
  REQUIRE(se.size() == 1);
  CHECK(se[0].low == doctest::Approx(0.1));
  CHECK(se[0].high == doctest::Approx(2.0));

  const auto& per = grammar::base_schema(BaseKind::PER);
  REQUIRE(per.size() == 2);
  CHECK(per[1].low == doctest::Approx(0.1));
  CHECK(per[1].high == doctest::Approx(2.0));

  const auto& rq = grammar::base_schema(BaseKind::RQ);
  REQUIRE(rq.size() == 2);
  CHECK(rq[1].low == doctest::Approx(0.1));
  CHECK(rq[1].high == doctest::Approx(10.0));
}

TEST_CASE("canonical form flattens, sorts and deduplicates structure") {
  const KernelExpr a =
      KernelExpr::sum({KernelExpr::leaf(BaseKind::SE),
                       KernelExpr::sum({KernelExpr::leaf(BaseKind::RQ),
                                        KernelExpr::leaf(BaseKind::PER)})});
  CHECK(a.canonical_string() == "(PER + RQ + SE)");

  const KernelExpr b = KernelExpr::sum({KernelExpr::leaf(BaseKind::PER),
                                        KernelExpr::leaf(BaseKind::RQ),
                                        KernelExpr::leaf(BaseKind::SE)});
  CHECK(a == b);

  // Single-child operators collapse.
  const KernelExpr c = KernelExpr::product({KernelExpr::leaf(BaseKind::PER)});
  CHECK(c.canonical_string() == "PER");

  // Idempotent.
  CHECK(canonicalize(canonicalize(a)).canonical_string() == a.canonical_string());
}

TEST_CASE("parser handles precedence, parentheses and whitespace") {
  CHECK(grammar::parse_expr("SE").canonical_string() == "SE");
  CHECK(grammar::parse_expr("SE + PER * RQ").canonical_string() == "((PER * RQ) + SE)");
  CHECK(grammar::parse_expr("(SE + PER) * RQ").canonical_string() == "((PER + SE) * RQ)");
  CHECK(grammar::parse_expr("(SE+PER)").canonical_string() == "(PER + SE)");
  CHECK(grammar::parse_expr("  SE *  ( PER + RQ )  ").canonical_string() ==
        "((PER + RQ) * SE)");
  // Commutativity through canonical form.
  CHECK(grammar::parse_expr("RQ * SE") == grammar::parse_expr("SE * RQ"));
}

TEST_CASE("parser reports the byte offset of the first bad character") {
  try {
    (void)grammar::parse_expr("SE + ?");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 5);
  }
  CHECK_THROWS_AS((void)grammar::parse_expr(""), ParseError);
  CHECK_THROWS_AS((void)grammar::parse_expr("(SE + PER"), ParseError);
  CHECK_THROWS_AS((void)grammar::parse_expr("SE PER"), ParseError);
  CHECK_THROWS_AS((void)grammar::parse_expr("SE +"), ParseError);
}

TEST_CASE("print_expr is a binary-nested left fold that parses back") {
  const KernelExpr e = grammar::parse_expr("(SE + PER) * RQ");
  // Canonical children of the product: (PER + SE), RQ.
  CHECK(grammar::print_expr(e) == "((PER + SE) * RQ)");
  CHECK(grammar::parse_expr(grammar::print_expr(e)) == e);

  const KernelExpr s = grammar::parse_expr("SE + PER + RQ");
  CHECK(grammar::print_expr(s) == "((PER + RQ) + SE)");
}

TEST_CASE("depth equals leaf count") {
  CHECK(grammar::parse_expr("SE").depth() == 1);
  CHECK(grammar::parse_expr("SE + PER").depth() == 2);
  CHECK(grammar::parse_expr("(SE + PER) * RQ").depth() == 3);
  CHECK(grammar::parse_expr("SE * SE * SE").depth() == 3);
}

TEST_CASE("theta layout follows canonical leaf order") {
  const KernelExpr e = grammar::parse_expr("PER * SE");
  const auto schema = e.schema();
  // Canonical order puts PER first: PER contributes (lengthscale, period).
  REQUIRE(schema.size() == 3);
  CHECK(schema[0].name.find("PER") != std::string::npos);
  CHECK(schema[2].name.find("SE") != std::string::npos);

  const auto leaves = e.leaves();
  REQUIRE(leaves.size() == 2);
  CHECK(leaves[0] == BaseKind::PER);
  CHECK(leaves[1] == BaseKind::SE);
}

TEST_CASE("library sizes match a brute-force enumeration oracle") {
  const auto lib2 = grammar::generate_library(2, grammar::default_bases());
  const auto lib3 = grammar::generate_library(3, grammar::default_bases());
  CHECK(lib2.size() == 15);
  CHECK(lib3.size() == 71);

  const auto oracle2 = enumerate_canonicals(2);
  const auto oracle3 = enumerate_canonicals(3);
  CHECK(oracle2.size() == 15);
  CHECK(oracle3.size() == 71);

  std::set<std::string> lib3_set;
  for (const auto& entry : lib3.entries) lib3_set.insert(entry.expr.canonical_string());
  CHECK(lib3_set == oracle3);
}

TEST_CASE("library entries are unique, depth-ordered and indexed") {
  const auto lib = grammar::generate_library(3, grammar::default_bases());
  std::set<std::string> seen;
  int last_depth = 0;
  for (const auto& entry : lib.entries) {
    CHECK(seen.insert(entry.expr.canonical_string()).second);
    CHECK(entry.depth >= last_depth);
    CHECK(entry.depth == entry.expr.depth());
    CHECK(entry.depth <= 3);
    last_depth = entry.depth;
    CHECK(lib.entries[static_cast<std::size_t>(entry.index)].index == entry.index);
  }
  CHECK(lib.index_of("SE") >= 0);
  CHECK(lib.index_of("(PER + SE)") >= 0);
  CHECK(lib.index_of("NOPE") == -1);
}

TEST_CASE("generate_library validates arguments") {
  CHECK_THROWS_AS((void)grammar::generate_library(0, grammar::default_bases()),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)grammar::generate_library(4, grammar::default_bases()),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)grammar::generate_library(2, {}), std::invalid_argument);
  CHECK_THROWS_AS((void)grammar::generate_library(2, {BaseKind::SE, BaseKind::SE}),
                  std::invalid_argument);
}

TEST_CASE("library JSON manifest round-trips") {
  const auto lib = grammar::generate_library(2, grammar::default_bases());
  const auto restored = grammar::library_from_json(grammar::library_to_json(lib));
  REQUIRE(restored.size() == lib.size());
  CHECK(restored.hash() == lib.hash());
  for (int i = 0; i < lib.size(); ++i) {
    CHECK(restored.entries[static_cast<std::size_t>(i)].expr.canonical_string() ==
          lib.entries[static_cast<std::size_t>(i)].expr.canonical_string());
  }
}

TEST_CASE("covariance evaluation: structure maps to elementwise sum/product") {
  Rng rng(11);
  Eigen::MatrixXd X(6, 1);
  for (int i = 0; i < 6; ++i) X(i, 0) = rng.uniform();

  const KernelExpr se = grammar::parse_expr("SE");
  const KernelExpr per = grammar::parse_expr("PER");
  const KernelExpr sum = grammar::parse_expr("PER + SE");
  const KernelExpr prod = grammar::parse_expr("PER * SE");

  Eigen::VectorXd th_se(1), th_per(2), th_both(3);
  th_se << 0.7;
  th_per << 0.5, 1.3;
  th_both << 0.5, 1.3, 0.7;  // canonical leaf order: PER then SE

  const Eigen::MatrixXd k_se = grammar::eval_covariance(se, th_se, X);
  const Eigen::MatrixXd k_per = grammar::eval_covariance(per, th_per, X);
  const Eigen::MatrixXd k_sum = grammar::eval_covariance(sum, th_both, X);
  const Eigen::MatrixXd k_prod = grammar::eval_covariance(prod, th_both, X);

  CHECK((k_sum - (k_se + k_per)).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK((k_prod - (k_se.cwiseProduct(k_per))).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0).epsilon(1e-14));

  // Unit variance on the diagonal for every structure.
  CHECK(k_sum.diagonal().maxCoeff() == doctest::Approx(2.0));
  CHECK(k_prod.diagonal().maxCoeff() == doctest::Approx(1.0));
  // Symmetry to machine tolerance.
  CHECK((k_prod - k_prod.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((k_sum - k_sum.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("kernel values match scalar formulas") {
  Eigen::VectorXd th_se(1);
  th_se << 0.5;
  const double r = 0.3;
  const double se_expected = std::exp(-0.5 * r * r / (0.5 * 0.5));
  CHECK(grammar::eval_kernel_value(grammar::parse_expr("SE"), th_se, r) ==
        doctest::Approx(se_expected).epsilon(1e-14));

  Eigen::VectorXd th_per(2);
  th_per << 0.6, 1.1;
  const double s = std::sin(M_PI * r / 1.1);
  const double per_expected = std::exp(-2.0 * s * s / (0.6 * 0.6));
  CHECK(grammar::eval_kernel_value(grammar::parse_expr("PER"), th_per, r) ==
        doctest::Approx(per_expected).epsilon(1e-14));

  Eigen::VectorXd th_rq(2);
  th_rq << 0.8, 2.5;
  const double rq_expected = std::pow(1.0 + r * r / (2.0 * 2.5 * 0.8 * 0.8), -2.5);
  CHECK(grammar::eval_kernel_value(grammar::parse_expr("RQ"), th_rq, r) ==
        doctest::Approx(rq_expected).epsilon(1e-14));
}

TEST_CASE("cross covariance agrees with the square evaluation") {
  Rng rng(5);
  Eigen::MatrixXd X(5, 2);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 2; ++j) X(i, j) = rng.uniform();
  const KernelExpr e = grammar::parse_expr("SE * RQ");
  Eigen::VectorXd theta(3);
  theta << 0.9, 0.4, 1.7;
  const Eigen::MatrixXd full = grammar::eval_covariance(e, theta, X);
  const Eigen::MatrixXd cross = grammar::eval_cross_covariance(e, theta, X, X);
  CHECK((full - cross).cwiseAbs().maxCoeff() < 1e-14);

  const Eigen::MatrixXd dist = grammar::pairwise_distances(X);
  const Eigen::MatrixXd from_dist = grammar::eval_covariance_from_dist(e, theta, dist);
  CHECK((full - from_dist).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("theta size mismatches are rejected") {
  const KernelExpr e = grammar::parse_expr("SE + PER");
  Eigen::VectorXd bad(1);
  bad << 0.5;
  Eigen::MatrixXd X(2, 1);
  X << 0.0, 1.0;
  CHECK_THROWS_AS((void)grammar::eval_covariance(e, bad, X), std::invalid_argument);
}
