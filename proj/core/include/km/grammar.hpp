#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace km::grammar {

/// Base kernel families. The enum is the extension point for new bases; all
/// grammar machinery (parsing, schemas, evaluation) dispatches through it.
enum class BaseKind { SE, PER, RQ };

[[nodiscard]] const char* base_name(BaseKind k);
[[nodiscard]] BaseKind base_from_name(const std::string& name);
[[nodiscard]] std::vector<BaseKind> default_bases();

/// One hyperparameter slot with its box bounds (linear scale).
struct HyperparamSpec {
  std::string name;
  double low = 0.0;
  double high = 0.0;
};

/// Schema of a single base kernel, in fixed declaration order.
[[nodiscard]] const std::vector<HyperparamSpec>& base_schema(BaseKind k);

/// Immutable composition tree over base kernels with n-ary sum/product nodes.
/// Canonical form: children flattened through same-operator nodes and sorted
/// by canonical string, so structurally equal kernels compare equal by string.
class KernelExpr {
 public:
  enum class Op { Leaf, Sum, Product };

  static KernelExpr leaf(BaseKind k);
  static KernelExpr sum(std::vector<KernelExpr> children);
  static KernelExpr product(std::vector<KernelExpr> children);

  [[nodiscard]] Op op() const noexcept { return op_; }
  [[nodiscard]] BaseKind base() const;  // leaf only
  [[nodiscard]] const std::vector<KernelExpr>& children() const { return children_; }

  /// Flat n-ary rendering, e.g. "(PER + RQ + SE)"; used for ordering,
  /// deduplication and manifests.
  [[nodiscard]] std::string canonical_string() const;

  /// Depth convention: a single base kernel has depth 1 and every binary
  /// operation adds one, which makes depth equal to the leaf count.
  [[nodiscard]] int depth() const;

  [[nodiscard]] int leaf_count() const;
  /// Leaves in canonical (left-to-right) order; defines the theta layout.
  [[nodiscard]] std::vector<BaseKind> leaves() const;

  /// Flattened hyperparameter schema: leaf order, then per-base schema order.
  /// Names are prefixed "<leaf index>:<base>:" for unambiguous manifests.
  [[nodiscard]] std::vector<HyperparamSpec> schema() const;

  friend bool operator==(const KernelExpr& a, const KernelExpr& b) {
    return a.canonical_string() == b.canonical_string();
  }

 private:
  KernelExpr() = default;
  static KernelExpr make_node(Op op, std::vector<KernelExpr> children);
  friend KernelExpr canonicalize(const KernelExpr& e);

  Op op_ = Op::Leaf;
  BaseKind base_ = BaseKind::SE;
  std::vector<KernelExpr> children_;
};

/// Flattens nested same-operator nodes, sorts children by canonical string and
/// collapses single-child operators. Idempotent.
[[nodiscard]] KernelExpr canonicalize(const KernelExpr& e);

/// Parses "+"/"*" expressions over base names with standard precedence
/// ("*" binds tighter) and optional parentheses; returns the canonical form.
/// Throws ParseError with the byte offset of the first offending character.
[[nodiscard]] KernelExpr parse_expr(const std::string& text);

/// Fully parenthesized binary-nested rendering of the canonical tree, e.g.
/// "((PER + SE) * RQ)". parse_expr(print_expr(e)) == e.
[[nodiscard]] std::string print_expr(const KernelExpr& e);

/// Scalar kernel value at Euclidean distance r (inputs are isotropic).
[[nodiscard]] double eval_kernel_value(const KernelExpr& e, const Eigen::VectorXd& theta,
                                       double r);

/// Covariance of the expression over row-point matrix X (n x d) with the flat
/// hyperparameter vector theta. Unit variance at r = 0 for every leaf.
[[nodiscard]] Eigen::MatrixXd eval_covariance(const KernelExpr& e, const Eigen::VectorXd& theta,
                                              const Eigen::MatrixXd& X);

/// Cross-covariance between row-point sets A (m x d) and B (n x d).
[[nodiscard]] Eigen::MatrixXd eval_cross_covariance(const KernelExpr& e,
                                                    const Eigen::VectorXd& theta,
                                                    const Eigen::MatrixXd& A,
                                                    const Eigen::MatrixXd& B);

/// Same as eval_covariance but over a precomputed Euclidean distance matrix;
/// lets fit loops amortize the pairwise distances.
[[nodiscard]] Eigen::MatrixXd eval_covariance_from_dist(const KernelExpr& e,
                                                        const Eigen::VectorXd& theta,
                                                        const Eigen::MatrixXd& dist);

/// Pairwise Euclidean distance matrix of row points.
[[nodiscard]] Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& X);

struct LibraryEntry {
  int index = 0;
  KernelExpr expr = KernelExpr::leaf(BaseKind::SE);
  int depth = 0;
  std::vector<HyperparamSpec> schema;
};

struct KernelLibrary {
  int max_depth = 0;
  std::vector<BaseKind> bases;
  std::vector<LibraryEntry> entries;

  [[nodiscard]] int size() const { return static_cast<int>(entries.size()); }
  /// FNV hash over the ordered canonical strings; artifact lineage key.
  [[nodiscard]] std::string hash() const;
  /// Index of a canonical string, or -1 when absent.
  [[nodiscard]] int index_of(const std::string& canonical) const;
};

/// All canonical expressions of depth <= max_depth over the base set, one
/// entry per canonical form, ordered by (depth, canonical string).
/// max_depth must be in {1, 2, 3}; bases must be non-empty and distinct.
[[nodiscard]] KernelLibrary generate_library(int max_depth, const std::vector<BaseKind>& bases);

/// JSON manifest (array of {index, expr, depth, schema}) round-trip.
[[nodiscard]] std::string library_to_json(const KernelLibrary& lib);
[[nodiscard]] KernelLibrary library_from_json(const std::string& json_text);
void save_library(const KernelLibrary& lib, const std::string& path);
[[nodiscard]] KernelLibrary load_library(const std::string& path);

}  // namespace km::grammar
