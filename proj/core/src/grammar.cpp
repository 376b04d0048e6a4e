#include "km/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "km/errors.hpp"
#include "km/hash.hpp"
#include "km/io.hpp"

namespace km::grammar {

const char* base_name(BaseKind k) {
  switch (k) {
    case BaseKind::SE: return "SE";
    case BaseKind::PER: return "PER";
    case BaseKind::RQ: return "RQ";
  }
  return "?";
}

BaseKind base_from_name(const std::string& name) {
  if (name == "SE") return BaseKind::SE;
  if (name == "PER") return BaseKind::PER;
  if (name == "RQ") return BaseKind::RQ;
  throw std::invalid_argument("unknown base kernel '" + name + "' (expected SE, PER or RQ)");
}

std::vector<BaseKind> default_bases() { return {BaseKind::SE, BaseKind::PER, BaseKind::RQ}; }

const std::vector<HyperparamSpec>& base_schema(BaseKind k) {
  static const std::vector<HyperparamSpec> se = {{"lengthscale", 0.1, 2.0}};
  static const std::vector<HyperparamSpec> per = {{"lengthscale", 0.1, 2.0},
                                                  {"period", 0.1, 2.0}};
  static const std::vector<HyperparamSpec> rq = {{"lengthscale", 0.1, 2.0},
                                                 {"alpha", 0.1, 10.0}};
  switch (k) {
    case BaseKind::SE: return se;
    case BaseKind::PER: return per;
    case BaseKind::RQ: return rq;
  }
  return se;
}

KernelExpr KernelExpr::make_node(Op op, std::vector<KernelExpr> children) {
  KernelExpr e;
  e.op_ = op;
  e.children_ = std::move(children);
  return e;
}

KernelExpr KernelExpr::leaf(BaseKind k) {
  KernelExpr e;
  e.op_ = Op::Leaf;
  e.base_ = k;
  return e;
}

KernelExpr KernelExpr::sum(std::vector<KernelExpr> children) {
  if (children.empty()) throw std::invalid_argument("sum node needs children");
  return canonicalize(make_node(Op::Sum, std::move(children)));
}

KernelExpr KernelExpr::product(std::vector<KernelExpr> children) {
  if (children.empty()) throw std::invalid_argument("product node needs children");
  return canonicalize(make_node(Op::Product, std::move(children)));
}

BaseKind KernelExpr::base() const {
  if (op_ != Op::Leaf) throw std::logic_error("base() called on non-leaf node");
  return base_;
}

std::string KernelExpr::canonical_string() const {
  if (op_ == Op::Leaf) return base_name(base_);
  const char* sep = op_ == Op::Sum ? " + " : " * ";
  std::string out = "(";
  for (std::size_t i = 0; i < children_.size(); ++i) {
    if (i) out += sep;
    out += children_[i].canonical_string();
  }
  out += ")";
  return out;
}

int KernelExpr::leaf_count() const {
  if (op_ == Op::Leaf) return 1;
  int n = 0;
  for (const auto& c : children_) n += c.leaf_count();
  return n;
}

int KernelExpr::depth() const { return leaf_count(); }

std::vector<BaseKind> KernelExpr::leaves() const {
  std::vector<BaseKind> out;
  if (op_ == Op::Leaf) {
    out.push_back(base_);
    return out;
  }
  for (const auto& c : children_) {
    auto sub = c.leaves();
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<HyperparamSpec> KernelExpr::schema() const {
  std::vector<HyperparamSpec> out;
  const auto ls = leaves();
  for (std::size_t i = 0; i < ls.size(); ++i) {
    for (const auto& spec : base_schema(ls[i])) {
      HyperparamSpec s = spec;
      s.name = std::to_string(i) + ":" + base_name(ls[i]) + ":" + spec.name;
      out.push_back(std::move(s));
    }
  }
  return out;
}

KernelExpr canonicalize(const KernelExpr& e) {
  if (e.op() == KernelExpr::Op::Leaf) return e;
  std::vector<KernelExpr> flat;
  for (const auto& c : e.children()) {
    const KernelExpr cc = canonicalize(c);
    if (cc.op() == e.op()) {
      // Same operator: splice grandchildren in (associativity).
      for (const auto& gc : cc.children()) flat.push_back(gc);
    } else {
      flat.push_back(cc);
    }
  }
  if (flat.size() == 1) return flat.front();
  std::stable_sort(flat.begin(), flat.end(), [](const KernelExpr& a, const KernelExpr& b) {
    return a.canonical_string() < b.canonical_string();
  });
  return KernelExpr::make_node(e.op(), std::move(flat));
}

KernelExpr parse_expr(const std::string& text) {
  struct Parser {
    const std::string& s;
    std::size_t pos = 0;

    void skip_ws() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    [[nodiscard]] bool at_end() {
      skip_ws();
      return pos >= s.size();
    }
    char peek() {
      skip_ws();
      return pos < s.size() ? s[pos] : '\0';
    }

    KernelExpr parse_factor() {
      skip_ws();
      if (pos >= s.size()) throw ParseError("expected kernel expression", pos);
      const char c = s[pos];
      if (c == '(') {
        ++pos;
        KernelExpr inner = parse_sum();
        skip_ws();
        if (pos >= s.size() || s[pos] != ')') throw ParseError("expected ')'", pos);
        ++pos;
        return inner;
      }
      if (std::isalpha(static_cast<unsigned char>(c))) {
        const std::size_t start = pos;
        while (pos < s.size() && std::isalnum(static_cast<unsigned char>(s[pos]))) ++pos;
        const std::string name = s.substr(start, pos - start);
        try {
          return KernelExpr::leaf(base_from_name(name));
        } catch (const std::invalid_argument& ex) {
          throw ParseError(ex.what(), start);
        }
      }
      throw ParseError(std::string("unexpected character '") + c + "'", pos);
    }

    KernelExpr parse_term() {
      std::vector<KernelExpr> factors;
      factors.push_back(parse_factor());
      while (peek() == '*') {
        ++pos;
        factors.push_back(parse_factor());
      }
      if (factors.size() == 1) return factors.front();
      return KernelExpr::product(std::move(factors));
    }

    KernelExpr parse_sum() {
      std::vector<KernelExpr> terms;
      terms.push_back(parse_term());
      while (peek() == '+') {
        ++pos;
        terms.push_back(parse_term());
      }
      if (terms.size() == 1) return terms.front();
      return KernelExpr::sum(std::move(terms));
    }
  };

  Parser p{text};
  if (p.at_end()) throw ParseError("empty kernel expression", 0);
  KernelExpr e = p.parse_sum();
  p.skip_ws();
  if (p.pos != text.size()) throw ParseError("trailing input after expression", p.pos);
  return canonicalize(e);
}

namespace {

std::string print_binary(const KernelExpr& e) {
  if (e.op() == KernelExpr::Op::Leaf) return base_name(e.base());
  const char* sep = e.op() == KernelExpr::Op::Sum ? " + " : " * ";
  // Left fold over the sorted children: ((a op b) op c) ...
  std::string acc = print_binary(e.children()[0]);
  for (std::size_t i = 1; i < e.children().size(); ++i) {
    acc = "(" + acc + sep + print_binary(e.children()[i]) + ")";
  }
  return acc;
}

}  // namespace

std::string print_expr(const KernelExpr& e) { return print_binary(canonicalize(e)); }

namespace {

// Elementwise evaluation of the tree over an arbitrary array of distances.
// theta is consumed left to right in leaf order.
Eigen::ArrayXXd eval_node(const KernelExpr& e, const Eigen::VectorXd& theta, int& cursor,
                          const Eigen::ArrayXXd& r) {
  switch (e.op()) {
    case KernelExpr::Op::Leaf: {
      switch (e.base()) {
        case BaseKind::SE: {
          const double ell = theta[cursor++];
          return (-(r * r) / (2.0 * ell * ell)).exp();
        }
        case BaseKind::PER: {
          const double ell = theta[cursor];
          const double p = theta[cursor + 1];
          cursor += 2;
          const Eigen::ArrayXXd s = (M_PI * r / p).sin();
          return (-2.0 * s * s / (ell * ell)).exp();
        }
        case BaseKind::RQ: {
          const double ell = theta[cursor];
          const double alpha = theta[cursor + 1];
          cursor += 2;
          // (1 + r^2/(2 alpha ell^2))^(-alpha), computed through log1p for
          // stability at large exponents.
          return (-alpha * ((r * r) / (2.0 * alpha * ell * ell)).log1p()).exp();
        }
      }
      break;
    }
    case KernelExpr::Op::Sum: {
      Eigen::ArrayXXd acc = eval_node(e.children()[0], theta, cursor, r);
      for (std::size_t i = 1; i < e.children().size(); ++i) {
        acc += eval_node(e.children()[i], theta, cursor, r);
      }
      return acc;
    }
    case KernelExpr::Op::Product: {
      Eigen::ArrayXXd acc = eval_node(e.children()[0], theta, cursor, r);
      for (std::size_t i = 1; i < e.children().size(); ++i) {
        acc *= eval_node(e.children()[i], theta, cursor, r);
      }
      return acc;
    }
  }
  throw std::logic_error("unreachable kernel node");
}

void check_theta(const KernelExpr& e, const Eigen::VectorXd& theta) {
  const auto schema = e.schema();
  if (static_cast<std::size_t>(theta.size()) != schema.size()) {
    throw std::invalid_argument("theta layout mismatch: expression " + e.canonical_string() +
                                " expects " + std::to_string(schema.size()) +
                                " hyperparameters, got " + std::to_string(theta.size()));
  }
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(theta[i]) || theta[i] <= 0.0) {
      throw std::invalid_argument("hyperparameter '" + schema[static_cast<std::size_t>(i)].name +
                                  "' must be finite and positive");
    }
  }
}

Eigen::MatrixXd cross_distances(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd d2 = (-2.0 * A * B.transpose());
  d2.colwise() += A.rowwise().squaredNorm();
  d2.rowwise() += B.rowwise().squaredNorm().transpose();
  return d2.cwiseMax(0.0).cwiseSqrt();
}

}  // namespace

double eval_kernel_value(const KernelExpr& e, const Eigen::VectorXd& theta, double r) {
  check_theta(e, theta);
  Eigen::ArrayXXd rr(1, 1);
  rr(0, 0) = r;
  int cursor = 0;
  return eval_node(e, theta, cursor, rr)(0, 0);
}

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& X) { return cross_distances(X, X); }

Eigen::MatrixXd eval_covariance_from_dist(const KernelExpr& e, const Eigen::VectorXd& theta,
                                          const Eigen::MatrixXd& dist) {
  check_theta(e, theta);
  int cursor = 0;
  Eigen::MatrixXd K = eval_node(e, theta, cursor, dist.array()).matrix();
  return K;
}

Eigen::MatrixXd eval_covariance(const KernelExpr& e, const Eigen::VectorXd& theta,
                                const Eigen::MatrixXd& X) {
  Eigen::MatrixXd d = pairwise_distances(X);
  d.diagonal().setZero();
  return eval_covariance_from_dist(e, theta, d);
}

Eigen::MatrixXd eval_cross_covariance(const KernelExpr& e, const Eigen::VectorXd& theta,
                                      const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) throw std::invalid_argument("cross covariance: dimension mismatch");
  return eval_covariance_from_dist(e, theta, cross_distances(A, B));
}

std::string KernelLibrary::hash() const {
  std::string joined;
  for (const auto& ent : entries) {
    joined += ent.expr.canonical_string();
    joined += '\n';
  }
  return hash_hex(joined);
}

int KernelLibrary::index_of(const std::string& canonical) const {
  for (const auto& ent : entries) {
    if (ent.expr.canonical_string() == canonical) return ent.index;
  }
  return -1;
}

KernelLibrary generate_library(int max_depth, const std::vector<BaseKind>& bases) {
  if (max_depth < 1 || max_depth > 3) {
    throw std::invalid_argument("generate_library: max_depth must be 1, 2 or 3");
  }
  if (bases.empty()) throw std::invalid_argument("generate_library: base set is empty");
  {
    std::set<std::string> names;
    for (const auto b : bases) names.insert(base_name(b));
    if (names.size() != bases.size()) {
      throw std::invalid_argument("generate_library: duplicate base kernels");
    }
  }

  // Dynamic programming over leaf count: every expression with d leaves is a
  // binary combination of expressions with d1 + d2 = d leaves; flattening and
  // sorting in canonicalize() collapses duplicates.
  std::vector<std::map<std::string, KernelExpr>> by_depth(static_cast<std::size_t>(max_depth) + 1);
  for (const auto b : bases) {
    KernelExpr l = KernelExpr::leaf(b);
    by_depth[1].emplace(l.canonical_string(), l);
  }
  for (int d = 2; d <= max_depth; ++d) {
    for (int d1 = 1; d1 < d; ++d1) {
      const int d2 = d - d1;
      for (const auto& [s1, e1] : by_depth[static_cast<std::size_t>(d1)]) {
        for (const auto& [s2, e2] : by_depth[static_cast<std::size_t>(d2)]) {
          for (const bool is_sum : {true, false}) {
            KernelExpr combined = is_sum ? KernelExpr::sum({e1, e2})
                                         : KernelExpr::product({e1, e2});
            by_depth[static_cast<std::size_t>(d)].emplace(combined.canonical_string(),
                                                          combined);
          }
        }
      }
    }
  }

  KernelLibrary lib;
  lib.max_depth = max_depth;
  lib.bases = bases;
  int idx = 0;
  for (int d = 1; d <= max_depth; ++d) {
    for (const auto& [str, expr] : by_depth[static_cast<std::size_t>(d)]) {
      LibraryEntry ent;
      ent.index = idx++;
      ent.expr = expr;
      ent.depth = expr.depth();
      ent.schema = expr.schema();
      lib.entries.push_back(std::move(ent));
    }
  }
  return lib;
}

std::string library_to_json(const KernelLibrary& lib) {
  nlohmann::json j;
  j["max_depth"] = lib.max_depth;
  std::vector<std::string> base_names;
  for (const auto b : lib.bases) base_names.emplace_back(base_name(b));
  j["bases"] = base_names;
  j["hash"] = lib.hash();
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& ent : lib.entries) {
    nlohmann::json e;
    e["index"] = ent.index;
    e["expr"] = ent.expr.canonical_string();
    e["depth"] = ent.depth;
    nlohmann::json schema = nlohmann::json::array();
    for (const auto& s : ent.schema) {
      schema.push_back({{"name", s.name}, {"low", s.low}, {"high", s.high}});
    }
    e["schema"] = schema;
    arr.push_back(std::move(e));
  }
  j["entries"] = std::move(arr);
  return j.dump(2) + "\n";
}

KernelLibrary library_from_json(const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  KernelLibrary lib;
  lib.max_depth = j.at("max_depth").get<int>();
  for (const auto& name : j.at("bases")) {
    lib.bases.push_back(base_from_name(name.get<std::string>()));
  }
  for (const auto& e : j.at("entries")) {
    LibraryEntry ent;
    ent.index = e.at("index").get<int>();
    ent.expr = parse_expr(e.at("expr").get<std::string>());
    ent.depth = e.at("depth").get<int>();
    ent.schema = ent.expr.schema();
    if (ent.depth != ent.expr.depth()) {
      throw std::invalid_argument("library manifest depth mismatch for " +
                                  ent.expr.canonical_string());
    }
    lib.entries.push_back(std::move(ent));
  }
  return lib;
}

void save_library(const KernelLibrary& lib, const std::string& path) {
  io::write_file(path, library_to_json(lib));
}

KernelLibrary load_library(const std::string& path) {
  return library_from_json(io::read_file(path));
}

}  // namespace km::grammar
