#include "km/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "km/io.hpp"

namespace km {
namespace {

void require_finite(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (!X.allFinite() || !y.allFinite()) {
    throw std::invalid_argument("dataset contains non-finite values");
  }
}

double parse_cell(const std::string& cell) {
  // "YYYY-MM" month stamps become decimal years (mid-month).
  if (cell.size() == 7 && cell[4] == '-' && std::isdigit(static_cast<unsigned char>(cell[0]))) {
    int year = 0, month = 0;
    const auto r1 = std::from_chars(cell.data(), cell.data() + 4, year);
    const auto r2 = std::from_chars(cell.data() + 5, cell.data() + 7, month);
    if (r1.ec == std::errc() && r2.ec == std::errc() && month >= 1 && month <= 12) {
      return static_cast<double>(year) + (static_cast<double>(month) - 0.5) / 12.0;
    }
  }
  double v = std::numeric_limits<double>::quiet_NaN();
  const char* begin = cell.data();
  const char* end = cell.data() + cell.size();
  while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
  auto [p, ec] = std::from_chars(begin, end, v);
  (void)p;
  if (ec != std::errc()) return std::numeric_limits<double>::quiet_NaN();
  return v;
}

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

RawTable read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV: " + path);
  RawTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV: " + path);
  t.header = io::split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    t.rows.push_back(io::split_csv_line(line));
  }
  return t;
}

int column_index(const RawTable& t, const std::string& name, const std::string& path) {
  const auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) {
    std::string have;
    for (const auto& h : t.header) have += (have.empty() ? "" : ", ") + h;
    throw std::invalid_argument("column '" + name + "' not found in " + path +
                                " (available: " + have + ")");
  }
  return static_cast<int>(it - t.header.begin());
}

}  // namespace

Dataset Dataset::from_raw(const Eigen::MatrixXd& X_raw, const Eigen::VectorXd& y_raw) {
  if (X_raw.rows() != y_raw.size()) throw std::invalid_argument("dataset: X/y row mismatch");
  if (X_raw.rows() < 2) throw std::invalid_argument("dataset: need at least 2 rows");
  require_finite(X_raw, y_raw);

  Dataset d;
  d.x_min = X_raw.colwise().minCoeff();
  d.x_max = X_raw.colwise().maxCoeff();
  d.X = X_raw;
  for (int j = 0; j < X_raw.cols(); ++j) {
    const double range = d.x_max[j] - d.x_min[j];
    if (range > 0.0) {
      d.X.col(j) = (X_raw.col(j).array() - d.x_min[j]) / range;
    } else {
      d.X.col(j).setZero();
    }
  }
  d.y_mean = y_raw.mean();
  const double var = (y_raw.array() - d.y_mean).square().sum() / static_cast<double>(y_raw.size());
  d.y_std = var > 0.0 ? std::sqrt(var) : 1.0;
  d.y = (y_raw.array() - d.y_mean) / d.y_std;
  return d;
}

Dataset Dataset::from_normalized(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size()) throw std::invalid_argument("dataset: X/y row mismatch");
  if (X.rows() < 1) throw std::invalid_argument("dataset: need at least 1 row");
  require_finite(X, y);
  Dataset d;
  d.X = X;
  d.y = y;
  d.x_min = Eigen::VectorXd::Zero(X.cols());
  d.x_max = Eigen::VectorXd::Ones(X.cols());
  d.y_mean = 0.0;
  d.y_std = 1.0;
  return d;
}

Eigen::MatrixXd Dataset::denormalize_X() const {
  Eigen::MatrixXd out = X;
  for (int j = 0; j < X.cols(); ++j) {
    out.col(j) = X.col(j).array() * (x_max[j] - x_min[j]) + x_min[j];
  }
  return out;
}

Eigen::VectorXd Dataset::denormalize_y() const { return y.array() * y_std + y_mean; }

CsvLoadReport load_csv_dataset(const std::string& path,
                               const std::vector<std::string>& x_columns,
                               const std::string& y_column) {
  if (x_columns.empty()) throw std::invalid_argument("load_csv_dataset: no x columns given");
  const RawTable t = read_table(path);
  std::vector<int> xi;
  xi.reserve(x_columns.size());
  for (const auto& c : x_columns) xi.push_back(column_index(t, c, path));
  const int yi = column_index(t, y_column, path);

  std::vector<Eigen::VectorXd> xs;
  std::vector<double> ys;
  int dropped = 0;
  for (const auto& row : t.rows) {
    bool ok = true;
    Eigen::VectorXd x(static_cast<Eigen::Index>(xi.size()));
    for (std::size_t k = 0; k < xi.size(); ++k) {
      const auto idx = static_cast<std::size_t>(xi[k]);
      const double v = idx < row.size() ? parse_cell(row[idx]) : std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(v)) ok = false;
      x[static_cast<Eigen::Index>(k)] = v;
    }
    const auto yidx = static_cast<std::size_t>(yi);
    const double yv = yidx < row.size() ? parse_cell(row[yidx]) : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(yv)) ok = false;
    if (!ok) {
      ++dropped;
      continue;
    }
    xs.push_back(std::move(x));
    ys.push_back(yv);
  }
  if (xs.size() < 2) {
    throw std::invalid_argument("no usable rows (need >= 2) in " + path + " after dropping " +
                                std::to_string(dropped));
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(xi.size()));
  Eigen::VectorXd y(static_cast<Eigen::Index>(ys.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    X.row(static_cast<Eigen::Index>(i)) = xs[i].transpose();
    y[static_cast<Eigen::Index>(i)] = ys[i];
  }
  CsvLoadReport rep;
  rep.dataset = Dataset::from_raw(X, y);
  rep.dropped_rows = dropped;
  return rep;
}

CsvLoadReport load_csv_series(const std::string& path, const std::string& x_column,
                              const std::string& y_column) {
  CsvLoadReport rep = load_csv_dataset(path, {x_column}, y_column);
  // Re-sort by x (raw order), then rebuild the normalized dataset so the
  // stored rows are monotone in x.
  const Eigen::MatrixXd Xr = rep.dataset.denormalize_X();
  const Eigen::VectorXd yr = rep.dataset.denormalize_y();
  std::vector<int> order(static_cast<std::size_t>(Xr.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return Xr(a, 0) < Xr(b, 0); });
  Eigen::MatrixXd Xs(Xr.rows(), Xr.cols());
  Eigen::VectorXd ys(yr.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    Xs.row(static_cast<Eigen::Index>(i)) = Xr.row(order[i]);
    ys[static_cast<Eigen::Index>(i)] = yr[order[i]];
  }
  rep.dataset = Dataset::from_raw(Xs, ys);
  return rep;
}

void save_dataset_csv(const Dataset& data, const std::string& path) {
  const Eigen::MatrixXd Xr = data.denormalize_X();
  const Eigen::VectorXd yr = data.denormalize_y();
  std::string out;
  for (int j = 0; j < data.d(); ++j) out += "x" + std::to_string(j) + ",";
  out += "y\n";
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.d(); ++j) out += io::format_double(Xr(i, j)) + ",";
    out += io::format_double(yr[i]) + "\n";
  }
  io::write_file(path, out);
}

}  // namespace km
