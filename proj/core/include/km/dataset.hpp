#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace km {

/// Supervised regression data in model coordinates: inputs normalized to
/// [0, 1] per dimension, targets standardized to zero mean / unit variance.
/// The normalization metadata makes the mapping invertible.
struct Dataset {
  Eigen::MatrixXd X;  // n x d, normalized
  Eigen::VectorXd y;  // n, standardized
  Eigen::VectorXd x_min, x_max;  // raw per-dimension ranges
  double y_mean = 0.0;
  double y_std = 1.0;

  [[nodiscard]] int n() const { return static_cast<int>(X.rows()); }
  [[nodiscard]] int d() const { return static_cast<int>(X.cols()); }

  /// Normalizes raw inputs/targets. Requires n >= 2 and finite values; a
  /// constant input dimension maps to 0 and a constant target keeps std 1.
  static Dataset from_raw(const Eigen::MatrixXd& X_raw, const Eigen::VectorXd& y_raw);

  /// Wraps already-normalized values verbatim (identity metadata); n >= 1.
  /// Intended for synthetic fixtures and tests.
  static Dataset from_normalized(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

  [[nodiscard]] Eigen::MatrixXd denormalize_X() const;
  [[nodiscard]] Eigen::VectorXd denormalize_y() const;
};

struct CsvLoadReport {
  Dataset dataset;
  int dropped_rows = 0;  // rows discarded for non-finite cells
};

/// Loads a two-column series from a headed CSV: x_column and y_column are
/// header names. Rows with non-finite values in either column are dropped
/// (counted), the series is sorted by x, and the result normalized. An x cell
/// of the form "YYYY-MM" is interpreted as a decimal year.
CsvLoadReport load_csv_series(const std::string& path, const std::string& x_column,
                              const std::string& y_column);

/// Loads a multi-input dataset from a headed CSV: every x column name in
/// order, then the y column. Same drop/normalize rules, no sorting.
CsvLoadReport load_csv_dataset(const std::string& path,
                               const std::vector<std::string>& x_columns,
                               const std::string& y_column);

/// Writes a dataset's raw (denormalized) values as a headed CSV x0..x{d-1},y.
void save_dataset_csv(const Dataset& data, const std::string& path);

}  // namespace km
