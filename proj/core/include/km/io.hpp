#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace km::io {

/// Formats a double with 17 significant digits (round-trips exactly).
std::string format_double(double v);

/// Writes a dense matrix as bare CSV rows (no header), 17 significant digits.
void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& path);

/// Reads a bare numeric CSV (no header) into a dense matrix.
Eigen::MatrixXd read_matrix_csv(const std::string& path);

/// Serializes a matrix to the CSV text that write_matrix_csv would emit.
std::string matrix_csv_string(const Eigen::MatrixXd& m);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);
void append_file(const std::string& path, const std::string& contents);
bool file_exists(const std::string& path);

/// Parses one CSV line into cells. Plain splitting on commas; cells are
/// trimmed of surrounding whitespace and optional double quotes.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace km::io
