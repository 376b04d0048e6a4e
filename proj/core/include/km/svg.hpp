#pragma once

#include <string>
#include <vector>

namespace km::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;  // same length as x; non-finite points are skipped
};

/// Self-contained SVG line chart (axes, ticks, legend, fixed palette) with no
/// external references, sized width x height pixels. Deterministic output for
/// identical inputs. Throws std::invalid_argument when no finite point exists
/// or a series has mismatched lengths.
[[nodiscard]] std::string line_chart(const std::vector<Series>& series, const std::string& title,
                                     const std::string& x_label, const std::string& y_label,
                                     int width = 880, int height = 560);

}  // namespace km::svg
