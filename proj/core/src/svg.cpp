#include "km/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace km::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Tick label formatting: compact general form.
std::string fmt_tick(double v) {
  if (std::abs(v) < 1e-12) v = 0.0;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

/// Round bounds outward to a tick-friendly step (1/2/5 ladder).
void nice_axis(double lo, double hi, double& tick, double& nice_lo, double& nice_hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double span = hi - lo;
  const double raw_step = span / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw_step)));
  const double norm = raw_step / mag;
  double step = 10.0;
  if (norm <= 1.0) {
    step = 1.0;
  } else if (norm <= 2.0) {
    step = 2.0;
  } else if (norm <= 5.0) {
    step = 5.0;
  }
  tick = step * mag;
  nice_lo = std::floor(lo / tick) * tick;
  nice_hi = std::ceil(hi / tick) * tick;
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label, int width,
                       int height) {
  double x_lo = std::numeric_limits<double>::infinity();
  double x_hi = -std::numeric_limits<double>::infinity();
  double y_lo = x_lo;
  double y_hi = x_hi;
  bool any = false;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) {
      throw std::invalid_argument("svg series '" + s.label + "': x/y length mismatch");
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      any = true;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (!any) throw std::invalid_argument("svg chart: no finite data points");

  double x_tick = 1.0;
  double y_tick = 1.0;
  nice_axis(x_lo, x_hi, x_tick, x_lo, x_hi);
  nice_axis(y_lo, y_hi, y_tick, y_lo, y_hi);

  const double ml = 86.0;   // margins
  const double mr = 24.0;
  const double mt = 46.0;
  const double mb = 64.0;
  const double pw = width - ml - mr;   // plot area
  const double ph = height - mt - mb;

  const auto px = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * pw; };
  const auto py = [&](double y) { return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
         " " + std::to_string(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(width / 2.0) + "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\" font-weight=\"bold\">" +
         escape(title) + "</text>\n";

  // Grid and ticks.
  out += "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (double t = x_lo; t <= x_hi + 0.5 * x_tick; t += x_tick) {
    const double gx = px(t);
    out += "<line x1=\"" + fmt(gx) + "\" y1=\"" + fmt(mt) + "\" x2=\"" + fmt(gx) + "\" y2=\"" +
           fmt(mt + ph) + "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + fmt(gx) + "\" y=\"" + fmt(mt + ph + 18.0) +
           "\" text-anchor=\"middle\">" + fmt_tick(t) + "</text>\n";
  }
  for (double t = y_lo; t <= y_hi + 0.5 * y_tick; t += y_tick) {
    const double gy = py(t);
    out += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(gy) + "\" x2=\"" + fmt(ml + pw) +
           "\" y2=\"" + fmt(gy) + "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + fmt(ml - 8.0) + "\" y=\"" + fmt(gy + 4.0) +
           "\" text-anchor=\"end\">" + fmt_tick(t) + "</text>\n";
  }
  out += "</g>\n";

  // Axes.
  out += "<rect x=\"" + fmt(ml) + "\" y=\"" + fmt(mt) + "\" width=\"" + fmt(pw) +
         "\" height=\"" + fmt(ph) + "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  out += "<text x=\"" + fmt(ml + pw / 2.0) + "\" y=\"" + fmt(height - 16.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
         escape(x_label) + "</text>\n";
  out += "<text x=\"20\" y=\"" + fmt(mt + ph / 2.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\""
         "rotate(-90 20 " +
         fmt(mt + ph / 2.0) + ")\">" + escape(y_label) + "</text>\n";

  // Series polylines.
  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = kPalette[si % kPaletteSize];
    std::string points;
    for (std::size_t i = 0; i < series[si].x.size(); ++i) {
      const double x = series[si].x[i];
      const double y = series[si].y[i];
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      points += fmt(px(x)) + "," + fmt(py(y)) + " ";
    }
    if (points.empty()) continue;
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
  }

  // Legend.
  double ly = mt + 10.0;
  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = kPalette[si % kPaletteSize];
    out += "<line x1=\"" + fmt(ml + 12.0) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(ml + 38.0) +
           "\" y2=\"" + fmt(ly) + "\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(ml + 44.0) + "\" y=\"" + fmt(ly + 4.0) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + escape(series[si].label) +
           "</text>\n";
    ly += 18.0;
  }

  out += "</svg>\n";
  return out;
}

}  // namespace km::svg
