#pragma once

// Minimal deterministic SVG line/scatter charts.

#include <string>
#include <vector>

namespace lyapnet::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool markers_only = false;  // scatter instead of polyline
  bool dashed = false;
};

struct ChartOptions {
  std::string title;
  std::string caption;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  int width = 640;
  int height = 420;
};

/// Points with non-finite coordinates (or nonpositive ones on a log axis) are skipped.
std::string render_chart(const std::vector<Series>& series, const ChartOptions& options);

std::string escape_xml(const std::string& text);

}  // namespace lyapnet::svg
