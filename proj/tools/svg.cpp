#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace lyapnet::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  bool log = false;

  double map(double v) const { return log ? std::log10(v) : v; }
  double unit(double v) const { return (map(v) - lo) / (hi - lo); }
};

bool usable(double v, bool log) { return std::isfinite(v) && (!log || v > 0.0); }

Axis make_axis(const std::vector<Series>& series, bool log, bool use_x) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!usable(s.x[i], log && use_x) || !usable(s.y[i], log && !use_x)) continue;
      const double v = use_x ? s.x[i] : s.y[i];
      const double m = log ? std::log10(v) : v;
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
  }
  if (!std::isfinite(lo)) return Axis{0.0, 1.0, log};
  if (log) {
    lo = std::floor(lo);
    hi = std::ceil(hi);
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  return Axis{lo, hi, log};
}

std::vector<double> ticks(const Axis& a) {
  std::vector<double> out;
  if (a.log) {
    for (double e = a.lo; e <= a.hi + 1e-9; e += 1.0) out.push_back(std::pow(10.0, e));
    return out;
  }
  const double span = a.hi - a.lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  }
  for (double t = std::ceil(a.lo / step) * step; t <= a.hi + 1e-9 * span; t += step) out.push_back(t);
  return out;
}

std::string num(double v) { return fmt::format("{:.2f}", v); }

}  // namespace

std::string escape_xml(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render_chart(const std::vector<Series>& series, const ChartOptions& opt) {
  const double left = 72, right = 24, top = 40, bottom = 72;
  const double pw = opt.width - left - right;
  const double ph = opt.height - top - bottom;
  const Axis ax = make_axis(series, opt.log_x, true);
  const Axis ay = make_axis(series, opt.log_y, false);
  auto px = [&](double x) { return left + ax.unit(x) * pw; };
  auto py = [&](double y) { return top + (1.0 - ay.unit(y)) * ph; };

  std::string s;
  s += fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      opt.width, opt.height);
  s += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n", opt.width, opt.height);
  s += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n", num(opt.width / 2.0),
                   escape_xml(opt.title));
  s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", num(left),
                   num(top), num(pw), num(ph));

  for (double t : ticks(ax)) {
    const double x = px(t);
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#ddd\"/>\n", num(x), num(top),
                     num(top + ph));
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", num(x), num(top + ph + 16),
                     escape_xml(fmt::format("{:g}", t)));
  }
  for (double t : ticks(ay)) {
    const double y = py(t);
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#ddd\"/>\n", num(left), num(y),
                     num(left + pw));
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", num(left - 6), num(y + 4),
                     escape_xml(fmt::format("{:g}", t)));
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", num(left + pw / 2),
                   num(top + ph + 36), escape_xml(opt.x_label));
  s += fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                   num(top + ph / 2), escape_xml(opt.y_label));

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& ser = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < ser.x.size() && i < ser.y.size(); ++i) {
      if (!usable(ser.x[i], opt.log_x) || !usable(ser.y[i], opt.log_y)) continue;
      if (ser.markers_only) {
        s += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n", num(px(ser.x[i])), num(py(ser.y[i])),
                         color);
      } else {
        pts += fmt::format("{}{},{}", pts.empty() ? "" : " ", num(px(ser.x[i])), num(py(ser.y[i])));
      }
    }
    if (!pts.empty()) {
      s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{} points=\"{}\"/>\n", color,
                       ser.dashed ? " stroke-dasharray=\"6 4\"" : "", pts);
    }
    const double ly = top + 14 + 16 * static_cast<double>(k);
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                     num(left + pw - 150), num(ly - 4), num(left + pw - 130), color);
    s += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", num(left + pw - 124), num(ly), escape_xml(ser.label));
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#444\">{}</text>\n", num(opt.width / 2.0),
                   num(opt.height - 10.0), escape_xml(opt.caption));
  s += "</svg>\n";
  return s;
}

}  // namespace lyapnet::svg
