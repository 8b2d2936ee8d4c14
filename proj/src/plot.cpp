#include "fedcsr/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

namespace fedcsr::plot {

namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 400;
constexpr double kLeft = 70;
constexpr double kRight = 150;
constexpr double kTop = 40;
constexpr double kBottom = 55;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void include(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish(bool from_zero) {
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (from_zero) lo = std::min(lo, 0.0);
    if (hi - lo < 1e-12) {
      hi += 0.5;
      lo -= from_zero ? 0.0 : 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    hi += pad;
    if (!from_zero) lo -= pad;
  }
};

void header(std::ostringstream& os, const Axes& axes) {
  os << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n",
      kWidth, kHeight);
  os << fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kWidth, kHeight);
  os << fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                    (kLeft + kWidth - kRight) / 2, escape(axes.title));
  os << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                    (kLeft + kWidth - kRight) / 2, kHeight - 12, escape(axes.x_label));
  os << fmt::format(
      "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
      (kTop + kHeight - kBottom) / 2, escape(axes.y_label));
}

void y_axis(std::ostringstream& os, const Range& y) {
  const double plot_h = kHeight - kTop - kBottom;
  os << fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", kLeft,
                    kTop, kHeight - kBottom);
  for (int i = 0; i <= 5; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 5.0;
    const double py = kHeight - kBottom - plot_h * i / 5.0;
    os << fmt::format("<line x1=\"{}\" y1=\"{:.2f}\" x2=\"{}\" y2=\"{:.2f}\" stroke=\"#ddd\"/>\n",
                      kLeft, py, kWidth - kRight, py);
    os << fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{:.4g}</text>\n", kLeft - 6,
                      py + 4, v);
  }
}

}  // namespace

std::string line_chart(const Axes& axes, const std::vector<Series>& series) {
  Range x;
  Range y;
  for (const auto& s : series) {
    for (double v : s.x) x.include(v);
    for (double v : s.y) y.include(v);
  }
  x.finish(false);
  y.finish(false);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + plot_w * (v - x.lo) / (x.hi - x.lo); };
  auto py = [&](double v) { return kHeight - kBottom - plot_h * (v - y.lo) / (y.hi - y.lo); };

  std::ostringstream os;
  header(os, axes);
  y_axis(os, y);
  os << fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", kLeft,
                    kHeight - kBottom, kWidth - kRight);
  for (int i = 0; i <= 5; ++i) {
    const double v = x.lo + (x.hi - x.lo) * i / 5.0;
    os << fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", px(v),
                      kHeight - kBottom + 16, v);
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      points += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
    }
    os << fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                      color, points);
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", px(s.x[i]),
                        py(s.y[i]), color);
    }
    const double ly = kTop + 16.0 * static_cast<double>(k);
    os << fmt::format("<rect x=\"{}\" y=\"{:.2f}\" width=\"12\" height=\"3\" fill=\"{}\"/>\n",
                      kWidth - kRight + 12, ly + 4, color);
    os << fmt::format("<text x=\"{}\" y=\"{:.2f}\">{}</text>\n", kWidth - kRight + 30, ly + 9,
                      escape(s.name));
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart(const Axes& axes, const std::vector<std::string>& labels,
                      const std::vector<double>& values, const std::vector<double>& errors) {
  Range y;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double e = i < errors.size() ? errors[i] : 0.0;
    y.include(values[i] + e);
    y.include(values[i] - e);
  }
  y.finish(true);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto py = [&](double v) { return kHeight - kBottom - plot_h * (v - y.lo) / (y.hi - y.lo); };

  std::ostringstream os;
  header(os, axes);
  y_axis(os, y);
  os << fmt::format("<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"black\"/>\n",
                    kLeft, py(0.0), kWidth - kRight);
  const double slot = plot_w / static_cast<double>(std::max<std::size_t>(1, values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    const double top = py(std::max(values[i], 0.0));
    const double bottom = py(std::min(values[i], 0.0));
    os << fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"/>\n",
                      cx - slot * 0.3, top, slot * 0.6, bottom - top,
                      kPalette[i % std::size(kPalette)]);
    if (i < errors.size() && errors[i] > 0) {
      os << fmt::format(
          "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n", cx,
          py(values[i] - errors[i]), py(values[i] + errors[i]));
    }
    os << fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", cx,
                      kHeight - kBottom + 16, escape(i < labels.size() ? labels[i] : ""));
    os << fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.4f}</text>\n", cx,
                      top - 4, values[i]);
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace fedcsr::plot
