#pragma once

// Small dependency-free SVG charts for run reports.

#include <string>
#include <vector>

namespace fedcsr::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
};

std::string line_chart(const Axes& axes, const std::vector<Series>& series);

/// One bar per label; `errors` (same length or empty) draws ±whiskers.
std::string bar_chart(const Axes& axes, const std::vector<std::string>& labels,
                      const std::vector<double>& values, const std::vector<double>& errors = {});

}  // namespace fedcsr::plot
