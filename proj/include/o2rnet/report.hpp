#pragma once

#include <string>
#include <vector>

#include "o2rnet/evaluation.hpp"

namespace o2r {

struct ReportRow {
  std::string model;
  std::string step;  // FES steps t, or "-" for the occluder-only baseline
  EvalSummary summary;
};

/// Columns: Model, Step, AP, AP50, AP75, AR, AR50, AR75, F1-Score.
std::string report_csv(const std::vector<ReportRow>& rows);
std::string report_text(const std::vector<ReportRow>& rows, int max_dets);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Static SVG line chart.
std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label);

/// Exponential moving average used to smooth loss curves for plotting.
std::vector<double> smooth(const std::vector<double>& v, double alpha = 0.05);

}  // namespace o2r
