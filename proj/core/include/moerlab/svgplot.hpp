#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace moerlab {

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (step, value)
};

/// Reads run or aggregate CSVs and returns their eval-loss series
/// (eval_loss or mean_eval_loss column), labeled by file stem.
std::vector<PlotSeries> load_plot_series(const std::vector<std::string>& csv_paths);

/// Self-contained SVG 1.1 line chart, 880x560: axes, tick labels, one
/// polyline per series, legend from the labels. Y axis is oriented so
/// larger losses sit higher on the page (smaller pixel y).
void write_loss_svg(const std::vector<PlotSeries>& series, std::ostream& out);

}  // namespace moerlab
