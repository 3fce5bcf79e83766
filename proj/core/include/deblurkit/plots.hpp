#pragma once

#include "deblurkit/evaluation.hpp"
#include "deblurkit/image.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dbk {

/// A labeled bar chart rendered to an RGB raster. Values must be finite and
/// non-negative; the value axis always starts at zero.
struct BarChartSpec {
    std::string title;
    std::vector<std::pair<std::string, double>> bars;
    int width = 640;
    int height = 400;
};

Image render_bar_chart(const BarChartSpec& spec);

/// An equal-width-bin histogram of a non-empty sample.
struct HistogramSpec {
    std::string title;
    std::vector<double> values;
    int bins = 16;
    int width = 640;
    int height = 400;
};

Image render_histogram(const HistogramSpec& spec);

/// Renders the standard plot set for an evaluation report into `out_dir`:
/// a detection-rate bar chart (when the report has a detection section) and
/// one PSNR histogram per metrics section. Returns the files written.
std::vector<std::filesystem::path> render_report_plots(const EvalReport& report,
                                                       const std::filesystem::path& out_dir);

} // namespace dbk
