#pragma once

#include <string>
#include <vector>

namespace tomodet::app {

struct SvgSeries {
    std::string name;
    std::vector<double> x, y, lo, hi;
};

struct SvgPanel {
    std::string title;
    std::vector<SvgSeries> series;
};

/// FROC panels side by side: log2 FP/scan axis from 1/8 to 8, sensitivity
/// 0..1, one line per series with its 95% band shaded.
std::string froc_panels_svg(const std::vector<SvgPanel>& panels);

struct SvgImage {
    std::string title;
    std::size_t nx = 0, ny = 0;
    std::vector<double> values; // row-major, y outer
};

/// Grid of grey-scale images (rows of equal length) displayed with the
/// window [lo, hi]; pixels are merged into horizontal runs of equal grey.
std::string image_grid_svg(const std::vector<std::vector<SvgImage>>& rows, const std::vector<std::string>& row_labels,
                           double lo, double hi);

} // namespace tomodet::app
