#include "tomodet/app/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace tomodet::app {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

} // namespace

std::string froc_panels_svg(const std::vector<SvgPanel>& panels)
{
    constexpr double kW = 360, kH = 300, kLeft = 55, kTop = 35, kPw = 280, kPh = 210;
    const double xmin = std::log2(0.125), xmax = std::log2(8.0);
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kW * panels.size()) << "\" height=\"" << kH
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t p = 0; p < panels.size(); ++p) {
        const double ox = kW * p + kLeft, oy = kTop;
        auto px = [&](double fp) {
            const double l = std::log2(std::clamp(fp, 0.125, 8.0));
            return ox + (l - xmin) / (xmax - xmin) * kPw;
        };
        auto py = [&](double s) { return oy + (1.0 - std::clamp(s, 0.0, 1.0)) * kPh; };
        os << "<text x=\"" << num(ox + kPw / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
           << escape(panels[p].title) << "</text>\n";
        os << "<rect x=\"" << num(ox) << "\" y=\"" << num(oy) << "\" width=\"" << kPw << "\" height=\"" << kPh
           << "\" fill=\"none\" stroke=\"black\"/>\n";
        for (double t : {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
            os << "<line x1=\"" << num(px(t)) << "\" x2=\"" << num(px(t)) << "\" y1=\"" << num(oy) << "\" y2=\""
               << num(oy + kPh) << "\" stroke=\"#ddd\"/>\n";
            os << "<text x=\"" << num(px(t)) << "\" y=\"" << num(oy + kPh + 14)
               << "\" text-anchor=\"middle\">" << (t < 1 ? "1/" + std::to_string(int(std::lround(1 / t))) : std::to_string(int(t)))
               << "</text>\n";
        }
        for (int k = 0; k <= 5; ++k) {
            const double s = k / 5.0;
            os << "<line x1=\"" << num(ox) << "\" x2=\"" << num(ox + kPw) << "\" y1=\"" << num(py(s)) << "\" y2=\""
               << num(py(s)) << "\" stroke=\"#eee\"/>\n";
            os << "<text x=\"" << num(ox - 5) << "\" y=\"" << num(py(s) + 4) << "\" text-anchor=\"end\">" << num(s)
               << "</text>\n";
        }
        os << "<text x=\"" << num(ox + kPw / 2) << "\" y=\"" << num(oy + kPh + 30)
           << "\" text-anchor=\"middle\">average false positives per scan</text>\n";
        os << "<text transform=\"translate(" << num(ox - 40) << "," << num(oy + kPh / 2)
           << ") rotate(-90)\" text-anchor=\"middle\">sensitivity</text>\n";
        for (std::size_t s = 0; s < panels[p].series.size(); ++s) {
            const auto& ser = panels[p].series[s];
            const char* colour = kPalette[s % std::size(kPalette)];
            // Step curves: hold each sensitivity until the next FP rate.
            auto step_path = [&](const std::vector<double>& ys) {
                std::ostringstream d;
                for (std::size_t i = 0; i < ser.x.size(); ++i) {
                    if (i == 0)
                        d << "M" << num(px(ser.x[i])) << "," << num(py(ys[i]));
                    else
                        d << " H" << num(px(ser.x[i])) << " V" << num(py(ys[i]));
                }
                if (!ser.x.empty()) d << " H" << num(px(8.0));
                return d.str();
            };
            if (!ser.lo.empty() && ser.lo.size() == ser.x.size()) {
                std::ostringstream band;
                for (std::size_t i = 0; i < ser.x.size(); ++i) {
                    const double x1 = px(ser.x[i]), x2 = i + 1 < ser.x.size() ? px(ser.x[i + 1]) : px(8.0);
                    if (x2 <= x1) continue;
                    band << "<rect x=\"" << num(x1) << "\" y=\"" << num(py(ser.hi[i])) << "\" width=\"" << num(x2 - x1)
                         << "\" height=\"" << num(py(ser.lo[i]) - py(ser.hi[i])) << "\" fill=\"" << colour
                         << "\" fill-opacity=\"0.12\"/>\n";
                }
                os << band.str();
            }
            os << "<path d=\"" << step_path(ser.y) << "\" fill=\"none\" stroke=\"" << colour
               << "\" stroke-width=\"1.6\"/>\n";
            os << "<text x=\"" << num(ox + kPw - 5) << "\" y=\"" << num(oy + kPh - 10 - 14 * double(s))
               << "\" text-anchor=\"end\" fill=\"" << colour << "\">" << escape(ser.name) << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

std::string image_grid_svg(const std::vector<std::vector<SvgImage>>& rows, const std::vector<std::string>& row_labels,
                           double lo, double hi)
{
    constexpr double kPix = 2.0, kGap = 10, kLabel = 90, kTitle = 18;
    std::size_t cols = 0, cell_w = 0, cell_h = 0;
    for (const auto& r : rows) {
        cols = std::max(cols, r.size());
        for (const auto& im : r) {
            cell_w = std::max(cell_w, im.nx);
            cell_h = std::max(cell_h, im.ny);
        }
    }
    const double cw = double(cell_w) * kPix, ch = double(cell_h) * kPix;
    const double width = kLabel + double(cols) * (cw + kGap), height = double(rows.size()) * (ch + kTitle + kGap) + kGap;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
       << "\" font-family=\"sans-serif\" font-size=\"11\" shape-rendering=\"crispEdges\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double oy = kGap + double(r) * (ch + kTitle + kGap) + kTitle;
        if (r < row_labels.size())
            os << "<text x=\"5\" y=\"" << num(oy + ch / 2) << "\">" << escape(row_labels[r]) << "</text>\n";
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            const auto& im = rows[r][c];
            const double ox = kLabel + double(c) * (cw + kGap);
            os << "<text x=\"" << num(ox + cw / 2) << "\" y=\"" << num(oy - 5) << "\" text-anchor=\"middle\">"
               << escape(im.title) << "</text>\n";
            os << "<g>\n";
            for (std::size_t y = 0; y < im.ny; ++y) {
                std::size_t x = 0;
                while (x < im.nx) {
                    auto grey = [&](std::size_t i) {
                        const double t = (im.values[y * im.nx + i] - lo) / (hi - lo);
                        return int(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
                    };
                    const int g = grey(x);
                    std::size_t e = x + 1;
                    while (e < im.nx && grey(e) == g) ++e;
                    char buf[160];
                    std::snprintf(buf, sizeof buf,
                                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"#%02x%02x%02x\"/>\n",
                                  ox + double(x) * kPix, oy + double(y) * kPix, double(e - x) * kPix, kPix, g, g, g);
                    os << buf;
                    x = e;
                }
            }
            os << "</g>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace tomodet::app
