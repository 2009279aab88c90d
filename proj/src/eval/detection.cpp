#include "tomodet/eval/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "tomodet/train/training.hpp"
#include "tomodet/util/binary_io.hpp"
#include "tomodet/util/error.hpp"
#include "tomodet/util/parallel.hpp"

namespace tomodet::eval {

bool Detection::contains(const std::array<double, 3>& p) const
{
    for (int a = 0; a < 3; ++a)
        if (p[a] < center[a] - 0.5 * extent[a] || p[a] >= center[a] + 0.5 * extent[a]) return false;
    return true;
}

double iou(const Detection& a, const Detection& b)
{
    double inter = 1.0, va = 1.0, vb = 1.0;
    for (int k = 0; k < 3; ++k) {
        const double lo = std::max(a.center[k] - 0.5 * a.extent[k], b.center[k] - 0.5 * b.extent[k]);
        const double hi = std::min(a.center[k] + 0.5 * a.extent[k], b.center[k] + 0.5 * b.extent[k]);
        inter *= std::max(0.0, hi - lo);
        va *= a.extent[k];
        vb *= b.extent[k];
    }
    const double uni = va + vb - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::array<double, 3> window_extent(const ct::Volume& grid)
{
    return {double(sampling::kPatchExtents[0]) * grid.spacing[0], double(sampling::kPatchExtents[1]) * grid.spacing[1],
            double(sampling::kPatchExtents[2]) * grid.spacing[2]};
}

std::vector<sampling::PatchSpec> window_lattice(const ct::Volume& mask, double step_mm, const std::string& scan_id)
{
    if (!(step_mm > 0.0)) throw ConfigError("sliding-window step must be positive");
    std::array<std::size_t, 3> step{};
    for (int a = 0; a < 3; ++a) {
        step[a] = std::max<std::size_t>(1, std::size_t(std::lround(step_mm / mask.spacing[a])));
        if (mask.extents[a] < sampling::kPatchExtents[a]) return {};
    }
    std::vector<sampling::PatchSpec> out;
    for (std::size_t z = 0; z + sampling::kPatchExtents[2] <= mask.nz(); z += step[2])
        for (std::size_t y = 0; y + sampling::kPatchExtents[1] <= mask.ny(); y += step[1])
            for (std::size_t x = 0; x + sampling::kPatchExtents[0] <= mask.nx(); x += step[0]) {
                const double m = mask.at(x + sampling::kPatchExtents[0] / 2, y + sampling::kPatchExtents[1] / 2,
                                         z + sampling::kPatchExtents[2] / 2);
                if (m <= 0.0) continue;
                sampling::PatchSpec s;
                s.scan_id = scan_id;
                s.corner = {x, y, z};
                out.push_back(std::move(s));
            }
    return out;
}

std::vector<Detection> sliding_window_detect(const ct::Volume& image, const ct::Volume& mask,
                                             const diff::ParamSet& eta, const detect::DetectorConfig& config,
                                             const std::string& scan_id, double step_mm)
{
    if (image.extents != mask.extents) throw DataError("image and lung mask grids differ for scan '" + scan_id + "'");
    const auto windows = window_lattice(mask, step_mm, scan_id);
    if (windows.empty()) {
        std::cerr << "warning: scan '" << scan_id << "' has no sliding-window positions inside the lung mask\n";
        return {};
    }
    const auto frozen = eta.frozen();
    const auto extent = window_extent(image);
    std::vector<Detection> out(windows.size());
    parallel_for(windows.size(), [&](std::size_t i) {
        const auto p = detect::detector_probability(train::patch_tensor(image, windows[i]), frozen, config);
        out[i] = {scan_id, windows[i].center_mm(image), extent, p.item()};
    });
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold)
{
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<Detection> kept;
    for (std::size_t i : order) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (k.scan_id == dets[i].scan_id && iou(k, dets[i]) > iou_threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(dets[i]);
    }
    return kept;
}

void write_detections(const std::vector<Detection>& dets, const std::filesystem::path& path)
{
    io::write_atomically(path, [&](std::ostream& os) {
        os << "scan_id,x_mm,y_mm,z_mm,score\n";
        char buf[160];
        for (const auto& d : dets) {
            std::snprintf(buf, sizeof buf, ",%.6g,%.6g,%.6g,%.9g\n", d.center[0], d.center[1], d.center[2], d.score);
            os << d.scan_id << buf;
        }
    });
}

std::vector<Detection> read_detections(const std::filesystem::path& path, const std::array<double, 3>& extent)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open detections " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "scan_id,x_mm,y_mm,z_mm,score")
        throw DataError(path.string() + ":1: expected header scan_id,x_mm,y_mm,z_mm,score");
    std::vector<Detection> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        if (f.size() != 5) throw DataError(where + "expected 5 fields, found " + std::to_string(f.size()));
        double v[4];
        for (int k = 0; k < 4; ++k) {
            char* end = nullptr;
            v[k] = std::strtod(f[k + 1].c_str(), &end);
            if (f[k + 1].empty() || *end != '\0' || !std::isfinite(v[k]))
                throw DataError(where + "malformed number '" + f[k + 1] + "'");
        }
        out.push_back({f[0], {v[0], v[1], v[2]}, extent, v[3]});
    }
    return out;
}

} // namespace tomodet::eval
