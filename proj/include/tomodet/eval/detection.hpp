#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "tomodet/ct/volume.hpp"
#include "tomodet/detect/detector.hpp"

namespace tomodet::eval {

/// Axis-aligned box in mm with a detector score.
struct Detection {
    std::string scan_id;
    std::array<double, 3> center{0.0, 0.0, 0.0};
    std::array<double, 3> extent{0.0, 0.0, 0.0};
    double score = 0.0;

    bool contains(const std::array<double, 3>& p) const;
};

double iou(const Detection& a, const Detection& b);

/// Patch corners on a lattice with `step_mm` spacing per axis (rounded to
/// whole voxels) whose anchor voxel corner + extent/2 lies in the mask.
std::vector<sampling::PatchSpec> window_lattice(const ct::Volume& mask, double step_mm, const std::string& scan_id);

/// Scores every lattice window of `image` (HU or MU) with the detector.
/// An empty mask yields no detections and a warning on stderr.
std::vector<Detection> sliding_window_detect(const ct::Volume& image, const ct::Volume& mask,
                                             const diff::ParamSet& eta, const detect::DetectorConfig& config,
                                             const std::string& scan_id, double step_mm = 4.0);

/// Greedy non-maximum suppression. Boxes are visited by descending score
/// (ties keep input order); a box is dropped when its IoU with an already
/// kept box of the same scan exceeds the threshold.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold = 0.5);

/// CSV `scan_id,x_mm,y_mm,z_mm,score`. Box extents are not stored; the
/// reader fills them from `extent`.
void write_detections(const std::vector<Detection>& dets, const std::filesystem::path& path);
std::vector<Detection> read_detections(const std::filesystem::path& path, const std::array<double, 3>& extent);

/// Physical extents of a detector window on a grid.
std::array<double, 3> window_extent(const ct::Volume& grid);

} // namespace tomodet::eval
