#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "tomodet/eval/detection.hpp"
#include "tomodet/phantom/phantom.hpp"

namespace tomodet::eval {

/// False-positive rates at which the mean-FROC score samples sensitivity.
inline constexpr std::array<double, 7> kFrocAbscissae{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

struct FrocPoint {
    double fp_per_scan = 0.0;
    double sensitivity = 0.0;
};

struct FrocCurve {
    /// Full-data operating points from the threshold sweep, starting at (0, 0).
    std::vector<FrocPoint> points;
    /// Bootstrap mean and 95% band of the sensitivity at each point's FP rate.
    std::vector<double> boot_mean, lo95, hi95;
    double mean_froc = 0.0;
    double boot_mean_froc = 0.0;
};

/// Threshold sweep over all detections. Detections are processed by
/// descending score (ties: scan order, then list order); a detection is a
/// true positive when an unmatched annotation centre lies inside its box,
/// the nearest such centre being matched. A point is emitted after each
/// distinct score.
std::vector<FrocPoint> froc_points(const std::vector<std::vector<Detection>>& dets,
                                   const std::vector<std::vector<phantom::Annotation>>& annotations);

/// Step interpolation: the last sensitivity reached at or below `fp_per_scan`.
double sensitivity_at(const std::vector<FrocPoint>& points, double fp_per_scan);

/// Mean sensitivity at kFrocAbscissae.
double mean_froc(const std::vector<FrocPoint>& points);

/// Curve plus bootstrap bands: scans resampled with replacement `n_boot`
/// times; resamples without annotations are redrawn.
FrocCurve froc(const std::vector<std::vector<Detection>>& dets,
               const std::vector<std::vector<phantom::Annotation>>& annotations, std::size_t n_boot = 1000,
               std::uint64_t seed = 0);

/// CSV `fp_per_scan,sensitivity,lo95,hi95`.
void write_froc(const FrocCurve& curve, const std::filesystem::path& path);

struct Cnr {
    double value = 0.0;
    /// Background had zero variance; `value` is then +-inf (or NaN for zero contrast).
    bool infinite = false;
};

/// (mean_roi - mean_bg) / stdev_bg over two discs, each on the axial slice
/// nearest its centre. Population standard deviation.
Cnr cnr(const ct::Volume& vol, const std::array<double, 3>& roi_center, double roi_radius,
        const std::array<double, 3>& bg_center, double bg_radius);

} // namespace tomodet::eval
