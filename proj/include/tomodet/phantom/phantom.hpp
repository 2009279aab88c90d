#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tomodet/ct/volume.hpp"

namespace tomodet::phantom {

/// Nodules below this diameter are not detection targets.
inline constexpr double kNonSmallDiameter = 3.0;

struct Annotation {
    std::string scan_id;
    std::array<double, 3> center{0.0, 0.0, 0.0}; // mm
    double diameter = 0.0;                        // mm

    bool is_non_small() const { return diameter >= kNonSmallDiameter; }
};

struct PhantomSpec {
    std::array<std::size_t, 3> extents{128, 128, 32};
    std::array<double, 3> spacing{1.0, 1.0, 2.0};
    std::uint64_t seed = 0;
    std::array<std::size_t, 2> nodule_count{1, 4};
    std::array<double, 2> nodule_diameter{3.0, 25.0};
    /// Vessel trees per lung.
    std::size_t vessels_per_lung = 6;

    void validate() const;
};

// Material values in HU.
inline constexpr double kAirHu = -1000.0;
inline constexpr double kBodyHu = 40.0;
inline constexpr double kLungHu = -800.0;
inline constexpr double kVesselHu = 20.0;
inline constexpr double kNoduleHu = 0.0;

struct Phantom {
    ct::Volume hu;
    ct::Volume lung_mask;
    std::vector<Annotation> nodules;
    /// Vessel branch points: the non-nodule findings used for hard negatives.
    std::vector<Annotation> non_nodules;
    /// Nodules asked for by the draw; `nodules.size()` may be smaller when
    /// a non-overlapping placement could not be found.
    std::size_t requested_nodules = 0;
};

/// Synthetic chest: body ellipsoid in air, two lung ellipsoids, vessel trees
/// confined to the lungs, and spherical nodules centred on voxel centres
/// inside the lungs. A pure function of `spec`.
Phantom generate_phantom(const PhantomSpec& spec, const std::string& scan_id);

/// CSV with header `scan_id,x_mm,y_mm,z_mm,diameter_mm`; floats printed with
/// 6 significant digits.
void write_annotations(const std::vector<Annotation>& annotations, const std::filesystem::path& path);
std::vector<Annotation> read_annotations(const std::filesystem::path& path);

/// One scan of a dataset. Paths are relative to the manifest's directory.
struct ScanRecord {
    std::string id;
    std::string split; // "train" or "test"
    std::string volume;
    std::string mask;
    std::string annotations;
    std::string non_nodules;
    std::string sinogram;
};

void write_manifest(const std::vector<ScanRecord>& scans, const std::filesystem::path& path);
std::vector<ScanRecord> read_manifest(const std::filesystem::path& path);

} // namespace tomodet::phantom
