#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tomodet/ct/volume.hpp"
#include "tomodet/diff/tensor.hpp"
#include "tomodet/phantom/phantom.hpp"

namespace tomodet::sampling {

/// Patch extents in voxels, (x, y, z).
inline constexpr std::array<std::size_t, 3> kPatchExtents{32, 32, 16};
inline constexpr std::size_t kPatchVoxels = 32 * 32 * 16;

/// A patch is the half-open voxel box [corner, corner + kPatchExtents).
struct PatchSpec {
    std::string scan_id;
    std::array<std::size_t, 3> corner{0, 0, 0};
    std::array<bool, 3> flip{false, false, false};
    int label = 0;

    /// Physical centre of the box (mm).
    std::array<double, 3> center_mm(const ct::Volume& grid) const;
    /// Whether a physical point falls inside the box.
    bool contains(const ct::Volume& grid, const std::array<double, 3>& mm) const;
};

/// Patch values ordered [z][y][x] with the flips applied: output voxel
/// (x, y, z) reads input corner + (flip ? extent-1-x : x), per axis.
struct Patch {
    std::string scan_id;
    int label = 0;
    std::vector<double> values;
};

/// Throws DataError when the box leaves the volume.
void check_in_bounds(const ct::Volume& grid, const PatchSpec& spec);

Patch extract_patch(const ct::Volume& vol, const PatchSpec& spec);

/// E x as a differentiable op: `volume` is [nz, ny, nx], the result [1, 16, 32, 32].
diff::Tensor extract_patch(const diff::Tensor& volume, const PatchSpec& spec);

/// Same operator for a box that may hang over the volume edge; voxels
/// outside read as zero. `corner` may be negative.
diff::Tensor extract_patch_padded(const diff::Tensor& volume, std::array<long, 3> corner, std::array<bool, 3> flip);

/// E^T q added into `volume` (x-fastest, extents of `grid`).
void scatter_patch_add(const ct::Volume& grid, const PatchSpec& spec, const std::vector<double>& patch,
                       std::vector<double>& volume);

struct SamplingConfig {
    std::size_t positives_per_nodule = 20;
    double max_shift_mm = 8.0;
    std::size_t in_lung = 400;
    std::size_t edge = 100;
    std::size_t per_non_nodule = 5;
    /// Minimum L-infinity distance between negative and positive patch centres.
    double margin_mm = 64.0;
    /// Lung-edge shell thickness in voxels.
    std::size_t edge_width = 3;
    /// Scales the in-lung and edge counts for small phantoms.
    double count_multiplier = 1.0;

    void validate() const;
    std::size_t scaled(std::size_t n) const;
};

struct SamplingReport {
    std::size_t clipped_positives = 0;
    std::size_t requested_negatives = 0;
    std::size_t emitted_negatives = 0;
};

/// Label-1 specs: per non-small annotation, `positives_per_nodule` random
/// translations within +-max_shift_mm per axis and fair-coin flips. Boxes
/// that would leave the volume are shifted back inside (counted in report).
std::vector<PatchSpec> sample_positives(const std::vector<phantom::Annotation>& nodules, const ct::Volume& grid,
                                        const SamplingConfig& config, std::uint64_t seed,
                                        SamplingReport* report = nullptr);

/// Label-0 specs: random in-lung boxes, random lung-edge boxes, and
/// augmented boxes around each non-nodule finding. Every centre keeps
/// margin_mm from every positive centre and no box contains a nodule.
std::vector<PatchSpec> sample_negatives(const ct::Volume& mask, const std::vector<PatchSpec>& positives,
                                        const std::vector<phantom::Annotation>& nodules,
                                        const std::vector<phantom::Annotation>& non_nodules,
                                        const SamplingConfig& config, std::uint64_t seed,
                                        SamplingReport* report = nullptr);

/// L-infinity distance between two points (mm).
double linf_distance(const std::array<double, 3>& a, const std::array<double, 3>& b);

/// Lung segmentation of an HU volume: threshold below -400 HU, drop
/// components touching the in-plane volume border, keep the two largest
/// 6-connected components and fill holes slice by slice.
ct::Volume lung_mask(const ct::Volume& hu);

/// Lung voxels with a non-lung 6-neighbour within `width` steps.
std::vector<std::size_t> edge_voxels(const ct::Volume& mask, std::size_t width);

/// CSV `scan_id,corner_x,corner_y,corner_z,flip_x,flip_y,flip_z,label`.
void write_patch_specs(const std::vector<PatchSpec>& specs, const std::filesystem::path& path);
std::vector<PatchSpec> read_patch_specs(const std::filesystem::path& path);

} // namespace tomodet::sampling
