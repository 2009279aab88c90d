#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "tomodet/ct/geometry.hpp"

namespace tomodet::ct {

enum class Unit { hu, mu, mask };

const char* unit_name(Unit u);

/// Regular voxel grid. `origin` is the physical position (mm) of the centre
/// of voxel (0,0,0); values are stored x-fastest: index = (z*ny + y)*nx + x.
struct Volume {
    std::array<std::size_t, 3> extents{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 2.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    Unit unit = Unit::mu;
    std::vector<double> values;

    /// Zero-filled volume centred on the isocentre.
    static Volume centered(std::array<std::size_t, 3> extents, std::array<double, 3> spacing, Unit unit);

    std::size_t nx() const { return extents[0]; }
    std::size_t ny() const { return extents[1]; }
    std::size_t nz() const { return extents[2]; }
    std::size_t voxel_count() const { return extents[0] * extents[1] * extents[2]; }
    std::size_t slice_size() const { return extents[0] * extents[1]; }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (z * ny() + y) * nx() + x; }
    double& at(std::size_t x, std::size_t y, std::size_t z) { return values[index(x, y, z)]; }
    double at(std::size_t x, std::size_t y, std::size_t z) const { return values[index(x, y, z)]; }

    /// Physical position (mm) of a continuous voxel coordinate along `axis`.
    double position(std::size_t axis, double voxel) const { return origin[axis] + voxel * spacing[axis]; }
    /// Continuous voxel coordinate of a physical position along `axis`.
    double voxel_coord(std::size_t axis, double mm) const { return (mm - origin[axis]) / spacing[axis]; }

    /// Same grid, new unit, zero values.
    Volume like(Unit u) const;

    /// Throws DataError on inconsistent size or non-finite values.
    void validate() const;
};

/// Line integrals for every slice, stored channel-fastest:
/// index = (slice*n_views + view)*n_channels + channel.
struct Sinogram {
    std::size_t n_views = 0, n_channels = 0, n_slices = 0;
    FanbeamGeometry geometry;
    std::vector<double> values;

    static Sinogram zeros(const FanbeamGeometry& geometry, std::size_t n_slices);

    std::size_t slice_size() const { return n_views * n_channels; }
    std::size_t index(std::size_t view, std::size_t channel, std::size_t slice) const
    {
        return (slice * n_views + view) * n_channels + channel;
    }
    /// Copy of slices [begin, begin+count).
    Sinogram slices(std::size_t begin, std::size_t count) const;
    void validate() const;
};

/// TDVOL1: "TDVOL1\n", u32 unit tag, u32 extents[3], f64 spacing[3],
/// f64 origin[3], then float32 values x-fastest, all little-endian.
void write_volume(const Volume& vol, const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);

/// TDSINO1: "TDSINO1\n", u32 extents (views, channels, slices), geometry
/// record (u32 n_views, u32 n_channels, f64 arc width, f64 row height,
/// f64 source-centre, f64 source-detector), float32 values channel-fastest.
void write_sinogram(const Sinogram& sino, const std::filesystem::path& path);
Sinogram read_sinogram(const std::filesystem::path& path);

} // namespace tomodet::ct
