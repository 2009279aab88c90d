#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tomodet/ct/geometry.hpp"
#include "tomodet/ct/volume.hpp"

namespace tomodet::ct {

/// In-plane pixel grid shared by every slice of a volume.
struct SliceGrid {
    std::size_t nx = 0, ny = 0;
    double sx = 1.0, sy = 1.0; // mm
    double ox = 0.0, oy = 0.0; // centre of pixel (0,0), mm

    static SliceGrid of(const Volume& v);
    std::size_t size() const { return nx * ny; }
    /// Largest distance from the isocentre to a pixel corner.
    double corner_radius() const;
};

/// Matched Joseph projector / backprojector for stacked fanbeam slices.
///
/// A ray is sampled once per pixel column (or row) along its dominant axis
/// with linear interpolation between the two neighbouring pixels; the
/// backprojector replays the same samples, so it is the exact transpose.
class FanbeamProjector {
public:
    /// Throws ConfigError if the grid reaches outside the scan field of view.
    FanbeamProjector(const FanbeamGeometry& geometry, const SliceGrid& grid);

    const FanbeamGeometry& geometry() const { return geometry_; }
    const SliceGrid& grid() const { return grid_; }
    std::size_t image_size() const { return grid_.size(); }
    std::size_t sinogram_size() const { return geometry_.n_views * geometry_.n_channels; }

    /// sino[slices][views][channels] = A image[slices][ny][nx] (overwrites).
    void forward(std::span<const double> image, std::span<double> sino, std::size_t slices) const;
    /// image += A^T sino.
    void adjoint_accumulate(std::span<const double> sino, std::span<double> image, std::size_t slices) const;

    /// Calls fn(pixel_index, weight) for every interpolation sample of one ray.
    template <typename Fn>
    void trace(std::size_t view, std::size_t channel, Fn&& fn) const;

private:
    struct Ray {
        double sx, sy; // source position
        double dx, dy; // unit direction
    };
    Ray ray(std::size_t view, std::size_t channel) const;
    void build_table();

    FanbeamGeometry geometry_;
    SliceGrid grid_;
    std::vector<double> view_sin_, view_cos_, fan_sin_, fan_cos_;
    // Samples of ray r = view*n_channels + channel live in
    // [ray_begin_[r], ray_begin_[r+1]); empty when the table would be too large.
    std::vector<std::size_t> ray_begin_;
    std::vector<std::uint32_t> sample_index_;
    std::vector<double> sample_weight_;
};

Sinogram forward_project(const Volume& mu, const FanbeamGeometry& geometry);
/// Exact transpose of forward_project onto the grid of `like`.
Volume back_project(const Sinogram& sino, const Volume& like);

template <typename Fn>
void FanbeamProjector::trace(std::size_t view, std::size_t channel, Fn&& fn) const
{
    const Ray r = ray(view, channel);
    const auto nx = static_cast<std::ptrdiff_t>(grid_.nx);
    const auto ny = static_cast<std::ptrdiff_t>(grid_.ny);
    if (std::abs(r.dx) >= std::abs(r.dy)) {
        const double w = grid_.sx / std::abs(r.dx);
        const double slope = r.dy / r.dx;
        for (std::ptrdiff_t i = 0; i < nx; ++i) {
            const double x = grid_.ox + static_cast<double>(i) * grid_.sx;
            const double y = r.sy + (x - r.sx) * slope;
            const double fr = (y - grid_.oy) / grid_.sy;
            const double fl = std::floor(fr);
            const auto j = static_cast<std::ptrdiff_t>(fl);
            const double f = fr - fl;
            if (j >= 0 && j < ny) fn(static_cast<std::size_t>(j * nx + i), w * (1.0 - f));
            if (j + 1 >= 0 && j + 1 < ny) fn(static_cast<std::size_t>((j + 1) * nx + i), w * f);
        }
    } else {
        const double w = grid_.sy / std::abs(r.dy);
        const double slope = r.dx / r.dy;
        for (std::ptrdiff_t j = 0; j < ny; ++j) {
            const double y = grid_.oy + static_cast<double>(j) * grid_.sy;
            const double x = r.sx + (y - r.sy) * slope;
            const double fc = (x - grid_.ox) / grid_.sx;
            const double fl = std::floor(fc);
            const auto i = static_cast<std::ptrdiff_t>(fl);
            const double f = fc - fl;
            if (i >= 0 && i < nx) fn(static_cast<std::size_t>(j * nx + i), w * (1.0 - f));
            if (i + 1 >= 0 && i + 1 < nx) fn(static_cast<std::size_t>(j * nx + i + 1), w * f);
        }
    }
}

} // namespace tomodet::ct
