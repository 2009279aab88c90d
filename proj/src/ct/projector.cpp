#include "tomodet/ct/projector.hpp"

#include <algorithm>
#include <string>

#include "tomodet/util/error.hpp"
#include "tomodet/util/parallel.hpp"

namespace tomodet::ct {

SliceGrid SliceGrid::of(const Volume& v)
{
    return SliceGrid{v.nx(), v.ny(), v.spacing[0], v.spacing[1], v.origin[0], v.origin[1]};
}

double SliceGrid::corner_radius() const
{
    double r = 0.0;
    for (double x : {ox - 0.5 * sx, ox + (double(nx) - 0.5) * sx})
        for (double y : {oy - 0.5 * sy, oy + (double(ny) - 0.5) * sy}) r = std::max(r, std::hypot(x, y));
    return r;
}

FanbeamProjector::FanbeamProjector(const FanbeamGeometry& geometry, const SliceGrid& grid)
    : geometry_(geometry), grid_(grid)
{
    geometry_.validate();
    if (grid_.nx == 0 || grid_.ny == 0) throw ConfigError("projector: empty slice grid");
    if (grid_.corner_radius() > geometry_.fov_radius())
        throw ConfigError("projector: volume extends to radius " + std::to_string(grid_.corner_radius()) +
                          " mm, outside the " + std::to_string(geometry_.fov_radius()) + " mm field of view");
    for (std::size_t v = 0; v < geometry_.n_views; ++v) {
        view_sin_.push_back(std::sin(geometry_.view_angle(v)));
        view_cos_.push_back(std::cos(geometry_.view_angle(v)));
    }
    for (std::size_t c = 0; c < geometry_.n_channels; ++c) {
        fan_sin_.push_back(std::sin(geometry_.channel_angle(c)));
        fan_cos_.push_back(std::cos(geometry_.channel_angle(c)));
    }
    build_table();
}

void FanbeamProjector::build_table()
{
    // Every ray crosses at most 2*max(nx, ny) samples.
    constexpr std::size_t kMaxTableSamples = std::size_t(1) << 26;
    const std::size_t rays = geometry_.n_views * geometry_.n_channels;
    if (rays * 2 * std::max(grid_.nx, grid_.ny) > kMaxTableSamples) return;
    ray_begin_.reserve(rays + 1);
    ray_begin_.push_back(0);
    for (std::size_t v = 0; v < geometry_.n_views; ++v)
        for (std::size_t c = 0; c < geometry_.n_channels; ++c) {
            trace(v, c, [&](std::size_t idx, double w) {
                sample_index_.push_back(static_cast<std::uint32_t>(idx));
                sample_weight_.push_back(w);
            });
            ray_begin_.push_back(sample_index_.size());
        }
}

FanbeamProjector::Ray FanbeamProjector::ray(std::size_t view, std::size_t channel) const
{
    const double D = geometry_.dist_source_center;
    const double s = view_sin_[view], c = view_cos_[view];
    // Central ray points from the source through the isocentre.
    const double ux = s, uy = -c;
    const double fs = fan_sin_[channel], fc = fan_cos_[channel];
    return Ray{-D * s, D * c, ux * fc - uy * fs, ux * fs + uy * fc};
}

void FanbeamProjector::forward(std::span<const double> image, std::span<double> sino, std::size_t slices) const
{
    const std::size_t V = geometry_.n_views, N = geometry_.n_channels, P = image_size();
    if (image.size() != P * slices || sino.size() != V * N * slices)
        throw std::invalid_argument("projector: buffer sizes do not match " + std::to_string(slices) + " slices");
    if (!ray_begin_.empty()) {
        parallel_for(slices, [&](std::size_t s) {
            const double* img = image.data() + s * P;
            double* out = sino.data() + s * V * N;
            for (std::size_t r = 0; r < V * N; ++r) {
                double acc = 0.0;
                for (std::size_t k = ray_begin_[r]; k < ray_begin_[r + 1]; ++k)
                    acc += sample_weight_[k] * img[sample_index_[k]];
                out[r] = acc;
            }
        });
        return;
    }
    parallel_for(slices * V, [&](std::size_t job) {
        const std::size_t s = job / V, v = job % V;
        const double* img = image.data() + s * P;
        double* row = sino.data() + (s * V + v) * N;
        for (std::size_t c = 0; c < N; ++c) {
            double acc = 0.0;
            trace(v, c, [&](std::size_t idx, double w) { acc += w * img[idx]; });
            row[c] = acc;
        }
    });
}

void FanbeamProjector::adjoint_accumulate(std::span<const double> sino, std::span<double> image,
                                          std::size_t slices) const
{
    const std::size_t V = geometry_.n_views, N = geometry_.n_channels, P = image_size();
    if (image.size() != P * slices || sino.size() != V * N * slices)
        throw std::invalid_argument("backprojector: buffer sizes do not match " + std::to_string(slices) + " slices");
    // One worker per slice: each slice's image is touched by exactly one
    // thread in a fixed view/channel order, so the sum is thread-count stable.
    parallel_for(slices, [&](std::size_t s) {
        double* img = image.data() + s * P;
        if (!ray_begin_.empty()) {
            const double* row = sino.data() + s * V * N;
            for (std::size_t r = 0; r < V * N; ++r) {
                const double val = row[r];
                if (val == 0.0) continue;
                for (std::size_t k = ray_begin_[r]; k < ray_begin_[r + 1]; ++k)
                    img[sample_index_[k]] += sample_weight_[k] * val;
            }
            return;
        }
        for (std::size_t v = 0; v < V; ++v) {
            const double* row = sino.data() + (s * V + v) * N;
            for (std::size_t c = 0; c < N; ++c) {
                const double val = row[c];
                if (val == 0.0) continue;
                trace(v, c, [&](std::size_t idx, double w) { img[idx] += w * val; });
            }
        }
    });
}

Sinogram forward_project(const Volume& mu, const FanbeamGeometry& geometry)
{
    if (mu.unit != Unit::mu) throw std::invalid_argument("forward_project needs an attenuation (MU) volume");
    FanbeamProjector proj(geometry, SliceGrid::of(mu));
    Sinogram s = Sinogram::zeros(geometry, mu.nz());
    proj.forward(mu.values, s.values, mu.nz());
    return s;
}

Volume back_project(const Sinogram& sino, const Volume& like)
{
    if (sino.n_slices != like.nz()) throw std::invalid_argument("back_project: slice count mismatch");
    FanbeamProjector proj(sino.geometry, SliceGrid::of(like));
    Volume out = like.like(Unit::mu);
    proj.adjoint_accumulate(sino.values, out.values, sino.n_slices);
    return out;
}

} // namespace tomodet::ct
