#include "tomodet/ct/fbp.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

#include "tomodet/util/error.hpp"
#include "tomodet/util/parallel.hpp"

namespace tomodet::ct {

namespace {

constexpr std::size_t kMinViews = 8;

// FFTW planning is not thread-safe; execution with private buffers is.
std::mutex g_plan_lock;

std::size_t padded_length(std::size_t n)
{
    std::size_t m = 1;
    while (m < 2 * n) m <<= 1;
    return m;
}

} // namespace

Apodization parse_apodization(const std::string& name)
{
    if (name == "hann") return Apodization::hann;
    if (name == "ramlak") return Apodization::ramlak;
    throw ConfigError("unknown FBP window '" + name + "' (expected hann or ramlak)");
}

FbpOperator::FbpOperator(const FanbeamGeometry& geometry, const SliceGrid& grid, Apodization window)
    : geometry_(geometry), grid_(grid)
{
    geometry_.validate();
    if (geometry_.n_views < kMinViews)
        throw std::invalid_argument("fbp: " + std::to_string(geometry_.n_views) +
                                    " views is too few for filtering (need >= 8)");
    if (grid_.corner_radius() > geometry_.fov_radius())
        throw ConfigError("fbp: volume extends outside the scan field of view");

    const std::size_t n = geometry_.n_channels;
    padded_ = padded_length(n);
    const double alpha = geometry_.channel_pitch();
    // Band-limited equiangular ramp kernel including the (gamma/sin gamma)^2 / 2 factor.
    std::vector<double> kernel(padded_, 0.0);
    kernel[0] = 1.0 / (8.0 * alpha * alpha);
    for (std::size_t k = 1; k < n; k += 2) {
        const double s = std::sin(static_cast<double>(k) * alpha);
        const double v = -1.0 / (2.0 * std::numbers::pi * std::numbers::pi * s * s);
        kernel[k] = v;
        kernel[padded_ - k] = v;
    }
    std::vector<std::complex<double>> spectrum(padded_ / 2 + 1);
    {
        std::lock_guard<std::mutex> lock(g_plan_lock);
        fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(padded_), kernel.data(),
                                           reinterpret_cast<fftw_complex*>(spectrum.data()), FFTW_ESTIMATE);
        fftw_execute(p);
        fftw_destroy_plan(p);
    }
    response_.resize(spectrum.size());
    const double half = static_cast<double>(padded_ / 2);
    for (std::size_t k = 0; k < spectrum.size(); ++k) {
        const double w =
            window == Apodization::hann ? 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(k) / half)) : 1.0;
        // Real symmetric kernel; fold in the convolution step alpha and the c2r 1/m.
        response_[k] = spectrum[k].real() * w * alpha / static_cast<double>(padded_);
    }

    const std::size_t V = geometry_.n_views, P = grid_.size();
    const double D = geometry_.dist_source_center;
    const double pitch = geometry_.channel_pitch();
    const double centre = 0.5 * static_cast<double>(n - 1);
    channel_.assign(V * P, -1);
    fraction_.assign(V * P, 0.0);
    inv_dist2_.assign(V * P, 0.0);
    for (std::size_t v = 0; v < V; ++v) {
        const double beta = geometry_.view_angle(v);
        const double srcx = -D * std::sin(beta), srcy = D * std::cos(beta);
        const double ux = std::sin(beta), uy = -std::cos(beta);
        for (std::size_t j = 0; j < grid_.ny; ++j) {
            const double y = grid_.oy + static_cast<double>(j) * grid_.sy;
            for (std::size_t i = 0; i < grid_.nx; ++i) {
                const double x = grid_.ox + static_cast<double>(i) * grid_.sx;
                const double rx = x - srcx, ry = y - srcy;
                const double gamma = std::atan2(ux * ry - uy * rx, ux * rx + uy * ry);
                const double u = gamma / pitch + centre;
                const double fu = std::floor(u);
                const std::size_t k = v * P + j * grid_.nx + i;
                if (fu < 0.0 || fu + 1.0 >= static_cast<double>(n)) continue;
                channel_[k] = static_cast<std::int32_t>(fu);
                fraction_[k] = u - fu;
                inv_dist2_[k] = 1.0 / (rx * rx + ry * ry);
            }
        }
    }
}

void FbpOperator::filter_rows(std::vector<double>& rows, std::size_t count) const
{
    const std::size_t n = geometry_.n_channels;
    std::vector<double> buf(padded_);
    std::vector<std::complex<double>> spec(padded_ / 2 + 1);
    fftw_plan fwd, inv;
    {
        std::lock_guard<std::mutex> lock(g_plan_lock);
        fwd = fftw_plan_dft_r2c_1d(static_cast<int>(padded_), buf.data(), reinterpret_cast<fftw_complex*>(spec.data()),
                                   FFTW_ESTIMATE);
        inv = fftw_plan_dft_c2r_1d(static_cast<int>(padded_), reinterpret_cast<fftw_complex*>(spec.data()), buf.data(),
                                   FFTW_ESTIMATE);
    }
    for (std::size_t r = 0; r < count; ++r) {
        double* row = rows.data() + r * n;
        std::fill(buf.begin(), buf.end(), 0.0);
        std::copy_n(row, n, buf.begin());
        fftw_execute(fwd);
        for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= response_[k];
        fftw_execute(inv);
        std::copy_n(buf.begin(), n, row);
    }
    std::lock_guard<std::mutex> lock(g_plan_lock);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
}

void FbpOperator::apply(std::span<const double> sino, std::size_t slices, std::span<double> out) const
{
    const std::size_t V = geometry_.n_views, N = geometry_.n_channels, P = grid_.size();
    if (sino.size() != slices * V * N || out.size() != slices * P)
        throw std::invalid_argument("fbp: buffer sizes do not match " + std::to_string(slices) + " slices");

    const double D = geometry_.dist_source_center;
    std::vector<double> filtered(sino.begin(), sino.end());
    for (std::size_t r = 0; r < slices * V; ++r)
        for (std::size_t c = 0; c < N; ++c) filtered[r * N + c] *= D * std::cos(geometry_.channel_angle(c));
    filter_rows(filtered, slices * V);

    const double dbeta = 2.0 * std::numbers::pi / static_cast<double>(V);
    parallel_for(slices, [&](std::size_t s) {
        double* img = out.data() + s * P;
        std::fill(img, img + P, 0.0);
        for (std::size_t v = 0; v < V; ++v) {
            const double* row = filtered.data() + (s * V + v) * N;
            const std::size_t base = v * P;
            for (std::size_t k = 0; k < P; ++k) {
                const std::int32_t c0 = channel_[base + k];
                if (c0 < 0) continue;
                const double f = fraction_[base + k];
                const double q = (1.0 - f) * row[c0] + f * row[c0 + 1];
                img[k] += dbeta * q * inv_dist2_[base + k];
            }
        }
    });
}

Volume fbp(const Sinogram& sino, const Volume& like, Apodization window)
{
    if (sino.n_slices != like.nz()) throw std::invalid_argument("fbp: slice count mismatch");
    Volume out = like.like(Unit::mu);
    FbpOperator(sino.geometry, SliceGrid::of(like), window).apply(sino.values, sino.n_slices, out.values);
    return out;
}

} // namespace tomodet::ct
