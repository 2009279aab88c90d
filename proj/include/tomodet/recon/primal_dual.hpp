#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tomodet/ct/fbp.hpp"
#include "tomodet/ct/projector.hpp"
#include "tomodet/ct/volume.hpp"
#include "tomodet/diff/params.hpp"
#include "tomodet/diff/tensor.hpp"

namespace tomodet::recon {

/// Slices per primal-dual window.
inline constexpr std::size_t kWindowSlices = 3;
/// Primal and dual state channels: two variables per window slice.
inline constexpr std::size_t kStateChannels = 2 * kWindowSlices;

/// Images inside the network are mu * kImageScale. A power of two, so the
/// conversion in and out is exact and a zero network returns FBP bit-for-bit.
inline constexpr double kImageScale = 64.0;

struct PrimalDualConfig {
    std::size_t iterations = 5;
    std::size_t hidden_channels = 32;
    std::size_t window_stride = 1;
    ct::Apodization fbp_window = ct::Apodization::hann;
};

/// Creates recon.{dual,primal}.<i>.{conv1,conv2,conv3}.{weight,bias} and
/// recon.{dual,primal}.<i>.{prelu1,prelu2}.alpha for every unrolled
/// iteration (weights are not shared between iterations). Kernels are
/// He-uniform, biases zero, PReLU slopes 0.25. With `zero_output_layer`
/// the last conv of every block starts at zero, so the untrained network
/// reproduces its FBP initialisation.
diff::ParamSet make_recon_params(const PrimalDualConfig& config, std::uint64_t seed, bool zero_output_layer = true);

/// Learned primal-dual reconstruction of one 3-slice window.
class PrimalDualNet {
public:
    PrimalDualNet(PrimalDualConfig config, const ct::FanbeamGeometry& geometry, const ct::SliceGrid& grid);

    const PrimalDualConfig& config() const { return config_; }
    const ct::FanbeamProjector& projector() const { return projector_; }
    const ct::SliceGrid& grid() const { return projector_.grid(); }
    /// Power-iteration estimate of the projector's operator norm.
    double operator_norm() const { return op_norm_; }

    /// FBP of a window sinogram [3, views, channels] as mu, shape [3, ny, nx].
    std::vector<double> fbp_window(std::span<const double> window_sino) const;

    /// Runs the unrolled iterations. `window_sino` holds the 3-slice line
    /// integrals [3, views, channels]; the result is mu on [3, ny, nx] and is
    /// differentiable with respect to every tracked parameter in `theta`.
    diff::Tensor forward(std::span<const double> window_sino, const diff::ParamSet& theta) const;

private:
    diff::Tensor project(const diff::Tensor& image) const;
    diff::Tensor backproject(const diff::Tensor& sino) const;

    PrimalDualConfig config_;
    ct::FanbeamProjector projector_;
    ct::FbpOperator fbp_;
    double op_norm_ = 1.0;
};

/// Window starts k = 0, stride, 2*stride, ... always including nz-3.
std::vector<std::size_t> window_starts(std::size_t nz, std::size_t stride);
/// Number of windows covering each slice: the denominator sum_k W_k^T W_k 1.
std::vector<std::size_t> slice_coverage(std::size_t nz, std::size_t stride);

/// Averages overlapping window outputs into a [nz, ny, nx] volume:
/// out = sum_k W_k^T window(k) / sum_k W_k^T W_k 1. `window` returns the
/// [3, ny, nx] result for the window starting at slice k.
diff::Tensor aggregate_windows(std::size_t nz, std::size_t stride,
                               const std::function<diff::Tensor(std::size_t)>& window);

/// R(p; theta) over a whole sinogram, returned as an MU volume on the grid of `like`.
ct::Volume reconstruct_volume(const PrimalDualNet& net, const ct::Sinogram& sino, const diff::ParamSet& theta,
                              const ct::Volume& like);

/// Differentiable variant returning mu as a [nz, ny, nx] tensor.
diff::Tensor reconstruct_tensor(const PrimalDualNet& net, const ct::Sinogram& sino, const diff::ParamSet& theta);

/// Accumulates d<R(p; theta), upstream>/d theta into theta's grads, one
/// window graph at a time. Equivalent to backward() through
/// reconstruct_tensor() but holds a single window tape in memory.
void backprop_volume_gradient(const PrimalDualNet& net, const ct::Sinogram& sino, const diff::ParamSet& theta,
                              std::span<const double> upstream);

} // namespace tomodet::recon
