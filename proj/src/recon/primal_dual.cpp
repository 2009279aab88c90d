#include "tomodet/recon/primal_dual.hpp"

#include <cmath>
#include <random>
#include <string>

#include "tomodet/diff/ops.hpp"
#include "tomodet/util/error.hpp"
#include "tomodet/util/parallel.hpp"

namespace tomodet::recon {

using diff::Tensor;

namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kDualInputs = kStateChannels + 2 * kWindowSlices;   // y, A z, p
constexpr std::size_t kPrimalInputs = kStateChannels + kWindowSlices;     // z, A^T y

std::string block_name(const char* kind, std::size_t iter) { return std::string("recon.") + kind + "." + std::to_string(iter); }

void add_block(diff::ParamSet& set, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
               std::mt19937_64& rng, bool zero_output)
{
    const std::size_t taps = kKernel * kKernel;
    set.add(prefix + ".conv1.weight", {hidden, in, kKernel, kKernel}, diff::he_uniform(hidden * in * taps, in * taps, rng));
    set.add(prefix + ".conv1.bias", {hidden}, std::vector<double>(hidden, 0.0));
    set.add(prefix + ".prelu1.alpha", {hidden}, std::vector<double>(hidden, 0.25));
    set.add(prefix + ".conv2.weight", {hidden, hidden, kKernel, kKernel},
            diff::he_uniform(hidden * hidden * taps, hidden * taps, rng));
    set.add(prefix + ".conv2.bias", {hidden}, std::vector<double>(hidden, 0.0));
    set.add(prefix + ".prelu2.alpha", {hidden}, std::vector<double>(hidden, 0.25));
    auto last = diff::he_uniform(out * hidden * taps, hidden * taps, rng);
    if (zero_output) std::fill(last.begin(), last.end(), 0.0);
    set.add(prefix + ".conv3.weight", {out, hidden, kKernel, kKernel}, std::move(last));
    set.add(prefix + ".conv3.bias", {out}, std::vector<double>(out, 0.0));
}

Tensor run_block(const Tensor& input, const diff::ParamSet& theta, const std::string& prefix)
{
    using diff::Padding;
    Tensor h = diff::conv(input, theta.at(prefix + ".conv1.weight"), theta.at(prefix + ".conv1.bias"), Padding::zero);
    h = diff::prelu(h, theta.at(prefix + ".prelu1.alpha"));
    h = diff::conv(h, theta.at(prefix + ".conv2.weight"), theta.at(prefix + ".conv2.bias"), Padding::zero);
    h = diff::prelu(h, theta.at(prefix + ".prelu2.alpha"));
    return diff::conv(h, theta.at(prefix + ".conv3.weight"), theta.at(prefix + ".conv3.bias"), Padding::zero);
}

double estimate_operator_norm(const ct::FanbeamProjector& proj)
{
    std::vector<double> x(proj.image_size(), 1.0), y(proj.sinogram_size());
    double norm = 1.0;
    for (int it = 0; it < 30; ++it) {
        double xn = 0.0;
        for (double v : x) xn += v * v;
        xn = std::sqrt(xn);
        for (double& v : x) v /= xn;
        proj.forward(x, y, 1);
        std::fill(x.begin(), x.end(), 0.0);
        proj.adjoint_accumulate(y, x, 1);
        double ata = 0.0;
        for (double v : x) ata += v * v;
        norm = std::sqrt(std::sqrt(ata)); // ||A^T A x|| -> ||A||^2
    }
    return norm;
}

} // namespace

diff::ParamSet make_recon_params(const PrimalDualConfig& config, std::uint64_t seed, bool zero_output_layer)
{
    if (config.iterations == 0 || config.hidden_channels == 0)
        throw ConfigError("recon network needs at least one iteration and one hidden channel");
    std::mt19937_64 rng(seed);
    diff::ParamSet set(diff::Partition::recon);
    for (std::size_t i = 0; i < config.iterations; ++i) {
        add_block(set, block_name("dual", i), kDualInputs, config.hidden_channels, kStateChannels, rng, zero_output_layer);
        add_block(set, block_name("primal", i), kPrimalInputs, config.hidden_channels, kStateChannels, rng,
                  zero_output_layer);
    }
    return set;
}

PrimalDualNet::PrimalDualNet(PrimalDualConfig config, const ct::FanbeamGeometry& geometry, const ct::SliceGrid& grid)
    : config_(config), projector_(geometry, grid), fbp_(geometry, grid, config.fbp_window)
{
    if (config_.window_stride == 0) throw ConfigError("window stride must be >= 1");
    op_norm_ = estimate_operator_norm(projector_);
}

std::vector<double> PrimalDualNet::fbp_window(std::span<const double> window_sino) const
{
    if (window_sino.size() != kWindowSlices * projector_.sinogram_size())
        throw std::invalid_argument("primal-dual window sinogram must have exactly 3 slices");
    std::vector<double> out(kWindowSlices * grid().size());
    fbp_.apply(window_sino, kWindowSlices, out);
    return out;
}

Tensor PrimalDualNet::project(const Tensor& image) const
{
    const auto& g = projector_.geometry();
    const std::size_t slices = image.extent(0);
    const double inv = 1.0 / op_norm_;
    const auto* proj = &projector_;
    return diff::linear_map(
        image, {slices, g.n_views, g.n_channels},
        [proj, slices, inv](std::span<const double> in, std::span<double> out) {
            proj->forward(in, out, slices);
            for (double& v : out) v *= inv;
        },
        [proj, slices, inv](std::span<const double> g_out, std::span<double> g_in) {
            std::vector<double> scaled(g_out.begin(), g_out.end());
            for (double& v : scaled) v *= inv;
            proj->adjoint_accumulate(scaled, g_in, slices);
        });
}

Tensor PrimalDualNet::backproject(const Tensor& sino) const
{
    const std::size_t slices = sino.extent(0);
    const double inv = 1.0 / op_norm_;
    const auto* proj = &projector_;
    const auto& grid = projector_.grid();
    return diff::linear_map(
        sino, {slices, grid.ny, grid.nx},
        [proj, slices, inv](std::span<const double> in, std::span<double> out) {
            proj->adjoint_accumulate(in, out, slices);
            for (double& v : out) v *= inv;
        },
        [proj, slices, inv](std::span<const double> g_out, std::span<double> g_in) {
            std::vector<double> tmp(g_in.size());
            proj->forward(g_out, tmp, slices);
            for (std::size_t i = 0; i < tmp.size(); ++i) g_in[i] += inv * tmp[i];
        });
}

Tensor PrimalDualNet::forward(std::span<const double> window_sino, const diff::ParamSet& theta) const
{
    const auto& g = projector_.geometry();
    const std::size_t V = g.n_views, N = g.n_channels, H = grid().ny, W = grid().nx;
    if (window_sino.size() != kWindowSlices * V * N)
        throw std::invalid_argument("primal-dual window sinogram must have exactly 3 slices");

    std::vector<double> x0 = fbp_window(window_sino);
    for (double& v : x0) v *= kImageScale;
    std::vector<double> measured(window_sino.begin(), window_sino.end());
    for (double& v : measured) v *= kImageScale / op_norm_;

    const Tensor init = Tensor::constant({kWindowSlices, H, W}, std::move(x0));
    const Tensor p = Tensor::constant({kWindowSlices, V, N}, std::move(measured));
    Tensor z = diff::concat_channels({init, init});
    Tensor y = Tensor::zeros({kStateChannels, V, N});

    for (std::size_t i = 0; i < config_.iterations; ++i) {
        const Tensor forward_z = project(diff::slice_channels(z, 0, kWindowSlices));
        const Tensor dual_in = diff::concat_channels({y, forward_z, p});
        if (dual_in.extent(0) != kDualInputs) throw std::logic_error("dual block channel count");
        y = diff::add(y, run_block(dual_in, theta, block_name("dual", i)));

        const Tensor back_y = backproject(diff::slice_channels(y, 0, kWindowSlices));
        const Tensor primal_in = diff::concat_channels({z, back_y});
        if (primal_in.extent(0) != kPrimalInputs) throw std::logic_error("primal block channel count");
        z = diff::add(z, run_block(primal_in, theta, block_name("primal", i)));
    }
    return diff::scale(diff::slice_channels(z, 0, kWindowSlices), 1.0 / kImageScale);
}

std::vector<std::size_t> window_starts(std::size_t nz, std::size_t stride)
{
    if (nz < kWindowSlices) throw std::invalid_argument("need at least 3 slices, got " + std::to_string(nz));
    if (stride == 0) throw std::invalid_argument("window stride must be >= 1");
    std::vector<std::size_t> starts;
    for (std::size_t k = 0; k + kWindowSlices <= nz; k += stride) starts.push_back(k);
    if (starts.back() != nz - kWindowSlices) starts.push_back(nz - kWindowSlices);
    return starts;
}

std::vector<std::size_t> slice_coverage(std::size_t nz, std::size_t stride)
{
    std::vector<std::size_t> cover(nz, 0);
    for (auto k : window_starts(nz, stride))
        for (std::size_t s = k; s < k + kWindowSlices; ++s) ++cover[s];
    return cover;
}

Tensor aggregate_windows(std::size_t nz, std::size_t stride, const std::function<Tensor(std::size_t)>& window)
{
    const auto starts = window_starts(nz, stride);
    const auto cover = slice_coverage(nz, stride);
    std::vector<Tensor> parts;
    parts.reserve(starts.size());
    for (auto k : starts) parts.push_back(window(k));
    const diff::Shape& ws = parts.front().shape();
    if (ws.size() != 3 || ws[0] != kWindowSlices)
        throw std::invalid_argument("window output must be [3, ny, nx], got " + diff::to_string(ws));
    for (const auto& t : parts)
        if (t.shape() != ws) throw std::invalid_argument("window outputs disagree in shape");
    const std::size_t plane = ws[1] * ws[2];

    // Mean written as ref + sum_k (x_k - ref)/count with ref the first
    // contributing window: identical window values reproduce ref exactly.
    std::vector<double> out(nz * plane, 0.0);
    std::vector<int> first(nz, -1);
    for (std::size_t w = 0; w < starts.size(); ++w)
        for (std::size_t j = 0; j < kWindowSlices; ++j)
            if (first[starts[w] + j] < 0) first[starts[w] + j] = static_cast<int>(w);
    for (std::size_t s = 0; s < nz; ++s) {
        const auto fw = static_cast<std::size_t>(first[s]);
        const double* ref = parts[fw].data().data() + (s - starts[fw]) * plane;
        std::vector<double> delta(plane, 0.0);
        for (std::size_t w = 0; w < starts.size(); ++w) {
            if (s < starts[w] || s >= starts[w] + kWindowSlices) continue;
            const double* x = parts[w].data().data() + (s - starts[w]) * plane;
            for (std::size_t i = 0; i < plane; ++i) delta[i] += x[i] - ref[i];
        }
        const double c = static_cast<double>(cover[s]);
        for (std::size_t i = 0; i < plane; ++i) out[s * plane + i] = ref[i] + delta[i] / c;
    }
    return Tensor::from_op({nz, ws[1], ws[2]}, std::move(out), parts, [starts, cover, plane](diff::Node& self) {
        for (std::size_t w = 0; w < starts.size(); ++w) {
            diff::Node& in = *self.inputs[w];
            if (!in.requires_grad) continue;
            auto& g = in.grad_buffer();
            for (std::size_t j = 0; j < kWindowSlices; ++j) {
                const std::size_t s = starts[w] + j;
                const double c = static_cast<double>(cover[s]);
                for (std::size_t i = 0; i < plane; ++i) g[j * plane + i] += self.grad[s * plane + i] / c;
            }
        }
    });
}

Tensor reconstruct_tensor(const PrimalDualNet& net, const ct::Sinogram& sino, const diff::ParamSet& theta)
{
    if (sino.n_slices < kWindowSlices)
        throw std::invalid_argument("reconstruct_volume needs nz >= 3, got " + std::to_string(sino.n_slices));
    const std::size_t per_slice = sino.slice_size();
    return aggregate_windows(sino.n_slices, net.config().window_stride, [&](std::size_t k) {
        return net.forward(std::span<const double>(sino.values).subspan(k * per_slice, kWindowSlices * per_slice), theta);
    });
}

ct::Volume reconstruct_volume(const PrimalDualNet& net, const ct::Sinogram& sino, const diff::ParamSet& theta,
                              const ct::Volume& like)
{
    if (sino.n_slices != like.nz()) throw std::invalid_argument("reconstruct_volume: slice count mismatch");
    const std::size_t per_slice = sino.slice_size();
    const auto starts = window_starts(sino.n_slices, net.config().window_stride);
    // Inference needs no tape: evaluate windows on detached parameters in
    // parallel, then aggregate in window order.
    const diff::ParamSet frozen = theta.frozen();
    std::vector<Tensor> outputs(starts.size());
    parallel_for(starts.size(), [&](std::size_t w) {
        outputs[w] = net.forward(std::span<const double>(sino.values).subspan(starts[w] * per_slice,
                                                                              kWindowSlices * per_slice),
                                 frozen);
    });
    std::size_t next = 0;
    const Tensor vol = aggregate_windows(sino.n_slices, net.config().window_stride,
                                         [&](std::size_t) { return outputs[next++]; });
    ct::Volume out = like.like(ct::Unit::mu);
    std::copy(vol.data().begin(), vol.data().end(), out.values.begin());
    return out;
}

void backprop_volume_gradient(const PrimalDualNet& net, const ct::Sinogram& sino, const diff::ParamSet& theta,
                              std::span<const double> upstream)
{
    const std::size_t nz = sino.n_slices;
    const std::size_t plane = net.grid().size();
    if (upstream.size() != nz * plane) throw std::invalid_argument("upstream gradient size mismatch");
    const auto starts = window_starts(nz, net.config().window_stride);
    const auto cover = slice_coverage(nz, net.config().window_stride);
    const std::size_t per_slice = sino.slice_size();
    for (auto k : starts) {
        std::vector<double> seed(kWindowSlices * plane);
        for (std::size_t j = 0; j < kWindowSlices; ++j)
            for (std::size_t i = 0; i < plane; ++i)
                seed[j * plane + i] = upstream[(k + j) * plane + i] / static_cast<double>(cover[k + j]);
        const Tensor out =
            net.forward(std::span<const double>(sino.values).subspan(k * per_slice, kWindowSlices * per_slice), theta);
        diff::backward(diff::dot_constant(out, seed));
    }
}

} // namespace tomodet::recon
