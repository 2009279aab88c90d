#include "tomodet/train/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tomodet/ct/noise.hpp"
#include "tomodet/diff/ops.hpp"
#include "tomodet/util/binary_io.hpp"
#include "tomodet/util/parallel.hpp"
#include "tomodet/util/error.hpp"

namespace tomodet::train {

using diff::Tensor;

namespace {

void check_loss(double loss, const char* stage, std::size_t step)
{
    if (!std::isfinite(loss))
        throw NumericalError(std::string("non-finite ") + stage + " loss at step " + std::to_string(step));
}

// Non-finite values caught inside a step (for example in the input data)
// are reported with the step they broke.
template <typename Fn>
void guarded_step(const char* stage, std::size_t step, Fn&& fn)
{
    try {
        fn();
    } catch (const NumericalError& e) {
        const std::string what = e.what();
        if (what.find(" at step ") != std::string::npos) throw;
        throw NumericalError(what + " at " + stage + " step " + std::to_string(step));
    }
}

void report(std::vector<LossRecord>& trace, const Progress& progress, LossRecord rec)
{
    if (progress) progress(rec);
    trace.push_back(std::move(rec));
}

} // namespace

void write_loss_trace(const std::vector<LossRecord>& trace, const std::filesystem::path& path)
{
    io::write_atomically(path, [&](std::ostream& os) {
        os << "step,stage,loss\n";
        os.precision(9);
        for (const auto& r : trace) os << r.step << ',' << r.stage << ',' << r.loss << '\n';
    });
}

double relative_l2(std::span<const double> mu, std::span<const double> truth_mu)
{
    if (mu.size() != truth_mu.size() || mu.empty()) throw std::invalid_argument("relative_l2: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double d = (mu[i] - truth_mu[i]) / ct::kMuWater;
        s += d * d;
    }
    return s / double(mu.size());
}

Tensor window_loss(const recon::PrimalDualNet& net, const ReconPair& pair, std::size_t start,
                   const diff::ParamSet& theta)
{
    const auto& sino = *pair.sinogram;
    const auto& truth = *pair.truth_mu;
    const std::size_t plane = net.grid().size();
    if (truth.slice_size() != plane || truth.nz() != sino.n_slices)
        throw DataError("training pair: truth volume does not match the sinogram/grid");
    if (start + recon::kWindowSlices > sino.n_slices) throw std::invalid_argument("window start out of range");
    const Tensor out = net.forward(
        std::span<const double>(sino.values).subspan(start * sino.slice_size(), recon::kWindowSlices * sino.slice_size()),
        theta);
    std::vector<double> target(truth.values.begin() + start * plane,
                               truth.values.begin() + (start + recon::kWindowSlices) * plane);
    const Tensor t = Tensor::constant(out.shape(), std::move(target));
    const Tensor d = diff::scale(diff::sub(out, t), 1.0 / ct::kMuWater);
    return diff::scale(diff::sum_squares(d), 1.0 / double(out.size()));
}

std::vector<LossRecord> train_recon(const recon::PrimalDualNet& net, const std::vector<ReconPair>& scans,
                                    diff::ParamSet& theta, const ReconTrainConfig& config, const Progress& progress)
{
    if (scans.empty()) throw DataError("stage 1 needs at least one training scan");
    std::mt19937_64 rng(config.seed);
    diff::Adam adam(theta, config.adam);
    std::vector<LossRecord> trace;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::pair<std::size_t, std::size_t>> draws;
        for (std::size_t s = 0; s < scans.size(); ++s) {
            const std::size_t nz = scans[s].sinogram->n_slices;
            if (nz < recon::kWindowSlices) throw DataError("scan has fewer than 3 slices");
            std::uniform_int_distribution<std::size_t> start(0, nz - recon::kWindowSlices);
            for (std::size_t k = 0; k < config.samples_per_scan; ++k) draws.emplace_back(s, start(rng));
        }
        std::shuffle(draws.begin(), draws.end(), rng);
        for (const auto& [s, k] : draws) {
            double value = 0.0;
            guarded_step("stage-1", step, [&] {
                theta.zero_grad();
                const Tensor loss = window_loss(net, scans[s], k, theta);
                value = loss.item();
                check_loss(value, "stage-1", step);
                diff::backward(loss);
                adam.step(theta);
            });
            report(trace, progress, {step++, "recon", value});
        }
    }
    return trace;
}

Tensor patch_tensor(const ct::Volume& image, const sampling::PatchSpec& spec)
{
    auto patch = sampling::extract_patch(image, spec);
    switch (image.unit) {
    case ct::Unit::hu:
        for (auto& v : patch.values) v = detect::normalize_hu(v);
        break;
    case ct::Unit::mu:
        for (auto& v : patch.values) v = detect::normalize_mu(v);
        break;
    case ct::Unit::mask: throw std::invalid_argument("cannot build a detector patch from a mask volume");
    }
    return Tensor::constant({1, sampling::kPatchExtents[2], sampling::kPatchExtents[1], sampling::kPatchExtents[0]},
                            std::move(patch.values));
}

DetectorMetrics evaluate_detector(const std::vector<const ct::Volume*>& images,
                                  const std::vector<DetectorSample>& samples, const diff::ParamSet& eta,
                                  const detect::DetectorConfig& config)
{
    if (samples.empty()) return {};
    const auto frozen = eta.frozen();
    std::vector<double> loss(samples.size()), correct(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        const auto& s = samples[i];
        const Tensor p = detect::detector_probability(patch_tensor(*images.at(s.image), s.spec), frozen, config);
        const int label = s.spec.label;
        loss[i] = diff::cross_entropy(p, std::span<const int>(&label, 1)).item();
        correct[i] = (p.item() >= 0.5) == (label == 1) ? 1.0 : 0.0;
    });
    const double n = double(samples.size());
    return {std::accumulate(loss.begin(), loss.end(), 0.0) / n,
            std::accumulate(correct.begin(), correct.end(), 0.0) / n};
}

std::vector<LossRecord> train_detector(const std::vector<const ct::Volume*>& images,
                                       const std::vector<DetectorSample>& samples, diff::ParamSet& eta,
                                       const detect::DetectorConfig& config, const DetectorTrainConfig& train,
                                       const Progress& progress)
{
    if (samples.empty()) throw DataError("stage 2 needs at least one patch");
    if (train.minibatch == 0) throw ConfigError("minibatch must be positive");
    std::mt19937_64 rng(train.seed);
    diff::Adam adam(eta, train.adam);
    std::vector<std::size_t> order(samples.size());
    std::vector<LossRecord> trace;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < order.size(); b += train.minibatch) {
            const std::size_t e = std::min(order.size(), b + train.minibatch);
            const double w = 1.0 / double(e - b);
            double batch_loss = 0.0;
            guarded_step("stage-2", step, [&] {
                eta.zero_grad();
                for (std::size_t i = b; i < e; ++i) {
                    const auto& s = samples[order[i]];
                    const int label = s.spec.label;
                    const Tensor p =
                        detect::detector_probability(patch_tensor(*images.at(s.image), s.spec), eta, config);
                    const Tensor l = diff::scale(diff::cross_entropy(p, std::span<const int>(&label, 1)), w);
                    diff::backward(l);
                    batch_loss += l.item();
                }
                check_loss(batch_loss, "stage-2", step);
                adam.step(eta);
            });
            report(trace, progress, {step++, "detector", batch_loss});
        }
    }
    return trace;
}

std::vector<Block> plan_blocks(std::size_t nz, const std::vector<sampling::PatchSpec>& specs,
                               std::size_t block_slices, std::size_t overlap)
{
    if (block_slices <= overlap) throw ConfigError("block_slices must exceed the block overlap");
    const std::size_t size = std::min(block_slices, nz);
    if (size < sampling::kPatchExtents[2] && !specs.empty())
        throw DataError("volume has fewer slices than a patch");
    std::vector<Block> blocks;
    const std::size_t stride = block_slices - overlap;
    for (std::size_t start = 0;; start += stride) {
        if (start + size >= nz) {
            blocks.push_back({nz - size, size, {}});
            break;
        }
        blocks.push_back({start, size, {}});
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const std::size_t z0 = specs[i].corner[2], z1 = z0 + sampling::kPatchExtents[2];
        if (z1 > nz) throw DataError("patch leaves the volume along z");
        auto it = std::find_if(blocks.begin(), blocks.end(),
                               [&](const Block& b) { return b.start <= z0 && z1 <= b.start + b.slices; });
        if (it == blocks.end())
            throw DataError("no block holds the patch at z " + std::to_string(z0) + "; overlap is too small");
        it->patches.push_back(i);
    }
    std::erase_if(blocks, [](const Block& b) { return b.patches.empty(); });
    return blocks;
}

namespace {

struct BlockData {
    ct::Sinogram sinogram;
    ct::Volume grid;
};

BlockData block_data(const FinetuneScan& scan, const Block& block)
{
    BlockData d{scan.sinogram->slices(block.start, block.slices), *scan.grid};
    d.grid.extents[2] = block.slices;
    d.grid.origin[2] = scan.grid->position(2, double(block.start));
    d.grid.values.assign(d.grid.voxel_count(), 0.0);
    return d;
}

sampling::PatchSpec shifted(sampling::PatchSpec s, const Block& block)
{
    s.corner[2] -= block.start;
    return s;
}

} // namespace

double block_loss(const recon::PrimalDualNet& net, const FinetuneScan& scan, const Block& block,
                  const diff::ParamSet& theta, const diff::ParamSet& eta, const detect::DetectorConfig& det_config)
{
    const BlockData d = block_data(scan, block);
    const ct::Volume v = recon::reconstruct_volume(net, d.sinogram, theta, d.grid);
    const Tensor vt = Tensor::constant({v.nz(), v.ny(), v.nx()}, v.values);
    const auto frozen = eta.frozen();
    double loss = 0.0;
    for (std::size_t i : block.patches) {
        const auto spec = shifted(scan.specs[i], block);
        const Tensor p = detect::detector_probability(detect::normalize_mu(sampling::extract_patch(vt, spec)), frozen,
                                                      det_config);
        loss += diff::cross_entropy(p, std::span<const int>(&spec.label, 1)).item();
    }
    return loss / double(block.patches.size());
}

FinetuneResult finetune_e2e(const recon::PrimalDualNet& net, const std::vector<FinetuneScan>& scans,
                            diff::ParamSet& theta, diff::ParamSet& eta, const detect::DetectorConfig& det_config,
                            const FinetuneConfig& config, const Progress& progress)
{
    std::mt19937_64 rng(config.seed);
    diff::Adam adam_theta(theta, config.adam);
    diff::Adam adam_eta(eta, config.adam);
    FinetuneResult result;
    for (const auto& s : scans) result.visits.emplace_back(s.specs.size(), 0);
    std::size_t step = 0;
    std::vector<std::size_t> order(scans.size());
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t si : order) {
            const auto& scan = scans[si];
            for (const auto& block : plan_blocks(scan.sinogram->n_slices, scan.specs, config.block_slices,
                                                 config.overlap)) {
                double loss = 0.0;
                guarded_step("stage-3", step, [&] {
                    theta.zero_grad();
                    eta.zero_grad();
                    const BlockData d = block_data(scan, block);
                    const ct::Volume v = recon::reconstruct_volume(net, d.sinogram, theta, d.grid);
                    const Tensor vt = Tensor::parameter({v.nz(), v.ny(), v.nx()}, v.values);
                    const double w = 1.0 / double(block.patches.size());
                    for (std::size_t i : block.patches) {
                        const auto spec = shifted(scan.specs[i], block);
                        const Tensor p = detect::detector_probability(
                            detect::normalize_mu(sampling::extract_patch(vt, spec)), eta, det_config);
                        const Tensor l = diff::scale(diff::cross_entropy(p, std::span<const int>(&spec.label, 1)), w);
                        diff::backward(l);
                        loss += l.item();
                        ++result.visits[si][i];
                    }
                    check_loss(loss, "stage-3", step);
                    if (vt.has_grad()) recon::backprop_volume_gradient(net, d.sinogram, theta, vt.grad());
                    adam_theta.step(theta);
                    adam_eta.step(eta);
                });
                report(result.trace, progress, {step++, "finetune", loss});
            }
        }
    }
    return result;
}

} // namespace tomodet::train
