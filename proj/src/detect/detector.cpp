#include "tomodet/detect/detector.hpp"

#include <algorithm>
#include <random>

#include "tomodet/diff/ops.hpp"
#include "tomodet/util/error.hpp"

namespace tomodet::detect {

namespace {

constexpr double kPreluInit = 0.25;
const diff::Shape kInputShape{1, sampling::kPatchExtents[2], sampling::kPatchExtents[1], sampling::kPatchExtents[0]};
// Valid-conv kernel (z, y, x): whatever remains after three 2x2x2 pools.
constexpr std::array<std::size_t, 3> kHeadKernel{sampling::kPatchExtents[2] / 8, sampling::kPatchExtents[1] / 8,
                                                 sampling::kPatchExtents[0] / 8};

} // namespace

void DetectorConfig::validate() const
{
    for (auto w : widths)
        if (w == 0) throw ConfigError("detector widths must be positive");
    if (head_channels == 0) throw ConfigError("detector head_channels must be positive");
}

diff::ParamSet make_detector_params(const DetectorConfig& config, std::uint64_t seed)
{
    config.validate();
    std::mt19937_64 rng(seed);
    diff::ParamSet p(diff::Partition::detector);
    std::size_t in = 1;
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t out = config.widths[s];
        const std::string pre = "det.conv" + std::to_string(s + 1);
        p.add(pre + ".weight", {out, in, 3, 3, 3}, diff::he_uniform(out * in * 27, in * 27, rng));
        p.add(pre + ".bias", {out}, std::vector<double>(out, 0.0));
        p.add("det.prelu" + std::to_string(s + 1) + ".alpha", {out}, std::vector<double>(out, kPreluInit));
        in = out;
    }
    const std::size_t hk = kHeadKernel[0] * kHeadKernel[1] * kHeadKernel[2];
    const std::size_t h = config.head_channels;
    p.add("det.head.weight", {h, in, kHeadKernel[0], kHeadKernel[1], kHeadKernel[2]},
          diff::he_uniform(h * in * hk, in * hk, rng));
    p.add("det.head.bias", {h}, std::vector<double>(h, 0.0));
    p.add("det.prelu4.alpha", {h}, std::vector<double>(h, kPreluInit));
    p.add("det.out.weight", {1, h, 1, 1, 1}, diff::he_uniform(h, h, rng));
    p.add("det.out.bias", {1}, {0.0});
    return p;
}

std::array<std::array<std::size_t, 3>, 5> layer_extents(const DetectorConfig&)
{
    std::array<std::array<std::size_t, 3>, 5> out{};
    out[0] = {sampling::kPatchExtents[2], sampling::kPatchExtents[1], sampling::kPatchExtents[0]};
    for (int s = 1; s <= 3; ++s)
        for (int a = 0; a < 3; ++a) out[s][a] = out[s - 1][a] / 2;
    for (int a = 0; a < 3; ++a) out[4][a] = out[3][a] - kHeadKernel[a] + 1;
    return out;
}

diff::Tensor detector_logit(const diff::Tensor& patch, const diff::ParamSet& eta, const DetectorConfig&)
{
    if (patch.shape() != kInputShape)
        throw std::invalid_argument("detector expects a patch of shape " + diff::to_string(kInputShape) + ", got " +
                                    diff::to_string(patch.shape()));
    diff::Tensor h = patch;
    for (int s = 1; s <= 3; ++s) {
        const std::string pre = "det.conv" + std::to_string(s);
        h = diff::conv(h, eta.at(pre + ".weight"), eta.at(pre + ".bias"), diff::Padding::zero);
        h = diff::prelu(h, eta.at("det.prelu" + std::to_string(s) + ".alpha"));
        h = diff::maxpool3d(h, {2, 2, 2});
    }
    h = diff::conv(h, eta.at("det.head.weight"), eta.at("det.head.bias"), diff::Padding::valid);
    h = diff::prelu(h, eta.at("det.prelu4.alpha"));
    h = diff::conv(h, eta.at("det.out.weight"), eta.at("det.out.bias"), diff::Padding::valid);
    return diff::reshape(h, {1});
}

diff::Tensor detector_probability(const diff::Tensor& patch, const diff::ParamSet& eta, const DetectorConfig& config)
{
    return diff::sigmoid(detector_logit(patch, eta, config));
}

double normalize_hu(double hu) { return std::clamp(hu * kNormScaleHu + kNormOffset, 0.0, kNormMax); }

diff::Tensor normalize_hu(const diff::Tensor& hu)
{
    return diff::affine_clamp(hu, kNormScaleHu, kNormOffset, 0.0, kNormMax);
}

// HU = 1000 (mu / mu_w - 1), so (HU + 1000) / 1400 = mu * 1000 / (1400 mu_w).
diff::Tensor normalize_mu(const diff::Tensor& mu)
{
    return diff::affine_clamp(mu, 1000.0 * kNormScaleHu / ct::kMuWater, 0.0, 0.0, kNormMax);
}

double normalize_mu(double mu) { return std::clamp(mu * (1000.0 * kNormScaleHu / ct::kMuWater), 0.0, kNormMax); }

double detect_patch(const sampling::Patch& patch, const diff::ParamSet& eta, const DetectorConfig& config)
{
    if (patch.values.size() != sampling::kPatchVoxels)
        throw std::invalid_argument("patch has " + std::to_string(patch.values.size()) + " voxels, expected " +
                                    std::to_string(sampling::kPatchVoxels));
    std::vector<double> v(patch.values.size());
    std::transform(patch.values.begin(), patch.values.end(), v.begin(), [](double x) { return normalize_hu(x); });
    const auto frozen = eta.frozen();
    return detector_probability(diff::Tensor::constant(kInputShape, std::move(v)), frozen, config).item();
}

} // namespace tomodet::detect
