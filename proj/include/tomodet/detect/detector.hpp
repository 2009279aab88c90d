#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "tomodet/ct/noise.hpp"
#include "tomodet/diff/params.hpp"
#include "tomodet/diff/tensor.hpp"
#include "tomodet/sampling/patches.hpp"

namespace tomodet::detect {

struct DetectorConfig {
    /// Channels of the three padded conv + pool stages.
    std::array<std::size_t, 3> widths{32, 64, 128};
    /// Channels of the final valid convolution.
    std::size_t head_channels = 256;

    void validate() const;
};

/// Parameters under the `det.` prefix: det.conv{1,2,3}.{weight,bias},
/// det.prelu{1,2,3}.alpha, det.head.{weight,bias}, det.prelu4.alpha,
/// det.out.{weight,bias}. He-uniform kernels, zero biases, slopes 0.25.
diff::ParamSet make_detector_params(const DetectorConfig& config, std::uint64_t seed);

/// Spatial extents (z, y, x) after each stage: input, three pools, valid conv.
std::array<std::array<std::size_t, 3>, 5> layer_extents(const DetectorConfig& config);

/// Nodule logit for a normalised patch tensor [1, 16, 32, 32]; any other shape is rejected.
diff::Tensor detector_logit(const diff::Tensor& patch, const diff::ParamSet& eta, const DetectorConfig& config);
/// sigmoid(detector_logit), shape [1].
diff::Tensor detector_probability(const diff::Tensor& patch, const diff::ParamSet& eta, const DetectorConfig& config);

/// Intensity normalisation (HU + 1000) / 1400 clamped to [0, 1.2].
inline constexpr double kNormScaleHu = 1.0 / 1400.0;
inline constexpr double kNormOffset = 1000.0 / 1400.0;
inline constexpr double kNormMax = 1.2;
double normalize_hu(double hu);
diff::Tensor normalize_hu(const diff::Tensor& hu);
/// The same normalisation applied to attenuation values.
diff::Tensor normalize_mu(const diff::Tensor& mu);
double normalize_mu(double mu);

/// Probability for a raw HU patch from extract_patch().
double detect_patch(const sampling::Patch& patch, const diff::ParamSet& eta, const DetectorConfig& config);

} // namespace tomodet::detect
