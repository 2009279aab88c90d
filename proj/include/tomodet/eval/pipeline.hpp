#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tomodet/ct/fbp.hpp"
#include "tomodet/eval/froc.hpp"
#include "tomodet/recon/primal_dual.hpp"

namespace tomodet::eval {

/// Image source for detection: ground truth, FBP, primal-dual after
/// stage 1 (two-step) or after joint fine-tuning (end-to-end).
enum class Variant { reference, fbp, two_step, end_to_end };

inline constexpr std::array<Variant, 4> kAllVariants{Variant::reference, Variant::fbp, Variant::two_step,
                                                     Variant::end_to_end};

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

/// "none" for the noiseless case, otherwise e.g. "1e+05" -> "1e5".
std::string noise_label(double n0);
/// Accepts "none" or a positive photon count.
double parse_noise(const std::string& text);

struct EvalScan {
    std::string id;
    const ct::Volume* truth_hu = nullptr;
    /// Noiseless line integrals; test noise is added here.
    const ct::Sinogram* sinogram = nullptr;
    std::vector<phantom::Annotation> nodules;
};

/// Trained pieces; a variant whose pieces are missing cannot run.
struct EvalModels {
    const recon::PrimalDualNet* net = nullptr;
    const diff::ParamSet* theta_stage1 = nullptr;
    const diff::ParamSet* theta_stage3 = nullptr;
    const diff::ParamSet* eta_reference = nullptr;
    const diff::ParamSet* eta_fbp = nullptr;
    const diff::ParamSet* eta_stage2 = nullptr;
    const diff::ParamSet* eta_stage3 = nullptr;
    detect::DetectorConfig detector;
};

/// Throws ConfigError naming the missing checkpoint.
void require_models(Variant v, const EvalModels& models);
const diff::ParamSet& detector_for(Variant v, const EvalModels& models);

/// Noisy copy of a test sinogram; the seed depends only on (base, scan, n0).
ct::Sinogram test_sinogram(const ct::Sinogram& clean, double n0, std::uint64_t base_seed, std::size_t scan_index);

/// Image handed to the detector (HU for reference, MU otherwise).
ct::Volume variant_image(Variant v, const EvalScan& scan, const ct::Sinogram& sino, const EvalModels& models,
                         ct::Apodization window);

/// Lung mask used for the sliding window: from the ground truth for the
/// reference variant, otherwise from the FBP of the same sinogram.
ct::Volume evaluation_mask(Variant v, const EvalScan& scan, const ct::Sinogram& sino, ct::Apodization window);

struct EvalConfig {
    std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
    std::vector<double> noise_levels{ct::kNoiseless, 1e5, 5e4};
    double step_mm = 4.0;
    double iou_threshold = 0.5;
    std::size_t n_boot = 1000;
    std::uint64_t boot_seed = 0;
    std::uint64_t noise_seed = 0;
    ct::Apodization window = ct::Apodization::hann;
};

struct EvalCell {
    Variant variant = Variant::reference;
    double n0 = ct::kNoiseless;
    /// Post-NMS detections for every scan.
    std::vector<std::vector<Detection>> detections;
    FrocCurve curve;
};

/// Detects on every scan for every (noise level, variant) pair and builds
/// the FROC curves. Cells come out noise-major in config order.
std::vector<EvalCell> run_pipeline(const std::vector<EvalScan>& scans, const EvalModels& models,
                                   const EvalConfig& config,
                                   const std::function<void(const std::string&)>& log = {});

/// CSV with one row per noise level and one mean-FROC column per variant.
void write_score_grid(const std::vector<EvalCell>& cells, const std::filesystem::path& path);

} // namespace tomodet::eval
