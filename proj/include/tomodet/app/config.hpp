#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tomodet/ct/fbp.hpp"
#include "tomodet/ct/geometry.hpp"
#include "tomodet/detect/detector.hpp"
#include "tomodet/diff/params.hpp"
#include "tomodet/eval/pipeline.hpp"
#include "tomodet/phantom/phantom.hpp"
#include "tomodet/recon/primal_dual.hpp"
#include "tomodet/sampling/patches.hpp"
#include "tomodet/train/training.hpp"

namespace tomodet::app {

struct DatasetConfig {
    std::size_t train = 20;
    std::size_t test = 6;
    /// Share of the training scans held out for validation (rounded).
    double validation_fraction = 0.1;

    std::size_t validation_count() const;
};

struct EvaluationConfig {
    std::vector<double> noise_levels{ct::kNoiseless, 1e5, 5e4};
    double step_mm = 4.0;
    double iou_threshold = 0.5;
    std::size_t n_boot = 1000;
};

/// Every tunable of a run. Defaults are the full-size published settings;
/// profiles shrink the expensive parts for desk-scale runs.
struct RunConfig {
    std::string profile = "full";
    std::uint64_t seed = 0;
    ct::FanbeamGeometry geometry;
    phantom::PhantomSpec phantom;
    DatasetConfig dataset;
    recon::PrimalDualConfig recon;
    detect::DetectorConfig detector;
    sampling::SamplingConfig sampling;
    train::ReconTrainConfig stage1;
    train::DetectorTrainConfig stage2;
    train::FinetuneConfig stage3;
    EvaluationConfig evaluation;

    void validate() const;
};

/// Built-in presets: "full", "desk" and "tiny".
RunConfig profile_config(const std::string& name);

/// Applies a JSON document on top of `base`. Unknown keys and wrongly typed
/// values are ConfigErrors naming the offending key path.
RunConfig apply_json(RunConfig base, const nlohmann::json& doc);

/// Reads a config file: its optional "profile" key selects the base preset
/// (default `fallback_profile`), the rest overrides it.
RunConfig load_config(const std::filesystem::path& path, const std::string& fallback_profile);

/// Fully resolved config, for the echo written beside every output.
nlohmann::json to_json(const RunConfig& config);

} // namespace tomodet::app
