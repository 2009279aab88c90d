#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tomodet/app/config.hpp"

namespace tomodet::app {

/// File layout of a run directory.
struct Workspace {
    std::filesystem::path root;

    std::filesystem::path manifest() const { return root / "manifest.json"; }
    std::filesystem::path scan_dir() const { return root / "scans"; }
    std::filesystem::path fbp_dir() const { return root / "fbp"; }
    std::filesystem::path checkpoint(const std::string& name) const { return root / "checkpoints" / (name + ".ckpt"); }
    std::filesystem::path log(const std::string& name) const { return root / "logs" / (name + ".csv"); }
    std::filesystem::path metrics(const std::string& name) const { return root / "metrics" / (name + ".json"); }
    std::filesystem::path patches(const std::string& split) const { return root / "patches" / (split + ".csv"); }
    std::filesystem::path detections(eval::Variant v, double n0) const;
    std::filesystem::path froc(eval::Variant v, double n0) const;
    std::filesystem::path score_grid() const { return root / "eval" / "score_grid.csv"; }
    std::filesystem::path report_dir() const { return root / "report"; }
    std::filesystem::path config_echo(const std::string& command) const
    {
        return root / "config" / (command + ".json");
    }
};

/// Deterministic per-purpose seed derived from the run seed.
std::uint64_t derive_seed(std::uint64_t base, const std::string& purpose, std::uint64_t index = 0);

/// Writes the resolved config to workspace/config/<command>.json.
void echo_config(const RunConfig& config, const Workspace& ws, const std::string& command);

// One function per CLI command. Each reads its inputs from the workspace,
// validates them, and writes its outputs atomically.

void run_phantom(const RunConfig& config, const Workspace& ws);
/// Noiseless sinograms for every scan; with `n0`, a noisy copy per scan too.
void run_project(const RunConfig& config, const Workspace& ws, std::optional<double> n0);
/// FBP volumes and the FBP-derived lung masks.
void run_fbp(const RunConfig& config, const Workspace& ws);
void run_train_recon(const RunConfig& config, const Workspace& ws);
/// Trains the detector on the image source of each requested variant
/// (reference, fbp, two-step); end-to-end is not a stage-2 variant.
void run_train_detector(const RunConfig& config, const Workspace& ws, const std::vector<eval::Variant>& variants);
void run_finetune(const RunConfig& config, const Workspace& ws);
void run_detect(const RunConfig& config, const Workspace& ws, const std::vector<eval::Variant>& variants,
                const std::vector<double>& noise_levels);
void run_evaluate(const RunConfig& config, const Workspace& ws, const std::vector<eval::Variant>& variants,
                  const std::vector<double>& noise_levels);
void run_report(const RunConfig& config, const Workspace& ws, const std::vector<eval::Variant>& variants,
                const std::vector<double>& noise_levels);

} // namespace tomodet::app
