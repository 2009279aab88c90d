#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tomodet/ct/volume.hpp"
#include "tomodet/detect/detector.hpp"
#include "tomodet/diff/params.hpp"
#include "tomodet/recon/primal_dual.hpp"
#include "tomodet/sampling/patches.hpp"

namespace tomodet::train {

struct LossRecord {
    std::size_t step = 0;
    std::string stage;
    double loss = 0.0;
};

/// CSV `step,stage,loss`.
void write_loss_trace(const std::vector<LossRecord>& trace, const std::filesystem::path& path);

/// Called after every optimiser step; may be empty.
using Progress = std::function<void(const LossRecord&)>;

// ---- stage 1 -------------------------------------------------------------

struct ReconPair {
    const ct::Sinogram* sinogram = nullptr;
    const ct::Volume* truth_mu = nullptr;
};

struct ReconTrainConfig {
    std::size_t epochs = 1;
    std::size_t samples_per_scan = 50;
    diff::AdamConfig adam;
    std::uint64_t seed = 0;
};

/// Mean squared error in water-relative units, mean(((a - b) / mu_water)^2).
double relative_l2(std::span<const double> mu, std::span<const double> truth_mu);

/// Window loss of the network output against the matching truth slices.
diff::Tensor window_loss(const recon::PrimalDualNet& net, const ReconPair& pair, std::size_t start,
                         const diff::ParamSet& theta);

/// Adam on randomly drawn 3-slice windows, one step per window. A non-finite
/// loss throws NumericalError naming the step.
std::vector<LossRecord> train_recon(const recon::PrimalDualNet& net, const std::vector<ReconPair>& scans,
                                    diff::ParamSet& theta, const ReconTrainConfig& config,
                                    const Progress& progress = {});

// ---- stage 2 -------------------------------------------------------------

/// One training patch: which image it comes from and where.
struct DetectorSample {
    std::size_t image = 0;
    sampling::PatchSpec spec;
};

struct DetectorTrainConfig {
    std::size_t epochs = 10;
    std::size_t minibatch = 50;
    diff::AdamConfig adam;
    std::uint64_t seed = 0;
};

/// Normalised constant patch tensor [1, 16, 32, 32] from an HU or MU image.
diff::Tensor patch_tensor(const ct::Volume& image, const sampling::PatchSpec& spec);

struct DetectorMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Mean cross entropy and accuracy (threshold 0.5) with frozen parameters.
DetectorMetrics evaluate_detector(const std::vector<const ct::Volume*>& images,
                                  const std::vector<DetectorSample>& samples, const diff::ParamSet& eta,
                                  const detect::DetectorConfig& config);

/// Adam on shuffled minibatches of patch cross entropy. Only `eta` changes.
std::vector<LossRecord> train_detector(const std::vector<const ct::Volume*>& images,
                                       const std::vector<DetectorSample>& samples, diff::ParamSet& eta,
                                       const detect::DetectorConfig& config, const DetectorTrainConfig& train,
                                       const Progress& progress = {});

// ---- stage 3 -------------------------------------------------------------

struct Block {
    std::size_t start = 0;
    std::size_t slices = 0;
    /// Indices into the scan's patch list, in list order.
    std::vector<std::size_t> patches;
};

/// Slice blocks of min(block_slices, nz) slices at stride block_slices -
/// overlap (the last one flush with the end); every patch goes to the first
/// block that holds its whole z-extent. Blocks without patches are dropped.
std::vector<Block> plan_blocks(std::size_t nz, const std::vector<sampling::PatchSpec>& specs,
                               std::size_t block_slices = 32, std::size_t overlap = 16);

struct FinetuneScan {
    const ct::Sinogram* sinogram = nullptr;
    const ct::Volume* grid = nullptr;
    std::vector<sampling::PatchSpec> specs;
};

struct FinetuneConfig {
    std::size_t epochs = 1;
    std::size_t block_slices = 32;
    std::size_t overlap = 16;
    diff::AdamConfig adam;
    std::uint64_t seed = 0;
};

struct FinetuneResult {
    std::vector<LossRecord> trace;
    /// visits[s][i]: how often patch i of scan s entered a loss.
    std::vector<std::vector<std::size_t>> visits;
};

/// Joint Adam steps on (theta, eta): each step reconstructs one block of one
/// scan and averages the cross entropy of the block's patches.
FinetuneResult finetune_e2e(const recon::PrimalDualNet& net, const std::vector<FinetuneScan>& scans,
                            diff::ParamSet& theta, diff::ParamSet& eta, const detect::DetectorConfig& det_config,
                            const FinetuneConfig& config, const Progress& progress = {});

/// Loss of one stage-3 step without updating anything: the block is
/// reconstructed with theta and the patches scored with eta.
double block_loss(const recon::PrimalDualNet& net, const FinetuneScan& scan, const Block& block,
                  const diff::ParamSet& theta, const diff::ParamSet& eta, const detect::DetectorConfig& det_config);

} // namespace tomodet::train
