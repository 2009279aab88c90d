#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tomodet/ct/projector.hpp"
#include "tomodet/ct/volume.hpp"

namespace tomodet::ct {

enum class Apodization { ramlak, hann };

Apodization parse_apodization(const std::string& name);

/// Equiangular fanbeam filtered backprojection over a full rotation:
/// cosine pre-weighting, frequency-domain ramp filtering along channels with
/// the chosen apodization, then 1/L^2-weighted pixel-driven backprojection.
///
/// Construction precomputes the filter response and the per-view pixel
/// footprints; apply() is then a pure function of the sinogram, and every
/// slice is reconstructed independently with the same arithmetic.
class FbpOperator {
public:
    FbpOperator(const FanbeamGeometry& geometry, const SliceGrid& grid, Apodization window);

    /// out[slices][ny][nx] = FBP of sino[slices][views][channels].
    void apply(std::span<const double> sino, std::size_t slices, std::span<double> out) const;

    const SliceGrid& grid() const { return grid_; }

private:
    void filter_rows(std::vector<double>& rows, std::size_t count) const;

    FanbeamGeometry geometry_;
    SliceGrid grid_;
    std::size_t padded_ = 0;
    std::vector<double> response_;
    // Per (view, pixel): left channel (-1 if outside the fan), interpolation
    // fraction, and 1/L^2.
    std::vector<std::int32_t> channel_;
    std::vector<double> fraction_;
    std::vector<double> inv_dist2_;
};

Volume fbp(const Sinogram& sino, const Volume& like, Apodization window = Apodization::hann);

} // namespace tomodet::ct
