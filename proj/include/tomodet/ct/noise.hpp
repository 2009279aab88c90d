#pragma once

#include <cstdint>
#include <limits>

#include "tomodet/ct/volume.hpp"

namespace tomodet::ct {

/// Photons per ray; infinity means a noiseless passthrough.
inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

/// Transmission Poisson noise: I ~ Poisson(n0 * exp(-p)),
/// p' = -ln(max(I, 1) / n0). Draws happen in storage order from a
/// mt19937_64 seeded with `seed`.
Sinogram add_poisson_noise(const Sinogram& sino, double n0, std::uint64_t seed);

/// Water attenuation at ~70 keV, mm^-1.
inline constexpr double kMuWater = 0.0192;

/// mu = mu_water * (1 + HU/1000) and its inverse. Rejects a volume whose
/// unit tag does not match the direction.
Volume hu_to_mu(const Volume& hu);
Volume mu_to_hu(const Volume& mu);

} // namespace tomodet::ct
