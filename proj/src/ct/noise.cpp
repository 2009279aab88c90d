#include "tomodet/ct/noise.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace tomodet::ct {

Sinogram add_poisson_noise(const Sinogram& sino, double n0, std::uint64_t seed)
{
    if (!(n0 > 0.0)) throw std::invalid_argument("add_poisson_noise: n0 must be positive");
    if (std::isinf(n0)) return sino;
    Sinogram out = sino;
    std::mt19937_64 rng(seed);
    for (double& p : out.values) {
        std::poisson_distribution<long long> counts(n0 * std::exp(-p));
        const auto detected = std::max<long long>(counts(rng), 1);
        p = -std::log(static_cast<double>(detected) / n0);
    }
    return out;
}

Volume hu_to_mu(const Volume& hu)
{
    if (hu.unit != Unit::hu) throw std::invalid_argument(std::string("hu_to_mu: volume is tagged ") + unit_name(hu.unit));
    Volume out = hu;
    out.unit = Unit::mu;
    for (double& v : out.values) v = kMuWater * (1.0 + v / 1000.0);
    return out;
}

Volume mu_to_hu(const Volume& mu)
{
    if (mu.unit != Unit::mu) throw std::invalid_argument(std::string("mu_to_hu: volume is tagged ") + unit_name(mu.unit));
    Volume out = mu;
    out.unit = Unit::hu;
    for (double& v : out.values) v = 1000.0 * (v / kMuWater - 1.0);
    return out;
}

} // namespace tomodet::ct
