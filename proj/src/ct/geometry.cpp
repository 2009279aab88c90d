#include "tomodet/ct/geometry.hpp"

#include <cmath>
#include <numbers>

#include "tomodet/util/error.hpp"

namespace tomodet::ct {

void FanbeamGeometry::validate() const
{
    if (n_views < 1 || n_channels < 1) throw ConfigError("geometry: n_views and n_channels must be >= 1");
    if (!(dist_source_center > 0.0) || !(dist_source_detector > dist_source_center))
        throw ConfigError("geometry: need dist_source_detector > dist_source_center > 0");
    if (!(channel_arc_width > 0.0) || !(row_height > 0.0))
        throw ConfigError("geometry: channel arc width and row height must be positive");
    if (channel_pitch() * static_cast<double>(n_channels) >= std::numbers::pi)
        throw ConfigError("geometry: fan angle must stay below pi");
}

double FanbeamGeometry::channel_angle(std::size_t c) const
{
    return (static_cast<double>(c) - 0.5 * static_cast<double>(n_channels - 1)) * channel_pitch();
}

double FanbeamGeometry::view_angle(std::size_t v) const
{
    return 2.0 * std::numbers::pi * static_cast<double>(v) / static_cast<double>(n_views);
}

double FanbeamGeometry::fov_radius() const
{
    return dist_source_center * std::sin(std::abs(channel_angle(0)));
}

} // namespace tomodet::ct
