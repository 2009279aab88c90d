#pragma once

#include <cstddef>

namespace tomodet::ct {

/// Equiangular multi-slice fanbeam acquisition. Each detector row sees one
/// axial slice; channels subtend equal angles at the source.
///
/// Angles: view v places the source at angle 2*pi*v/n_views, i.e. at
/// (-D*sin(a), D*cos(a)) with D the source-to-centre distance; channel c sits
/// at fan angle (c - (n_channels-1)/2) * channel_pitch(), counter-clockwise
/// from the central ray.
struct FanbeamGeometry {
    std::size_t n_views = 144;
    std::size_t n_channels = 736;
    double channel_arc_width = 1.2858; // mm, measured on the detector arc
    double row_height = 2.0;           // mm
    double dist_source_center = 595.0;
    double dist_source_detector = 1086.5;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;

    double channel_pitch() const { return channel_arc_width / dist_source_detector; }
    double channel_angle(std::size_t c) const;
    double view_angle(std::size_t v) const;
    /// Radius of the circle covered by every view.
    double fov_radius() const;

    bool operator==(const FanbeamGeometry&) const = default;
};

} // namespace tomodet::ct
