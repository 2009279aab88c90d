#include "tomodet/ct/volume.hpp"

#include <cmath>
#include <fstream>

#include "tomodet/util/binary_io.hpp"
#include "tomodet/util/error.hpp"

namespace tomodet::ct {

const char* unit_name(Unit u)
{
    switch (u) {
    case Unit::hu: return "HU";
    case Unit::mu: return "MU";
    case Unit::mask: return "MASK";
    }
    return "?";
}

Volume Volume::centered(std::array<std::size_t, 3> extents, std::array<double, 3> spacing, Unit unit)
{
    Volume v;
    v.extents = extents;
    v.spacing = spacing;
    v.unit = unit;
    for (int a = 0; a < 3; ++a) v.origin[a] = -0.5 * static_cast<double>(extents[a] - 1) * spacing[a];
    v.values.assign(v.voxel_count(), 0.0);
    return v;
}

Volume Volume::like(Unit u) const
{
    Volume v = *this;
    v.unit = u;
    v.values.assign(voxel_count(), 0.0);
    return v;
}

void Volume::validate() const
{
    if (values.size() != voxel_count()) throw DataError("volume value count does not match extents");
    for (double s : spacing)
        if (!(s > 0.0)) throw DataError("volume spacing must be positive");
    for (double v : values)
        if (!std::isfinite(v)) throw DataError("non-finite value in volume");
}

Sinogram Sinogram::zeros(const FanbeamGeometry& geometry, std::size_t n_slices)
{
    Sinogram s;
    s.n_views = geometry.n_views;
    s.n_channels = geometry.n_channels;
    s.n_slices = n_slices;
    s.geometry = geometry;
    s.values.assign(s.slice_size() * n_slices, 0.0);
    return s;
}

Sinogram Sinogram::slices(std::size_t begin, std::size_t count) const
{
    if (begin + count > n_slices) throw std::out_of_range("sinogram slice range out of bounds");
    Sinogram s = zeros(geometry, count);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(begin * slice_size()), count * slice_size(),
                s.values.begin());
    return s;
}

void Sinogram::validate() const
{
    if (n_views != geometry.n_views || n_channels != geometry.n_channels)
        throw DataError("sinogram extents do not match its geometry");
    if (values.size() != slice_size() * n_slices) throw DataError("sinogram value count does not match extents");
    for (double v : values)
        if (!std::isfinite(v)) throw DataError("non-finite value in sinogram");
}

void write_volume(const Volume& vol, const std::filesystem::path& path)
{
    vol.validate();
    io::write_atomically(path, [&](std::ostream& os) {
        os << "TDVOL1\n";
        io::write_u32(os, static_cast<std::uint32_t>(vol.unit));
        for (auto e : vol.extents) io::write_u32(os, static_cast<std::uint32_t>(e));
        for (auto s : vol.spacing) io::write_f64(os, s);
        for (auto o : vol.origin) io::write_f64(os, o);
        std::vector<float> payload(vol.values.begin(), vol.values.end());
        io::write_f32_array(os, payload);
    });
}

Volume read_volume(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open volume " + path.string());
    io::expect_magic(is, "TDVOL1", path);
    Volume vol;
    const auto tag = io::read_u32(is, "volume unit tag");
    if (tag > 2) throw DataError("unknown unit tag in " + path.string());
    vol.unit = static_cast<Unit>(tag);
    for (auto& e : vol.extents) e = io::read_u32(is, "volume extents");
    for (auto& s : vol.spacing) s = io::read_f64(is, "volume spacing");
    for (auto& o : vol.origin) o = io::read_f64(is, "volume origin");
    const auto payload = io::read_f32_array(is, vol.voxel_count(), "volume values");
    vol.values.assign(payload.begin(), payload.end());
    for (double v : vol.values)
        if (!std::isfinite(v)) throw DataError("non-finite value in " + path.string());
    return vol;
}

void write_sinogram(const Sinogram& sino, const std::filesystem::path& path)
{
    sino.validate();
    io::write_atomically(path, [&](std::ostream& os) {
        os << "TDSINO1\n";
        io::write_u32(os, static_cast<std::uint32_t>(sino.n_views));
        io::write_u32(os, static_cast<std::uint32_t>(sino.n_channels));
        io::write_u32(os, static_cast<std::uint32_t>(sino.n_slices));
        const auto& g = sino.geometry;
        io::write_u32(os, static_cast<std::uint32_t>(g.n_views));
        io::write_u32(os, static_cast<std::uint32_t>(g.n_channels));
        io::write_f64(os, g.channel_arc_width);
        io::write_f64(os, g.row_height);
        io::write_f64(os, g.dist_source_center);
        io::write_f64(os, g.dist_source_detector);
        std::vector<float> payload(sino.values.begin(), sino.values.end());
        io::write_f32_array(os, payload);
    });
}

Sinogram read_sinogram(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open sinogram " + path.string());
    io::expect_magic(is, "TDSINO1", path);
    Sinogram s;
    s.n_views = io::read_u32(is, "sinogram extents");
    s.n_channels = io::read_u32(is, "sinogram extents");
    s.n_slices = io::read_u32(is, "sinogram extents");
    auto& g = s.geometry;
    g.n_views = io::read_u32(is, "geometry record");
    g.n_channels = io::read_u32(is, "geometry record");
    g.channel_arc_width = io::read_f64(is, "geometry record");
    g.row_height = io::read_f64(is, "geometry record");
    g.dist_source_center = io::read_f64(is, "geometry record");
    g.dist_source_detector = io::read_f64(is, "geometry record");
    const auto payload = io::read_f32_array(is, s.slice_size() * s.n_slices, "sinogram values");
    s.values.assign(payload.begin(), payload.end());
    s.validate();
    return s;
}

} // namespace tomodet::ct
