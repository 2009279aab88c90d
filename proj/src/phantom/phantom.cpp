#include "tomodet/phantom/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "tomodet/util/binary_io.hpp"
#include "tomodet/util/error.hpp"

namespace tomodet::phantom {

namespace {

using Vec3 = std::array<double, 3>;

struct Ellipsoid {
    Vec3 center, semi;
    bool contains(const Vec3& p) const
    {
        double s = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double t = (p[a] - center[a]) / semi[a];
            s += t * t;
        }
        return s <= 1.0;
    }
};

struct Segment {
    Vec3 a, b;
    double radius;
};

double dist2(const Vec3& p, const Vec3& q)
{
    double s = 0.0;
    for (int a = 0; a < 3; ++a) s += (p[a] - q[a]) * (p[a] - q[a]);
    return s;
}

double segment_dist2(const Vec3& p, const Segment& s)
{
    Vec3 d{}, w{};
    double dd = 0.0, wd = 0.0;
    for (int a = 0; a < 3; ++a) {
        d[a] = s.b[a] - s.a[a];
        w[a] = p[a] - s.a[a];
        dd += d[a] * d[a];
        wd += w[a] * d[a];
    }
    const double t = dd > 0.0 ? std::clamp(wd / dd, 0.0, 1.0) : 0.0;
    Vec3 q{};
    for (int a = 0; a < 3; ++a) q[a] = s.a[a] + t * d[a];
    return dist2(p, q);
}

Vec3 normalized(Vec3 v)
{
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (auto& c : v) c /= n;
    return v;
}

// Rotates `d` by `angle` towards a random direction perpendicular to it.
Vec3 deflect(const Vec3& d, double angle, std::mt19937_64& rng)
{
    std::normal_distribution<double> g;
    Vec3 r{g(rng), g(rng), g(rng)};
    double rd = r[0] * d[0] + r[1] * d[1] + r[2] * d[2];
    for (int a = 0; a < 3; ++a) r[a] -= rd * d[a];
    r = normalized(r);
    Vec3 out{};
    for (int a = 0; a < 3; ++a) out[a] = std::cos(angle) * d[a] + std::sin(angle) * r[a];
    return normalized(out);
}

std::string format6(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

} // namespace

void PhantomSpec::validate() const
{
    for (auto e : extents)
        if (e == 0) throw ConfigError("phantom extents must be positive");
    for (auto s : spacing)
        if (!(s > 0.0)) throw ConfigError("phantom spacing must be positive");
    if (nodule_count[0] > nodule_count[1]) throw ConfigError("nodule count range is reversed");
    if (!(nodule_diameter[0] > 0.0) || nodule_diameter[0] > nodule_diameter[1])
        throw ConfigError("nodule diameter range must satisfy 0 < min <= max");
}

Phantom generate_phantom(const PhantomSpec& spec, const std::string& scan_id)
{
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto jitter = [&] { return uniform(-0.05, 0.05); };

    Phantom ph;
    ph.hu = ct::Volume::centered(spec.extents, spec.spacing, ct::Unit::hu);
    ph.lung_mask = ph.hu.like(ct::Unit::mask);
    auto& hu = ph.hu;
    const std::size_t nx = hu.nx(), ny = hu.ny(), nz = hu.nz();
    Vec3 half{};
    for (int a = 0; a < 3; ++a) half[a] = 0.5 * static_cast<double>(spec.extents[a]) * spec.spacing[a];

    const Ellipsoid body{{0.0, 0.0, 0.0}, {0.85 * half[0], 0.7 * half[1], 4.0 * half[2]}};
    std::array<Ellipsoid, 2> lungs;
    for (int side = 0; side < 2; ++side) {
        const double sign = side == 0 ? -1.0 : 1.0;
        lungs[side].center = {sign * 0.36 * half[0] * (1.0 + jitter()), jitter() * half[1], 0.0};
        lungs[side].semi = {0.28 * half[0] * (1.0 + jitter()), 0.5 * half[1] * (1.0 + jitter()),
                            1.15 * half[2] * (1.0 + jitter())};
    }
    auto position = [&](std::size_t x, std::size_t y, std::size_t z) {
        return Vec3{hu.position(0, double(x)), hu.position(1, double(y)), hu.position(2, double(z))};
    };
    auto in_lung = [&](const Vec3& p) { return lungs[0].contains(p) || lungs[1].contains(p); };

    for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t x = 0; x < nx; ++x) {
                const Vec3 p = position(x, y, z);
                double v = kAirHu;
                if (body.contains(p)) v = kBodyHu;
                if (in_lung(p)) {
                    v = kLungHu;
                    ph.lung_mask.at(x, y, z) = 1.0;
                }
                hu.at(x, y, z) = v;
            }

    // Vessel trees: a trunk from the medial side of each lung, splitting in two.
    std::vector<Segment> segments;
    for (int side = 0; side < 2; ++side) {
        const Ellipsoid& lung = lungs[side];
        const double outward = lung.center[0] < 0.0 ? -1.0 : 1.0;
        Ellipsoid inner = lung;
        for (auto& s : inner.semi) s *= 0.8;
        for (std::size_t t = 0; t < spec.vessels_per_lung; ++t) {
            for (int attempt = 0; attempt < 20; ++attempt) {
                const Vec3 start{lung.center[0] - outward * 0.6 * lung.semi[0],
                                 lung.center[1] + uniform(-0.3, 0.3) * lung.semi[1],
                                 uniform(-0.8, 0.8) * std::min(lung.semi[2], half[2])};
                const Vec3 dir = normalized({outward * uniform(0.3, 1.0), uniform(-1.0, 1.0), uniform(-0.5, 0.5)});
                const double length = uniform(0.3, 0.6) * lung.semi[0] * 2.0;
                Vec3 branch{};
                for (int a = 0; a < 3; ++a) branch[a] = start[a] + length * dir[a];
                if (!inner.contains(branch) || std::abs(branch[2]) > half[2]) continue;
                const double radius = uniform(1.0, 1.8);
                segments.push_back({start, branch, radius});
                for (int child = 0; child < 2; ++child) {
                    const Vec3 cdir = deflect(dir, uniform(0.35, 0.8), rng);
                    const double clen = uniform(0.2, 0.4) * lung.semi[0] * 2.0;
                    Vec3 end{};
                    for (int a = 0; a < 3; ++a) end[a] = branch[a] + clen * cdir[a];
                    segments.push_back({branch, end, 0.7 * radius});
                }
                ph.non_nodules.push_back({scan_id, branch, 2.0 * radius});
                break;
            }
        }
    }
    for (const auto& seg : segments) {
        std::array<std::size_t, 3> lo{}, hi{};
        for (int a = 0; a < 3; ++a) {
            const double mn = std::min(seg.a[a], seg.b[a]) - seg.radius;
            const double mx = std::max(seg.a[a], seg.b[a]) + seg.radius;
            const double n = static_cast<double>(spec.extents[a]);
            lo[a] = static_cast<std::size_t>(std::clamp(std::floor(hu.voxel_coord(a, mn)), 0.0, n - 1.0));
            hi[a] = static_cast<std::size_t>(std::clamp(std::ceil(hu.voxel_coord(a, mx)), 0.0, n - 1.0));
        }
        const double r2 = seg.radius * seg.radius;
        for (std::size_t z = lo[2]; z <= hi[2]; ++z)
            for (std::size_t y = lo[1]; y <= hi[1]; ++y)
                for (std::size_t x = lo[0]; x <= hi[0]; ++x)
                    if (ph.lung_mask.at(x, y, z) > 0.0 && segment_dist2(position(x, y, z), seg) <= r2)
                        hu.at(x, y, z) = kVesselHu;
    }

    // Nodules: voxel-centred spheres whose whole partial-volume footprint lies
    // in lung voxels and that keep 1 mm clear of each other.
    std::vector<std::size_t> lung_voxels;
    for (std::size_t i = 0; i < ph.lung_mask.values.size(); ++i)
        if (ph.lung_mask.values[i] > 0.0) lung_voxels.push_back(i);
    const auto [cmin, cmax] = spec.nodule_count;
    ph.requested_nodules = cmin + static_cast<std::size_t>(unit(rng) * double(cmax - cmin + 1));
    ph.requested_nodules = std::min(ph.requested_nodules, cmax);

    constexpr int kSub = 4;
    auto coverage = [&](const Vec3& c, double r, std::size_t x, std::size_t y, std::size_t z) {
        const Vec3 p = position(x, y, z);
        int inside = 0;
        for (int i = 0; i < kSub; ++i)
            for (int j = 0; j < kSub; ++j)
                for (int k = 0; k < kSub; ++k) {
                    const Vec3 q{p[0] + ((i + 0.5) / kSub - 0.5) * spec.spacing[0],
                                 p[1] + ((j + 0.5) / kSub - 0.5) * spec.spacing[1],
                                 p[2] + ((k + 0.5) / kSub - 0.5) * spec.spacing[2]};
                    inside += dist2(q, c) <= r * r;
                }
        return double(inside) / double(kSub * kSub * kSub);
    };

    for (std::size_t n = 0; n < ph.requested_nodules && !lung_voxels.empty(); ++n) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            const double d = uniform(spec.nodule_diameter[0], spec.nodule_diameter[1]);
            const double r = 0.5 * d;
            const std::size_t idx = lung_voxels[static_cast<std::size_t>(unit(rng) * double(lung_voxels.size())) %
                                                lung_voxels.size()];
            const std::size_t cx = idx % nx, cy = (idx / nx) % ny, cz = idx / (nx * ny);
            const Vec3 c = position(cx, cy, cz);
            bool clear = true;
            for (const auto& other : ph.nodules) {
                const double gap = r + 0.5 * other.diameter + 1.0;
                clear = clear && dist2(c, other.center) > gap * gap;
            }
            if (!clear) continue;
            std::array<long, 3> lo{}, hi{};
            const std::array<std::size_t, 3> cc{cx, cy, cz};
            for (int a = 0; a < 3; ++a) {
                const long reach = static_cast<long>(std::ceil(r / spec.spacing[a] + 0.5));
                lo[a] = static_cast<long>(cc[a]) - reach;
                hi[a] = static_cast<long>(cc[a]) + reach;
            }
            if (lo[0] < 0 || lo[1] < 0 || lo[2] < 0 || hi[0] >= long(nx) || hi[1] >= long(ny) || hi[2] >= long(nz))
                continue;
            std::vector<std::pair<std::size_t, double>> footprint;
            for (long z = lo[2]; z <= hi[2] && clear; ++z)
                for (long y = lo[1]; y <= hi[1] && clear; ++y)
                    for (long x = lo[0]; x <= hi[0] && clear; ++x) {
                        const double f = coverage(c, r, x, y, z);
                        if (f <= 0.0) continue;
                        if (ph.lung_mask.at(x, y, z) <= 0.0) clear = false;
                        footprint.emplace_back(hu.index(x, y, z), f);
                    }
            if (!clear) continue;
            for (auto [i, f] : footprint) hu.values[i] = (1.0 - f) * hu.values[i] + f * kNoduleHu;
            ph.nodules.push_back({scan_id, c, d});
            break;
        }
    }
    return ph;
}

void write_annotations(const std::vector<Annotation>& annotations, const std::filesystem::path& path)
{
    io::write_atomically(path, [&](std::ostream& os) {
        os << "scan_id,x_mm,y_mm,z_mm,diameter_mm\n";
        for (const auto& a : annotations) {
            if (a.scan_id.find_first_of(",\n") != std::string::npos)
                throw DataError("scan id '" + a.scan_id + "' contains a comma or newline");
            os << a.scan_id << ',' << format6(a.center[0]) << ',' << format6(a.center[1]) << ','
               << format6(a.center[2]) << ',' << format6(a.diameter) << '\n';
        }
    });
}

std::vector<Annotation> read_annotations(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open annotations " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "scan_id,x_mm,y_mm,z_mm,diameter_mm")
        throw DataError(path.string() + ":1: expected header scan_id,x_mm,y_mm,z_mm,diameter_mm");
    std::vector<Annotation> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        if (fields.size() != 5)
            throw DataError(where + "expected 5 fields, found " + std::to_string(fields.size()));
        Annotation a;
        a.scan_id = fields[0];
        double vals[4];
        for (int k = 0; k < 4; ++k) {
            const std::string& s = fields[k + 1];
            char* end = nullptr;
            vals[k] = std::strtod(s.c_str(), &end);
            if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(vals[k]))
                throw DataError(where + "malformed number '" + s + "'");
        }
        a.center = {vals[0], vals[1], vals[2]};
        a.diameter = vals[3];
        if (!(a.diameter > 0.0)) throw DataError(where + "diameter must be positive");
        out.push_back(std::move(a));
    }
    return out;
}

void write_manifest(const std::vector<ScanRecord>& scans, const std::filesystem::path& path)
{
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : scans)
        j.push_back({{"id", s.id},
                     {"split", s.split},
                     {"volume", s.volume},
                     {"mask", s.mask},
                     {"annotations", s.annotations},
                     {"non_nodules", s.non_nodules},
                     {"sinogram", s.sinogram}});
    io::write_atomically(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

std::vector<ScanRecord> read_manifest(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + path.string() + ": " + e.what());
    }
    if (!j.is_array()) throw DataError("manifest " + path.string() + " must be a JSON array");
    std::vector<ScanRecord> out;
    for (const auto& r : j) {
        try {
            ScanRecord s;
            s.id = r.at("id").get<std::string>();
            s.split = r.at("split").get<std::string>();
            s.volume = r.at("volume").get<std::string>();
            s.mask = r.at("mask").get<std::string>();
            s.annotations = r.at("annotations").get<std::string>();
            s.non_nodules = r.value("non_nodules", std::string());
            s.sinogram = r.value("sinogram", std::string());
            out.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed manifest record in " + path.string() + ": " + e.what());
        }
    }
    return out;
}

} // namespace tomodet::phantom
