#include "tomodet/sampling/patches.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "tomodet/diff/ops.hpp"
#include "tomodet/util/binary_io.hpp"
#include "tomodet/util/error.hpp"

namespace tomodet::sampling {

namespace {

// Calls fn(patch_index, volume_index) for every patch voxel inside the
// volume, with the patch traversed z, y, x.
template <class Fn>
void for_each_patch_voxel(const std::array<std::size_t, 3>& ext, const std::array<long, 3>& corner,
                          const std::array<bool, 3>& flip, Fn&& fn)
{
    const auto [px, py, pz] = kPatchExtents;
    std::size_t p = 0;
    for (std::size_t z = 0; z < pz; ++z) {
        const long vz = corner[2] + long(flip[2] ? pz - 1 - z : z);
        for (std::size_t y = 0; y < py; ++y) {
            const long vy = corner[1] + long(flip[1] ? py - 1 - y : y);
            for (std::size_t x = 0; x < px; ++x, ++p) {
                const long vx = corner[0] + long(flip[0] ? px - 1 - x : x);
                if (vx < 0 || vy < 0 || vz < 0 || vx >= long(ext[0]) || vy >= long(ext[1]) || vz >= long(ext[2]))
                    continue;
                fn(p, (std::size_t(vz) * ext[1] + std::size_t(vy)) * ext[0] + std::size_t(vx));
            }
        }
    }
}

std::array<long, 3> signed_corner(const PatchSpec& s)
{
    return {long(s.corner[0]), long(s.corner[1]), long(s.corner[2])};
}

diff::Tensor extract_impl(const diff::Tensor& volume, std::array<long, 3> corner, std::array<bool, 3> flip)
{
    if (volume.rank() != 3)
        throw std::invalid_argument("patch extraction expects a [nz,ny,nx] tensor, got " +
                                    diff::to_string(volume.shape()));
    const std::array<std::size_t, 3> ext{volume.extent(2), volume.extent(1), volume.extent(0)};
    auto forward = [ext, corner, flip](std::span<const double> in, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        for_each_patch_voxel(ext, corner, flip, [&](std::size_t p, std::size_t v) { out[p] = in[v]; });
    };
    auto adjoint = [ext, corner, flip](std::span<const double> in, std::span<double> out) {
        for_each_patch_voxel(ext, corner, flip, [&](std::size_t p, std::size_t v) { out[v] += in[p]; });
    };
    return diff::linear_map(volume, {1, kPatchExtents[2], kPatchExtents[1], kPatchExtents[0]}, forward, adjoint);
}

// Box corner that puts voxel `c` at offset half-extent, clipped into the volume.
std::array<std::size_t, 3> corner_around(const ct::Volume& grid, const std::array<long, 3>& c, bool* clipped)
{
    std::array<std::size_t, 3> out{};
    for (int a = 0; a < 3; ++a) {
        const long lo = c[a] - long(kPatchExtents[a] / 2);
        const long hi = long(grid.extents[a]) - long(kPatchExtents[a]);
        const long v = std::clamp(lo, 0L, hi);
        if (v != lo && clipped) *clipped = true;
        out[a] = std::size_t(v);
    }
    return out;
}

std::array<long, 3> nearest_voxel(const ct::Volume& grid, const std::array<double, 3>& mm)
{
    std::array<long, 3> v{};
    for (int a = 0; a < 3; ++a) v[a] = std::lround(grid.voxel_coord(a, mm[a]));
    return v;
}

} // namespace

std::array<double, 3> PatchSpec::center_mm(const ct::Volume& grid) const
{
    std::array<double, 3> c{};
    for (int a = 0; a < 3; ++a)
        c[a] = grid.position(a, double(corner[a]) + 0.5 * double(kPatchExtents[a]) - 0.5);
    return c;
}

bool PatchSpec::contains(const ct::Volume& grid, const std::array<double, 3>& mm) const
{
    for (int a = 0; a < 3; ++a) {
        const double v = grid.voxel_coord(a, mm[a]);
        if (v < double(corner[a]) - 0.5 || v >= double(corner[a] + kPatchExtents[a]) - 0.5) return false;
    }
    return true;
}

void check_in_bounds(const ct::Volume& grid, const PatchSpec& spec)
{
    for (int a = 0; a < 3; ++a)
        if (spec.corner[a] + kPatchExtents[a] > grid.extents[a])
            throw DataError("patch at corner (" + std::to_string(spec.corner[0]) + "," +
                            std::to_string(spec.corner[1]) + "," + std::to_string(spec.corner[2]) +
                            ") leaves the volume of scan '" + spec.scan_id + "'");
}

Patch extract_patch(const ct::Volume& vol, const PatchSpec& spec)
{
    check_in_bounds(vol, spec);
    Patch p{spec.scan_id, spec.label, std::vector<double>(kPatchVoxels)};
    for_each_patch_voxel(vol.extents, signed_corner(spec), spec.flip,
                         [&](std::size_t i, std::size_t v) { p.values[i] = vol.values[v]; });
    return p;
}

diff::Tensor extract_patch(const diff::Tensor& volume, const PatchSpec& spec)
{
    if (volume.rank() != 3) return extract_impl(volume, signed_corner(spec), spec.flip);
    for (int a = 0; a < 3; ++a)
        if (spec.corner[a] + kPatchExtents[a] > volume.extent(2 - a))
            throw DataError("patch leaves the volume tensor " + diff::to_string(volume.shape()));
    return extract_impl(volume, signed_corner(spec), spec.flip);
}

diff::Tensor extract_patch_padded(const diff::Tensor& volume, std::array<long, 3> corner, std::array<bool, 3> flip)
{
    return extract_impl(volume, corner, flip);
}

void scatter_patch_add(const ct::Volume& grid, const PatchSpec& spec, const std::vector<double>& patch,
                       std::vector<double>& volume)
{
    check_in_bounds(grid, spec);
    if (patch.size() != kPatchVoxels || volume.size() != grid.voxel_count())
        throw std::invalid_argument("scatter_patch_add: size mismatch");
    for_each_patch_voxel(grid.extents, signed_corner(spec), spec.flip,
                         [&](std::size_t p, std::size_t v) { volume[v] += patch[p]; });
}

void SamplingConfig::validate() const
{
    if (!(max_shift_mm >= 0.0)) throw ConfigError("max_shift_mm must be non-negative");
    if (!(margin_mm >= 0.0)) throw ConfigError("margin_mm must be non-negative");
    if (!(count_multiplier >= 0.0)) throw ConfigError("count_multiplier must be non-negative");
}

std::size_t SamplingConfig::scaled(std::size_t n) const
{
    return static_cast<std::size_t>(std::lround(double(n) * count_multiplier));
}

double linf_distance(const std::array<double, 3>& a, const std::array<double, 3>& b)
{
    return std::max({std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])});
}

std::vector<PatchSpec> sample_positives(const std::vector<phantom::Annotation>& nodules, const ct::Volume& grid,
                                        const SamplingConfig& config, std::uint64_t seed, SamplingReport* report)
{
    config.validate();
    for (int a = 0; a < 3; ++a)
        if (grid.extents[a] < kPatchExtents[a]) throw DataError("volume is smaller than a patch");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> shift(-config.max_shift_mm, config.max_shift_mm);
    std::bernoulli_distribution coin(0.5);
    std::vector<PatchSpec> out;
    for (const auto& ann : nodules) {
        if (!ann.is_non_small()) continue;
        const auto c = nearest_voxel(grid, ann.center);
        for (std::size_t k = 0; k < config.positives_per_nodule; ++k) {
            std::array<long, 3> moved{};
            for (int a = 0; a < 3; ++a) moved[a] = c[a] + std::lround(shift(rng) / grid.spacing[a]);
            PatchSpec s;
            s.scan_id = ann.scan_id;
            s.label = 1;
            bool clipped = false;
            s.corner = corner_around(grid, moved, &clipped);
            for (auto& f : s.flip) f = coin(rng);
            if (clipped && report) ++report->clipped_positives;
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<std::size_t> edge_voxels(const ct::Volume& mask, std::size_t width)
{
    const std::size_t nx = mask.nx(), ny = mask.ny(), nz = mask.nz(), n = mask.voxel_count();
    // Breadth-first distance (6-neighbour steps) from the non-lung region.
    std::vector<std::size_t> dist(n, std::size_t(-1));
    std::vector<std::size_t> frontier;
    for (std::size_t i = 0; i < n; ++i)
        if (mask.values[i] <= 0.0) {
            dist[i] = 0;
            frontier.push_back(i);
        }
    for (std::size_t step = 1; step <= width && !frontier.empty(); ++step) {
        std::vector<std::size_t> next;
        for (std::size_t i : frontier) {
            const std::size_t x = i % nx, y = (i / nx) % ny, z = i / (nx * ny);
            auto visit = [&](std::size_t j) {
                if (dist[j] == std::size_t(-1)) {
                    dist[j] = step;
                    next.push_back(j);
                }
            };
            if (x > 0) visit(i - 1);
            if (x + 1 < nx) visit(i + 1);
            if (y > 0) visit(i - nx);
            if (y + 1 < ny) visit(i + nx);
            if (z > 0) visit(i - nx * ny);
            if (z + 1 < nz) visit(i + nx * ny);
        }
        frontier = std::move(next);
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
        if (mask.values[i] > 0.0 && dist[i] != std::size_t(-1)) out.push_back(i);
    return out;
}

std::vector<PatchSpec> sample_negatives(const ct::Volume& mask, const std::vector<PatchSpec>& positives,
                                        const std::vector<phantom::Annotation>& nodules,
                                        const std::vector<phantom::Annotation>& non_nodules,
                                        const SamplingConfig& config, std::uint64_t seed, SamplingReport* report)
{
    config.validate();
    for (int a = 0; a < 3; ++a)
        if (mask.extents[a] < kPatchExtents[a]) throw DataError("volume is smaller than a patch");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> shift(-config.max_shift_mm, config.max_shift_mm);

    std::vector<std::array<double, 3>> positive_centers;
    for (const auto& p : positives) positive_centers.push_back(p.center_mm(mask));
    const std::string scan_id = !positives.empty() ? positives.front().scan_id
                                : !nodules.empty() ? nodules.front().scan_id
                                : !non_nodules.empty() ? non_nodules.front().scan_id
                                                       : std::string();

    auto acceptable = [&](const PatchSpec& s) {
        const auto c = s.center_mm(mask);
        for (const auto& pc : positive_centers)
            if (linf_distance(c, pc) < config.margin_mm) return false;
        for (const auto& n : nodules)
            if (s.contains(mask, n.center)) return false;
        return true;
    };

    std::vector<PatchSpec> out;
    auto draw_from = [&](const std::vector<std::size_t>& candidates, std::size_t count) {
        if (report) report->requested_negatives += count;
        if (candidates.empty()) return;
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        std::size_t emitted = 0;
        for (std::size_t attempt = 0; emitted < count && attempt < 50 * count; ++attempt) {
            const std::size_t i = candidates[pick(rng)];
            const std::array<long, 3> v{long(i % mask.nx()), long((i / mask.nx()) % mask.ny()),
                                        long(i / mask.slice_size())};
            PatchSpec s;
            s.scan_id = scan_id;
            s.corner = corner_around(mask, v, nullptr);
            for (auto& f : s.flip) f = coin(rng);
            if (!acceptable(s)) continue;
            out.push_back(std::move(s));
            ++emitted;
        }
    };

    std::vector<std::size_t> lung;
    for (std::size_t i = 0; i < mask.voxel_count(); ++i)
        if (mask.values[i] > 0.0) lung.push_back(i);
    draw_from(lung, config.scaled(config.in_lung));
    draw_from(edge_voxels(mask, config.edge_width), config.scaled(config.edge));

    for (const auto& nn : non_nodules) {
        const auto c = nearest_voxel(mask, nn.center);
        if (report) report->requested_negatives += config.per_non_nodule;
        std::size_t emitted = 0;
        for (std::size_t attempt = 0; emitted < config.per_non_nodule && attempt < 50 * config.per_non_nodule;
             ++attempt) {
            std::array<long, 3> moved{};
            for (int a = 0; a < 3; ++a) moved[a] = c[a] + std::lround(shift(rng) / mask.spacing[a]);
            PatchSpec s;
            s.scan_id = nn.scan_id;
            s.corner = corner_around(mask, moved, nullptr);
            for (auto& f : s.flip) f = coin(rng);
            if (!acceptable(s)) continue;
            out.push_back(std::move(s));
            ++emitted;
        }
    }
    if (report) report->emitted_negatives += out.size();
    return out;
}

ct::Volume lung_mask(const ct::Volume& hu)
{
    if (hu.unit != ct::Unit::hu)
        throw std::invalid_argument(std::string("lung_mask expects an HU volume, got ") + ct::unit_name(hu.unit));
    const std::size_t nx = hu.nx(), ny = hu.ny(), nz = hu.nz(), n = hu.voxel_count();
    constexpr double kThreshold = -400.0;

    // 6-connected labelling of the sub-threshold voxels.
    std::vector<int> label(n, -1);
    std::vector<std::size_t> sizes;
    std::vector<bool> touches_border;
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (label[seed] >= 0 || !(hu.values[seed] < kThreshold)) continue;
        const int id = int(sizes.size());
        sizes.push_back(0);
        touches_border.push_back(false);
        label[seed] = id;
        stack.push_back(seed);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++sizes[id];
            const std::size_t x = i % nx, y = (i / nx) % ny, z = i / (nx * ny);
            if (x == 0 || y == 0 || x + 1 == nx || y + 1 == ny) touches_border[id] = true;
            auto visit = [&](std::size_t j) {
                if (label[j] < 0 && hu.values[j] < kThreshold) {
                    label[j] = id;
                    stack.push_back(j);
                }
            };
            if (x > 0) visit(i - 1);
            if (x + 1 < nx) visit(i + 1);
            if (y > 0) visit(i - nx);
            if (y + 1 < ny) visit(i + nx);
            if (z > 0) visit(i - nx * ny);
            if (z + 1 < nz) visit(i + nx * ny);
        }
    }

    std::vector<int> order;
    for (int id = 0; id < int(sizes.size()); ++id)
        if (!touches_border[id]) order.push_back(id);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a] > sizes[b]; });
    if (order.size() > 2) order.resize(2);

    ct::Volume mask = hu.like(ct::Unit::mask);
    if (order.empty()) {
        std::cerr << "warning: no lung-like component found; lung mask is empty\n";
        return mask;
    }
    for (std::size_t i = 0; i < n; ++i)
        if (label[i] >= 0 && std::find(order.begin(), order.end(), label[i]) != order.end()) mask.values[i] = 1.0;

    // Per-slice hole filling: background reachable from the slice border stays background.
    std::vector<char> outside(nx * ny);
    std::vector<std::size_t> queue;
    for (std::size_t z = 0; z < nz; ++z) {
        double* slice = mask.values.data() + z * nx * ny;
        std::fill(outside.begin(), outside.end(), 0);
        queue.clear();
        auto push = [&](std::size_t j) {
            if (!outside[j] && slice[j] <= 0.0) {
                outside[j] = 1;
                queue.push_back(j);
            }
        };
        for (std::size_t x = 0; x < nx; ++x) {
            push(x);
            push((ny - 1) * nx + x);
        }
        for (std::size_t y = 0; y < ny; ++y) {
            push(y * nx);
            push(y * nx + nx - 1);
        }
        for (std::size_t q = 0; q < queue.size(); ++q) {
            const std::size_t j = queue[q], x = j % nx, y = j / nx;
            if (x > 0) push(j - 1);
            if (x + 1 < nx) push(j + 1);
            if (y > 0) push(j - nx);
            if (y + 1 < ny) push(j + nx);
        }
        for (std::size_t j = 0; j < nx * ny; ++j)
            if (!outside[j]) slice[j] = 1.0;
    }
    return mask;
}

void write_patch_specs(const std::vector<PatchSpec>& specs, const std::filesystem::path& path)
{
    io::write_atomically(path, [&](std::ostream& os) {
        os << "scan_id,corner_x,corner_y,corner_z,flip_x,flip_y,flip_z,label\n";
        for (const auto& s : specs)
            os << s.scan_id << ',' << s.corner[0] << ',' << s.corner[1] << ',' << s.corner[2] << ','
               << int(s.flip[0]) << ',' << int(s.flip[1]) << ',' << int(s.flip[2]) << ',' << s.label << '\n';
    });
}

std::vector<PatchSpec> read_patch_specs(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open patch list " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "scan_id,corner_x,corner_y,corner_z,flip_x,flip_y,flip_z,label")
        throw DataError(path.string() + ":1: missing patch list header");
    std::vector<PatchSpec> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        if (f.size() != 8) throw DataError(where + "expected 8 fields, found " + std::to_string(f.size()));
        auto integer = [&](const std::string& s) {
            std::size_t pos = 0;
            unsigned long v = 0;
            try {
                v = std::stoul(s, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (s.empty() || pos != s.size() || s[0] == '-') throw DataError(where + "malformed integer '" + s + "'");
            return v;
        };
        PatchSpec s;
        s.scan_id = f[0];
        for (int a = 0; a < 3; ++a) s.corner[a] = integer(f[1 + a]);
        for (int a = 0; a < 3; ++a) {
            const auto v = integer(f[4 + a]);
            if (v > 1) throw DataError(where + "flip flags must be 0 or 1");
            s.flip[a] = v == 1;
        }
        const auto l = integer(f[7]);
        if (l > 1) throw DataError(where + "label must be 0 or 1");
        s.label = int(l);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace tomodet::sampling
