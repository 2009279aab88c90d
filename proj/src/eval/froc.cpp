#include "tomodet/eval/froc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "tomodet/util/binary_io.hpp"
#include "tomodet/util/error.hpp"

namespace tomodet::eval {

namespace {

double dist2(const std::array<double, 3>& a, const std::array<double, 3>& b)
{
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

// Linear-interpolated quantile of sorted values.
double quantile(const std::vector<double>& sorted, double q)
{
    if (sorted.empty()) return 0.0;
    const double pos = q * double(sorted.size() - 1);
    const std::size_t lo = std::size_t(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

} // namespace

std::vector<FrocPoint> froc_points(const std::vector<std::vector<Detection>>& dets,
                                   const std::vector<std::vector<phantom::Annotation>>& annotations)
{
    if (dets.size() != annotations.size()) throw std::invalid_argument("froc: detection/annotation scan counts differ");
    if (dets.empty()) throw DataError("froc needs at least one scan");
    std::size_t total = 0;
    for (const auto& a : annotations) total += a.size();
    if (total == 0) throw DataError("froc: no annotations, sensitivity is undefined");

    struct Ref {
        double score;
        std::size_t scan, index;
    };
    std::vector<Ref> refs;
    for (std::size_t s = 0; s < dets.size(); ++s)
        for (std::size_t i = 0; i < dets[s].size(); ++i) {
            if (!std::isfinite(dets[s][i].score)) throw DataError("froc: non-finite detection score");
            refs.push_back({dets[s][i].score, s, i});
        }
    std::sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.scan != b.scan) return a.scan < b.scan;
        return a.index < b.index;
    });

    std::vector<std::vector<char>> matched(annotations.size());
    for (std::size_t s = 0; s < annotations.size(); ++s) matched[s].assign(annotations[s].size(), 0);
    const double n_scans = double(dets.size());
    std::vector<FrocPoint> points{{0.0, 0.0}};
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const Detection& d = dets[refs[i].scan][refs[i].index];
        const auto& anns = annotations[refs[i].scan];
        std::size_t best = anns.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < anns.size(); ++a) {
            if (matched[refs[i].scan][a] || !d.contains(anns[a].center)) continue;
            const double dd = dist2(anns[a].center, d.center);
            if (dd < best_d) {
                best_d = dd;
                best = a;
            }
        }
        if (best < anns.size()) {
            matched[refs[i].scan][best] = 1;
            ++tp;
        } else {
            ++fp;
        }
        if (i + 1 == refs.size() || refs[i + 1].score != refs[i].score)
            points.push_back({double(fp) / n_scans, double(tp) / double(total)});
    }
    return points;
}

double sensitivity_at(const std::vector<FrocPoint>& points, double fp_per_scan)
{
    double s = 0.0;
    for (const auto& p : points)
        if (p.fp_per_scan <= fp_per_scan) s = std::max(s, p.sensitivity);
    return s;
}

double mean_froc(const std::vector<FrocPoint>& points)
{
    double s = 0.0;
    for (double a : kFrocAbscissae) s += sensitivity_at(points, a);
    return s / double(kFrocAbscissae.size());
}

FrocCurve froc(const std::vector<std::vector<Detection>>& dets,
               const std::vector<std::vector<phantom::Annotation>>& annotations, std::size_t n_boot,
               std::uint64_t seed)
{
    FrocCurve curve;
    curve.points = froc_points(dets, annotations);
    curve.mean_froc = mean_froc(curve.points);
    const std::size_t np = curve.points.size();
    curve.boot_mean.assign(np, 0.0);
    curve.lo95.assign(np, 0.0);
    curve.hi95.assign(np, 0.0);
    if (n_boot == 0) {
        for (std::size_t i = 0; i < np; ++i)
            curve.boot_mean[i] = curve.lo95[i] = curve.hi95[i] = curve.points[i].sensitivity;
        curve.boot_mean_froc = curve.mean_froc;
        return curve;
    }

    std::mt19937_64 rng(seed);
    const std::size_t n = dets.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::vector<double>> samples(np, std::vector<double>(n_boot));
    double froc_sum = 0.0;
    std::vector<std::vector<Detection>> bd(n);
    std::vector<std::vector<phantom::Annotation>> ba(n);
    for (std::size_t b = 0; b < n_boot; ++b) {
        std::size_t total = 0;
        do {
            total = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t s = pick(rng);
                bd[k] = dets[s];
                ba[k] = annotations[s];
                total += ba[k].size();
            }
        } while (total == 0);
        const auto pts = froc_points(bd, ba);
        froc_sum += mean_froc(pts);
        for (std::size_t i = 0; i < np; ++i) samples[i][b] = sensitivity_at(pts, curve.points[i].fp_per_scan);
    }
    curve.boot_mean_froc = froc_sum / double(n_boot);
    for (std::size_t i = 0; i < np; ++i) {
        auto& v = samples[i];
        curve.boot_mean[i] = std::accumulate(v.begin(), v.end(), 0.0) / double(n_boot);
        std::sort(v.begin(), v.end());
        curve.lo95[i] = quantile(v, 0.025);
        curve.hi95[i] = quantile(v, 0.975);
    }
    return curve;
}

void write_froc(const FrocCurve& curve, const std::filesystem::path& path)
{
    io::write_atomically(path, [&](std::ostream& os) {
        os << "fp_per_scan,sensitivity,lo95,hi95\n";
        os.precision(9);
        for (std::size_t i = 0; i < curve.points.size(); ++i)
            os << curve.points[i].fp_per_scan << ',' << curve.points[i].sensitivity << ',' << curve.lo95[i] << ','
               << curve.hi95[i] << '\n';
    });
}

Cnr cnr(const ct::Volume& vol, const std::array<double, 3>& roi_center, double roi_radius,
        const std::array<double, 3>& bg_center, double bg_radius)
{
    auto disc = [&](const std::array<double, 3>& c, double r) {
        const long z = std::lround(vol.voxel_coord(2, c[2]));
        if (z < 0 || z >= long(vol.nz())) throw DataError("CNR region lies outside the volume");
        std::vector<double> out;
        for (std::size_t y = 0; y < vol.ny(); ++y)
            for (std::size_t x = 0; x < vol.nx(); ++x) {
                const double dx = vol.position(0, double(x)) - c[0], dy = vol.position(1, double(y)) - c[1];
                if (dx * dx + dy * dy <= r * r) out.push_back(vol.at(x, y, std::size_t(z)));
            }
        if (out.empty()) throw DataError("CNR region contains no voxels");
        return out;
    };
    const auto roi = disc(roi_center, roi_radius);
    const auto bg = disc(bg_center, bg_radius);
    const double mr = std::accumulate(roi.begin(), roi.end(), 0.0) / double(roi.size());
    const double mb = std::accumulate(bg.begin(), bg.end(), 0.0) / double(bg.size());
    double var = 0.0;
    for (double v : bg) var += (v - mb) * (v - mb);
    var /= double(bg.size());
    Cnr out;
    if (var == 0.0) {
        out.infinite = true;
        out.value = mr > mb ? std::numeric_limits<double>::infinity()
                    : mr < mb ? -std::numeric_limits<double>::infinity()
                              : std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    out.value = (mr - mb) / std::sqrt(var);
    return out;
}

} // namespace tomodet::eval
