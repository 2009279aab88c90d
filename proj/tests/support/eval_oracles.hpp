#pragma once

// Brute-force reference implementations for NMS and the FROC sweep, plus a
// random micro-case generator. Shared by the unit tests and the acceptance
// binary.

#include <algorithm>
#include <array>
#include <random>
#include <set>
#include <vector>

#include "tomodet/eval/froc.hpp"

namespace testing {

using tomodet::eval::Detection;
using tomodet::eval::FrocPoint;
using tomodet::phantom::Annotation;

inline double oracle_iou(const Detection& a, const Detection& b)
{
    // Overlap volume from the box corners, one axis at a time.
    double inter = 1.0;
    for (int k = 0; k < 3; ++k) {
        const double a0 = a.center[k] - a.extent[k] / 2, a1 = a.center[k] + a.extent[k] / 2;
        const double b0 = b.center[k] - b.extent[k] / 2, b1 = b.center[k] + b.extent[k] / 2;
        const double lo = a0 > b0 ? a0 : b0, hi = a1 < b1 ? a1 : b1;
        inter *= hi > lo ? hi - lo : 0.0;
    }
    const double va = a.extent[0] * a.extent[1] * a.extent[2], vb = b.extent[0] * b.extent[1] * b.extent[2];
    return inter / (va + vb - inter);
}

inline bool oracle_contains(const Detection& d, const std::array<double, 3>& p)
{
    for (int k = 0; k < 3; ++k)
        if (!(d.center[k] - d.extent[k] / 2 <= p[k] && p[k] < d.center[k] + d.extent[k] / 2)) return false;
    return true;
}

/// Repeatedly takes the best remaining box (lowest index on ties) and
/// deletes every remaining box of the same scan that overlaps it too much.
inline std::vector<Detection> oracle_nms(const std::vector<Detection>& dets, double threshold)
{
    std::vector<bool> alive(dets.size(), true);
    std::vector<Detection> kept;
    while (true) {
        std::size_t best = dets.size();
        for (std::size_t i = 0; i < dets.size(); ++i)
            if (alive[i] && (best == dets.size() || dets[i].score > dets[best].score)) best = i;
        if (best == dets.size()) break;
        kept.push_back(dets[best]);
        alive[best] = false;
        for (std::size_t i = 0; i < dets.size(); ++i)
            if (alive[i] && dets[i].scan_id == dets[best].scan_id && oracle_iou(dets[i], dets[best]) > threshold)
                alive[i] = false;
    }
    return kept;
}

/// For every distinct score t, rebuilds the matching from scratch over the
/// detections scoring at least t and counts hits and misses.
inline std::vector<FrocPoint> oracle_froc(const std::vector<std::vector<Detection>>& dets,
                                          const std::vector<std::vector<Annotation>>& anns)
{
    std::set<double, std::greater<>> thresholds;
    for (const auto& scan : dets)
        for (const auto& d : scan) thresholds.insert(d.score);
    std::size_t total = 0;
    for (const auto& a : anns) total += a.size();

    std::vector<FrocPoint> out{{0.0, 0.0}};
    for (double t : thresholds) {
        struct Item {
            double score;
            std::size_t scan, index;
        };
        std::vector<Item> items;
        for (std::size_t s = 0; s < dets.size(); ++s)
            for (std::size_t i = 0; i < dets[s].size(); ++i)
                if (dets[s][i].score >= t) items.push_back({dets[s][i].score, s, i});
        std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
            return a.score != b.score ? a.score > b.score : a.scan != b.scan ? a.scan < b.scan : a.index < b.index;
        });
        std::vector<std::vector<bool>> used(anns.size());
        for (std::size_t s = 0; s < anns.size(); ++s) used[s].assign(anns[s].size(), false);
        std::size_t hits = 0, misses = 0;
        for (const auto& it : items) {
            const Detection& d = dets[it.scan][it.index];
            std::size_t pick = anns[it.scan].size();
            double pick_d = 0.0;
            for (std::size_t a = 0; a < anns[it.scan].size(); ++a) {
                if (used[it.scan][a] || !oracle_contains(d, anns[it.scan][a].center)) continue;
                double dd = 0.0;
                for (int k = 0; k < 3; ++k) dd += (anns[it.scan][a].center[k] - d.center[k]) *
                                                  (anns[it.scan][a].center[k] - d.center[k]);
                if (pick == anns[it.scan].size() || dd < pick_d) {
                    pick = a;
                    pick_d = dd;
                }
            }
            if (pick < anns[it.scan].size()) {
                used[it.scan][pick] = true;
                ++hits;
            } else {
                ++misses;
            }
        }
        out.push_back({double(misses) / double(dets.size()), double(hits) / double(total)});
    }
    return out;
}

struct MicroCase {
    std::vector<Detection> flat;
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<Annotation>> anns;
};

/// 1-5 scans inside a 64 mm cube with a few nodules each (at least one
/// overall) and up to 12 boxes per scan, half of them near a nodule. Scores
/// are quantised to tenths so ties occur.
inline MicroCase random_micro_case(std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> n_scans(1, 5), n_anns(0, 3), n_dets(0, 12), coin(0, 1), tenth(1, 9);
    std::uniform_real_distribution<double> pos(0.0, 64.0), jitter(-10.0, 10.0), size(8.0, 32.0);
    MicroCase c;
    const int scans = n_scans(rng);
    c.dets.resize(scans);
    c.anns.resize(scans);
    std::size_t total = 0;
    for (int s = 0; s < scans; ++s) {
        const std::string id = "scan" + std::to_string(s);
        const int na = n_anns(rng);
        for (int a = 0; a < na; ++a) c.anns[s].push_back({id, {pos(rng), pos(rng), pos(rng)}, 6.0});
        total += c.anns[s].size();
        const int nd = n_dets(rng);
        for (int d = 0; d < nd; ++d) {
            Detection det;
            det.scan_id = id;
            if (!c.anns[s].empty() && coin(rng)) {
                const auto& a = c.anns[s][std::uniform_int_distribution<std::size_t>(0, c.anns[s].size() - 1)(rng)];
                for (int k = 0; k < 3; ++k) det.center[k] = a.center[k] + jitter(rng);
            } else {
                for (int k = 0; k < 3; ++k) det.center[k] = pos(rng);
            }
            const double e = size(rng);
            det.extent = {e, e, e / 2};
            det.score = tenth(rng) / 10.0;
            c.dets[s].push_back(det);
            c.flat.push_back(det);
        }
    }
    if (total == 0) c.anns[0].push_back({"scan0", {pos(rng), pos(rng), pos(rng)}, 6.0});
    return c;
}

inline bool same_points(const std::vector<FrocPoint>& a, const std::vector<FrocPoint>& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].fp_per_scan != b[i].fp_per_scan || a[i].sensitivity != b[i].sensitivity) return false;
    return true;
}

inline bool same_boxes(const std::vector<Detection>& a, const std::vector<Detection>& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].scan_id != b[i].scan_id || a[i].center != b[i].center || a[i].extent != b[i].extent ||
            a[i].score != b[i].score)
            return false;
    return true;
}

} // namespace testing
