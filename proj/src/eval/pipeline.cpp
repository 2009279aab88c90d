#include "tomodet/eval/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <algorithm>
#include <map>
#include <optional>

#include "tomodet/ct/noise.hpp"
#include "tomodet/sampling/patches.hpp"
#include "tomodet/util/binary_io.hpp"
#include "tomodet/util/error.hpp"

namespace tomodet::eval {

const char* variant_name(Variant v)
{
    switch (v) {
    case Variant::reference: return "reference";
    case Variant::fbp: return "fbp";
    case Variant::two_step: return "two-step";
    case Variant::end_to_end: return "end-to-end";
    }
    return "?";
}

Variant parse_variant(const std::string& name)
{
    for (Variant v : kAllVariants)
        if (name == variant_name(v)) return v;
    throw ConfigError("unknown pipeline variant '" + name + "' (expected reference, fbp, two-step or end-to-end)");
}

std::string noise_label(double n0)
{
    if (std::isinf(n0)) return "none";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", n0);
    std::string s = buf;
    // 1e+05 -> 1e5
    if (auto e = s.find("e+"); e != std::string::npos) {
        std::string exp = s.substr(e + 2);
        while (exp.size() > 1 && exp[0] == '0') exp.erase(0, 1);
        s = s.substr(0, e) + "e" + exp;
    }
    return s;
}

double parse_noise(const std::string& text)
{
    if (text == "none") return ct::kNoiseless;
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (text.empty() || *end != '\0' || !(v > 0.0) || !std::isfinite(v))
        throw ConfigError("noise level must be 'none' or a positive photon count, got '" + text + "'");
    return v;
}

void require_models(Variant v, const EvalModels& m)
{
    auto need = [&](bool ok, const char* what) {
        if (!ok) throw ConfigError(std::string("variant ") + variant_name(v) + " requires " + what);
    };
    switch (v) {
    case Variant::reference: need(m.eta_reference, "the stage2-reference checkpoint"); break;
    case Variant::fbp: need(m.eta_fbp, "the stage2-fbp checkpoint"); break;
    case Variant::two_step:
        need(m.net && m.theta_stage1, "the stage1 checkpoint");
        need(m.eta_stage2, "the stage2 checkpoint");
        break;
    case Variant::end_to_end: need(m.net && m.theta_stage3 && m.eta_stage3, "the stage3 checkpoint"); break;
    }
}

const diff::ParamSet& detector_for(Variant v, const EvalModels& m)
{
    require_models(v, m);
    switch (v) {
    case Variant::reference: return *m.eta_reference;
    case Variant::fbp: return *m.eta_fbp;
    case Variant::two_step: return *m.eta_stage2;
    case Variant::end_to_end: return *m.eta_stage3;
    }
    throw std::logic_error("unreachable");
}

ct::Sinogram test_sinogram(const ct::Sinogram& clean, double n0, std::uint64_t base_seed, std::size_t scan_index)
{
    if (std::isinf(n0)) return clean;
    const std::uint64_t seed = base_seed * 0x9E3779B97F4A7C15ull + scan_index * 1000003ull +
                               static_cast<std::uint64_t>(std::llround(n0));
    return ct::add_poisson_noise(clean, n0, seed);
}

ct::Volume variant_image(Variant v, const EvalScan& scan, const ct::Sinogram& sino, const EvalModels& models,
                         ct::Apodization window)
{
    require_models(v, models);
    switch (v) {
    case Variant::reference: return *scan.truth_hu;
    case Variant::fbp: return ct::fbp(sino, *scan.truth_hu, window);
    case Variant::two_step: return recon::reconstruct_volume(*models.net, sino, *models.theta_stage1, *scan.truth_hu);
    case Variant::end_to_end:
        return recon::reconstruct_volume(*models.net, sino, *models.theta_stage3, *scan.truth_hu);
    }
    throw std::logic_error("unreachable");
}

ct::Volume evaluation_mask(Variant v, const EvalScan& scan, const ct::Sinogram& sino, ct::Apodization window)
{
    if (v == Variant::reference) return sampling::lung_mask(*scan.truth_hu);
    return sampling::lung_mask(ct::mu_to_hu(ct::fbp(sino, *scan.truth_hu, window)));
}

std::vector<EvalCell> run_pipeline(const std::vector<EvalScan>& scans, const EvalModels& models,
                                   const EvalConfig& config, const std::function<void(const std::string&)>& log)
{
    for (Variant v : config.variants) require_models(v, models);
    std::vector<std::vector<phantom::Annotation>> truth;
    for (const auto& s : scans) truth.push_back(s.nodules);

    std::vector<EvalCell> cells;
    for (double n0 : config.noise_levels) {
        const std::size_t first = cells.size();
        for (Variant v : config.variants) {
            EvalCell c;
            c.variant = v;
            c.n0 = n0;
            c.detections.resize(scans.size());
            cells.push_back(std::move(c));
        }
        for (std::size_t s = 0; s < scans.size(); ++s) {
            const ct::Sinogram sino = test_sinogram(*scans[s].sinogram, n0, config.noise_seed, s);
            // The FBP-derived mask is shared by every sinogram-based variant.
            std::optional<ct::Volume> fbp_mask;
            for (std::size_t k = 0; k < config.variants.size(); ++k) {
                const Variant v = config.variants[k];
                const ct::Volume image = variant_image(v, scans[s], sino, models, config.window);
                ct::Volume mask;
                if (v == Variant::reference) {
                    mask = evaluation_mask(v, scans[s], sino, config.window);
                } else {
                    if (!fbp_mask) fbp_mask = evaluation_mask(v, scans[s], sino, config.window);
                    mask = *fbp_mask;
                }
                auto raw = sliding_window_detect(image, mask, detector_for(v, models), models.detector, scans[s].id,
                                                 config.step_mm);
                cells[first + k].detections[s] = nms(raw, config.iou_threshold);
                if (log)
                    log("noise " + noise_label(n0) + " " + variant_name(v) + " scan " + scans[s].id + ": " +
                        std::to_string(raw.size()) + " windows, " +
                        std::to_string(cells[first + k].detections[s].size()) + " after NMS");
            }
        }
        for (std::size_t k = 0; k < config.variants.size(); ++k)
            cells[first + k].curve = froc(cells[first + k].detections, truth, config.n_boot, config.boot_seed);
    }
    return cells;
}

void write_score_grid(const std::vector<EvalCell>& cells, const std::filesystem::path& path)
{
    std::vector<Variant> variants;
    std::vector<double> levels;
    std::map<std::pair<double, int>, double> score;
    for (const auto& c : cells) {
        if (std::find(variants.begin(), variants.end(), c.variant) == variants.end()) variants.push_back(c.variant);
        if (std::find(levels.begin(), levels.end(), c.n0) == levels.end()) levels.push_back(c.n0);
        score[{c.n0, int(c.variant)}] = c.curve.mean_froc;
    }
    io::write_atomically(path, [&](std::ostream& os) {
        os << "noise";
        for (Variant v : variants) os << ',' << variant_name(v);
        os << '\n';
        os.precision(6);
        for (double n0 : levels) {
            os << noise_label(n0);
            for (Variant v : variants) {
                auto it = score.find({n0, int(v)});
                os << ',';
                if (it != score.end()) os << it->second;
            }
            os << '\n';
        }
    });
}

} // namespace tomodet::eval
