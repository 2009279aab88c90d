#include "tomodet/app/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "tomodet/util/error.hpp"

namespace tomodet::app {

using nlohmann::json;

namespace {

// Pulls known keys out of one JSON object and rejects the rest.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + name(key) + "' has the wrong type: " + j_.at(key).dump());
        }
    }

    /// Sub-object, or nullptr when absent.
    const json* child(const char* key)
    {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const
    {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown config key '" + name(k.c_str()) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_adam(Section& s, diff::AdamConfig& a)
{
    s.get("learning_rate", a.learning_rate);
    s.get("beta1", a.beta1);
    s.get("beta2", a.beta2);
    s.get("epsilon", a.epsilon);
}

json adam_json(const diff::AdamConfig& a)
{
    return {{"learning_rate", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}};
}

json noise_json(const std::vector<double>& levels)
{
    json j = json::array();
    for (double n0 : levels) {
        if (std::isinf(n0))
            j.push_back("none");
        else
            j.push_back(n0);
    }
    return j;
}

} // namespace

std::size_t DatasetConfig::validation_count() const
{
    return static_cast<std::size_t>(std::lround(validation_fraction * double(train)));
}

void RunConfig::validate() const
{
    geometry.validate();
    phantom.validate();
    detector.validate();
    sampling.validate();
    if (dataset.train == 0) throw ConfigError("dataset.train must be positive");
    if (!(dataset.validation_fraction >= 0.0 && dataset.validation_fraction < 1.0))
        throw ConfigError("dataset.validation_fraction must lie in [0, 1)");
    if (dataset.validation_count() >= dataset.train)
        throw ConfigError("dataset.validation_fraction leaves no training scans");
    if (recon.iterations == 0 || recon.hidden_channels == 0 || recon.window_stride == 0)
        throw ConfigError("recon.iterations, recon.hidden_channels and recon.window_stride must be positive");
    if (recon.window_stride > recon::kWindowSlices)
        throw ConfigError("recon.window_stride above 3 leaves slices uncovered");
    if (std::abs(geometry.row_height - phantom.spacing[2]) > 1e-9)
        throw ConfigError("geometry.row_height_mm must equal the phantom slice spacing");
    if (phantom.spacing[0] != phantom.spacing[1]) throw ConfigError("phantom in-plane spacing must be isotropic");
    for (int a = 0; a < 3; ++a)
        if (phantom.extents[a] < sampling::kPatchExtents[a])
            throw ConfigError("phantom.extents must hold a 32x32x16 patch");
    if (stage2.minibatch == 0) throw ConfigError("stage2.minibatch must be positive");
    if (stage3.block_slices <= stage3.overlap) throw ConfigError("stage3.block_slices must exceed block_overlap");
    if (stage3.overlap < sampling::kPatchExtents[2])
        throw ConfigError("stage3.overlap must be at least the patch depth (16)");
    if (evaluation.noise_levels.empty()) throw ConfigError("evaluation.noise_levels must not be empty");
    for (double n0 : evaluation.noise_levels)
        if (!(n0 > 0.0)) throw ConfigError("evaluation.noise_levels must be positive or \"none\"");
    if (!(evaluation.step_mm > 0.0)) throw ConfigError("evaluation.step_mm must be positive");
    if (!(evaluation.iou_threshold >= 0.0 && evaluation.iou_threshold <= 1.0))
        throw ConfigError("evaluation.iou_threshold must lie in [0, 1]");
}

RunConfig profile_config(const std::string& name)
{
    RunConfig c;
    c.profile = name;
    if (name == "full") return c;
    if (name != "desk" && name != "tiny") throw ConfigError("unknown profile '" + name + "' (full, desk or tiny)");

    // Desk scale: fewer views, narrower networks, proportionally fewer
    // negatives and a margin that fits a 128 mm wide volume. Nodules start
    // at 6 mm so that they stand apart from vessel branch points, which
    // reach 3.6 mm.
    c.geometry.n_views = 72;
    c.geometry.n_channels = 264;
    c.phantom.nodule_count = {1, 4};
    c.phantom.nodule_diameter = {6.0, 12.0};
    c.recon.iterations = 5;
    c.recon.hidden_channels = 8;
    c.detector.widths = {16, 32, 64};
    c.detector.head_channels = 128;
    c.sampling.count_multiplier = 0.1;
    c.sampling.margin_mm = 24.0;
    c.stage1.samples_per_scan = 50;
    c.evaluation.n_boot = 1000;
    if (name == "tiny") {
        c.dataset.train = 4;
        c.dataset.test = 2;
    }
    return c;
}

RunConfig apply_json(RunConfig c, const json& doc)
{
    Section root(doc, "");
    std::string profile_ignored;
    root.get("profile", profile_ignored);
    root.get("seed", c.seed);
    if (const json* j = root.child("geometry")) {
        Section s(*j, "geometry");
        s.get("n_views", c.geometry.n_views);
        s.get("n_channels", c.geometry.n_channels);
        s.get("channel_arc_width_mm", c.geometry.channel_arc_width);
        s.get("row_height_mm", c.geometry.row_height);
        s.get("source_center_mm", c.geometry.dist_source_center);
        s.get("source_detector_mm", c.geometry.dist_source_detector);
        s.finish();
    }
    if (const json* j = root.child("phantom")) {
        Section s(*j, "phantom");
        s.get("extents", c.phantom.extents);
        s.get("spacing_mm", c.phantom.spacing);
        s.get("nodule_count", c.phantom.nodule_count);
        s.get("nodule_diameter_mm", c.phantom.nodule_diameter);
        s.get("vessels_per_lung", c.phantom.vessels_per_lung);
        s.finish();
    }
    if (const json* j = root.child("dataset")) {
        Section s(*j, "dataset");
        s.get("train", c.dataset.train);
        s.get("test", c.dataset.test);
        s.get("validation_fraction", c.dataset.validation_fraction);
        s.finish();
    }
    if (const json* j = root.child("recon")) {
        Section s(*j, "recon");
        s.get("iterations", c.recon.iterations);
        s.get("hidden_channels", c.recon.hidden_channels);
        s.get("window_stride", c.recon.window_stride);
        std::string window = c.recon.fbp_window == ct::Apodization::hann ? "hann" : "ramlak";
        s.get("fbp_window", window);
        c.recon.fbp_window = ct::parse_apodization(window);
        s.finish();
    }
    if (const json* j = root.child("detector")) {
        Section s(*j, "detector");
        s.get("widths", c.detector.widths);
        s.get("head_channels", c.detector.head_channels);
        s.finish();
    }
    if (const json* j = root.child("sampling")) {
        Section s(*j, "sampling");
        s.get("positives_per_nodule", c.sampling.positives_per_nodule);
        s.get("max_shift_mm", c.sampling.max_shift_mm);
        s.get("in_lung", c.sampling.in_lung);
        s.get("edge", c.sampling.edge);
        s.get("per_non_nodule", c.sampling.per_non_nodule);
        s.get("margin_mm", c.sampling.margin_mm);
        s.get("edge_width", c.sampling.edge_width);
        s.get("count_multiplier", c.sampling.count_multiplier);
        s.finish();
    }
    if (const json* j = root.child("stage1")) {
        Section s(*j, "stage1");
        s.get("epochs", c.stage1.epochs);
        s.get("samples_per_scan", c.stage1.samples_per_scan);
        read_adam(s, c.stage1.adam);
        s.finish();
    }
    if (const json* j = root.child("stage2")) {
        Section s(*j, "stage2");
        s.get("epochs", c.stage2.epochs);
        s.get("minibatch", c.stage2.minibatch);
        read_adam(s, c.stage2.adam);
        s.finish();
    }
    if (const json* j = root.child("stage3")) {
        Section s(*j, "stage3");
        s.get("epochs", c.stage3.epochs);
        s.get("block_slices", c.stage3.block_slices);
        s.get("block_overlap", c.stage3.overlap);
        read_adam(s, c.stage3.adam);
        s.finish();
    }
    if (const json* j = root.child("evaluation")) {
        Section s(*j, "evaluation");
        if (const json* levels = s.child("noise_levels")) {
            if (!levels->is_array()) throw ConfigError("config key 'evaluation.noise_levels' must be an array");
            c.evaluation.noise_levels.clear();
            for (const auto& v : *levels) {
                if (v.is_string())
                    c.evaluation.noise_levels.push_back(eval::parse_noise(v.get<std::string>()));
                else if (v.is_number())
                    c.evaluation.noise_levels.push_back(v.get<double>());
                else
                    throw ConfigError("evaluation.noise_levels entries must be numbers or \"none\"");
            }
        }
        s.get("step_mm", c.evaluation.step_mm);
        s.get("iou_threshold", c.evaluation.iou_threshold);
        s.get("n_boot", c.evaluation.n_boot);
        s.finish();
    }
    root.finish();
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::string& fallback_profile)
{
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config " + path.string() + " must be a JSON object");
    std::string profile = fallback_profile;
    if (doc.contains("profile")) {
        if (!doc["profile"].is_string()) throw ConfigError("config key 'profile' must be a string");
        profile = doc["profile"].get<std::string>();
    }
    return apply_json(profile_config(profile), doc);
}

json to_json(const RunConfig& c)
{
    const auto& g = c.geometry;
    const auto& p = c.phantom;
    const auto& s = c.sampling;
    json stage1 = adam_json(c.stage1.adam);
    stage1["epochs"] = c.stage1.epochs;
    stage1["samples_per_scan"] = c.stage1.samples_per_scan;
    json stage2 = adam_json(c.stage2.adam);
    stage2["epochs"] = c.stage2.epochs;
    stage2["minibatch"] = c.stage2.minibatch;
    json stage3 = adam_json(c.stage3.adam);
    stage3["epochs"] = c.stage3.epochs;
    stage3["block_slices"] = c.stage3.block_slices;
    stage3["block_overlap"] = c.stage3.overlap;
    return {
        {"profile", c.profile},
        {"seed", c.seed},
        {"geometry",
         {{"n_views", g.n_views},
          {"n_channels", g.n_channels},
          {"channel_arc_width_mm", g.channel_arc_width},
          {"row_height_mm", g.row_height},
          {"source_center_mm", g.dist_source_center},
          {"source_detector_mm", g.dist_source_detector}}},
        {"phantom",
         {{"extents", p.extents},
          {"spacing_mm", p.spacing},
          {"nodule_count", p.nodule_count},
          {"nodule_diameter_mm", p.nodule_diameter},
          {"vessels_per_lung", p.vessels_per_lung}}},
        {"dataset",
         {{"train", c.dataset.train},
          {"test", c.dataset.test},
          {"validation_fraction", c.dataset.validation_fraction}}},
        {"recon",
         {{"iterations", c.recon.iterations},
          {"hidden_channels", c.recon.hidden_channels},
          {"window_stride", c.recon.window_stride},
          {"fbp_window", c.recon.fbp_window == ct::Apodization::hann ? "hann" : "ramlak"}}},
        {"detector", {{"widths", c.detector.widths}, {"head_channels", c.detector.head_channels}}},
        {"sampling",
         {{"positives_per_nodule", s.positives_per_nodule},
          {"max_shift_mm", s.max_shift_mm},
          {"in_lung", s.in_lung},
          {"edge", s.edge},
          {"per_non_nodule", s.per_non_nodule},
          {"margin_mm", s.margin_mm},
          {"edge_width", s.edge_width},
          {"count_multiplier", s.count_multiplier}}},
        {"stage1", stage1},
        {"stage2", stage2},
        {"stage3", stage3},
        {"evaluation",
         {{"noise_levels", noise_json(c.evaluation.noise_levels)},
          {"step_mm", c.evaluation.step_mm},
          {"iou_threshold", c.evaluation.iou_threshold},
          {"n_boot", c.evaluation.n_boot}}},
    };
}

} // namespace tomodet::app
