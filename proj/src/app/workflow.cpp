#include "tomodet/app/workflow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "tomodet/app/svg.hpp"
#include "tomodet/ct/noise.hpp"
#include "tomodet/ct/projector.hpp"
#include "tomodet/util/binary_io.hpp"
#include "tomodet/util/error.hpp"
#include "tomodet/util/parallel.hpp"

namespace tomodet::app {

namespace fs = std::filesystem;
using nlohmann::json;
using phantom::ScanRecord;

std::filesystem::path Workspace::detections(eval::Variant v, double n0) const
{
    return root / "detections" / (std::string(eval::variant_name(v)) + "_" + eval::noise_label(n0) + ".csv");
}

std::filesystem::path Workspace::froc(eval::Variant v, double n0) const
{
    return root / "eval" / ("froc_" + std::string(eval::variant_name(v)) + "_" + eval::noise_label(n0) + ".csv");
}

std::uint64_t derive_seed(std::uint64_t base, const std::string& purpose, std::uint64_t index)
{
    // FNV-1a over the purpose, mixed with splitmix64.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : purpose) h = (h ^ c) * 1099511628211ull;
    std::uint64_t z = base ^ h ^ (index * 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

void echo_config(const RunConfig& config, const Workspace& ws, const std::string& command)
{
    const std::string text = to_json(config).dump(2) + "\n";
    io::write_atomically(ws.config_echo(command), [&](std::ostream& os) { os << text; });
}

namespace {

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_json(const fs::path& path, const json& j)
{
    const std::string text = j.dump(2) + "\n";
    io::write_atomically(path, [&](std::ostream& os) { os << text; });
}

std::vector<ScanRecord> load_manifest(const Workspace& ws)
{
    if (!fs::exists(ws.manifest()))
        throw DataError("no manifest at " + ws.manifest().string() + "; run the phantom command first");
    return phantom::read_manifest(ws.manifest());
}

std::vector<ScanRecord> with_split(const std::vector<ScanRecord>& all, const std::string& split)
{
    std::vector<ScanRecord> out;
    for (const auto& s : all)
        if (s.split == split) out.push_back(s);
    return out;
}

fs::path resolve(const Workspace& ws, const std::string& rel)
{
    if (rel.empty()) throw DataError("manifest entry has an empty path");
    return ws.root / rel;
}

ct::Sinogram load_sinogram(const Workspace& ws, const ScanRecord& s, const ct::FanbeamGeometry& geometry)
{
    const fs::path p = resolve(ws, s.sinogram);
    if (!fs::exists(p)) throw DataError("missing sinogram " + p.string() + "; run the project command first");
    auto sino = ct::read_sinogram(p);
    if (!(sino.geometry == geometry))
        throw DataError("sinogram " + p.string() + " was made with a different geometry than the config");
    return sino;
}

fs::path fbp_volume_path(const Workspace& ws, const std::string& id) { return ws.fbp_dir() / (id + ".vol"); }
fs::path fbp_mask_path(const Workspace& ws, const std::string& id) { return ws.fbp_dir() / (id + ".mask.vol"); }

ct::Volume load_existing_volume(const fs::path& p, const char* hint)
{
    if (!fs::exists(p)) throw DataError("missing " + p.string() + "; run the " + hint + " command first");
    return ct::read_volume(p);
}

std::vector<phantom::Annotation> non_small(const std::vector<phantom::Annotation>& in)
{
    std::vector<phantom::Annotation> out;
    for (const auto& a : in)
        if (a.is_non_small()) out.push_back(a);
    return out;
}

ct::SliceGrid grid_of(const RunConfig& c)
{
    const auto v = ct::Volume::centered(c.phantom.extents, c.phantom.spacing, ct::Unit::mu);
    return ct::SliceGrid::of(v);
}

diff::ParamSet load_theta(const RunConfig& c, const std::map<std::string, diff::CheckpointEntry>& ckpt)
{
    auto theta = recon::make_recon_params(c.recon, 0);
    diff::load_into(ckpt, theta);
    return theta;
}

diff::ParamSet load_eta(const RunConfig& c, const std::map<std::string, diff::CheckpointEntry>& ckpt)
{
    auto eta = detect::make_detector_params(c.detector, 0);
    diff::load_into(ckpt, eta);
    return eta;
}

std::map<std::string, diff::CheckpointEntry> read_stage_checkpoint(const Workspace& ws, const std::string& name,
                                                                   const char* command)
{
    const fs::path p = ws.checkpoint(name);
    if (!fs::exists(p))
        throw DataError("missing checkpoint " + p.string() + "; run the " + command + " command first");
    return diff::read_checkpoint(p);
}

std::string stage2_checkpoint_name(eval::Variant v)
{
    switch (v) {
    case eval::Variant::reference: return "stage2-reference";
    case eval::Variant::fbp: return "stage2-fbp";
    case eval::Variant::two_step: return "stage2";
    case eval::Variant::end_to_end: break;
    }
    throw ConfigError("end-to-end has no stage-2 detector; use the finetune command");
}

// Training patches for one scan.
std::vector<sampling::PatchSpec> scan_patches(const RunConfig& c, const ct::Volume& mask,
                                              const std::vector<phantom::Annotation>& nodules,
                                              const std::vector<phantom::Annotation>& non_nodules,
                                              std::size_t scan_index, sampling::SamplingReport& report)
{
    const auto targets = non_small(nodules);
    auto pos = sampling::sample_positives(targets, mask, c.sampling, derive_seed(c.seed, "positives", scan_index),
                                          &report);
    auto neg = sampling::sample_negatives(mask, pos, targets, non_nodules, c.sampling,
                                          derive_seed(c.seed, "negatives", scan_index), &report);
    // Contamination guard: the margin must hold on every generated dataset.
    for (const auto& n : neg)
        for (const auto& p : pos)
            if (sampling::linf_distance(n.center_mm(mask), p.center_mm(mask)) < c.sampling.margin_mm)
                throw std::logic_error("negative patch within the safety margin of a positive");
    pos.insert(pos.end(), neg.begin(), neg.end());
    return pos;
}

struct PatchSet {
    std::vector<ScanRecord> scans;
    std::vector<std::vector<sampling::PatchSpec>> specs; // per scan
};

// Patch specs for a split, from the FBP-derived lung masks.
PatchSet build_patch_set(const RunConfig& c, const Workspace& ws, const std::vector<ScanRecord>& scans,
                         std::size_t index_offset, const std::string& label)
{
    PatchSet set;
    set.scans = scans;
    set.specs.resize(scans.size());
    std::vector<sampling::SamplingReport> reports(scans.size());
    parallel_for(scans.size(), [&](std::size_t i) {
        const auto mask = load_existing_volume(fbp_mask_path(ws, scans[i].id), "fbp");
        const auto nodules = phantom::read_annotations(resolve(ws, scans[i].annotations));
        const auto nn = phantom::read_annotations(resolve(ws, scans[i].non_nodules));
        set.specs[i] = scan_patches(c, mask, nodules, nn, index_offset + i, reports[i]);
    });
    std::size_t pos = 0, neg = 0, clipped = 0, requested = 0;
    for (std::size_t i = 0; i < scans.size(); ++i) {
        for (const auto& s : set.specs[i]) (s.label ? pos : neg)++;
        clipped += reports[i].clipped_positives;
        requested += reports[i].requested_negatives;
    }
    log_line("[patches] " + label + ": " + std::to_string(pos) + " positive, " + std::to_string(neg) + " negative (" +
             std::to_string(requested) + " negatives requested, " + std::to_string(clipped) +
             " positives clipped at the volume edge)");
    return set;
}

std::vector<sampling::PatchSpec> flatten(const PatchSet& set)
{
    std::vector<sampling::PatchSpec> all;
    for (const auto& s : set.specs) all.insert(all.end(), s.begin(), s.end());
    return all;
}

// Balanced held-out set: every positive plus as many negatives, drawn with a fixed seed.
std::vector<train::DetectorSample> balanced(const std::vector<train::DetectorSample>& samples, std::uint64_t seed)
{
    std::vector<train::DetectorSample> pos, neg;
    for (const auto& s : samples) (s.spec.label ? pos : neg).push_back(s);
    std::mt19937_64 rng(seed);
    std::shuffle(neg.begin(), neg.end(), rng);
    std::shuffle(pos.begin(), pos.end(), rng);
    const std::size_t n = std::min(pos.size(), neg.size());
    std::vector<train::DetectorSample> out(pos.begin(), pos.begin() + n);
    out.insert(out.end(), neg.begin(), neg.begin() + n);
    return out;
}

} // namespace

void run_phantom(const RunConfig& c, const Workspace& ws)
{
    const std::size_t n_val = c.dataset.validation_count();
    const std::size_t n_train = c.dataset.train - n_val;
    const std::size_t total = c.dataset.train + c.dataset.test;
    std::vector<ScanRecord> records(total);
    std::vector<std::string> notes(total);
    parallel_for(total, [&](std::size_t i) {
        char id[32];
        std::snprintf(id, sizeof id, "scan%03zu", i);
        phantom::PhantomSpec spec = c.phantom;
        spec.seed = derive_seed(c.seed, "phantom", i);
        const auto ph = phantom::generate_phantom(spec, id);
        ScanRecord& r = records[i];
        r.id = id;
        r.split = i < n_train ? "train" : i < c.dataset.train ? "val" : "test";
        r.volume = "scans/" + r.id + ".vol";
        r.mask = "scans/" + r.id + ".mask.vol";
        r.annotations = "scans/" + r.id + ".nodules.csv";
        r.non_nodules = "scans/" + r.id + ".non_nodules.csv";
        r.sinogram = "scans/" + r.id + ".sino";
        ct::write_volume(ph.hu, ws.root / r.volume);
        ct::write_volume(ph.lung_mask, ws.root / r.mask);
        phantom::write_annotations(ph.nodules, ws.root / r.annotations);
        phantom::write_annotations(ph.non_nodules, ws.root / r.non_nodules);
        if (ph.nodules.size() < ph.requested_nodules)
            notes[i] = std::string(id) + ": placed " + std::to_string(ph.nodules.size()) + " of " +
                       std::to_string(ph.requested_nodules) + " requested nodules";
    });
    for (const auto& n : notes)
        if (!n.empty()) log_line("[phantom] " + n);
    phantom::write_manifest(records, ws.manifest());
    log_line("[phantom] wrote " + std::to_string(total) + " scans (" + std::to_string(n_train) + " train, " +
             std::to_string(n_val) + " val, " + std::to_string(c.dataset.test) + " test)");
    echo_config(c, ws, "phantom");
}

void run_project(const RunConfig& c, const Workspace& ws, std::optional<double> n0)
{
    const auto scans = load_manifest(ws);
    const ct::SliceGrid grid = grid_of(c);
    const ct::FanbeamProjector projector(c.geometry, grid);
    for (std::size_t i = 0; i < scans.size(); ++i) {
        const auto& s = scans[i];
        const auto hu = load_existing_volume(resolve(ws, s.volume), "phantom");
        if (hu.extents != c.phantom.extents) throw DataError("volume " + s.volume + " does not match the config grid");
        const auto mu = ct::hu_to_mu(hu);
        auto sino = ct::Sinogram::zeros(c.geometry, mu.nz());
        projector.forward(mu.values, sino.values, mu.nz());
        ct::write_sinogram(sino, resolve(ws, s.sinogram));
        if (n0) {
            const auto noisy = eval::test_sinogram(sino, *n0, derive_seed(c.seed, "project-noise"), i);
            ct::write_sinogram(noisy, ws.scan_dir() / (s.id + ".n0_" + eval::noise_label(*n0) + ".sino"));
        }
    }
    log_line("[project] wrote " + std::to_string(scans.size()) + " sinograms (" + std::to_string(c.geometry.n_views) +
             " views x " + std::to_string(c.geometry.n_channels) + " channels)");
    echo_config(c, ws, "project");
}

void run_fbp(const RunConfig& c, const Workspace& ws)
{
    const auto scans = load_manifest(ws);
    const ct::SliceGrid grid = grid_of(c);
    const ct::FbpOperator op(c.geometry, grid, c.recon.fbp_window);
    for (const auto& s : scans) {
        const auto sino = load_sinogram(ws, s, c.geometry);
        auto vol = ct::Volume::centered(c.phantom.extents, c.phantom.spacing, ct::Unit::mu);
        op.apply(sino.values, sino.n_slices, vol.values);
        ct::write_volume(vol, fbp_volume_path(ws, s.id));
        const auto mask = sampling::lung_mask(ct::mu_to_hu(vol));
        ct::write_volume(mask, fbp_mask_path(ws, s.id));
    }
    log_line("[fbp] reconstructed " + std::to_string(scans.size()) + " scans");
    echo_config(c, ws, "fbp");
}

void run_train_recon(const RunConfig& c, const Workspace& ws)
{
    const auto all = load_manifest(ws);
    const auto train_scans = with_split(all, "train");
    const auto val_scans = with_split(all, "val");
    if (train_scans.empty()) throw DataError("manifest has no training scans");
    const recon::PrimalDualNet net(c.recon, c.geometry, grid_of(c));

    struct Loaded {
        ct::Sinogram sino;
        ct::Volume truth;
    };
    auto load = [&](const std::vector<ScanRecord>& scans) {
        std::vector<Loaded> out;
        for (const auto& s : scans)
            out.push_back({load_sinogram(ws, s, c.geometry),
                           ct::hu_to_mu(load_existing_volume(resolve(ws, s.volume), "phantom"))});
        return out;
    };
    const auto train_data = load(train_scans);
    std::vector<train::ReconPair> pairs;
    for (const auto& d : train_data) pairs.push_back({&d.sino, &d.truth});

    auto theta = recon::make_recon_params(c.recon, derive_seed(c.seed, "recon-init"));
    auto cfg = c.stage1;
    cfg.seed = derive_seed(c.seed, "stage1");
    const std::size_t total = cfg.epochs * cfg.samples_per_scan * pairs.size();
    Stopwatch clock;
    const auto trace = train::train_recon(net, pairs, theta, cfg, [&](const train::LossRecord& r) {
        if ((r.step + 1) % 50 == 0 || r.step + 1 == total)
            log_line("[stage1] step " + std::to_string(r.step + 1) + "/" + std::to_string(total) + " loss " +
                     std::to_string(r.loss));
    });
    diff::save_checkpoint(ws.checkpoint("stage1"), {&theta});
    train::write_loss_trace(trace, ws.log("loss-stage1"));

    json metrics{{"train_scans", train_scans.size()}, {"steps", trace.size()}, {"train_seconds", clock.seconds()}};
    if (!val_scans.empty()) {
        const auto val = load(val_scans);
        double l2 = 0.0, fbp_l2 = 0.0;
        for (const auto& d : val) {
            const auto rec = recon::reconstruct_volume(net, d.sino, theta, d.truth);
            const auto fb = ct::fbp(d.sino, d.truth, c.recon.fbp_window);
            l2 += train::relative_l2(rec.values, d.truth.values);
            fbp_l2 += train::relative_l2(fb.values, d.truth.values);
        }
        metrics["validation_scans"] = val.size();
        metrics["validation_l2"] = l2 / double(val.size());
        metrics["fbp_validation_l2"] = fbp_l2 / double(val.size());
        log_line("[stage1] validation L2 " + std::to_string(l2 / double(val.size())) + " vs FBP " +
                 std::to_string(fbp_l2 / double(val.size())));
    }
    write_json(ws.metrics("stage1"), metrics);
    echo_config(c, ws, "train-recon");
}

void run_train_detector(const RunConfig& c, const Workspace& ws, const std::vector<eval::Variant>& variants)
{
    const auto all = load_manifest(ws);
    const auto train_scans = with_split(all, "train");
    const auto val_scans = with_split(all, "val");
    if (train_scans.empty()) throw DataError("manifest has no training scans");

    const PatchSet train_set = build_patch_set(c, ws, train_scans, 0, "train");
    const PatchSet val_set = build_patch_set(c, ws, val_scans, train_scans.size(), "val");
    sampling::write_patch_specs(flatten(train_set), ws.patches("train"));
    sampling::write_patch_specs(flatten(val_set), ws.patches("val"));

    std::optional<recon::PrimalDualNet> net;
    std::optional<diff::ParamSet> theta;
    for (eval::Variant v : variants) {
        const std::string ckpt_name = stage2_checkpoint_name(v);
        if (v == eval::Variant::two_step && !theta) {
            const auto ck = read_stage_checkpoint(ws, "stage1", "train-recon");
            theta = load_theta(c, ck);
            net.emplace(c.recon, c.geometry, grid_of(c));
        }
        // Image source per variant; the patch specs are shared.
        auto image_of = [&](const ScanRecord& s) {
            switch (v) {
            case eval::Variant::reference: return load_existing_volume(resolve(ws, s.volume), "phantom");
            case eval::Variant::fbp: return load_existing_volume(fbp_volume_path(ws, s.id), "fbp");
            default: {
                const auto like = ct::Volume::centered(c.phantom.extents, c.phantom.spacing, ct::Unit::mu);
                return recon::reconstruct_volume(*net, load_sinogram(ws, s, c.geometry), *theta, like);
            }
            }
        };
        Stopwatch clock;
        std::vector<ct::Volume> images;
        std::vector<train::DetectorSample> train_samples, val_samples;
        for (std::size_t i = 0; i < train_scans.size(); ++i) {
            images.push_back(image_of(train_scans[i]));
            for (const auto& spec : train_set.specs[i]) train_samples.push_back({images.size() - 1, spec});
        }
        for (std::size_t i = 0; i < val_scans.size(); ++i) {
            images.push_back(image_of(val_scans[i]));
            for (const auto& spec : val_set.specs[i]) val_samples.push_back({images.size() - 1, spec});
        }
        std::vector<const ct::Volume*> image_ptrs;
        for (const auto& im : images) image_ptrs.push_back(&im);
        const double prep_seconds = clock.seconds();

        auto eta = detect::make_detector_params(c.detector, derive_seed(c.seed, "detector-init"));
        auto cfg = c.stage2;
        cfg.seed = derive_seed(c.seed, "stage2");
        const std::size_t per_epoch = (train_samples.size() + cfg.minibatch - 1) / cfg.minibatch;
        const std::string tag = std::string("[stage2 ") + eval::variant_name(v) + "] ";
        const auto trace = train::train_detector(image_ptrs, train_samples, eta, c.detector, cfg,
                                                 [&](const train::LossRecord& r) {
                                                     if ((r.step + 1) % per_epoch == 0)
                                                         log_line(tag + "epoch " +
                                                                  std::to_string((r.step + 1) / per_epoch) +
                                                                  " batch loss " + std::to_string(r.loss));
                                                 });
        if (v == eval::Variant::two_step)
            diff::save_checkpoint(ws.checkpoint(ckpt_name), {&*theta, &eta});
        else
            diff::save_checkpoint(ws.checkpoint(ckpt_name), {&eta});
        train::write_loss_trace(trace, ws.log("loss-" + ckpt_name));

        json metrics{{"variant", eval::variant_name(v)},
                     {"train_patches", train_samples.size()},
                     {"steps", trace.size()},
                     {"image_seconds", prep_seconds},
                     {"train_seconds", clock.seconds() - prep_seconds}};
        const auto train_eval = train::evaluate_detector(image_ptrs, train_samples, eta, c.detector);
        metrics["train_loss"] = train_eval.loss;
        metrics["train_accuracy"] = train_eval.accuracy;
        if (!val_samples.empty()) {
            const auto held_out = balanced(val_samples, derive_seed(c.seed, "balanced-val"));
            const auto m = train::evaluate_detector(image_ptrs, held_out, eta, c.detector);
            metrics["validation_patches"] = held_out.size();
            metrics["validation_loss"] = m.loss;
            metrics["validation_accuracy"] = m.accuracy;
            log_line(tag + "held-out balanced accuracy " + std::to_string(m.accuracy) + " on " +
                     std::to_string(held_out.size()) + " patches");
        }
        write_json(ws.metrics(ckpt_name), metrics);
    }
    echo_config(c, ws, "train-detector");
}

void run_finetune(const RunConfig& c, const Workspace& ws)
{
    const auto all = load_manifest(ws);
    const auto train_scans = with_split(all, "train");
    const auto ck = read_stage_checkpoint(ws, "stage2", "train-detector");
    auto theta = load_theta(c, ck);
    auto eta = load_eta(c, ck);
    const recon::PrimalDualNet net(c.recon, c.geometry, grid_of(c));

    const fs::path patch_path = ws.patches("train");
    if (!fs::exists(patch_path)) throw DataError("missing " + patch_path.string() + "; run train-detector first");
    const auto specs = sampling::read_patch_specs(patch_path);
    std::map<std::string, std::size_t> index;
    std::vector<ct::Sinogram> sinos;
    const auto grid = ct::Volume::centered(c.phantom.extents, c.phantom.spacing, ct::Unit::mu);
    std::vector<train::FinetuneScan> scans;
    sinos.reserve(train_scans.size());
    for (const auto& s : train_scans) {
        index[s.id] = scans.size();
        sinos.push_back(load_sinogram(ws, s, c.geometry));
        scans.push_back({&sinos.back(), &grid, {}});
    }
    for (const auto& spec : specs) {
        auto it = index.find(spec.scan_id);
        if (it == index.end()) throw DataError("patch list names unknown training scan '" + spec.scan_id + "'");
        scans[it->second].specs.push_back(spec);
    }
    auto cfg = c.stage3;
    cfg.seed = derive_seed(c.seed, "stage3");
    Stopwatch clock;
    const auto result = train::finetune_e2e(net, scans, theta, eta, c.detector, cfg, [&](const train::LossRecord& r) {
        log_line("[stage3] step " + std::to_string(r.step + 1) + " loss " + std::to_string(r.loss));
    });
    std::size_t visited = 0;
    for (const auto& v : result.visits)
        for (auto n : v) visited += n;
    diff::save_checkpoint(ws.checkpoint("stage3"), {&theta, &eta});
    train::write_loss_trace(result.trace, ws.log("loss-stage3"));
    write_json(ws.metrics("stage3"), {{"steps", result.trace.size()},
                                      {"patch_visits", visited},
                                      {"patches", specs.size()},
                                      {"train_seconds", clock.seconds()}});
    echo_config(c, ws, "finetune");
}

namespace {

struct TestData {
    std::vector<ScanRecord> records;
    std::vector<ct::Volume> truth;
    std::vector<ct::Sinogram> sinos;
    std::vector<eval::EvalScan> scans;
};

TestData load_test(const RunConfig& c, const Workspace& ws)
{
    TestData d;
    d.records = with_split(load_manifest(ws), "test");
    if (d.records.empty()) throw DataError("manifest has no test scans");
    for (const auto& r : d.records) {
        d.truth.push_back(load_existing_volume(resolve(ws, r.volume), "phantom"));
        d.sinos.push_back(load_sinogram(ws, r, c.geometry));
    }
    for (std::size_t i = 0; i < d.records.size(); ++i)
        d.scans.push_back({d.records[i].id, &d.truth[i], &d.sinos[i],
                           non_small(phantom::read_annotations(resolve(ws, d.records[i].annotations)))});
    return d;
}

struct Models {
    std::optional<recon::PrimalDualNet> net;
    std::optional<diff::ParamSet> theta1, theta3, eta_ref, eta_fbp, eta2, eta3;
    eval::EvalModels view;
};

void load_models(const RunConfig& c, const Workspace& ws, const std::vector<eval::Variant>& variants, Models& m)
{
    m.view.detector = c.detector;
    for (eval::Variant v : variants) {
        switch (v) {
        case eval::Variant::reference:
            m.eta_ref = load_eta(c, read_stage_checkpoint(ws, "stage2-reference", "train-detector"));
            break;
        case eval::Variant::fbp: m.eta_fbp = load_eta(c, read_stage_checkpoint(ws, "stage2-fbp", "train-detector")); break;
        case eval::Variant::two_step: {
            const auto ck = read_stage_checkpoint(ws, "stage2", "train-detector");
            m.theta1 = load_theta(c, ck);
            m.eta2 = load_eta(c, ck);
            break;
        }
        case eval::Variant::end_to_end: {
            const auto ck = read_stage_checkpoint(ws, "stage3", "finetune");
            m.theta3 = load_theta(c, ck);
            m.eta3 = load_eta(c, ck);
            break;
        }
        }
        if ((v == eval::Variant::two_step || v == eval::Variant::end_to_end) && !m.net)
            m.net.emplace(c.recon, c.geometry, grid_of(c));
    }
    if (m.net) m.view.net = &*m.net;
    if (m.theta1) m.view.theta_stage1 = &*m.theta1;
    if (m.theta3) m.view.theta_stage3 = &*m.theta3;
    if (m.eta_ref) m.view.eta_reference = &*m.eta_ref;
    if (m.eta_fbp) m.view.eta_fbp = &*m.eta_fbp;
    if (m.eta2) m.view.eta_stage2 = &*m.eta2;
    if (m.eta3) m.view.eta_stage3 = &*m.eta3;
}

std::uint64_t noise_seed(const RunConfig& c) { return derive_seed(c.seed, "test-noise"); }

} // namespace

void run_detect(const RunConfig& c, const Workspace& ws, const std::vector<eval::Variant>& variants,
                const std::vector<double>& noise_levels)
{
    const TestData test = load_test(c, ws);
    Models m;
    load_models(c, ws, variants, m);
    for (double n0 : noise_levels) {
        std::map<eval::Variant, std::vector<eval::Detection>> per_variant;
        for (std::size_t s = 0; s < test.scans.size(); ++s) {
            const auto sino = eval::test_sinogram(test.sinos[s], n0, noise_seed(c), s);
            std::optional<ct::Volume> fbp_mask;
            for (eval::Variant v : variants) {
                const auto image = eval::variant_image(v, test.scans[s], sino, m.view, c.recon.fbp_window);
                ct::Volume mask;
                if (v == eval::Variant::reference) {
                    mask = eval::evaluation_mask(v, test.scans[s], sino, c.recon.fbp_window);
                } else {
                    if (!fbp_mask) fbp_mask = eval::evaluation_mask(v, test.scans[s], sino, c.recon.fbp_window);
                    mask = *fbp_mask;
                }
                const auto raw = eval::sliding_window_detect(image, mask, eval::detector_for(v, m.view), c.detector,
                                                             test.scans[s].id, c.evaluation.step_mm);
                const auto kept = eval::nms(raw, c.evaluation.iou_threshold);
                auto& out = per_variant[v];
                out.insert(out.end(), kept.begin(), kept.end());
                log_line("[detect] noise " + eval::noise_label(n0) + " " + eval::variant_name(v) + " " +
                         test.scans[s].id + ": " + std::to_string(raw.size()) + " windows, " +
                         std::to_string(kept.size()) + " after NMS");
            }
        }
        for (eval::Variant v : variants) eval::write_detections(per_variant[v], ws.detections(v, n0));
    }
    echo_config(c, ws, "detect");
}

namespace {

std::vector<eval::EvalCell> load_cells(const RunConfig& c, const Workspace& ws, const std::vector<eval::Variant>& variants,
                                       const std::vector<double>& noise_levels, bool with_bootstrap)
{
    const auto records = with_split(load_manifest(ws), "test");
    if (records.empty()) throw DataError("manifest has no test scans");
    std::vector<std::vector<phantom::Annotation>> truth;
    std::map<std::string, std::size_t> index;
    for (const auto& r : records) {
        index[r.id] = truth.size();
        truth.push_back(non_small(phantom::read_annotations(resolve(ws, r.annotations))));
    }
    const auto grid = ct::Volume::centered(c.phantom.extents, c.phantom.spacing, ct::Unit::mu);
    std::vector<eval::EvalCell> cells;
    for (double n0 : noise_levels)
        for (eval::Variant v : variants) {
            const fs::path p = ws.detections(v, n0);
            if (!fs::exists(p)) throw DataError("missing detections " + p.string() + "; run the detect command first");
            eval::EvalCell cell;
            cell.variant = v;
            cell.n0 = n0;
            cell.detections.resize(records.size());
            for (auto& d : eval::read_detections(p, eval::window_extent(grid))) {
                auto it = index.find(d.scan_id);
                if (it == index.end()) throw DataError(p.string() + " names unknown test scan '" + d.scan_id + "'");
                cell.detections[it->second].push_back(std::move(d));
            }
            cell.curve = eval::froc(cell.detections, truth, with_bootstrap ? c.evaluation.n_boot : 0,
                                    derive_seed(c.seed, "bootstrap"));
            cells.push_back(std::move(cell));
        }
    return cells;
}

} // namespace

void run_evaluate(const RunConfig& c, const Workspace& ws, const std::vector<eval::Variant>& variants,
                  const std::vector<double>& noise_levels)
{
    const auto cells = load_cells(c, ws, variants, noise_levels, true);
    for (const auto& cell : cells) {
        eval::write_froc(cell.curve, ws.froc(cell.variant, cell.n0));
        char buf[160];
        std::snprintf(buf, sizeof buf, "[evaluate] noise %-5s %-11s mean FROC %.4f (bootstrap mean %.4f)",
                      eval::noise_label(cell.n0).c_str(), eval::variant_name(cell.variant), cell.curve.mean_froc,
                      cell.curve.boot_mean_froc);
        log_line(buf);
    }
    eval::write_score_grid(cells, ws.score_grid());
    echo_config(c, ws, "evaluate");
}

void run_report(const RunConfig& c, const Workspace& ws, const std::vector<eval::Variant>& variants,
                const std::vector<double>& noise_levels)
{
    // FROC panels, one per noise level.
    const auto cells = load_cells(c, ws, variants, noise_levels, true);
    std::vector<SvgPanel> panels;
    for (double n0 : noise_levels) {
        SvgPanel panel;
        panel.title = std::isinf(n0) ? "noiseless" : "N0 = " + eval::noise_label(n0);
        for (const auto& cell : cells) {
            if (cell.n0 != n0) continue;
            SvgSeries s;
            char name[64];
            std::snprintf(name, sizeof name, "%s (%.3f)", eval::variant_name(cell.variant), cell.curve.mean_froc);
            s.name = name;
            for (std::size_t i = 0; i < cell.curve.points.size(); ++i) {
                s.x.push_back(cell.curve.points[i].fp_per_scan);
                s.y.push_back(cell.curve.boot_mean[i]);
                s.lo.push_back(cell.curve.lo95[i]);
                s.hi.push_back(cell.curve.hi95[i]);
            }
            panel.series.push_back(std::move(s));
        }
        panels.push_back(std::move(panel));
    }
    const std::string froc_svg = froc_panels_svg(panels);
    io::write_atomically(ws.report_dir() / "froc.svg", [&](std::ostream& os) { os << froc_svg; });

    // Axial slices through the largest test nodule, one row per noise level.
    const TestData test = load_test(c, ws);
    Models m;
    load_models(c, ws, variants, m);
    std::size_t best_scan = test.scans.size(), best = 0;
    for (std::size_t s = 0; s < test.scans.size(); ++s)
        for (std::size_t k = 0; k < test.scans[s].nodules.size(); ++k)
            if (best_scan == test.scans.size() ||
                test.scans[s].nodules[k].diameter > test.scans[best_scan].nodules[best].diameter) {
                best_scan = s;
                best = k;
            }
    std::vector<std::vector<SvgImage>> rows;
    std::vector<std::string> labels;
    std::ostringstream cnr_csv;
    cnr_csv << "noise,variant,cnr,infinite\n";
    if (best_scan < test.scans.size()) {
        const auto& scan = test.scans[best_scan];
        const auto& nod = scan.nodules[best];
        const auto& grid = *scan.truth_hu;
        const std::size_t z = std::size_t(std::lround(grid.voxel_coord(2, nod.center[2])));
        // Background disc: same slice, shifted away from the nodule inside the lung.
        std::array<double, 3> bg = nod.center;
        bg[1] += (nod.center[1] > 0 ? -1.0 : 1.0) * (nod.diameter + 6.0);
        for (double n0 : noise_levels) {
            const auto sino = eval::test_sinogram(test.sinos[best_scan], n0, noise_seed(c), best_scan);
            std::vector<SvgImage> row;
            for (eval::Variant v : variants) {
                auto image = eval::variant_image(v, scan, sino, m.view, c.recon.fbp_window);
                if (image.unit == ct::Unit::mu) image = ct::mu_to_hu(image);
                SvgImage im{eval::variant_name(v), grid.nx(), grid.ny(), {}};
                im.values.assign(image.values.begin() + z * grid.slice_size(),
                                 image.values.begin() + (z + 1) * grid.slice_size());
                row.push_back(std::move(im));
                const auto r = eval::cnr(image, nod.center, 0.5 * nod.diameter * 0.8, bg, 0.5 * nod.diameter * 0.8);
                char buf[128];
                std::snprintf(buf, sizeof buf, "%s,%s,%.6g,%d\n", eval::noise_label(n0).c_str(),
                              eval::variant_name(v), r.value, r.infinite ? 1 : 0);
                cnr_csv << buf;
            }
            rows.push_back(std::move(row));
            labels.push_back(std::isinf(n0) ? "noiseless" : "N0 = " + eval::noise_label(n0));
        }
        log_line("[report] slices through " + scan.id + " nodule at z = " + std::to_string(nod.center[2]) + " mm");
    }
    const std::string slices_svg = image_grid_svg(rows, labels, -1400.0, 200.0);
    io::write_atomically(ws.report_dir() / "slices.svg", [&](std::ostream& os) { os << slices_svg; });
    const std::string cnr_text = cnr_csv.str();
    io::write_atomically(ws.report_dir() / "cnr.csv", [&](std::ostream& os) { os << cnr_text; });
    echo_config(c, ws, "report");
}

} // namespace tomodet::app
