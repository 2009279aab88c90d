// Acceptance suite: runs the fourteen acceptance criteria and prints one
// PASS/FAIL line per criterion. Exit status is nonzero if any fails.
//
// Criteria 8-11 train the desk profile through the CLI and 13-14 run the
// tiny profile twice; the run directories are kept under --work for
// inspection.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ct_oracles.hpp"
#include "eval_oracles.hpp"
#include "oracles.hpp"
#include "tomodet/app/config.hpp"
#include "tomodet/ct/fbp.hpp"
#include "tomodet/ct/noise.hpp"
#include "tomodet/ct/projector.hpp"
#include "tomodet/diff/ops.hpp"
#include "tomodet/eval/froc.hpp"
#include "tomodet/phantom/phantom.hpp"
#include "tomodet/recon/primal_dual.hpp"
#include "tomodet/sampling/patches.hpp"
#include "tomodet/util/parallel.hpp"

namespace fs = std::filesystem;
using namespace tomodet;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---- criteria 1-7: numerical kernels ---------------------------------------

Outcome adjoint_correctness()
{
    Stopwatch clock;
    const auto like = ct::Volume::centered({64, 64, 1}, {1.0, 1.0, 2.0}, ct::Unit::mu);
    std::mt19937_64 rng(1);
    double worst = 0.0;
    for (std::size_t views : {72, 144}) {
        auto g = app::profile_config("desk").geometry;
        g.n_views = views;
        const ct::FanbeamProjector proj(g, ct::SliceGrid::of(like));
        for (int pair = 0; pair < 10; ++pair) {
            const auto x = testing::random_values(proj.image_size(), rng);
            const auto y = testing::random_values(proj.sinogram_size(), rng);
            std::vector<double> ax(proj.sinogram_size()), aty(proj.image_size(), 0.0);
            proj.forward(x, ax, 1);
            proj.adjoint_accumulate(y, aty, 1);
            worst = std::max(worst, testing::relative_error(testing::dot(ax, y), testing::dot(x, aty)));
        }
    }
    const double t = clock.seconds();
    return {worst < 1e-10 && t < 10.0, fmt("max relative adjoint error %.2e over 20 pairs, %.1f s", worst, t)};
}

Outcome projector_oracle()
{
    const auto g = testing::small_geometry(24, 48);
    const auto like = ct::Volume::centered({16, 16, 1}, {1.0, 1.0, 2.0}, ct::Unit::mu);
    const auto dense = testing::dense_system_matrix(g, like);
    const ct::FanbeamProjector proj(g, ct::SliceGrid::of(like));
    const std::size_t P = 256, rays = proj.sinogram_size();
    // Column j of the projector is the projection of the j-th unit image.
    double worst = 0.0;
    std::vector<double> e(P, 0.0), col(rays);
    for (std::size_t j = 0; j < P; ++j) {
        e[j] = 1.0;
        proj.forward(e, col, 1);
        e[j] = 0.0;
        for (std::size_t r = 0; r < rays; ++r) worst = std::max(worst, std::abs(col[r] - dense[r * P + j]));
    }
    return {worst < 1e-10, fmt("max elementwise deviation %.2e over %.0f matrix entries", worst, double(rays * P))};
}

Outcome fbp_fidelity()
{
    const double mu = 0.02;
    const auto disk = testing::disk_volume(128, 1.0, 50.0, mu);
    const auto rec = ct::fbp(ct::forward_project(disk, testing::clinical_geometry(144)), disk);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < 128; ++y)
        for (std::size_t x = 0; x < 128; ++x) {
            const double px = disk.position(0, x), py = disk.position(1, y);
            if (px * px + py * py > 40.0 * 40.0) continue;
            s += rec.at(x, y, 0);
            ++n;
        }
    const double rel = std::abs(s / double(n) - mu) / mu;
    const double e72 = testing::rmse(ct::fbp(ct::forward_project(disk, testing::clinical_geometry(72)), disk,
                                             ct::Apodization::hann),
                                     disk, 45.0);
    const double e288 = testing::rmse(ct::fbp(ct::forward_project(disk, testing::clinical_geometry(288)), disk,
                                              ct::Apodization::hann),
                                      disk, 45.0);
    return {rel < 0.05 && e288 < e72,
            fmt("interior mean off by %.2f%%; RMSE 288 views %.3e vs 72 views %.3e", 100 * rel, e288, e72)};
}

Outcome noise_statistics()
{
    // I ~ Poisson(m), m = n0 exp(-p), p' = -ln(I / n0): to leading order
    // Var[p'] = 1/m and E[p'] - p = 1/(2m). The variance is measured over
    // 10^6 rays. The bias is 1/(2m), which 10^6 rays cannot resolve to 10%
    // (the standard error of the mean is sqrt(1/(m 10^6)), larger than
    // the bias itself), so the mean is measured over enough rays that its
    // standard error is 2.5% of the bias.
    const double n0 = 1e5;
    const std::size_t chunk = 1'000'000;
    Outcome out{true, ""};
    for (double p : {0.0, 2.0}) {
        const double m = n0 * std::exp(-p);
        const double model_var = 1.0 / m, model_bias = 0.5 / m;
        const auto need = static_cast<std::size_t>(std::ceil(model_var / std::pow(0.025 * model_bias, 2)));
        const std::size_t chunks = std::max<std::size_t>(1, (need + chunk - 1) / chunk);
        auto sino = ct::Sinogram::zeros(testing::small_geometry(1000, 1000), 1);
        std::fill(sino.values.begin(), sino.values.end(), p);
        double sum = 0.0, first_var = 0.0;
        for (std::size_t c = 0; c < chunks; ++c) {
            const auto noisy = ct::add_poisson_noise(sino, n0, 1000 * static_cast<std::uint64_t>(p) + c);
            double s = 0.0;
            for (double v : noisy.values) s += v - p;
            if (c == 0) {
                const double mean = s / double(chunk);
                for (double v : noisy.values) first_var += (v - p - mean) * (v - p - mean);
                first_var /= double(chunk - 1);
            }
            sum += s;
        }
        const double bias = sum / double(chunks * chunk);
        const double var_err = std::abs(first_var - model_var) / model_var;
        const double bias_err = std::abs(bias - model_bias) / model_bias;
        out.pass = out.pass && var_err < 0.1 && bias_err < 0.1;
        out.detail += fmt("p=%.0f: variance off %.2f%% (10^6 rays), ", p, 100 * var_err) +
                      fmt("bias %.3e vs %.3e, off %.2f%% ", bias, model_bias, 100 * bias_err) +
                      fmt("(%.2e rays); ", double(chunks * chunk));
    }
    return out;
}

Outcome end_to_end_gradient()
{
    Stopwatch clock;
    set_thread_count(1);
    ct::FanbeamGeometry g = testing::small_geometry(24, 48);
    auto truth = ct::Volume::centered({16, 16, 3}, {1.0, 1.0, 2.0}, ct::Unit::mu);
    for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                const double px = truth.position(0, x), py = truth.position(1, y);
                const double r2 = px * px + py * py, b2 = (px - 2) * (px - 2) + (py + 1) * (py + 1);
                truth.at(x, y, z) = (r2 < 49.0 ? ct::kMuWater : 0.0) + (b2 < 6.0 ? 0.01 : 0.0);
            }
    const auto sino = ct::forward_project(truth, g);
    recon::PrimalDualConfig rc;
    rc.iterations = 2;
    rc.hidden_channels = 4;
    const recon::PrimalDualNet net(rc, g, ct::SliceGrid::of(truth));
    const detect::DetectorConfig dc{{4, 8, 16}, 32};
    auto theta = recon::make_recon_params(rc, 5, false);
    auto eta = detect::make_detector_params(dc, 5);
    // Biases start at zero, which puts the zero-padded border and the air
    // exactly on ReLU kinks where central differences are one-sided.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> bias(-0.1, 0.1);
    for (diff::ParamSet* set : {&theta, &eta})
        for (auto& [name, t] : *set)
            if (t.rank() == 1)
                for (double& b : t.mutable_data()) b = bias(rng);
    // The 16x16x3 reconstruction sits inside a zero-padded 32x32x16 patch.
    const std::array<long, 3> corner{-8, -8, -6};
    const int label[] = {1};
    auto loss = [&] {
        const auto vol = recon::reconstruct_tensor(net, sino, theta);
        const auto patch = sampling::extract_patch_padded(vol, corner, {false, false, false});
        return diff::cross_entropy(detect::detector_probability(detect::normalize_mu(patch), eta, dc), label);
    };
    theta.zero_grad();
    eta.zero_grad();
    diff::backward(loss());

    double worst = 0.0;
    std::size_t checked = 0;
    for (diff::ParamSet* set : {&theta, &eta}) {
        std::vector<std::string> names;
        for (const auto& [name, t] : *set) names.push_back(name);
        std::uniform_int_distribution<std::size_t> pick_name(0, names.size() - 1);
        std::size_t picked = 0;
        while (picked < 20) {
            auto& t = set->at(names[pick_name(rng)]);
            const std::size_t i = std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(rng);
            const double analytic = t.grad()[i];
            if (analytic == 0.0) continue;
            // A 1e-4 step straddles ReLU kinks for a few entries; 1e-6 does not.
            const double fd = testing::central_difference(t, i, [&] { return loss().item(); }, 1e-6);
            worst = std::max(worst, testing::relative_error(analytic, fd));
            ++picked;
            ++checked;
        }
    }
    const double t = clock.seconds();
    return {worst < 1e-3 && t < 120.0,
            fmt("max relative error %.2e over %.0f theta+eta entries, %.1f s", worst, double(checked), t)};
}

Outcome partition_of_unity()
{
    std::mt19937_64 rng(6);
    double worst = 0.0;
    for (std::size_t nz : {3, 4, 5, 16}) {
        const auto vol = testing::random_values(nz * 64, rng);
        const auto out = recon::aggregate_windows(nz, 1, [&](std::size_t k) {
            return diff::Tensor::constant({3, 8, 8},
                                          std::vector<double>(vol.begin() + k * 64, vol.begin() + (k + 3) * 64));
        });
        for (std::size_t i = 0; i < vol.size(); ++i) worst = std::max(worst, std::abs(out.data()[i] - vol[i]));
    }
    const auto cov = recon::slice_coverage(5, 1);
    const bool cov_ok = cov == std::vector<std::size_t>{1, 2, 3, 2, 1};
    return {worst < 1e-12 && cov_ok, fmt("max abs error %.2e; coverage(5) = ", worst) + [&] {
                std::string s = "(";
                for (std::size_t i = 0; i < cov.size(); ++i) s += (i ? "," : "") + std::to_string(cov[i]);
                return s + ")";
            }()};
}

Outcome zero_weight_anchor()
{
    set_thread_count(1);
    const auto c = app::profile_config("desk");
    auto spec = c.phantom;
    spec.extents[2] = 8;
    spec.seed = 7;
    const auto ph = phantom::generate_phantom(spec, "anchor");
    const auto mu = ct::hu_to_mu(ph.hu);
    const auto sino = ct::forward_project(mu, c.geometry);
    const recon::PrimalDualNet net(c.recon, c.geometry, ct::SliceGrid::of(mu));
    auto theta = recon::make_recon_params(c.recon, 7);
    theta.fill_zero();
    const auto rec = recon::reconstruct_volume(net, sino, theta, mu);
    const auto fbp = ct::fbp(sino, mu, c.recon.fbp_window);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < rec.values.size(); ++i) differ += rec.values[i] != fbp.values[i];
    return {differ == 0, fmt("%.0f of %.0f voxels differ from FBP (desk geometry, 1 thread)", double(differ),
                             double(rec.values.size()))};
}

Outcome froc_nms_oracles()
{
    std::mt19937_64 rng(12);
    std::size_t froc_bad = 0, nms_bad = 0, idem_bad = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto c = testing::random_micro_case(rng);
        froc_bad += !testing::same_points(eval::froc_points(c.dets, c.anns), testing::oracle_froc(c.dets, c.anns));
        const auto once = eval::nms(c.flat, 0.5);
        nms_bad += !testing::same_boxes(once, testing::oracle_nms(c.flat, 0.5));
        idem_bad += !testing::same_boxes(eval::nms(once, 0.5), once);
    }
    return {froc_bad + nms_bad + idem_bad == 0,
            fmt("200 cases: %.0f FROC, %.0f NMS, %.0f idempotence mismatches", double(froc_bad), double(nms_bad),
                double(idem_bad))};
}

// ---- CLI runs ----------------------------------------------------------------

struct Step {
    std::string command;
    int status = -1;
    double seconds = 0.0;
};

class CliRun {
public:
    CliRun(std::string cli, fs::path work, std::string profile)
        : cli_(std::move(cli)), work_(std::move(work)), profile_(std::move(profile))
    {
    }

    const fs::path& work() const { return work_; }

    /// Runs one subcommand; output goes to <work>.logs/<command>.log.
    Step run(const std::string& command, const std::string& extra = "")
    {
        fs::create_directories(log_dir());
        const std::string log_name = command + (extra.empty() ? "" : "-" + std::to_string(steps_.size()));
        const std::string cmd = cli_ + " " + command + " --profile " + profile_ + " --work " + work_.string() +
                                " --threads 1 " + extra + " > " + (log_dir() / (log_name + ".log")).string() +
                                " 2>&1";
        std::cout << "  [" << profile_ << "] " << command << (extra.empty() ? "" : " " + extra) << std::flush;
        Stopwatch clock;
        const int raw = std::system(cmd.c_str());
        Step s{command + (extra.empty() ? "" : " " + extra), WIFEXITED(raw) ? WEXITSTATUS(raw) : -1,
               clock.seconds()};
        std::cout << " -> exit " << s.status << ", " << fmt("%.0f s", s.seconds) << std::endl;
        steps_.push_back(s);
        if (s.status != 0) failed_ = s.command;
        return s;
    }

    bool ok() const { return failed_.empty(); }
    std::string failure() const
    {
        return "'" + failed_ + "' failed; see " + log_dir().string();
    }
    double total_seconds() const
    {
        double t = 0.0;
        for (const auto& s : steps_) t += s.seconds;
        return t;
    }

private:
    fs::path log_dir() const { return work_.string() + ".logs"; }

    std::string cli_;
    fs::path work_;
    std::string profile_;
    std::vector<Step> steps_;
    std::string failed_;
};

json read_json(const fs::path& p)
{
    std::ifstream is(p);
    if (!is) throw std::runtime_error("missing " + p.string());
    return json::parse(is);
}

/// noise label -> variant -> mean-FROC.
std::map<std::string, std::map<std::string, double>> read_grid(const fs::path& p)
{
    std::ifstream is(p);
    if (!is) throw std::runtime_error("missing " + p.string());
    std::string line;
    std::getline(is, line);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) header.push_back(f);
    }
    std::map<std::string, std::map<std::string, double>> grid;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f, noise;
        std::getline(ss, noise, ',');
        for (std::size_t k = 1; std::getline(ss, f, ','); ++k) grid[noise][header.at(k)] = std::stod(f);
    }
    return grid;
}

struct DeskSuite {
    std::optional<CliRun> run;
    Step recon, detector_two_step;
};

void run_desk(DeskSuite& d, const std::string& cli, const fs::path& work)
{
    if (d.run) return;
    fs::remove_all(work);
    fs::remove_all(work.string() + ".logs");
    d.run.emplace(cli, work, "desk");
    auto& r = *d.run;
    for (const char* c : {"phantom", "project", "fbp"})
        if (r.ok()) r.run(c);
    if (r.ok()) d.recon = r.run("train-recon");
    if (r.ok()) d.detector_two_step = r.run("train-detector", "--variant two-step");
    if (r.ok()) r.run("train-detector", "--variant reference --variant fbp");
    for (const char* c : {"finetune", "detect", "evaluate"})
        if (r.ok()) r.run(c);
}

Outcome stage1_learning(DeskSuite& d, const std::string& cli, const fs::path& work)
{
    run_desk(d, cli, work);
    if (d.recon.status != 0) return {false, d.run->failure()};
    const auto m = read_json(work / "metrics" / "stage1.json");
    const double l2 = m.at("validation_l2"), fbp = m.at("fbp_validation_l2");
    return {l2 < fbp && d.recon.seconds < 900.0,
            fmt("held-out L2 %.5f vs FBP %.5f after %.0f steps, ", l2, fbp, double(m.at("steps"))) +
                fmt("train-recon %.0f s", d.recon.seconds)};
}

Outcome stage2_learning(DeskSuite& d, const std::string& cli, const fs::path& work)
{
    run_desk(d, cli, work);
    if (d.detector_two_step.status != 0) return {false, d.run->failure()};
    const auto m = read_json(work / "metrics" / "stage2.json");
    const double acc = m.at("validation_accuracy");
    std::string others;
    for (const char* v : {"reference", "fbp"}) {
        const fs::path p = work / "metrics" / (std::string("stage2-") + v + ".json");
        if (fs::exists(p))
            others += std::string(", ") + v + fmt(" %.3f", double(read_json(p).at("validation_accuracy")));
    }
    return {acc >= 0.90 && d.detector_two_step.seconds < 900.0,
            fmt("two-step held-out balanced accuracy %.3f on %.0f patches, train-detector %.0f s", acc,
                double(m.at("validation_patches")), d.detector_two_step.seconds) +
                (others.empty() ? "" : " (other image sources" + others + ")")};
}

Outcome ordering_claim(DeskSuite& d, const std::string& cli, const fs::path& work)
{
    run_desk(d, cli, work);
    if (!d.run->ok()) return {false, d.run->failure()};
    auto grid = read_grid(work / "eval" / "score_grid.csv");
    const auto& row = grid.at("none");
    const double e2e = row.at("end-to-end"), two = row.at("two-step"), ref = row.at("reference"),
                 fbp = row.at("fbp");
    return {e2e >= two - 0.02 && ref >= fbp - 0.02,
            fmt("noiseless mean-FROC end-to-end %.3f vs two-step %.3f; reference %.3f vs fbp %.3f", e2e, two, ref,
                fbp)};
}

Outcome noise_direction(DeskSuite& d, const std::string& cli, const fs::path& work)
{
    run_desk(d, cli, work);
    if (!d.run->ok()) return {false, d.run->failure()};
    auto grid = read_grid(work / "eval" / "score_grid.csv");
    bool pass = true;
    std::string detail;
    for (const char* v : {"reference", "fbp", "two-step", "end-to-end"}) {
        const double clean = grid.at("none").at(v), noisy = grid.at("5e4").at(v);
        pass = pass && noisy <= clean + 0.02;
        detail += std::string(v) + fmt(" %.3f -> %.3f; ", clean, noisy);
    }
    return {pass, "mean-FROC none -> 5e4: " + detail};
}

const std::vector<std::string> kChain{"phantom",        "project",  "fbp",    "train-recon", "train-detector",
                                      "finetune",       "detect",   "evaluate", "report"};

struct TinySuite {
    std::optional<CliRun> first;
};

void run_tiny(TinySuite& t, const std::string& cli, const fs::path& work)
{
    if (t.first) return;
    fs::remove_all(work);
    fs::remove_all(work.string() + ".logs");
    t.first.emplace(cli, work, "tiny");
    for (const auto& c : kChain)
        if (t.first->ok()) t.first->run(c);
}

Outcome pipeline_smoke(TinySuite& t, const std::string& cli, const fs::path& work)
{
    run_tiny(t, cli, work);
    if (!t.first->ok()) return {false, t.first->failure()};
    const auto grid = read_grid(work / "eval" / "score_grid.csv");
    std::size_t cells = 0;
    for (const auto& [noise, row] : grid) cells += row.size();
    const bool levels = grid.count("none") && grid.count("1e5") && grid.count("5e4");
    const bool svgs = fs::exists(work / "report" / "froc.svg") && fs::exists(work / "report" / "slices.svg");
    const double total = t.first->total_seconds();
    return {levels && cells == 12 && svgs && total < 1800.0,
            fmt("%.0f-cell score grid, ", double(cells)) + (svgs ? "SVG panels present" : "SVG panels missing") +
                fmt(", chain %.1f min", total / 60.0)};
}

std::map<fs::path, std::string> artefacts(const fs::path& root)
{
    std::map<fs::path, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension();
        if (ext != ".csv" && ext != ".ckpt") continue;
        std::ifstream is(e.path(), std::ios::binary);
        out[fs::relative(e.path(), root)] = std::string(std::istreambuf_iterator<char>(is), {});
    }
    return out;
}

Outcome reproducibility(TinySuite& t, const std::string& cli, const fs::path& work_a, const fs::path& work_b)
{
    run_tiny(t, cli, work_a);
    if (!t.first->ok()) return {false, t.first->failure()};
    fs::remove_all(work_b);
    fs::remove_all(work_b.string() + ".logs");
    CliRun second(cli, work_b, "tiny");
    for (const auto& c : kChain)
        if (second.ok()) second.run(c);
    if (!second.ok()) return {false, second.failure()};
    const auto a = artefacts(work_a), b = artefacts(work_b);
    std::size_t differ = 0, ckpts = 0;
    std::string first_diff;
    for (const auto& [path, bytes] : a) {
        ckpts += path.extension() == ".ckpt";
        auto it = b.find(path);
        if (it == b.end() || it->second != bytes) {
            if (first_diff.empty()) first_diff = path.string();
            ++differ;
        }
    }
    for (const auto& [path, bytes] : b)
        if (!a.count(path)) {
            if (first_diff.empty()) first_diff = path.string();
            ++differ;
        }
    return {differ == 0 && !a.empty(),
            fmt("%.0f CSV and checkpoint files compared (%.0f checkpoints), %.0f differ", double(a.size()),
                double(ckpts), double(differ)) +
                (first_diff.empty() ? "" : ", first: " + first_diff)};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance criteria 1-14"};
    std::string work = "acceptance_runs";
    std::string cli = TOMODET_CLI;
    std::vector<int> only;
    app.add_option("--work", work, "Directory for the CLI runs of criteria 8-11, 13 and 14");
    app.add_option("--cli", cli, "Path to the tomodet executable");
    app.add_option("--only", only, "Run just these criteria (repeatable)");
    CLI11_PARSE(app, argc, argv);

    const fs::path root = fs::absolute(work);
    fs::create_directories(root);
    DeskSuite desk;
    TinySuite tiny;
    const fs::path desk_dir = root / "desk", tiny_a = root / "tiny-a", tiny_b = root / "tiny-b";

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"adjoint correctness", adjoint_correctness},
        {"projector oracle equivalence", projector_oracle},
        {"FBP fidelity", fbp_fidelity},
        {"noise model statistics", noise_statistics},
        {"end-to-end differentiability", end_to_end_gradient},
        {"partition of unity", partition_of_unity},
        {"zero-weight anchor", zero_weight_anchor},
        {"stage-1 learning", [&] { return stage1_learning(desk, cli, desk_dir); }},
        {"stage-2 learning", [&] { return stage2_learning(desk, cli, desk_dir); }},
        {"ordering claim", [&] { return ordering_claim(desk, cli, desk_dir); }},
        {"noise-robustness direction", [&] { return noise_direction(desk, cli, desk_dir); }},
        {"FROC/NMS oracles", froc_nms_oracles},
        {"pipeline smoke", [&] { return pipeline_smoke(tiny, cli, tiny_a); }},
        {"reproducibility", [&] { return reproducibility(tiny, cli, tiny_a, tiny_b); }},
    };

    std::vector<std::string> summary;
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = int(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        std::cout << "criterion " << id << ": " << criteria[i].first << " ..." << std::endl;
        Outcome o;
        Stopwatch clock;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        char line[64];
        std::snprintf(line, sizeof line, "%s criterion %2d (%5.0f s) ", o.pass ? "PASS" : "FAIL", id,
                      clock.seconds());
        summary.push_back(std::string(line) + criteria[i].first + ": " + o.detail);
        std::cout << summary.back() << std::endl;
        failures += !o.pass;
    }
    std::cout << "\nsummary\n";
    for (const auto& s : summary) std::cout << s << '\n';
    std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
    return failures ? 1 : 0;
}
