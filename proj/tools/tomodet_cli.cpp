// tomodet: simulate -> train -> detect -> evaluate -> report.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "tomodet/app/workflow.hpp"
#include "tomodet/util/error.hpp"
#include "tomodet/util/parallel.hpp"

using namespace tomodet;

namespace {

struct Common {
    std::string config;
    std::string profile = "desk";
    std::string work = "run";
    unsigned threads = 0;
    std::optional<std::uint64_t> seed;
};

struct Selection {
    std::vector<std::string> variants;
    std::vector<std::string> noise;
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("--config", c.config, "JSON run config (its \"profile\" key picks the base preset)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--profile", c.profile, "Base preset when the config names none: full, desk or tiny");
    cmd->add_option("--work", c.work, "Run directory holding every input and output");
    cmd->add_option("--threads", c.threads, "Worker threads (1 = bit-exact reproducible; 0 = all cores)");
    cmd->add_option("--seed", c.seed, "Override the config seed");
}

app::RunConfig resolve(const Common& c)
{
    app::RunConfig cfg = c.config.empty() ? app::apply_json(app::profile_config(c.profile), nlohmann::json::object())
                                          : app::load_config(c.config, c.profile);
    if (c.seed) cfg.seed = *c.seed;
    set_thread_count(c.threads ? c.threads : std::max(1u, std::thread::hardware_concurrency()));
    return cfg;
}

std::vector<eval::Variant> variants_of(const std::vector<std::string>& names, std::vector<eval::Variant> fallback)
{
    if (names.empty()) return fallback;
    std::vector<eval::Variant> out;
    for (const auto& n : names) out.push_back(eval::parse_variant(n));
    return out;
}

std::vector<double> noise_of(const std::vector<std::string>& levels, const app::RunConfig& cfg)
{
    if (levels.empty()) return cfg.evaluation.noise_levels;
    std::vector<double> out;
    for (const auto& l : levels) out.push_back(eval::parse_noise(l));
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App cli{"Joint reconstruction and nodule detection on simulated low-dose CT"};
    cli.require_subcommand(1);
    Common common;
    Selection sel;
    std::string project_noise;

    auto* phantom = cli.add_subcommand("phantom", "Generate phantom scans and the manifest");
    auto* project = cli.add_subcommand("project", "Forward-project every scan into a sinogram");
    project->add_option("--noise-n0", project_noise, "Also write a noisy copy with this photon count per ray");
    auto* fbp = cli.add_subcommand("fbp", "FBP volumes and FBP-derived lung masks");
    auto* train_recon = cli.add_subcommand("train-recon", "Stage 1: train the primal-dual reconstruction");
    auto* train_det = cli.add_subcommand("train-detector", "Stage 2: train the detector per image source");
    auto* finetune = cli.add_subcommand("finetune", "Stage 3: joint fine-tuning of reconstruction and detector");
    auto* detect = cli.add_subcommand("detect", "Sliding-window detection on the test scans");
    auto* evaluate = cli.add_subcommand("evaluate", "FROC curves and the mean-FROC score grid");
    auto* report = cli.add_subcommand("report", "SVG FROC panels, axial slice comparison and CNR table");
    for (auto* cmd : {phantom, project, fbp, train_recon, train_det, finetune, detect, evaluate, report})
        add_common(cmd, common);
    for (auto* cmd : {train_det, detect, evaluate, report})
        cmd->add_option("--variant", sel.variants, "reference, fbp, two-step or end-to-end (repeatable)");
    for (auto* cmd : {detect, evaluate, report})
        cmd->add_option("--noise-n0", sel.noise, "Noise level: none or photons per ray (repeatable)");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return cli.exit(e);
    } catch (const CLI::ParseError& e) {
        cli.exit(e);
        return 2;
    }

    try {
        const app::RunConfig cfg = resolve(common);
        const app::Workspace ws{common.work};
        const std::vector<eval::Variant> all(eval::kAllVariants.begin(), eval::kAllVariants.end());
        const std::vector<eval::Variant> stage2{eval::Variant::reference, eval::Variant::fbp, eval::Variant::two_step};
        if (phantom->parsed()) {
            app::run_phantom(cfg, ws);
        } else if (project->parsed()) {
            std::optional<double> n0;
            if (!project_noise.empty()) n0 = eval::parse_noise(project_noise);
            app::run_project(cfg, ws, n0);
        } else if (fbp->parsed()) {
            app::run_fbp(cfg, ws);
        } else if (train_recon->parsed()) {
            app::run_train_recon(cfg, ws);
        } else if (train_det->parsed()) {
            app::run_train_detector(cfg, ws, variants_of(sel.variants, stage2));
        } else if (finetune->parsed()) {
            app::run_finetune(cfg, ws);
        } else if (detect->parsed()) {
            app::run_detect(cfg, ws, variants_of(sel.variants, all), noise_of(sel.noise, cfg));
        } else if (evaluate->parsed()) {
            app::run_evaluate(cfg, ws, variants_of(sel.variants, all), noise_of(sel.noise, cfg));
        } else if (report->parsed()) {
            app::run_report(cfg, ws, variants_of(sel.variants, all), noise_of(sel.noise, cfg));
        }
    } catch (const ConfigError& e) {
        std::cerr << "tomodet: config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "tomodet: data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "tomodet: numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "tomodet: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
