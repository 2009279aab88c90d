#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "tomodet/app/config.hpp"
#include "tomodet/util/error.hpp"

using namespace tomodet;
using namespace tomodet::app;
using nlohmann::json;

namespace {

std::string config_error(const json& doc)
{
    try {
        apply_json(profile_config("desk"), doc).validate();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(TOMODET_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::filesystem::path fresh_dir(const char* name)
{
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("profiles")
{
    const auto full = profile_config("full");
    CHECK(full.stage2.epochs == 10);
    CHECK(full.stage2.minibatch == 50);
    CHECK(full.stage1.samples_per_scan == 50);
    CHECK(full.stage2.adam.learning_rate == 1e-4);
    CHECK(full.stage3.epochs == 1);
    CHECK(full.evaluation.n_boot == 1000);

    const auto desk = profile_config("desk");
    CHECK(desk.dataset.train == 20);
    CHECK(desk.dataset.test == 6);
    CHECK(desk.dataset.validation_count() == 2);
    CHECK(desk.geometry.n_views == 72);
    desk.validate();

    const auto tiny = profile_config("tiny");
    CHECK(tiny.dataset.train == 4);
    CHECK(tiny.dataset.test == 2);
    tiny.validate();

    CHECK_THROWS_AS(profile_config("huge"), ConfigError);
}

TEST_CASE("unknown keys and type errors name the key path")
{
    CHECK(config_error({{"geometry", {{"n_viewz", 3}}}}).find("geometry.n_viewz") != std::string::npos);
    CHECK(config_error({{"bogus", 1}}).find("bogus") != std::string::npos);
    CHECK(config_error({{"stage2", {{"epochs", "ten"}}}}).find("stage2.epochs") != std::string::npos);
    CHECK(config_error({{"stage2", {{"minibatch", 0}}}}).find("minibatch") != std::string::npos);
    CHECK(config_error({{"dataset", {{"validation_fraction", 1.0}}}}) != "");
    CHECK(config_error({{"seed", 9}}) == "");
}

TEST_CASE("resolved config echo round trips")
{
    auto c = profile_config("desk");
    c.seed = 42;
    c.evaluation.noise_levels = {ct::kNoiseless, 2e4};
    const json echo = to_json(c);
    const auto back = apply_json(profile_config("full"), echo);
    // The profile key only selects a base preset when a file is loaded.
    auto a = to_json(back), b = echo;
    a.erase("profile");
    b.erase("profile");
    CHECK(a == b);
    CHECK(back.seed == 42);
    CHECK(back.evaluation.noise_levels.size() == 2);
}

TEST_CASE("config file picks its profile")
{
    const auto dir = fresh_dir("tomodet_test_app_config");
    {
        std::ofstream os(dir / "c.json");
        os << R"({"profile": "tiny", "seed": 5})";
    }
    const auto c = load_config(dir / "c.json", "desk");
    CHECK(c.dataset.train == 4);
    CHECK(c.seed == 5);
    {
        std::ofstream os(dir / "broken.json");
        os << "{ not json";
    }
    CHECK_THROWS_AS(load_config(dir / "broken.json", "desk"), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("CLI exit codes")
{
    const auto dir = fresh_dir("tomodet_test_app_cli");
    const std::string work = " --work " + (dir / "run").string();
    CHECK(run_cli("") == 2);
    CHECK(run_cli("phantom --profile huge" + work) == 2);
    {
        std::ofstream os(dir / "bad.json");
        os << R"({"geometry": {"n_viewz": 3}})";
    }
    CHECK(run_cli("phantom --config " + (dir / "bad.json").string() + work) == 2);
    // Missing inputs are data errors.
    CHECK(run_cli("train-recon --profile tiny" + work) == 3);
    CHECK(run_cli("phantom --profile tiny" + work) == 0);
    CHECK(std::filesystem::exists(dir / "run" / "manifest.json"));
    CHECK(run_cli("finetune --profile tiny" + work) == 3);
    std::filesystem::remove_all(dir);
}
