#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "tomodet/ct/fbp.hpp"
#include "tomodet/ct/noise.hpp"
#include "tomodet/diff/ops.hpp"
#include "tomodet/recon/primal_dual.hpp"
#include "tomodet/util/parallel.hpp"

using namespace tomodet;
using namespace tomodet::recon;
using testing::random_values;
using testing::relative_error;

namespace {

ct::FanbeamGeometry micro_geometry()
{
    ct::FanbeamGeometry g;
    g.n_views = 24;
    g.n_channels = 48;
    return g;
}

struct MicroCase {
    ct::FanbeamGeometry geometry = micro_geometry();
    ct::Volume truth;
    ct::Sinogram sino;
};

// Smooth blob phantom on a 16x16 grid with nz slices.
MicroCase micro_case(std::size_t nz, std::uint64_t seed)
{
    MicroCase c;
    c.truth = ct::Volume::centered({16, 16, nz}, {1.0, 1.0, 2.0}, ct::Unit::mu);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    const double bx = u(rng), by = u(rng);
    for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                const double px = c.truth.position(0, x), py = c.truth.position(1, y);
                const double r2 = px * px + py * py, b2 = (px - bx) * (px - bx) + (py - by) * (py - by);
                c.truth.at(x, y, z) = (r2 < 49.0 ? 0.019 : 0.0) + (b2 < 6.0 ? 0.004 * (1 + z % 2) : 0.0);
            }
    c.sino = ct::forward_project(c.truth, c.geometry);
    return c;
}

PrimalDualConfig micro_config(std::size_t iterations = 2)
{
    PrimalDualConfig cfg;
    cfg.iterations = iterations;
    cfg.hidden_channels = 4;
    return cfg;
}

} // namespace

TEST_CASE("window starts and coverage")
{
    CHECK(window_starts(3, 1) == std::vector<std::size_t>{0});
    CHECK(window_starts(5, 1) == std::vector<std::size_t>{0, 1, 2});
    CHECK(slice_coverage(5, 1) == std::vector<std::size_t>{1, 2, 3, 2, 1});
    CHECK(window_starts(6, 2) == std::vector<std::size_t>{0, 2, 3});
    CHECK_THROWS(window_starts(2, 1));

    // Enumeration oracle: count windows k in [0, nz-3] that contain slice s.
    for (std::size_t nz : {3, 4, 5, 16})
        for (std::size_t s = 0; s < nz; ++s) {
            std::size_t count = 0;
            for (std::size_t k = 0; k + 3 <= nz; ++k) count += (k <= s && s < k + 3);
            CHECK(slice_coverage(nz, 1)[s] == count);
        }
}

TEST_CASE("aggregation with an identity window network is exact")
{
    std::mt19937_64 rng(1);
    for (std::size_t stride : {1, 2})
        for (std::size_t nz : {3, 4, 5, 16}) {
            const auto vol = random_values(nz * 7 * 5, rng);
            const auto out = aggregate_windows(nz, stride, [&](std::size_t k) {
                return diff::Tensor::constant({3, 7, 5}, std::vector<double>(vol.begin() + k * 35,
                                                                            vol.begin() + (k + 3) * 35));
            });
            REQUIRE(out.shape() == diff::Shape{nz, 7, 5});
            double worst = 0.0;
            for (std::size_t i = 0; i < vol.size(); ++i) worst = std::max(worst, std::abs(out.data()[i] - vol[i]));
            CHECK(worst < 1e-12);
        }
}

TEST_CASE("parameter layout: untied blocks with six-channel states")
{
    const auto cfg = micro_config(5);
    const auto theta = make_recon_params(cfg, 1);
    CHECK(theta.partition() == diff::Partition::recon);
    CHECK(theta.size() == 5 * 2 * 8);
    CHECK(theta.at("recon.dual.0.conv1.weight").shape() == diff::Shape{4, 12, 3, 3});
    CHECK(theta.at("recon.primal.4.conv1.weight").shape() == diff::Shape{4, 9, 3, 3});
    CHECK(theta.at("recon.dual.2.conv3.weight").shape() == diff::Shape{6, 4, 3, 3});
    CHECK(theta.at("recon.primal.3.prelu2.alpha").data()[0] == 0.25);
    for (const auto& [name, t] : theta) CHECK(name.rfind("recon.", 0) == 0);
    // Untied: iterations draw different kernels.
    const auto a = theta.at("recon.dual.0.conv1.weight").data();
    const auto b = theta.at("recon.dual.1.conv1.weight").data();
    CHECK(!std::equal(a.begin(), a.end(), b.begin()));
}

TEST_CASE("fresh and zero networks reproduce FBP exactly")
{
    const auto c = micro_case(5, 2);
    const PrimalDualNet net(micro_config(), c.geometry, ct::SliceGrid::of(c.truth));
    const auto fbp = ct::fbp(c.sino, c.truth, net.config().fbp_window);

    auto zero = make_recon_params(net.config(), 3);
    zero.fill_zero();
    set_thread_count(1);
    CHECK(reconstruct_volume(net, c.sino, zero, c.truth).values == fbp.values);
    // Only the output layers start at zero in a fresh network.
    CHECK(reconstruct_volume(net, c.sino, make_recon_params(net.config(), 3), c.truth).values == fbp.values);
}

TEST_CASE("a three-slice volume is a single window")
{
    const auto c = micro_case(3, 4);
    const PrimalDualNet net(micro_config(), c.geometry, ct::SliceGrid::of(c.truth));
    const auto theta = make_recon_params(net.config(), 4, false);
    const auto vol = reconstruct_volume(net, c.sino, theta, c.truth);
    const auto win = net.forward(c.sino.values, theta.frozen());
    for (std::size_t i = 0; i < vol.values.size(); ++i) CHECK(vol.values[i] == win.data()[i]);
}

TEST_CASE("forward is deterministic and rejects bad windows")
{
    const auto c = micro_case(3, 5);
    const PrimalDualNet net(micro_config(), c.geometry, ct::SliceGrid::of(c.truth));
    const auto theta = make_recon_params(net.config(), 5, false).frozen();
    const auto a = net.forward(c.sino.values, theta), b = net.forward(c.sino.values, theta);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    CHECK_THROWS_AS(net.forward(std::span<const double>(c.sino.values).first(100), theta), std::invalid_argument);
    CHECK_THROWS(reconstruct_tensor(net, micro_case(5, 5).sino.slices(0, 2), theta));
}

TEST_CASE("window gradient matches finite differences on sampled parameters")
{
    const auto c = micro_case(3, 6);
    const PrimalDualNet net(micro_config(), c.geometry, ct::SliceGrid::of(c.truth));
    auto theta = make_recon_params(net.config(), 6, false);
    auto loss = [&] {
        const auto out = net.forward(c.sino.values, theta);
        const auto t = diff::Tensor::constant({3, 16, 16}, c.truth.values);
        return diff::scale(diff::sum_squares(diff::sub(out, t)), 1.0 / (ct::kMuWater * ct::kMuWater));
    };
    theta.zero_grad();
    diff::backward(loss());

    std::vector<std::pair<std::string, std::size_t>> picks;
    std::mt19937_64 rng(6);
    std::vector<std::string> names;
    for (const auto& [name, t] : theta) names.push_back(name);
    std::uniform_int_distribution<std::size_t> pick_name(0, names.size() - 1);
    while (picks.size() < 20) {
        const auto& name = names[pick_name(rng)];
        std::uniform_int_distribution<std::size_t> pick_index(0, theta.at(name).size() - 1);
        const std::size_t i = pick_index(rng);
        if (theta.at(name).grad()[i] != 0.0) picks.emplace_back(name, i);
    }
    for (const auto& [name, i] : picks) {
        auto& t = theta.at(name);
        const double analytic = t.grad()[i];
        const double fd = testing::central_difference(t, i, [&] { return loss().item(); });
        INFO(name << "[" << i << "] analytic " << analytic << " fd " << fd);
        CHECK(relative_error(analytic, fd) < 1e-3);
    }
}

TEST_CASE("checkpointed volume gradient equals backward through the whole volume")
{
    const auto c = micro_case(5, 7);
    const PrimalDualNet net(micro_config(), c.geometry, ct::SliceGrid::of(c.truth));
    auto theta = make_recon_params(net.config(), 7, false);
    std::mt19937_64 rng(7);
    const auto upstream = random_values(5 * 256, rng);

    theta.zero_grad();
    diff::backward(diff::dot_constant(reconstruct_tensor(net, c.sino, theta), upstream));
    std::vector<std::vector<double>> full;
    for (const auto& [name, t] : theta) full.emplace_back(t.grad().begin(), t.grad().end());

    theta.zero_grad();
    backprop_volume_gradient(net, c.sino, theta, upstream);
    std::size_t k = 0;
    for (const auto& [name, t] : theta) {
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t.grad()[i] - full[k][i]) <= 1e-9 * (1 + std::abs(full[k][i])));
        ++k;
    }
}

TEST_CASE("every block parameter receives gradient for generic inputs")
{
    const auto c = micro_case(4, 8);
    const PrimalDualNet net(micro_config(), c.geometry, ct::SliceGrid::of(c.truth));
    auto theta = make_recon_params(net.config(), 8, false);
    std::mt19937_64 rng(8);
    theta.zero_grad();
    backprop_volume_gradient(net, c.sino, theta, random_values(4 * 256, rng));
    for (const auto& [name, t] : theta) {
        double m = 0.0;
        for (double g : t.grad()) m = std::max(m, std::abs(g));
        INFO(name);
        CHECK(m > 0.0);
    }
}

TEST_CASE("operator norm estimate bounds the projector")
{
    const auto c = micro_case(3, 9);
    const PrimalDualNet net(micro_config(), c.geometry, ct::SliceGrid::of(c.truth));
    std::mt19937_64 rng(9);
    for (int t = 0; t < 5; ++t) {
        auto x = random_values(256, rng);
        std::vector<double> y(net.projector().sinogram_size());
        net.projector().forward(x, y, 1);
        CHECK(testing::norm(y) <= net.operator_norm() * testing::norm(x) * (1 + 1e-6));
    }
}
