#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tomodet/detect/detector.hpp"
#include "tomodet/diff/ops.hpp"
#include "tomodet/train/training.hpp"

using namespace tomodet;
using namespace tomodet::detect;
using testing::random_values;
using testing::relative_error;

namespace {

DetectorConfig small_config() { return DetectorConfig{{4, 8, 16}, 32}; }

const diff::Shape kPatchShape{1, 16, 32, 32};

// 32x32x16 HU volumes at 1x1x2 mm: lung background with mild noise, and for
// positives a solid sphere near the centre.
struct SphereSet {
    std::vector<ct::Volume> images;
    std::vector<train::DetectorSample> samples;
};

SphereSet make_sphere_set(std::size_t count, std::uint64_t seed)
{
    SphereSet set;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 30.0);
    std::uniform_real_distribution<double> radius(2.0, 6.0), shift(-4.0, 4.0);
    set.images.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto v = ct::Volume::centered({32, 32, 16}, {1.0, 1.0, 2.0}, ct::Unit::hu);
        const int label = static_cast<int>(i % 2);
        const double r = radius(rng), cx = shift(rng), cy = shift(rng), cz = shift(rng);
        for (std::size_t z = 0; z < 16; ++z)
            for (std::size_t y = 0; y < 32; ++y)
                for (std::size_t x = 0; x < 32; ++x) {
                    const double dx = v.position(0, x) - cx, dy = v.position(1, y) - cy, dz = v.position(2, z) - cz;
                    const bool inside = label == 1 && dx * dx + dy * dy + dz * dz <= r * r;
                    v.at(x, y, z) = (inside ? 0.0 : -800.0) + noise(rng);
                }
        set.images.push_back(std::move(v));
        sampling::PatchSpec spec;
        spec.scan_id = "s" + std::to_string(i);
        spec.label = label;
        set.samples.push_back({i, spec});
    }
    return set;
}

} // namespace

TEST_CASE("detector output is a probability")
{
    const auto cfg = small_config();
    std::mt19937_64 rng(1);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto eta = make_detector_params(cfg, seed).frozen();
        auto x = diff::Tensor::constant(kPatchShape, random_values(16 * 32 * 32, rng, 0.0, 1.2));
        const double p = detector_probability(x, eta, cfg).item();
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("layer extents shrink to a single voxel")
{
    const auto e = layer_extents(DetectorConfig{});
    CHECK(e[0] == std::array<std::size_t, 3>{16, 32, 32});
    CHECK(e[3] == std::array<std::size_t, 3>{2, 4, 4});
    CHECK(e[4] == std::array<std::size_t, 3>{1, 1, 1});

    // The network's own graph agrees.
    const auto cfg = small_config();
    const auto eta = make_detector_params(cfg, 0).frozen();
    CHECK(detector_logit(diff::Tensor::zeros(kPatchShape), eta, cfg).shape() == diff::Shape{1});
}

TEST_CASE("detector rejects other patch shapes")
{
    const auto cfg = small_config();
    const auto eta = make_detector_params(cfg, 0).frozen();
    CHECK_THROWS_AS(detector_logit(diff::Tensor::zeros({1, 16, 32, 31}), eta, cfg), std::invalid_argument);
    CHECK_THROWS_AS(detector_logit(diff::Tensor::zeros({1, 32, 32, 16}), eta, cfg), std::invalid_argument);
    sampling::Patch wrong;
    wrong.values.assign(100, 0.0);
    CHECK_THROWS_AS(detect_patch(wrong, make_detector_params(cfg, 0), cfg), std::invalid_argument);
}

TEST_CASE("parameters carry the det. prefix and the documented shapes")
{
    const auto eta = make_detector_params(DetectorConfig{}, 3);
    CHECK(eta.partition() == diff::Partition::detector);
    for (const auto& [name, t] : eta) CHECK(name.rfind("det.", 0) == 0);
    CHECK(eta.at("det.conv1.weight").shape() == diff::Shape{32, 1, 3, 3, 3});
    CHECK(eta.at("det.conv3.weight").shape() == diff::Shape{128, 64, 3, 3, 3});
    CHECK(eta.at("det.head.weight").shape() == diff::Shape{256, 128, 2, 4, 4});
    CHECK(eta.at("det.out.weight").shape() == diff::Shape{1, 256, 1, 1, 1});
    CHECK(eta.at("det.prelu2.alpha").data()[0] == 0.25);
}

TEST_CASE("input gradient matches finite differences on sampled voxels")
{
    const auto cfg = small_config();
    const auto eta = make_detector_params(cfg, 5).frozen();
    std::mt19937_64 rng(5);
    auto x = diff::Tensor::parameter(kPatchShape, random_values(16 * 32 * 32, rng, 0.0, 1.2));
    const int label[] = {1};
    auto loss = [&] { return diff::cross_entropy(detector_probability(x, eta, cfg), label); };
    diff::backward(loss());
    const std::vector<double> grad(x.grad().begin(), x.grad().end());
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    for (int k = 0; k < 10; ++k) {
        // Bias the pick towards voxels that influence the output.
        std::size_t i = pick(rng);
        for (int tries = 0; tries < 50 && grad[i] == 0.0; ++tries) i = pick(rng);
        const double fd = testing::central_difference(x, i, [&] { return loss().item(); });
        INFO("voxel " << i << " analytic " << grad[i] << " fd " << fd);
        CHECK(relative_error(grad[i], fd) < 1e-3);
    }
}

TEST_CASE("intensity normalisation")
{
    CHECK(normalize_hu(-1000.0) == doctest::Approx(0.0));
    CHECK(normalize_hu(400.0) == doctest::Approx(1.0));
    CHECK(normalize_hu(5000.0) == kNormMax);
    CHECK(normalize_hu(-3000.0) == 0.0);
    CHECK(normalize_mu(ct::kMuWater) == doctest::Approx(normalize_hu(0.0)));
    CHECK(normalize_mu(0.0) == 0.0);
}

TEST_CASE("smoke training separates spheres from background")
{
    const auto cfg = small_config();
    auto set = make_sphere_set(200, 11);
    std::vector<const ct::Volume*> images;
    for (const auto& v : set.images) images.push_back(&v);
    auto eta = make_detector_params(cfg, 11);
    train::DetectorTrainConfig tc;
    tc.seed = 11;
    const auto trace = train::train_detector(images, set.samples, eta, cfg, tc);
    CHECK(trace.size() == 10 * 4);
    const auto m = train::evaluate_detector(images, set.samples, eta, cfg);
    MESSAGE("smoke training accuracy " << m.accuracy << " loss " << m.loss);
    CHECK(m.accuracy >= 0.95);
}
