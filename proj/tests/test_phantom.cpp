#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "tomodet/phantom/phantom.hpp"
#include "tomodet/util/error.hpp"

using namespace tomodet;
using namespace tomodet::phantom;

namespace {

PhantomSpec small_spec(std::uint64_t seed)
{
    PhantomSpec s;
    s.extents = {96, 96, 24};
    s.seed = seed;
    s.nodule_count = {2, 4};
    s.nodule_diameter = {4.0, 12.0};
    return s;
}

std::filesystem::path temp_dir(const char* name)
{
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(dir);
    return dir;
}

std::array<std::size_t, 3> voxel_of(const ct::Volume& v, const std::array<double, 3>& mm)
{
    std::array<std::size_t, 3> out{};
    for (std::size_t a = 0; a < 3; ++a) out[a] = static_cast<std::size_t>(std::lround(v.voxel_coord(a, mm[a])));
    return out;
}

} // namespace

TEST_CASE("phantom generation is deterministic in the seed")
{
    const auto a = generate_phantom(small_spec(7), "a");
    const auto b = generate_phantom(small_spec(7), "a");
    const auto c = generate_phantom(small_spec(8), "a");
    CHECK(a.hu.values == b.hu.values);
    CHECK(a.lung_mask.values == b.lung_mask.values);
    REQUIRE(a.nodules.size() == b.nodules.size());
    for (std::size_t i = 0; i < a.nodules.size(); ++i) {
        CHECK(a.nodules[i].center == b.nodules[i].center);
        CHECK(a.nodules[i].diameter == b.nodules[i].diameter);
    }
    CHECK(a.hu.values != c.hu.values);
}

TEST_CASE("a zero nodule range produces no annotations")
{
    auto s = small_spec(3);
    s.nodule_count = {0, 0};
    const auto p = generate_phantom(s, "z");
    CHECK(p.nodules.empty());
    CHECK(p.requested_nodules == 0);
}

TEST_CASE("nodule centres are nodule-valued lung voxels")
{
    std::size_t seen = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const auto p = generate_phantom(small_spec(seed), "s");
        CHECK(p.nodules.size() <= p.requested_nodules);
        for (const auto& n : p.nodules) {
            const auto v = voxel_of(p.hu, n.center);
            CHECK(std::abs(p.hu.at(v[0], v[1], v[2]) - kNoduleHu) <= 100.0);
            CHECK(p.lung_mask.at(v[0], v[1], v[2]) == 1.0);
            CHECK(n.scan_id == "s");
            CHECK(n.diameter >= 4.0);
            CHECK(n.diameter <= 12.0);
            CHECK(n.is_non_small());
            ++seen;
        }
        for (const auto& n : p.non_nodules) {
            const auto v = voxel_of(p.hu, n.center);
            CHECK(p.lung_mask.at(v[0], v[1], v[2]) == 1.0);
        }
    }
    CHECK(seen > 0);
}

TEST_CASE("HU range and mask equal the lung material set")
{
    const auto p = generate_phantom(small_spec(11), "s");
    CHECK(p.hu.unit == ct::Unit::hu);
    CHECK(p.lung_mask.unit == ct::Unit::mask);
    std::size_t lung = 0;
    for (std::size_t i = 0; i < p.hu.values.size(); ++i) {
        const double h = p.hu.values[i];
        CHECK(h >= -1000.0);
        CHECK(h <= 100.0);
        const double m = p.lung_mask.values[i];
        CHECK((m == 0.0 || m == 1.0));
        // Lung parenchyma, vessel and nodule material (with partial volume in
        // between) never coincide with air or body in this phantom.
        if (m == 1.0) {
            CHECK(h >= kLungHu - 1e-9);
            ++lung;
        } else {
            CHECK((h == kAirHu || h == kBodyHu));
        }
    }
    CHECK(lung > 1000);
}

TEST_CASE("rasterised nodule volume honours the annotated diameter")
{
    auto s = small_spec(21);
    s.nodule_diameter = {6.0, 12.0};
    s.nodule_count = {3, 3};
    // Without vessels every non-lung voxel near a nodule is nodule material.
    s.vessels_per_lung = 0;
    std::size_t checked = 0;
    for (std::uint64_t seed = 21; seed < 25; ++seed) {
        s.seed = seed;
        const auto p = generate_phantom(s, "v");
        const double voxel = p.hu.spacing[0] * p.hu.spacing[1] * p.hu.spacing[2];
        for (const auto& n : p.nodules) {
            // Nodule fraction of each voxel near the centre, recovered from
            // the HU mix against the lung background.
            double vol = 0.0;
            const double r = n.diameter / 2 + 2.0;
            const auto c = voxel_of(p.hu, n.center);
            const long rx = long(std::ceil(r / p.hu.spacing[0])), rz = long(std::ceil(r / p.hu.spacing[2]));
            for (long dz = -rz; dz <= rz; ++dz)
                for (long dy = -rx; dy <= rx; ++dy)
                    for (long dx = -rx; dx <= rx; ++dx) {
                        const long x = long(c[0]) + dx, y = long(c[1]) + dy, z = long(c[2]) + dz;
                        if (x < 0 || y < 0 || z < 0 || x >= long(p.hu.nx()) || y >= long(p.hu.ny()) ||
                            z >= long(p.hu.nz()))
                            continue;
                        const double mm2 = std::pow(dx * p.hu.spacing[0], 2) + std::pow(dy * p.hu.spacing[1], 2) +
                                           std::pow(dz * p.hu.spacing[2], 2);
                        if (mm2 > r * r) continue;
                        const double h = p.hu.at(x, y, z);
                        vol += std::clamp((h - kLungHu) / (kNoduleHu - kLungHu), 0.0, 1.0) * voxel;
                    }
            const double expected = std::numbers::pi / 6 * std::pow(n.diameter, 3);
            INFO("diameter " << n.diameter << " volume " << vol << " expected " << expected);
            CHECK(std::abs(vol - expected) <= 0.15 * expected);
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("phantom spec validation")
{
    auto s = small_spec(1);
    s.nodule_diameter = {0.0, 5.0};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec(1);
    s.nodule_count = {3, 2};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec(1);
    s.spacing = {1.0, 0.0, 2.0};
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("annotation CSV round trip and diagnostics")
{
    const auto dir = temp_dir("tomodet_test_phantom");
    write_annotations({}, dir / "empty.csv");
    {
        std::ifstream is(dir / "empty.csv");
        std::string all((std::istreambuf_iterator<char>(is)), {});
        CHECK(all == "scan_id,x_mm,y_mm,z_mm,diameter_mm\n");
    }
    CHECK(read_annotations(dir / "empty.csv").empty());

    std::vector<Annotation> anns{{"scan001", {1.23456789, -20.5, 3.0}, 7.654321},
                                 {"scan002", {-0.000123456, 12345.6789, -7.0}, 3.0}};
    write_annotations(anns, dir / "a.csv");
    const auto back = read_annotations(dir / "a.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].scan_id == "scan001");
    CHECK(back[0].center[0] == doctest::Approx(1.23457).epsilon(1e-9));
    CHECK(back[0].diameter == doctest::Approx(7.65432).epsilon(1e-9));
    CHECK(back[1].center[0] == doctest::Approx(-0.000123456).epsilon(1e-9));
    CHECK(back[1].center[1] == doctest::Approx(12345.7).epsilon(1e-9));

    {
        std::ofstream os(dir / "bad.csv");
        os << "scan_id,x_mm,y_mm,z_mm,diameter_mm\nscan001,1,2,3,4\nscan001,1,2,3\n";
    }
    try {
        read_annotations(dir / "bad.csv");
        FAIL("expected a parse error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    {
        std::ofstream os(dir / "noheader.csv");
        os << "scan001,1,2,3,4\n";
    }
    CHECK_THROWS_AS(read_annotations(dir / "noheader.csv"), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest round trip")
{
    const auto dir = temp_dir("tomodet_test_manifest");
    std::vector<ScanRecord> scans{
        {"scan000", "train", "scans/scan000.vol", "scans/scan000.mask.vol", "scans/scan000.nodules.csv",
         "scans/scan000.non_nodules.csv", "scans/scan000.sino"},
        {"scan001", "test", "scans/scan001.vol", "scans/scan001.mask.vol", "scans/scan001.nodules.csv",
         "scans/scan001.non_nodules.csv", "scans/scan001.sino"}};
    write_manifest(scans, dir / "manifest.json");
    const auto back = read_manifest(dir / "manifest.json");
    REQUIRE(back.size() == 2);
    CHECK(back[1].id == "scan001");
    CHECK(back[1].split == "test");
    CHECK(back[0].sinogram == "scans/scan000.sino");
    CHECK(back[0].non_nodules == "scans/scan000.non_nodules.csv");
    CHECK_THROWS_AS(read_manifest(dir / "absent.json"), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("volume files carry the distinct diagnostics")
{
    const auto dir = temp_dir("tomodet_test_volume_errors");
    auto v = ct::Volume::centered({1, 1, 1}, {1, 1, 2}, ct::Unit::hu);
    v.values = {3.25};
    ct::write_volume(v, dir / "one.vol");
    CHECK(std::filesystem::file_size(dir / "one.vol") == 7 + 4 + 12 + 24 + 24 + 4);

    std::filesystem::resize_file(dir / "one.vol", std::filesystem::file_size(dir / "one.vol") - 1);
    try {
        ct::read_volume(dir / "one.vol");
        FAIL("expected truncation");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("truncated payload") != std::string::npos);
    }
    {
        std::ofstream os(dir / "magic.vol", std::ios::binary);
        os << "TDVOLX\n";
    }
    try {
        ct::read_volume(dir / "magic.vol");
        FAIL("expected magic mismatch");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}
