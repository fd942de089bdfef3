#include "doctest.h"

#include "triage/error.hpp"
#include "triage/preprocess.hpp"
#include "triage/volume.hpp"
#include "triage/volume_io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace triage;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / "triage_volume_tests";
    fs::create_directories(dir);
    return dir / name;
}

Volume random_volume(Shape3 s, Spacing sp, std::mt19937_64& rng, float lo = -1024, float hi = 1500)
{
    std::uniform_real_distribution<float> u(lo, hi);
    std::vector<float> d(s.size());
    for (auto& v : d) v = u(rng);
    return Volume(s, sp, std::move(d));
}

Mask random_mask(Shape3 s, double p, std::mt19937_64& rng)
{
    std::bernoulli_distribution b(p);
    std::vector<std::uint8_t> d(s.size());
    for (auto& v : d) v = b(rng);
    return Mask(s, {1, 1, 1}, std::move(d), MaskKind::Lungs);
}

void write_raw(const fs::path& p, const std::vector<float>& data, const std::string& header)
{
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size() * sizeof(float)));
    std::ofstream h(raw_header_path(p));
    h << header;
}

ErrorCode code_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::InvalidArgument;
}

} // namespace

TEST_CASE("volume invariants")
{
    CHECK_THROWS_AS(Volume({0, 4, 4}, {1, 1, 1}, {}), Error);
    CHECK_THROWS_AS(Volume({1, 2, 2}, {1, 0, 1}, std::vector<float>(4)), Error);
    CHECK_THROWS_AS(Volume({1, 2, 2}, {1, 1, 1}, std::vector<float>(3)), Error);
    CHECK_THROWS_AS(Volume({1, 1, 1}, {1, 1, 1}, {NAN}), Error);
    CHECK_FALSE(Volume::filled({2, 2, 2}, {1, 1, 1}, 3071).out_of_range_flag());
    CHECK(Volume({1, 1, 2}, {1, 1, 1}, {0.0f, 3072.0f}).out_of_range_flag());
    CHECK(Volume({1, 1, 2}, {1, 1, 1}, {-1025.0f, 0.0f}).out_of_range_flag());
    CHECK(Volume({1, 1, 1}, {1, 1, 1}, {-3000.0f}).at(0, 0, 0) == -3000.0f); // kept as loaded
    CHECK_THROWS_AS(Mask({1, 1, 2}, {1, 1, 1}, {0, 2}, MaskKind::Lesion), Error);
}

TEST_CASE("raw loader reads the declared header and applies the rescale")
{
    const auto p = scratch("a.raw");
    write_raw(p, std::vector<float>(4 * 8 * 8, 1.0f), "3\n4\n8\n8\n8\n2\n2\n");
    const Volume v = load_volume(p);
    CHECK(v.shape() == Shape3{4, 8, 8});
    CHECK(v.spacing() == Spacing{8.0, 2.0, 2.0});

    const auto q = scratch("b.raw");
    write_raw(q, {24.0f}, "3\n1\n1\n1\n1\n1\n1\nfloat32\n1\n-1024\n");
    CHECK(load_volume(q).at(0, 0, 0) == -1000.0f);
}

TEST_CASE("loader errors")
{
    CHECK(code_of([] { load_volume(scratch("missing.raw")); }) == ErrorCode::UnreadableFile);
    const auto p = scratch("nospacing.raw");
    write_raw(p, std::vector<float>(4), "3\n1\n2\n2\n0\n1\n1\n");
    CHECK(code_of([&] { load_volume(p); }) == ErrorCode::MissingSpacing);
    const auto q = scratch("flat.raw");
    write_raw(q, std::vector<float>(4), "2\n2\n2\n1\n1\n");
    CHECK(code_of([&] { load_volume(q); }) == ErrorCode::NonVolumetric);
    const auto t = scratch("short.raw");
    write_raw(t, std::vector<float>(3), "3\n1\n2\n2\n1\n1\n1\n");
    CHECK(code_of([&] { load_volume(t); }) == ErrorCode::UnreadableFile);
    const auto u = scratch("x.txt");
    std::ofstream(u) << "hello";
    CHECK(code_of([&] { load_volume(u); }) == ErrorCode::UnreadableFile);
}

TEST_CASE("save then load is the identity for both containers")
{
    std::mt19937_64 rng(5);
    for (const char* ext : {".raw", ".nii"}) {
        const Volume v = random_volume({5, 7, 9}, {2.5, 0.75, 1.25}, rng, -3000, 4000);
        const auto p = scratch(std::string("rt") + ext);
        save_volume(v, p);
        const Volume w = load_volume(p);
        CHECK(w.shape() == v.shape());
        CHECK(w.spacing() == v.spacing());
        CHECK(w.data() == v.data());
        CHECK(w.out_of_range_flag() == v.out_of_range_flag());

        const Mask m = random_mask({5, 7, 9}, 0.3, rng);
        const auto mp = scratch(std::string("rtm") + ext);
        save_mask(m, mp);
        CHECK(load_mask(mp, MaskKind::Lungs).data() == m.data());
        save_mask(Mask::zeros({3, 3, 3}, {1, 1, 1}, MaskKind::Lesion), mp);
        CHECK(load_mask(mp, MaskKind::Lesion).empty());
    }
    CHECK(code_of([] { save_volume(Volume::filled({1, 1, 1}, {1, 1, 1}, 0), "/nonexistent/dir/v.raw"); }) ==
          ErrorCode::IOFailure);
}

TEST_CASE("160 cubed volume round-trips with zero difference")
{
    std::mt19937_64 rng(6);
    const Volume v = random_volume({160, 160, 160}, {1, 1, 1}, rng);
    const auto p = scratch("big.nii");
    save_volume(v, p);
    const Volume w = load_volume(p);
    float worst = 0;
    for (std::size_t i = 0; i < v.data().size(); ++i)
        worst = std::max(worst, std::abs(v.data()[i] - w.data()[i]));
    CHECK(worst == 0.0f);
    fs::remove(p);
}

TEST_CASE("NIfTI header fields: slope, intercept, int16 storage")
{
    // Build a minimal int16 NIfTI by hand: 2x2x1, pixdim (0.5, 0.5, 3), slope 2, inter -1024.
    char hdr[352] = {};
    auto put_i32 = [&](int off, std::int32_t v) { std::memcpy(hdr + off, &v, 4); };
    auto put_i16 = [&](int off, std::int16_t v) { std::memcpy(hdr + off, &v, 2); };
    auto put_f32 = [&](int off, float v) { std::memcpy(hdr + off, &v, 4); };
    put_i32(0, 348);
    put_i16(40, 3);
    put_i16(42, 2);
    put_i16(44, 2);
    put_i16(46, 1);
    put_i16(70, 4); // DT_INT16
    put_i16(72, 16);
    put_f32(76, 1.0f);
    put_f32(80, 0.5f);
    put_f32(84, 0.5f);
    put_f32(88, 3.0f);
    put_f32(108, 352.0f);
    put_f32(112, 2.0f);
    put_f32(116, -1024.0f);
    std::memcpy(hdr + 344, "n+1\0", 4);
    const std::int16_t values[4] = {0, 12, 512, 100};
    const auto p = scratch("i16.nii");
    {
        std::ofstream f(p, std::ios::binary);
        f.write(hdr, 352);
        f.write(reinterpret_cast<const char*>(values), sizeof values);
    }
    const Volume v = load_volume(p);
    CHECK(v.shape() == Shape3{1, 2, 2});
    CHECK(v.spacing() == Spacing{3.0, 0.5, 0.5});
    CHECK(v.at(0, 0, 0) == -1024.0f);
    CHECK(v.at(0, 0, 1) == -1000.0f);
    CHECK(v.at(0, 1, 0) == 0.0f);
    CHECK(v.at(0, 1, 1) == -824.0f);
}

TEST_CASE("bounding box: examples and brute-force scan")
{
    auto one = Mask::zeros({5, 6, 7}, {1, 1, 1}, MaskKind::Lungs);
    auto d = one.data();
    d[one.shape().index(2, 3, 4)] = 1;
    auto r = bounding_box(Mask(one.shape(), one.spacing(), d, MaskKind::Lungs));
    CHECK(r.box == BoundingBox{{2, 3}, {3, 4}, {4, 5}});
    CHECK_FALSE(r.empty_mask);

    Mask full({4, 8, 8}, {1, 1, 1}, std::vector<std::uint8_t>(256, 1), MaskKind::Lungs);
    CHECK(bounding_box(full).box == BoundingBox{{0, 4}, {0, 8}, {0, 8}});

    set_warnings_enabled(false);
    auto e = bounding_box(Mask::zeros({3, 4, 5}, {1, 1, 1}, MaskKind::Lungs));
    set_warnings_enabled(true);
    CHECK(e.empty_mask);
    CHECK(e.box == BoundingBox{{0, 3}, {0, 4}, {0, 5}});

    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const Mask m = random_mask({6, 9, 11}, 0.01 + 0.02 * (trial % 3), rng);
        if (m.empty())
            continue;
        const auto b = bounding_box(m).box;
        int z0 = 99, z1 = -1, y0 = 99, y1 = -1, x0 = 99, x1 = -1;
        for (int z = 0; z < 6; ++z)
            for (int y = 0; y < 9; ++y)
                for (int x = 0; x < 11; ++x)
                    if (m.at(z, y, x)) {
                        z0 = std::min(z0, z), z1 = std::max(z1, z + 1);
                        y0 = std::min(y0, y), y1 = std::max(y1, y + 1);
                        x0 = std::min(x0, x), x1 = std::max(x1, x + 1);
                    }
        CHECK(b == BoundingBox{{z0, z1}, {y0, y1}, {x0, x1}});
    }
}

TEST_CASE("resample_axial geometry and constants")
{
    PreprocessConfig cfg;
    std::mt19937_64 rng(8);
    const Volume at2 = random_volume({3, 10, 12}, {5, 2, 2}, rng);
    const Volume same = resample_axial(at2, cfg);
    CHECK(same.shape() == at2.shape());
    for (std::size_t i = 0; i < same.data().size(); ++i)
        REQUIRE(std::abs(same.data()[i] - at2.data()[i]) < 1e-3f);

    const Volume fine = random_volume({2, 16, 16}, {3, 1, 1}, rng);
    const Volume coarse = resample_axial(fine, cfg);
    CHECK(coarse.shape() == Shape3{2, 8, 8});
    CHECK(coarse.spacing() == Spacing{3, 2, 2});

    const Volume c = resample_axial(Volume::filled({2, 33, 21}, {1, 0.7, 1.3}, -345.5f), cfg);
    for (float x : c.data())
        REQUIRE(x == doctest::Approx(-345.5f).epsilon(1e-6));

    CHECK(code_of([&] { resample_axial(Volume::filled({1, 14, 14}, {1, 1, 1}, 0), cfg); }) ==
          ErrorCode::DegenerateOutput);

    const Mask m = random_mask({2, 16, 16}, 0.4, rng);
    const Mask mr = resample_axial(m, cfg);
    for (auto v : mr.data())
        REQUIRE((v == 0 || v == 1));
}

TEST_CASE("normalize_intensity endpoints, clipping and monotonicity")
{
    PreprocessConfig cfg;
    const Volume v({1, 1, 6}, {1, 1, 1}, {-1024.0f, 300.0f, -362.0f, 2000.0f, -5000.0f, 0.0f});
    const Volume n = normalize_intensity(v, cfg);
    CHECK(n.data()[0] == 0.0f);
    CHECK(n.data()[1] == 1.0f);
    CHECK(n.data()[2] == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(n.data()[3] == 1.0f);
    CHECK(n.data()[4] == 0.0f);

    std::vector<float> ramp;
    for (int i = -3000; i <= 3500; i += 7)
        ramp.push_back(float(i));
    const Volume r = normalize_intensity(Volume({1, 1, int(ramp.size())}, {1, 1, 1}, ramp), cfg);
    for (std::size_t i = 0; i < ramp.size(); ++i) {
        REQUIRE(r.data()[i] >= 0.0f);
        REQUIRE(r.data()[i] <= 1.0f);
        if (i)
            REQUIRE(r.data()[i] >= r.data()[i - 1]);
    }
}

TEST_CASE("resampling commutes with normalization on clipped data")
{
    PreprocessConfig cfg;
    std::mt19937_64 rng(9);
    const Volume v = random_volume({2, 23, 17}, {4, 0.9, 1.4}, rng, -1024, 300);
    const Volume a = normalize_intensity(resample_axial(v, cfg), cfg);
    const Volume b = resample_axial(normalize_intensity(v, cfg), cfg);
    REQUIRE(a.shape() == b.shape());
    for (std::size_t i = 0; i < a.data().size(); ++i)
        REQUIRE(std::abs(a.data()[i] - b.data()[i]) < 1e-6);
}

TEST_CASE("crop and embed")
{
    std::vector<std::uint8_t> d(4 * 8 * 8, 0);
    const Shape3 s{4, 8, 8};
    for (int z = 1; z < 3; ++z)
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 6; ++x)
                d[s.index(z, y, x)] = 1;
    const Mask lungs(s, {1, 1, 1}, d, MaskKind::Lungs);
    std::mt19937_64 rng(10);
    const Volume v = random_volume(s, {1, 1, 1}, rng);
    const CropResult c = crop_to_lungs(v, lungs);
    CHECK(c.volume.shape() == Shape3{2, 4, 4});
    CHECK(c.volume.at(0, 0, 0) == v.at(1, 2, 2));

    const Mask back = embed(crop(lungs, c.record.box), c.record);
    CHECK(back.data() == lungs.data());

    const CropResult wide = crop_to_lungs(v, lungs, 3);
    CHECK(wide.record.box == BoundingBox{{0, 4}, {0, 8}, {0, 8}});

    Mask full(s, {1, 1, 1}, std::vector<std::uint8_t>(s.size(), 1), MaskKind::Lungs);
    CHECK(crop_to_lungs(v, full).volume.data() == v.data());

    // A random prediction restricted to the box survives the round trip exactly.
    const Mask pred = random_mask({2, 4, 4}, 0.5, rng).with_kind(MaskKind::Lesion);
    const Mask placed = embed(pred, c.record);
    CHECK(placed.shape() == s);
    CHECK(crop(placed, c.record.box).data() == pred.data());
    CHECK(placed.count() == pred.count());
}
