#include "oracles.hpp"

#include "batunet/data.hpp"
#include "batunet/volume_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

using namespace batunet;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec() {
    SynthSpec s;
    s.num_samples = 4;
    s.raw_shape = {40, 40, 24};
    s.target_shape = {32, 32, 16};
    s.tumor_radius_range = {3.0, 5.0};
    s.seed = 77;
    return s;
}

SegSample mask_as_image(std::mt19937_64 &rng, Shape3 s) {
    SegSample out{VolumeD(s, 1), oracle::random_mask(rng, s, 0.3), "m"};
    for (std::size_t i = 0; i < s.voxels(); ++i)
        out.image.data()[static_cast<Eigen::Index>(i)] = out.mask.data[i];
    return out;
}

fs::path scratch(const std::string &name) {
    auto p = fs::temp_directory_path() / ("batunet_test_" + name);
    fs::remove_all(p);
    return p;
}

} // namespace

TEST_CASE("generation") {
    const auto spec = small_spec();
    SUBCASE("deterministic and well-formed") {
        const auto a = generate_dataset(spec), b = generate_dataset(spec, 3);
        REQUIRE(a.size() == 4);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].image == b[i].image);
            CHECK(a[i].mask == b[i].mask);
            CHECK(a[i].id == sample_id(i));
            CHECK(a[i].image.shape() == spec.target_shape);
            CHECK(a[i].mask.shape == spec.target_shape);
            CHECK(a[i].image.data().minCoeff() >= 0.0);
            CHECK(a[i].image.data().maxCoeff() <= 1.0);
        }
        CHECK_FALSE(a[0].image == a[1].image);
    }
    SUBCASE("one tumor per sample means every mask is non-empty") {
        auto s = spec;
        s.tumor_count_range = {1, 1};
        for (std::size_t i = 0; i < 6; ++i)
            CHECK(generate_raw_sample(s, i).mask.count() > 0);
    }
    SUBCASE("without noise every tumor voxel outshines every other voxel") {
        auto s = spec;
        s.background_noise_sigma = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            const auto raw = generate_raw_sample(s, i);
            double min_tumor = INFINITY, max_other = -INFINITY;
            for (std::size_t v = 0; v < raw.mask.voxels(); ++v) {
                const double x = raw.image.data()[static_cast<Eigen::Index>(v)];
                if (raw.mask.data[v])
                    min_tumor = std::min(min_tumor, x);
                else
                    max_other = std::max(max_other, x);
            }
            CHECK(min_tumor > max_other);
            CHECK(min_tumor == s.tumor_intensity);
        }
    }
    SUBCASE("tumor larger than the organ is a generation error") {
        auto s = spec;
        s.raw_shape = {12, 12, 12};
        s.tumor_radius_range = {5.0, 5.5};
        CHECK_THROWS_AS(generate_raw_sample(s, 0), GenerationError);
    }
    SUBCASE("invalid specs are rejected") {
        auto s = spec;
        s.tumor_radius_range = {0.5, 2.0};
        CHECK_THROWS_AS(s.validate(), InvalidInput);
        s = spec;
        s.tumor_count_range = {3, 1};
        CHECK_THROWS_AS(s.validate(), InvalidInput);
    }
}

TEST_CASE("augmentation") {
    std::mt19937_64 rng(31);
    const Shape3 cube{8, 8, 6}, slab{8, 6, 4};
    SUBCASE("identity draw leaves the sample unchanged") {
        const auto s = mask_as_image(rng, cube);
        const auto out = apply_augmentation(s, AugmentDraw{});
        CHECK(out.image == s.image);
        CHECK(out.mask == s.mask);
    }
    SUBCASE("unshifted draws permute voxels") {
        const auto s = mask_as_image(rng, cube);
        for (int k = 0; k < 4; ++k) {
            AugmentDraw d;
            d.flip = {k % 2 == 0, true, k == 3};
            d.quarter_turns = k;
            const auto out = apply_augmentation(s, d);
            CHECK(out.mask.count() == s.mask.count());
            auto a = s.image.data(), b = out.image.data();
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            CHECK((a == b).all());
        }
    }
    SUBCASE("flip twice and four quarter turns are identities") {
        const auto s = mask_as_image(rng, cube);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            AugmentDraw d;
            d.flip[axis] = true;
            CHECK(apply_augmentation(apply_augmentation(s, d), d).mask == s.mask);
        }
        AugmentDraw turn;
        turn.quarter_turns = 1;
        auto r = s;
        for (int i = 0; i < 4; ++i)
            r = apply_augmentation(r, turn);
        CHECK(r.mask == s.mask);
        CHECK_FALSE(apply_augmentation(s, turn).mask == s.mask);
    }
    SUBCASE("one quarter turn maps (z, y) to (y, n-1-z)") {
        const auto s = mask_as_image(rng, cube);
        AugmentDraw turn;
        turn.quarter_turns = 1;
        const auto out = apply_augmentation(s, turn);
        // Output p reads input rot^-1(p): source of (z, y) is (n-1-y, z).
        for (std::size_t z = 0; z < 8; ++z)
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 6; ++x)
                    CHECK(out.mask(z, y, x) == s.mask(7 - y, z, x));
    }
    SUBCASE("shift moves voxels with zero fill") {
        const auto s = mask_as_image(rng, cube);
        AugmentDraw d;
        d.shift = {2, -1, 0};
        const auto out = apply_augmentation(s, d);
        for (std::size_t z = 0; z < 8; ++z)
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 6; ++x) {
                    const long sz = long(z) - 2, sy = long(y) + 1;
                    const std::uint8_t want = (sz >= 0 && sy < 8) ? s.mask(sz, sy, x) : 0;
                    CHECK(out.mask(z, y, x) == want);
                }
    }
    SUBCASE("image and mask stay geometrically consistent under random draws") {
        for (const Shape3 shape : std::array<Shape3, 2>{cube, slab}) {
            const auto s = mask_as_image(rng, shape);
            for (std::uint64_t i = 0; i < 40; ++i) {
                Rng r = make_rng(5, {i});
                const auto draw = draw_augmentation(r, shape);
                if (shape.d != shape.h)
                    CHECK(draw.quarter_turns % 2 == 0);
                for (int v : draw.shift)
                    CHECK(std::abs(v) <= kMaxShift);
                const auto out = apply_augmentation(s, draw);
                for (std::size_t k = 0; k < shape.voxels(); ++k)
                    CHECK(out.image.data()[static_cast<Eigen::Index>(k)] == double(out.mask.data[k]));
            }
        }
    }
}

TEST_CASE("splits and batches") {
    std::vector<std::string> ten;
    for (std::size_t i = 0; i < 10; ++i)
        ten.push_back(sample_id(i));
    const auto s = split_dataset(ten, 0.8, 3);
    CHECK(s.train.size() == 8);
    CHECK(s.val.size() == 2);
    const auto again = split_dataset(ten, 0.8, 3);
    CHECK(s.train == again.train);
    CHECK(s.val == again.val);
    std::set<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    CHECK(all.size() == 10);

    std::vector<std::string> many;
    for (std::size_t i = 0; i < 123; ++i)
        many.push_back(sample_id(i));
    const auto big = split_dataset(many, 0.8, 1);
    CHECK(big.train.size() == 98);
    CHECK(big.val.size() == 25);
    CHECK_THROWS_AS(split_dataset({"only"}, 0.8, 1), InvalidInput);
    CHECK_THROWS_AS(split_dataset(ten, 1.0, 1), InvalidInput);

    std::vector<std::size_t> seven{0, 1, 2, 3, 4, 5, 6};
    const auto b = make_batches(seven, 3, 4, 1);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 3);
    CHECK(b[1].size() == 3);
    CHECK(b[2].size() == 1);
    CHECK(make_batches(seven, 3, 4, 1) == b);
    CHECK_FALSE(make_batches(seven, 3, 4, 2) == b);
    CHECK(make_batches({0, 1, 2, 3}, 4, 1, 1).size() == 1);
}

TEST_CASE("dataset directory round trip") {
    const auto spec = small_spec();
    auto samples = generate_dataset(spec);
    DatasetManifest m;
    m.spec = spec;
    m.seed = spec.seed;
    for (const auto &s : samples)
        m.ids.push_back(s.id);
    m.split = split_dataset(m.ids, 0.75, 2);
    const auto dir = scratch("dataset");
    save_dataset(dir, samples, m);
    CHECK(fs::exists(dir / "manifest.json"));
    std::size_t vol3 = 0;
    for (const auto &e : fs::directory_iterator(dir))
        vol3 += e.path().extension() == ".vol3";
    CHECK(vol3 == 2 * samples.size());

    const auto loaded = load_dataset(dir);
    CHECK(manifest_to_json(loaded.manifest) == manifest_to_json(m));
    CHECK(manifest_to_json(m).find("\"target_shape\"") != std::string::npos);
    REQUIRE(loaded.samples.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(loaded.samples[i].image == samples[i].image.cast<float>().cast<double>());
        CHECK(loaded.samples[i].mask == samples[i].mask);
    }

    // Raw import: the same files are picked up and preprocessed again.
    const auto imported = import_raw_dataset(dir, {16, 16, 8});
    REQUIRE(imported.size() == samples.size());
    CHECK(imported[0].id == samples[0].id);
    CHECK(imported[0].image.shape() == Shape3{16, 16, 8});
    fs::remove_all(dir);
}
