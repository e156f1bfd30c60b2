#include <algorithm>
#include <cmath>
#include <set>

#include "ccta/mpv.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ccta;
using oracle::tube_mpr;

namespace {

StraightenedMPR random_mpr(Rng& rng, int length = 12, int width = 9) {
    StraightenedMPR m;
    m.extraction_id = "rand";
    m.length = length;
    m.width = width;
    m.samples.resize(static_cast<std::size_t>(length) * width * width);
    for (auto& v : m.samples) v = static_cast<float>(rng.uniform(-50, 400));
    return m;
}

int half_max_width(const Tile& t, int row) {
    float peak = 0;
    for (int q = 0; q < t.cols; ++q) peak = std::max(peak, t.at(row, q));
    int n = 0;
    for (int q = 0; q < t.cols; ++q) n += t.at(row, q) >= 0.5f * peak;
    return n;
}

std::multiset<std::vector<float>> tile_multiset(const MPV& m) {
    std::multiset<std::vector<float>> s;
    for (const auto& t : m.tiles) s.insert(t.pixels);
    return s;
}

}  // namespace

TEST(Project, ZeroAngleIsColumnMaximum) {
    Rng rng(1);
    const auto m = random_mpr(rng);
    const auto t = project(m, 0);
    ASSERT_EQ(t.rows, m.length);
    ASSERT_EQ(t.cols, m.width);
    for (int i = 0; i < m.length; ++i)
        for (int j = 0; j < m.width; ++j) {
            float best = -1e9f;
            for (int k = 0; k < m.width; ++k) best = std::max(best, m.at(i, k, j));
            EXPECT_EQ(t.at(i, j), best);
        }
}

TEST(Project, SymmetricTubeSameAtRightAngles) {
    const auto m = tube_mpr(8, 31, 6);
    const auto a = project(m, 0), b = project(m, 90);
    float peak = 0, worst = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        peak = std::max(peak, a.pixels[i]);
        worst = std::max(worst, std::abs(a.pixels[i] - b.pixels[i]));
    }
    EXPECT_LT(worst, 0.02f * peak);
}

TEST(Project, StenosisHalvesProjectedWidthAtAnyAngle) {
    const auto m = tube_mpr(30, 31, 5, 0.5, 12, 18);
    for (double angle : {0.0, 30.0, 45.0, 110.0, 170.0}) {
        const auto t = project(m, angle);
        const int ref = half_max_width(t, 3);
        const int narrow = half_max_width(t, 15);
        EXPECT_NEAR(narrow, ref / 2.0, 1.0) << angle;
    }
}

TEST(Project, MonotoneUnderAddedIntensity) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = random_mpr(rng);
        const double angle = rng.uniform(0, 180);
        const auto before = project(m, angle);
        for (int n = 0; n < 30; ++n) m.samples[rng.below(m.samples.size())] += static_cast<float>(rng.uniform(0, 300));
        const auto after = project(m, angle);
        for (std::size_t i = 0; i < before.pixels.size(); ++i) EXPECT_GE(after.pixels[i], before.pixels[i]);
    }
}

TEST(Project, AngleOutOfRangeRejected) {
    const auto m = tube_mpr(4, 9, 2);
    EXPECT_THROWS_KIND(project(m, 360), InvalidArgument);
    EXPECT_THROWS_KIND(project(m, -1), InvalidArgument);
}

TEST(BuildMpv, EighteenByOneAndNineByTwo) {
    Rng rng(2);
    const auto m = random_mpr(rng, 10, 7);
    const auto tall = build_mpv(m, 18);
    EXPECT_EQ(tall.k(), 18);
    EXPECT_EQ(tall.mosaic_rows(), 18 * 10);
    EXPECT_EQ(tall.mosaic_cols(), 7);
    for (int i = 0; i < 18; ++i) {
        EXPECT_DOUBLE_EQ(tall.angles_deg[i], i * 10.0);
        EXPECT_EQ(tall.permutation[i], i);
        EXPECT_EQ(tall.tiles[i], project(m, i * 10.0));
    }
    const auto wide = build_mpv(m, 18, {9, 2});
    EXPECT_EQ(wide.mosaic_rows(), 9 * 10);
    EXPECT_EQ(wide.mosaic_cols(), 2 * 7);
    // row-major: tile 3 is block row 1, block column 1
    for (int r = 0; r < 10; ++r)
        for (int q = 0; q < 7; ++q) EXPECT_EQ(wide.pixel(10 + r, 7 + q), wide.tiles[3].at(r, q));
}

TEST(BuildMpv, SingleProjection) {
    Rng rng(3);
    const auto m = random_mpr(rng);
    const auto one = build_mpv(m, 1, {1, 1});
    ASSERT_EQ(one.k(), 1);
    EXPECT_EQ(one.pixels, project(m, 0).pixels);
}

TEST(BuildMpv, LayoutMustHoldK) {
    Rng rng(4);
    const auto m = random_mpr(rng);
    EXPECT_THROWS_KIND(build_mpv(m, 18, {9, 1}), LayoutMismatch);
    EXPECT_THROWS_KIND(build_mpv(m, 18, {4, 5}), LayoutMismatch);
    EXPECT_THROWS_KIND(build_mpv(m, 0, {1, 1}), InvalidArgument);
}

TEST(Mosaic, DisassembleRoundTrip) {
    Rng rng(6);
    const auto mpv = build_mpv(random_mpr(rng, 9, 5), 6, {3, 2});
    const auto tiles = disassemble(mpv.pixels, 3, 2, 9, 5);
    ASSERT_EQ(tiles.size(), 6u);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(tiles[i], mpv.tiles[i]);
}

TEST(Permutations, Factorial) {
    EXPECT_EQ(factorial_saturating(0), 1u);
    EXPECT_EQ(factorial_saturating(3), 6u);
    EXPECT_EQ(factorial_saturating(18), 6402373705728000ull);
    EXPECT_EQ(factorial_saturating(25), std::numeric_limits<std::uint64_t>::max());
}

TEST(Permutations, AllNonIdentityOrdersOfThree) {
    const auto p = distinct_permutations(3, 5, 11);
    std::set<std::vector<int>> got(p.begin(), p.end());
    std::set<std::vector<int>> want;
    std::vector<int> v{0, 1, 2};
    while (std::next_permutation(v.begin(), v.end())) want.insert(v);
    EXPECT_EQ(got, want);
    EXPECT_THROWS_KIND(distinct_permutations(3, 6, 11), TooManyPermutations);
    EXPECT_TRUE(distinct_permutations(18, 0, 11).empty());
}

TEST(PermuteAugment, SixDistinctConservingTiles) {
    Rng rng(8);
    const auto mpv = build_mpv(random_mpr(rng, 6, 5), 18);
    const auto out = permute_augment(mpv, 6, 99);
    ASSERT_EQ(out.size(), 6u);
    std::set<std::vector<int>> orders;
    std::vector<int> identity(18);
    std::iota(identity.begin(), identity.end(), 0);
    for (const auto& m : out) {
        EXPECT_NE(m.permutation, identity);
        orders.insert(m.permutation);
        EXPECT_EQ(tile_multiset(m), tile_multiset(mpv));
        for (int p = 0; p < 18; ++p) EXPECT_EQ(m.tiles[p], mpv.tiles[m.permutation[p]]);
        EXPECT_NE(m.pixels, mpv.pixels);
    }
    EXPECT_EQ(orders.size(), 6u);
    const auto again = permute_augment(mpv, 6, 99);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(again[i].pixels, out[i].pixels);
    EXPECT_NE(permute_augment(mpv, 6, 100)[0].permutation, out[0].permutation);
}

TEST(PermuteAugment, SixFoldOf394Sources) {
    Rng rng(9);
    const auto mpv = build_mpv(random_mpr(rng, 4, 5), 18);
    std::size_t total = 0;
    for (int source = 0; source < 394; ++source) total += permute_augment(mpv, 6, derive_seed(1, source)).size();
    EXPECT_EQ(total, 2364u);
}

TEST(RotateAugment, ZeroIsIdentityAndSeedReproducible) {
    Rng rng(10);
    const auto mpv = build_mpv(random_mpr(rng, 16, 9), 6, {6, 1});
    EXPECT_EQ(rotate_augment(mpv, 0, 5).pixels, mpv.pixels);
    EXPECT_EQ(rotate_augment(mpv, 10, 5).pixels, rotate_augment(mpv, 10, 5).pixels);
    EXPECT_NE(rotate_augment(mpv, 10, 5).pixels, mpv.pixels);
    EXPECT_THROWS_KIND(rotate_augment(mpv, 16, 5), InvalidArgument);
}

TEST(RotateAugment, SameAngleForEveryTile) {
    MPV mpv;
    Tile blob{21, 21, std::vector<float>(21 * 21)};
    for (int r = 0; r < 21; ++r)
        for (int q = 0; q < 21; ++q) blob.at(r, q) = static_cast<float>(r < 10 && q > 12 ? 300 : (r + q) % 7 * 10);
    mpv.tiles.assign(4, blob);
    mpv.layout_rows = 4;
    mpv.layout_cols = 1;
    mpv.angles_deg = {0, 45, 90, 135};
    mpv.permutation = {0, 1, 2, 3};
    assemble(mpv);
    const auto out = rotate_augment(mpv, 12, 77);
    for (int t = 1; t < 4; ++t) EXPECT_EQ(out.tiles[t], out.tiles[0]);
    EXPECT_NE(out.tiles[0], blob);
}

TEST(RotateTiles, ForwardBackRoundTripWithinResamplingLoss) {
    MPV mpv;
    Tile blob{41, 41, std::vector<float>(41 * 41)};
    for (int r = 0; r < 41; ++r)
        for (int q = 0; q < 41; ++q)
            blob.at(r, q) = static_cast<float>(400 * std::exp(-((r - 20.0) * (r - 20.0) / 40 + (q - 20.0) * (q - 20.0) / 15)));
    mpv.tiles = {blob};
    mpv.layout_rows = mpv.layout_cols = 1;
    mpv.angles_deg = {0};
    mpv.permutation = {0};
    assemble(mpv);
    const auto back = rotate_tiles(rotate_tiles(mpv, 10), -10);
    float worst = 0;
    for (std::size_t i = 0; i < blob.pixels.size(); ++i)
        worst = std::max(worst, std::abs(back.tiles[0].pixels[i] - blob.pixels[i]));
    EXPECT_LT(worst, 0.05f * 400);
}

TEST(MpvFile, PngRoundTripWithinQuantisation) {
    Rng rng(12);
    auto mpv = build_mpv(random_mpr(rng, 10, 7), 18, {9, 2});
    mpv = permute_augment(mpv, 1, 4).front();
    const auto img = encode_mpv(mpv);
    EXPECT_EQ(img.sidecar.at("K"), 18);
    EXPECT_EQ(img.sidecar.at("layout"), nlohmann::json({9, 2}));
    EXPECT_EQ(img.sidecar.at("permutation").get<std::vector<int>>(), mpv.permutation);
    EXPECT_EQ(img.sidecar.at("seed"), 4u);
    EXPECT_EQ(img.sidecar.at("extraction_id"), "rand");
    const auto back = decode_mpv(img.png, img.sidecar);
    const auto [mn, mx] = std::minmax_element(mpv.pixels.begin(), mpv.pixels.end());
    const double q = (*mx - *mn) / 65535.0;
    ASSERT_EQ(back.pixels.size(), mpv.pixels.size());
    for (std::size_t i = 0; i < mpv.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], mpv.pixels[i], q);
    EXPECT_EQ(back.k(), 18);
    EXPECT_EQ(back.angles_deg, mpv.angles_deg);

    test::TempDir d("mpv");
    write_mpv(d / "x", mpv);
    EXPECT_EQ(read_mpv(d / "x").pixels, back.pixels);
}

TEST(MpvFile, Png16BitPreservesExtremes) {
    const std::vector<std::uint16_t> gray{0, 1, 255, 256, 65534, 65535};
    int rows = 0, cols = 0;
    EXPECT_EQ(decode_png16(encode_png16(gray, 2, 3), rows, cols), gray);
    EXPECT_EQ(rows, 2);
    EXPECT_EQ(cols, 3);
    EXPECT_THROWS_KIND(decode_png16("not a png at all", rows, cols), MalformedInput);
    auto png = encode_png16(gray, 2, 3);
    png.resize(png.size() / 2);
    EXPECT_THROWS_KIND(decode_png16(png, rows, cols), MalformedInput);
}
