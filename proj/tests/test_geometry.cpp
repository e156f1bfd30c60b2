#include <cmath>

#include "ccta/geometry.hpp"
#include "ccta/phantom.hpp"
#include "support.hpp"

using namespace ccta;

namespace {

VesselTree sample_tree() { return generate_tree(3, "standard-left-right"); }

Volume tube_volume(Vec3 a, Vec3 b, double radius) {
    Volume v({64, 64, 64}, {0.5, 0.5, 0.5});
    for (int k = 0; k < 64; ++k)
        for (int j = 0; j < 64; ++j)
            for (int i = 0; i < 64; ++i) {
                const double d = point_segment_distance(v.to_mm(i, j, k), a, b);
                v.at(i, j, k) = static_cast<float>(400.0 * std::clamp(radius - d + 0.5, 0.0, 1.0));
            }
    return v;
}

}  // namespace

TEST(PathTo, RootToTerminalWithBranchArcs) {
    const auto tree = sample_tree();
    for (const auto& s : tree.segments) {
        const auto path = path_to(tree, s.id);
        ASSERT_FALSE(path.empty());
        EXPECT_FALSE(tree.at(path.front().segment_id).parent_id.has_value());
        EXPECT_EQ(path.back().segment_id, s.id);
        EXPECT_NEAR(path.back().end_mm, s.length(), 1e-9);
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            const Segment& child = tree.at(path[i + 1].segment_id);
            EXPECT_EQ(*child.parent_id, path[i].segment_id);
            EXPECT_DOUBLE_EQ(path[i].end_mm, child.parent_arc_mm);
            EXPECT_EQ(path[i].start_mm, 0.0);
        }
    }
    EXPECT_THROWS_KIND(path_to(tree, "nope"), UnknownExtraction);
}

TEST(GroundTruthExtractions, OnePerTerminusWithUniformSteps) {
    const auto tree = sample_tree();
    const auto ex = ground_truth_extractions(tree);
    std::size_t termini = 0;
    for (const auto& s : tree.segments) termini += tree.has_terminus(s);
    ASSERT_EQ(ex.size(), termini);
    for (const auto& e : ex) {
        const Segment& term = tree.at(e.extraction_id);
        EXPECT_EQ(e.terminal_segment(), term.id);
        EXPECT_LT(distance(e.centerline.back(), term.polyline.back()), 1e-6);
        const Segment& root = tree.at(e.path.front().segment_id);
        EXPECT_LT(distance(e.centerline.front(), root.polyline.front()), 1e-6);
        ASSERT_EQ(e.centerline.size(), e.radius_mm.size());
        for (std::size_t i = 0; i + 1 < e.centerline.size(); ++i)
            EXPECT_LE(distance(e.centerline[i], e.centerline[i + 1]), Extraction::kCenterlineStep + 1e-9);
        double sum = 0;
        for (const auto& p : e.path) sum += p.length();
        EXPECT_NEAR(e.length(), sum, 0.02 * sum);
        const auto off = e.element_offsets();
        EXPECT_EQ(off.front(), 0.0);
    }
}

TEST(Frames, OrthonormalAndPlanarNormalConstant) {
    std::vector<Vec3> arc;
    for (int i = 0; i <= 200; ++i) {
        const double t = i * M_PI / 200;
        arc.push_back({10 + 8 * std::cos(t), 10 + 8 * std::sin(t), 5});
    }
    const int n = mpr_length_for(polyline_length(arc), 0.5);
    const auto frames = rotation_minimizing_frames(arc, 0.5, n);
    const double n0 = dot(frames[0].normal, {0, 0, 1});
    for (const auto& f : frames) {
        EXPECT_NEAR(norm(f.tangent), 1, 1e-9);
        EXPECT_NEAR(norm(f.normal), 1, 1e-9);
        EXPECT_NEAR(dot(f.tangent, f.normal), 0, 1e-9);
        EXPECT_NEAR(dot(f.binormal, cross(f.tangent, f.normal)), 1, 1e-9);
        EXPECT_NEAR(dot(f.normal, {0, 0, 1}), n0, 1e-3);
    }
}

TEST(Straighten, MatchesDirectResampling) {
    const Vec3 a{5, 16, 16}, b{27, 16, 16};
    const auto vol = tube_volume(a, b, 1.5);
    Extraction ex;
    ex.extraction_id = "x";
    ex.centerline = resample_polyline(std::vector<Vec3>{a, b}, 0.5);
    const auto mpr = straighten(vol, ex);
    EXPECT_EQ(mpr.length, 44);
    EXPECT_EQ(mpr.width, 15);
    const auto frames = rotation_minimizing_frames(ex.centerline, 0.5, mpr.length);
    const int c = mpr.center();
    for (int i = 0; i < mpr.length; i += 7)
        for (int r = 0; r < 15; r += 3)
            for (int q = 0; q < 15; q += 2) {
                const Vec3 p = frames[i].origin + frames[i].normal * ((r - c) * 0.35) + frames[i].binormal * ((q - c) * 0.35);
                EXPECT_NEAR(mpr.at(i, r, q), vol.sample(p), 1e-3);
            }
    for (int i = 2; i < mpr.length - 2; ++i) {
        EXPECT_NEAR(mpr.at(i, c, c), 400, 1e-3);
        EXPECT_LT(mpr.at(i, 0, 0), 1.0);
    }
}

TEST(Straighten, RejectsBadInputs) {
    const auto vol = tube_volume({5, 16, 16}, {27, 16, 16}, 1.5);
    Extraction ex;
    ex.extraction_id = "x";
    ex.centerline = {{5, 16, 16}, {40, 16, 16}};
    EXPECT_THROWS_KIND(straighten(vol, ex), OutOfBounds);
    ex.centerline = {{5, 16, 16}};
    EXPECT_THROWS_KIND(straighten(vol, ex), InvalidArgument);
    ex.centerline = {{5, 16, 16}, {10, 16, 16}};
    StraightenParams p;
    p.width = 14;
    EXPECT_THROWS_KIND(straighten(vol, ex, p), InvalidArgument);
}

TEST(Mpr, FileRoundTrip) {
    test::TempDir d("mpr");
    const auto vol = tube_volume({5, 16, 16}, {27, 16, 16}, 1.5);
    Extraction ex;
    ex.extraction_id = "x";
    ex.centerline = {{5, 16, 16}, {20, 16, 16}};
    const auto mpr = straighten(vol, ex);
    write_mpr(d / "x", mpr);
    const auto back = read_mpr(d / "x");
    EXPECT_EQ(back.length, mpr.length);
    EXPECT_EQ(back.width, mpr.width);
    EXPECT_EQ(back.samples, mpr.samples);
}

TEST(Extraction, JsonRoundTrip) {
    const auto ex = ground_truth_extractions(sample_tree());
    for (const auto& e : ex) {
        const auto back = extraction_from_json(to_json(e));
        EXPECT_EQ(to_json(back), to_json(e));
    }
}
