#include <cmath>
#include <set>

#include "ccta/geometry.hpp"
#include "ccta/phantom.hpp"
#include "ccta/tracking.hpp"
#include "support.hpp"

using namespace ccta;

namespace {

PhantomCase phantom(int index, IntendedClass cls, double noise = kDefaultNoiseSigma) {
    CohortSpec s;
    s.seed = 2024;
    s.noise_sigma = noise;
    return generate_case(s, index, cls);
}

// Tube of radius 1.5 mm along x with an optional 2 mm gap starting at `gap_at`.
Volume tube(double x0, double x1, double gap_at = 1e9) {
    Volume v({64, 48, 48}, {0.5, 0.5, 0.5});
    for (int k = 0; k < 48; ++k)
        for (int j = 0; j < 48; ++j)
            for (int i = 0; i < 64; ++i) {
                const Vec3 p = v.to_mm(i, j, k);
                if (p.x < x0 || p.x > x1) continue;
                const double r = std::hypot(p.y - 12, p.z - 12);
                const bool lumen = r <= 1.5 && (p.x < gap_at || p.x > gap_at + 2);
                v.at(i, j, k) = lumen ? 400.0f : 0.0f;
            }
    return v;
}

double mean_deviation(const Extraction& tracked, const Extraction& ref) {
    double sum = 0;
    for (const auto& p : tracked.centerline) sum += point_polyline_distance(p, ref.centerline);
    return sum / static_cast<double>(tracked.centerline.size());
}

// Arc length two root-to-leaf paths share before diverging; 0 across ostia.
double shared_prefix_mm(const Extraction& a, const Extraction& b) {
    double len = 0;
    for (std::size_t i = 0; i < std::min(a.path.size(), b.path.size()); ++i) {
        if (a.path[i].segment_id != b.path[i].segment_id) break;
        len += std::min(a.path[i].end_mm, b.path[i].end_mm) - a.path[i].start_mm;
        if (a.path[i].end_mm != b.path[i].end_mm) break;
    }
    return len;
}

}  // namespace

TEST(Tracking, RecoversEveryReferenceTerminus) {
    for (int i = 0; i < 3; ++i) {
        const auto c = phantom(i, i == 1 ? IntendedClass::Obstructive : IntendedClass::Normal);
        TrackingParams p;
        p.case_id = c.case_id;
        const auto r = track_all(c.volume, template_ostia("standard-left-right"), p);
        EXPECT_EQ(r.failed_seeds(), 0);
        const auto ref = ground_truth_extractions(c.tree);
        const auto match = match_extractions(ref, r.extractions);
        for (std::size_t k = 0; k < ref.size(); ++k) {
            ASSERT_GE(match[k], 0) << c.case_id << " " << ref[k].extraction_id;
            const auto& t = r.extractions[match[k]];
            // every tracked point lies close to the true vessel axis
            const Segment& term = c.tree.at(ref[k].terminal_segment());
            (void)term;
            double worst = 0;
            for (std::size_t q = 0; q < t.centerline.size(); q += 4)
                worst = std::max(worst, point_polyline_distance(t.centerline[q], ref[k].centerline));
            EXPECT_LT(worst, 1.5) << ref[k].extraction_id;
            for (std::size_t q = 0; q + 1 < t.centerline.size(); ++q)
                EXPECT_LE(distance(t.centerline[q], t.centerline[q + 1]), Extraction::kCenterlineStep + 1e-6);
        }
    }
}

TEST(Tracking, StraightTubeWithoutNoise) {
    const auto v = tube(3, 28);
    const auto ex = track_centerlines(v, {{3.5, 12, 12}});
    ASSERT_EQ(ex.size(), 1u);
    Extraction axis;
    axis.centerline = {{3, 12, 12}, {28, 12, 12}};
    EXPECT_LT(mean_deviation(ex[0], axis), 0.5 * v.spacing_mm[0]);
    EXPECT_GT(ex[0].length(), 20.0);
    EXPECT_FALSE(ex[0].partial);
}

TEST(Tracking, StandardTreesReachAllLeavesWithinOneVoxel) {
    for (int i = 0; i < 6; ++i) {
        const auto cls = i % 3 == 0 ? IntendedClass::Normal
                                    : (i % 3 == 1 ? IntendedClass::NonObstructive : IntendedClass::Obstructive);
        const auto c = phantom(10 + i, cls);
        const auto r = track_all(c.volume, template_ostia("standard-left-right"));
        const auto ref = ground_truth_extractions(c.tree);
        const auto match = match_extractions(ref, r.extractions);
        double sum = 0;
        std::size_t n = 0;
        for (std::size_t k = 0; k < ref.size(); ++k) {
            ASSERT_GE(match[k], 0) << c.case_id << " " << ref[k].extraction_id;
            for (const auto& p : r.extractions[match[k]].centerline) {
                sum += point_polyline_distance(p, ref[k].centerline);
                ++n;
            }
        }
        EXPECT_LT(sum / static_cast<double>(n), c.volume.spacing_mm[0]) << c.case_id;
    }
}

TEST(Tracking, NoiseFreePhantomHasReferenceTopology) {
    for (int i = 0; i < 3; ++i) {
        const auto c = phantom(20 + i, i == 0 ? IntendedClass::Normal : IntendedClass::Obstructive, 0.0);
        const auto r = track_all(c.volume, template_ostia("standard-left-right"));
        EXPECT_EQ(r.failed_seeds(), 0);
        const auto ref = ground_truth_extractions(c.tree);
        ASSERT_EQ(r.extractions.size(), ref.size()) << c.case_id;
        const auto match = match_extractions(ref, r.extractions, 2.0);
        std::set<int> distinct(match.begin(), match.end());
        ASSERT_EQ(distinct.size(), ref.size()) << c.case_id;
        ASSERT_FALSE(distinct.count(-1)) << c.case_id;
        for (std::size_t a = 0; a < ref.size(); ++a) {
            EXPECT_LT(mean_deviation(r.extractions[match[a]], ref[a]), c.volume.spacing_mm[0]);
            for (std::size_t b = a + 1; b < ref.size(); ++b)
                EXPECT_EQ(shared_prefix_mm(ref[a], ref[b]) == 0,
                          shared_prefix_mm(r.extractions[match[a]], r.extractions[match[b]]) == 0);
        }
        // rooted triplets: the pair that stays together longest must agree
        auto latest = [](const std::array<const Extraction*, 3>& e) {
            const double ab = shared_prefix_mm(*e[0], *e[1]), ac = shared_prefix_mm(*e[0], *e[2]),
                         bc = shared_prefix_mm(*e[1], *e[2]);
            return ab > ac && ab > bc ? 0 : (ac > bc ? 1 : 2);
        };
        int triplets = 0;
        for (std::size_t a = 0; a < ref.size(); ++a)
            for (std::size_t b = a + 1; b < ref.size(); ++b)
                for (std::size_t d = b + 1; d < ref.size(); ++d) {
                    const double ab = shared_prefix_mm(ref[a], ref[b]), ad = shared_prefix_mm(ref[a], ref[d]),
                                 bd = shared_prefix_mm(ref[b], ref[d]);
                    if (ab == 0 || ad == 0 || bd == 0) continue;
                    const double lo = std::min({ab, ad, bd}), hi = std::max({ab, ad, bd});
                    if (hi - lo < 1.0) continue;
                    ++triplets;
                    EXPECT_EQ(latest({&ref[a], &ref[b], &ref[d]}),
                              latest({&r.extractions[match[a]], &r.extractions[match[b]], &r.extractions[match[d]]}))
                        << c.case_id << " " << ref[a].extraction_id << "/" << ref[b].extraction_id << "/"
                        << ref[d].extraction_id;
                }
        EXPECT_GT(triplets, 0);
    }
}

TEST(Tracking, LumenGapYieldsPartialExtractionWarning) {
    const auto v = tube(3, 28, 14);
    const auto r = track_all(v, {{3.5, 12, 12}});
    ASSERT_EQ(r.failed_seeds(), 0);
    ASSERT_EQ(r.extractions.size(), 1u);
    const auto& ex = r.extractions[0];
    EXPECT_TRUE(ex.partial);
    EXPECT_NE(ex.warning.find("partial extraction"), std::string::npos);
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_LT(ex.centerline.back().x, 14.0);
    const auto whole = track_all(tube(3, 28), {{3.5, 12, 12}});
    EXPECT_TRUE(whole.warnings.empty());
    EXPECT_FALSE(whole.extractions.at(0).partial);
}

TEST(Tracking, UnconfinedLumenDiverges) {
    Volume v({64, 64, 64}, {0.5, 0.5, 0.5});
    std::fill(v.voxels.begin(), v.voxels.end(), 400.0f);
    EXPECT_THROWS_KIND(track_centerlines(v, {{16, 16, 16}}), TrackingDiverged);
}

TEST(Tracking, Deterministic) {
    const auto c = phantom(4, IntendedClass::NonObstructive);
    const auto a = track_all(c.volume, template_ostia("standard-left-right"));
    const auto b = track_all(c.volume, template_ostia("standard-left-right"));
    ASSERT_EQ(a.extractions.size(), b.extractions.size());
    for (std::size_t i = 0; i < a.extractions.size(); ++i)
        EXPECT_EQ(to_json(a.extractions[i]), to_json(b.extractions[i]));
}

TEST(Tracking, PureNoiseFailsEverySeed) {
    Volume v({128, 128, 128}, {0.5, 0.5, 0.5});
    Rng rng(9);
    for (auto& x : v.voxels) x = static_cast<float>(20.0 * rng.normal());
    const auto r = track_all(v, template_ostia("standard-left-right"));
    EXPECT_EQ(r.failed_seeds(), static_cast<int>(r.seeds.size()));
    EXPECT_TRUE(r.extractions.empty());
    EXPECT_THROWS_KIND(track_centerlines(v, template_ostia("standard-left-right")), SeedOutsideVessel);
}

TEST(Tracking, SeedOffVesselReportsFailureOnlyForThatSeed) {
    const auto c = phantom(0, IntendedClass::Normal);
    auto seeds = template_ostia("standard-left-right");
    seeds.push_back({60, 60, 60});
    const auto r = track_all(c.volume, seeds);
    EXPECT_EQ(r.failed_seeds(), 1);
    EXPECT_FALSE(r.seeds.back().ok);
    EXPECT_EQ(r.seeds.back().error_kind, ErrorKind::SeedOutsideVessel);
    EXPECT_FALSE(r.extractions.empty());
}

TEST(MatchExtractions, NearestTerminusWithinTolerance) {
    Extraction a, b, c;
    a.centerline = {{0, 0, 0}, {10, 0, 0}};
    b.centerline = {{0, 0, 0}, {10, 1, 0}};
    c.centerline = {{0, 0, 0}, {10, 3, 0}};
    const auto m = match_extractions({a}, {c, b});
    EXPECT_EQ(m[0], 1);
    const auto none = match_extractions({a}, {c}, 2.0);
    EXPECT_EQ(none[0], -1);
}
