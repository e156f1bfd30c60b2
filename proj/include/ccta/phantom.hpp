#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ccta/core.hpp"
#include "ccta/volume.hpp"

namespace ccta {

// -----------------------------------------------------------------------------
// Vessel tree
// -----------------------------------------------------------------------------

struct Segment {
    std::string id;
    std::optional<std::string> parent_id;
    double parent_arc_mm = 0;  ///< arc position on the parent where this segment starts
    std::string name;
    std::vector<Vec3> polyline;
    std::vector<double> radius_mm;

    [[nodiscard]] double length() const { return polyline_length(polyline); }
};

struct VesselTree {
    std::string case_id;
    std::vector<Segment> segments;
    std::vector<std::string> ostia;

    [[nodiscard]] const Segment* find(const std::string& id) const {
        for (const auto& s : segments)
            if (s.id == id) return &s;
        return nullptr;
    }
    Segment* find(const std::string& id) {
        for (auto& s : segments)
            if (s.id == id) return &s;
        return nullptr;
    }
    [[nodiscard]] const Segment& at(const std::string& id) const {
        const Segment* s = find(id);
        require(s != nullptr, ErrorKind::UnknownExtraction, "unknown segment " + id);
        return *s;
    }

    [[nodiscard]] std::vector<const Segment*> children(const std::string& id) const {
        std::vector<const Segment*> out;
        for (const auto& s : segments)
            if (s.parent_id && *s.parent_id == id) out.push_back(&s);
        return out;
    }

    /// A segment ends in a terminus unless some child leaves from its final point.
    [[nodiscard]] bool has_terminus(const Segment& s) const {
        const double len = s.length();
        for (const Segment* c : children(s.id))
            if (c->parent_arc_mm >= len - 1e-6) return false;
        return true;
    }

    [[nodiscard]] std::size_t point_count() const {
        std::size_t n = 0;
        for (const auto& s : segments) n += s.polyline.size();
        return n;
    }
};

/// Point at arc length `s` along a polyline (clamped to the ends).
inline Vec3 point_at_arc(std::span<const Vec3> line, std::span<const double> arc, double s) {
    if (s <= 0) return line.front();
    if (s >= arc.back()) return line.back();
    const auto it = std::upper_bound(arc.begin(), arc.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - arc.begin());
    const double t = (s - arc[i - 1]) / std::max(arc[i] - arc[i - 1], 1e-12);
    return line[i - 1] + (line[i] - line[i - 1]) * t;
}

inline double value_at_arc(std::span<const double> values, std::span<const double> arc, double s) {
    if (s <= 0) return values.front();
    if (s >= arc.back()) return values.back();
    const auto it = std::upper_bound(arc.begin(), arc.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - arc.begin());
    const double t = (s - arc[i - 1]) / std::max(arc[i] - arc[i - 1], 1e-12);
    return values[i - 1] + (values[i] - values[i - 1]) * t;
}

/// Uniform arc-length resampling; the last sample is the polyline end.
inline std::vector<Vec3> resample_polyline(std::span<const Vec3> line, double step) {
    const auto arc = cumulative_arc(line);
    const double total = arc.back();
    const int n = std::max(1, static_cast<int>(std::ceil(total / step - 1e-9)));
    std::vector<Vec3> out;
    out.reserve(n + 1);
    for (int i = 0; i <= n; ++i) out.push_back(point_at_arc(line, arc, total * i / n));
    return out;
}

// -----------------------------------------------------------------------------
// Plaques
// -----------------------------------------------------------------------------

enum class Grade { NonObstructive, Obstructive };

inline Grade grade_for(double stenosis_pct) {
    return stenosis_pct >= 50.0 ? Grade::Obstructive : Grade::NonObstructive;
}
inline const char* to_string(Grade g) {
    return g == Grade::Obstructive ? "Obstructive" : "NonObstructive";
}

struct PlaqueAnnotation {
    std::string segment_id;
    double start_mm = 0;
    double end_mm = 0;
    double stenosis_pct = 0;
    Grade grade = Grade::NonObstructive;
};

// -----------------------------------------------------------------------------
// Tree generation
// -----------------------------------------------------------------------------

namespace detail {

struct SegmentTemplate {
    const char* id;
    const char* parent;      // nullptr for roots
    double branch_fraction;  // where on the parent the segment leaves (1 = parent end)
    double length_lo, length_hi;
    double r0, r1;           // nominal proximal/distal radius (mm)
    Vec3 start;              // roots only
    Vec3 direction;          // nominal initial heading
    bool optional;
};

// Canonical left/right topology: LMCA->{LAD->{D1,D2}, LCx->{OM1}, RI?}, RCA->{PDA}.
inline const std::vector<SegmentTemplate>& standard_left_right() {
    static const std::vector<SegmentTemplate> t = {
        {"LMCA", nullptr, 0, 9, 11, 2.0, 1.85, {22, 48, 44}, {1, -0.2, -0.2}, false},
        {"LAD", "LMCA", 1.0, 32, 36, 1.75, 0.9, {}, {0.35, -1, -0.25}, false},
        {"D1", "LAD", 0.3, 14, 18, 1.1, 0.7, {}, {1, -0.55, 0.1}, false},
        {"D2", "LAD", 0.62, 10, 14, 0.95, 0.65, {}, {1, -0.55, 0.1}, false},
        {"LCx", "LMCA", 1.0, 24, 28, 1.6, 1.0, {}, {0.25, 0.1, -1}, false},
        {"OM1", "LCx", 0.45, 12, 16, 1.0, 0.7, {}, {1, -0.2, -0.6}, false},
        {"RI", "LMCA", 1.0, 10, 14, 1.0, 0.7, {}, {1, -0.45, -0.9}, true},
        {"RCA", nullptr, 0, 36, 40, 1.8, 1.2, {16, 40, 46}, {-0.1, -0.5, -1}, false},
        {"PDA", "RCA", 0.8, 12, 16, 1.0, 0.7, {}, {1, -0.35, -0.1}, false},
    };
    return t;
}

inline const std::vector<SegmentTemplate>& single_tube() {
    static const std::vector<SegmentTemplate> t = {
        {"V", nullptr, 0, 40, 40, 1.5, 1.5, {30, 30, 10}, {0, 0, 1}, false},
    };
    return t;
}

inline Vec3 catmull_rom(Vec3 p0, Vec3 p1, Vec3 p2, Vec3 p3, double t) {
    const double t2 = t * t, t3 = t2 * t;
    return 0.5 * ((2.0 * p1) + (p2 - p0) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                  (3.0 * p1 - p0 - 3.0 * p2 + p3) * t3);
}

/// Smooth random-walk centreline of the given length, sampled every 0.25 mm.
/// Heading changes at most `max_turn` per control spacing, which bounds curvature
/// well above the reformation half-width.
inline std::vector<Vec3> random_centerline(Rng& rng, Vec3 start, Vec3 heading, double length,
                                           bool wiggle) {
    constexpr double kControlSpacing = 6.0;
    constexpr double kMaxTurn = 14.0 * M_PI / 180.0;
    const Vec3 nominal = normalized(heading);
    std::vector<Vec3> ctrl{start - nominal * kControlSpacing, start};
    Vec3 dir = nominal;
    const int n_ctrl = static_cast<int>(std::ceil(length / kControlSpacing)) + 2;
    for (int i = 0; i < n_ctrl; ++i) {
        if (wiggle) {
            const Vec3 axis = rotate_about(any_perpendicular(dir), dir, rng.uniform(0, 2 * M_PI));
            dir = normalized(rotate_about(dir, axis, rng.uniform(0, kMaxTurn)));
            // Pull gently back towards the nominal heading.
            dir = normalized(dir * 0.8 + nominal * 0.2);
        }
        ctrl.push_back(ctrl.back() + dir * kControlSpacing);
    }
    std::vector<Vec3> dense;
    constexpr int kSub = 48;
    for (std::size_t i = 1; i + 2 < ctrl.size(); ++i)
        for (int s = 0; s < kSub; ++s)
            dense.push_back(catmull_rom(ctrl[i - 1], ctrl[i], ctrl[i + 1], ctrl[i + 2],
                                        static_cast<double>(s) / kSub));
    dense.push_back(ctrl[ctrl.size() - 2]);
    // Truncate at the requested length, then resample.
    const auto arc = cumulative_arc(dense);
    std::vector<Vec3> cut;
    for (std::size_t i = 0; i < dense.size() && arc[i] < length; ++i) cut.push_back(dense[i]);
    cut.push_back(point_at_arc(dense, arc, length));
    return resample_polyline(cut, 0.25);
}

inline Vec3 tangent_at_arc(const Segment& s, double a) {
    const auto arc = cumulative_arc(s.polyline);
    const double lo = std::max(0.0, a - 0.5), hi = std::min(arc.back(), a + 0.5);
    return normalized(point_at_arc(s.polyline, arc, hi) - point_at_arc(s.polyline, arc, lo));
}

/// Rejects trees that leave the 60 mm box or bring distinct vessels too close.
inline bool acceptable(const VesselTree& tree, Vec3 box_lo, double box_size) {
    Vec3 lo{1e9, 1e9, 1e9}, hi{-1e9, -1e9, -1e9};
    for (const auto& s : tree.segments)
        for (std::size_t i = 0; i < s.polyline.size(); ++i) {
            const Vec3 p = s.polyline[i];
            const double r = s.radius_mm[i];
            lo = {std::min(lo.x, p.x - r), std::min(lo.y, p.y - r), std::min(lo.z, p.z - r)};
            hi = {std::max(hi.x, p.x + r), std::max(hi.y, p.y + r), std::max(hi.z, p.z + r)};
        }
    for (int a = 0; a < 3; ++a)
        if (lo[a] < box_lo[a] || hi[a] > box_lo[a] + box_size) return false;

    // Two segments may approach each other only around a junction they share:
    // parent and child at the child's origin, or siblings leaving the same point.
    constexpr double kJunctionZone = 9.0;
    constexpr double kClearance = 1.5;
    auto shared_junctions = [&](const Segment& a, const Segment& b) {
        std::vector<Vec3> out;
        auto joins = [](const Segment& child, const Segment& other) {
            if (!child.parent_id) return false;
            if (*child.parent_id == other.id) return true;
            return other.parent_id == child.parent_id &&
                   distance(other.polyline.front(), child.polyline.front()) < 1e-6;
        };
        if (joins(a, b)) out.push_back(a.polyline.front());
        if (joins(b, a)) out.push_back(b.polyline.front());
        return out;
    };
    for (std::size_t a = 0; a < tree.segments.size(); ++a)
        for (std::size_t b = a + 1; b < tree.segments.size(); ++b) {
            const auto& A = tree.segments[a];
            const auto& B = tree.segments[b];
            const auto junctions = shared_junctions(A, B);
            auto near_junction = [&](Vec3 p) {
                for (Vec3 j : junctions)
                    if (distance(p, j) < kJunctionZone) return true;
                return false;
            };
            for (std::size_t i = 0; i < A.polyline.size(); i += 2) {
                if (near_junction(A.polyline[i])) continue;
                for (std::size_t j = 0; j < B.polyline.size(); j += 2) {
                    if (near_junction(B.polyline[j])) continue;
                    if (distance(A.polyline[i], B.polyline[j]) <
                        A.radius_mm[i] + B.radius_mm[j] + kClearance)
                        return false;
                }
            }
        }
    return true;
}

inline VesselTree build_from_template(const std::vector<SegmentTemplate>& tmpl, Rng& rng,
                                      bool wiggle) {
    VesselTree tree;
    for (const auto& t : tmpl) {
        const bool include = !t.optional || rng.uniform() < 0.5;
        // Draw every random number regardless of inclusion so later segments do not shift.
        const double length = rng.uniform(t.length_lo, t.length_hi);
        const double r0 = t.r0 * rng.uniform(0.95, 1.05);
        const double r1 = std::min(r0, t.r1 * rng.uniform(0.95, 1.05));
        Rng shape(rng.next());
        if (!include) continue;

        Segment seg;
        seg.id = t.id;
        seg.name = t.id;
        Vec3 start = t.start;
        Vec3 heading = t.direction;
        if (t.parent) {
            const Segment& parent = tree.at(t.parent);
            const double plen = parent.length();
            seg.parent_id = parent.id;
            seg.parent_arc_mm = t.branch_fraction >= 1.0 ? plen : t.branch_fraction * plen;
            const auto arc = cumulative_arc(parent.polyline);
            start = point_at_arc(parent.polyline, arc, seg.parent_arc_mm);
            // Blend the nominal heading with the parent tangent so branches leave smoothly.
            const Vec3 tangent = tangent_at_arc(parent, seg.parent_arc_mm);
            heading = normalized(normalized(t.direction) * 0.75 + tangent * 0.25);
        } else {
            tree.ostia.push_back(seg.id);
        }
        seg.polyline = random_centerline(shape, start, heading, length, wiggle);
        if (t.parent) seg.polyline.front() = start;
        const auto arc = cumulative_arc(seg.polyline);
        const double total = arc.back();
        for (double s : arc) seg.radius_mm.push_back(r0 + (r1 - r0) * s / total);
        tree.segments.push_back(std::move(seg));
    }
    return tree;
}

}  // namespace detail

inline const std::vector<std::string>& known_templates() {
    static const std::vector<std::string> names{"standard-left-right", "single-tube"};
    return names;
}

/// Nominal ostium positions of a template; usable as tracking seeds.
inline std::vector<Vec3> template_ostia(const std::string& name) {
    const auto& tmpl = name == "single-tube" ? detail::single_tube()
                       : name == "standard-left-right"
                           ? detail::standard_left_right()
                           : throw Error(ErrorKind::UnknownTemplate, name);
    std::vector<Vec3> out;
    for (const auto& t : tmpl)
        if (!t.parent) out.push_back(t.start);
    return out;
}

/// Deterministic coronary tree for (seed, template). The whole tree (radii
/// included) fits the 60 mm cube starting at (2,2,2) mm.
inline VesselTree generate_tree(std::uint64_t seed, const std::string& template_name) {
    const bool tube = template_name == "single-tube";
    require(tube || template_name == "standard-left-right", ErrorKind::UnknownTemplate,
            "unknown topology template '" + template_name + "'");
    const auto& tmpl = tube ? detail::single_tube() : detail::standard_left_right();
    for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
        Rng rng(derive_seed(seed, attempt));
        VesselTree tree = detail::build_from_template(tmpl, rng, !tube);
        if (detail::acceptable(tree, {2, 2, 2}, 60.0)) return tree;
    }
    throw Error(ErrorKind::InvalidArgument, "could not generate a valid tree for seed");
}

// -----------------------------------------------------------------------------
// Plaque placement
// -----------------------------------------------------------------------------

/// Cosine-shaped focal narrowing; 1 at the span centre, 0 at its ends.
inline double plaque_profile(double s, const PlaqueAnnotation& p) {
    if (s <= p.start_mm || s >= p.end_mm) return 0.0;
    const double u = (s - p.start_mm) / (p.end_mm - p.start_mm);
    return 0.5 * (1.0 - std::cos(2.0 * M_PI * u));
}

/// Places `count` non-overlapping plaques on segments that end in a terminus
/// (segments such as the LMCA, which only feed branches, are not used).
/// Spans start on a 0.25 mm arc grid matching the vertex spacing, so the
/// narrowest point sits within a fraction of a step of a vertex.
/// `existing` plaques are respected for overlap but not returned.
inline std::pair<VesselTree, std::vector<PlaqueAnnotation>> place_plaques(
    VesselTree tree, int count, std::pair<int, int> stenosis_range, std::uint64_t seed,
    const std::vector<PlaqueAnnotation>& existing = {}) {
    const auto [lo, hi] = stenosis_range;
    require(count >= 0, ErrorKind::InvalidArgument, "plaque count must be >= 0");
    require(1 <= lo && lo <= hi && hi <= 99, ErrorKind::InvalidArgument,
            "stenosis range must satisfy 1 <= lo <= hi <= 99");
    std::vector<PlaqueAnnotation> placed;
    if (count == 0) return {std::move(tree), placed};

    constexpr double kGrid = 0.25;
    constexpr double kEndMargin = 1.5;
    constexpr double kGap = 1.0;
    std::vector<std::size_t> hosts;
    for (std::size_t i = 0; i < tree.segments.size(); ++i)
        if (tree.has_terminus(tree.segments[i]) && tree.segments[i].length() >= 2 * kEndMargin + 3.0)
            hosts.push_back(i);
    require(!hosts.empty(), ErrorKind::TreeTooSmall, "no segment can host a plaque");

    Rng rng(seed);
    std::vector<PlaqueAnnotation> all = existing;
    for (int n = 0; n < count; ++n) {
        bool ok = false;
        for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
            const Segment& seg = tree.segments[hosts[rng.below(hosts.size())]];
            const double len = seg.length();
            const int half_cells = 6 + static_cast<int>(rng.below(7));  // 3..6 mm spans
            const double span = 2 * half_cells * kGrid;
            const int first = static_cast<int>(std::ceil(kEndMargin / kGrid));
            const int last = static_cast<int>(std::floor((len - kEndMargin - span) / kGrid));
            if (last < first) continue;
            const double start = (first + static_cast<int>(rng.below(last - first + 1))) * kGrid;
            PlaqueAnnotation p{seg.id, start, start + span, 0, Grade::NonObstructive};
            const bool overlaps = std::any_of(all.begin(), all.end(), [&](const auto& q) {
                return q.segment_id == p.segment_id && p.start_mm < q.end_mm + kGap &&
                       q.start_mm < p.end_mm + kGap;
            });
            if (overlaps) continue;
            p.stenosis_pct = lo + static_cast<int>(rng.below(hi - lo + 1));
            p.grade = grade_for(p.stenosis_pct);
            all.push_back(p);
            placed.push_back(p);
            ok = true;
        }
        require(ok, ErrorKind::TreeTooSmall,
                "tree cannot host " + std::to_string(count) + " non-overlapping plaques");
    }

    for (const auto& p : placed) {
        Segment& seg = *tree.find(p.segment_id);
        const auto arc = cumulative_arc(seg.polyline);
        for (std::size_t i = 0; i < arc.size(); ++i)
            seg.radius_mm[i] *= 1.0 - (p.stenosis_pct / 100.0) * plaque_profile(arc[i], p);
    }
    return {std::move(tree), placed};
}

// -----------------------------------------------------------------------------
// Rasterization
// -----------------------------------------------------------------------------

constexpr double kLumenIntensity = 400.0;
constexpr double kDefaultNoiseSigma = 20.0;

/// Lumen signal 400 inside the local radius with a linear 1-voxel ramp centred on
/// the wall (so the half-maximum contour sits exactly on the radius), plus noise.
inline Volume rasterize_volume(const VesselTree& tree, std::array<int, 3> dims,
                               std::array<double, 3> spacing, double noise_sigma,
                               std::uint64_t seed) {
    for (int a = 0; a < 3; ++a)
        require(dims[a] > 0 && spacing[a] > 0, ErrorKind::InvalidArgument, "bad grid");
    Volume vol(dims, spacing);
    for (const auto& s : tree.segments)
        for (std::size_t i = 0; i < s.polyline.size(); ++i)
            require(vol.contains(s.polyline[i]), ErrorKind::OutOfBounds,
                    "segment " + s.id + " leaves the volume");

    const double ramp = std::min({spacing[0], spacing[1], spacing[2]});
    for (const auto& s : tree.segments) {
        for (std::size_t i = 0; i + 1 < s.polyline.size() || (s.polyline.size() == 1 && i == 0);
             ++i) {
            const Vec3 a = s.polyline[i];
            const Vec3 b = s.polyline[std::min(i + 1, s.polyline.size() - 1)];
            const double ra = s.radius_mm[i];
            const double rb = s.radius_mm[std::min(i + 1, s.polyline.size() - 1)];
            const double reach = std::max(ra, rb) + ramp;
            int lo[3], hi[3];
            for (int ax = 0; ax < 3; ++ax) {
                const double mn = std::min(a[ax], b[ax]) - reach;
                const double mx = std::max(a[ax], b[ax]) + reach;
                lo[ax] = std::max(0, static_cast<int>(std::floor(mn / spacing[ax])));
                hi[ax] = std::min(dims[ax] - 1, static_cast<int>(std::ceil(mx / spacing[ax])));
            }
            for (int k = lo[2]; k <= hi[2]; ++k)
                for (int j = lo[1]; j <= hi[1]; ++j)
                    for (int ii = lo[0]; ii <= hi[0]; ++ii) {
                        double t;
                        const double d = point_segment_distance(vol.to_mm(ii, j, k), a, b, &t);
                        const double r = ra + (rb - ra) * t;
                        const double w = std::clamp((r - d) / ramp + 0.5, 0.0, 1.0);
                        float& v = vol.at(ii, j, k);
                        v = std::max(v, static_cast<float>(kLumenIntensity * w));
                    }
        }
    }
    if (noise_sigma > 0) {
        Rng rng(seed);
        for (float& v : vol.voxels) v += static_cast<float>(noise_sigma * rng.normal());
    }
    return vol;
}

// -----------------------------------------------------------------------------
// Cohorts
// -----------------------------------------------------------------------------

struct CohortSpec {
    int n_cases = 100;
    double prevalence = 0.28;
    double obstructive_fraction = 6.0 / 28.0;
    std::uint64_t seed = 1;
    double noise_sigma = kDefaultNoiseSigma;
    std::string template_name = "standard-left-right";
    std::array<int, 3> dims{128, 128, 128};
    std::array<double, 3> spacing_mm{0.5, 0.5, 0.5};
    std::pair<int, int> nonobstructive_range{30, 49};
    std::pair<int, int> obstructive_range{50, 80};
    int max_plaques = 2;

    void validate() const {
        require(n_cases >= 0, ErrorKind::InvalidArgument, "n_cases must be >= 0");
        require(prevalence >= 0 && prevalence <= 1, ErrorKind::InvalidArgument,
                "prevalence must be in [0,1]");
        require(obstructive_fraction >= 0 && obstructive_fraction <= 1, ErrorKind::InvalidArgument,
                "obstructive_fraction must be in [0,1]");
        require(noise_sigma >= 0, ErrorKind::InvalidArgument, "noise_sigma must be >= 0");
        require(max_plaques >= 1, ErrorKind::InvalidArgument, "max_plaques must be >= 1");
        require(nonobstructive_range.second < 50 && obstructive_range.first >= 50,
                ErrorKind::InvalidArgument, "stenosis ranges must straddle 50%");
    }

    [[nodiscard]] int n_diseased() const {
        return static_cast<int>(std::lround(n_cases * prevalence));
    }
    [[nodiscard]] int n_obstructive() const {
        return static_cast<int>(std::lround(obstructive_fraction * n_diseased()));
    }
};

inline nlohmann::json to_json(const CohortSpec& s) {
    return {{"n_cases", s.n_cases},
            {"prevalence", s.prevalence},
            {"obstructive_fraction", s.obstructive_fraction},
            {"seed", s.seed},
            {"noise_sigma", s.noise_sigma},
            {"template", s.template_name},
            {"dims", s.dims},
            {"spacing_mm", s.spacing_mm},
            {"nonobstructive_range", {s.nonobstructive_range.first, s.nonobstructive_range.second}},
            {"obstructive_range", {s.obstructive_range.first, s.obstructive_range.second}},
            {"max_plaques", s.max_plaques}};
}

inline CohortSpec cohort_spec_from_json(const nlohmann::json& j) {
    CohortSpec s;
    s.n_cases = j.value("n_cases", s.n_cases);
    s.prevalence = j.value("prevalence", s.prevalence);
    s.obstructive_fraction = j.value("obstructive_fraction", s.obstructive_fraction);
    s.seed = j.value("seed", s.seed);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.template_name = j.value("template", s.template_name);
    s.dims = j.value("dims", s.dims);
    s.spacing_mm = j.value("spacing_mm", s.spacing_mm);
    if (j.contains("nonobstructive_range")) {
        const auto r = j.at("nonobstructive_range").get<std::array<int, 2>>();
        s.nonobstructive_range = {r[0], r[1]};
    }
    if (j.contains("obstructive_range")) {
        const auto r = j.at("obstructive_range").get<std::array<int, 2>>();
        s.obstructive_range = {r[0], r[1]};
    }
    s.max_plaques = j.value("max_plaques", s.max_plaques);
    s.validate();
    return s;
}

enum class IntendedClass { Normal, NonObstructive, Obstructive };

struct PhantomCase {
    std::string case_id;
    VesselTree tree;
    std::vector<PlaqueAnnotation> plaques;
    Volume volume;
};

inline std::string case_id_for(int index) {
    std::ostringstream os;
    os << "case" << std::setw(4) << std::setfill('0') << index;
    return os.str();
}

/// Class of every case, in index order. Diseased/obstructive counts follow
/// round() of the CohortSpec fractions; positions are a seeded shuffle.
inline std::vector<IntendedClass> cohort_classes(const CohortSpec& spec) {
    spec.validate();
    const int nd = spec.n_diseased();
    const int no = spec.n_obstructive();
    std::vector<IntendedClass> classes;
    classes.insert(classes.end(), no, IntendedClass::Obstructive);
    classes.insert(classes.end(), nd - no, IntendedClass::NonObstructive);
    classes.insert(classes.end(), spec.n_cases - nd, IntendedClass::Normal);
    Rng rng(derive_seed(spec.seed, 0xC1A55ULL));
    rng.shuffle(classes);
    return classes;
}

/// One case of a cohort; independent of every other case.
inline PhantomCase generate_case(const CohortSpec& spec, int index, IntendedClass cls,
                                 bool with_volume = true) {
    const std::uint64_t case_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(index));
    PhantomCase c;
    c.case_id = case_id_for(index);
    c.tree = generate_tree(derive_seed(case_seed, 1), spec.template_name);
    c.tree.case_id = c.case_id;
    Rng rng(derive_seed(case_seed, 2));
    const int extra = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_plaques)));
    if (cls == IntendedClass::Obstructive) {
        auto [t1, p1] = place_plaques(std::move(c.tree), 1, spec.obstructive_range,
                                      derive_seed(case_seed, 3));
        auto [t2, p2] = place_plaques(std::move(t1), extra, spec.nonobstructive_range,
                                      derive_seed(case_seed, 4), p1);
        c.tree = std::move(t2);
        c.plaques = std::move(p1);
        c.plaques.insert(c.plaques.end(), p2.begin(), p2.end());
    } else if (cls == IntendedClass::NonObstructive) {
        auto [t, p] = place_plaques(std::move(c.tree), 1 + extra, spec.nonobstructive_range,
                                    derive_seed(case_seed, 3));
        c.tree = std::move(t);
        c.plaques = std::move(p);
    }
    if (with_volume)
        c.volume = rasterize_volume(c.tree, spec.dims, spec.spacing_mm, spec.noise_sigma,
                                    derive_seed(case_seed, 5));
    return c;
}

/// Whole cohort in memory. Each case draws from its own (seed, index) stream,
/// so the result does not depend on `workers`.
inline std::vector<PhantomCase> generate_cohort(const CohortSpec& spec, unsigned workers = 1) {
    const auto classes = cohort_classes(spec);
    std::vector<PhantomCase> out(classes.size());
    workers = std::max(1u, workers);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < classes.size(); i += workers)
                    out[i] = generate_case(spec, static_cast<int>(i), classes[i]);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// -----------------------------------------------------------------------------
// Serialization
// -----------------------------------------------------------------------------

inline nlohmann::json to_json(const Segment& s) {
    nlohmann::json pts = nlohmann::json::array();
    for (Vec3 p : s.polyline) pts.push_back({p.x, p.y, p.z});
    nlohmann::json j{{"id", s.id},
                     {"name", s.name},
                     {"parent_arc_mm", s.parent_arc_mm},
                     {"polyline", pts},
                     {"radius_mm", s.radius_mm}};
    j["parent_id"] = s.parent_id ? nlohmann::json(*s.parent_id) : nlohmann::json(nullptr);
    return j;
}

inline Segment segment_from_json(const nlohmann::json& j) {
    Segment s;
    s.id = j.at("id").get<std::string>();
    s.name = j.value("name", s.id);
    if (!j.at("parent_id").is_null()) s.parent_id = j.at("parent_id").get<std::string>();
    s.parent_arc_mm = j.value("parent_arc_mm", 0.0);
    for (const auto& p : j.at("polyline")) s.polyline.push_back({p[0], p[1], p[2]});
    s.radius_mm = j.at("radius_mm").get<std::vector<double>>();
    return s;
}

inline nlohmann::json to_json(const PlaqueAnnotation& p) {
    return {{"segment_id", p.segment_id},
            {"span_mm", {p.start_mm, p.end_mm}},
            {"stenosis_pct", p.stenosis_pct},
            {"grade", to_string(p.grade)}};
}

inline PlaqueAnnotation plaque_from_json(const nlohmann::json& j) {
    PlaqueAnnotation p;
    p.segment_id = j.at("segment_id").get<std::string>();
    p.start_mm = j.at("span_mm")[0].get<double>();
    p.end_mm = j.at("span_mm")[1].get<double>();
    p.stenosis_pct = j.at("stenosis_pct").get<double>();
    p.grade = grade_for(p.stenosis_pct);
    return p;
}

inline nlohmann::json to_json(const VesselTree& t) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : t.segments) segs.push_back(to_json(s));
    return {{"case_id", t.case_id}, {"ostia", t.ostia}, {"segments", segs}};
}

inline VesselTree tree_from_json(const nlohmann::json& j) {
    VesselTree t;
    t.case_id = j.value("case_id", std::string{});
    t.ostia = j.at("ostia").get<std::vector<std::string>>();
    for (const auto& s : j.at("segments")) t.segments.push_back(segment_from_json(s));
    return t;
}

}  // namespace ccta
