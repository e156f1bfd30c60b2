#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccta/core.hpp"
#include "ccta/phantom.hpp"
#include "ccta/volume.hpp"

namespace ccta {

/// Arc span [start_mm, end_mm] of one tree segment visited by an extraction.
struct PathElement {
    std::string segment_id;
    double start_mm = 0;
    double end_mm = 0;

    [[nodiscard]] double length() const { return end_mm - start_mm; }
};

/// One ostium-to-terminus vessel course.
struct Extraction {
    std::string extraction_id;
    std::string case_id;
    std::string terminal_name;
    std::vector<PathElement> path;
    std::vector<Vec3> centerline;  ///< uniform steps of (at most) kCenterlineStep
    std::vector<double> radius_mm;
    bool partial = false;          ///< tracking stopped before the true terminus
    std::string warning;

    static constexpr double kCenterlineStep = 0.5;

    [[nodiscard]] double length() const { return polyline_length(centerline); }
    [[nodiscard]] const std::string& terminal_segment() const { return path.back().segment_id; }

    /// Extraction arc coordinate at which each path element begins.
    [[nodiscard]] std::vector<double> element_offsets() const {
        std::vector<double> off;
        double acc = 0;
        for (const auto& e : path) {
            off.push_back(acc);
            acc += e.length();
        }
        return off;
    }
};

// -----------------------------------------------------------------------------
// Path assembly
// -----------------------------------------------------------------------------

/// Root-to-`terminal` path; the terminal segment is covered in full, each
/// ancestor up to the arc where the next segment leaves it.
inline std::vector<PathElement> path_to(const VesselTree& tree, const std::string& terminal) {
    std::vector<PathElement> rev;
    const Segment* seg = &tree.at(terminal);
    double end = seg->length();
    for (int guard = 0; guard <= static_cast<int>(tree.segments.size()); ++guard) {
        rev.push_back({seg->id, 0.0, end});
        if (!seg->parent_id) {
            std::reverse(rev.begin(), rev.end());
            return rev;
        }
        end = seg->parent_arc_mm;
        seg = &tree.at(*seg->parent_id);
    }
    throw Error(ErrorKind::InvalidArgument, "cycle in segment parent links");
}

/// Concatenates path geometry and resamples it at a uniform step <= 0.5 mm.
inline void assemble_centerline(const VesselTree& tree, Extraction& ex) {
    std::vector<Vec3> pts;
    std::vector<double> rad;
    for (const auto& e : ex.path) {
        const Segment& s = tree.at(e.segment_id);
        const auto arc = cumulative_arc(s.polyline);
        auto push = [&](double a) {
            const Vec3 p = point_at_arc(s.polyline, arc, a);
            if (!pts.empty() && distance(pts.back(), p) < 1e-9) return;
            pts.push_back(p);
            rad.push_back(value_at_arc(s.radius_mm, arc, a));
        };
        push(e.start_mm);
        for (std::size_t i = 0; i < arc.size(); ++i)
            if (arc[i] > e.start_mm && arc[i] < e.end_mm) push(arc[i]);
        push(e.end_mm);
    }
    if (pts.size() < 2) {
        ex.centerline = pts;
        ex.radius_mm = rad;
        return;
    }
    const auto arc = cumulative_arc(pts);
    ex.centerline = resample_polyline(pts, Extraction::kCenterlineStep);
    const auto new_arc = cumulative_arc(ex.centerline);
    ex.radius_mm.clear();
    for (double a : new_arc) ex.radius_mm.push_back(value_at_arc(rad, arc, a));
}

/// Oracle-mode extractions: one per segment that ends in a terminus, with
/// geometry and radii copied from the tree.
inline std::vector<Extraction> ground_truth_extractions(const VesselTree& tree) {
    std::vector<Extraction> out;
    for (const auto& s : tree.segments) {
        if (!tree.has_terminus(s)) continue;
        Extraction ex;
        ex.extraction_id = s.id;
        ex.case_id = tree.case_id;
        ex.terminal_name = s.name;
        ex.path = path_to(tree, s.id);
        assemble_centerline(tree, ex);
        out.push_back(std::move(ex));
    }
    return out;
}

// -----------------------------------------------------------------------------
// Rotation-minimizing frames
// -----------------------------------------------------------------------------

struct Frame {
    Vec3 origin, tangent, normal, binormal;
};

/// Frames at arc positions 0, step, 2*step, ... (count `n`) along a centreline,
/// propagated with the double-reflection method so they do not twist.
inline std::vector<Frame> rotation_minimizing_frames(std::span<const Vec3> line, double step,
                                                     int n) {
    const auto arc = cumulative_arc(line);
    const double total = arc.back();
    constexpr double kTangentHalfWindow = 1.0;
    std::vector<Frame> frames(n);
    for (int i = 0; i < n; ++i) {
        const double s = std::min(i * step, total);
        const double lo = std::max(0.0, s - kTangentHalfWindow);
        const double hi = std::min(total, s + kTangentHalfWindow);
        frames[i].origin = point_at_arc(line, arc, s);
        frames[i].tangent = normalized(point_at_arc(line, arc, hi) - point_at_arc(line, arc, lo));
    }
    if (n == 0) return frames;
    frames[0].normal = any_perpendicular(frames[0].tangent);
    frames[0].binormal = cross(frames[0].tangent, frames[0].normal);
    for (int i = 0; i + 1 < n; ++i) {
        const Frame& a = frames[i];
        Frame& b = frames[i + 1];
        const Vec3 v1 = b.origin - a.origin;
        const double c1 = dot(v1, v1);
        Vec3 r_l = a.normal, t_l = a.tangent;
        if (c1 > 1e-18) {
            r_l = a.normal - v1 * (2.0 / c1 * dot(v1, a.normal));
            t_l = a.tangent - v1 * (2.0 / c1 * dot(v1, a.tangent));
        }
        const Vec3 v2 = b.tangent - t_l;
        const double c2 = dot(v2, v2);
        Vec3 r = c2 > 1e-18 ? r_l - v2 * (2.0 / c2 * dot(v2, r_l)) : r_l;
        // Re-orthogonalise against accumulated round-off.
        r = normalized(r - b.tangent * dot(r, b.tangent));
        b.normal = r;
        b.binormal = cross(b.tangent, r);
    }
    return frames;
}

// -----------------------------------------------------------------------------
// Straightened reformation
// -----------------------------------------------------------------------------

/// L cross-sections of W x W texels; sample (slice, row, col) lies at
/// origin + (row - c) * spacing * normal + (col - c) * spacing * binormal.
struct StraightenedMPR {
    std::string extraction_id;
    int length = 0;  ///< L
    int width = 0;   ///< W (odd)
    double in_plane_spacing_mm = 0.35;
    double step_mm = 0.5;
    std::vector<float> samples;

    [[nodiscard]] std::size_t index(int slice, int row, int col) const {
        return (static_cast<std::size_t>(slice) * width + row) * width + col;
    }
    [[nodiscard]] float at(int slice, int row, int col) const { return samples[index(slice, row, col)]; }
    float& at(int slice, int row, int col) { return samples[index(slice, row, col)]; }
    [[nodiscard]] int center() const { return width / 2; }
    [[nodiscard]] std::span<const float> slice(int i) const {
        return {samples.data() + static_cast<std::size_t>(i) * width * width,
                static_cast<std::size_t>(width) * width};
    }
};

struct StraightenParams {
    int width = 15;
    double in_plane_spacing_mm = 0.35;
    double step_mm = 0.5;
};

inline int mpr_length_for(double centerline_length, double step) {
    return std::max(1, static_cast<int>(std::ceil(centerline_length / step - 1e-9)));
}

inline StraightenedMPR straighten(const Volume& volume, const Extraction& ex,
                                  const StraightenParams& params = {}) {
    require(params.width > 0 && params.width % 2 == 1, ErrorKind::InvalidArgument,
            "reformation width must be odd");
    require(params.in_plane_spacing_mm > 0 && params.step_mm > 0, ErrorKind::InvalidArgument,
            "reformation spacings must be positive");
    require(ex.centerline.size() >= 2, ErrorKind::InvalidArgument,
            "extraction " + ex.extraction_id + " has no centreline");
    for (Vec3 p : ex.centerline)
        require(volume.contains(p), ErrorKind::OutOfBounds,
                "extraction " + ex.extraction_id + " exits the volume");

    StraightenedMPR mpr;
    mpr.extraction_id = ex.extraction_id;
    mpr.width = params.width;
    mpr.in_plane_spacing_mm = params.in_plane_spacing_mm;
    mpr.step_mm = params.step_mm;
    mpr.length = mpr_length_for(ex.length(), params.step_mm);
    mpr.samples.assign(static_cast<std::size_t>(mpr.length) * mpr.width * mpr.width, 0.0f);

    const auto frames = rotation_minimizing_frames(ex.centerline, params.step_mm, mpr.length);
    const int c = mpr.center();
    for (int i = 0; i < mpr.length; ++i) {
        const Frame& f = frames[i];
        for (int r = 0; r < mpr.width; ++r)
            for (int q = 0; q < mpr.width; ++q) {
                const Vec3 p = f.origin + f.normal * ((r - c) * params.in_plane_spacing_mm) +
                               f.binormal * ((q - c) * params.in_plane_spacing_mm);
                mpr.at(i, r, q) = static_cast<float>(volume.sample(p));
            }
    }
    return mpr;
}

inline nlohmann::json mpr_header(const StraightenedMPR& m) {
    return {{"dims", {m.width, m.width, m.length}},
            {"spacing_mm", {m.in_plane_spacing_mm, m.in_plane_spacing_mm, m.step_mm}},
            {"dtype", "f32le"},
            {"offset_bytes", 0},
            {"extraction_id", m.extraction_id},
            {"in_plane_spacing_mm", m.in_plane_spacing_mm},
            {"step_mm", m.step_mm}};
}

/// Writes `<base>.mpr.json` + `<base>.mpr.raw`, where base is `<dir>/<case>.<extraction>`.
inline void write_mpr(const std::string& base, const StraightenedMPR& m) {
    write_file(base + ".mpr.json", mpr_header(m).dump());
    write_file(base + ".mpr.raw", encode_f32le(m.samples));
}

inline StraightenedMPR read_mpr(const std::string& base) {
    const auto j = nlohmann::json::parse(read_file(base + ".mpr.json"));
    StraightenedMPR m;
    m.extraction_id = j.at("extraction_id").get<std::string>();
    const auto dims = j.at("dims").get<std::array<int, 3>>();
    require(dims[0] == dims[1] && dims[0] % 2 == 1, ErrorKind::MalformedInput,
            "reformation slices must be square with odd width");
    m.width = dims[0];
    m.length = dims[2];
    m.in_plane_spacing_mm = j.at("in_plane_spacing_mm").get<double>();
    m.step_mm = j.at("step_mm").get<double>();
    const std::string raw = read_file(base + ".mpr.raw");
    const std::size_t n = static_cast<std::size_t>(m.width) * m.width * m.length;
    require(raw.size() == n * 4, ErrorKind::MalformedInput, "reformation raw size mismatch");
    m.samples = decode_f32le(raw, n);
    return m;
}

inline nlohmann::json to_json(const Extraction& ex) {
    nlohmann::json path = nlohmann::json::array();
    for (const auto& e : ex.path) path.push_back({{"segment_id", e.segment_id}, {"span_mm", {e.start_mm, e.end_mm}}});
    nlohmann::json pts = nlohmann::json::array();
    for (Vec3 p : ex.centerline) pts.push_back({p.x, p.y, p.z});
    nlohmann::json j{{"extraction_id", ex.extraction_id},
                     {"case_id", ex.case_id},
                     {"terminal_name", ex.terminal_name},
                     {"path", path},
                     {"centerline", pts},
                     {"radius_mm", ex.radius_mm},
                     {"partial", ex.partial}};
    if (!ex.warning.empty()) j["warning"] = ex.warning;
    return j;
}

inline Extraction extraction_from_json(const nlohmann::json& j) {
    Extraction ex;
    ex.extraction_id = j.at("extraction_id").get<std::string>();
    ex.case_id = j.value("case_id", std::string{});
    ex.terminal_name = j.value("terminal_name", ex.extraction_id);
    for (const auto& e : j.at("path"))
        ex.path.push_back({e.at("segment_id").get<std::string>(), e.at("span_mm")[0].get<double>(),
                           e.at("span_mm")[1].get<double>()});
    for (const auto& p : j.at("centerline")) ex.centerline.push_back({p[0], p[1], p[2]});
    ex.radius_mm = j.at("radius_mm").get<std::vector<double>>();
    ex.partial = j.value("partial", false);
    ex.warning = j.value("warning", std::string{});
    return ex;
}

}  // namespace ccta
