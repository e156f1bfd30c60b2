#pragma once

#include <algorithm>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccta/core.hpp"
#include "ccta/geometry.hpp"
#include "ccta/phantom.hpp"
#include "ccta/volume.hpp"

namespace ccta {

// Centreline tracking.
//
// The lumen connected to each seed is segmented on a lightly smoothed copy of
// the volume. Branches are found with a TEASAR-style skeletonisation: the
// geodesically farthest unexplained voxel is traced back to the growing
// skeleton along a centre-seeking minimal path, and a tube around the new
// branch is marked explained. Each traced centreline is then pulled onto the
// intensity ridge by iterated cross-sectional centroids at a fixed step.

struct TrackingParams {
    double threshold = 70.0;           ///< lumen threshold on the smoothed volume
    double smoothing_sigma_mm = 0.35;
    double seed_search_radius_mm = 1.5;
    double min_branch_length_mm = 4.0;
    double explained_scale = 2.5;      ///< tube radius = scale * depth + offset
    double explained_offset_mm = 1.0;
    double step_mm = 0.5;
    int max_lost_steps = 3;
    double gap_probe_mm = 4.0;         ///< look-ahead past each tip for disconnected lumen
    double gap_probe_radius_mm = 1.5;
    int gap_probe_min_voxels = 4;
    double max_component_fraction = 0.05;
    std::string case_id;
};

struct SeedOutcome {
    Vec3 seed;
    bool ok = false;
    std::string error;
    ErrorKind error_kind = ErrorKind::TrackingDiverged;
};

struct TrackingResult {
    VesselTree tree;                   ///< tracked branches as segments
    std::vector<Extraction> extractions;
    std::vector<SeedOutcome> seeds;
    std::vector<std::string> warnings;

    [[nodiscard]] int failed_seeds() const {
        return static_cast<int>(std::count_if(seeds.begin(), seeds.end(),
                                              [](const SeedOutcome& s) { return !s.ok; }));
    }
};

namespace detail {

inline Volume gaussian_smooth(const Volume& in, double sigma_mm) {
    Volume out = in;
    if (sigma_mm <= 0) return out;
    std::vector<float> tmp(in.size());
    for (int axis = 0; axis < 3; ++axis) {
        const double sigma = sigma_mm / in.spacing_mm[axis];
        const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
        std::vector<double> kernel(2 * radius + 1);
        double sum = 0;
        for (int t = -radius; t <= radius; ++t)
            sum += kernel[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
        for (double& k : kernel) k /= sum;
        const std::array<int, 3> d = in.dims;
        const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? d[0] : static_cast<std::size_t>(d[0]) * d[1]);
        const int n = d[axis];
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    const int pos = axis == 0 ? i : (axis == 1 ? j : k);
                    const std::size_t base = out.index(i, j, k) - stride * pos;
                    double acc = 0;
                    for (int t = -radius; t <= radius; ++t) {
                        const int q = std::clamp(pos + t, 0, n - 1);
                        acc += kernel[t + radius] * out.voxels[base + stride * q];
                    }
                    tmp[out.index(i, j, k)] = static_cast<float>(acc);
                }
        out.voxels.swap(tmp);
    }
    return out;
}

struct Neighbour {
    int di, dj, dk;
};

inline const std::vector<Neighbour>& neighbours26() {
    static const std::vector<Neighbour> n = [] {
        std::vector<Neighbour> v;
        for (int k = -1; k <= 1; ++k)
            for (int j = -1; j <= 1; ++j)
                for (int i = -1; i <= 1; ++i)
                    if (i || j || k) v.push_back({i, j, k});
        return v;
    }();
    return n;
}

/// Lumen component connected to one seed, with per-voxel graph quantities.
class Component {
public:
    Component(const Volume& smoothed, std::array<int, 3> seed, double threshold,
              std::size_t max_voxels)
        : vol_(smoothed) {
        flood(seed, threshold, max_voxels);
    }

    [[nodiscard]] std::size_t size() const { return voxels_.size(); }
    [[nodiscard]] const std::array<int, 3>& voxel(int n) const { return voxels_[n]; }
    [[nodiscard]] Vec3 position(int n) const {
        return vol_.to_mm(voxels_[n][0], voxels_[n][1], voxels_[n][2]);
    }
    [[nodiscard]] int local(int i, int j, int k) const {
        if (!vol_.in_grid(i, j, k)) return -1;
        const auto it = lookup_.find(vol_.index(i, j, k));
        return it == lookup_.end() ? -1 : it->second;
    }

    template <typename Fn>
    void for_each_neighbour(int n, Fn&& fn) const {
        const auto& v = voxels_[n];
        for (const auto& d : neighbours26()) {
            const int m = local(v[0] + d.di, v[1] + d.dj, v[2] + d.dk);
            if (m < 0) continue;
            const double len = norm(vol_.to_mm(d.di, d.dj, d.dk));
            fn(m, len);
        }
    }

    /// Distance from each voxel to the lumen boundary (mm).
    [[nodiscard]] std::vector<double> depth() const {
        std::vector<double> dist(size(), std::numeric_limits<double>::infinity());
        using Item = std::pair<double, int>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        const double half = 0.5 * std::min({vol_.spacing_mm[0], vol_.spacing_mm[1], vol_.spacing_mm[2]});
        static const int face[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (int n = 0; n < static_cast<int>(size()); ++n) {
            const auto& v = voxels_[n];
            for (const auto& f : face)
                if (local(v[0] + f[0], v[1] + f[1], v[2] + f[2]) < 0) {
                    dist[n] = half;
                    pq.push({half, n});
                    break;
                }
        }
        relax(pq, dist, [](int) { return 1.0; });
        return dist;
    }

    /// Single-source shortest paths; `weight(n)` scales edge lengths entering n.
    template <typename W>
    void shortest_paths(int source, W&& weight, std::vector<double>& dist, std::vector<int>& pred) const {
        dist.assign(size(), std::numeric_limits<double>::infinity());
        pred.assign(size(), -1);
        using Item = std::pair<double, int>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        dist[source] = 0;
        pq.push({0.0, source});
        while (!pq.empty()) {
            const auto [d, n] = pq.top();
            pq.pop();
            if (d > dist[n]) continue;
            for_each_neighbour(n, [&](int m, double len) {
                const double nd = d + len * weight(m);
                if (nd < dist[m]) {
                    dist[m] = nd;
                    pred[m] = n;
                    pq.push({nd, m});
                }
            });
        }
    }

private:
    void flood(std::array<int, 3> seed, double threshold, std::size_t max_voxels) {
        static const int face[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        std::queue<std::array<int, 3>> q;
        q.push(seed);
        lookup_[vol_.index(seed[0], seed[1], seed[2])] = 0;
        voxels_.push_back(seed);
        while (!q.empty()) {
            const auto v = q.front();
            q.pop();
            for (const auto& f : face) {
                const int i = v[0] + f[0], j = v[1] + f[1], k = v[2] + f[2];
                if (!vol_.in_grid(i, j, k) || vol_.at(i, j, k) < threshold) continue;
                const std::size_t idx = vol_.index(i, j, k);
                if (lookup_.count(idx)) continue;
                lookup_[idx] = static_cast<int>(voxels_.size());
                voxels_.push_back({i, j, k});
                q.push({i, j, k});
                if (voxels_.size() > max_voxels)
                    throw Error(ErrorKind::TrackingDiverged, "lumen region not confined around seed");
            }
        }
    }

    template <typename W>
    void relax(std::priority_queue<std::pair<double, int>, std::vector<std::pair<double, int>>,
                                   std::greater<>>& pq,
               std::vector<double>& dist, W&& weight) const {
        while (!pq.empty()) {
            const auto [d, n] = pq.top();
            pq.pop();
            if (d > dist[n]) continue;
            for_each_neighbour(n, [&](int m, double len) {
                const double nd = d + len * weight(m);
                if (nd < dist[m]) {
                    dist[m] = nd;
                    pq.push({nd, m});
                }
            });
        }
    }

    const Volume& vol_;
    std::vector<std::array<int, 3>> voxels_;
    std::unordered_map<std::size_t, int> lookup_;
};

struct RawBranch {
    std::vector<int> voxels;  ///< junction-side first, tip last
    int parent = -1;          ///< index into branch list
    int junction_voxel = -1;
};

inline std::vector<Vec3> moving_average(const std::vector<Vec3>& pts, int half, bool pin_front) {
    if (pts.size() < 3) return pts;
    std::vector<Vec3> out(pts.size());
    const int n = static_cast<int>(pts.size());
    for (int i = 0; i < n; ++i) {
        const int h = std::min({half, i, n - 1 - i});
        Vec3 acc;
        for (int t = -h; t <= h; ++t) acc += pts[i + t];
        out[i] = acc / (2 * h + 1);
    }
    if (pin_front) out.front() = pts.front();
    return out;
}

/// Intensity-weighted centroid of the cross-section at `p` (normal `t`).
inline bool cross_section_centroid(const Volume& vol, Vec3 p, Vec3 t, double radius,
                                   double threshold, Vec3& out) {
    const Vec3 u = any_perpendicular(t);
    const Vec3 v = cross(t, u);
    constexpr double kGrid = 0.25;
    const int n = static_cast<int>(std::ceil(radius / kGrid));
    double wsum = 0;
    Vec3 acc;
    for (int a = -n; a <= n; ++a)
        for (int b = -n; b <= n; ++b) {
            if ((a * a + b * b) * kGrid * kGrid > radius * radius) continue;
            const Vec3 q = p + u * (a * kGrid) + v * (b * kGrid);
            const double w = vol.sample(q) - threshold;
            if (w <= 0) continue;
            wsum += w;
            acc += q * w;
        }
    if (wsum <= 0) return false;
    out = acc / wsum;
    return true;
}

/// Lumen radius from the above-half-peak area of the cross-section at `p`.
inline double cross_section_radius(const Volume& vol, Vec3 p, Vec3 t, double max_radius) {
    const Vec3 u = any_perpendicular(t);
    const Vec3 v = cross(t, u);
    constexpr double kGrid = 0.2;
    const int n = static_cast<int>(std::ceil(max_radius / kGrid));
    double peak = 0;
    for (int a = -2; a <= 2; ++a)
        for (int b = -2; b <= 2; ++b) peak = std::max(peak, vol.sample(p + u * (a * kGrid) + v * (b * kGrid)));
    if (peak <= 0) return 0.0;
    int count = 0;
    for (int a = -n; a <= n; ++a)
        for (int b = -n; b <= n; ++b) {
            if ((a * a + b * b) * kGrid * kGrid > max_radius * max_radius) continue;
            if (vol.sample(p + u * (a * kGrid) + v * (b * kGrid)) >= 0.5 * peak) ++count;
        }
    return std::sqrt(count * kGrid * kGrid / M_PI);
}

/// Lumen voxels ahead of a tip that the tracked component does not contain.
inline int disconnected_lumen_ahead(const Volume& smooth, const Component& comp, const std::vector<Vec3>& line,
                                    double threshold, double reach, double radius, double step) {
    if (line.size() < 2) return 0;
    const Vec3 tip = line.back();
    const auto arc = cumulative_arc(line);
    std::size_t back = line.size() - 1;
    while (back > 0 && arc.back() - arc[back] < 3.0) --back;
    if (distance(line[back], tip) < 1e-9) return 0;
    const Vec3 t = normalized(tip - line[back]);
    const Vec3 u = any_perpendicular(t);
    const Vec3 v = cross(t, u);
    std::vector<std::size_t> seen;
    const int n = static_cast<int>(std::ceil(radius / step));
    for (double d = step; d <= reach + 1e-9; d += step)
        for (int a = -n; a <= n; ++a)
            for (int b = -n; b <= n; ++b) {
                if ((a * a + b * b) * step * step > radius * radius) continue;
                const Vec3 g = smooth.to_index(tip + t * d + u * (a * step) + v * (b * step));
                const int i = static_cast<int>(std::lround(g.x)), j = static_cast<int>(std::lround(g.y)),
                          k = static_cast<int>(std::lround(g.z));
                if (!smooth.in_grid(i, j, k) || smooth.at(i, j, k) < threshold || comp.local(i, j, k) >= 0) continue;
                seen.push_back(smooth.index(i, j, k));
            }
    std::sort(seen.begin(), seen.end());
    return static_cast<int>(std::unique(seen.begin(), seen.end()) - seen.begin());
}

inline Vec3 polyline_tangent(const std::vector<Vec3>& pts, std::size_t i) {
    const std::size_t lo = i >= 2 ? i - 2 : 0;
    const std::size_t hi = std::min(pts.size() - 1, i + 2);
    return normalized(pts[hi] - pts[lo]);
}

}  // namespace detail

/// Tracks every seed; failures are recorded per seed instead of thrown.
inline TrackingResult track_all(const Volume& volume, const std::vector<Vec3>& seeds,
                                const TrackingParams& params = {}) {
    TrackingResult result;
    result.tree.case_id = params.case_id;
    const Volume smooth = detail::gaussian_smooth(volume, params.smoothing_sigma_mm);
    const auto max_voxels = static_cast<std::size_t>(params.max_component_fraction * volume.size());
    std::unordered_map<std::string, std::string> partial;

    for (std::size_t si = 0; si < seeds.size(); ++si) {
        SeedOutcome outcome;
        outcome.seed = seeds[si];
        try {
            // Snap the seed to the brightest nearby voxel.
            const Vec3 g = volume.to_index(seeds[si]);
            std::array<int, 3> best{-1, -1, -1};
            double best_val = -std::numeric_limits<double>::infinity();
            const int reach = static_cast<int>(std::ceil(params.seed_search_radius_mm / volume.spacing_mm[0]));
            for (int dk = -reach; dk <= reach; ++dk)
                for (int dj = -reach; dj <= reach; ++dj)
                    for (int di = -reach; di <= reach; ++di) {
                        const int i = static_cast<int>(std::lround(g.x)) + di;
                        const int j = static_cast<int>(std::lround(g.y)) + dj;
                        const int k = static_cast<int>(std::lround(g.z)) + dk;
                        if (!volume.in_grid(i, j, k)) continue;
                        if (distance(volume.to_mm(i, j, k), seeds[si]) > params.seed_search_radius_mm) continue;
                        if (smooth.at(i, j, k) > best_val) {
                            best_val = smooth.at(i, j, k);
                            best = {i, j, k};
                        }
                    }
            require(best[0] >= 0 && best_val >= params.threshold, ErrorKind::SeedOutsideVessel,
                    "seed is not inside a vessel");

            const detail::Component comp(smooth, best, params.threshold, max_voxels);
            const auto depth = comp.depth();
            std::vector<double> geodesic, penalised;
            std::vector<int> unused, pred;
            comp.shortest_paths(0, [](int) { return 1.0; }, geodesic, unused);
            comp.shortest_paths(0, [&](int m) { return 1.0 / (depth[m] * depth[m] + 1e-3); }, penalised, pred);

            const int n = static_cast<int>(comp.size());
            std::vector<char> explained(n, 0);
            std::vector<int> owner(n, -1);
            std::vector<detail::RawBranch> branches;
            for (;;) {
                int tip = -1;
                for (int v = 0; v < n; ++v)
                    if (!explained[v] && (tip < 0 || geodesic[v] > geodesic[tip])) tip = v;
                if (tip < 0) break;
                std::vector<int> path;
                int v = tip;
                while (v >= 0 && owner[v] < 0) {
                    path.push_back(v);
                    v = pred[v];
                }
                const int junction = v;
                double length = 0;
                for (std::size_t i = 1; i < path.size(); ++i)
                    length += distance(comp.position(path[i - 1]), comp.position(path[i]));
                if (junction >= 0) length += distance(comp.position(path.back()), comp.position(junction));

                // Mark a tube around the new path as explained.
                for (int pv : path) {
                    const double rad = params.explained_scale * depth[pv] + params.explained_offset_mm;
                    const auto& c = comp.voxel(pv);
                    const int r = static_cast<int>(std::ceil(rad / volume.spacing_mm[0]));
                    for (int dk = -r; dk <= r; ++dk)
                        for (int dj = -r; dj <= r; ++dj)
                            for (int di = -r; di <= r; ++di) {
                                const int m = comp.local(c[0] + di, c[1] + dj, c[2] + dk);
                                if (m >= 0 && distance(comp.position(m), comp.position(pv)) <= rad) explained[m] = 1;
                            }
                }
                explained[tip] = 1;
                const bool first = branches.empty();
                if (!first && length < params.min_branch_length_mm) continue;

                detail::RawBranch b;
                std::reverse(path.begin(), path.end());
                b.voxels = std::move(path);
                b.junction_voxel = junction;
                b.parent = junction >= 0 ? owner[junction] : -1;
                const int id = static_cast<int>(branches.size());
                for (int pv : b.voxels) owner[pv] = id;
                branches.push_back(std::move(b));
            }
            require(!branches.empty(), ErrorKind::TrackingDiverged, "no centreline found from seed");

            // Convert to segments, refine onto the ridge.
            const std::string prefix = "s" + std::to_string(si) + "b";
            std::vector<std::string> seg_ids;
            std::vector<bool> truncated(branches.size(), false);
            for (std::size_t bi = 0; bi < branches.size(); ++bi) {
                const auto& b = branches[bi];
                std::vector<Vec3> pts;
                if (b.junction_voxel >= 0) pts.push_back(comp.position(b.junction_voxel));
                for (int pv : b.voxels) pts.push_back(comp.position(pv));
                if (pts.size() < 2) pts.push_back(pts.back() + Vec3{0, 0, 1e-3});
                // Trim the lumen end cap at the tip.
                double tip_depth = 0;
                for (std::size_t t = b.voxels.size() >= 6 ? b.voxels.size() - 6 : 0; t < b.voxels.size(); ++t)
                    tip_depth = std::max(tip_depth, depth[b.voxels[t]]);
                auto line = resample_polyline(pts, params.step_mm);
                const double total = polyline_length(line);
                if (total > tip_depth + 2 * params.step_mm) {
                    const auto arc = cumulative_arc(line);
                    std::vector<Vec3> cut;
                    for (std::size_t t = 0; t < line.size() && arc[t] <= total - tip_depth; ++t) cut.push_back(line[t]);
                    if (cut.size() >= 2) line = cut;
                }
                const bool pin = b.junction_voxel >= 0;
                line = detail::moving_average(line, 2, pin);
                std::vector<double> radius_guess(line.size());
                for (std::size_t t = 0; t < line.size(); ++t) {
                    const auto gi = volume.to_index(line[t]);
                    const int m = comp.local(static_cast<int>(std::lround(gi.x)), static_cast<int>(std::lround(gi.y)),
                                             static_cast<int>(std::lround(gi.z)));
                    radius_guess[t] = std::max(1.0, (m >= 0 ? depth[m] : 0.5) + 0.25);
                }
                for (int iter = 0; iter < 3; ++iter) {
                    std::vector<Vec3> moved = line;
                    for (std::size_t t = pin ? 1 : 0; t < line.size(); ++t) {
                        Vec3 c;
                        if (detail::cross_section_centroid(smooth, line[t], detail::polyline_tangent(line, t),
                                                           1.3 * radius_guess[t] + 0.25, params.threshold, c)) {
                            const Vec3 delta = c - line[t];
                            const double len = norm(delta);
                            moved[t] = len > radius_guess[t] ? line[t] + delta * (radius_guess[t] / len) : c;
                        }
                    }
                    line = detail::moving_average(moved, 1, pin);
                }
                // Ridge-loss check at the fixed step.
                int lost = 0;
                std::size_t keep = line.size();
                for (std::size_t t = 0; t < line.size(); ++t) {
                    lost = smooth.sample(line[t]) >= params.threshold ? 0 : lost + 1;
                    if (lost > params.max_lost_steps) {
                        keep = t + 1 - lost;
                        break;
                    }
                }
                if (keep < line.size()) {
                    if (keep < 2) {
                        require(bi != 0, ErrorKind::TrackingDiverged,
                                "ridge lost for more than " + std::to_string(params.max_lost_steps) + " steps");
                        seg_ids.push_back("");
                        continue;
                    }
                    line.resize(keep);
                    truncated[bi] = true;
                }

                Segment seg;
                seg.id = prefix + std::to_string(bi);
                seg.name = seg.id;
                seg.polyline = line;
                if (b.parent >= 0) {
                    const std::string& pid = seg_ids[b.parent];
                    Segment* parent = pid.empty() ? nullptr : result.tree.find(pid);
                    if (!parent) {
                        result.warnings.push_back("branch " + seg.id + " dropped: parent branch lost");
                        seg_ids.push_back("");
                        continue;
                    }
                    // Re-anchor at the closest point of the refined parent.
                    const auto parc = cumulative_arc(parent->polyline);
                    std::size_t best_i = 0;
                    for (std::size_t t = 0; t < parent->polyline.size(); ++t)
                        if (distance(parent->polyline[t], line[std::min<std::size_t>(2, line.size() - 1)]) <
                            distance(parent->polyline[best_i], line[std::min<std::size_t>(2, line.size() - 1)]))
                            best_i = t;
                    seg.parent_id = parent->id;
                    seg.parent_arc_mm = parc[best_i];
                    seg.polyline.front() = parent->polyline[best_i];
                    if (best_i + 1 == parent->polyline.size()) seg.parent_arc_mm = polyline_length(parent->polyline);
                } else {
                    result.tree.ostia.push_back(seg.id);
                }
                for (std::size_t t = 0; t < seg.polyline.size(); ++t)
                    seg.radius_mm.push_back(detail::cross_section_radius(
                        volume, seg.polyline[t], detail::polyline_tangent(seg.polyline, t), 4.0));
                seg_ids.push_back(seg.id);
                if (truncated[bi]) {
                    result.warnings.push_back("partial extraction: ridge lost on branch " + seg.id);
                    partial[seg.id] = result.warnings.back();
                } else if (detail::disconnected_lumen_ahead(smooth, comp, seg.polyline, params.threshold,
                                                            params.gap_probe_mm, params.gap_probe_radius_mm,
                                                            0.5 * volume.spacing_mm[0]) >=
                           params.gap_probe_min_voxels) {
                    result.warnings.push_back("partial extraction: lumen continues past the tip of branch " + seg.id);
                    partial[seg.id] = result.warnings.back();
                }
                result.tree.segments.push_back(std::move(seg));
            }
            outcome.ok = true;
        } catch (const Error& e) {
            outcome.error = e.what();
            outcome.error_kind = e.kind();
        }
        result.seeds.push_back(outcome);
    }

    result.extractions = ground_truth_extractions(result.tree);
    for (auto& ex : result.extractions) {
        ex.case_id = params.case_id;
        if (const auto it = partial.find(ex.terminal_segment()); it != partial.end()) {
            ex.partial = true;
            ex.warning = it->second;
        }
    }
    return result;
}

/// Tracks from every seed; throws the first seed failure.
inline std::vector<Extraction> track_centerlines(const Volume& volume, const std::vector<Vec3>& seeds,
                                                 const TrackingParams& params = {}) {
    auto r = track_all(volume, seeds, params);
    for (const auto& s : r.seeds)
        if (!s.ok) throw Error(s.error_kind, s.error.substr(s.error.find(": ") + 2));
    return std::move(r.extractions);
}

/// Pairs each reference extraction with the tracked extraction whose terminus
/// is closest (within `tolerance_mm`); -1 when none is close enough.
inline std::vector<int> match_extractions(const std::vector<Extraction>& reference,
                                          const std::vector<Extraction>& tracked,
                                          double tolerance_mm = 5.0) {
    std::vector<int> match(reference.size(), -1);
    for (std::size_t r = 0; r < reference.size(); ++r) {
        double best = tolerance_mm;
        for (std::size_t t = 0; t < tracked.size(); ++t) {
            const double d = distance(reference[r].centerline.back(), tracked[t].centerline.back());
            if (d <= best) {
                best = d;
                match[r] = static_cast<int>(t);
            }
        }
    }
    return match;
}

}  // namespace ccta
