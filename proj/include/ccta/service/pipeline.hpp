#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccta/classifier.hpp"
#include "ccta/dataset.hpp"
#include "ccta/geometry.hpp"
#include "ccta/mpv.hpp"
#include "ccta/tracking.hpp"
#include "ccta/volume.hpp"

namespace ccta::service {

inline constexpr const char* kInadequateQuality = "inadequate image quality";

/// Per-extraction probability source.
class VesselScorer {
public:
    virtual ~VesselScorer() = default;
    [[nodiscard]] virtual double score(const StraightenedMPR& mpr, const MPV& mpv) const = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

class BaselineScorer final : public VesselScorer {
public:
    [[nodiscard]] double score(const StraightenedMPR& mpr, const MPV&) const override { return baseline_predict(mpr); }
    [[nodiscard]] std::string name() const override { return "baseline"; }
};

class ModelScorer final : public VesselScorer {
public:
    ModelScorer(std::shared_ptr<const Model> model, std::string ref) : model_(std::move(model)), ref_(std::move(ref)) {}
    [[nodiscard]] double score(const StraightenedMPR&, const MPV& mpv) const override { return predict(*model_, mpv); }
    [[nodiscard]] std::string name() const override { return ref_; }

private:
    std::shared_ptr<const Model> model_;
    std::string ref_;
};

class FunctionScorer final : public VesselScorer {
public:
    using Fn = std::function<double(const StraightenedMPR&, const MPV&)>;
    FunctionScorer(Fn fn, std::string name) : fn_(std::move(fn)), name_(std::move(name)) {}
    [[nodiscard]] double score(const StraightenedMPR& mpr, const MPV& mpv) const override { return fn_(mpr, mpv); }
    [[nodiscard]] std::string name() const override { return name_; }

private:
    Fn fn_;
    std::string name_;
};

struct ExtractionResult {
    std::string extraction_id;
    double probability = 0;
    Decision decision = Decision::Clear;
};

struct StageTiming {
    std::string stage;
    double ms = 0;
};

struct InferenceResult {
    std::string case_id;
    std::vector<ExtractionResult> extractions;
    Decision case_decision = Decision::Clear;
    double threshold = 0.5;
    std::string model_ref;
    std::vector<StageTiming> stage_timings_ms;
    double total_latency_ms = 0;
};

/// PlaqueDetected when the largest probability reaches the threshold.
inline Decision aggregate_case(const std::vector<double>& probabilities, double threshold = 0.5) {
    require(!probabilities.empty(), ErrorKind::InvalidArgument, "no extraction probabilities to aggregate");
    return decide(*std::max_element(probabilities.begin(), probabilities.end()), threshold);
}

enum class OverlayColor { Gray, Red };

inline const char* to_string(OverlayColor c) { return c == OverlayColor::Red ? "Red" : "Gray"; }

struct OverlaySegment {
    std::string segment_id;
    OverlayColor color = OverlayColor::Gray;
    std::vector<Vec3> polyline;
};

struct OverlayModel {
    std::vector<OverlaySegment> segments;
    std::vector<ExtractionResult> extractions;
};

/// Red for every segment on the path of a positive extraction, Gray otherwise.
inline OverlayModel build_overlay(const InferenceResult& result, const VesselTree& tree,
                                  const std::vector<Extraction>& extractions) {
    std::map<std::string, const Extraction*> by_id;
    for (const auto& e : extractions) by_id[e.extraction_id] = &e;
    std::set<std::string> red;
    for (const auto& r : result.extractions) {
        const auto it = by_id.find(r.extraction_id);
        require(it != by_id.end(), ErrorKind::UnknownExtraction, "unknown extraction " + r.extraction_id);
        if (r.decision != Decision::PlaqueDetected) continue;
        for (const auto& e : it->second->path) red.insert(e.segment_id);
    }
    OverlayModel o;
    for (const auto& s : tree.segments)
        o.segments.push_back({s.id, red.count(s.id) ? OverlayColor::Red : OverlayColor::Gray, s.polyline});
    o.extractions = result.extractions;
    return o;
}

struct PipelineParams {
    TrackingParams tracking{};
    MpvParams mpv{};
    double threshold = 0.5;
};

/// Everything the pipeline produced for one case.
struct PipelineOutput {
    bool ok = false;
    std::string failed_stage;
    std::string error;
    InferenceResult result;
    VesselTree tree;
    std::vector<Extraction> extractions;
    std::map<std::string, MPV> mpvs;
    std::map<std::string, StraightenedMPR> mprs;
    std::vector<std::string> warnings;
};

namespace detail {

class StageClock {
public:
    explicit StageClock(std::vector<StageTiming>& out) : out_(out) {}
    template <class F>
    auto run(const std::string& stage, F&& f) {
        current_ = stage;
        const auto t0 = std::chrono::steady_clock::now();
        struct Record {
            std::vector<StageTiming>& out;
            std::string stage;
            std::chrono::steady_clock::time_point t0;
            ~Record() {
                out.push_back({stage, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()});
            }
        } record{out_, stage, t0};
        return f();
    }
    [[nodiscard]] const std::string& current() const { return current_; }

private:
    std::vector<StageTiming>& out_;
    std::string current_;
};

}  // namespace detail

/// centerline -> straighten -> MPV -> predict -> aggregate, timed per stage.
/// Failing more than half of the seeds is reported as inadequate image quality.
inline PipelineOutput run_pipeline(const Volume& volume, const std::vector<Vec3>& seeds, const std::string& case_id,
                                   const VesselScorer& scorer, const PipelineParams& params = {}) {
    PipelineOutput out;
    auto& res = out.result;
    res.case_id = case_id;
    res.threshold = params.threshold;
    res.model_ref = scorer.name();
    const auto start = std::chrono::steady_clock::now();
    detail::StageClock clock(res.stage_timings_ms);
    try {
        require(!seeds.empty(), ErrorKind::InvalidArgument, "no seeds");
        auto tracking = params.tracking;
        tracking.case_id = case_id;
        auto tracked = clock.run("centerline", [&] { return track_all(volume, seeds, tracking); });
        out.warnings = tracked.warnings;
        if (2 * tracked.failed_seeds() > static_cast<int>(seeds.size()) || tracked.extractions.empty()) {
            out.failed_stage = "centerline";
            out.error = kInadequateQuality;
        } else {
            out.tree = std::move(tracked.tree);
            out.extractions = std::move(tracked.extractions);
            clock.run("straighten", [&] {
                for (const auto& ex : out.extractions)
                    out.mprs.emplace(ex.extraction_id, straighten(volume, ex, params.mpv.straighten));
                return 0;
            });
            clock.run("mpv", [&] {
                for (const auto& [id, mpr] : out.mprs) out.mpvs.emplace(id, build_mpv(mpr, params.mpv.k, params.mpv.layout));
                return 0;
            });
            std::vector<double> probs;
            clock.run("predict", [&] {
                for (const auto& ex : out.extractions) {
                    const double p = scorer.score(out.mprs.at(ex.extraction_id), out.mpvs.at(ex.extraction_id));
                    require(std::isfinite(p) && p >= 0 && p <= 1, ErrorKind::InvalidState,
                            "classifier returned an invalid probability");
                    res.extractions.push_back({ex.extraction_id, p, decide(p, params.threshold)});
                    probs.push_back(p);
                }
                return 0;
            });
            res.case_decision = clock.run("aggregate", [&] { return aggregate_case(probs, params.threshold); });
            out.ok = true;
        }
    } catch (const std::exception& e) {
        out.ok = false;
        out.failed_stage = clock.current();
        out.error = e.what();
    }
    res.total_latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
}

// -----------------------------------------------------------------------------
// JSON
// -----------------------------------------------------------------------------

inline nlohmann::json to_json(const ExtractionResult& r) {
    return {{"extraction_id", r.extraction_id}, {"probability", r.probability}, {"decision", to_string(r.decision)}};
}

inline Decision decision_from_string(const std::string& s) {
    if (s == "PlaqueDetected") return Decision::PlaqueDetected;
    if (s == "Clear") return Decision::Clear;
    throw Error(ErrorKind::MalformedInput, "unknown decision " + s);
}

inline nlohmann::json to_json(const InferenceResult& r) {
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& e : r.extractions) ex.push_back(to_json(e));
    nlohmann::json timings = nlohmann::json::array();
    for (const auto& t : r.stage_timings_ms) timings.push_back({{"stage", t.stage}, {"ms", t.ms}});
    return {{"case_id", r.case_id},
            {"extractions", ex},
            {"case_decision", to_string(r.case_decision)},
            {"threshold", r.threshold},
            {"model_ref", r.model_ref},
            {"stage_timings_ms", timings},
            {"total_latency_ms", r.total_latency_ms}};
}

inline InferenceResult inference_result_from_json(const nlohmann::json& j) {
    InferenceResult r;
    r.case_id = j.at("case_id");
    for (const auto& e : j.at("extractions"))
        r.extractions.push_back({e.at("extraction_id"), e.at("probability"), decision_from_string(e.at("decision"))});
    r.case_decision = decision_from_string(j.at("case_decision"));
    r.threshold = j.at("threshold");
    r.model_ref = j.at("model_ref");
    for (const auto& t : j.at("stage_timings_ms")) r.stage_timings_ms.push_back({t.at("stage"), t.at("ms")});
    r.total_latency_ms = j.at("total_latency_ms");
    return r;
}

inline nlohmann::json to_json(const OverlayModel& o) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : o.segments) {
        nlohmann::json pts = nlohmann::json::array();
        for (Vec3 p : s.polyline) pts.push_back({p.x, p.y, p.z});
        segs.push_back({{"segment_id", s.segment_id}, {"color", to_string(s.color)}, {"polyline_mm", pts}});
    }
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& e : o.extractions) ex.push_back(to_json(e));
    return {{"segments", segs}, {"extractions", ex}};
}

}  // namespace ccta::service
