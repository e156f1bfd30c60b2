#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccta/annotation.hpp"
#include "ccta/dataset.hpp"
#include "ccta/evaluation.hpp"
#include "ccta/service/pipeline.hpp"

namespace ccta::service {

enum class ExtractionSource { GroundTruth, Tracking };

struct ScoredExtraction {
    std::string extraction_id;
    std::optional<Usage> usage;  ///< empty for tracked branches without a reference match
    double probability = 0;
};

struct CaseOutcome {
    std::string case_id;
    CaseClass truth = CaseClass::Normal;
    bool completed = false;
    std::string failure;
    std::vector<ScoredExtraction> extractions;
    double latency_ms = 0;
};

/// Scores the reference extractions of one case.
inline CaseOutcome score_material(const CaseMaterial& m, const VesselScorer& scorer) {
    CaseOutcome o;
    o.case_id = m.case_id;
    o.truth = m.case_class;
    const auto t0 = std::chrono::steady_clock::now();
    const StraightenedMPR empty;
    for (const auto& l : m.labels) {
        const auto mpr = m.mprs.find(l.extraction_id);
        const double p = scorer.score(mpr == m.mprs.end() ? empty : mpr->second, m.mpvs.at(l.extraction_id));
        o.extractions.push_back({l.extraction_id, l.usage, p});
    }
    o.completed = true;
    o.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return o;
}

/// Runs the full pipeline and labels tracked branches by their reference match.
inline CaseOutcome score_tracked(const StoredCase& c, const std::vector<Vec3>& seeds, const VesselScorer& scorer,
                                 const PipelineParams& params = {}) {
    CaseOutcome o;
    o.case_id = c.truth.tree.case_id;
    o.truth = c.truth.case_class;
    const auto out = run_pipeline(c.volume, seeds, o.case_id, scorer, params);
    o.latency_ms = out.result.total_latency_ms;
    if (!out.ok) {
        o.failure = out.error;
        return o;
    }
    o.completed = true;
    const auto reference = ground_truth_extractions(c.truth.tree);
    const auto labels = classify_extractions(c.truth.tree, c.truth.plaques, reference);
    const auto match = match_extractions(reference, out.extractions);
    std::vector<std::optional<Usage>> usage(out.extractions.size());
    for (std::size_t r = 0; r < reference.size(); ++r)
        if (match[r] >= 0) usage[match[r]] = labels[r].usage;
    for (std::size_t i = 0; i < out.extractions.size(); ++i)
        o.extractions.push_back({out.extractions[i].extraction_id, usage[i], out.result.extractions[i].probability});
    return o;
}

struct CohortEvaluation {
    Report vessel;
    Report case_level;
    std::optional<RocResult> roc;
    int total = 0;
    int completed = 0;
    std::vector<std::pair<std::string, std::string>> incomplete;  ///< workflow-incomplete cases

    [[nodiscard]] double completion_ratio() const { return total ? static_cast<double>(completed) / total : 0.0; }
};

/// Vessel level: DIRECT_PLAQUE extractions of Diseased cases against every
/// extraction of Normal cases. Case level: every extraction, max then threshold.
inline CohortEvaluation evaluate_outcomes(const std::vector<CaseOutcome>& outcomes, double threshold = 0.5,
                                          const std::string& name = "cohort") {
    CohortEvaluation ev;
    ev.total = static_cast<int>(outcomes.size());
    std::vector<double> scores;
    std::vector<bool> vessel_truth, vessel_pred, case_truth, case_pred;
    for (const auto& o : outcomes) {
        if (!o.completed) {
            ev.incomplete.emplace_back(o.case_id, o.failure);
            continue;
        }
        ++ev.completed;
        const bool diseased = is_diseased(o.truth);
        std::vector<double> probs;
        for (const auto& e : o.extractions) {
            probs.push_back(e.probability);
            const bool include = diseased ? e.usage == Usage::DirectPlaque : true;
            if (!include) continue;
            scores.push_back(e.probability);
            vessel_truth.push_back(diseased);
            vessel_pred.push_back(decide(e.probability, threshold) == Decision::PlaqueDetected);
        }
        case_truth.push_back(diseased);
        case_pred.push_back(!probs.empty() && aggregate_case(probs, threshold) == Decision::PlaqueDetected);
    }
    require(!case_truth.empty(), ErrorKind::EmptySubset, "no case completed the workflow");
    std::optional<double> auc;
    const bool both = std::count(vessel_truth.begin(), vessel_truth.end(), true) > 0 &&
                      std::count(vessel_truth.begin(), vessel_truth.end(), false) > 0;
    if (both) {
        ev.roc = roc_auc(scores, vessel_truth);
        auc = ev.roc->auc;
    }
    ConfusionMatrix vcm;
    if (!vessel_pred.empty()) vcm = confusion(vessel_pred, vessel_truth);
    ev.vessel = make_report(name + ": vessel-extraction level", vcm, vcm.total() ? metrics(vcm) : MetricSet{}, auc,
                            false, threshold);
    const auto ccm = confusion(case_pred, case_truth);
    ev.case_level = make_report(name + ": case level", ccm, metrics(ccm), std::nullopt, true, threshold);
    return ev;
}

inline nlohmann::json to_json(const CohortEvaluation& ev) {
    nlohmann::json inc = nlohmann::json::array();
    for (const auto& [id, why] : ev.incomplete) inc.push_back({{"case_id", id}, {"reason", why}});
    char ratio[64];
    std::snprintf(ratio, sizeof ratio, "%d/%d = %.0f%%", ev.completed, ev.total, 100.0 * ev.completion_ratio());
    return {{"vessel_level", to_json(ev.vessel)},
            {"case_level", to_json(ev.case_level)},
            {"completed", ev.completed},
            {"total", ev.total},
            {"completion_ratio", ev.completion_ratio()},
            {"completion", ratio},
            {"workflow_incomplete", inc}};
}

inline std::string render_text(const CohortEvaluation& ev) {
    std::string out = render_text(ev.vessel) + "\n" + render_text(ev.case_level);
    char buf[96];
    std::snprintf(buf, sizeof buf, "\nWorkflow completion: %d/%d = %.0f%%\n", ev.completed, ev.total,
                  100.0 * ev.completion_ratio());
    out += buf;
    for (const auto& [id, why] : ev.incomplete) out += "  workflow-incomplete " + id + ": " + why + "\n";
    return out;
}

/// Evaluates a stored cohort either on reference extractions or through the
/// full tracking pipeline.
inline CohortEvaluation evaluate_cohort(const std::string& cohort_dir, const VesselScorer& scorer, double threshold,
                                        ExtractionSource source = ExtractionSource::GroundTruth,
                                        const PipelineParams& params = {}, std::vector<CaseOutcome>* outcomes_out = nullptr) {
    const auto idx = read_cohort_index(cohort_dir);
    std::vector<CaseOutcome> outcomes;
    for (const auto& id : idx.case_ids) {
        const auto c = read_case(cohort_dir, id);
        if (source == ExtractionSource::GroundTruth) {
            try {
                outcomes.push_back(score_material(process_case(c.truth.tree, c.truth.plaques, c.volume, params.mpv, true), scorer));
            } catch (const std::exception& e) {
                CaseOutcome o;
                o.case_id = id;
                o.truth = c.truth.case_class;
                o.failure = e.what();
                outcomes.push_back(std::move(o));
            }
        } else {
            outcomes.push_back(score_tracked(c, template_ostia(idx.spec.template_name), scorer, params));
        }
    }
    auto ev = evaluate_outcomes(outcomes, threshold, std::filesystem::path(cohort_dir).filename().string());
    if (outcomes_out) *outcomes_out = std::move(outcomes);
    return ev;
}

}  // namespace ccta::service
