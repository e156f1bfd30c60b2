#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccta/core.hpp"
#include "ccta/geometry.hpp"
#include "ccta/phantom.hpp"

namespace ccta {

enum class VesselLabel { AtherosclerosisFree, PlaqueAnnotated };

/// Curation category of an extraction.
enum class Usage {
    DirectPlaque,              ///< plaque on the terminal segment's portion of the path
    CleanBranchUpstreamPlaque, ///< plaque only before the terminal segment's origin
    CompletelyClean,
};

enum class CaseClass { Normal, DiseasedNonObstructive, DiseasedObstructive };

inline const char* to_string(VesselLabel l) {
    return l == VesselLabel::PlaqueAnnotated ? "PlaqueAnnotated" : "AtherosclerosisFree";
}
inline const char* to_string(Usage u) {
    switch (u) {
    case Usage::DirectPlaque: return "DIRECT_PLAQUE";
    case Usage::CleanBranchUpstreamPlaque: return "CLEAN_BRANCH_UPSTREAM_PLAQUE";
    case Usage::CompletelyClean: return "COMPLETELY_CLEAN";
    }
    return "?";
}
inline const char* to_string(CaseClass c) {
    switch (c) {
    case CaseClass::Normal: return "Normal";
    case CaseClass::DiseasedNonObstructive: return "DiseasedNonObstructive";
    case CaseClass::DiseasedObstructive: return "DiseasedObstructive";
    }
    return "?";
}

inline Usage usage_from_string(const std::string& s) {
    if (s == "DIRECT_PLAQUE") return Usage::DirectPlaque;
    if (s == "CLEAN_BRANCH_UPSTREAM_PLAQUE") return Usage::CleanBranchUpstreamPlaque;
    if (s == "COMPLETELY_CLEAN") return Usage::CompletelyClean;
    throw Error(ErrorKind::MalformedInput, "unknown usage " + s);
}
inline CaseClass case_class_from_string(const std::string& s) {
    if (s == "Normal") return CaseClass::Normal;
    if (s == "DiseasedNonObstructive") return CaseClass::DiseasedNonObstructive;
    if (s == "DiseasedObstructive") return CaseClass::DiseasedObstructive;
    throw Error(ErrorKind::MalformedInput, "unknown case class " + s);
}
inline bool is_diseased(CaseClass c) { return c != CaseClass::Normal; }

struct PlaqueSpan {
    double start_mm = 0;  ///< extraction arc coordinates
    double end_mm = 0;
    Grade grade = Grade::NonObstructive;
};

struct ExtractionLabel {
    std::string case_id;
    std::string extraction_id;
    VesselLabel label = VesselLabel::AtherosclerosisFree;
    Usage usage = Usage::CompletelyClean;
    std::vector<PlaqueSpan> plaque_spans;
};

/// Labels one extraction. A plaque anywhere on the path makes the course
/// PlaqueAnnotated; it is DIRECT_PLAQUE when a span reaches the terminal
/// segment's portion, where a span ending exactly at the terminal segment's
/// origin counts (closed interval on the terminal side).
inline ExtractionLabel classify_extraction(const VesselTree& tree,
                                           const std::vector<PlaqueAnnotation>& plaques,
                                           const Extraction& ex) {
    require(!ex.path.empty(), ErrorKind::InvalidArgument, "extraction has an empty path");
    for (const auto& e : ex.path)
        require(tree.find(e.segment_id) != nullptr, ErrorKind::UnknownExtraction,
                "unknown segment id " + e.segment_id);

    ExtractionLabel out;
    out.case_id = ex.case_id;
    out.extraction_id = ex.extraction_id;
    const auto offsets = ex.element_offsets();
    const std::size_t terminal = ex.path.size() - 1;
    bool direct = false;
    for (const auto& p : plaques) {
        for (std::size_t i = 0; i < ex.path.size(); ++i) {
            const auto& e = ex.path[i];
            if (p.segment_id != e.segment_id) continue;
            const double lo = std::max(p.start_mm, e.start_mm);
            const double hi = std::min(p.end_mm, e.end_mm);
            if (lo > hi) continue;
            out.plaque_spans.push_back(
                {offsets[i] + (lo - e.start_mm), offsets[i] + (hi - e.start_mm), p.grade});
            if (i == terminal || (i + 1 == terminal && hi >= e.end_mm)) direct = true;
        }
    }
    std::sort(out.plaque_spans.begin(), out.plaque_spans.end(),
              [](const PlaqueSpan& a, const PlaqueSpan& b) { return a.start_mm < b.start_mm; });
    if (out.plaque_spans.empty()) return out;
    out.label = VesselLabel::PlaqueAnnotated;
    out.usage = direct ? Usage::DirectPlaque : Usage::CleanBranchUpstreamPlaque;
    return out;
}

inline std::vector<ExtractionLabel> classify_extractions(const VesselTree& tree,
                                                         const std::vector<PlaqueAnnotation>& plaques,
                                                         const std::vector<Extraction>& extractions) {
    std::vector<ExtractionLabel> out;
    out.reserve(extractions.size());
    for (const auto& ex : extractions) out.push_back(classify_extraction(tree, plaques, ex));
    return out;
}

inline CaseClass case_ground_truth(const std::vector<PlaqueAnnotation>& plaques) {
    if (plaques.empty()) return CaseClass::Normal;
    const bool obstructive = std::any_of(plaques.begin(), plaques.end(),
                                         [](const auto& p) { return p.stenosis_pct >= 50.0; });
    return obstructive ? CaseClass::DiseasedObstructive : CaseClass::DiseasedNonObstructive;
}

inline CaseClass case_ground_truth(const VesselTree&, const std::vector<PlaqueAnnotation>& plaques) {
    return case_ground_truth(plaques);
}

enum class CurationColor { LightPink, DarkPink };

inline const char* to_string(CurationColor c) {
    return c == CurationColor::DarkPink ? "DarkPink" : "LightPink";
}

struct ColoredInterval {
    std::string segment_id;
    double start_mm = 0;
    double end_mm = 0;
    CurationColor color = CurationColor::LightPink;
};

/// Stenosis-grade colouring of annotated spans; unplaqued stretches are absent.
inline std::vector<ColoredInterval> curation_color_map(const VesselTree&,
                                                       const std::vector<PlaqueAnnotation>& plaques) {
    std::vector<ColoredInterval> out;
    for (const auto& p : plaques)
        out.push_back({p.segment_id, p.start_mm, p.end_mm,
                       p.stenosis_pct >= 50.0 ? CurationColor::DarkPink : CurationColor::LightPink});
    return out;
}

inline nlohmann::json to_json(const ExtractionLabel& l) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : l.plaque_spans)
        spans.push_back({{"span_mm", {s.start_mm, s.end_mm}}, {"grade", to_string(s.grade)}});
    return {{"case_id", l.case_id},
            {"extraction_id", l.extraction_id},
            {"label", to_string(l.label)},
            {"usage", to_string(l.usage)},
            {"plaque_spans", spans}};
}

/// Contents of `<case>.truth.json`.
inline nlohmann::json truth_to_json(const VesselTree& tree, const std::vector<PlaqueAnnotation>& plaques) {
    nlohmann::json pl = nlohmann::json::array();
    for (const auto& p : plaques) pl.push_back(to_json(p));
    nlohmann::json j = to_json(tree);
    j["plaques"] = pl;
    j["case_class"] = to_string(case_ground_truth(plaques));
    return j;
}

struct CaseTruth {
    VesselTree tree;
    std::vector<PlaqueAnnotation> plaques;
    CaseClass case_class = CaseClass::Normal;
};

inline CaseTruth truth_from_json(const nlohmann::json& j) {
    CaseTruth t;
    t.tree = tree_from_json(j);
    for (const auto& p : j.at("plaques")) t.plaques.push_back(plaque_from_json(p));
    t.case_class = case_ground_truth(t.plaques);
    return t;
}

}  // namespace ccta
