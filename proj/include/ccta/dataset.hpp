#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ccta/annotation.hpp"
#include "ccta/classifier.hpp"
#include "ccta/curation.hpp"
#include "ccta/geometry.hpp"
#include "ccta/mpv.hpp"
#include "ccta/phantom.hpp"
#include "ccta/volume.hpp"

namespace ccta {

struct MpvParams {
    int k = 18;
    MosaicLayout layout{18, 1};
    StraightenParams straighten{};
};

inline nlohmann::json to_json(const MpvParams& p) {
    return {{"k", p.k},
            {"layout", {p.layout.rows, p.layout.cols}},
            {"width", p.straighten.width},
            {"in_plane_spacing_mm", p.straighten.in_plane_spacing_mm},
            {"step_mm", p.straighten.step_mm}};
}

inline MpvParams mpv_params_from_json(const nlohmann::json& j) {
    MpvParams p;
    p.k = j.value("k", p.k);
    if (j.contains("layout")) p.layout = {j.at("layout").at(0).get<int>(), j.at("layout").at(1).get<int>()};
    p.straighten.width = j.value("width", p.straighten.width);
    p.straighten.in_plane_spacing_mm = j.value("in_plane_spacing_mm", p.straighten.in_plane_spacing_mm);
    p.straighten.step_mm = j.value("step_mm", p.straighten.step_mm);
    return p;
}

/// Everything downstream needs from one case, without the volume.
struct CaseMaterial {
    std::string case_id;
    CaseClass case_class = CaseClass::Normal;
    VesselTree tree;
    std::vector<PlaqueAnnotation> plaques;
    std::vector<Extraction> extractions;
    std::vector<ExtractionLabel> labels;
    std::map<std::string, MPV> mpvs;
    std::map<std::string, StraightenedMPR> mprs;  ///< only when requested
};

inline CaseMaterial process_case(const VesselTree& tree, const std::vector<PlaqueAnnotation>& plaques,
                                 const Volume& volume, const MpvParams& params, bool keep_mprs = false) {
    CaseMaterial m;
    m.case_id = tree.case_id;
    m.case_class = case_ground_truth(plaques);
    m.tree = tree;
    m.plaques = plaques;
    m.extractions = ground_truth_extractions(tree);
    m.labels = classify_extractions(tree, plaques, m.extractions);
    for (const auto& ex : m.extractions) {
        auto mpr = straighten(volume, ex, params.straighten);
        m.mpvs.emplace(ex.extraction_id, build_mpv(mpr, params.k, params.layout));
        if (keep_mprs) m.mprs.emplace(ex.extraction_id, std::move(mpr));
    }
    return m;
}

struct Corpus {
    std::vector<CaseMaterial> cases;  ///< sorted by case_id

    [[nodiscard]] std::vector<CaseEntry> case_entries() const {
        std::vector<CaseEntry> out;
        for (const auto& c : cases) out.push_back({c.case_id, c.case_class});
        return out;
    }
    [[nodiscard]] std::vector<ExtractionLabel> labels() const {
        std::vector<ExtractionLabel> out;
        for (const auto& c : cases) out.insert(out.end(), c.labels.begin(), c.labels.end());
        return out;
    }
    [[nodiscard]] std::vector<MpvRef> mpv_refs() const {
        std::vector<MpvRef> out;
        for (const auto& c : cases)
            for (const auto& [id, m] : c.mpvs) out.push_back({c.case_id, id, m.k()});
        return out;
    }
    [[nodiscard]] const CaseMaterial& at(const std::string& case_id) const {
        for (const auto& c : cases)
            if (c.case_id == case_id) return c;
        throw Error(ErrorKind::UnknownCase, "unknown case " + case_id);
    }
    /// Provider over this corpus; the corpus must outlive it.
    [[nodiscard]] MpvProvider provider() const {
        return [this](const std::string& case_id, const std::string& extraction_id) {
            const auto& c = at(case_id);
            const auto it = c.mpvs.find(extraction_id);
            require(it != c.mpvs.end(), ErrorKind::UnknownExtraction, "no MPV " + case_id + "/" + extraction_id);
            return it->second;
        };
    }
};

/// Generates a cohort case by case, keeping only the derived material.
inline Corpus build_corpus(const CohortSpec& spec, const MpvParams& params, unsigned workers = 1,
                           bool keep_mprs = false) {
    const auto classes = cohort_classes(spec);
    Corpus corpus;
    corpus.cases.resize(classes.size());
    workers = std::max(1u, workers);
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < classes.size(); i += workers) {
                    const auto pc = generate_case(spec, static_cast<int>(i), classes[i]);
                    corpus.cases[i] = process_case(pc.tree, pc.plaques, pc.volume, params, keep_mprs);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return corpus;
}

// -----------------------------------------------------------------------------
// Cohort directories
// -----------------------------------------------------------------------------

/// Writes `cohort.json` and, per case, `<id>.vol.json`, `<id>.vol.raw`,
/// `<id>.truth.json`. Returns the case ids.
inline std::vector<std::string> write_cohort(const std::string& dir, const CohortSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto classes = cohort_classes(spec);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const auto pc = generate_case(spec, static_cast<int>(i), classes[i]);
        const std::string base = (fs::path(dir) / pc.case_id).string();
        write_volume(base, pc.volume);
        write_file(base + ".truth.json", truth_to_json(pc.tree, pc.plaques).dump(1) + "\n");
        ids.push_back(pc.case_id);
    }
    nlohmann::json j = to_json(spec);
    j["cases"] = ids;
    write_file((fs::path(dir) / "cohort.json").string(), j.dump(1) + "\n");
    return ids;
}

struct CohortIndex {
    CohortSpec spec;
    std::vector<std::string> case_ids;
};

inline CohortIndex read_cohort_index(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto path = fs::path(dir) / "cohort.json";
    require(fs::exists(path), ErrorKind::Io, "no cohort.json in " + dir);
    try {
        const auto j = nlohmann::json::parse(read_file(path.string()));
        CohortIndex idx{cohort_spec_from_json(j), j.at("cases").get<std::vector<std::string>>()};
        require(!idx.case_ids.empty(), ErrorKind::EmptySubset, "cohort " + dir + " has no cases");
        return idx;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedInput, std::string("cohort.json: ") + e.what());
    }
}

struct StoredCase {
    CaseTruth truth;
    Volume volume;
};

inline StoredCase read_case(const std::string& dir, const std::string& case_id) {
    namespace fs = std::filesystem;
    const std::string base = (fs::path(dir) / case_id).string();
    StoredCase c;
    try {
        c.truth = truth_from_json(nlohmann::json::parse(read_file(base + ".truth.json")));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedInput, case_id + ".truth.json: " + e.what());
    }
    c.truth.tree.case_id = case_id;
    c.volume = read_volume(base);
    return c;
}

inline Corpus load_corpus(const std::string& dir, const MpvParams& params, bool keep_mprs = false) {
    const auto idx = read_cohort_index(dir);
    Corpus corpus;
    for (const auto& id : idx.case_ids) {
        const auto sc = read_case(dir, id);
        corpus.cases.push_back(process_case(sc.truth.tree, sc.truth.plaques, sc.volume, params, keep_mprs));
    }
    std::sort(corpus.cases.begin(), corpus.cases.end(),
              [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
    return corpus;
}

}  // namespace ccta
