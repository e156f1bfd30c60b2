#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccta/annotation.hpp"
#include "ccta/core.hpp"
#include "ccta/mpv.hpp"

namespace ccta {

enum class Subset { Training, Validation, Testing, Excluded };

inline const char* to_string(Subset s) {
    switch (s) {
    case Subset::Training: return "Training";
    case Subset::Validation: return "Validation";
    case Subset::Testing: return "Testing";
    case Subset::Excluded: return "Excluded";
    }
    return "?";
}

inline Subset subset_from_string(const std::string& s) {
    if (s == "Training") return Subset::Training;
    if (s == "Validation") return Subset::Validation;
    if (s == "Testing") return Subset::Testing;
    if (s == "Excluded") return Subset::Excluded;
    throw Error(ErrorKind::MalformedInput, "unknown subset " + s);
}

struct CaseEntry {
    std::string case_id;
    CaseClass case_class = CaseClass::Normal;
};

struct CaseAssignment {
    CaseClass case_class = CaseClass::Normal;
    Subset subset = Subset::Excluded;
};

/// case_id -> assignment, ordered by case_id.
using SplitAssignment = std::map<std::string, CaseAssignment>;

namespace detail {

/// Deals `n` ordered items into bins so every prefix holds each bin close to
/// its proportional share; bin totals are exactly `targets`.
inline std::vector<int> proportional_deal(const std::vector<int>& targets) {
    int n = 0;
    for (int t : targets) n += t;
    std::vector<int> filled(targets.size(), 0), out;
    out.reserve(n);
    for (int k = 0; k < n; ++k) {
        int best = -1;
        double best_deficit = 0;
        for (std::size_t b = 0; b < targets.size(); ++b) {
            if (filled[b] >= targets[b]) continue;
            const double deficit = static_cast<double>(targets[b]) * (k + 1) / n - filled[b];
            if (best < 0 || deficit > best_deficit + 1e-12) {
                best = static_cast<int>(b);
                best_deficit = deficit;
            }
        }
        ++filled[best];
        out.push_back(best);
    }
    return out;
}

inline std::array<int, 3> split_sizes(int n, std::array<int, 3> ratio) {
    const int total = ratio[0] + ratio[1] + ratio[2];
    const int val = static_cast<int>(std::lround(static_cast<double>(n) * ratio[1] / total));
    const int test = static_cast<int>(std::lround(static_cast<double>(n) * ratio[2] / total));
    return {n - val - test, val, test};
}

}  // namespace detail

/// Stratified split with equal Diseased and Normal counts per subset. The
/// larger class is trimmed to the smaller one; trimmed cases are Excluded.
/// Within Diseased, obstructive and non-obstructive cases are spread evenly.
inline SplitAssignment split_cases(const std::vector<CaseEntry>& cases,
                                   std::array<int, 3> ratio = {3, 1, 1}, std::uint64_t seed = 0) {
    require(ratio[0] > 0 && ratio[1] > 0 && ratio[2] > 0, ErrorKind::InvalidArgument,
            "split ratio entries must be positive");
    std::vector<std::string> obstructive, nonobstructive, normal;
    SplitAssignment out;
    for (const auto& c : cases) {
        require(!out.count(c.case_id), ErrorKind::DuplicateCase, "duplicate case id " + c.case_id);
        out[c.case_id] = {c.case_class, Subset::Excluded};
        if (c.case_class == CaseClass::DiseasedObstructive) obstructive.push_back(c.case_id);
        else if (c.case_class == CaseClass::DiseasedNonObstructive) nonobstructive.push_back(c.case_id);
        else normal.push_back(c.case_id);
    }
    const int n_diseased = static_cast<int>(obstructive.size() + nonobstructive.size());
    const int n_normal = static_cast<int>(normal.size());
    require(n_diseased >= 5 && n_normal >= 5, ErrorKind::TooFewCases,
            "need at least 5 Diseased and 5 Normal cases, got " + std::to_string(n_diseased) + " and " +
                std::to_string(n_normal));
    const int m = std::min(n_diseased, n_normal);
    const auto sizes = detail::split_sizes(m, ratio);

    auto deal = [&](std::vector<std::string> ordered, int available) {
        std::vector<int> targets{sizes[0], sizes[1], sizes[2], available - m};
        const auto bins = detail::proportional_deal(targets);
        for (std::size_t i = 0; i < ordered.size(); ++i) out[ordered[i]].subset = static_cast<Subset>(bins[i]);
    };

    std::sort(obstructive.begin(), obstructive.end());
    std::sort(nonobstructive.begin(), nonobstructive.end());
    std::sort(normal.begin(), normal.end());
    Rng rng(derive_seed(seed, 0x5B17));
    rng.shuffle(obstructive);
    rng.shuffle(nonobstructive);
    rng.shuffle(normal);

    std::vector<std::string> diseased = obstructive;
    diseased.insert(diseased.end(), nonobstructive.begin(), nonobstructive.end());
    deal(diseased, n_diseased);
    deal(normal, n_normal);
    return out;
}

/// An available MPV for one extraction; `k` is its tile count.
struct MpvRef {
    std::string case_id;
    std::string extraction_id;
    int k = 18;
};

struct VesselItem {
    std::string case_id;
    std::string extraction_id;
    VesselLabel label = VesselLabel::AtherosclerosisFree;
    Usage usage = Usage::CompletelyClean;
    Subset subset = Subset::Training;
    bool augmented = false;
    int augmentation_index = -1;   ///< 0-based variant index for augmented items
    std::vector<int> permutation;  ///< tile order; empty means canonical

    [[nodiscard]] int target() const { return label == VesselLabel::PlaqueAnnotated ? 1 : 0; }
};

struct RestoredItem {
    std::string extraction_id;
    VesselLabel label = VesselLabel::AtherosclerosisFree;
    Usage usage = Usage::CompletelyClean;
};

/// Table I-shaped counts. Subset-indexed arrays are Training, Validation, Testing.
struct CountsSummary {
    std::array<int, 3> diseased_cases{};
    std::array<int, 3> normal_cases{};
    int excluded_cases = 0;
    std::array<int, 3> positive_items{};    ///< including augmented variants
    std::array<int, 3> positive_sources{};  ///< distinct extractions
    std::array<int, 3> negative_items{};
    int restored_diseased_cases = 0;
    int restored_normal_cases = 0;
    int restored_direct = 0;
    int restored_upstream_added = 0;
    int restored_clean_added = 0;
    int restored_normal_clean = 0;

    [[nodiscard]] int vessel_total() const {
        int t = 0;
        for (int i = 0; i < 3; ++i) t += positive_items[i] + negative_items[i];
        return t;
    }
    [[nodiscard]] int restored_total() const {
        return restored_direct + restored_upstream_added + restored_clean_added + restored_normal_clean;
    }
    friend bool operator==(const CountsSummary&, const CountsSummary&) = default;
};

struct DatasetManifest {
    SplitAssignment split;
    std::vector<VesselItem> vessel_items;
    std::map<std::string, std::vector<RestoredItem>> restored_case_items;
    std::uint64_t seed = 0;
    int da_fold = 6;            ///< requested
    int da_fold_effective = 6;  ///< after capping at K! - 1
    nlohmann::json source = nlohmann::json::object();  ///< where MPVs come from; opaque here
    CountsSummary counts;

    [[nodiscard]] std::vector<const VesselItem*> items_in(Subset s) const {
        std::vector<const VesselItem*> out;
        for (const auto& it : vessel_items)
            if (it.subset == s) out.push_back(&it);
        return out;
    }
};

namespace detail {

struct CaseLabels {
    std::vector<const ExtractionLabel*> direct, upstream, clean;
    [[nodiscard]] std::size_t size() const { return direct.size() + upstream.size() + clean.size(); }
};

inline std::map<std::string, CaseLabels> group_labels(const SplitAssignment& split,
                                                      const std::vector<ExtractionLabel>& labels,
                                                      const std::vector<MpvRef>& mpvs,
                                                      std::map<std::string, int>* k_of = nullptr) {
    std::map<std::pair<std::string, std::string>, int> available;
    for (const auto& m : mpvs) available[{m.case_id, m.extraction_id}] = m.k;
    std::vector<const ExtractionLabel*> sorted;
    for (const auto& l : labels) sorted.push_back(&l);
    std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
        return std::tie(a->case_id, a->extraction_id) < std::tie(b->case_id, b->extraction_id);
    });
    std::map<std::string, CaseLabels> out;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& l = *sorted[i];
        if (i > 0 && sorted[i - 1]->case_id == l.case_id && sorted[i - 1]->extraction_id == l.extraction_id)
            throw Error(ErrorKind::ManifestError, "duplicate label for " + l.case_id + "/" + l.extraction_id);
        const auto sit = split.find(l.case_id);
        require(sit != split.end(), ErrorKind::ManifestError, "labeled case " + l.case_id + " has no split assignment");
        const auto mit = available.find({l.case_id, l.extraction_id});
        require(mit != available.end(), ErrorKind::ManifestError,
                "no MPV for " + l.case_id + "/" + l.extraction_id);
        if (k_of) (*k_of)[l.case_id + "/" + l.extraction_id] = mit->second;
        if (!is_diseased(sit->second.case_class))
            require(l.label == VesselLabel::AtherosclerosisFree, ErrorKind::ManifestError,
                    "Normal case " + l.case_id + " has a plaque-annotated extraction " + l.extraction_id);
        auto& g = out[l.case_id];
        switch (l.usage) {
        case Usage::DirectPlaque: g.direct.push_back(&l); break;
        case Usage::CleanBranchUpstreamPlaque: g.upstream.push_back(&l); break;
        case Usage::CompletelyClean: g.clean.push_back(&l); break;
        }
    }
    return out;
}

inline VesselItem item_from(const ExtractionLabel& l, Subset s) {
    VesselItem it;
    it.case_id = l.case_id;
    it.extraction_id = l.extraction_id;
    it.label = l.label;
    it.usage = l.usage;
    it.subset = s;
    return it;
}

}  // namespace detail

/// Complete un-augmented extraction list of every Testing case.
inline std::map<std::string, std::vector<RestoredItem>> restore_cases(const SplitAssignment& split,
                                                                       const std::vector<ExtractionLabel>& labels,
                                                                       const std::vector<MpvRef>& mpvs) {
    const auto groups = detail::group_labels(split, labels, mpvs);
    std::map<std::string, std::vector<RestoredItem>> out;
    for (const auto& [case_id, a] : split) {
        if (a.subset != Subset::Testing) continue;
        auto& list = out[case_id];
        const auto g = groups.find(case_id);
        if (g == groups.end()) continue;
        std::vector<const ExtractionLabel*> all;
        for (const auto* v : {&g->second.direct, &g->second.upstream, &g->second.clean})
            all.insert(all.end(), v->begin(), v->end());
        std::sort(all.begin(), all.end(),
                  [](const auto* x, const auto* y) { return x->extraction_id < y->extraction_id; });
        for (const auto* l : all) list.push_back({l->extraction_id, l->label, l->usage});
    }
    return out;
}

inline CountsSummary summarize(const DatasetManifest& m) {
    CountsSummary c;
    for (const auto& [id, a] : m.split) {
        if (a.subset == Subset::Excluded) {
            ++c.excluded_cases;
            continue;
        }
        const auto s = static_cast<std::size_t>(a.subset);
        (is_diseased(a.case_class) ? c.diseased_cases : c.normal_cases)[s]++;
    }
    for (const auto& it : m.vessel_items) {
        const auto s = static_cast<std::size_t>(it.subset);
        if (it.target()) {
            c.positive_items[s]++;
            if (!it.augmented || it.augmentation_index == 0) c.positive_sources[s]++;
        } else {
            c.negative_items[s]++;
        }
    }
    for (const auto& [id, items] : m.restored_case_items) {
        const auto a = m.split.find(id);
        const bool diseased = a != m.split.end() && is_diseased(a->second.case_class);
        (diseased ? c.restored_diseased_cases : c.restored_normal_cases)++;
        for (const auto& r : items) {
            if (!diseased) ++c.restored_normal_clean;
            else if (r.usage == Usage::DirectPlaque) ++c.restored_direct;
            else if (r.usage == Usage::CleanBranchUpstreamPlaque) ++c.restored_upstream_added;
            else ++c.restored_clean_added;
        }
    }
    return c;
}

/// Largest usable augmentation multiplier for tile count `k`.
inline int cap_da_fold(int da_fold, int k) {
    const std::uint64_t available = factorial_saturating(k) - 1;
    return static_cast<int>(std::min<std::uint64_t>(static_cast<std::uint64_t>(da_fold), available));
}

/// Builds vessel-level subsets and restored test cases.
inline DatasetManifest assemble_vessel_dataset(const SplitAssignment& split,
                                               const std::vector<ExtractionLabel>& labels,
                                               const std::vector<MpvRef>& mpvs, int da_fold, std::uint64_t seed) {
    require(da_fold >= 1, ErrorKind::InvalidArgument, "da_fold must be >= 1");
    std::map<std::string, int> k_of;
    const auto groups = detail::group_labels(split, labels, mpvs, &k_of);

    DatasetManifest m;
    m.split = split;
    m.seed = seed;
    m.da_fold = da_fold;
    m.da_fold_effective = da_fold;
    for (const auto& [key, k] : k_of) m.da_fold_effective = std::min(m.da_fold_effective, cap_da_fold(da_fold, k));

    const detail::CaseLabels none;
    std::uint64_t source_index = 0;
    std::uint64_t case_index = 0;
    for (const auto& [case_id, a] : split) {
        ++case_index;
        const auto git = groups.find(case_id);
        const auto& g = git == groups.end() ? none : git->second;
        const bool diseased = is_diseased(a.case_class);
        switch (a.subset) {
        case Subset::Excluded: break;
        case Subset::Training:
            if (diseased) {
                for (const auto* l : g.direct) {
                    const int k = k_of.at(case_id + "/" + l->extraction_id);
                    const auto perms =
                        distinct_permutations(k, m.da_fold_effective, derive_seed(derive_seed(seed, 0xDA), source_index++));
                    for (std::size_t v = 0; v < perms.size(); ++v) {
                        auto it = detail::item_from(*l, Subset::Training);
                        it.augmented = true;
                        it.augmentation_index = static_cast<int>(v);
                        it.permutation = perms[v];
                        m.vessel_items.push_back(std::move(it));
                    }
                }
            } else {
                for (const auto* l : g.clean) m.vessel_items.push_back(detail::item_from(*l, Subset::Training));
            }
            break;
        case Subset::Validation: {
            const auto& pool = diseased ? g.direct : g.clean;
            require(!pool.empty(), ErrorKind::ManifestError,
                    std::string("Validation case ") + case_id + " has no " +
                        (diseased ? "DIRECT_PLAQUE" : "COMPLETELY_CLEAN") + " extraction");
            Rng rng(derive_seed(derive_seed(seed, 0x7A1), case_index));
            m.vessel_items.push_back(detail::item_from(*pool[rng.below(pool.size())], Subset::Validation));
            break;
        }
        case Subset::Testing: {
            const auto& pool = diseased ? g.direct : g.clean;
            for (const auto* l : pool) m.vessel_items.push_back(detail::item_from(*l, Subset::Testing));
            break;
        }
        }
    }
    m.restored_case_items = restore_cases(split, labels, mpvs);
    m.counts = summarize(m);
    return m;
}

/// Smallest da_fold within [1, cap] whose training positives are within 25%
/// of the training negatives, or the closest achievable value.
inline int suggest_da_fold(int training_direct_sources, int training_negatives, int k, double tolerance = 0.25) {
    if (training_direct_sources <= 0 || training_negatives <= 0) return 1;
    const int cap = std::max(1, cap_da_fold(1 << 20, k));
    int best = 1;
    double best_err = 1e300;
    for (int f = 1; f <= std::min(cap, 4096); ++f) {
        const double err = std::abs(static_cast<double>(f) * training_direct_sources - training_negatives) /
                           training_negatives;
        if (err <= tolerance) return f;
        if (err < best_err) {
            best_err = err;
            best = f;
        }
    }
    return best;
}

// -----------------------------------------------------------------------------
// Report
// -----------------------------------------------------------------------------

inline nlohmann::json to_json(const CountsSummary& c) {
    auto arr = [](const std::array<int, 3>& a) { return nlohmann::json{a[0], a[1], a[2]}; };
    return {{"columns", {"Training", "Validation", "Testing"}},
            {"cases",
             {{"Diseased", arr(c.diseased_cases)}, {"Normal", arr(c.normal_cases)}, {"Excluded", c.excluded_cases}}},
            {"vessel_items",
             {{"PlaqueAnnotated", arr(c.positive_items)},
              {"PlaqueAnnotatedSources", arr(c.positive_sources)},
              {"AtherosclerosisFree", arr(c.negative_items)},
              {"total", c.vessel_total()}}},
            {"restored",
             {{"DiseasedCases", c.restored_diseased_cases},
              {"NormalCases", c.restored_normal_cases},
              {"Direct", c.restored_direct},
              {"UpstreamAdded", c.restored_upstream_added},
              {"CleanAdded", c.restored_clean_added},
              {"NormalClean", c.restored_normal_clean},
              {"total", c.restored_total()}}}};
}

/// Plain-text count grid laid out like the development-subset table.
inline std::string manifest_report(const DatasetManifest& m) {
    const auto& c = m.counts;
    std::string out;
    char line[256];
    auto row = [&](const char* group, const char* name, const std::array<int, 3>& v, const std::string& restored) {
        std::snprintf(line, sizeof line, "%-18s %-26s %10d %10d %10d %12s\n", group, name, v[0], v[1], v[2],
                      restored.c_str());
        out += line;
    };
    std::snprintf(line, sizeof line, "%-18s %-26s %10s %10s %10s %12s\n", "", "", "Training", "Validation",
                  "Testing", "Restored");
    out += line;
    row("Case", "Diseased", c.diseased_cases, std::to_string(c.restored_diseased_cases));
    row("", "Normal", c.normal_cases, std::to_string(c.restored_normal_cases));
    row("Vessel extraction", "Plaque-Annotated", c.positive_items, "-");
    row("", "  distinct extractions", c.positive_sources, "-");
    row("", "Atherosclerosis-Free", c.negative_items, "-");
    std::snprintf(line, sizeof line, "%-18s %-26s %10s %10s %10s %12d\n", "Restored added", "upstream-plaque clean",
                  "-", "-", "-", c.restored_upstream_added);
    out += line;
    std::snprintf(line, sizeof line, "%-18s %-26s %10s %10s %10s %12d\n", "", "completely clean", "-", "-", "-",
                  c.restored_clean_added);
    out += line;
    std::snprintf(line, sizeof line, "augmentation fold %d (requested %d); excluded cases %d; vessel items %d; "
                                     "restored items %d\n",
                  m.da_fold_effective, m.da_fold, c.excluded_cases, c.vessel_total(), c.restored_total());
    out += line;
    return out;
}

// -----------------------------------------------------------------------------
// Serialization
// -----------------------------------------------------------------------------

inline VesselLabel vessel_label_from_string(const std::string& s) {
    if (s == "PlaqueAnnotated") return VesselLabel::PlaqueAnnotated;
    if (s == "AtherosclerosisFree") return VesselLabel::AtherosclerosisFree;
    throw Error(ErrorKind::MalformedInput, "unknown label " + s);
}

inline nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json split = nlohmann::json::object();
    for (const auto& [id, a] : m.split)
        split[id] = {{"case_class", to_string(a.case_class)}, {"subset", to_string(a.subset)}};
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : m.vessel_items) {
        nlohmann::json j{{"case_id", it.case_id},
                         {"extraction_id", it.extraction_id},
                         {"label", to_string(it.label)},
                         {"usage", to_string(it.usage)},
                         {"subset", to_string(it.subset)},
                         {"augmented", it.augmented}};
        if (it.augmented) {
            j["augmentation_index"] = it.augmentation_index;
            j["permutation"] = it.permutation;
        }
        items.push_back(std::move(j));
    }
    nlohmann::json restored = nlohmann::json::object();
    for (const auto& [id, list] : m.restored_case_items) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : list)
            arr.push_back({{"extraction_id", r.extraction_id}, {"label", to_string(r.label)}, {"usage", to_string(r.usage)}});
        restored[id] = std::move(arr);
    }
    return {{"format", "ccta-manifest/1"},
            {"seed", m.seed},
            {"da_fold", m.da_fold},
            {"da_fold_effective", m.da_fold_effective},
            {"source", m.source},
            {"split_assignment", split},
            {"vessel_items", items},
            {"restored_case_items", restored},
            {"counts_summary", to_json(m.counts)}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    try {
        require(j.at("format") == "ccta-manifest/1", ErrorKind::MalformedInput, "unsupported manifest format");
        DatasetManifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.da_fold = j.at("da_fold").get<int>();
        m.da_fold_effective = j.at("da_fold_effective").get<int>();
        m.source = j.value("source", nlohmann::json::object());
        for (const auto& [id, a] : j.at("split_assignment").items())
            m.split[id] = {case_class_from_string(a.at("case_class")), subset_from_string(a.at("subset"))};
        for (const auto& x : j.at("vessel_items")) {
            VesselItem it;
            it.case_id = x.at("case_id");
            it.extraction_id = x.at("extraction_id");
            it.label = vessel_label_from_string(x.at("label"));
            it.usage = usage_from_string(x.at("usage"));
            it.subset = subset_from_string(x.at("subset"));
            it.augmented = x.at("augmented");
            if (it.augmented) {
                it.augmentation_index = x.at("augmentation_index");
                it.permutation = x.at("permutation").get<std::vector<int>>();
            }
            m.vessel_items.push_back(std::move(it));
        }
        for (const auto& [id, list] : j.at("restored_case_items").items()) {
            auto& out = m.restored_case_items[id];
            for (const auto& r : list)
                out.push_back({r.at("extraction_id"), vessel_label_from_string(r.at("label")),
                               usage_from_string(r.at("usage"))});
        }
        m.counts = summarize(m);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedInput, std::string("manifest: ") + e.what());
    }
}

/// Canonical manifest bytes; identical inputs give identical bytes.
inline std::string manifest_text(const DatasetManifest& m) { return to_json(m).dump(1) + "\n"; }

}  // namespace ccta
