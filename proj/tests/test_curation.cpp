#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "ccta/curation.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ccta;

namespace {

std::vector<CaseEntry> cohort(int obstructive, int nonobstructive, int normal) {
    std::vector<CaseEntry> out;
    char id[16];
    int n = 0;
    auto add = [&](int count, CaseClass c) {
        for (int i = 0; i < count; ++i) {
            std::snprintf(id, sizeof id, "c%04d", n++);
            out.push_back({id, c});
        }
    };
    add(obstructive, CaseClass::DiseasedObstructive);
    add(nonobstructive, CaseClass::DiseasedNonObstructive);
    add(normal, CaseClass::Normal);
    return out;
}

struct Tally {
    std::map<Subset, int> diseased, normal, obstructive;
};

Tally tally(const SplitAssignment& s) {
    Tally t;
    for (const auto& [id, a] : s) {
        (is_diseased(a.case_class) ? t.diseased : t.normal)[a.subset]++;
        if (a.case_class == CaseClass::DiseasedObstructive) t.obstructive[a.subset]++;
    }
    return t;
}

ExtractionLabel label(const std::string& c, const std::string& e, Usage u) {
    ExtractionLabel l;
    l.case_id = c;
    l.extraction_id = e;
    l.usage = u;
    l.label = u == Usage::CompletelyClean ? VesselLabel::AtherosclerosisFree : VesselLabel::PlaqueAnnotated;
    return l;
}

}  // namespace

TEST(SplitCases, PaperScaleThreeOneOne) {
    const auto t = tally(split_cases(cohort(100, 150, 250), {3, 1, 1}, 1));
    for (const auto* m : {&t.diseased, &t.normal}) {
        EXPECT_EQ(m->at(Subset::Training), 150);
        EXPECT_EQ(m->at(Subset::Validation), 50);
        EXPECT_EQ(m->at(Subset::Testing), 50);
        EXPECT_FALSE(m->count(Subset::Excluded));
    }
}

TEST(SplitCases, DeskScale) {
    const auto t = tally(split_cases(cohort(10, 15, 25), {3, 1, 1}, 9));
    for (const auto* m : {&t.diseased, &t.normal}) {
        EXPECT_EQ(m->at(Subset::Training), 15);
        EXPECT_EQ(m->at(Subset::Validation), 5);
        EXPECT_EQ(m->at(Subset::Testing), 5);
    }
}

TEST(SplitCases, MajorityClassTrimmedToBalance) {
    const auto s = split_cases(cohort(14, 14, 72), {3, 1, 1}, 2);
    const auto t = tally(s);
    for (auto sub : {Subset::Training, Subset::Validation, Subset::Testing})
        EXPECT_EQ(t.diseased.at(sub), t.normal.at(sub));
    EXPECT_EQ(t.normal.at(Subset::Excluded), 72 - 28);
    EXPECT_FALSE(t.diseased.count(Subset::Excluded));
}

TEST(SplitCases, ObstructiveSpreadEvenly) {
    const auto t = tally(split_cases(cohort(20, 30, 50), {3, 1, 1}, 4));
    EXPECT_NEAR(t.obstructive.at(Subset::Training), 12, 1);
    EXPECT_NEAR(t.obstructive.at(Subset::Validation), 4, 1);
    EXPECT_NEAR(t.obstructive.at(Subset::Testing), 4, 1);
}

TEST(SplitCases, DeterministicInSeed) {
    const auto c = cohort(20, 20, 40);
    const auto a = split_cases(c, {3, 1, 1}, 17), b = split_cases(c, {3, 1, 1}, 17);
    auto same = [](const SplitAssignment& x, const SplitAssignment& y) {
        for (const auto& [id, v] : x)
            if (y.at(id).subset != v.subset) return false;
        return true;
    };
    EXPECT_TRUE(same(a, b));
    EXPECT_FALSE(same(a, split_cases(c, {3, 1, 1}, 18)));
}

TEST(SplitCases, Errors) {
    EXPECT_THROWS_KIND(split_cases(cohort(2, 2, 30), {3, 1, 1}, 0), TooFewCases);
    EXPECT_THROWS_KIND(split_cases(cohort(10, 10, 4), {3, 1, 1}, 0), TooFewCases);
    auto dup = cohort(10, 10, 20);
    dup.push_back(dup.front());
    EXPECT_THROWS_KIND(split_cases(dup, {3, 1, 1}, 0), DuplicateCase);
    EXPECT_THROWS_KIND(split_cases(cohort(10, 10, 20), {3, 0, 1}, 0), InvalidArgument);
}

TEST(Assemble, PaperScaleCountsMatchDevelopmentTable) {
    const auto f = oracle::paper_scale_fixture(3);
    const auto m = assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, 3);
    const auto& c = m.counts;
    EXPECT_EQ(c.positive_sources[0], 394);
    EXPECT_EQ(c.positive_items, (std::array<int, 3>{2364, 50, 125}));
    EXPECT_EQ(c.negative_items, (std::array<int, 3>{2304, 50, 1066}));
    EXPECT_EQ(c.diseased_cases, (std::array<int, 3>{150, 50, 50}));
    EXPECT_EQ(c.normal_cases, (std::array<int, 3>{150, 50, 50}));
    EXPECT_EQ(c.restored_direct, 125);
    EXPECT_EQ(c.restored_upstream_added, 538);
    EXPECT_EQ(c.restored_clean_added, 353);
    EXPECT_EQ(c.restored_normal_clean, 1066);
    const auto report = manifest_report(m);
    for (const char* cell : {"2364", "2304", "1066", "538", "353", "125"})
        EXPECT_NE(report.find(cell), std::string::npos) << cell;
}

TEST(Assemble, ExhaustiveScanFindsNoLeaks) {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto f = oracle::paper_scale_fixture(seed);
        const auto m = assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, seed);
        const auto scan = oracle::scan_manifest(m, f.labels);
        EXPECT_EQ(scan.diseased_clean_in_vessel_items, 0);
        EXPECT_EQ(scan.normal_plaque_in_vessel_items, 0);
        EXPECT_EQ(scan.cross_subset_items, 0);
        EXPECT_EQ(scan.augmented_outside_training, 0);
        EXPECT_EQ(scan.restored_missing, 0);
        EXPECT_EQ(scan.restored_extra, 0);
        EXPECT_EQ(scan.diseased_clean_restored, 538 + 353);
    }
}

TEST(Assemble, AugmentedItemsTraceToDistinctOrdersOfOneTrainingSource) {
    const auto f = oracle::paper_scale_fixture(5);
    const auto m = assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, 5);
    std::map<std::string, std::set<std::vector<int>>> orders;
    std::map<std::string, Usage> usage_of;
    for (const auto& l : f.labels) usage_of[l.case_id + "/" + l.extraction_id] = l.usage;
    std::vector<int> identity(18);
    std::iota(identity.begin(), identity.end(), 0);
    for (const auto& it : m.vessel_items) {
        if (!it.augmented) continue;
        EXPECT_EQ(it.subset, Subset::Training);
        EXPECT_EQ(usage_of.at(it.case_id + "/" + it.extraction_id), Usage::DirectPlaque);
        EXPECT_NE(it.permutation, identity);
        orders[it.case_id + "/" + it.extraction_id].insert(it.permutation);
    }
    EXPECT_EQ(orders.size(), 394u);
    for (const auto& [k, set] : orders) EXPECT_EQ(set.size(), 6u) << k;
}

TEST(Assemble, ValidationHoldsOneItemPerCase) {
    const auto f = oracle::paper_scale_fixture(6);
    const auto m = assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, 6);
    std::map<std::string, int> per_case;
    for (const auto* it : m.items_in(Subset::Validation)) {
        ++per_case[it->case_id];
        EXPECT_FALSE(it->augmented);
    }
    EXPECT_EQ(per_case.size(), 100u);
    for (const auto& [c, n] : per_case) EXPECT_EQ(n, 1) << c;
}

TEST(Assemble, DeskArithmeticAndRowSums) {
    oracle::FixtureCounts counts;
    counts.diseased[0] = {33, 9, 12};
    counts.diseased[1] = {8, 3, 4};
    counts.diseased[2] = {11, 5, 6};
    counts.normal_clean = {120, 40, 40};
    const auto f = oracle::curation_fixture(25, 25, counts, 8);
    const auto m = assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, 8);
    EXPECT_EQ(m.counts.positive_items[0], 6 * 33);
    EXPECT_EQ(m.counts.positive_items[1] + m.counts.negative_items[1], 10);
    // independent recount of the manifest entries
    int items = 0;
    for (const auto& it : m.vessel_items) items += it.subset != Subset::Excluded;
    EXPECT_EQ(m.counts.vessel_total(), items);
    std::size_t restored = 0;
    for (const auto& [c, l] : m.restored_case_items) restored += l.size();
    EXPECT_EQ(static_cast<std::size_t>(m.counts.restored_total()), restored);
    EXPECT_EQ(m.counts.restored_total(), 11 + 5 + 6 + 40);
}

TEST(Assemble, BalanceRuleChoosesFold) {
    EXPECT_EQ(suggest_da_fold(394, 2304, 18), 5);
    EXPECT_LE(std::abs(5 * 394 - 2304), 0.25 * 2304);
    EXPECT_EQ(suggest_da_fold(10, 100, 3), 5);
    EXPECT_EQ(suggest_da_fold(0, 100, 18), 1);
}

TEST(Assemble, FoldCappedByAvailableOrders) {
    auto f = oracle::paper_scale_fixture(2);
    for (auto& r : f.mpvs) r.k = 3;
    const auto m = assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, 2);
    EXPECT_EQ(m.da_fold, 6);
    EXPECT_EQ(m.da_fold_effective, 5);
    EXPECT_EQ(m.counts.positive_items[0], 5 * 394);
}

TEST(Assemble, Errors) {
    auto f = oracle::paper_scale_fixture(4);
    EXPECT_THROWS_KIND(assemble_vessel_dataset(f.split, f.labels, f.mpvs, 0, 4), InvalidArgument);

    auto missing = f.mpvs;
    missing.pop_back();
    EXPECT_THROWS_KIND(assemble_vessel_dataset(f.split, f.labels, missing, 6, 4), ManifestError);

    auto dup = f.labels;
    dup.push_back(dup.front());
    EXPECT_THROWS_KIND(assemble_vessel_dataset(f.split, dup, f.mpvs, 6, 4), ManifestError);

    // a Diseased validation case whose positives are all dropped
    std::string victim;
    for (const auto& [c, a] : f.split)
        if (a.subset == Subset::Validation && is_diseased(a.case_class)) victim = c;
    std::vector<ExtractionLabel> stripped;
    for (const auto& l : f.labels)
        if (!(l.case_id == victim && l.usage == Usage::DirectPlaque)) stripped.push_back(l);
    try {
        assemble_vessel_dataset(f.split, stripped, f.mpvs, 6, 4);
        ADD_FAILURE() << "no error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ManifestError);
        EXPECT_NE(std::string(e.what()).find(victim), std::string::npos);
    }
}

TEST(RestoreCases, UnionOfAllExtractions) {
    SplitAssignment split{{"d", {CaseClass::DiseasedObstructive, Subset::Testing}},
                          {"n", {CaseClass::Normal, Subset::Testing}},
                          {"t", {CaseClass::DiseasedObstructive, Subset::Training}}};
    std::vector<ExtractionLabel> labels;
    std::vector<MpvRef> mpvs;
    auto add = [&](const std::string& c, const std::string& e, Usage u) {
        labels.push_back(label(c, e, u));
        mpvs.push_back({c, e, 18});
    };
    for (const char* e : {"a", "b", "c"}) add("d", e, Usage::DirectPlaque);
    for (const char* e : {"u1", "u2"}) add("d", e, Usage::CleanBranchUpstreamPlaque);
    add("d", "z", Usage::CompletelyClean);
    for (const char* e : {"n1", "n2"}) add("n", e, Usage::CompletelyClean);
    add("t", "x", Usage::DirectPlaque);
    const auto r = restore_cases(split, labels, mpvs);
    EXPECT_EQ(r.at("d").size(), 6u);
    EXPECT_EQ(r.at("n").size(), 2u);
    EXPECT_FALSE(r.count("t"));
}

TEST(Manifest, DeterministicBytesAndJsonRoundTrip) {
    const auto f = oracle::paper_scale_fixture(11);
    const auto a = assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, 11);
    const auto b = assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, 11);
    EXPECT_EQ(manifest_text(a), manifest_text(b));
    EXPECT_NE(manifest_text(a), manifest_text(assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, 12)));
    const auto back = manifest_from_json(to_json(a));
    EXPECT_EQ(manifest_text(back), manifest_text(a));
    EXPECT_EQ(back.counts, a.counts);
    EXPECT_THROWS_KIND(manifest_from_json(nlohmann::json{{"format", "other"}}), MalformedInput);
    EXPECT_THROWS_KIND(manifest_from_json(nlohmann::json::object()), MalformedInput);
}

TEST(Manifest, EmptyReportIsAllZero) {
    DatasetManifest m;
    m.counts = summarize(m);
    EXPECT_EQ(m.counts, CountsSummary{});
    std::istringstream text(manifest_report(m));
    std::string line;
    int rows = 0;
    while (std::getline(text, line)) {
        if (line.rfind("augmentation", 0) == 0 || line.find("Training") != std::string::npos) continue;
        std::istringstream fields(line);
        std::string tok;
        while (fields >> tok) {
            if (std::isdigit(static_cast<unsigned char>(tok[0]))) {
                EXPECT_EQ(tok, "0") << line;
            }
        }
        ++rows;
    }
    EXPECT_EQ(rows, 7);
}
