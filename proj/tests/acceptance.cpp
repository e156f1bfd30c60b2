// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
// Usage: acceptance <work-dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ccta/service/cohort_eval.hpp"
#include "ccta/service/service.hpp"
#include "oracles.hpp"
#include "study.hpp"

using namespace ccta;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int failures = 0;

void verdict(int id, const char* title, bool ok, const std::string& detail) {
    std::printf("%s %d %s: %s\n", ok ? "PASS" : "FAIL", id, title, detail.c_str());
    std::fflush(stdout);
    failures += !ok;
}

std::string pct(double v) { return fmt("%.2f%%", v); }

// 1 -----------------------------------------------------------------------------

void metric_arithmetic() {
    const auto t0 = Clock::now();
    int cells = 0, wrong = 0;
    for (const auto& t : oracle::reference_tables()) {
        const ConfusionMatrix cm{t.tp, t.fp, t.fn, t.tn};
        const auto r = make_report(t.name, cm, metrics(cm), std::nullopt, t.has_prevalence);
        for (const auto& want : t.rows) {
            ++cells;
            bool found = false;
            for (const auto& row : r.rows)
                if (row.metric == want.metric) found = row.calculated == pct(want.value);
            if (!found) {
                ++wrong;
                std::printf("  mismatch %s %s\n", t.name, want.metric);
            }
        }
    }
    const double s = seconds_since(t0);
    verdict(1, "metric arithmetic", wrong == 0 && s < 1.0,
            fmt("%d/%d calculated values reproduced in %.3f s", cells - wrong, cells, s));
}

// 2 -----------------------------------------------------------------------------

void confidence_intervals() {
    const auto sens = clopper_pearson(49, 50);
    const auto acc = clopper_pearson(69, 100);
    const double cp_err = std::max({std::abs(100 * sens.lo - 89.35), std::abs(100 * sens.hi - 99.95),
                                    std::abs(100 * acc.lo - 58.97), std::abs(100 * acc.hi - 77.87)});
    double pv_err = 0;
    int pv_count = 0;
    for (const auto& t : oracle::reference_tables()) {
        const ConfusionMatrix cm{t.tp, t.fp, t.fn, t.tn};
        const auto ms = metrics(cm);
        for (const auto& want : t.rows) {
            const std::string name = want.metric;
            if (name != "PPV" && name != "NPV") continue;
            const auto& ci = (name == "PPV" ? ms.ppv : ms.npv).ci;
            if (!ci) {
                pv_err = INFINITY;
                continue;
            }
            pv_err = std::max({pv_err, std::abs(100 * ci->lo - want.lo), std::abs(100 * ci->hi - want.hi)});
            ++pv_count;
        }
    }
    verdict(2, "confidence intervals", cp_err <= 0.02 && pv_err <= 1.5 && pv_count == 6,
            fmt("Clopper-Pearson max deviation %.4f pp; %d PPV/NPV logit intervals, max deviation %.4f pp", cp_err,
                pv_count, pv_err));
}

// 3 -----------------------------------------------------------------------------

bool scan_clean(const oracle::ManifestScan& s) {
    return s.diseased_clean_in_vessel_items == 0 && s.normal_plaque_in_vessel_items == 0 && s.cross_subset_items == 0 &&
           s.augmented_outside_training == 0 && s.restored_missing == 0 && s.restored_extra == 0;
}

std::string describe(const oracle::ManifestScan& s) {
    return fmt("diseased-clean in vessel subsets %d, restored missing %d, restored extra %d",
               s.diseased_clean_in_vessel_items, s.restored_missing, s.restored_extra);
}

struct CurationRun {
    std::string paper_manifest;
    std::string cohort_manifest;
    int augmented_positives = 0;
    oracle::ManifestScan paper_scan, cohort_scan;
    double cohort_seconds = 0;
};

/// Labels and curates a 100-case cohort from its trees and annotations.
CurationRun run_curation() {
    CurationRun r;
    const auto f = oracle::paper_scale_fixture(3);
    const auto pm = assemble_vessel_dataset(f.split, f.labels, f.mpvs, 6, 3);
    r.augmented_positives = pm.counts.positive_items[0];
    r.paper_scan = oracle::scan_manifest(pm, f.labels);
    r.paper_manifest = manifest_text(pm);

    const auto t0 = Clock::now();
    CohortSpec spec;
    spec.n_cases = 100;
    spec.prevalence = 0.28;
    spec.seed = 31;
    const auto classes = cohort_classes(spec);
    std::vector<CaseEntry> entries;
    std::vector<ExtractionLabel> labels;
    std::vector<MpvRef> refs;
    for (int i = 0; i < spec.n_cases; ++i) {
        const auto pc = generate_case(spec, i, classes[static_cast<std::size_t>(i)], false);
        const auto ls = classify_extractions(pc.tree, pc.plaques, ground_truth_extractions(pc.tree));
        entries.push_back({pc.case_id, case_ground_truth(pc.plaques)});
        for (const auto& l : ls) refs.push_back({pc.case_id, l.extraction_id, 18});
        labels.insert(labels.end(), ls.begin(), ls.end());
    }
    const auto split = split_cases(entries, {3, 1, 1}, 31);
    const auto cm = assemble_vessel_dataset(split, labels, refs, 6, 31);
    r.cohort_scan = oracle::scan_manifest(cm, labels);
    r.cohort_seconds = seconds_since(t0);
    r.cohort_manifest = manifest_text(cm);
    return r;
}

// 6 -----------------------------------------------------------------------------

struct LearningRun {
    std::string manifest;
    std::string model_hash;
    std::shared_ptr<const Model> model;
};

LearningRun train_desk_model(const fs::path& work) {
    CohortSpec spec;
    spec.n_cases = 100;
    spec.prevalence = 0.5;
    spec.obstructive_fraction = 0.5;
    spec.seed = 11;
    const MpvParams mp;
    const auto corpus = build_corpus(spec, mp);
    const auto split = split_cases(corpus.case_entries(), {3, 1, 1}, 5);
    const auto manifest = assemble_vessel_dataset(split, corpus.labels(), corpus.mpv_refs(), 6, 5);
    TrainConfig cfg;
    cfg.rotation_max_deg = 3;
    cfg.seed = 3;
    int epochs = 0;
    auto model = train(manifest, ModelSpec{}, cfg, corpus.provider(), [&](const EpochLog&) { ++epochs; });
    std::printf("  trained %d epochs\n", epochs);
    LearningRun r{manifest_text(manifest), model_hash(model), nullptr};
    fs::create_directories(work);
    write_file((work / "manifest.json").string(), r.manifest);
    write_model((work / "model").string(), model);
    r.model = std::make_shared<const Model>(std::move(model));
    return r;
}

service::CohortEvaluation evaluate_held_out(const Model& model) {
    CohortSpec spec;
    spec.n_cases = 100;
    spec.prevalence = 0.28;
    spec.seed = 22;
    const auto corpus = build_corpus(spec, MpvParams{});
    const service::ModelScorer scorer(std::shared_ptr<const Model>(&model, [](const Model*) {}), "desk");
    std::vector<service::CaseOutcome> outcomes;
    for (const auto& c : corpus.cases) outcomes.push_back(service::score_material(c, scorer));
    return service::evaluate_outcomes(outcomes, 0.5, "held-out");
}

// 7 -----------------------------------------------------------------------------

void pipeline_robustness(const fs::path& work, std::shared_ptr<const Model> model) {
    CohortSpec spec;
    spec.n_cases = 24;
    spec.prevalence = 0.28;
    spec.seed = 71;
    const auto classes = cohort_classes(spec);
    fs::remove_all(work);
    service::ServiceConfig cfg;
    cfg.data_dir = work.string();
    service::Service svc(cfg, std::make_shared<service::ModelScorer>(std::move(model), "desk"));
    std::vector<std::string> jobs;
    for (int i = 0; i < spec.n_cases; ++i) {
        const auto cls = classes[static_cast<std::size_t>(i)];
        const auto pc = generate_case(spec, i, cls);
        const auto st = test::study_from(pc, to_string(case_ground_truth(pc.plaques)));
        jobs.push_back(svc.ingest_study(st.header, st.raw, st.metadata, 75));
    }
    const auto noise = test::noise_study("noise0000");
    jobs.push_back(svc.ingest_study(noise.header, noise.raw, noise.metadata, 75));
    svc.process_all();

    int completed = 0, unexpected = 0;
    bool noise_failed_quality = false;
    double worst_ms = 0;
    std::map<std::string, double> stage_worst;
    for (const auto& id : jobs) {
        const auto job = svc.job(id);
        double ms = 0;
        for (const auto& t : job.stage_timings_ms) {
            ms += t.ms;
            stage_worst[t.stage] = std::max(stage_worst[t.stage], t.ms);
        }
        worst_ms = std::max(worst_ms, ms);
        const bool ok = job.state == service::JobState::InferenceReady;
        completed += ok;
        if (job.case_id == "noise0000") {
            noise_failed_quality = job.state == service::JobState::Failed && job.error == service::kInadequateQuality;
        } else if (!ok) {
            ++unexpected;
            std::printf("  %s failed: %s\n", job.case_id.c_str(), job.error.c_str());
        }
    }
    std::string stages;
    for (const char* s : {"load", "centerline", "straighten", "mpv", "predict", "aggregate", "persist"})
        stages += fmt(" %s %.0f", s, stage_worst[s]);
    const int total = static_cast<int>(jobs.size());
    verdict(7, "pipeline robustness", noise_failed_quality && unexpected == 0 && worst_ms < 10000,
            fmt("completion %d/%d = %.0f%%; noise case %s; other failures %d; worst case %.0f ms; worst per stage (ms):%s",
                completed, total, 100.0 * completed / total,
                noise_failed_quality ? "Failed(inadequate image quality)" : "NOT flagged", unexpected, worst_ms,
                stages.c_str()));
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "ccta-acceptance";
    fs::create_directories(work);

    metric_arithmetic();
    confidence_intervals();

    const auto curation = run_curation();
    verdict(3, "curation structure",
            curation.augmented_positives == 2364 && scan_clean(curation.paper_scan) && scan_clean(curation.cohort_scan) &&
                curation.cohort_seconds < 10,
            fmt("paper scale: %d augmented positives, %s | 100-case cohort: %s, %.2f s", curation.augmented_positives,
                describe(curation.paper_scan).c_str(), describe(curation.cohort_scan).c_str(),
                curation.cohort_seconds));

    {
        const auto t0 = Clock::now();
        Rng rng(20240611);
        int extractions = 0, mismatches = 0;
        for (int trial = 0; trial < 1000; ++trial) {
            const auto tree = oracle::random_small_tree(rng);
            const auto plaques = oracle::random_plaques(rng, tree);
            for (const auto& e : ground_truth_extractions(tree)) {
                const auto got = classify_extraction(tree, plaques, e);
                const auto want = oracle::walk_label(tree, plaques, e.extraction_id);
                ++extractions;
                mismatches += got.label != want.label || got.usage != want.usage;
            }
        }
        const double s = seconds_since(t0);
        verdict(4, "labeling oracle", mismatches == 0 && s < 10,
                fmt("1000 trees, %d extractions, %d mismatches, %.2f s", extractions, mismatches, s));
    }

    {
        const auto t0 = Clock::now();
        const auto g = oracle::gradient_check();
        const double s = seconds_since(t0);
        std::string groups;
        bool every_group = true;
        for (const auto& grp : g.groups) {
            groups += fmt(" %s %zu/%.1e", grp.name.c_str(), grp.probes, grp.worst);
            every_group = every_group && grp.probes > 0;
        }
        verdict(5, "gradient check", every_group && g.probes() >= 100 && g.worst() < 1e-4 && s < 60,
                fmt("%zu probes, worst relative error %.2e, %.1f s; per layer (probes/worst):%s", g.probes(), g.worst(),
                    s, groups.c_str()));
    }

    const auto t6 = Clock::now();
    const auto learning = train_desk_model(work / "run1");
    const auto ev = evaluate_held_out(*learning.model);
    const double s6 = seconds_since(t6);
    const double auc = ev.roc ? ev.roc->auc : 0.0;
    const auto& ccm = ev.case_level.cm;
    const double npv = ccm.tn + ccm.fn ? static_cast<double>(ccm.tn) / static_cast<double>(ccm.tn + ccm.fn) : 0.0;
    write_file((work / "run1" / "held_out.txt").string(), service::render_text(ev));
    verdict(6, "end-to-end learning", auc >= 0.9 && npv >= 0.9 && s6 < 1800,
            fmt("vessel AUC %.4f, case NPV %.4f (tp %lld fp %lld fn %lld tn %lld), train+eval %.0f s", auc, npv,
                static_cast<long long>(ccm.tp), static_cast<long long>(ccm.fp), static_cast<long long>(ccm.fn),
                static_cast<long long>(ccm.tn), s6));

    pipeline_robustness(work / "service", learning.model);

    const auto curation2 = run_curation();
    const auto learning2 = train_desk_model(work / "run2");
    const bool same = curation.paper_manifest == curation2.paper_manifest &&
                      curation.cohort_manifest == curation2.cohort_manifest && learning.manifest == learning2.manifest &&
                      learning.model_hash == learning2.model_hash;
    verdict(8, "determinism", same,
            fmt("curation manifests %s, training manifest %s, model hash %s vs %s",
                curation.paper_manifest == curation2.paper_manifest &&
                        curation.cohort_manifest == curation2.cohort_manifest
                    ? "identical"
                    : "DIFFER",
                learning.manifest == learning2.manifest ? "identical" : "DIFFERS", learning.model_hash.c_str(),
                learning2.model_hash.c_str()));

    return failures == 0 ? 0 : 1;
}
