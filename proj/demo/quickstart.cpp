// One diseased phantom through reference extraction, MPV and the baseline scorer.
#include <cstdio>

#include "ccta/classifier.hpp"
#include "ccta/dataset.hpp"
#include "ccta/evaluation.hpp"

int main() {
    ccta::CohortSpec spec;
    spec.seed = 42;
    const auto pc = ccta::generate_case(spec, 0, ccta::IntendedClass::Obstructive);
    const auto m = ccta::process_case(pc.tree, pc.plaques, pc.volume, ccta::MpvParams{}, true);

    std::printf("%s: %s, %zu extractions\n", m.case_id.c_str(), ccta::to_string(m.case_class), m.extractions.size());
    for (const auto& p : pc.plaques)
        std::printf("  plaque on %s %.1f-%.1f mm, %.0f%%\n", p.segment_id.c_str(), p.start_mm, p.end_mm, p.stenosis_pct);

    std::vector<bool> pred, truth;
    for (const auto& l : m.labels) {
        const double p = ccta::baseline_predict(m.mprs.at(l.extraction_id));
        std::printf("  %-12s %-30s p=%.3f\n", l.extraction_id.c_str(), ccta::to_string(l.usage), p);
        pred.push_back(p >= 0.5);
        truth.push_back(l.usage == ccta::Usage::DirectPlaque);
    }
    const auto cm = ccta::confusion(pred, truth);
    std::printf("\n%s", ccta::render_text(ccta::make_report("baseline, one case", cm, ccta::metrics(cm), std::nullopt, false))
                            .c_str());
}
