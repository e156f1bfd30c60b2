#pragma once

#include <string>

#include <json.hpp>

#include "ccta/phantom.hpp"
#include "ccta/volume.hpp"

namespace ccta::test {

/// Ingestable study: header text, raw voxel block and metadata.
struct Study {
    std::string case_id;
    std::string header;
    std::string raw;
    nlohmann::json metadata;
};

inline Study study_from(const PhantomCase& c, const std::string& case_class) {
    return {c.case_id, volume_header_text(c.volume), encode_f32le(c.volume.voxels),
            {{"case_id", c.case_id}, {"template", "standard-left-right"}, {"case_class", case_class}}};
}

inline Study phantom_study(int index, IntendedClass cls, std::uint64_t seed = 61) {
    CohortSpec s;
    s.seed = seed;
    const auto c = generate_case(s, index, cls);
    return study_from(c, cls == IntendedClass::Normal ? "Normal"
                         : cls == IntendedClass::Obstructive ? "DiseasedObstructive"
                                                             : "DiseasedNonObstructive");
}

inline Study noise_study(const std::string& case_id, std::uint64_t seed = 5) {
    const CohortSpec s;
    PhantomCase c;
    c.case_id = case_id;
    c.volume = rasterize_volume(VesselTree{}, s.dims, s.spacing_mm, s.noise_sigma, seed);
    return study_from(c, "Normal");
}

}  // namespace ccta::test
