#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccta/core.hpp"

namespace ccta {

/// Scalar image grid, x-fastest, voxel (i,j,k) centred at (i,j,k) * spacing mm.
struct Volume {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing_mm{1, 1, 1};
    std::vector<float> voxels;

    static constexpr int kMinDim = 32;

    Volume() = default;
    Volume(std::array<int, 3> d, std::array<double, 3> sp)
        : dims(d), spacing_mm(sp), voxels(static_cast<std::size_t>(d[0]) * d[1] * d[2], 0.0f) {}

    [[nodiscard]] std::size_t size() const { return voxels.size(); }

    [[nodiscard]] std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
    }
    [[nodiscard]] float at(int i, int j, int k) const { return voxels[index(i, j, k)]; }
    float& at(int i, int j, int k) { return voxels[index(i, j, k)]; }

    [[nodiscard]] bool in_grid(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }

    /// Physical extent along each axis (mm) covered by voxel centres.
    [[nodiscard]] std::array<double, 3> extent_mm() const {
        return {(dims[0] - 1) * spacing_mm[0], (dims[1] - 1) * spacing_mm[1],
                (dims[2] - 1) * spacing_mm[2]};
    }

    [[nodiscard]] bool contains(Vec3 p) const {
        const auto e = extent_mm();
        return p.x >= 0 && p.y >= 0 && p.z >= 0 && p.x <= e[0] && p.y <= e[1] && p.z <= e[2];
    }

    [[nodiscard]] Vec3 to_mm(double i, double j, double k) const {
        return {i * spacing_mm[0], j * spacing_mm[1], k * spacing_mm[2]};
    }
    [[nodiscard]] Vec3 to_index(Vec3 p) const {
        return {p.x / spacing_mm[0], p.y / spacing_mm[1], p.z / spacing_mm[2]};
    }

    /// Trilinear sample at a physical point; samples outside the grid read as 0.
    [[nodiscard]] double sample(Vec3 p) const {
        const Vec3 g = to_index(p);
        const int i0 = static_cast<int>(std::floor(g.x));
        const int j0 = static_cast<int>(std::floor(g.y));
        const int k0 = static_cast<int>(std::floor(g.z));
        const double fx = g.x - i0, fy = g.y - j0, fz = g.z - k0;
        double acc = 0;
        for (int dk = 0; dk < 2; ++dk)
            for (int dj = 0; dj < 2; ++dj)
                for (int di = 0; di < 2; ++di) {
                    const int i = i0 + di, j = j0 + dj, k = k0 + dk;
                    if (!in_grid(i, j, k)) continue;
                    const double w = (di ? fx : 1 - fx) * (dj ? fy : 1 - fy) * (dk ? fz : 1 - fz);
                    if (w != 0) acc += w * at(i, j, k);
                }
        return acc;
    }
};

inline void validate_grid(std::array<int, 3> dims, std::array<double, 3> spacing) {
    for (int a = 0; a < 3; ++a) {
        require(dims[a] >= Volume::kMinDim, ErrorKind::MalformedInput,
                "volume dimension " + std::to_string(dims[a]) + " below minimum 32");
        require(std::isfinite(spacing[a]) && spacing[a] > 0, ErrorKind::MalformedInput,
                "volume spacing must be positive");
    }
}

// -----------------------------------------------------------------------------
// <case>.vol.json + <case>.vol.raw
// -----------------------------------------------------------------------------

struct RawHeader {
    std::array<int, 3> dims{0, 0, 0};
    std::array<double, 3> spacing_mm{1, 1, 1};
    std::string dtype = "f32le";
    std::size_t offset_bytes = 0;
};

inline nlohmann::json header_to_json(const RawHeader& h) {
    return nlohmann::json{{"dims", h.dims},
                          {"spacing_mm", h.spacing_mm},
                          {"dtype", h.dtype},
                          {"offset_bytes", h.offset_bytes}};
}

/// Parses a raw-block header; throws MalformedInput on anything unexpected.
inline RawHeader parse_raw_header(const std::string& text) {
    RawHeader h;
    try {
        const auto j = nlohmann::json::parse(text);
        h.dims = j.at("dims").get<std::array<int, 3>>();
        h.spacing_mm = j.at("spacing_mm").get<std::array<double, 3>>();
        h.dtype = j.at("dtype").get<std::string>();
        h.offset_bytes = j.value("offset_bytes", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedInput, std::string("header: ") + e.what());
    }
    require(h.dtype == "f32le", ErrorKind::MalformedInput, "unsupported dtype " + h.dtype);
    return h;
}

inline Volume volume_from_parts(const std::string& header_text, std::string_view raw) {
    const RawHeader h = parse_raw_header(header_text);
    validate_grid(h.dims, h.spacing_mm);
    Volume v(h.dims, h.spacing_mm);
    require(raw.size() >= h.offset_bytes, ErrorKind::MalformedInput, "raw block shorter than offset");
    require(raw.size() - h.offset_bytes == v.size() * 4, ErrorKind::MalformedInput,
            "raw block size " + std::to_string(raw.size() - h.offset_bytes) + " does not match dims (" +
                std::to_string(v.size() * 4) + " bytes expected)");
    v.voxels = decode_f32le(raw.substr(h.offset_bytes), v.size());
    for (float f : v.voxels)
        require(std::isfinite(f), ErrorKind::MalformedInput, "non-finite voxel intensity");
    return v;
}

inline std::string volume_header_text(const Volume& v) {
    return header_to_json(RawHeader{v.dims, v.spacing_mm, "f32le", 0}).dump();
}

/// Writes `<base>.vol.json` and `<base>.vol.raw`.
inline void write_volume(const std::string& base, const Volume& v) {
    write_file(base + ".vol.json", volume_header_text(v));
    write_file(base + ".vol.raw", encode_f32le(v.voxels));
}

inline Volume read_volume(const std::string& base) {
    return volume_from_parts(read_file(base + ".vol.json"), read_file(base + ".vol.raw"));
}

}  // namespace ccta
