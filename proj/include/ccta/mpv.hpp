#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <png.h>

#include "ccta/core.hpp"
#include "ccta/geometry.hpp"

namespace ccta {

/// L x W grayscale image, row-major; row i corresponds to reformation slice i.
struct Tile {
    int rows = 0;
    int cols = 0;
    std::vector<float> pixels;

    [[nodiscard]] float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * cols + c]; }
    float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * cols + c]; }
    friend bool operator==(const Tile&, const Tile&) = default;
};

/// Mosaic Projection View: K projections of one straightened vessel tiled
/// rows x cols, row-major.
struct MPV {
    std::string extraction_id;
    std::vector<Tile> tiles;
    int layout_rows = 0;
    int layout_cols = 0;
    std::vector<double> angles_deg;  ///< canonical angle of each canonical tile
    std::vector<int> permutation;    ///< tiles[p] is canonical tile permutation[p]
    std::vector<float> pixels;       ///< assembled mosaic, (rows*L) x (cols*W)
    std::uint64_t seed = 0;

    [[nodiscard]] int k() const { return static_cast<int>(tiles.size()); }
    [[nodiscard]] int tile_rows() const { return tiles.empty() ? 0 : tiles.front().rows; }
    [[nodiscard]] int tile_cols() const { return tiles.empty() ? 0 : tiles.front().cols; }
    [[nodiscard]] int mosaic_rows() const { return layout_rows * tile_rows(); }
    [[nodiscard]] int mosaic_cols() const { return layout_cols * tile_cols(); }
    [[nodiscard]] float pixel(int r, int c) const {
        return pixels[static_cast<std::size_t>(r) * mosaic_cols() + c];
    }
};

inline double bilinear(const std::vector<float>& img, int rows, int cols, double r, double c) {
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(c));
    const double fr = r - r0, fc = c - c0;
    double acc = 0;
    for (int dr = 0; dr < 2; ++dr)
        for (int dc = 0; dc < 2; ++dc) {
            const int rr = r0 + dr, cc = c0 + dc;
            if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
            const double w = (dr ? fr : 1 - fr) * (dc ? fc : 1 - fc);
            if (w != 0) acc += w * img[static_cast<std::size_t>(rr) * cols + cc];
        }
    return acc;
}

/// Maximum-intensity projection of every slice along the in-plane direction at
/// `angle_deg`: output (i, j) is the max over the ray through column j of slice
/// i after rotating the slice by the angle about its centre.
inline Tile project(const StraightenedMPR& mpr, double angle_deg) {
    require(angle_deg >= 0 && angle_deg < 360, ErrorKind::InvalidArgument,
            "projection angle must be in [0, 360)");
    const double th = angle_deg * M_PI / 180.0;
    const double cs = angle_deg == 0 ? 1.0 : std::cos(th);
    const double sn = angle_deg == 0 ? 0.0 : std::sin(th);
    const int w = mpr.width;
    const double c = mpr.center();
    Tile t{mpr.length, w, std::vector<float>(static_cast<std::size_t>(mpr.length) * w)};
    std::vector<float> slice(static_cast<std::size_t>(w) * w);
    for (int i = 0; i < mpr.length; ++i) {
        const auto s = mpr.slice(i);
        std::copy(s.begin(), s.end(), slice.begin());
        for (int j = 0; j < w; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < w; ++k) {
                const double r = c + (k - c) * cs - (j - c) * sn;
                const double q = c + (k - c) * sn + (j - c) * cs;
                best = std::max(best, bilinear(slice, w, w, r, q));
            }
            t.at(i, j) = static_cast<float>(best);
        }
    }
    return t;
}

/// Lays the tiles out row-major into `mpv.pixels`.
inline void assemble(MPV& mpv) {
    const int tr = mpv.tile_rows(), tc = mpv.tile_cols();
    const int mc = mpv.mosaic_cols();
    mpv.pixels.assign(static_cast<std::size_t>(mpv.mosaic_rows()) * mc, 0.0f);
    for (int t = 0; t < mpv.k(); ++t) {
        const int br = t / mpv.layout_cols, bc = t % mpv.layout_cols;
        for (int r = 0; r < tr; ++r)
            for (int q = 0; q < tc; ++q)
                mpv.pixels[static_cast<std::size_t>(br * tr + r) * mc + bc * tc + q] = mpv.tiles[t].at(r, q);
    }
}

/// Inverse of assemble(): cuts a mosaic back into tiles.
inline std::vector<Tile> disassemble(const std::vector<float>& pixels, int layout_rows, int layout_cols,
                                     int tile_rows, int tile_cols) {
    std::vector<Tile> tiles;
    const int mc = layout_cols * tile_cols;
    for (int t = 0; t < layout_rows * layout_cols; ++t) {
        const int br = t / layout_cols, bc = t % layout_cols;
        Tile tile{tile_rows, tile_cols, std::vector<float>(static_cast<std::size_t>(tile_rows) * tile_cols)};
        for (int r = 0; r < tile_rows; ++r)
            for (int q = 0; q < tile_cols; ++q)
                tile.at(r, q) = pixels[static_cast<std::size_t>(br * tile_rows + r) * mc + bc * tile_cols + q];
        tiles.push_back(std::move(tile));
    }
    return tiles;
}

struct MosaicLayout {
    int rows = 18;
    int cols = 1;
};

/// K projections at i * 180 / K degrees, canonical order.
inline MPV build_mpv(const StraightenedMPR& mpr, int k, MosaicLayout layout = {}) {
    require(k >= 1, ErrorKind::InvalidArgument, "K must be >= 1");
    require(layout.rows >= 1 && layout.cols >= 1 && layout.rows * layout.cols == k,
            ErrorKind::LayoutMismatch,
            "layout " + std::to_string(layout.rows) + "x" + std::to_string(layout.cols) +
                " does not hold K=" + std::to_string(k) + " tiles");
    MPV mpv;
    mpv.extraction_id = mpr.extraction_id;
    mpv.layout_rows = layout.rows;
    mpv.layout_cols = layout.cols;
    for (int i = 0; i < k; ++i) {
        const double angle = i * 180.0 / k;
        mpv.angles_deg.push_back(angle);
        mpv.permutation.push_back(i);
        mpv.tiles.push_back(project(mpr, angle));
    }
    assemble(mpv);
    return mpv;
}

/// K!, saturating at UINT64_MAX.
inline std::uint64_t factorial_saturating(int k) {
    std::uint64_t f = 1;
    for (int i = 2; i <= k; ++i) {
        if (f > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(i))
            return std::numeric_limits<std::uint64_t>::max();
        f *= static_cast<std::uint64_t>(i);
    }
    return f;
}

/// `n` pairwise-distinct, non-identity tile orders, deterministic in `seed`.
inline std::vector<std::vector<int>> distinct_permutations(int k, int n, std::uint64_t seed) {
    require(n >= 0, ErrorKind::InvalidArgument, "n must be >= 0");
    const std::uint64_t available = factorial_saturating(k) - 1;
    require(static_cast<std::uint64_t>(n) <= available, ErrorKind::TooManyPermutations,
            std::to_string(n) + " permutations requested, only " + std::to_string(available) +
                " non-identity orders of " + std::to_string(k) + " tiles exist");
    std::vector<std::vector<int>> out;
    if (n == 0) return out;
    std::vector<int> identity(k);
    std::iota(identity.begin(), identity.end(), 0);
    Rng rng(seed);
    if (available <= 50000) {
        // Small K: sample without replacement from the full enumeration.
        std::vector<std::vector<int>> all;
        std::vector<int> p = identity;
        while (std::next_permutation(p.begin(), p.end())) all.push_back(p);
        std::vector<std::size_t> order(all.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (int i = 0; i < n; ++i) out.push_back(all[order[i]]);
        return out;
    }
    std::set<std::vector<int>> seen{identity};
    while (static_cast<int>(out.size()) < n) {
        std::vector<int> p = identity;
        rng.shuffle(p);
        if (seen.insert(p).second) out.push_back(std::move(p));
    }
    return out;
}

/// Re-orders the tiles of `mpv` by `order` (new position p takes tile order[p]).
inline MPV apply_permutation(const MPV& mpv, const std::vector<int>& order) {
    require(static_cast<int>(order.size()) == mpv.k(), ErrorKind::InvalidArgument,
            "permutation length does not match K");
    MPV out = mpv;
    for (int p = 0; p < mpv.k(); ++p) {
        out.tiles[p] = mpv.tiles[order[p]];
        out.permutation[p] = mpv.permutation[order[p]];
    }
    assemble(out);
    return out;
}

inline std::vector<MPV> permute_augment(const MPV& mpv, int n, std::uint64_t seed) {
    std::vector<MPV> out;
    for (const auto& order : distinct_permutations(mpv.k(), n, seed)) {
        out.push_back(apply_permutation(mpv, order));
        out.back().seed = seed;
    }
    return out;
}

/// Rotates every tile in-plane by `angle_deg` about its centre (bilinear, zero fill).
inline MPV rotate_tiles(const MPV& mpv, double angle_deg) {
    MPV out = mpv;
    if (angle_deg == 0) return out;
    const double th = angle_deg * M_PI / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    for (std::size_t t = 0; t < mpv.tiles.size(); ++t) {
        const Tile& src = mpv.tiles[t];
        Tile& dst = out.tiles[t];
        const double cr = (src.rows - 1) / 2.0, cc = (src.cols - 1) / 2.0;
        for (int r = 0; r < src.rows; ++r)
            for (int q = 0; q < src.cols; ++q) {
                // Inverse mapping: output pixel pulls from the source rotated by -angle.
                const double dr = r - cr, dq = q - cc;
                const double sr = cr + dr * cs + dq * sn;
                const double sq = cc - dr * sn + dq * cs;
                dst.at(r, q) = static_cast<float>(bilinear(src.pixels, src.rows, src.cols, sr, sq));
            }
    }
    assemble(out);
    return out;
}

/// Same uniform random angle in [-max_deg, max_deg] for all tiles.
inline MPV rotate_augment(const MPV& mpv, double max_deg, std::uint64_t seed) {
    require(max_deg >= 0 && max_deg <= 15, ErrorKind::InvalidArgument, "max_deg must be in [0, 15]");
    if (max_deg == 0) return mpv;
    Rng rng(seed);
    return rotate_tiles(mpv, rng.uniform(-max_deg, max_deg));
}

// -----------------------------------------------------------------------------
// PNG + sidecar
// -----------------------------------------------------------------------------

struct MpvImage {
    std::string png;        ///< 16-bit grayscale PNG bytes
    nlohmann::json sidecar;
};

namespace detail {
// Silent libpng handlers; failures longjmp back into the caller.
inline void png_quiet_error(png_structp p, png_const_charp) { png_longjmp(p, 1); }
inline void png_quiet_warning(png_structp, png_const_charp) {}
}  // namespace detail

inline std::string encode_png16(const std::vector<std::uint16_t>& gray, int rows, int cols) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_quiet_error,
                                              detail::png_quiet_warning);
    require(png != nullptr, ErrorKind::Io, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::string out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorKind::Io, "PNG encoding failed");
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t len) {
            static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 16,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(cols) * 2);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const std::uint16_t v = gray[static_cast<std::size_t>(r) * cols + c];
            row[2 * c] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
            row[2 * c + 1] = static_cast<unsigned char>(v & 0xFF);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

inline std::vector<std::uint16_t> decode_png16(const std::string& bytes, int& rows, int& cols) {
    require(bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0,
            ErrorKind::MalformedInput, "not a PNG image");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_quiet_error,
                                             detail::png_quiet_warning);
    png_infop info = png_create_info_struct(png);
    struct Reader {
        const std::string* src;
        std::size_t pos;
    } reader{&bytes, 0};
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::MalformedInput, "corrupt PNG image");
    }
    png_set_read_fn(png, &reader, [](png_structp p, png_bytep data, png_size_t len) {
        auto* r = static_cast<Reader*>(png_get_io_ptr(p));
        if (r->pos + len > r->src->size()) png_error(p, "truncated");
        std::memcpy(data, r->src->data() + r->pos, len);
        r->pos += len;
    });
    png_read_info(png, info);
    if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorKind::MalformedInput, "expected 16-bit grayscale PNG");
    }
    cols = static_cast<int>(png_get_image_width(png, info));
    rows = static_cast<int>(png_get_image_height(png, info));
    std::vector<std::uint16_t> out(static_cast<std::size_t>(rows) * cols);
    std::vector<unsigned char> row(static_cast<std::size_t>(cols) * 2);
    for (int r = 0; r < rows; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (int c = 0; c < cols; ++c)
            out[static_cast<std::size_t>(r) * cols + c] =
                static_cast<std::uint16_t>((row[2 * c] << 8) | row[2 * c + 1]);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

inline nlohmann::json mpv_sidecar(const MPV& mpv) {
    return {{"extraction_id", mpv.extraction_id},
            {"K", mpv.k()},
            {"layout", {mpv.layout_rows, mpv.layout_cols}},
            {"tile_shape", {mpv.tile_rows(), mpv.tile_cols()}},
            {"angles_deg", mpv.angles_deg},
            {"permutation", mpv.permutation},
            {"seed", mpv.seed}};
}

/// Mosaic as 16-bit PNG; the linear intensity map is recorded in the sidecar
/// (value = offset + gray / scale).
inline MpvImage encode_mpv(const MPV& mpv) {
    const auto [mn, mx] = std::minmax_element(mpv.pixels.begin(), mpv.pixels.end());
    const double offset = mpv.pixels.empty() ? 0.0 : *mn;
    const double range = mpv.pixels.empty() ? 0.0 : *mx - *mn;
    const double scale = range > 0 ? 65535.0 / range : 1.0;
    std::vector<std::uint16_t> gray(mpv.pixels.size());
    for (std::size_t i = 0; i < gray.size(); ++i)
        gray[i] = static_cast<std::uint16_t>(std::clamp(std::lround((mpv.pixels[i] - offset) * scale), 0L, 65535L));
    MpvImage img;
    img.png = encode_png16(gray, mpv.mosaic_rows(), mpv.mosaic_cols());
    img.sidecar = mpv_sidecar(mpv);
    img.sidecar["intensity_offset"] = offset;
    img.sidecar["intensity_scale"] = scale;
    return img;
}

inline void write_mpv(const std::string& base, const MPV& mpv) {
    const auto img = encode_mpv(mpv);
    write_file(base + ".mpv.png", img.png);
    write_file(base + ".mpv.json", img.sidecar.dump(2));
}

inline MPV decode_mpv(const std::string& png, const nlohmann::json& sidecar) {
    int rows = 0, cols = 0;
    const auto gray = decode_png16(png, rows, cols);
    MPV mpv;
    mpv.extraction_id = sidecar.at("extraction_id").get<std::string>();
    mpv.layout_rows = sidecar.at("layout")[0].get<int>();
    mpv.layout_cols = sidecar.at("layout")[1].get<int>();
    mpv.angles_deg = sidecar.at("angles_deg").get<std::vector<double>>();
    mpv.permutation = sidecar.at("permutation").get<std::vector<int>>();
    mpv.seed = sidecar.value("seed", std::uint64_t{0});
    const double offset = sidecar.at("intensity_offset").get<double>();
    const double scale = sidecar.at("intensity_scale").get<double>();
    require(rows % mpv.layout_rows == 0 && cols % mpv.layout_cols == 0, ErrorKind::MalformedInput,
            "mosaic size is not a multiple of the layout");
    std::vector<float> pixels(gray.size());
    for (std::size_t i = 0; i < gray.size(); ++i) pixels[i] = static_cast<float>(offset + gray[i] / scale);
    mpv.tiles = disassemble(pixels, mpv.layout_rows, mpv.layout_cols, rows / mpv.layout_rows,
                            cols / mpv.layout_cols);
    mpv.pixels = std::move(pixels);
    return mpv;
}

inline MPV read_mpv(const std::string& base) {
    return decode_mpv(read_file(base + ".mpv.png"), nlohmann::json::parse(read_file(base + ".mpv.json")));
}

}  // namespace ccta
