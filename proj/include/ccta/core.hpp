#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/sha.h>

namespace ccta {

// -----------------------------------------------------------------------------
// Errors
// -----------------------------------------------------------------------------

enum class ErrorKind {
    InvalidArgument,
    UnknownTemplate,
    TreeTooSmall,
    OutOfBounds,
    SeedOutsideVessel,
    TrackingDiverged,
    LayoutMismatch,
    TooManyPermutations,
    TooFewCases,
    ManifestError,
    EmptySubset,
    NonFiniteLoss,
    ShapeMismatch,
    LengthMismatch,
    SingleClass,
    MalformedInput,
    DuplicateCase,
    UnknownCase,
    UnknownExtraction,
    InvalidState,
    Io,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::UnknownTemplate: return "UnknownTemplate";
    case ErrorKind::TreeTooSmall: return "TreeTooSmall";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::SeedOutsideVessel: return "SeedOutsideVessel";
    case ErrorKind::TrackingDiverged: return "TrackingDiverged";
    case ErrorKind::LayoutMismatch: return "LayoutMismatch";
    case ErrorKind::TooManyPermutations: return "TooManyPermutations";
    case ErrorKind::TooFewCases: return "TooFewCases";
    case ErrorKind::ManifestError: return "ManifestError";
    case ErrorKind::EmptySubset: return "EmptySubset";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::MalformedInput: return "MalformedInput";
    case ErrorKind::DuplicateCase: return "DuplicateCase";
    case ErrorKind::UnknownCase: return "UnknownCase";
    case ErrorKind::UnknownExtraction: return "UnknownExtraction";
    case ErrorKind::InvalidState: return "InvalidState";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) throw Error(kind, what);
}

// -----------------------------------------------------------------------------
// 3-vector
// -----------------------------------------------------------------------------

struct Vec3 {
    double x = 0, y = 0, z = 0;

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend Vec3 operator*(double s, Vec3 a) { return a * s; }
    friend Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
    Vec3& operator+=(Vec3 o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(Vec3 o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    friend bool operator==(const Vec3&, const Vec3&) = default;

    [[nodiscard]] double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) {
    const double n = norm(a);
    return n > 0 ? a / n : Vec3{1, 0, 0};
}
inline double distance(Vec3 a, Vec3 b) { return norm(a - b); }

/// Any unit vector perpendicular to `t` (t must be unit length).
inline Vec3 any_perpendicular(Vec3 t) {
    const Vec3 helper = std::abs(t.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    return normalized(cross(t, helper));
}

/// Rotate `v` about unit axis `k` by `angle` radians (Rodrigues).
inline Vec3 rotate_about(Vec3 v, Vec3 k, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return v * c + cross(k, v) * s + k * (dot(k, v) * (1 - c));
}

/// Distance from p to the segment [a,b]; `t` receives the clamped parameter.
inline double point_segment_distance(Vec3 p, Vec3 a, Vec3 b, double* t = nullptr) {
    const Vec3 ab = b - a;
    const double len2 = dot(ab, ab);
    double u = len2 > 0 ? dot(p - a, ab) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    if (t) *t = u;
    return distance(p, a + ab * u);
}

/// Minimum distance from p to a polyline.
inline double point_polyline_distance(Vec3 p, std::span<const Vec3> line) {
    if (line.empty()) return std::numeric_limits<double>::infinity();
    if (line.size() == 1) return distance(p, line[0]);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < line.size(); ++i)
        best = std::min(best, point_segment_distance(p, line[i], line[i + 1]));
    return best;
}

inline double polyline_length(std::span<const Vec3> line) {
    double len = 0;
    for (std::size_t i = 1; i < line.size(); ++i) len += distance(line[i - 1], line[i]);
    return len;
}

/// Cumulative arc length at each vertex.
inline std::vector<double> cumulative_arc(std::span<const Vec3> line) {
    std::vector<double> s(line.size(), 0.0);
    for (std::size_t i = 1; i < line.size(); ++i) s[i] = s[i - 1] + distance(line[i - 1], line[i]);
    return s;
}

// -----------------------------------------------------------------------------
// Random streams
// -----------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent stream seed for (seed, index), stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// mt19937_64 with portable uniform/normal draws (std distributions are
/// implementation-defined, which would break cross-toolchain determinism).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do { r = engine_(); } while (r >= limit);
        return r % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0;
};

// -----------------------------------------------------------------------------
// Hashing and file helpers
// -----------------------------------------------------------------------------

inline std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(static_cast<const unsigned char*>(data), size, digest);
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (unsigned char c : digest) os << std::setw(2) << static_cast<int>(c);
    return os.str();
}

inline std::string sha256_hex(std::string_view s) { return sha256_hex(s.data(), s.size()); }

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "short write to " + path);
}

/// Little-endian f32 encoding of a float buffer.
inline std::string encode_f32le(std::span<const float> values) {
    std::string out(values.size() * 4, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &values[i], 4);
        for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
    return out;
}

inline std::vector<float> decode_f32le(std::string_view bytes, std::size_t count) {
    require(bytes.size() >= count * 4, ErrorKind::MalformedInput,
            "raw block holds " + std::to_string(bytes.size()) + " bytes, need " +
                std::to_string(count * 4));
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
        std::memcpy(&out[i], &bits, 4);
    }
    return out;
}

}  // namespace ccta
