#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccta/core.hpp"
#include "ccta/curation.hpp"
#include "ccta/geometry.hpp"
#include "ccta/mpv.hpp"
#include "ccta/nn.hpp"

namespace ccta {

struct ModelSpec {
    int layout_rows = 18;
    int layout_cols = 1;
    int tile_length = 64;  ///< tiles are resampled to this many rows
    int tile_width = 15;
    std::vector<int> channels{8, 16, 32};
    int hidden = 1024;
    double dropout = 0.25;

    [[nodiscard]] int input_rows() const { return layout_rows * tile_length; }
    [[nodiscard]] int input_cols() const { return layout_cols * tile_width; }
    [[nodiscard]] nn::Architecture architecture() const {
        return {input_cols(), input_rows(), channels, hidden, dropout};
    }
    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct TrainConfig {
    double lr = 0.001;
    double decay = 1e-6;
    double momentum = 0.9;
    int batch = 8;
    int max_epochs = 120;
    double rotation_max_deg = 3.0;
    std::uint64_t seed = 0;

    void validate() const {
        require(lr > 0 && decay >= 0 && momentum >= 0 && momentum < 1, ErrorKind::InvalidArgument,
                "optimizer settings out of range");
        require(batch >= 1, ErrorKind::InvalidArgument, "batch must be >= 1");
        require(max_epochs >= 0, ErrorKind::InvalidArgument, "max_epochs must be >= 0");
        require(rotation_max_deg >= 0 && rotation_max_deg <= 15, ErrorKind::InvalidArgument,
                "rotation_max_deg must be in [0, 15]");
    }
};

struct EpochLog {
    int epoch = 0;
    double loss = 0;
    double val_loss = 0;
    double val_accuracy = 0;
    bool saved = false;
};

class Model {
public:
    explicit Model(ModelSpec spec = {}) : spec_(std::move(spec)), net_(spec_.architecture()) {}

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] nn::Network<float>& network() { return net_; }
    [[nodiscard]] const nn::Network<float>& network() const { return net_; }

    TrainConfig config;
    std::vector<EpochLog> training_log;
    std::string manifest_hash;
    int best_epoch = -1;

private:
    ModelSpec spec_;
    nn::Network<float> net_;
};

enum class Decision { Clear, PlaqueDetected };

inline const char* to_string(Decision d) { return d == Decision::PlaqueDetected ? "PlaqueDetected" : "Clear"; }

inline Decision decide(double p, double threshold = 0.5) {
    require(p >= 0 && p <= 1, ErrorKind::InvalidArgument, "probability outside [0, 1]");
    return p >= threshold ? Decision::PlaqueDetected : Decision::Clear;
}

// -----------------------------------------------------------------------------
// Input preparation
// -----------------------------------------------------------------------------

/// Linear resampling of tile rows: output row i reads source position
/// i * (from - 1) / (to - 1).
struct RowResampler {
    int from = 0, to = 0;
    std::vector<int> lo;
    std::vector<float> frac;

    RowResampler(int from_rows, int to_rows) : from(from_rows), to(to_rows), lo(to_rows), frac(to_rows) {
        for (int i = 0; i < to; ++i) {
            const double s = to > 1 ? static_cast<double>(i) * (from - 1) / (to - 1) : 0.0;
            lo[i] = std::min(static_cast<int>(std::floor(s)), std::max(0, from - 2));
            frac[i] = static_cast<float>(s - lo[i]);
            if (from == 1) {
                lo[i] = 0;
                frac[i] = 0;
            }
        }
    }
};

struct PreparedInput {
    nn::FeatureMap<float> map;
    float scale = 0;  ///< d(normalized)/d(raw) of the min-max step
};

inline void check_input_shape(const ModelSpec& spec, const MPV& mpv) {
    require(mpv.layout_rows == spec.layout_rows && mpv.layout_cols == spec.layout_cols, ErrorKind::ShapeMismatch,
            "MPV layout " + std::to_string(mpv.layout_rows) + "x" + std::to_string(mpv.layout_cols) +
                " does not match the model");
    require(mpv.tile_cols() == spec.tile_width, ErrorKind::ShapeMismatch,
            "MPV tile width " + std::to_string(mpv.tile_cols()) + " does not match the model");
    const int l = mpv.tile_rows();
    require(l >= 1 && 2 * l >= spec.tile_length && l <= 2 * spec.tile_length, ErrorKind::ShapeMismatch,
            "MPV tile length " + std::to_string(l) + " is beyond 2x of the model's " +
                std::to_string(spec.tile_length));
}

/// Resamples tiles to the model length, min-max normalizes to [0, 1] and
/// lays the mosaic out with rows along the contiguous axis.
inline PreparedInput prepare_input(const ModelSpec& spec, const MPV& mpv) {
    check_input_shape(spec, mpv);
    const RowResampler rs(mpv.tile_rows(), spec.tile_length);
    PreparedInput out;
    out.map.resize(1, spec.input_cols(), spec.input_rows());
    for (int t = 0; t < mpv.k(); ++t) {
        const Tile& tile = mpv.tiles[t];
        const int br = t / mpv.layout_cols, bc = t % mpv.layout_cols;
        for (int q = 0; q < tile.cols; ++q) {
            float* dst = out.map.row(0, bc * spec.tile_width + q) + br * spec.tile_length;
            for (int i = 0; i < spec.tile_length; ++i) {
                const int a = rs.lo[i];
                const float f = rs.frac[i];
                const float va = tile.at(a, q);
                dst[i] = f == 0.0f ? va : va + f * (tile.at(a + 1, q) - va);
            }
        }
    }
    const auto [mn, mx] = std::minmax_element(out.map.data.begin(), out.map.data.end());
    const float lo = *mn, range = *mx - *mn;
    if (!(range > 0)) {
        std::fill(out.map.data.begin(), out.map.data.end(), 0.0f);
        out.scale = 0;
        return out;
    }
    out.scale = 1.0f / range;
    for (auto& v : out.map.data) v = (v - lo) * out.scale;
    return out;
}

inline double predict(const Model& model, const MPV& mpv) {
    const auto in = prepare_input(model.spec(), mpv);
    nn::Workspace<float> ws;
    const double p = nn::sigmoid(static_cast<double>(model.network().forward(in.map, ws)));
    return std::clamp(p, 0.0, 1.0);
}

/// |d p / d pixel| over the mosaic, scaled so the maximum is 1.
inline std::vector<float> saliency(const Model& model, const MPV& mpv) {
    const auto& spec = model.spec();
    const auto in = prepare_input(spec, mpv);
    const auto& net = model.network();
    nn::Workspace<float> ws;
    const float p = nn::sigmoid(net.forward(in.map, ws));
    std::vector<float> sink(net.parameters().size(), 0.0f);
    nn::FeatureMap<float> grad;
    net.backward(p * (1 - p), ws, sink, &grad);

    const int mr = mpv.mosaic_rows(), mc = mpv.mosaic_cols();
    std::vector<float> out(static_cast<std::size_t>(mr) * mc, 0.0f);
    const RowResampler rs(mpv.tile_rows(), spec.tile_length);
    const int tr = mpv.tile_rows();
    for (int t = 0; t < mpv.k(); ++t) {
        const int br = t / mpv.layout_cols, bc = t % mpv.layout_cols;
        for (int q = 0; q < spec.tile_width; ++q) {
            const float* g = grad.row(0, bc * spec.tile_width + q) + br * spec.tile_length;
            const int col = bc * spec.tile_width + q;
            for (int i = 0; i < spec.tile_length; ++i) {
                const float gi = g[i] * in.scale;
                const int a = rs.lo[i];
                out[static_cast<std::size_t>(br * tr + a) * mc + col] += gi * (1 - rs.frac[i]);
                if (rs.frac[i] != 0.0f)
                    out[static_cast<std::size_t>(br * tr + a + 1) * mc + col] += gi * rs.frac[i];
            }
        }
    }
    float mx = 0;
    for (auto& v : out) {
        v = std::abs(v);
        mx = std::max(mx, v);
    }
    if (mx > 0)
        for (auto& v : out) v /= mx;
    return out;
}

// -----------------------------------------------------------------------------
// Training
// -----------------------------------------------------------------------------

/// Supplies the canonical MPV of one extraction.
using MpvProvider = std::function<MPV(const std::string& case_id, const std::string& extraction_id)>;

namespace detail {

inline std::string mpv_key(const std::string& case_id, const std::string& extraction_id) {
    return case_id + "/" + extraction_id;
}

class MpvCache {
public:
    explicit MpvCache(const MpvProvider& provider) : provider_(provider) {}
    const MPV& get(const std::string& case_id, const std::string& extraction_id) {
        const auto key = mpv_key(case_id, extraction_id);
        auto it = cache_.find(key);
        if (it == cache_.end()) it = cache_.emplace(key, provider_(case_id, extraction_id)).first;
        return it->second;
    }

private:
    const MpvProvider& provider_;
    std::map<std::string, MPV> cache_;
};

inline std::uint64_t nonzero_seed(std::uint64_t s) { return s == 0 ? 1 : s; }

}  // namespace detail

struct ValidationScore {
    double accuracy = 0;
    double loss = 0;
};

inline ValidationScore score_items(const Model& model, const std::vector<const VesselItem*>& items,
                                   detail::MpvCache& cache) {
    ValidationScore s;
    if (items.empty()) return s;
    int correct = 0;
    double loss = 0;
    for (const auto* it : items) {
        const auto in = prepare_input(model.spec(), cache.get(it->case_id, it->extraction_id));
        nn::Workspace<float> ws;
        const double z = model.network().forward(in.map, ws);
        const double y = it->target();
        loss += nn::bce_from_logit(z, y);
        correct += ((nn::sigmoid(z) >= 0.5) == (y == 1.0));
    }
    s.accuracy = static_cast<double>(correct) / items.size();
    s.loss = loss / items.size();
    return s;
}

/// SGD with momentum and time-based decay on binary cross-entropy; keeps the
/// weights of the epoch with the best validation accuracy.
inline Model train(const DatasetManifest& manifest, const ModelSpec& spec, const TrainConfig& cfg,
                   const MpvProvider& provider,
                   const std::function<void(const EpochLog&)>& on_epoch = {}) {
    cfg.validate();
    const auto train_items = manifest.items_in(Subset::Training);
    const auto val_items = manifest.items_in(Subset::Validation);
    require(!train_items.empty(), ErrorKind::EmptySubset, "manifest has no Training items");
    require(!val_items.empty(), ErrorKind::EmptySubset, "manifest has no Validation items");

    Model model(spec);
    model.config = cfg;
    model.manifest_hash = sha256_hex(manifest_text(manifest));
    auto& net = model.network();
    net.initialize(derive_seed(cfg.seed, 0x1417));
    if (cfg.max_epochs == 0) return model;

    detail::MpvCache cache(provider);
    const std::size_t np = net.parameters().size();
    std::vector<float> grad(np), velocity(np, 0.0f), best(net.parameters().begin(), net.parameters().end());
    double best_acc = -1;
    std::uint64_t iterations = 0;
    nn::Workspace<float> ws;

    std::vector<std::size_t> order(train_items.size());
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const std::uint64_t epoch_seed = derive_seed(cfg.seed, 0xE0000 + static_cast<std::uint64_t>(epoch));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(epoch_seed);
        rng.shuffle(order);

        double epoch_loss = 0;
        for (std::size_t start = 0, batch_index = 0; start < order.size(); start += cfg.batch, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            std::fill(grad.begin(), grad.end(), 0.0f);
            double batch_loss = 0;
            for (std::size_t b = start; b < end; ++b) {
                const VesselItem& item = *train_items[order[b]];
                const std::uint64_t sample_seed = derive_seed(epoch_seed, b + 1);
                MPV mpv = cache.get(item.case_id, item.extraction_id);
                if (!item.permutation.empty()) mpv = apply_permutation(mpv, item.permutation);
                if (cfg.rotation_max_deg > 0) mpv = rotate_augment(mpv, cfg.rotation_max_deg, derive_seed(sample_seed, 1));
                const auto in = prepare_input(spec, mpv);
                const float z = net.forward(in.map, ws, detail::nonzero_seed(derive_seed(sample_seed, 2)));
                const float y = static_cast<float>(item.target());
                batch_loss += nn::bce_from_logit(static_cast<double>(z), static_cast<double>(y));
                net.backward(nn::sigmoid(z) - y, ws, grad);
            }
            const double n = static_cast<double>(end - start);
            if (!std::isfinite(batch_loss))
                throw Error(ErrorKind::NonFiniteLoss,
                            "non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index));
            epoch_loss += batch_loss;
            const float lr_t = static_cast<float>(cfg.lr / (1.0 + cfg.decay * static_cast<double>(iterations)));
            const float mom = static_cast<float>(cfg.momentum);
            const float inv_n = static_cast<float>(1.0 / n);
            auto params = net.parameters();
            for (std::size_t i = 0; i < np; ++i) {
                velocity[i] = mom * velocity[i] - lr_t * (grad[i] * inv_n);
                params[i] += velocity[i];
            }
            ++iterations;
        }

        EpochLog log;
        log.epoch = epoch;
        log.loss = epoch_loss / static_cast<double>(order.size());
        const auto val = score_items(model, val_items, cache);
        log.val_accuracy = val.accuracy;
        log.val_loss = val.loss;
        if (val.accuracy > best_acc) {
            best_acc = val.accuracy;
            auto params = net.parameters();
            std::copy(params.begin(), params.end(), best.begin());
            model.best_epoch = epoch;
            log.saved = true;
        }
        model.training_log.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    net.load(std::span<const float>(best));
    return model;
}

// -----------------------------------------------------------------------------
// Serialization
// -----------------------------------------------------------------------------

inline nlohmann::json to_json(const ModelSpec& s) {
    return {{"layout", {s.layout_rows, s.layout_cols}},
            {"tile_length", s.tile_length},
            {"tile_width", s.tile_width},
            {"channels", s.channels},
            {"hidden", s.hidden},
            {"dropout", s.dropout}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.layout_rows = j.at("layout").at(0);
    s.layout_cols = j.at("layout").at(1);
    s.tile_length = j.at("tile_length");
    s.tile_width = j.at("tile_width");
    s.channels = j.at("channels").get<std::vector<int>>();
    s.hidden = j.at("hidden");
    s.dropout = j.at("dropout");
    return s;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},         {"decay", c.decay}, {"momentum", c.momentum},
            {"batch", c.batch},   {"max_epochs", c.max_epochs},
            {"rotation_max_deg", c.rotation_max_deg}, {"seed", c.seed},
            {"loss", "binary_crossentropy"}, {"checkpoint", "validation_accuracy_strict_improvement"}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.decay = j.value("decay", c.decay);
    c.momentum = j.value("momentum", c.momentum);
    c.batch = j.value("batch", c.batch);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.rotation_max_deg = j.value("rotation_max_deg", c.rotation_max_deg);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

inline std::string model_weights_bytes(const Model& m) {
    const auto p = m.network().parameters();
    return encode_f32le(std::span<const float>(p.data(), p.size()));
}

inline nlohmann::json model_metadata(const Model& m) {
    nlohmann::json log = nlohmann::json::array();
    for (const auto& e : m.training_log)
        log.push_back({{"epoch", e.epoch},
                       {"loss", e.loss},
                       {"val_loss", e.val_loss},
                       {"val_accuracy", e.val_accuracy},
                       {"saved", e.saved}});
    return {{"format", "ccta-model/1"},
            {"spec", to_json(m.spec())},
            {"config", to_json(m.config)},
            {"manifest_sha256", m.manifest_hash},
            {"best_epoch", m.best_epoch},
            {"parameter_count", m.network().parameters().size()},
            {"weights_sha256", sha256_hex(model_weights_bytes(m))},
            {"training_log", log}};
}

/// Hash over weights and metadata.
inline std::string model_hash(const Model& m) {
    return sha256_hex(model_metadata(m).dump() + model_weights_bytes(m));
}

/// Writes `<base>.model.json` and `<base>.weights.raw`.
inline void write_model(const std::string& base, const Model& m) {
    write_file(base + ".model.json", model_metadata(m).dump(1) + "\n");
    write_file(base + ".weights.raw", model_weights_bytes(m));
}

inline Model model_from_parts(const nlohmann::json& meta, const std::string& weights) {
    try {
        require(meta.at("format") == "ccta-model/1", ErrorKind::MalformedInput, "unsupported model format");
        Model m(model_spec_from_json(meta.at("spec")));
        m.config = train_config_from_json(meta.at("config"));
        m.manifest_hash = meta.value("manifest_sha256", "");
        m.best_epoch = meta.value("best_epoch", -1);
        const std::size_t n = m.network().parameters().size();
        require(meta.at("parameter_count").get<std::size_t>() == n, ErrorKind::MalformedInput,
                "parameter count does not match the architecture");
        require(weights.size() == n * 4, ErrorKind::MalformedInput, "weights blob has the wrong size");
        require(sha256_hex(weights) == meta.at("weights_sha256").get<std::string>(), ErrorKind::MalformedInput,
                "weights checksum mismatch");
        const auto values = decode_f32le(weights, n);
        m.network().load(std::span<const float>(values));
        for (const auto& e : meta.at("training_log"))
            m.training_log.push_back({e.at("epoch"), e.at("loss"), e.at("val_loss"), e.at("val_accuracy"), e.at("saved")});
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedInput, std::string("model metadata: ") + e.what());
    }
}

inline Model read_model(const std::string& base) {
    return model_from_parts(nlohmann::json::parse(read_file(base + ".model.json")), read_file(base + ".weights.raw"));
}

// -----------------------------------------------------------------------------
// Non-learned baseline
// -----------------------------------------------------------------------------

struct BaselineParams {
    double smoothing_mm = 1.0;     ///< half-window of the width smoothing
    double reference_mm = 8.0;     ///< reach of the proximal and distal references
    double end_exclusion_mm = 2.0;
    double drop_center = 0.25;
    double drop_scale = 0.03;
};

/// Full width at half maximum through the centre of one cross-section, in
/// texels: mean of the row and column profiles.
inline double cross_section_fwhm(std::span<const float> slice, int width) {
    const int c = width / 2;
    auto at = [&](int r, int q) { return static_cast<double>(slice[static_cast<std::size_t>(r) * width + q]); };
    double peak = at(c, c);
    for (int dr = -1; dr <= 1; ++dr)
        for (int dq = -1; dq <= 1; ++dq) peak = std::max(peak, at(c + dr, c + dq));
    if (!(peak > 0)) return 0;
    const double half = peak / 2;
    auto extent = [&](int dr, int dq) {
        // distance from the centre to the half-maximum crossing along (dr, dq)
        double prev = at(c, c);
        for (int s = 1; s <= c; ++s) {
            const double v = at(c + s * dr, c + s * dq);
            if (v < half) {
                const double t = prev > v ? (prev - half) / (prev - v) : 0.0;
                return (s - 1) + std::clamp(t, 0.0, 1.0);
            }
            prev = v;
        }
        return static_cast<double>(c) + 0.5;
    };
    if (at(c, c) < half) return 0;
    const double horizontal = extent(0, -1) + extent(0, 1);
    const double vertical = extent(-1, 0) + extent(1, 0);
    return (horizontal + vertical) / 2;
}

inline std::vector<double> width_profile(const StraightenedMPR& mpr) {
    std::vector<double> w(mpr.length);
    for (int i = 0; i < mpr.length; ++i) w[i] = cross_section_fwhm(mpr.slice(i), mpr.width);
    return w;
}

/// Largest relative narrowing against a two-sided reference: the smaller of
/// the widest proximal and widest distal width within `reference_mm`. A focal
/// lesion recovers on both sides; a calibre step at a branch does not.
inline double max_relative_width_drop(const StraightenedMPR& mpr, const BaselineParams& bp = {}) {
    const auto raw = width_profile(mpr);
    const int n = static_cast<int>(raw.size());
    const int hs = std::max(0, static_cast<int>(std::lround(bp.smoothing_mm / mpr.step_mm)));
    const int hr = std::max(1, static_cast<int>(std::lround(bp.reference_mm / mpr.step_mm)));
    const int ex = std::max(1, static_cast<int>(std::lround(bp.end_exclusion_mm / mpr.step_mm)));
    std::vector<double> smooth(n);
    for (int i = 0; i < n; ++i) {
        double s = 0;
        int k = 0;
        for (int j = std::max(0, i - hs); j <= std::min(n - 1, i + hs); ++j, ++k) s += raw[j];
        smooth[i] = k ? s / k : 0;
    }
    double drop = 0;
    for (int i = ex; i < n - ex; ++i) {
        const auto first = smooth.begin();
        const double proximal = *std::max_element(first + std::max(0, i - hr), first + i);
        const double distal = *std::max_element(first + i + 1, first + std::min(n, i + hr + 1));
        const double ref = std::min(proximal, distal);
        if (ref > 0) drop = std::max(drop, 1.0 - smooth[i] / ref);
    }
    return drop;
}

inline double baseline_probability(double drop, const BaselineParams& bp = {}) {
    return 1.0 / (1.0 + std::exp(-(drop - bp.drop_center) / bp.drop_scale));
}

inline double baseline_predict(const StraightenedMPR& mpr, const BaselineParams& bp = {}) {
    require(mpr.length >= 1 && mpr.width >= 3, ErrorKind::InvalidArgument, "reformation too small");
    return baseline_probability(max_relative_width_drop(mpr, bp), bp);
}

}  // namespace ccta
