#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <json.hpp>

#include "ccta/core.hpp"

namespace ccta {

struct ConfusionMatrix {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

    [[nodiscard]] std::int64_t total() const { return tp + fp + fn + tn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(const std::vector<bool>& pred, const std::vector<bool>& truth) {
    require(pred.size() == truth.size(), ErrorKind::LengthMismatch,
            "prediction and truth lengths differ (" + std::to_string(pred.size()) + " vs " +
                std::to_string(truth.size()) + ")");
    require(!pred.empty(), ErrorKind::InvalidArgument, "confusion matrix needs at least one item");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && truth[i]) ++cm.tp;
        else if (pred[i]) ++cm.fp;
        else if (truth[i]) ++cm.fn;
        else ++cm.tn;
    }
    return cm;
}

struct Interval {
    double lo = 0, hi = 0;
};

/// One proportion: numerator / denominator with an optional 95% interval.
struct Metric {
    std::int64_t numerator = 0;
    std::int64_t denominator = 0;
    std::optional<Interval> ci;
    std::string ci_method;

    [[nodiscard]] bool defined() const { return denominator > 0; }
    [[nodiscard]] double value() const {
        return defined() ? static_cast<double>(numerator) / static_cast<double>(denominator) : std::nan("");
    }
};

struct MetricSet {
    Metric sensitivity, specificity, ppv, npv, accuracy, prevalence;
};

/// Exact two-sided Clopper-Pearson interval for x successes out of n.
inline Interval clopper_pearson(std::int64_t x, std::int64_t n, double confidence = 0.95) {
    require(n > 0 && x >= 0 && x <= n, ErrorKind::InvalidArgument, "invalid binomial counts");
    const double alpha = 1 - confidence;
    const auto dx = static_cast<double>(x), dn = static_cast<double>(n);
    Interval iv;
    iv.lo = x == 0 ? 0.0 : boost::math::quantile(boost::math::beta_distribution<double>(dx, dn - dx + 1), alpha / 2);
    iv.hi = x == n ? 1.0 : boost::math::quantile(boost::math::beta_distribution<double>(dx + 1, dn - dx), 1 - alpha / 2);
    return iv;
}

inline double normal_quantile_975() { return 1.959963984540054; }

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Logit interval for a predictive value whose log-odds is
/// ln(sens * prev / ((1 - spec) * (1 - prev))), with the variance taken from
/// sensitivity and specificity (delta method).
inline std::optional<Interval> predictive_value_logit(double log_odds, double variance) {
    if (!std::isfinite(log_odds) || !std::isfinite(variance) || variance < 0) return std::nullopt;
    const double half = normal_quantile_975() * std::sqrt(variance);
    return Interval{logistic(log_odds - half), logistic(log_odds + half)};
}

inline MetricSet metrics(const ConfusionMatrix& cm) {
    require(cm.tp >= 0 && cm.fp >= 0 && cm.fn >= 0 && cm.tn >= 0, ErrorKind::InvalidArgument,
            "confusion counts must be non-negative");
    require(cm.total() >= 1, ErrorKind::InvalidArgument, "confusion matrix is empty");
    MetricSet m;
    const std::int64_t diseased = cm.tp + cm.fn, healthy = cm.fp + cm.tn;
    m.sensitivity = {cm.tp, diseased, {}, ""};
    m.specificity = {cm.tn, healthy, {}, ""};
    m.ppv = {cm.tp, cm.tp + cm.fp, {}, ""};
    m.npv = {cm.tn, cm.tn + cm.fn, {}, ""};
    m.accuracy = {cm.tp + cm.tn, cm.total(), {}, ""};
    m.prevalence = {diseased, cm.total(), {}, ""};

    for (Metric* x : {&m.sensitivity, &m.specificity, &m.accuracy})
        if (x->defined()) {
            x->ci = clopper_pearson(x->numerator, x->denominator);
            x->ci_method = "clopper-pearson";
        }

    const double nd = static_cast<double>(diseased), nh = static_cast<double>(healthy);
    const double sens = m.sensitivity.value(), spec = m.specificity.value();
    auto fallback = [](Metric& x) {
        if (!x.defined()) return;
        x.ci = clopper_pearson(x.numerator, x.denominator);
        x.ci_method = "clopper-pearson";
    };
    if (m.ppv.defined()) {
        std::optional<Interval> iv;
        if (cm.tp > 0 && cm.fp > 0 && cm.fn >= 0 && diseased > 0 && healthy > 0 && sens > 0 && spec < 1)
            iv = predictive_value_logit(std::log(static_cast<double>(cm.tp) / static_cast<double>(cm.fp)),
                                        (1 - sens) / (sens * nd) + spec / ((1 - spec) * nh));
        if (iv) {
            m.ppv.ci = iv;
            m.ppv.ci_method = "logit";
        } else {
            fallback(m.ppv);
        }
    }
    if (m.npv.defined()) {
        std::optional<Interval> iv;
        if (cm.tn > 0 && cm.fn > 0 && diseased > 0 && healthy > 0 && sens < 1 && spec > 0)
            iv = predictive_value_logit(std::log(static_cast<double>(cm.tn) / static_cast<double>(cm.fn)),
                                        sens / ((1 - sens) * nd) + (1 - spec) / (spec * nh));
        if (iv) {
            m.npv.ci = iv;
            m.npv.ci_method = "logit";
        } else {
            fallback(m.npv);
        }
    }
    return m;
}

/// numerator / denominator as a percentage with two decimals, rounded half
/// up in integer arithmetic.
inline std::string format_percent(std::int64_t numerator, std::int64_t denominator) {
    if (denominator <= 0) return "undefined";
    const auto scaled = static_cast<unsigned __int128>(numerator) * 20000u + static_cast<unsigned __int128>(denominator);
    const auto q = static_cast<std::uint64_t>(scaled / (2u * static_cast<unsigned __int128>(denominator)));
    char buf[48];
    std::snprintf(buf, sizeof buf, "%llu.%02llu%%", static_cast<unsigned long long>(q / 100),
                  static_cast<unsigned long long>(q % 100));
    return buf;
}

inline std::string format_percent(const Metric& m) { return format_percent(m.numerator, m.denominator); }

inline std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", fraction * 100.0);
    return buf;
}

inline std::string format_interval(const std::optional<Interval>& ci) {
    if (!ci) return "-";
    return format_percent(ci->lo) + " to " + format_percent(ci->hi);
}

// -----------------------------------------------------------------------------
// ROC
// -----------------------------------------------------------------------------

struct RocPoint {
    double threshold = 0, fpr = 0, tpr = 0;
};

struct RocResult {
    double auc = 0;
    std::vector<RocPoint> curve;  ///< from (inf, 0, 0) to the lowest threshold
};

/// Rank-statistic AUC with ties counted as one half; one curve point per
/// distinct score.
inline RocResult roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
    require(scores.size() == labels.size(), ErrorKind::LengthMismatch, "scores and labels lengths differ");
    std::int64_t npos = 0, nneg = 0;
    for (bool l : labels) (l ? npos : nneg)++;
    require(npos > 0 && nneg > 0, ErrorKind::SingleClass, "ROC needs both classes");
    for (double s : scores) require(std::isfinite(s), ErrorKind::InvalidArgument, "non-finite score");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocResult r;
    r.curve.push_back({std::numeric_limits<double>::infinity(), 0, 0});
    double area2 = 0;  // twice the area in units of (neg x pos) pairs
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::int64_t dp = 0, dn = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? dp : dn)++;
            ++j;
        }
        area2 += static_cast<double>(dn) * static_cast<double>(2 * tp + dp);
        tp += dp;
        fp += dn;
        r.curve.push_back({scores[order[i]], static_cast<double>(fp) / nneg, static_cast<double>(tp) / npos});
        i = j;
    }
    r.auc = area2 / (2.0 * static_cast<double>(npos) * static_cast<double>(nneg));
    return r;
}

inline std::string roc_csv(const RocResult& r) {
    std::string out = "threshold,fpr,tpr\n";
    char buf[96];
    for (const auto& p : r.curve) {
        if (std::isinf(p.threshold)) std::snprintf(buf, sizeof buf, "inf,%.6f,%.6f\n", p.fpr, p.tpr);
        else std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", p.threshold, p.fpr, p.tpr);
        out += buf;
    }
    return out;
}

// -----------------------------------------------------------------------------
// Reports
// -----------------------------------------------------------------------------

struct ReportRow {
    std::string metric;
    std::string formula;
    std::string values;
    std::string calculated;
    std::string ci;
};

struct Report {
    std::string name;
    ConfusionMatrix cm;
    std::vector<ReportRow> rows;
    std::optional<double> auc;
    double threshold = 0.5;
};

inline Report make_report(const std::string& name, const ConfusionMatrix& cm, const MetricSet& ms,
                          std::optional<double> auc = std::nullopt, bool include_prevalence = true,
                          double threshold = 0.5) {
    Report r{name, cm, {}, auc, threshold};
    const auto tp = std::to_string(cm.tp), fp = std::to_string(cm.fp), fn = std::to_string(cm.fn),
               tn = std::to_string(cm.tn);
    const std::string all = tp + "+" + fp + "+" + fn + "+" + tn;
    r.rows.push_back({"Sensitivity", "TP / (TP + FN)", tp + " / (" + tp + "+" + fn + ")", format_percent(ms.sensitivity),
                      format_interval(ms.sensitivity.ci)});
    r.rows.push_back({"Specificity", "TN / (FP + TN)", tn + " / (" + fp + "+" + tn + ")", format_percent(ms.specificity),
                      format_interval(ms.specificity.ci)});
    if (include_prevalence)
        r.rows.push_back({"Disease Prevalence", "(TP + FN) / (TP + FP + FN + TN)", "(" + tp + "+" + fn + ") / (" + all + ")",
                          format_percent(ms.prevalence), "-"});
    r.rows.push_back({"PPV", "TP / (TP + FP)", tp + " / (" + tp + "+" + fp + ")", format_percent(ms.ppv),
                      format_interval(ms.ppv.ci)});
    r.rows.push_back({"NPV", "TN / (FN + TN)", tn + " / (" + fn + "+" + tn + ")", format_percent(ms.npv),
                      format_interval(ms.npv.ci)});
    r.rows.push_back({"Accuracy", "(TP + TN) / (TP + FP + FN + TN)", "(" + tp + "+" + tn + ") / (" + all + ")",
                      format_percent(ms.accuracy), format_interval(ms.accuracy.ci)});
    return r;
}

inline std::string render_text(const Report& r) {
    std::vector<std::array<std::string, 5>> cells{{"", "Formula", "Confusion Matrix Values", "Calculated Value", "95% CI"}};
    for (const auto& row : r.rows) cells.push_back({row.metric, row.formula, row.values, row.calculated, row.ci});
    std::array<std::size_t, 5> w{};
    for (const auto& c : cells)
        for (std::size_t i = 0; i < 5; ++i) w[i] = std::max(w[i], c[i].size());
    char head[64];
    std::snprintf(head, sizeof head, " (Decision Threshold: %g)", r.threshold);
    std::string out = r.name + head + "\n";
    for (const auto& c : cells) {
        std::string line;
        for (std::size_t i = 0; i < 5; ++i) {
            line += c[i];
            if (i + 1 < 5) line += std::string(w[i] - c[i].size() + 2, ' ');
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    if (r.auc) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "AUC-ROC  %.4f\n", *r.auc);
        out += buf;
    }
    return out;
}

inline nlohmann::json to_json(const Report& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"metric", row.metric},
                        {"formula", row.formula},
                        {"confusion_matrix_values", row.values},
                        {"calculated_value", row.calculated},
                        {"ci95", row.ci}});
    nlohmann::json j{{"name", r.name},
                     {"threshold", r.threshold},
                     {"confusion", {{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"fn", r.cm.fn}, {"tn", r.cm.tn}}},
                     {"rows", rows},
                     {"ci_methods",
                      {{"sensitivity", "clopper-pearson"},
                       {"specificity", "clopper-pearson"},
                       {"accuracy", "clopper-pearson"},
                       {"ppv", "logit of TP/FP with sensitivity/specificity delta-method variance; clopper-pearson on zero cells"},
                       {"npv", "logit of TN/FN with sensitivity/specificity delta-method variance; clopper-pearson on zero cells"}}}};
    j["auc"] = r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr);
    return j;
}

inline Report report_from_json(const nlohmann::json& j) {
    try {
        Report r;
        r.name = j.at("name");
        r.threshold = j.at("threshold");
        const auto& c = j.at("confusion");
        r.cm = {c.at("tp"), c.at("fp"), c.at("fn"), c.at("tn")};
        for (const auto& row : j.at("rows"))
            r.rows.push_back({row.at("metric"), row.at("formula"), row.at("confusion_matrix_values"),
                              row.at("calculated_value"), row.at("ci95")});
        if (!j.at("auc").is_null()) r.auc = j.at("auc").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedInput, std::string("report: ") + e.what());
    }
}

}  // namespace ccta
