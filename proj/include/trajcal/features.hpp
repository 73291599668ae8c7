#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trajcal/numeric.hpp"
#include "trajcal/trace.hpp"

namespace trajcal {

inline constexpr std::size_t kFeatureCount = 48;

enum class FeatureCategory { Dynamics, Position, Stability, Structure };

inline std::string_view category_name(FeatureCategory c) {
    switch (c) {
        case FeatureCategory::Dynamics: return "dynamics";
        case FeatureCategory::Position: return "position";
        case FeatureCategory::Stability: return "stability";
        case FeatureCategory::Structure: return "structure";
    }
    return "?";
}

struct FeatureInfo {
    std::string_view name;
    FeatureCategory category;
};

// The diagnostic feature map. Index positions are part of every on-disk
// format and must never be reordered.
inline constexpr std::array<FeatureInfo, kFeatureCount> kFeatureMap = {{
    {"top1_gradient_mean", FeatureCategory::Dynamics},              // 0
    {"top1_gradient_std", FeatureCategory::Dynamics},               // 1
    {"top1_gradient_max", FeatureCategory::Dynamics},               // 2
    {"top1_gradient_min", FeatureCategory::Dynamics},               // 3
    {"top1_gradient_trend", FeatureCategory::Dynamics},             // 4
    {"topk_gradient_mean", FeatureCategory::Dynamics},              // 5
    {"topk_gradient_std", FeatureCategory::Dynamics},               // 6
    {"topk_gradient_max", FeatureCategory::Dynamics},               // 7
    {"topk_gradient_min", FeatureCategory::Dynamics},               // 8
    {"topk_gradient_trend", FeatureCategory::Dynamics},             // 9
    {"token_gradient_mean", FeatureCategory::Dynamics},             // 10
    {"token_gradient_std", FeatureCategory::Dynamics},              // 11
    {"token_gradient_max", FeatureCategory::Dynamics},              // 12
    {"token_gradient_min", FeatureCategory::Dynamics},              // 13
    {"step_progression_entropy", FeatureCategory::Dynamics},        // 14
    {"step_progression_concentration", FeatureCategory::Dynamics},  // 15
    {"step_progression_spread", FeatureCategory::Dynamics},         // 16
    {"top1_confidence_change", FeatureCategory::Dynamics},          // 17
    {"topk_confidence_change", FeatureCategory::Dynamics},          // 18
    {"first_attention_entropy", FeatureCategory::Position},         // 19
    {"first_attention_concentration", FeatureCategory::Position},   // 20
    {"first_attention_spread", FeatureCategory::Position},          // 21
    {"first_confidence_volatility", FeatureCategory::Position},     // 22
    {"first_confidence_skewness", FeatureCategory::Position},       // 23
    {"first_top1_avg", FeatureCategory::Position},                  // 24
    {"first_topk_avg", FeatureCategory::Position},                  // 25
    {"last_attention_entropy", FeatureCategory::Position},          // 26
    {"last_attention_concentration", FeatureCategory::Position},    // 27
    {"last_attention_spread", FeatureCategory::Position},           // 28
    {"last_confidence_volatility", FeatureCategory::Position},      // 29
    {"last_confidence_skewness", FeatureCategory::Position},        // 30
    {"last_top1_avg", FeatureCategory::Position},                   // 31
    {"last_topk_avg", FeatureCategory::Position},                   // 32
    {"attention_entropy_mean", FeatureCategory::Stability},         // 33
    {"attention_entropy_std", FeatureCategory::Stability},          // 34
    {"attention_concentration_mean", FeatureCategory::Stability},   // 35
    {"attention_concentration_std", FeatureCategory::Stability},    // 36
    {"attention_spread_mean", FeatureCategory::Stability},          // 37
    {"attention_spread_std", FeatureCategory::Stability},           // 38
    {"token_volatility_mean", FeatureCategory::Stability},          // 39
    {"token_volatility_std", FeatureCategory::Stability},           // 40
    {"token_skewness_mean", FeatureCategory::Stability},            // 41
    {"token_skewness_std", FeatureCategory::Stability},             // 42
    {"normalized_step_count", FeatureCategory::Structure},          // 43
    {"first_token_count", FeatureCategory::Structure},              // 44
    {"last_token_count", FeatureCategory::Structure},               // 45
    {"avg_tokens_per_step", FeatureCategory::Structure},            // 46
    {"std_tokens_per_step", FeatureCategory::Structure},            // 47
}};

inline std::string_view feature_name(std::size_t index) { return kFeatureMap[index].name; }

inline std::vector<std::string> feature_names() {
    std::vector<std::string> names;
    names.reserve(kFeatureCount);
    for (const auto& info : kFeatureMap) names.emplace_back(info.name);
    return names;
}

inline std::vector<std::size_t> category_indices(const std::set<FeatureCategory>& cats) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        if (cats.count(kFeatureMap[i].category)) idx.push_back(i);
    }
    return idx;
}

using FeatureVector = std::array<double, kFeatureCount>;

// ---------------------------------------------------------------------------
// Per-step summary. Within a step with token confidences r_1..r_n:
//   pi_i   = r_i / (sum_j r_j + eps)
//   H      = -sum_i pi_i * log(pi_i + eps)
//   kappa  = max_i r_i / (mean + eps)
//   rho    = std / (mean + eps)
//   skew   = mean(((r_i - mean)/(std + eps))^3), 0 when n < 2
//   x      = mean of top-1 confidences
//   y      = mean over tokens of the token's mean top-k confidence
// Mean/std are population forms; eps defaults to 1e-8.
// ---------------------------------------------------------------------------

struct StepSummary {
    std::size_t token_count = 0; // n_t
    double mean = 0.0;           // mu
    double stddev = 0.0;         // sigma
    double entropy = 0.0;        // H
    double concentration = 0.0;  // kappa
    double spread = 0.0;         // rho
    double skewness = 0.0;
    double top1_avg = 0.0;       // x_t
    double topk_avg = 0.0;       // y_t
};

inline StepSummary step_summary(const Step& step, double eps = kEpsilon) {
    const std::size_t n = step.tokens.size();
    if (n == 0) throw Error("step_summary: empty step");

    StepSummary s;
    s.token_count = n;

    double sum = 0.0;
    double max_r = -std::numeric_limits<double>::infinity();
    double topk_sum = 0.0;
    for (const auto& tok : step.tokens) {
        sum += tok.top1;
        max_r = std::max(max_r, tok.top1);
        double tk = 0.0;
        for (double v : tok.topk) tk += v;
        topk_sum += tok.topk.empty() ? tok.top1 : tk / static_cast<double>(tok.topk.size());
    }
    const double nd = static_cast<double>(n);
    s.mean = sum / nd;
    s.top1_avg = s.mean;
    s.topk_avg = topk_sum / nd;

    double var = 0.0;
    for (const auto& tok : step.tokens) {
        var += (tok.top1 - s.mean) * (tok.top1 - s.mean);
    }
    s.stddev = std::sqrt(var / nd);

    const double pi_den = sum + eps;
    double H = 0.0;
    for (const auto& tok : step.tokens) {
        const double pi = tok.top1 / pi_den;
        H -= pi * std::log(pi + eps);
    }
    s.entropy = H;
    s.concentration = max_r / (s.mean + eps);
    s.spread = s.stddev / (s.mean + eps);

    if (n >= 2) {
        double sk = 0.0;
        for (const auto& tok : step.tokens) {
            const double z = (tok.top1 - s.mean) / (s.stddev + eps);
            sk += z * z * z;
        }
        s.skewness = sk / nd;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Trajectory-level extraction
// ---------------------------------------------------------------------------

inline FeatureVector extract_features(const Trajectory& t, double eps = kEpsilon) {
    const auto check = validate_trajectory(t);
    if (!check.ok()) {
        throw Error("extract_features: invalid trajectory '" + t.id + "': " + check.violations.front());
    }
    const std::size_t S = t.steps.size();

    std::vector<double> xs(S), ys(S), Hs(S), ks(S), rs(S), sks(S), ns(S);
    StepSummary first{}, last{};
    for (std::size_t s = 0; s < S; ++s) {
        const StepSummary sum = step_summary(t.steps[s], eps);
        xs[s] = sum.top1_avg;
        ys[s] = sum.topk_avg;
        Hs[s] = sum.entropy;
        ks[s] = sum.concentration;
        rs[s] = sum.spread;
        sks[s] = sum.skewness;
        ns[s] = static_cast<double>(sum.token_count);
        if (s == 0) first = sum;
        if (s == S - 1) last = sum;
    }

    std::vector<double> dx, dy;
    if (S >= 2) {
        dx.resize(S - 1);
        dy.resize(S - 1);
        for (std::size_t s = 0; s + 1 < S; ++s) {
            dx[s] = xs[s + 1] - xs[s];
            dy[s] = ys[s + 1] - ys[s];
        }
    }

    // Within-step consecutive top-1 differences, pooled across all steps.
    std::vector<double> token_grads;
    for (const auto& step : t.steps) {
        for (std::size_t i = 0; i + 1 < step.tokens.size(); ++i) {
            token_grads.push_back(step.tokens[i + 1].top1 - step.tokens[i].top1);
        }
    }

    FeatureVector f{};
    f[0] = mean_of(dx);
    f[1] = stddev_of(dx);
    f[2] = max_of(dx);
    f[3] = min_of(dx);
    f[4] = S >= 3 ? dx.back() - dx.front() : 0.0;
    f[5] = mean_of(dy);
    f[6] = stddev_of(dy);
    f[7] = max_of(dy);
    f[8] = min_of(dy);
    f[9] = S >= 3 ? dy.back() - dy.front() : 0.0;
    f[10] = mean_of(token_grads);
    f[11] = stddev_of(token_grads);
    f[12] = max_of(token_grads);
    f[13] = min_of(token_grads);
    f[14] = coeff_of_variation(Hs, eps);
    f[15] = coeff_of_variation(ks, eps);
    f[16] = coeff_of_variation(rs, eps);
    f[17] = xs.back() - xs.front();
    f[18] = ys.back() - ys.front();

    f[19] = first.entropy;
    f[20] = first.concentration;
    f[21] = first.spread;
    f[22] = first.spread; // definitional duplicate of first_attention_spread
    f[23] = first.skewness;
    f[24] = first.top1_avg;
    f[25] = first.topk_avg;
    f[26] = last.entropy;
    f[27] = last.concentration;
    f[28] = last.spread;
    f[29] = last.spread; // definitional duplicate of last_attention_spread
    f[30] = last.skewness;
    f[31] = last.top1_avg;
    f[32] = last.topk_avg;

    f[33] = mean_of(Hs);
    f[34] = stddev_of(Hs);
    f[35] = mean_of(ks);
    f[36] = stddev_of(ks);
    f[37] = mean_of(rs);
    f[38] = stddev_of(rs);
    f[39] = f[37]; // definitional duplicate of attention_spread_mean
    f[40] = f[38]; // definitional duplicate of attention_spread_std
    f[41] = mean_of(sks);
    f[42] = stddev_of(sks);

    f[43] = static_cast<double>(S) / 10.0;
    f[44] = ns.front();
    f[45] = ns.back();
    f[46] = mean_of(ns);
    f[47] = stddev_of(ns);
    return f;
}

/// Features of the m-step prefix; m == S reproduces extract_features exactly.
inline FeatureVector prefix_features(const Trajectory& t, std::size_t m, double eps = kEpsilon) {
    if (m < 1 || m > t.steps.size()) {
        throw Error("prefix_features: m=" + std::to_string(m) + " out of range [1," +
                    std::to_string(t.steps.size()) + "]");
    }
    if (m == t.steps.size()) return extract_features(t, eps);
    Trajectory prefix;
    prefix.id = t.id;
    prefix.label = t.label;
    prefix.meta = t.meta;
    prefix.steps.assign(t.steps.begin(), t.steps.begin() + static_cast<std::ptrdiff_t>(m));
    return extract_features(prefix, eps);
}

struct CategoryFeatures {
    std::vector<std::size_t> indices; // into the 48-entry map, ascending
    std::vector<double> values;
    std::vector<std::string> names;
};

inline CategoryFeatures extract_category(const Trajectory& t, const std::set<FeatureCategory>& cats,
                                         double eps = kEpsilon) {
    if (cats.empty()) throw Error("extract_category: empty category set");
    const FeatureVector full = extract_features(t, eps);
    CategoryFeatures out;
    out.indices = category_indices(cats);
    out.values.reserve(out.indices.size());
    out.names.reserve(out.indices.size());
    for (std::size_t i : out.indices) {
        out.values.push_back(full[i]);
        out.names.emplace_back(kFeatureMap[i].name);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature table: delimited text, one row per trajectory.
// Columns: id, label (empty when absent), then the selected features in
// index order. Header row is mandatory.
// ---------------------------------------------------------------------------

struct FeatureRow {
    std::string id;
    std::optional<int> label;
    std::vector<double> values;
};

inline void write_feature_table(std::ostream& out, const std::vector<FeatureRow>& rows,
                                const std::vector<std::string>& names) {
    out << "id,label";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (const auto& row : rows) {
        if (row.id.find_first_of(",\"\n\r") != std::string::npos) {
            throw Error("write_feature_table: id '" + row.id + "' contains a delimiter");
        }
        if (row.values.size() != names.size()) {
            throw Error("write_feature_table: row '" + row.id + "' has " +
                        std::to_string(row.values.size()) + " values, expected " +
                        std::to_string(names.size()));
        }
        out << row.id << ',';
        if (row.label) out << *row.label;
        for (double v : row.values) out << ',' << format_double(v);
        out << '\n';
    }
}

} // namespace trajcal
