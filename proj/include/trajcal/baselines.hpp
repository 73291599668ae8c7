#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "trajcal/numeric.hpp"
#include "trajcal/trace.hpp"

namespace trajcal {

// ---------------------------------------------------------------------------
// Inference-only confidence scores
// ---------------------------------------------------------------------------

/// Mean top-1 confidence of the final step's tokens.
inline double last_step_confidence(const Trajectory& t) {
    if (t.steps.empty()) throw Error("last_step_confidence: trajectory has no steps");
    const Step& last = t.steps.back();
    if (last.tokens.empty()) throw Error("last_step_confidence: empty final step");
    double s = 0.0;
    for (const auto& tok : last.tokens) s += tok.top1;
    return s / static_cast<double>(last.tokens.size());
}

/// Token-weighted mean top-1 confidence over the whole trajectory.
inline double global_trace_confidence(const Trajectory& t) {
    if (t.steps.empty()) throw Error("global_trace_confidence: trajectory has no steps");
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& step : t.steps) {
        for (const auto& tok : step.tokens) s += tok.top1;
        n += step.tokens.size();
    }
    if (n == 0) throw Error("global_trace_confidence: trajectory has no tokens");
    return s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Temperature scaling on scalar confidences: c -> sigmoid(logit(c)/T).
// T is fit by minimizing mean log-loss over a log-spaced grid on
// [kTempMin, kTempMax], refined by golden-section search.
// ---------------------------------------------------------------------------

inline constexpr double kTempMin = 0.05;
inline constexpr double kTempMax = 20.0;
inline constexpr double kConfClamp = 1e-6; // confidences clamped into [eps, 1-eps] before logit

struct TemperatureModel {
    double temperature = 1.0;
    std::vector<double> grid_evaluated;
    double best_log_loss = 0.0;
};

inline double clamp_confidence(double c) {
    return std::clamp(c, kConfClamp, 1.0 - kConfClamp);
}

inline double apply_temperature(double c, const TemperatureModel& m) {
    return sigmoid(logit(clamp_confidence(c)) / m.temperature);
}

namespace detail {

inline double temperature_log_loss(const std::vector<double>& logits, const std::vector<int>& labels,
                                   double T) {
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double s = logits[i] / T;
        loss += log1pexp(s) - static_cast<double>(labels[i]) * s;
    }
    return loss / static_cast<double>(logits.size());
}

} // namespace detail

inline TemperatureModel fit_temperature(const std::vector<double>& confidences,
                                        const std::vector<int>& labels) {
    if (confidences.empty() || confidences.size() != labels.size()) {
        throw Error("fit_temperature: confidence/label size mismatch");
    }
    bool has_pos = false, has_neg = false;
    for (int y : labels) {
        if (y == 1) has_pos = true;
        else if (y == 0) has_neg = true;
        else throw Error("fit_temperature: labels must be 0/1");
    }
    if (!has_pos || !has_neg) throw Error("fit_temperature: labels contain a single class");

    std::vector<double> logits(confidences.size());
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        logits[i] = logit(clamp_confidence(confidences[i]));
    }
    auto loss_at = [&](double T) { return detail::temperature_log_loss(logits, labels, T); };

    TemperatureModel m;
    constexpr int kGridPoints = 41;
    const double lo = std::log(kTempMin), hi = std::log(kTempMax);
    std::size_t best = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int g = 0; g < kGridPoints; ++g) {
        const double T = std::exp(lo + (hi - lo) * static_cast<double>(g) /
                                           static_cast<double>(kGridPoints - 1));
        m.grid_evaluated.push_back(T);
        const double l = loss_at(T);
        if (l < best_loss) {
            best_loss = l;
            best = static_cast<std::size_t>(g);
        }
    }

    // Golden-section refinement within the bracket around the best grid point.
    double a = best > 0 ? m.grid_evaluated[best - 1] : kTempMin;
    double b = best + 1 < m.grid_evaluated.size() ? m.grid_evaluated[best + 1] : kTempMax;
    constexpr double kInvPhi = 0.6180339887498949;
    double x1 = b - kInvPhi * (b - a);
    double x2 = a + kInvPhi * (b - a);
    double f1 = loss_at(x1), f2 = loss_at(x2);
    while (b - a > 1e-4) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - kInvPhi * (b - a);
            f1 = loss_at(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + kInvPhi * (b - a);
            f2 = loss_at(x2);
        }
    }

    // Pick the minimum among refinement, grid winner, identity, and the
    // interval endpoints (so boundary optima come back exact).
    double best_T = 0.5 * (a + b);
    double best_l = loss_at(best_T);
    for (double cand : {m.grid_evaluated[best], 1.0, kTempMin, kTempMax}) {
        const double l = loss_at(cand);
        if (l < best_l || (l == best_l && cand == 1.0)) {
            best_l = l;
            best_T = cand;
        }
    }
    m.temperature = best_T;
    m.best_log_loss = best_l;
    return m;
}

// ---------------------------------------------------------------------------
// Verbalized confidence: last case-insensitive "confidence: <number>%".
// ---------------------------------------------------------------------------

inline std::optional<double> parse_verbalized(const std::string& text) {
    static const std::regex pattern(R"(confidence:\s*([0-9]+(?:\.[0-9]+)?)\s*%)",
                                    std::regex::icase);
    std::optional<double> value;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), pattern);
         it != std::sregex_iterator(); ++it) {
        value = parse_double((*it)[1].str()) / 100.0;
    }
    if (value) *value = std::clamp(*value, 0.0, 1.0);
    return value;
}

} // namespace trajcal
