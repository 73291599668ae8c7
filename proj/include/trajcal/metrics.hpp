#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajcal/numeric.hpp"

namespace trajcal {

inline constexpr std::size_t kDefaultBins = 10;

struct PredictionSet {
    std::vector<double> confidences; // in [0,1]
    std::vector<int> labels;         // 0/1
};

inline void check_prediction_set(const PredictionSet& p) {
    if (p.confidences.empty()) throw Error("prediction set is empty");
    if (p.confidences.size() != p.labels.size()) {
        throw Error("prediction set has " + std::to_string(p.confidences.size()) +
                    " confidences but " + std::to_string(p.labels.size()) + " labels");
    }
    for (double c : p.confidences) {
        if (!(c >= 0.0 && c <= 1.0)) {
            throw Error("confidence out of [0,1]: " + format_double(c));
        }
    }
    for (int y : p.labels) {
        if (y != 0 && y != 1) throw Error("label must be 0 or 1, got " + std::to_string(y));
    }
}

// ---------------------------------------------------------------------------
// Reliability bins: M equal-width bins over [0,1], right-open except the top
// bin. Bin edges are m/M evaluated in double precision, so a confidence
// exactly at an edge lands in the bin that starts there.
// ---------------------------------------------------------------------------

struct ReliabilityBin {
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

struct ReliabilityBins {
    std::size_t n = 0;
    std::vector<ReliabilityBin> bins;
};

inline std::size_t bin_index(double c, std::size_t M) {
    std::size_t idx = std::min(static_cast<std::size_t>(c * static_cast<double>(M)), M - 1);
    // Fix up against exact edges; c*M can land one bin off after rounding.
    while (idx + 1 < M && c >= static_cast<double>(idx + 1) / static_cast<double>(M)) ++idx;
    while (idx > 0 && c < static_cast<double>(idx) / static_cast<double>(M)) --idx;
    return idx;
}

inline ReliabilityBins reliability_bins(const PredictionSet& p, std::size_t M = kDefaultBins) {
    check_prediction_set(p);
    if (M < 1) throw Error("reliability_bins: M must be >= 1");
    const std::size_t n = p.confidences.size();
    std::vector<double> conf_sum(M, 0.0);
    std::vector<double> acc_sum(M, 0.0);
    std::vector<std::size_t> count(M, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t m = bin_index(p.confidences[i], M);
        conf_sum[m] += p.confidences[i];
        acc_sum[m] += p.labels[i];
        ++count[m];
    }
    ReliabilityBins out;
    out.n = n;
    out.bins.resize(M);
    for (std::size_t m = 0; m < M; ++m) {
        out.bins[m].count = count[m];
        if (count[m] > 0) {
            out.bins[m].mean_confidence = conf_sum[m] / static_cast<double>(count[m]);
            out.bins[m].accuracy = acc_sum[m] / static_cast<double>(count[m]);
        }
    }
    return out;
}

inline double ece_from_bins(const ReliabilityBins& rb) {
    double e = 0.0;
    for (const auto& b : rb.bins) {
        if (b.count == 0) continue;
        e += (static_cast<double>(b.count) / static_cast<double>(rb.n)) *
             std::abs(b.accuracy - b.mean_confidence);
    }
    return e;
}

inline double ece(const PredictionSet& p, std::size_t M = kDefaultBins) {
    return ece_from_bins(reliability_bins(p, M));
}

inline double brier(const PredictionSet& p) {
    check_prediction_set(p);
    double s = 0.0;
    for (std::size_t i = 0; i < p.confidences.size(); ++i) {
        const double d = p.confidences[i] - static_cast<double>(p.labels[i]);
        s += d * d;
    }
    return s / static_cast<double>(p.confidences.size());
}

// Rank-based AUROC; tied scores get average ranks (half credit per tie).
inline double auroc(const PredictionSet& p) {
    check_prediction_set(p);
    const std::size_t n = p.confidences.size();
    std::size_t n_pos = 0;
    for (int y : p.labels) n_pos += static_cast<std::size_t>(y);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw Error("AUROC undefined: labels contain a single class");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&p](std::size_t a, std::size_t b) {
        return p.confidences[a] < p.confidences[b];
    });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && p.confidences[order[j + 1]] == p.confidences[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0; // ranks are 1-based
        for (std::size_t t = i; t <= j; ++t) {
            if (p.labels[order[t]] == 1) pos_rank_sum += avg_rank;
        }
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

struct EvalReport {
    double ece = 0.0;
    double brier = 0.0;
    double auroc = 0.0;
    ReliabilityBins bins;
    std::size_t n = 0;
};

inline EvalReport evaluate(const PredictionSet& p, std::size_t M = kDefaultBins) {
    EvalReport r;
    r.bins = reliability_bins(p, M);
    r.ece = ece_from_bins(r.bins);
    r.brier = brier(p);
    r.auroc = auroc(p);
    r.n = p.confidences.size();
    return r;
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["ece"] = r.ece;
    j["brier"] = r.brier;
    j["auroc"] = r.auroc;
    j["n"] = r.n;
    j["bins"] = r.bins.bins.size();
    auto table = nlohmann::json::array();
    for (const auto& b : r.bins.bins) {
        table.push_back({{"count", b.count},
                         {"mean_confidence", b.mean_confidence},
                         {"accuracy", b.accuracy}});
    }
    j["bin_table"] = std::move(table);
    return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.ece = j.at("ece").get<double>();
    r.brier = j.at("brier").get<double>();
    r.auroc = j.at("auroc").get<double>();
    r.n = j.at("n").get<std::size_t>();
    r.bins.n = r.n;
    for (const auto& jb : j.at("bin_table")) {
        ReliabilityBin b;
        b.count = jb.at("count").get<std::size_t>();
        b.mean_confidence = jb.at("mean_confidence").get<double>();
        b.accuracy = jb.at("accuracy").get<double>();
        r.bins.bins.push_back(b);
    }
    return r;
}

/// Plot-ready bin table: bin_lo,bin_hi,count,mean_confidence,accuracy.
inline void write_bin_table(std::ostream& out, const ReliabilityBins& rb) {
    const std::size_t M = rb.bins.size();
    out << "bin_lo,bin_hi,count,mean_confidence,accuracy\n";
    for (std::size_t m = 0; m < M; ++m) {
        out << format_double(static_cast<double>(m) / static_cast<double>(M)) << ','
            << format_double(static_cast<double>(m + 1) / static_cast<double>(M)) << ','
            << rb.bins[m].count << ',' << format_double(rb.bins[m].mean_confidence) << ','
            << format_double(rb.bins[m].accuracy) << '\n';
    }
}

} // namespace trajcal
