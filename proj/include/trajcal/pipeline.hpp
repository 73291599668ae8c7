#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajcal/calibrator.hpp"
#include "trajcal/metrics.hpp"
#include "trajcal/numeric.hpp"
#include "trajcal/parallel.hpp"
#include "trajcal/rng.hpp"

namespace trajcal {

// The published candidate grid for the regularization strength.
inline const std::vector<double> kAlphaGrid = {0.001, 0.01, 0.1, 1.0,  2.0,  3.0, 4.0, 5.0,
                                               6.0,   7.0,  8.0, 9.0, 10.0, 20.0, 50.0};

inline constexpr std::size_t kDefaultFolds = 5;
inline constexpr std::uint64_t kDefaultSeed = 42;
inline constexpr double kInnerTrainFraction = 0.8;

// ---------------------------------------------------------------------------
// Dataset: a feature matrix with ids and (possibly missing) labels.
// ---------------------------------------------------------------------------

struct Dataset {
    std::string name;
    Matrix features;
    std::vector<int> labels; // -1 marks a missing label
    std::vector<std::string> ids;
    std::vector<std::string> feature_names;

    std::size_t size() const { return features.rows; }

    bool fully_labeled() const {
        return std::all_of(labels.begin(), labels.end(), [](int y) { return y == 0 || y == 1; });
    }

    std::vector<int> require_labels() const {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != 0 && labels[i] != 1) {
                throw Error("dataset '" + name + "': row '" + ids[i] + "' has no label");
            }
        }
        return labels;
    }
};

// Reads the feature-table format written by write_feature_table.
inline Dataset read_feature_table(std::istream& in, std::string name = {}) {
    Dataset d;
    d.name = std::move(name);
    std::string line;
    if (!std::getline(in, line)) throw Error("feature table: missing header row");

    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        const std::size_t comma = line.find(',', pos);
        cols.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (cols.size() < 3 || cols[0] != "id" || cols[1] != "label") {
        throw Error("feature table: header must start with id,label");
    }
    d.feature_names.assign(cols.begin() + 2, cols.end());
    const std::size_t dim = d.feature_names.size();

    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        pos = 0;
        while (pos <= line.size()) {
            const std::size_t comma = line.find(',', pos);
            fields.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (fields.size() != dim + 2) {
            throw Error("feature table line " + std::to_string(line_no) + ": expected " +
                        std::to_string(dim + 2) + " fields, got " + std::to_string(fields.size()));
        }
        d.ids.push_back(fields[0]);
        if (fields[1].empty()) {
            d.labels.push_back(-1);
        } else {
            const long long y = parse_int(fields[1]);
            if (y != 0 && y != 1) {
                throw Error("feature table line " + std::to_string(line_no) + ": label must be 0 or 1");
            }
            d.labels.push_back(static_cast<int>(y));
        }
        for (std::size_t j = 0; j < dim; ++j) values.push_back(parse_double(fields[2 + j]));
    }
    d.features.rows = d.ids.size();
    d.features.cols = dim;
    d.features.data = std::move(values);
    return d;
}

// ---------------------------------------------------------------------------
// Stratified k-fold assignment, deterministic in the seed: indices of each
// class are shuffled and dealt round-robin, so per-fold class counts differ
// by at most one.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<std::size_t>> stratified_kfold(const std::vector<int>& labels,
                                                              std::size_t k = kDefaultFolds,
                                                              std::uint64_t seed = kDefaultSeed,
                                                              std::string* warning = nullptr) {
    if (k < 1) throw Error("stratified_kfold: k must be >= 1");
    if (labels.size() < k) {
        throw Error("stratified_kfold: need at least k=" + std::to_string(k) + " samples, got " +
                    std::to_string(labels.size()));
    }
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) pos.push_back(i);
        else if (labels[i] == 0) neg.push_back(i);
        else throw Error("stratified_kfold: labels must be 0/1");
    }
    if (warning && (pos.size() < k || neg.size() < k)) {
        *warning = "stratification is best-effort: a class has fewer than k members";
    }

    Rng rng(seed);
    rng.shuffle(neg);
    rng.shuffle(pos);

    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t f = 0;
    for (std::size_t i : neg) {
        folds[f].push_back(i);
        f = (f + 1) % k;
    }
    for (std::size_t i : pos) {
        folds[f].push_back(i);
        f = (f + 1) % k;
    }
    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

/// Stratified train/holdout split of the given indices; returns (train, holdout).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<std::size_t>& indices, const std::vector<int>& labels, double train_fraction,
    std::uint64_t seed) {
    if (train_fraction <= 0.0 || train_fraction > 1.0) {
        throw Error("stratified_split: train fraction must be in (0,1]");
    }
    std::vector<std::size_t> pos, neg;
    for (std::size_t i : indices) {
        (labels[i] == 1 ? pos : neg).push_back(i);
    }
    Rng rng(seed);
    rng.shuffle(neg);
    rng.shuffle(pos);
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
    auto deal = [&](std::vector<std::size_t>& cls) {
        // Keep at least one element of each class on the training side.
        std::size_t n_train = static_cast<std::size_t>(
            std::floor(train_fraction * static_cast<double>(cls.size()) + 1e-12));
        if (n_train == 0 && !cls.empty()) n_train = 1;
        for (std::size_t i = 0; i < cls.size(); ++i) {
            (i < n_train ? out.first : out.second).push_back(cls[i]);
        }
    };
    deal(neg);
    deal(pos);
    std::sort(out.first.begin(), out.first.end());
    std::sort(out.second.begin(), out.second.end());
    return out;
}

namespace detail {

inline Matrix gather_rows(const Matrix& X, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), X.cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < X.cols; ++c) out.at(r, c) = X.at(rows[r], c);
    }
    return out;
}

template <typename T>
inline std::vector<T> gather(const std::vector<T>& xs, const std::vector<std::size_t>& rows) {
    std::vector<T> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(xs[r]);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Grid-search cross-validation (the experimental protocol):
//  * stratified k folds, fixed seed;
//  * within each fold's training portion, a further stratified 80/20
//    train/validation split — the calibrator fits on the 80%;
//  * fold metrics come from the held-out fold;
//  * the winning alpha maximizes mean AUROC - mean Brier - mean ECE,
//    ties broken toward the smaller alpha; the winner is refit on all rows.
// ---------------------------------------------------------------------------

struct FoldOutcome {
    EvalReport report;
    std::size_t selected_count = 0;
};

struct AlphaOutcome {
    double alpha = 0.0;
    std::vector<FoldOutcome> folds;
    double mean_ece = 0.0, std_ece = 0.0;
    double mean_brier = 0.0, std_brier = 0.0;
    double mean_auroc = 0.0, std_auroc = 0.0;
    double mean_selected = 0.0, std_selected = 0.0;

    double selection_score() const { return mean_auroc - mean_brier - mean_ece; }
};

struct CVReport {
    std::string penalty;
    std::size_t k = kDefaultFolds;
    std::uint64_t seed = kDefaultSeed;
    std::size_t bins = kDefaultBins;
    double chosen_alpha = 0.0;
    std::vector<AlphaOutcome> grid; // ascending alpha
    AlphaOutcome chosen;            // copy of the winning row
};

struct CVConfig {
    Penalty penalty = Penalty::L2;
    std::vector<double> grid = kAlphaGrid;
    std::size_t k = kDefaultFolds;
    std::uint64_t seed = kDefaultSeed;
    std::size_t bins = kDefaultBins;
    int max_iter = 1000;
    double tol = 1e-8;
};

struct GridSearchResult {
    CalibrationModel model; // refit on the full dataset at the chosen alpha
    CVReport report;
};

namespace detail {

inline void finalize_alpha_outcome(AlphaOutcome& a) {
    std::vector<double> e, b, u, s;
    for (const auto& f : a.folds) {
        e.push_back(f.report.ece);
        b.push_back(f.report.brier);
        u.push_back(f.report.auroc);
        s.push_back(static_cast<double>(f.selected_count));
    }
    a.mean_ece = mean_of(e);
    a.std_ece = stddev_of(e);
    a.mean_brier = mean_of(b);
    a.std_brier = stddev_of(b);
    a.mean_auroc = mean_of(u);
    a.std_auroc = stddev_of(u);
    a.mean_selected = mean_of(s);
    a.std_selected = stddev_of(s);
}

} // namespace detail

inline GridSearchResult grid_search_cv(const Dataset& data, const CVConfig& cfg) {
    if (cfg.grid.empty()) throw Error("grid_search_cv: empty alpha grid");
    const std::vector<int> y = data.require_labels();
    const auto folds = stratified_kfold(y, cfg.k, cfg.seed);

    // Per-fold train/validation indices, shared across all grid points.
    std::vector<std::vector<std::size_t>> fit_idx(cfg.k);
    for (std::size_t f = 0; f < cfg.k; ++f) {
        std::vector<std::size_t> train_idx;
        for (std::size_t g = 0; g < cfg.k; ++g) {
            if (g == f) continue;
            train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
        }
        std::sort(train_idx.begin(), train_idx.end());
        fit_idx[f] = stratified_split(train_idx, y, kInnerTrainFraction, mix_seed(cfg.seed, f)).first;
    }

    std::vector<double> grid = cfg.grid;
    std::sort(grid.begin(), grid.end());

    // Grid rows are independent tasks; each task writes only its own slot,
    // so the reduction below is byte-stable regardless of scheduling.
    std::vector<AlphaOutcome> rebuilt(grid.size());
    parallel_for(grid.size(), [&](std::size_t a) {
        AlphaOutcome row;
        row.alpha = grid[a];
        row.folds.resize(cfg.k);
        for (std::size_t f = 0; f < cfg.k; ++f) {
            TrainConfig tc;
            tc.penalty = cfg.penalty;
            tc.alpha = grid[a];
            tc.max_iter = cfg.max_iter;
            tc.tol = cfg.tol;
            tc.seed = cfg.seed;
            const CalibrationModel model =
                train(detail::gather_rows(data.features, fit_idx[f]), detail::gather(y, fit_idx[f]),
                      data.feature_names, tc);
            PredictionSet p;
            p.confidences = predict_rows(model, detail::gather_rows(data.features, folds[f]));
            p.labels = detail::gather(y, folds[f]);
            row.folds[f].report = evaluate(p, cfg.bins);
            row.folds[f].selected_count = selected_features(model).size();
        }
        detail::finalize_alpha_outcome(row);
        rebuilt[a] = std::move(row);
    });

    std::size_t best = 0;
    for (std::size_t a = 1; a < rebuilt.size(); ++a) {
        if (rebuilt[a].selection_score() > rebuilt[best].selection_score()) best = a;
    }

    TrainConfig tc;
    tc.penalty = cfg.penalty;
    tc.alpha = grid[best];
    tc.max_iter = cfg.max_iter;
    tc.tol = cfg.tol;
    tc.seed = cfg.seed;

    GridSearchResult result;
    result.model = train(data.features, y, data.feature_names, tc);
    result.report.penalty = penalty_name(cfg.penalty);
    result.report.k = cfg.k;
    result.report.seed = cfg.seed;
    result.report.bins = cfg.bins;
    result.report.chosen_alpha = grid[best];
    result.report.grid = std::move(rebuilt);
    result.report.chosen = result.report.grid[best];
    return result;
}

// ---------------------------------------------------------------------------
// Transfer evaluation and pooled pretraining
// ---------------------------------------------------------------------------

/// Apply a trained model to a target dataset without refitting; the model's
/// own (source-fitted) standardizer is used.
inline EvalReport transfer_eval(const CalibrationModel& m, const Dataset& target,
                                std::size_t bins = kDefaultBins) {
    PredictionSet p;
    p.confidences = predict_rows(m, target.features);
    p.labels = target.require_labels();
    return evaluate(p, bins);
}

/// Row-concatenate sources (ids prefixed by source name) for GAC pretraining.
inline Dataset pool_datasets(const std::vector<Dataset>& sources) {
    if (sources.empty()) throw Error("pool_datasets: need at least one source");
    Dataset pool;
    pool.name = "pool";
    pool.feature_names = sources.front().feature_names;
    pool.features.cols = sources.front().features.cols;
    for (const auto& src : sources) {
        if (src.features.cols != pool.features.cols || src.feature_names != pool.feature_names) {
            throw Error("pool_datasets: feature dimensions differ between sources ('" +
                        sources.front().name + "' vs '" + src.name + "')");
        }
        pool.features.rows += src.features.rows;
        pool.features.data.insert(pool.features.data.end(), src.features.data.begin(),
                                  src.features.data.end());
        pool.labels.insert(pool.labels.end(), src.labels.begin(), src.labels.end());
        for (const auto& id : src.ids) pool.ids.push_back(src.name + "/" + id);
    }
    return pool;
}

inline GridSearchResult pretrain_gac(const std::vector<Dataset>& sources, const CVConfig& cfg) {
    GridSearchResult result = grid_search_cv(pool_datasets(sources), cfg);
    for (const auto& src : sources) result.model.meta.sources.push_back(src.name);
    return result;
}

// ---------------------------------------------------------------------------
// CVReport serialization (mirrors the mean/std reporting convention)
// ---------------------------------------------------------------------------

inline nlohmann::json cv_report_to_json(const CVReport& r) {
    auto outcome_to_json = [](const AlphaOutcome& a) {
        nlohmann::json j;
        j["alpha"] = a.alpha;
        j["ece_mean"] = a.mean_ece;
        j["ece_std"] = a.std_ece;
        j["brier_mean"] = a.mean_brier;
        j["brier_std"] = a.std_brier;
        j["auroc_mean"] = a.mean_auroc;
        j["auroc_std"] = a.std_auroc;
        j["n_features_mean"] = a.mean_selected;
        j["n_features_std"] = a.std_selected;
        auto folds = nlohmann::json::array();
        for (const auto& f : a.folds) {
            nlohmann::json jf = eval_report_to_json(f.report);
            jf["n_features"] = f.selected_count;
            folds.push_back(std::move(jf));
        }
        j["folds"] = std::move(folds);
        return j;
    };

    nlohmann::json j;
    j["format"] = "trajcal-cvreport";
    j["version"] = 1;
    j["penalty"] = r.penalty;
    j["k"] = r.k;
    j["seed"] = r.seed;
    j["bins"] = r.bins;
    j["chosen_alpha"] = r.chosen_alpha;
    j["chosen"] = outcome_to_json(r.chosen);
    auto grid = nlohmann::json::array();
    for (const auto& a : r.grid) grid.push_back(outcome_to_json(a));
    j["grid"] = std::move(grid);
    return j;
}

} // namespace trajcal
