#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trajcal/numeric.hpp"

namespace trajcal {

enum class Penalty { L1, L2 };

inline std::string penalty_name(Penalty p) { return p == Penalty::L1 ? "l1" : "l2"; }

inline Penalty penalty_from_name(const std::string& s) {
    if (s == "l1") return Penalty::L1;
    if (s == "l2") return Penalty::L2;
    throw Error("unknown penalty '" + s + "' (expected l1 or l2)");
}

struct TrainConfig {
    Penalty penalty = Penalty::L2;
    double alpha = 1.0;
    int max_iter = 1000;
    double tol = 1e-8; // on the KKT residual
    std::uint64_t seed = 42;
};

// Row-major dense matrix; rows = samples, cols = features.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Per-feature z-score parameters fitted on training data. Constant features
// keep stddev 1 and are pinned to weight 0 by the trainer.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<bool> constant;

    std::size_t size() const { return mean.size(); }

    double transform(std::size_t j, double v) const { return (v - mean[j]) / stddev[j]; }
};

inline Standardizer fit_standardizer(const Matrix& X) {
    Standardizer s;
    s.mean.assign(X.cols, 0.0);
    s.stddev.assign(X.cols, 0.0);
    s.constant.assign(X.cols, false);
    const double n = static_cast<double>(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) {
        for (std::size_t c = 0; c < X.cols; ++c) s.mean[c] += X.at(r, c);
    }
    for (std::size_t c = 0; c < X.cols; ++c) s.mean[c] /= n;
    for (std::size_t r = 0; r < X.rows; ++r) {
        for (std::size_t c = 0; c < X.cols; ++c) {
            const double d = X.at(r, c) - s.mean[c];
            s.stddev[c] += d * d;
        }
    }
    for (std::size_t c = 0; c < X.cols; ++c) {
        s.stddev[c] = std::sqrt(s.stddev[c] / n);
        if (s.stddev[c] == 0.0) {
            s.stddev[c] = 1.0;
            s.constant[c] = true;
        }
    }
    return s;
}

struct TrainMeta {
    std::uint64_t seed = 42;
    int iterations = 0;
    bool converged = false;
    double objective = 0.0;
    std::vector<std::string> sources; // pooled-pretraining source tags
};

struct CalibrationModel {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<std::string> feature_names;
    Standardizer standardizer;
    Penalty penalty = Penalty::L2;
    double alpha = 1.0;
    TrainMeta meta;

    std::size_t dim() const { return weights.size(); }
};

// ---------------------------------------------------------------------------
// Smooth part of the objective: mean logistic loss over standardized rows.
// Exposed separately so tests can check the analytic gradient directly.
// ---------------------------------------------------------------------------

struct SmoothEval {
    double loss = 0.0;
    std::vector<double> grad_w;
    double grad_b = 0.0;
};

inline SmoothEval logistic_smooth_eval(const Matrix& Z, const std::vector<int>& y,
                                       const std::vector<double>& w, double b) {
    const std::size_t n = Z.rows;
    SmoothEval out;
    out.grad_w.assign(Z.cols, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b;
        for (std::size_t j = 0; j < Z.cols; ++j) s += w[j] * Z.at(i, j);
        out.loss += log1pexp(s) - static_cast<double>(y[i]) * s;
        const double resid = sigmoid(s) - static_cast<double>(y[i]);
        for (std::size_t j = 0; j < Z.cols; ++j) out.grad_w[j] += resid * Z.at(i, j);
        out.grad_b += resid;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.loss *= inv_n;
    out.grad_b *= inv_n;
    for (double& g : out.grad_w) g *= inv_n;
    return out;
}

namespace detail {

inline double soft_threshold(double u, double lambda) {
    if (u > lambda) return u - lambda;
    if (u < -lambda) return u + lambda;
    return 0.0;
}

inline double penalty_value(Penalty p, double alpha, const std::vector<double>& w) {
    double v = 0.0;
    if (p == Penalty::L1) {
        for (double x : w) v += std::abs(x);
    } else {
        for (double x : w) v += x * x;
    }
    return alpha * v;
}

inline constexpr double kCurvatureFloor = 1e-10;
inline constexpr double kMaxCoordStep = 30.0; // per-coordinate step box per outer iteration
inline constexpr double kBiasTol = 1e-12;     // bias residual solved tighter than the weights

} // namespace detail

/// KKT residual of the regularized objective at (w, b); 0 at the optimum.
inline double kkt_residual(const SmoothEval& sm, const std::vector<double>& w,
                           const std::vector<bool>& constant, Penalty penalty, double alpha) {
    double worst = std::abs(sm.grad_b);
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (j < constant.size() && constant[j]) continue;
        double viol = 0.0;
        if (penalty == Penalty::L1) {
            viol = w[j] == 0.0 ? std::max(0.0, std::abs(sm.grad_w[j]) - alpha)
                               : std::abs(sm.grad_w[j] + alpha * (w[j] > 0.0 ? 1.0 : -1.0));
        } else {
            viol = std::abs(sm.grad_w[j] + 2.0 * alpha * w[j]);
        }
        worst = std::max(worst, viol);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Training: proximal Newton over standardized features. Each outer iteration
// builds the weighted quadratic model of the mean logistic loss at the
// current point and minimizes it (plus the penalty) by deterministic cyclic
// coordinate descent — soft-thresholding for L1, exact coordinate steps for
// L2, bias unpenalized — then takes the direction under a Tseng-Yun
// backtracking line search so the composite objective never increases.
// Convergence is declared on the KKT residual of the true objective, which
// is what the optimality tests assert. The bias residual is driven below
// kBiasTol so the intercept is pinned to full precision.
// ---------------------------------------------------------------------------

inline CalibrationModel train(const Matrix& X, const std::vector<int>& y,
                              const std::vector<std::string>& feature_names, const TrainConfig& cfg,
                              std::vector<double>* objective_log = nullptr) {
    if (X.rows < 2) throw Error("train: need at least 2 samples");
    if (y.size() != X.rows) throw Error("train: label count does not match feature rows");
    if (feature_names.size() != X.cols) throw Error("train: feature name count does not match columns");
    if (cfg.alpha <= 0.0) throw Error("train: alpha must be positive");
    if (cfg.max_iter < 1) throw Error("train: max_iter must be >= 1");
    std::size_t n_pos = 0;
    for (int label : y) {
        if (label != 0 && label != 1) throw Error("train: labels must be 0/1");
        n_pos += static_cast<std::size_t>(label);
    }
    if (n_pos == 0 || n_pos == y.size()) throw Error("train: degenerate labels (single class)");
    for (std::size_t i = 0; i < X.data.size(); ++i) {
        if (!std::isfinite(X.data[i])) {
            throw Error("train: non-finite feature value at row " + std::to_string(i / X.cols) +
                        " column " + std::to_string(i % X.cols));
        }
    }

    const Standardizer std_params = fit_standardizer(X);
    Matrix Z(X.rows, X.cols);
    for (std::size_t r = 0; r < X.rows; ++r) {
        for (std::size_t c = 0; c < X.cols; ++c) Z.at(r, c) = std_params.transform(c, X.at(r, c));
    }

    const std::size_t n = Z.rows;
    const std::size_t d = Z.cols;
    const bool l1 = cfg.penalty == Penalty::L1;
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<double> w(d, 0.0);
    double b = 0.0;
    std::vector<double> score(n, 0.0);

    auto composite_objective = [&](const std::vector<double>& s, const std::vector<double>& wts) {
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            loss += log1pexp(s[i]) - static_cast<double>(y[i]) * s[i];
        }
        return loss * inv_n + detail::penalty_value(cfg.penalty, cfg.alpha, wts);
    };
    double obj = composite_objective(score, w);
    if (objective_log) objective_log->push_back(obj);

    std::vector<double> prob(n), wt(n), grad(d), curv(d), dw(d), q(n), s_try(n), w_try(d);

    TrainMeta meta;
    meta.seed = cfg.seed;
    int pass = 0;
    bool stalled = false;
    for (; pass < cfg.max_iter && !stalled; ++pass) {
        // Gradient and per-coordinate curvature of the smooth loss.
        double grad_b = 0.0, curv_b = 0.0;
        std::fill(grad.begin(), grad.end(), 0.0);
        std::fill(curv.begin(), curv.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            prob[i] = sigmoid(score[i]);
            wt[i] = std::max(prob[i] * (1.0 - prob[i]), detail::kCurvatureFloor);
            const double resid = prob[i] - static_cast<double>(y[i]);
            grad_b += resid;
            curv_b += wt[i];
            for (std::size_t j = 0; j < d; ++j) {
                const double z = Z.at(i, j);
                grad[j] += resid * z;
                curv[j] += wt[i] * z * z;
            }
        }
        grad_b *= inv_n;
        curv_b = std::max(curv_b * inv_n, detail::kCurvatureFloor);
        for (std::size_t j = 0; j < d; ++j) {
            grad[j] *= inv_n;
            curv[j] = std::max(curv[j] * inv_n, detail::kCurvatureFloor);
        }

        // KKT check on the true objective before stepping.
        double weight_res = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            if (std_params.constant[j]) continue;
            const double viol =
                l1 ? (w[j] == 0.0 ? std::max(0.0, std::abs(grad[j]) - cfg.alpha)
                                  : std::abs(grad[j] + cfg.alpha * (w[j] > 0.0 ? 1.0 : -1.0)))
                   : std::abs(grad[j] + 2.0 * cfg.alpha * w[j]);
            weight_res = std::max(weight_res, viol);
        }
        if (weight_res <= cfg.tol && std::abs(grad_b) <= std::min(cfg.tol, detail::kBiasTol)) {
            meta.converged = true;
            break;
        }

        // Inner cyclic CD on the quadratic model; q_i tracks z_i . dw + db.
        std::fill(dw.begin(), dw.end(), 0.0);
        std::fill(q.begin(), q.end(), 0.0);
        double db = 0.0;
        for (int inner = 0; inner < 100; ++inner) {
            double max_step = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                if (std_params.constant[j]) continue;
                double gq = 0.0;
                for (std::size_t i = 0; i < n; ++i) gq += wt[i] * Z.at(i, j) * q[i];
                gq = grad[j] + gq * inv_n;
                const double v = w[j] + dw[j];
                double v_new;
                if (l1) {
                    v_new = detail::soft_threshold(v - gq / curv[j], cfg.alpha / curv[j]);
                } else {
                    v_new = v - (gq + 2.0 * cfg.alpha * v) / (curv[j] + 2.0 * cfg.alpha);
                }
                const double step = std::clamp(v_new - w[j], -detail::kMaxCoordStep,
                                               detail::kMaxCoordStep) -
                                    dw[j];
                if (step != 0.0) {
                    dw[j] += step;
                    for (std::size_t i = 0; i < n; ++i) q[i] += step * Z.at(i, j);
                    max_step = std::max(max_step, std::abs(step));
                }
            }
            double gqb = 0.0;
            for (std::size_t i = 0; i < n; ++i) gqb += wt[i] * q[i];
            gqb = grad_b + gqb * inv_n;
            const double step_b =
                std::clamp(db - gqb / curv_b, -detail::kMaxCoordStep, detail::kMaxCoordStep) - db;
            if (step_b != 0.0) {
                db += step_b;
                for (std::size_t i = 0; i < n; ++i) q[i] += step_b;
                max_step = std::max(max_step, std::abs(step_b));
            }
            if (max_step < 1e-12) break;
        }

        // Composite decrease measure of the direction (Tseng-Yun).
        double decrease = grad_b * db;
        for (std::size_t j = 0; j < d; ++j) decrease += grad[j] * dw[j];
        for (std::size_t j = 0; j < d; ++j) {
            decrease += l1 ? cfg.alpha * (std::abs(w[j] + dw[j]) - std::abs(w[j]))
                           : cfg.alpha * ((w[j] + dw[j]) * (w[j] + dw[j]) - w[j] * w[j]);
        }
        if (!(decrease < 0.0)) break; // no descent direction: numerically at the optimum

        // Near the optimum the model decrease drops below objective rounding;
        // then the full proximal Newton step is taken outright.
        const bool below_noise = -decrease <= 1e-14 * (1.0 + std::abs(obj));
        double tau = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < 40 && !accepted; ++bt) {
            for (std::size_t i = 0; i < n; ++i) s_try[i] = score[i] + tau * q[i];
            for (std::size_t j = 0; j < d; ++j) w_try[j] = w[j] + tau * dw[j];
            const double obj_try = composite_objective(s_try, w_try);
            if (below_noise || obj_try <= obj + 0.01 * tau * decrease) {
                accepted = true;
                obj = obj_try;
                score.swap(s_try);
                w.swap(w_try);
                b += tau * db;
            } else {
                tau *= 0.5;
            }
        }
        if (!accepted) stalled = true;
        if (objective_log) objective_log->push_back(obj);
    }
    if (!meta.converged) {
        // the final step may have landed on the optimum right at the cap
        const SmoothEval sm = logistic_smooth_eval(Z, y, w, b);
        meta.converged = kkt_residual(sm, w, std_params.constant, cfg.penalty, cfg.alpha) <= cfg.tol &&
                         std::abs(sm.grad_b) <= std::min(cfg.tol, detail::kBiasTol);
    }
    meta.iterations = pass;
    meta.objective = obj;

    CalibrationModel m;
    m.weights = std::move(w);
    m.bias = b;
    m.feature_names = feature_names;
    m.standardizer = std_params;
    m.penalty = cfg.penalty;
    m.alpha = cfg.alpha;
    m.meta = meta;
    return m;
}

// ---------------------------------------------------------------------------
// Prediction and feature selection
// ---------------------------------------------------------------------------

inline double predict(const CalibrationModel& m, std::span<const double> x) {
    if (x.size() != m.dim()) {
        throw Error("predict: input has " + std::to_string(x.size()) + " features, model expects " +
                    std::to_string(m.dim()));
    }
    double s = m.bias;
    for (std::size_t j = 0; j < x.size(); ++j) {
        s += m.weights[j] * m.standardizer.transform(j, x[j]);
    }
    return std::clamp(sigmoid(s), 1e-12, 1.0 - 1e-12);
}

inline std::vector<double> predict_rows(const CalibrationModel& m, const Matrix& X) {
    if (X.cols != m.dim()) {
        throw Error("predict: table has " + std::to_string(X.cols) + " features, model expects " +
                    std::to_string(m.dim()));
    }
    std::vector<double> out(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) {
        out[r] = predict(m, std::span<const double>(X.data.data() + r * X.cols, X.cols));
    }
    return out;
}

/// Features with |w| above threshold, sorted by |w| descending.
inline std::vector<std::pair<std::string, double>> selected_features(const CalibrationModel& m,
                                                                     double threshold = 1e-6) {
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t j = 0; j < m.weights.size(); ++j) {
        if (std::abs(m.weights[j]) > threshold) out.emplace_back(m.feature_names[j], m.weights[j]);
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return std::abs(a.second) > std::abs(b.second);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: versioned text record, reals in shortest round-trip form so
// load(save(m)) is bit-exact.
// ---------------------------------------------------------------------------

inline constexpr const char* kModelFormatTag = "trajcal-model v1";

inline std::string save_model(const CalibrationModel& m) {
    std::ostringstream out;
    out << kModelFormatTag << '\n';
    out << "penalty " << penalty_name(m.penalty) << '\n';
    out << "alpha " << format_double(m.alpha) << '\n';
    out << "seed " << m.meta.seed << '\n';
    out << "iterations " << m.meta.iterations << '\n';
    out << "converged " << (m.meta.converged ? 1 : 0) << '\n';
    out << "objective " << format_double(m.meta.objective) << '\n';
    out << "sources";
    for (std::size_t i = 0; i < m.meta.sources.size(); ++i) {
        if (m.meta.sources[i].find_first_of(", \n") != std::string::npos) {
            throw Error("save_model: source tag '" + m.meta.sources[i] + "' contains a delimiter");
        }
        out << (i == 0 ? " " : ",") << m.meta.sources[i];
    }
    out << '\n';
    out << "features " << m.dim() << '\n';
    for (std::size_t j = 0; j < m.dim(); ++j) {
        out << "f " << m.feature_names[j] << ' ' << format_double(m.standardizer.mean[j]) << ' '
            << format_double(m.standardizer.stddev[j]) << ' ' << format_double(m.weights[j]) << ' '
            << (m.standardizer.constant[j] ? 1 : 0) << '\n';
    }
    out << "bias " << format_double(m.bias) << '\n';
    out << "end\n";
    return out.str();
}

namespace detail {

inline std::string expect_line(std::istringstream& in, const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw Error(std::string("load_model: truncated before ") + what);
    return line;
}

inline std::string expect_field(const std::string& line, const std::string& key) {
    if (line.rfind(key + ' ', 0) != 0) {
        throw Error("load_model: expected '" + key + " ...', got '" + line + "'");
    }
    return line.substr(key.size() + 1);
}

} // namespace detail

inline CalibrationModel load_model(const std::string& bytes) {
    std::istringstream in(bytes);
    if (detail::expect_line(in, "header") != kModelFormatTag) {
        throw Error("load_model: not a trajcal-model v1 file");
    }
    CalibrationModel m;
    m.penalty = penalty_from_name(detail::expect_field(detail::expect_line(in, "penalty"), "penalty"));
    m.alpha = parse_double(detail::expect_field(detail::expect_line(in, "alpha"), "alpha"));
    m.meta.seed = static_cast<std::uint64_t>(
        parse_int(detail::expect_field(detail::expect_line(in, "seed"), "seed")));
    m.meta.iterations = static_cast<int>(
        parse_int(detail::expect_field(detail::expect_line(in, "iterations"), "iterations")));
    m.meta.converged =
        parse_int(detail::expect_field(detail::expect_line(in, "converged"), "converged")) != 0;
    m.meta.objective = parse_double(detail::expect_field(detail::expect_line(in, "objective"), "objective"));

    const std::string sources_line = detail::expect_line(in, "sources");
    if (sources_line != "sources") {
        std::string joined = detail::expect_field(sources_line, "sources");
        std::size_t pos = 0;
        while (pos <= joined.size()) {
            const std::size_t comma = joined.find(',', pos);
            const std::string tag = joined.substr(pos, comma == std::string::npos ? comma : comma - pos);
            if (!tag.empty()) m.meta.sources.push_back(tag);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    }

    const std::size_t d = static_cast<std::size_t>(
        parse_int(detail::expect_field(detail::expect_line(in, "features"), "features")));
    m.weights.resize(d);
    m.feature_names.resize(d);
    m.standardizer.mean.resize(d);
    m.standardizer.stddev.resize(d);
    m.standardizer.constant.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        std::istringstream fl(detail::expect_line(in, "feature row"));
        std::string tag, name, mean_s, std_s, w_s, const_s;
        if (!(fl >> tag >> name >> mean_s >> std_s >> w_s >> const_s) || tag != "f") {
            throw Error("load_model: malformed feature row " + std::to_string(j));
        }
        m.feature_names[j] = name;
        m.standardizer.mean[j] = parse_double(mean_s);
        m.standardizer.stddev[j] = parse_double(std_s);
        m.weights[j] = parse_double(w_s);
        m.standardizer.constant[j] = parse_int(const_s) != 0;
        if (m.standardizer.stddev[j] <= 0.0) {
            throw Error("load_model: non-positive stddev in feature row " + std::to_string(j));
        }
    }
    m.bias = parse_double(detail::expect_field(detail::expect_line(in, "bias"), "bias"));
    if (detail::expect_line(in, "end") != "end") throw Error("load_model: missing end marker");
    return m;
}

} // namespace trajcal
