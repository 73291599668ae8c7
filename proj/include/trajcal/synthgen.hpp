#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajcal/numeric.hpp"
#include "trajcal/rng.hpp"
#include "trajcal/trace.hpp"

namespace trajcal {

// ---------------------------------------------------------------------------
// Chain-of-subgoals generator: every step t carries a reliability p_t, the
// task succeeds only if all subgoals do, so P(success) = prod_t p_t. Token
// confidences mix the step reliability with a latent per-step baseline:
//   r = clamp(leak * p_t + (1 - leak) * u_t + jitter, (0, 1])
// which makes the trajectory features carry a recoverable signal about p_t.
// ---------------------------------------------------------------------------

struct ReliabilityLaw {
    enum class Kind { Constant, Uniform, Beta };
    Kind kind = Kind::Uniform;
    double a = 0.7;   // constant value / uniform lo / beta alpha
    double b = 0.999; // uniform hi / beta beta

    static ReliabilityLaw constant(double v) { return {Kind::Constant, v, v}; }
    static ReliabilityLaw uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
    static ReliabilityLaw beta(double alpha, double beta) { return {Kind::Beta, alpha, beta}; }

    double sample(Rng& rng) const {
        double p = 0.0;
        switch (kind) {
            case Kind::Constant: p = a; break;
            case Kind::Uniform: p = rng.uniform(a, b); break;
            case Kind::Beta: p = rng.beta(a, b); break;
        }
        return std::clamp(p, 1e-6, 1.0);
    }
};

// Placement rule for the last step's reliability, used to force or break the
// "last step is not the weakest" assumption in stress tests.
enum class LastStepRule { None, ForceMax, ForceMin };

struct GenConfig {
    std::size_t n_trajectories = 1000;
    std::size_t steps_min = 2, steps_max = 8;
    std::size_t tokens_min = 5, tokens_max = 40;
    ReliabilityLaw reliability;
    double noise = 0.05; // token jitter scale
    double leak = 0.8;   // coupling of token confidence to p_t, in [0,1]
    std::size_t k = kDefaultTopK;
    std::uint64_t seed = 42;
    LastStepRule last_step_rule = LastStepRule::None;
    std::string id_prefix = "synth";
};

inline void validate_gen_config(const GenConfig& cfg) {
    if (cfg.n_trajectories == 0) throw Error("generate: n_trajectories must be >= 1");
    if (cfg.steps_min < 1 || cfg.steps_min > cfg.steps_max) throw Error("generate: bad steps_range");
    if (cfg.tokens_min < 1 || cfg.tokens_min > cfg.tokens_max) throw Error("generate: bad tokens_range");
    if (cfg.noise < 0.0) throw Error("generate: noise must be >= 0");
    if (cfg.leak < 0.0 || cfg.leak > 1.0) throw Error("generate: leak must be in [0,1]");
    if (cfg.k < 1) throw Error("generate: k must be >= 1");
    if (cfg.reliability.kind == ReliabilityLaw::Kind::Uniform &&
        (cfg.reliability.a <= 0.0 || cfg.reliability.b > 1.0 || cfg.reliability.a > cfg.reliability.b)) {
        throw Error("generate: uniform reliability bounds must satisfy 0 < lo <= hi <= 1");
    }
    if (cfg.reliability.kind == ReliabilityLaw::Kind::Constant &&
        (cfg.reliability.a <= 0.0 || cfg.reliability.a > 1.0)) {
        throw Error("generate: constant reliability must be in (0,1]");
    }
    if (cfg.reliability.kind == ReliabilityLaw::Kind::Beta &&
        (cfg.reliability.a <= 0.0 || cfg.reliability.b <= 0.0)) {
        throw Error("generate: beta reliability parameters must be positive");
    }
}

struct SyntheticRecord {
    Trajectory trajectory;                  // label filled
    double true_success_prob = 0.0;         // prod_t p_t
    std::vector<double> step_reliabilities; // p_t
};

/// Generator-side oracle: P(Y=1 | trajectory) = prod_t p_t.
inline double bayes_optimal_confidence(const SyntheticRecord& r) { return r.true_success_prob; }

inline SyntheticRecord generate_one(const GenConfig& cfg, std::size_t index) {
    // Counter-based sub-stream: record i is identical whether generated
    // alone, sequentially, or in parallel.
    Rng rng(mix_seed(cfg.seed, index));

    SyntheticRecord rec;
    const std::size_t S = static_cast<std::size_t>(rng.uniform_int(cfg.steps_min, cfg.steps_max));
    rec.step_reliabilities.reserve(S);
    for (std::size_t t = 0; t < S; ++t) {
        rec.step_reliabilities.push_back(cfg.reliability.sample(rng));
    }
    auto& ps = rec.step_reliabilities;
    if (cfg.last_step_rule == LastStepRule::ForceMax) {
        std::swap(*std::max_element(ps.begin(), ps.end()), ps.back());
    } else if (cfg.last_step_rule == LastStepRule::ForceMin) {
        std::swap(*std::min_element(ps.begin(), ps.end()), ps.back());
    }

    rec.true_success_prob = 1.0;
    for (double p : ps) rec.true_success_prob *= p;

    Trajectory& traj = rec.trajectory;
    traj.id = cfg.id_prefix + "-" + std::to_string(cfg.seed) + "-" + std::to_string(index);
    traj.steps.reserve(S);
    for (std::size_t t = 0; t < S; ++t) {
        const double u = rng.uniform(0.2, 0.95); // latent per-step baseline
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(cfg.tokens_min, cfg.tokens_max));
        Step step;
        step.tokens.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double jitter = cfg.noise > 0.0 ? rng.normal() * cfg.noise : 0.0;
            const double raw = cfg.leak * ps[t] + (1.0 - cfg.leak) * u + jitter;
            TokenConfidence tok;
            tok.top1 = std::clamp(raw, 1e-6, 1.0);
            tok.topk.reserve(cfg.k);
            tok.topk.push_back(tok.top1);
            for (std::size_t j = 1; j < cfg.k; ++j) {
                tok.topk.push_back(tok.top1 * std::max(rng.uniform(), 1e-9));
            }
            std::sort(tok.topk.begin() + 1, tok.topk.end(), std::greater<double>());
            step.tokens.push_back(std::move(tok));
        }
        traj.steps.push_back(std::move(step));
    }
    traj.label = rng.bernoulli(rec.true_success_prob) ? 1 : 0;
    return rec;
}

inline std::vector<SyntheticRecord> generate(const GenConfig& cfg) {
    validate_gen_config(cfg);
    std::vector<SyntheticRecord> out;
    out.reserve(cfg.n_trajectories);
    for (std::size_t i = 0; i < cfg.n_trajectories; ++i) {
        out.push_back(generate_one(cfg, i));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config file and sidecar formats
// ---------------------------------------------------------------------------

inline GenConfig gen_config_from_json(const nlohmann::json& j) {
    GenConfig cfg;
    cfg.n_trajectories = j.at("n_trajectories").get<std::size_t>();
    const auto steps = j.at("steps_range").get<std::vector<std::size_t>>();
    const auto tokens = j.at("tokens_range").get<std::vector<std::size_t>>();
    if (steps.size() != 2 || tokens.size() != 2) {
        throw Error("gen config: steps_range and tokens_range must be [min, max]");
    }
    cfg.steps_min = steps[0];
    cfg.steps_max = steps[1];
    cfg.tokens_min = tokens[0];
    cfg.tokens_max = tokens[1];

    const auto& law = j.at("reliability_law");
    const std::string kind = law.at("kind").get<std::string>();
    if (kind == "constant") {
        cfg.reliability = ReliabilityLaw::constant(law.at("value").get<double>());
    } else if (kind == "uniform") {
        cfg.reliability = ReliabilityLaw::uniform(law.at("lo").get<double>(), law.at("hi").get<double>());
    } else if (kind == "beta") {
        cfg.reliability = ReliabilityLaw::beta(law.at("alpha").get<double>(), law.at("beta").get<double>());
    } else {
        throw Error("gen config: unknown reliability_law kind '" + kind + "'");
    }

    cfg.noise = j.value("noise", cfg.noise);
    cfg.leak = j.value("leak", cfg.leak);
    cfg.k = j.value("k", cfg.k);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.id_prefix = j.value("id_prefix", cfg.id_prefix);
    const std::string rule = j.value("last_step_rule", "none");
    if (rule == "none") cfg.last_step_rule = LastStepRule::None;
    else if (rule == "force_max") cfg.last_step_rule = LastStepRule::ForceMax;
    else if (rule == "force_min") cfg.last_step_rule = LastStepRule::ForceMin;
    else throw Error("gen config: unknown last_step_rule '" + rule + "'");
    validate_gen_config(cfg);
    return cfg;
}

/// Sidecar line per record: {"id":..., "true_success_prob":..., "p":[...]}.
inline void write_sidecar(std::ostream& out, const std::vector<SyntheticRecord>& records) {
    for (const auto& rec : records) {
        nlohmann::json j;
        j["id"] = rec.trajectory.id;
        j["true_success_prob"] = rec.true_success_prob;
        j["p"] = rec.step_reliabilities;
        out << j.dump() << '\n';
    }
}

} // namespace trajcal
