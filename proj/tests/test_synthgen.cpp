#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "trajcal/baselines.hpp"
#include "trajcal/metrics.hpp"
#include "trajcal/synthgen.hpp"
#include "trajcal/trace.hpp"

using namespace trajcal;

namespace {

GenConfig small_config(std::uint64_t seed = 42) {
    GenConfig cfg;
    cfg.n_trajectories = 200;
    cfg.steps_min = 2;
    cfg.steps_max = 6;
    cfg.tokens_min = 2;
    cfg.tokens_max = 10;
    cfg.reliability = ReliabilityLaw::uniform(0.6, 0.999);
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("certain reliability law yields certain success", "[synthgen]") {
    GenConfig cfg = small_config();
    cfg.reliability = ReliabilityLaw::constant(1.0);
    for (const auto& rec : generate(cfg)) {
        CHECK(rec.true_success_prob == 1.0);
        CHECK(rec.trajectory.label == 1);
    }
}

TEST_CASE("leak=1, noise=0: tokens equal p_t and last-step optimism shows", "[synthgen]") {
    GenConfig cfg = small_config();
    cfg.leak = 1.0;
    cfg.noise = 0.0;
    cfg.reliability = ReliabilityLaw::constant(0.8);
    for (const auto& rec : generate(cfg)) {
        for (std::size_t s = 0; s < rec.trajectory.steps.size(); ++s) {
            for (const auto& tok : rec.trajectory.steps[s].tokens) {
                CHECK(tok.top1 == Catch::Approx(rec.step_reliabilities[s]).margin(1e-15));
            }
        }
        const double last = last_step_confidence(rec.trajectory);
        CHECK(last == Catch::Approx(0.8).margin(1e-12));
        const double S = double(rec.trajectory.steps.size());
        CHECK(rec.true_success_prob == Catch::Approx(std::pow(0.8, S)).epsilon(1e-12));
        CHECK(rec.true_success_prob <= last + 1e-12);
    }
}

TEST_CASE("generation is seed-deterministic and order-independent", "[synthgen]") {
    const GenConfig cfg = small_config(7);
    const auto a = generate(cfg);
    const auto b = generate(cfg);
    REQUIRE(a.size() == b.size());
    TraceFile fa, fb;
    for (const auto& r : a) fa.trajectories.push_back(r.trajectory);
    for (const auto& r : b) fb.trajectories.push_back(r.trajectory);
    CHECK(serialize_trace_string(fa) == serialize_trace_string(fb));

    // counter-based streams: any record equals its position in the batch
    const auto solo = generate_one(cfg, 123);
    CHECK(solo.trajectory.id == a[123].trajectory.id);
    CHECK(solo.true_success_prob == a[123].true_success_prob);
}

TEST_CASE("chain bound holds on every record", "[synthgen]") {
    for (const auto& rec : generate(small_config(9))) {
        double min_p = 1.0;
        for (double p : rec.step_reliabilities) min_p = std::min(min_p, p);
        CHECK(rec.true_success_prob <= min_p + 1e-15);
        CHECK(min_p <= rec.step_reliabilities.back() + 1e-15);
        CHECK(bayes_optimal_confidence(rec) == rec.true_success_prob);
        CHECK(rec.true_success_prob > 0.0);
    }
}

TEST_CASE("bayes optimal hand values", "[synthgen]") {
    SyntheticRecord rec;
    rec.step_reliabilities = {0.9, 0.9};
    rec.true_success_prob = 0.9 * 0.9;
    CHECK(bayes_optimal_confidence(rec) == Catch::Approx(0.81).epsilon(1e-15));
}

TEST_CASE("oracle confidence is well calibrated at scale", "[synthgen]") {
    GenConfig cfg = small_config(42);
    cfg.n_trajectories = 10000;
    const auto records = generate(cfg);
    PredictionSet p;
    for (const auto& rec : records) {
        p.confidences.push_back(bayes_optimal_confidence(rec));
        p.labels.push_back(*rec.trajectory.label);
    }
    CHECK(ece(p, 10) < 0.03);
}

TEST_CASE("empirical success rate converges to the mean chain probability", "[synthgen]") {
    GenConfig cfg = small_config(11);
    cfg.n_trajectories = 10000;
    const auto records = generate(cfg);
    double mean_p = 0.0, successes = 0.0;
    for (const auto& rec : records) {
        mean_p += rec.true_success_prob;
        successes += *rec.trajectory.label;
    }
    mean_p /= double(records.size());
    const double rate = successes / double(records.size());
    const double se = std::sqrt(mean_p * (1.0 - mean_p) / double(records.size()));
    CHECK(std::abs(rate - mean_p) <= 3.0 * se);
}

TEST_CASE("last-step placement rules", "[synthgen]") {
    GenConfig cfg = small_config(13);
    cfg.last_step_rule = LastStepRule::ForceMax;
    for (const auto& rec : generate(cfg)) {
        for (double p : rec.step_reliabilities) CHECK(rec.step_reliabilities.back() >= p - 1e-15);
    }
    cfg.last_step_rule = LastStepRule::ForceMin;
    for (const auto& rec : generate(cfg)) {
        for (double p : rec.step_reliabilities) CHECK(rec.step_reliabilities.back() <= p + 1e-15);
    }
}

TEST_CASE("generated trajectories validate and respect shape bounds", "[synthgen]") {
    GenConfig cfg = small_config(15);
    cfg.reliability = ReliabilityLaw::beta(8.0, 2.0);
    for (const auto& rec : generate(cfg)) {
        CHECK(validate_trajectory(rec.trajectory).ok());
        CHECK(rec.trajectory.steps.size() >= cfg.steps_min);
        CHECK(rec.trajectory.steps.size() <= cfg.steps_max);
        for (const auto& step : rec.trajectory.steps) {
            CHECK(step.tokens.size() >= cfg.tokens_min);
            CHECK(step.tokens.size() <= cfg.tokens_max);
            for (const auto& tok : step.tokens) CHECK(tok.topk.size() == cfg.k);
        }
    }
}

TEST_CASE("config validation and json parsing", "[synthgen]") {
    GenConfig bad = small_config();
    bad.steps_min = 0;
    CHECK_THROWS_AS(generate(bad), Error);
    bad = small_config();
    bad.leak = 1.5;
    CHECK_THROWS_AS(generate(bad), Error);

    const auto cfg = gen_config_from_json(nlohmann::json::parse(R"({
        "n_trajectories": 10,
        "steps_range": [2, 4],
        "tokens_range": [3, 5],
        "reliability_law": {"kind": "uniform", "lo": 0.7, "hi": 0.95},
        "noise": 0.02,
        "leak": 0.9,
        "seed": 5,
        "last_step_rule": "force_max"
    })"));
    CHECK(cfg.n_trajectories == 10);
    CHECK(cfg.steps_max == 4);
    CHECK(cfg.last_step_rule == LastStepRule::ForceMax);
    CHECK(generate(cfg).size() == 10);
}
