#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "test_util.hpp"
#include "trajcal/baselines.hpp"
#include "trajcal/metrics.hpp"
#include "trajcal/rng.hpp"

using namespace trajcal;

namespace {

Trajectory from_top1(std::initializer_list<std::initializer_list<double>> steps) {
    Trajectory t;
    t.id = "t";
    for (const auto& confs : steps) {
        Step step;
        for (double c : confs) step.tokens.push_back({c, {c}});
        t.steps.push_back(step);
    }
    return t;
}

} // namespace

TEST_CASE("last_step_confidence averages the final step", "[baselines]") {
    CHECK(last_step_confidence(from_top1({{0.1}, {0.5, 0.7}})) == Catch::Approx(0.6));
    CHECK(last_step_confidence(from_top1({{0.2}, {0.9}})) == Catch::Approx(0.9));
    const Trajectory single = from_top1({{0.3, 0.4, 0.8}});
    CHECK(last_step_confidence(single) == global_trace_confidence(single));
}

TEST_CASE("global_trace_confidence is the token-weighted mean", "[baselines]") {
    CHECK(global_trace_confidence(from_top1({{0.5, 0.7}, {0.9}})) == Catch::Approx(0.7));
    CHECK(global_trace_confidence(from_top1({{0.4, 0.4}, {0.4}})) == Catch::Approx(0.4));

    Rng rng(12);
    for (int rep = 0; rep < 50; ++rep) {
        const Trajectory t = testutil::random_trajectory(rng, 8, 30);
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& step : t.steps) {
            for (const auto& tok : step.tokens) {
                sum += tok.top1;
                ++n;
            }
        }
        CHECK_THAT(global_trace_confidence(t),
                   Catch::Matchers::WithinAbs(sum / double(n), 1e-12));
    }
}

TEST_CASE("baseline scores stay within the token confidence envelope", "[baselines]") {
    Rng rng(13);
    for (int rep = 0; rep < 50; ++rep) {
        const Trajectory t = testutil::random_trajectory(rng, 6, 20);
        double lo = 1.0, hi = 0.0;
        for (const auto& tok : t.steps.back().tokens) {
            lo = std::min(lo, tok.top1);
            hi = std::max(hi, tok.top1);
        }
        const double last = last_step_confidence(t);
        CHECK(last >= lo - 1e-12);
        CHECK(last <= hi + 1e-12);

        lo = 1.0;
        hi = 0.0;
        for (const auto& step : t.steps) {
            for (const auto& tok : step.tokens) {
                lo = std::min(lo, tok.top1);
                hi = std::max(hi, tok.top1);
            }
        }
        const double global = global_trace_confidence(t);
        CHECK(global >= lo - 1e-12);
        CHECK(global <= hi + 1e-12);
    }
}

TEST_CASE("apply_temperature: identity, fixed point, hand value", "[baselines]") {
    TemperatureModel unit;
    unit.temperature = 1.0;
    Rng rng(14);
    for (int i = 0; i < 100; ++i) {
        const double c = rng.uniform(0.01, 0.99);
        CHECK_THAT(apply_temperature(c, unit), Catch::Matchers::WithinAbs(c, 1e-12));
    }

    TemperatureModel half;
    half.temperature = 2.0;
    CHECK(apply_temperature(0.5, half) == 0.5);
    // logit(0.8) = ln 4, sigma(ln 4 / 2) = 2/3
    CHECK_THAT(apply_temperature(0.8, half), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
}

TEST_CASE("fit_temperature: calibrated data keeps T near one", "[baselines]") {
    Rng rng(15);
    std::vector<double> c;
    std::vector<int> y;
    for (int i = 0; i < 20000; ++i) {
        const double ci = rng.uniform(0.05, 0.95);
        c.push_back(ci);
        y.push_back(rng.bernoulli(ci) ? 1 : 0);
    }
    const TemperatureModel m = fit_temperature(c, y);
    CHECK(m.temperature >= 0.9);
    CHECK(m.temperature <= 1.1);
}

TEST_CASE("fit_temperature: one confident correct sample clamps low", "[baselines]") {
    // log-loss is monotone decreasing in sharpness here, so the lower bound wins.
    // A second opposite-class point keeps the fit defined.
    const TemperatureModel m = fit_temperature({0.6, 0.4}, {1, 0});
    CHECK(m.temperature == 0.05);
}

TEST_CASE("fit_temperature never beats by ranking: AUROC unchanged", "[baselines]") {
    Rng rng(16);
    for (int rep = 0; rep < 30; ++rep) {
        const auto p = testutil::random_predictions(rng, 80);
        const TemperatureModel m = fit_temperature(p.confidences, p.labels);
        PredictionSet raw{p.confidences, p.labels};
        PredictionSet scaled = raw;
        for (double& c : scaled.confidences) c = apply_temperature(c, m);
        CHECK_THAT(auroc(scaled), Catch::Matchers::WithinAbs(auroc(raw), 1e-12));
    }
}

TEST_CASE("fit_temperature is never worse than identity on the fit data", "[baselines]") {
    Rng rng(18);
    for (int rep = 0; rep < 30; ++rep) {
        const auto p = testutil::random_predictions(rng, 120);
        const TemperatureModel m = fit_temperature(p.confidences, p.labels);

        auto log_loss_at = [&](double T) {
            double loss = 0.0;
            for (std::size_t i = 0; i < p.confidences.size(); ++i) {
                const double s = logit(clamp_confidence(p.confidences[i])) / T;
                const double prob = sigmoid(s);
                loss += p.labels[i] == 1 ? -std::log(prob) : -std::log1p(-prob);
            }
            return loss / double(p.confidences.size());
        };
        CHECK(log_loss_at(m.temperature) <= log_loss_at(1.0) + 1e-12);
        CHECK_THAT(m.best_log_loss, Catch::Matchers::WithinAbs(log_loss_at(m.temperature), 1e-9));
    }
}

TEST_CASE("fit_temperature rejects degenerate input", "[baselines]") {
    CHECK_THROWS_AS(fit_temperature({0.5, 0.6}, {1, 1}), Error);
    CHECK_THROWS_AS(fit_temperature({0.5}, {1, 0}), Error);
}

TEST_CASE("parse_verbalized: extraction rules", "[baselines]") {
    CHECK(parse_verbalized("The answer is 42.\nConfidence: 85%") == 0.85);
    CHECK(parse_verbalized("confidence: 100%") == 1.0);
    CHECK_FALSE(parse_verbalized("no statement here").has_value());
    // last occurrence wins
    CHECK(parse_verbalized("confidence: 10% ... final Confidence: 70%") == 0.7);
    CHECK(parse_verbalized("CONFIDENCE:  62.5 %") == 0.625);
    // out-of-scale values clamp into [0,1]
    CHECK(parse_verbalized("confidence: 150%") == 1.0);
}
