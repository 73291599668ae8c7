#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "naive_metrics.hpp"
#include "test_util.hpp"
#include "trajcal/metrics.hpp"
#include "trajcal/rng.hpp"

using namespace trajcal;

TEST_CASE("ece: perfect, single-bin, and fully miscalibrated cases", "[metrics]") {
    CHECK(ece({{1.0, 0.0, 1.0}, {1, 0, 1}}) == 0.0);

    // all confidences 0.8, 4 of 5 positive: acc == conf in the one bin
    CHECK(ece({{0.8, 0.8, 0.8, 0.8, 0.8}, {1, 1, 1, 1, 0}}) == Catch::Approx(0.0).margin(1e-15));

    CHECK(ece({{0.9, 0.9, 0.9}, {0, 0, 0}}) == Catch::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("brier: hand values", "[metrics]") {
    CHECK(brier({{0.5, 0.5}, {1, 0}}) == Catch::Approx(0.25));
    CHECK(brier({{1.0, 0.0}, {1, 0}}) == 0.0);
    CHECK(brier({{0.8}, {0}}) == Catch::Approx(0.64).epsilon(1e-12));
}

TEST_CASE("auroc: separation, ties, and the worked pairwise example", "[metrics]") {
    CHECK(auroc({{0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}}) == 1.0);
    CHECK(auroc({{0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}}) == 0.5);
    // pairs: (0.9,0.1) win, (0.9,0.8) win, (0.2,0.1) win, (0.2,0.8) loss
    CHECK(auroc({{0.9, 0.1, 0.8, 0.2}, {1, 0, 0, 1}}) == Catch::Approx(0.75).epsilon(1e-15));
    CHECK_THROWS_AS(auroc({{0.2, 0.4}, {1, 1}}), Error);
}

TEST_CASE("reliability bins: counts, ece identity, uniform spread", "[metrics]") {
    const PredictionSet one_bin{{0.31, 0.33, 0.39}, {1, 0, 1}};
    const ReliabilityBins rb = reliability_bins(one_bin, 10);
    std::size_t nonzero = 0, total = 0;
    for (const auto& b : rb.bins) {
        if (b.count > 0) ++nonzero;
        total += b.count;
    }
    CHECK(nonzero == 1);
    CHECK(total == 3);

    Rng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        const auto p = testutil::random_predictions(rng);
        const PredictionSet set{p.confidences, p.labels};
        const ReliabilityBins bins = reliability_bins(set, 10);
        double recon = 0.0;
        for (const auto& b : bins.bins) {
            if (b.count == 0) continue;
            recon += (double(b.count) / double(bins.n)) * std::abs(b.accuracy - b.mean_confidence);
        }
        CHECK_THAT(recon, Catch::Matchers::WithinAbs(ece(set, 10), 1e-15));
    }

    // confidences placed at bin centers: 100 per bin exactly
    PredictionSet uniform;
    for (int b = 0; b < 10; ++b) {
        for (int i = 0; i < 100; ++i) {
            uniform.confidences.push_back(b / 10.0 + 0.05);
            uniform.labels.push_back(i % 2);
        }
    }
    const ReliabilityBins ub = reliability_bins(uniform, 10);
    for (const auto& b : ub.bins) CHECK(b.count == 100);
}

TEST_CASE("bin boundaries: right-open except the top bin", "[metrics]") {
    for (std::size_t M : {1u, 2u, 3u, 7u, 10u, 16u}) {
        for (std::size_t m = 0; m <= M; ++m) {
            const double edge = double(m) / double(M);
            const std::size_t idx = bin_index(edge, M);
            const std::size_t expect = m == M ? M - 1 : m; // c = 1.0 joins the top bin
            CHECK(idx == expect);
        }
        // every confidence lands in exactly one bin by construction; check
        // the edge from below as well
        for (std::size_t m = 1; m < M; ++m) {
            const double just_below = std::nextafter(double(m) / double(M), 0.0);
            CHECK(bin_index(just_below, M) == m - 1);
        }
    }
}

TEST_CASE("metrics match brute-force references on random sets", "[metrics]") {
    Rng rng(555);
    for (int rep = 0; rep < 500; ++rep) {
        const auto p = testutil::random_predictions(rng, 200);
        const PredictionSet set{p.confidences, p.labels};
        REQUIRE_THAT(ece(set, 10), Catch::Matchers::WithinAbs(naive::naive_ece(p.confidences, p.labels, 10), 1e-12));
        REQUIRE_THAT(brier(set), Catch::Matchers::WithinAbs(naive::naive_brier(p.confidences, p.labels), 1e-12));
        REQUIRE_THAT(auroc(set), Catch::Matchers::WithinAbs(naive::naive_auroc(p.confidences, p.labels), 1e-12));
    }
}

TEST_CASE("auroc is invariant under strictly increasing transforms", "[metrics]") {
    Rng rng(808);
    for (int rep = 0; rep < 30; ++rep) {
        const auto p = testutil::random_predictions(rng, 60);
        PredictionSet set{p.confidences, p.labels};
        const double base = auroc(set);

        PredictionSet squashed = set;
        for (double& c : squashed.confidences) {
            c = sigmoid(logit(std::clamp(c, 1e-6, 1.0 - 1e-6)) / 2.5);
        }
        CHECK_THAT(auroc(squashed), Catch::Matchers::WithinAbs(base, 1e-12));

        PredictionSet powed = set;
        for (double& c : powed.confidences) c = std::pow(c, 3.0);
        CHECK_THAT(auroc(powed), Catch::Matchers::WithinAbs(base, 1e-12));
    }
}

TEST_CASE("evaluate: report fields and json round-trip", "[metrics]") {
    const PredictionSet set{{0.9, 0.2, 0.7, 0.4}, {1, 0, 1, 0}};
    const EvalReport r = evaluate(set, 10);
    CHECK(r.n == 4);
    CHECK(r.ece >= 0.0);
    CHECK(r.ece <= 1.0);
    CHECK(r.brier >= 0.0);
    CHECK(r.brier <= 1.0);
    CHECK(r.auroc == 1.0);

    const EvalReport back = eval_report_from_json(eval_report_to_json(r));
    CHECK(back.ece == r.ece);
    CHECK(back.brier == r.brier);
    CHECK(back.auroc == r.auroc);
    CHECK(back.bins.bins.size() == r.bins.bins.size());
}

TEST_CASE("prediction set validation", "[metrics]") {
    CHECK_THROWS_AS(brier({{}, {}}), Error);
    CHECK_THROWS_AS(brier({{0.5}, {1, 0}}), Error);
    CHECK_THROWS_AS(brier({{1.5}, {1}}), Error);
    CHECK_THROWS_AS(brier({{0.5}, {2}}), Error);
}
