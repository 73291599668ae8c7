#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "trajcal/rng.hpp"
#include "trajcal/synthgen.hpp"
#include "trajcal/trace.hpp"

using namespace trajcal;

namespace {

const std::string kHeader = R"({"format":"trajcal-trace","version":1,"k":5})";

Trajectory make_trajectory(std::initializer_list<std::initializer_list<double>> steps) {
    Trajectory t;
    t.id = "t";
    for (const auto& step_conf : steps) {
        Step step;
        for (double c : step_conf) {
            step.tokens.push_back({c, {c}});
        }
        t.steps.push_back(step);
    }
    return t;
}

} // namespace

TEST_CASE("parse: one valid record with two steps", "[trace]") {
    const std::string body =
        kHeader + "\n" +
        R"({"id":"a","label":1,"steps":[[{"top1":0.5,"topk":[0.5,0.25]}],[{"top1":0.9}]]})" + "\n";
    const TraceFile file = parse_trace_string(body);
    REQUIRE(file.k == 5);
    REQUIRE(file.trajectories.size() == 1);
    const Trajectory& t = file.trajectories[0];
    CHECK(t.id == "a");
    CHECK(t.label == 1);
    REQUIRE(t.steps.size() == 2);
    CHECK(t.steps[0].tokens[0].topk.size() == 2);
    CHECK(t.steps[1].tokens[0].topk == std::vector<double>{0.9});
}

TEST_CASE("parse: probability out of range names line and field", "[trace]") {
    const std::string body =
        kHeader + "\n" + R"({"id":"a","steps":[[{"top1":1.5}]]})" + "\n";
    try {
        parse_trace_string(body);
        FAIL("expected parse error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("top1") != std::string::npos);
    }
}

TEST_CASE("parse: empty file is an empty list", "[trace]") {
    CHECK(parse_trace_string("").trajectories.empty());
    CHECK(parse_trace_string(kHeader + "\n").trajectories.empty());
}

TEST_CASE("parse: missing header rejected", "[trace]") {
    CHECK_THROWS_AS(parse_trace_string(R"({"id":"a","steps":[[{"top1":0.5}]]})"), Error);
}

TEST_CASE("parse: topk wider than header k rejected", "[trace]") {
    const std::string body = R"({"format":"trajcal-trace","version":1,"k":2})"
        "\n" R"({"id":"a","steps":[[{"top1":0.5,"topk":[0.5,0.4,0.3]}]]})" "\n";
    CHECK_THROWS_AS(parse_trace_string(body), Error);
}

TEST_CASE("parse: 1000-record synthetic file preserves order", "[trace]") {
    GenConfig cfg;
    cfg.n_trajectories = 1000;
    cfg.steps_min = 1;
    cfg.steps_max = 4;
    cfg.tokens_min = 1;
    cfg.tokens_max = 6;
    cfg.seed = 7;
    const auto records = generate(cfg);
    TraceFile file;
    for (const auto& r : records) file.trajectories.push_back(r.trajectory);

    const TraceFile parsed = parse_trace_string(serialize_trace_string(file));
    REQUIRE(parsed.trajectories.size() == 1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        CHECK(parsed.trajectories[i].id == records[i].trajectory.id);
    }
}

TEST_CASE("round-trip: canonical form is byte-stable", "[trace]") {
    Rng rng(11);
    TraceFile file;
    for (int i = 0; i < 20; ++i) {
        Trajectory t = make_trajectory({{0.25, 0.5}, {rng.uniform(0.1, 1.0)}});
        t.id = "case-" + std::to_string(i);
        if (i % 3 == 0) t.label.reset();
        if (i % 4 == 0) t.meta["dataset"] = "demo";
        file.trajectories.push_back(t);
    }
    const std::string once = serialize_trace_string(file);
    const std::string twice = serialize_trace_string(parse_trace_string(once));
    CHECK(once == twice);
}

TEST_CASE("from_logprobs: exp conversion", "[trace]") {
    const Trajectory t = from_logprobs({{{0.0, {}}, {-0.6931471805599453, {}}}}, 5);
    REQUIRE(t.steps.size() == 1);
    CHECK(t.steps[0].tokens[0].top1 == 1.0);
    CHECK(t.steps[0].tokens[1].top1 == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("from_logprobs: topk stays non-increasing and truncates at k", "[trace]") {
    const Trajectory t = from_logprobs({{{-0.1, {-0.1, -0.5, -2.0, -3.0}}}}, 3);
    const auto& topk = t.steps[0].tokens[0].topk;
    REQUIRE(topk.size() == 3);
    for (std::size_t i = 1; i < topk.size(); ++i) CHECK(topk[i] <= topk[i - 1]);
    CHECK(topk[0] == t.steps[0].tokens[0].top1);
}

TEST_CASE("from_logprobs: rejects positive logprob and empty step", "[trace]") {
    CHECK_THROWS_AS(from_logprobs({{{0.5, {}}}}, 5), Error);
    CHECK_THROWS_AS(from_logprobs({{}}, 5), Error);
}

TEST_CASE("from_logprobs round-trips through log", "[trace]") {
    Rng rng(3);
    std::vector<std::vector<TokenLogprobs>> lps(3);
    for (auto& step : lps) {
        for (int i = 0; i < 8; ++i) {
            const double c = rng.uniform(1e-4, 1.0);
            step.push_back({std::log(c), {}});
        }
    }
    const Trajectory t = from_logprobs(lps, 5);
    for (std::size_t s = 0; s < lps.size(); ++s) {
        for (std::size_t i = 0; i < lps[s].size(); ++i) {
            CHECK(std::abs(std::log(t.steps[s].tokens[i].top1) - lps[s][i].first) < 1e-12);
        }
    }
}

TEST_CASE("validate: reports specific violations", "[trace]") {
    CHECK(validate_trajectory(make_trajectory({{0.2, 0.4}, {0.9}, {0.5}})).ok());

    Trajectory empty_step = make_trajectory({{0.5}});
    empty_step.steps.push_back(Step{});
    const auto r1 = validate_trajectory(empty_step);
    REQUIRE_FALSE(r1.ok());
    CHECK(r1.violations[0].find("empty step") != std::string::npos);

    Trajectory bad_order = make_trajectory({{0.3}});
    bad_order.steps[0].tokens[0].topk = {0.3, 0.5};
    const auto r2 = validate_trajectory(bad_order);
    REQUIRE_FALSE(r2.ok());
    CHECK(r2.violations[0].find("non-increasing") != std::string::npos);
}
