#pragma once

#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trajcal/numeric.hpp"

namespace trajcal {

// ---------------------------------------------------------------------------
// Data model: per-token confidence, per-step token list, whole trajectory.
// Confidences are probabilities in (0,1]; log-probability input is converted
// at ingestion. Values are immutable after construction by convention.
// ---------------------------------------------------------------------------

struct TokenConfidence {
    double top1 = 0.0;
    std::vector<double> topk; // non-increasing, topk[0] == top1
};

struct Step {
    std::vector<TokenConfidence> tokens; // n_t >= 1
};

struct Trajectory {
    std::string id;
    std::vector<Step> steps;                 // S >= 1
    std::optional<int> label;                // 0 or 1 when present
    std::map<std::string, std::string> meta; // dataset name, model name, ...
};

// ---------------------------------------------------------------------------
// Validation — violations are reported, not thrown.
// ---------------------------------------------------------------------------

struct ValidationResult {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

inline ValidationResult validate_trajectory(const Trajectory& t) {
    ValidationResult r;
    auto add = [&r](std::string msg) { r.violations.push_back(std::move(msg)); };

    if (t.steps.empty()) add("trajectory has no steps");
    if (t.label && *t.label != 0 && *t.label != 1) {
        add("label must be 0 or 1, got " + std::to_string(*t.label));
    }
    for (std::size_t s = 0; s < t.steps.size(); ++s) {
        const auto& step = t.steps[s];
        const std::string where = "step " + std::to_string(s);
        if (step.tokens.empty()) {
            add("empty step: " + where);
            continue;
        }
        for (std::size_t i = 0; i < step.tokens.size(); ++i) {
            const auto& tok = step.tokens[i];
            const std::string tok_where = where + " token " + std::to_string(i);
            auto in_unit = [](double v) { return v > 0.0 && v <= 1.0 && std::isfinite(v); };
            if (!in_unit(tok.top1)) {
                add("top1 out of (0,1]: " + tok_where + " value " + format_double(tok.top1));
            }
            if (tok.topk.empty()) {
                add("empty topk list: " + tok_where);
                continue;
            }
            if (tok.topk.front() != tok.top1) {
                add("topk[0] != top1: " + tok_where);
            }
            for (std::size_t j = 0; j < tok.topk.size(); ++j) {
                if (!in_unit(tok.topk[j])) {
                    add("topk out of (0,1]: " + tok_where + " entry " + std::to_string(j) +
                        " value " + format_double(tok.topk[j]));
                }
                if (j > 0 && tok.topk[j] > tok.topk[j - 1]) {
                    add("topk not non-increasing: " + tok_where + " at entry " + std::to_string(j));
                }
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Log-probability ingestion
// ---------------------------------------------------------------------------

/// One token as (top1 logprob, top-k logprobs). The top-k list may be empty
/// (then only top1 is kept); when present it must start with the top1 value.
using TokenLogprobs = std::pair<double, std::vector<double>>;

inline Trajectory from_logprobs(const std::vector<std::vector<TokenLogprobs>>& step_logprobs,
                                std::size_t k, std::string id = {}) {
    if (k < 1) throw Error("from_logprobs: k must be >= 1");
    Trajectory t;
    t.id = std::move(id);
    t.steps.reserve(step_logprobs.size());
    for (std::size_t s = 0; s < step_logprobs.size(); ++s) {
        const auto& toks = step_logprobs[s];
        if (toks.empty()) {
            throw Error("from_logprobs: empty step " + std::to_string(s));
        }
        Step step;
        step.tokens.reserve(toks.size());
        for (const auto& [lp1, lpk] : toks) {
            if (lp1 > 0.0) {
                throw Error("from_logprobs: positive log-probability " + format_double(lp1) +
                            " in step " + std::to_string(s));
            }
            TokenConfidence tok;
            tok.top1 = std::exp(lp1);
            if (lpk.empty()) {
                tok.topk.push_back(tok.top1);
            } else {
                if (lpk.front() != lp1) {
                    throw Error("from_logprobs: topk list must start with the top1 log-probability");
                }
                const std::size_t keep = std::min(k, lpk.size());
                tok.topk.reserve(keep);
                for (std::size_t j = 0; j < keep; ++j) {
                    if (lpk[j] > 0.0) {
                        throw Error("from_logprobs: positive log-probability " +
                                    format_double(lpk[j]) + " in step " + std::to_string(s));
                    }
                    if (j > 0 && lpk[j] > lpk[j - 1]) {
                        throw Error("from_logprobs: topk log-probabilities not non-increasing in step " +
                                    std::to_string(s));
                    }
                    tok.topk.push_back(std::exp(lpk[j]));
                }
            }
            step.tokens.push_back(std::move(tok));
        }
        t.steps.push_back(std::move(step));
    }
    if (t.steps.empty()) throw Error("from_logprobs: trajectory needs at least one step");
    return t;
}

// ---------------------------------------------------------------------------
// Trace file format: newline-delimited JSON, one trajectory per line.
// First line is the header {"format":"trajcal-trace","version":1,"k":K}.
// Token records carry either probabilities ("top1"/"topk") or log
// probabilities ("top1_lp"/"topk_lp"), converted at parse.
// ---------------------------------------------------------------------------

inline constexpr const char* kTraceFormatTag = "trajcal-trace";
inline constexpr int kTraceFormatVersion = 1;
inline constexpr std::size_t kDefaultTopK = 5;

struct TraceFile {
    std::size_t k = kDefaultTopK;
    std::vector<Trajectory> trajectories;
};

namespace detail {

inline Error parse_error(std::size_t line_no, const std::string& reason) {
    return Error("trace parse error at line " + std::to_string(line_no) + ": " + reason);
}

inline TokenConfidence parse_token(const nlohmann::json& j, std::size_t k, std::size_t line_no) {
    if (!j.is_object()) throw parse_error(line_no, "token record is not an object");
    TokenConfidence tok;
    const bool prob_form = j.contains("top1");
    const bool lp_form = j.contains("top1_lp");
    if (prob_form == lp_form) {
        throw parse_error(line_no, "token record needs exactly one of top1 / top1_lp");
    }
    if (prob_form) {
        tok.top1 = j.at("top1").get<double>();
        if (j.contains("topk")) {
            tok.topk = j.at("topk").get<std::vector<double>>();
        } else {
            tok.topk.push_back(tok.top1);
        }
    } else {
        const double lp1 = j.at("top1_lp").get<double>();
        if (lp1 > 0.0) throw parse_error(line_no, "field top1_lp is positive");
        tok.top1 = std::exp(lp1);
        if (j.contains("topk_lp")) {
            const auto lps = j.at("topk_lp").get<std::vector<double>>();
            if (!lps.empty() && lps.front() != lp1) {
                throw parse_error(line_no, "topk_lp must start with top1_lp");
            }
            for (double lp : lps) {
                if (lp > 0.0) throw parse_error(line_no, "field topk_lp has a positive entry");
                tok.topk.push_back(std::exp(lp));
            }
        }
        if (tok.topk.empty()) tok.topk.push_back(tok.top1);
    }
    if (tok.topk.size() > k) {
        throw parse_error(line_no, "field topk has " + std::to_string(tok.topk.size()) +
                                       " entries, file header allows k=" + std::to_string(k));
    }
    return tok;
}

} // namespace detail

inline TraceFile parse_trace_stream(std::istream& in) {
    TraceFile out;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw detail::parse_error(line_no, std::string("invalid JSON: ") + e.what());
        }

        if (!have_header) {
            if (!j.is_object() || j.value("format", "") != kTraceFormatTag) {
                throw detail::parse_error(line_no, "missing trajcal-trace header line");
            }
            if (j.value("version", 0) != kTraceFormatVersion) {
                throw detail::parse_error(line_no, "unsupported trace format version");
            }
            const long long k = j.value("k", static_cast<long long>(kDefaultTopK));
            if (k < 1) throw detail::parse_error(line_no, "header k must be >= 1");
            out.k = static_cast<std::size_t>(k);
            have_header = true;
            continue;
        }

        Trajectory t;
        try {
            if (!j.is_object()) throw detail::parse_error(line_no, "record is not an object");
            t.id = j.at("id").get<std::string>();
            if (j.contains("label") && !j.at("label").is_null()) {
                t.label = j.at("label").get<int>();
            }
            if (j.contains("meta") && !j.at("meta").is_null()) {
                t.meta = j.at("meta").get<std::map<std::string, std::string>>();
            }
            const auto& steps = j.at("steps");
            if (!steps.is_array()) throw detail::parse_error(line_no, "field steps is not an array");
            for (const auto& js : steps) {
                if (!js.is_array()) throw detail::parse_error(line_no, "step is not an array");
                Step step;
                for (const auto& jt : js) {
                    step.tokens.push_back(detail::parse_token(jt, out.k, line_no));
                }
                t.steps.push_back(std::move(step));
            }
        } catch (const nlohmann::json::exception& e) {
            throw detail::parse_error(line_no, std::string("bad record: ") + e.what());
        }

        const auto check = validate_trajectory(t);
        if (!check.ok()) {
            throw detail::parse_error(line_no, check.violations.front());
        }
        out.trajectories.push_back(std::move(t));
    }
    return out;
}

inline TraceFile parse_trace_string(const std::string& bytes) {
    std::istringstream in(bytes);
    return parse_trace_stream(in);
}

inline nlohmann::json trajectory_to_json(const Trajectory& t) {
    nlohmann::json j;
    j["id"] = t.id;
    if (t.label) j["label"] = *t.label;
    if (!t.meta.empty()) j["meta"] = t.meta;
    auto steps = nlohmann::json::array();
    for (const auto& step : t.steps) {
        auto js = nlohmann::json::array();
        for (const auto& tok : step.tokens) {
            js.push_back({{"top1", tok.top1}, {"topk", tok.topk}});
        }
        steps.push_back(std::move(js));
    }
    j["steps"] = std::move(steps);
    return j;
}

inline void serialize_trace_stream(std::ostream& out, const TraceFile& file) {
    nlohmann::json header;
    header["format"] = kTraceFormatTag;
    header["version"] = kTraceFormatVersion;
    header["k"] = file.k;
    out << header.dump() << '\n';
    for (const auto& t : file.trajectories) {
        out << trajectory_to_json(t).dump() << '\n';
    }
}

inline std::string serialize_trace_string(const TraceFile& file) {
    std::ostringstream out;
    serialize_trace_stream(out, file);
    return out.str();
}

} // namespace trajcal
