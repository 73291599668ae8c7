#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace trajcal {

/// Base error type for the toolkit; messages carry enough context to act on.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Default regularizer for denominators and log arguments.
inline constexpr double kEpsilon = 1e-8;

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

inline double sigmoid(double s) {
    if (s >= 0.0) {
        return 1.0 / (1.0 + std::exp(-s));
    }
    const double e = std::exp(s);
    return e / (1.0 + e);
}

inline double logit(double p) {
    return std::log(p / (1.0 - p));
}

// log(1 + exp(s)) without overflow.
inline double log1pexp(double s) {
    if (s > 0.0) return s + std::log1p(std::exp(-s));
    return std::log1p(std::exp(s));
}

// ---------------------------------------------------------------------------
// Sequence statistics (population forms throughout)
// ---------------------------------------------------------------------------

inline double mean_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double stddev_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

inline double max_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return *std::max_element(xs.begin(), xs.end());
}

inline double min_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return *std::min_element(xs.begin(), xs.end());
}

// std / (mean + eps); 0 when the set is empty or the denominator vanishes.
inline double coeff_of_variation(std::span<const double> xs, double eps) {
    if (xs.empty()) return 0.0;
    const double den = mean_of(xs) + eps;
    if (den == 0.0) return 0.0;
    return stddev_of(xs) / den;
}

// ---------------------------------------------------------------------------
// Shortest round-trip decimal text for doubles
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw Error("format_double: conversion failed");
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view text) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw Error("parse_double: invalid number '" + std::string(text) + "'");
    }
    return v;
}

inline long long parse_int(std::string_view text) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw Error("parse_int: invalid integer '" + std::string(text) + "'");
    }
    return v;
}

} // namespace trajcal
