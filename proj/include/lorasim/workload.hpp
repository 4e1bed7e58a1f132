// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lorasim/config.hpp"
#include "lorasim/model.hpp"

namespace lorasim {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// mt19937_64 with distribution transforms written out so that sampled
/// values do not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t seed, std::uint64_t stream) : engine_(splitmix64(seed ^ splitmix64(stream))) {}

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    std::size_t index(std::size_t n) {
        auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

    double normal() {
        if (spare_) {
            spare_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        cached_ = r * std::sin(2.0 * std::numbers::pi * u2);
        spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    bool spare_ = false;
    double cached_ = 0.0;
};

// Stream tags so that changing one aspect of the workload leaves the others intact.
inline constexpr std::uint64_t kArrivalStream = 1;
inline constexpr std::uint64_t kLengthStream = 2;
inline constexpr std::uint64_t kAdapterStream = 3;
inline constexpr std::uint64_t kPredictorStream = 4;

/// P(rank at popularity index i) = i^-s / sum_j j^-s, index 1 being the smallest rank.
inline std::vector<double> rank_probabilities(std::size_t num_ranks, double exponent) {
    std::vector<double> p(num_ranks);
    double total = 0.0;
    for (std::size_t i = 0; i < num_ranks; ++i) {
        p[i] = std::pow(static_cast<double>(i + 1), -exponent);
        total += p[i];
    }
    for (auto& v : p) v /= total;
    return p;
}

/// Power-law rank choice followed by a uniform choice within the rank.
/// The catalog must list its ranks in ascending popularity-index order.
inline AdapterId assign_adapter(Rng& rng, const AdapterCatalog& catalog, double exponent) {
    const auto probs = rank_probabilities(catalog.ranks().size(), exponent);
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t rank_index = probs.size() - 1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) {
            rank_index = i;
            break;
        }
    }
    return catalog.adapter_for(rank_index, rng.index(catalog.per_rank()));
}

inline std::int64_t sample_length(Rng& rng, const LengthDistribution& d) {
    const double v = std::exp(std::log(d.median) + d.sigma * rng.normal());
    auto n = static_cast<std::int64_t>(std::llround(v));
    return std::clamp(n, d.min, d.max);
}

/// Poisson arrivals over [0, duration) with log-normal input/output lengths.
inline std::vector<RequestSpec> generate_arrivals(const WorkloadConfig& cfg, const AdapterCatalog& catalog,
                                                  std::uint64_t seed) {
    Rng gaps(seed, kArrivalStream);
    Rng lengths(seed, kLengthStream);
    Rng adapters(seed, kAdapterStream);
    std::vector<RequestSpec> out;
    const std::int64_t horizon = to_us(cfg.duration);
    std::int64_t t = 0;
    while (true) {
        auto gap = static_cast<std::int64_t>(std::llround(gaps.exponential(cfg.arrival_rate) * 1e6));
        if (gap < 1) gap = 1;  // keep arrival times strictly increasing
        t += gap;
        if (t >= horizon) break;
        RequestSpec r;
        r.id = RequestId{out.size()};
        r.arrival = at_us(t);
        r.input_tokens = sample_length(lengths, cfg.input);
        r.actual_output_tokens = sample_length(lengths, cfg.output);
        r.adapter = assign_adapter(adapters, catalog, cfg.rank_popularity_exponent);
        out.push_back(r);
    }
    return out;
}

class TraceError : public std::runtime_error {
public:
    TraceError(std::size_t line, const std::string& msg)
        : std::runtime_error("trace line " + std::to_string(line) + ": " + msg), line_(line) {}
    explicit TraceError(const std::string& msg) : std::runtime_error(msg), line_(0) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline std::int64_t parse_int(const std::string& s, std::size_t line, const char* field) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &pos);
    } catch (const std::exception&) {
        throw TraceError(line, std::string("malformed ") + field);
    }
    if (pos != s.size()) throw TraceError(line, std::string("malformed ") + field);
    return v;
}

inline void rstrip_cr(std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
}

}  // namespace detail

/// Reads a trace in `arrival_ms,input_tokens,output_tokens[,adapter_id]` form.
/// `rate_scale` multiplies the arrival density (2.0 halves every gap).
inline std::vector<RequestSpec> parse_trace(std::istream& in, const AdapterCatalog& catalog, double exponent,
                                            std::uint64_t seed, double rate_scale = 1.0) {
    if (!(rate_scale > 0)) throw std::invalid_argument("rate_scale must be positive");
    std::string line;
    if (!std::getline(in, line)) throw TraceError(1, "missing header");
    detail::rstrip_cr(line);
    bool has_adapter = false;
    if (line == "arrival_ms,input_tokens,output_tokens,adapter_id") has_adapter = true;
    else if (line != "arrival_ms,input_tokens,output_tokens") throw TraceError(1, "unexpected header '" + line + "'");

    Rng adapters(seed, kAdapterStream);
    std::vector<RequestSpec> out;
    std::size_t lineno = 1;
    std::int64_t last_ms = -1;
    std::int64_t last_us = -1;
    while (std::getline(in, line)) {
        ++lineno;
        detail::rstrip_cr(line);
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() != 3 && !(has_adapter && cells.size() == 4))
            throw TraceError(lineno, "expected " + std::to_string(has_adapter ? 4 : 3) + " columns");
        const auto ms = detail::parse_int(cells[0], lineno, "arrival_ms");
        const auto in_tok = detail::parse_int(cells[1], lineno, "input_tokens");
        const auto out_tok = detail::parse_int(cells[2], lineno, "output_tokens");
        if (ms < 0) throw TraceError(lineno, "arrival_ms must be non-negative");
        if (ms < last_ms) throw TraceError(lineno, "arrival_ms is not monotone");
        if (in_tok < 1) throw TraceError(lineno, "input_tokens must be >= 1");
        if (out_tok < 1) throw TraceError(lineno, "output_tokens must be >= 1");
        RequestSpec r;
        r.id = RequestId{out.size()};
        auto us = static_cast<std::int64_t>(std::llround(static_cast<double>(ms) * 1000.0 / rate_scale));
        if (us <= last_us) us = last_us + 1;
        r.arrival = at_us(us);
        r.input_tokens = in_tok;
        r.actual_output_tokens = out_tok;
        if (has_adapter && cells.size() == 4 && !cells[3].empty()) {
            const auto a = detail::parse_int(cells[3], lineno, "adapter_id");
            if (a < 0 || !catalog.contains(AdapterId{static_cast<std::uint32_t>(a)}))
                throw TraceError(lineno, "adapter_id not in catalog");
            r.adapter = AdapterId{static_cast<std::uint32_t>(a)};
        } else {
            r.adapter = assign_adapter(adapters, catalog, exponent);
        }
        out.push_back(r);
        last_ms = ms;
        last_us = us;
    }
    return out;
}

inline std::vector<RequestSpec> load_trace(const std::string& path, const AdapterCatalog& catalog, double exponent,
                                           std::uint64_t seed, double rate_scale = 1.0) {
    std::ifstream in(path);
    if (!in) throw TraceError("cannot open trace '" + path + "'");
    return parse_trace(in, catalog, exponent, seed, rate_scale);
}

inline std::size_t bucket_of(std::int64_t tokens, const std::vector<std::int64_t>& edges) {
    const std::size_t buckets = edges.size() - 1;
    for (std::size_t b = 0; b < buckets; ++b)
        if (tokens < edges[b + 1]) return b;
    return buckets - 1;
}

inline std::int64_t bucket_midpoint(std::size_t bucket, const std::vector<std::int64_t>& edges) {
    return std::max<std::int64_t>(1, (edges[bucket] + edges[bucket + 1]) / 2);
}

/// Stand-in for a learned output-length predictor: returns the true bucket's
/// midpoint with probability `accuracy`, otherwise a wrong bucket's midpoint.
inline std::int64_t predict_output(const RequestSpec& spec, const PredictorConfig& cfg, Rng& rng) {
    const auto& edges = cfg.bucket_edges;
    const std::size_t buckets = edges.size() - 1;
    const std::size_t truth = bucket_of(spec.actual_output_tokens, edges);
    const double u = rng.uniform();
    if (u < cfg.accuracy || buckets == 1) return bucket_midpoint(truth, edges);
    std::size_t wrong = truth;
    if (cfg.error_kernel == ErrorKernel::AdjacentBucket) {
        if (truth == 0) wrong = 1;
        else if (truth == buckets - 1) wrong = truth - 1;
        else wrong = rng.index(2) == 0 ? truth - 1 : truth + 1;
    } else {
        wrong = rng.index(buckets - 1);
        if (wrong >= truth) ++wrong;
    }
    return bucket_midpoint(wrong, edges);
}

}  // namespace lorasim
