// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorasim/config.hpp"

namespace lorasim {

using nlohmann::json;

/// Thrown with every field-level problem found while loading a config.
class ConfigLoadError : public std::runtime_error {
public:
    explicit ConfigLoadError(std::vector<ConfigError> errors)
        : std::runtime_error(format(errors)), errors_(std::move(errors)) {}
    const std::vector<ConfigError>& errors() const { return errors_; }

    static std::string format(const std::vector<ConfigError>& errs) {
        std::string s;
        for (const auto& e : errs) s += e.path + ": " + e.message + "\n";
        return s;
    }

private:
    std::vector<ConfigError> errors_;
};

inline const char* to_string(SchedulerPolicy p) {
    switch (p) {
        case SchedulerPolicy::FIFO: return "fifo";
        case SchedulerPolicy::SJF: return "sjf";
        case SchedulerPolicy::MLQ: return "mlq";
    }
    return "?";
}

inline const char* to_string(CachePolicy p) {
    switch (p) {
        case CachePolicy::NoCache: return "none";
        case CachePolicy::LRU: return "lru";
        case CachePolicy::FairShare: return "fairshare";
        case CachePolicy::CostAware: return "cost-aware";
    }
    return "?";
}

inline const char* to_string(PrefetchMode m) {
    switch (m) {
        case PrefetchMode::Off: return "off";
        case PrefetchMode::QueueDriven: return "queue";
        case PrefetchMode::Histogram: return "histogram";
    }
    return "?";
}

inline const char* to_string(ErrorKernel k) { return k == ErrorKernel::AdjacentBucket ? "adjacent" : "uniform"; }
inline const char* to_string(TbtPooling p) { return p == TbtPooling::Pooled ? "pooled" : "per-request-max"; }

inline std::optional<SchedulerPolicy> parse_scheduler_policy(const std::string& s) {
    if (s == "fifo") return SchedulerPolicy::FIFO;
    if (s == "sjf") return SchedulerPolicy::SJF;
    if (s == "mlq") return SchedulerPolicy::MLQ;
    return std::nullopt;
}

inline std::optional<CachePolicy> parse_cache_policy(const std::string& s) {
    if (s == "none") return CachePolicy::NoCache;
    if (s == "lru") return CachePolicy::LRU;
    if (s == "fairshare") return CachePolicy::FairShare;
    if (s == "cost-aware") return CachePolicy::CostAware;
    return std::nullopt;
}

inline std::optional<PrefetchMode> parse_prefetch(const std::string& s) {
    if (s == "off") return PrefetchMode::Off;
    if (s == "queue") return PrefetchMode::QueueDriven;
    if (s == "histogram") return PrefetchMode::Histogram;
    return std::nullopt;
}

namespace detail {

// Walks one JSON object, reporting unknown keys and type mismatches by path.
class Reader {
public:
    Reader(const json& j, std::string path, std::vector<ConfigError>& errs) : j_(j), path_(std::move(path)), errs_(errs) {
        if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "must be an object");
    }

    ~Reader() {
        if (!j_.is_object()) return;
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) fail(at(k), "unknown field");
    }

    bool has(const std::string& k) {
        seen_.insert(k);
        return j_.is_object() && j_.contains(k) && !j_.at(k).is_null();
    }

    template <class T>
    void get(const std::string& k, T& out) {
        if (!has(k)) return;
        const auto& v = j_.at(k);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) return fail(at(k), "expected a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) return fail(at(k), "expected an integer");
            if constexpr (std::is_unsigned_v<T>)
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                    return fail(at(k), "must be non-negative");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) return fail(at(k), "expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) return fail(at(k), "expected a string");
        }
        out = v.get<T>();
    }

    template <class T>
    void get_list(const std::string& k, std::vector<T>& out) {
        if (!has(k)) return;
        const auto& v = j_.at(k);
        if (!v.is_array()) return fail(at(k), "expected an array");
        std::vector<T> tmp;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto& e = v[i];
            const bool ok = std::is_integral_v<T> ? e.is_number_integer() : e.is_number();
            if (!ok) return fail(at(k) + "[" + std::to_string(i) + "]", "expected a number");
            tmp.push_back(e.get<T>());
        }
        out = std::move(tmp);
    }

    // Seconds or milliseconds as a real number, stored as whole microseconds.
    void get_duration(const std::string& k, Duration& out, double us_per_unit) {
        double v = 0;
        if (!has(k)) return;
        if (!j_.at(k).is_number()) return fail(at(k), "expected a number");
        v = j_.at(k).get<double>();
        out = Duration{static_cast<std::int64_t>(std::llround(v * us_per_unit))};
    }

    void get_duration(const std::string& k, std::optional<Duration>& out, double us_per_unit) {
        if (!has(k)) return;
        Duration d{};
        get_duration(k, d, us_per_unit);
        out = d;
    }

    void get_nanos(const std::string& k, Nanos& out) {
        if (!has(k)) return;
        if (!j_.at(k).is_number_integer()) return fail(at(k), "expected an integer");
        out = Nanos{j_.at(k).get<std::int64_t>()};
    }

    template <class E>
    void get_enum(const std::string& k, E& out, std::optional<E> (*parse)(const std::string&)) {
        std::string s;
        if (!has(k)) return;
        if (!j_.at(k).is_string()) return fail(at(k), "expected a string");
        s = j_.at(k).get<std::string>();
        if (auto e = parse(s)) out = *e;
        else fail(at(k), "unknown value '" + s + "'");
    }

    const json* child(const std::string& k) {
        if (!has(k)) return nullptr;
        return &j_.at(k);
    }

    std::string at(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
    void fail(std::string p, std::string m) { errs_.push_back({std::move(p), std::move(m)}); }

private:
    const json& j_;
    std::string path_;
    std::vector<ConfigError>& errs_;
    std::set<std::string> seen_;
};

inline std::optional<ErrorKernel> parse_kernel(const std::string& s) {
    if (s == "adjacent") return ErrorKernel::AdjacentBucket;
    if (s == "uniform") return ErrorKernel::UniformBucket;
    return std::nullopt;
}

inline std::optional<TbtPooling> parse_pooling(const std::string& s) {
    if (s == "pooled") return TbtPooling::Pooled;
    if (s == "per-request-max") return TbtPooling::PerRequestMax;
    return std::nullopt;
}

inline void read_length(const json& j, const std::string& path, LengthDistribution& d, std::vector<ConfigError>& errs) {
    Reader r(j, path, errs);
    r.get("median", d.median);
    r.get("sigma", d.sigma);
    r.get("min", d.min);
    r.get("max", d.max);
}

}  // namespace detail

/// Overlays a JSON document on `base`. Absent fields keep their defaults.
inline SimConfig config_from_json(const json& j, SimConfig c = {}) {
    std::vector<ConfigError> errs;
    {
        detail::Reader root(j, "", errs);
        root.get("seed", c.seed);
        root.get("check_invariants", c.check_invariants);
        if (const auto* h = root.child("hardware")) {
            detail::Reader r(*h, "hardware", errs);
            r.get("total_token_slots", c.hardware.total_token_slots);
            r.get("link_bandwidth_bytes_per_sec", c.hardware.link_bandwidth_bytes_per_sec);
            r.get_duration("link_fixed_latency_us", c.hardware.link_fixed_latency, 1.0);
            r.get("kv_bytes_per_token", c.hardware.kv_bytes_per_token);
            r.get("adapter_bytes_per_rank", c.hardware.adapter_bytes_per_rank);
        }
        if (const auto* h = root.child("cost")) {
            detail::Reader r(*h, "cost", errs);
            r.get_nanos("prefill_base_ns", c.cost.prefill_base);
            r.get_nanos("prefill_per_token_ns", c.cost.prefill_per_token);
            r.get_nanos("decode_base_ns", c.cost.decode_base);
            r.get_nanos("decode_per_token_ns", c.cost.decode_per_token);
            r.get_nanos("adapter_per_rank_token_ns", c.cost.adapter_per_rank_token);
        }
        if (const auto* h = root.child("workload")) {
            detail::Reader r(*h, "workload", errs);
            auto& w = c.workload;
            r.get("rps", w.arrival_rate);
            r.get("num_adapters", w.num_adapters);
            r.get_list("ranks", w.ranks);
            r.get("rank_exponent", w.rank_popularity_exponent);
            r.get_duration("duration_s", w.duration, 1e6);
            if (r.has("trace")) {
                std::string t;
                r.get("trace", t);
                w.trace_path = t;
            }
            r.get("rate_scale", w.rate_scale);
            if (const auto* in = r.child("input")) detail::read_length(*in, "workload.input", w.input, errs);
            if (const auto* out = r.child("output")) detail::read_length(*out, "workload.output", w.output, errs);
        }
        if (const auto* h = root.child("predictor")) {
            detail::Reader r(*h, "predictor", errs);
            r.get("accuracy", c.predictor.accuracy);
            r.get_list("bucket_edges", c.predictor.bucket_edges);
            r.get_enum("error_kernel", c.predictor.error_kernel, &detail::parse_kernel);
        }
        if (const auto* h = root.child("scheduler")) {
            detail::Reader r(*h, "scheduler", errs);
            auto& s = c.scheduler;
            r.get_enum("policy", s.policy, &parse_scheduler_policy);
            r.get("weight_input", s.weight_input);
            r.get("weight_output", s.weight_output);
            r.get("weight_adapter", s.weight_adapter);
            r.get("k_max", s.k_max);
            r.get_duration("refresh_s", s.refresh_period, 1e6);
            r.get("max_input", s.max_input);
            r.get("max_output", s.max_output);
            r.get("max_rank", s.max_rank);
            r.get("windowed_normalization", s.windowed_normalization);
            r.get("sjf_aging", s.sjf_aging);
            r.get("bypass", s.bypass);
            r.get("kmeans_stop_ratio", s.kmeans_stop_ratio);
            r.get("token_pool_fraction", s.token_pool_fraction);
            r.get("unbounded_quota", s.unbounded_quota);
            r.get_list("initial_boundaries", s.initial_boundaries);
            r.get_duration("quota_slo_ms", s.quota_slo, 1e3);
            r.get("quota_slo_multiplier", s.quota_slo_multiplier);
        }
        if (const auto* h = root.child("cache")) {
            detail::Reader r(*h, "cache", errs);
            auto& k = c.cache;
            r.get_enum("policy", k.policy, &parse_cache_policy);
            r.get("weight_frequency", k.weight_frequency);
            r.get("weight_recency", k.weight_recency);
            r.get("weight_size", k.weight_size);
            r.get_duration("frequency_window_s", k.frequency_window, 1e6);
            r.get_enum("prefetch", k.prefetch, &parse_prefetch);
            r.get("histogram_top_k", k.histogram_top_k);
            r.get_duration("histogram_window_s", k.histogram_window, 1e6);
            r.get("histogram_depth", k.histogram_depth);
            if (r.has("idle_capacity_tokens")) {
                std::int64_t v = 0;
                r.get("idle_capacity_tokens", v);
                k.idle_capacity_tokens = v;
            }
        }
        if (const auto* h = root.child("slo")) {
            detail::Reader r(*h, "slo", errs);
            r.get("multiplier", c.slo.slo_multiplier);
            r.get_duration("ttft_ms", c.slo.ttft_slo, 1e3);
            r.get_duration("tbt_ms", c.slo.tbt_slo, 1e3);
            r.get("calibration_fraction", c.slo.calibration_fraction);
        }
        if (const auto* h = root.child("metrics")) {
            detail::Reader r(*h, "metrics", errs);
            r.get("warmup_fraction", c.metrics.warmup_fraction);
            r.get_enum("tbt_pooling", c.metrics.tbt_pooling, &detail::parse_pooling);
            r.get("squash_alert_threshold", c.metrics.squash_alert_threshold);
        }
    }
    if (!errs.empty()) throw ConfigLoadError(std::move(errs));
    return c;
}

inline json config_to_json(const SimConfig& c) {
    auto ms = [](Duration d) { return static_cast<double>(d.count()) / 1e3; };
    auto secs = [](Duration d) { return static_cast<double>(d.count()) / 1e6; };
    auto len = [](const LengthDistribution& d) {
        return json{{"median", d.median}, {"sigma", d.sigma}, {"min", d.min}, {"max", d.max}};
    };
    json j;
    j["seed"] = c.seed;
    j["check_invariants"] = c.check_invariants;
    j["hardware"] = {{"total_token_slots", c.hardware.total_token_slots},
                     {"link_bandwidth_bytes_per_sec", c.hardware.link_bandwidth_bytes_per_sec},
                     {"link_fixed_latency_us", c.hardware.link_fixed_latency.count()},
                     {"kv_bytes_per_token", c.hardware.kv_bytes_per_token},
                     {"adapter_bytes_per_rank", c.hardware.adapter_bytes_per_rank}};
    j["cost"] = {{"prefill_base_ns", c.cost.prefill_base.count()},
                 {"prefill_per_token_ns", c.cost.prefill_per_token.count()},
                 {"decode_base_ns", c.cost.decode_base.count()},
                 {"decode_per_token_ns", c.cost.decode_per_token.count()},
                 {"adapter_per_rank_token_ns", c.cost.adapter_per_rank_token.count()}};
    const auto& w = c.workload;
    j["workload"] = {{"rps", w.arrival_rate},
                     {"num_adapters", w.num_adapters},
                     {"ranks", w.ranks},
                     {"rank_exponent", w.rank_popularity_exponent},
                     {"duration_s", secs(w.duration)},
                     {"rate_scale", w.rate_scale},
                     {"input", len(w.input)},
                     {"output", len(w.output)}};
    if (w.trace_path) j["workload"]["trace"] = *w.trace_path;
    j["predictor"] = {{"accuracy", c.predictor.accuracy},
                      {"bucket_edges", c.predictor.bucket_edges},
                      {"error_kernel", to_string(c.predictor.error_kernel)}};
    const auto& s = c.scheduler;
    j["scheduler"] = {{"policy", to_string(s.policy)},
                      {"weight_input", s.weight_input},
                      {"weight_output", s.weight_output},
                      {"weight_adapter", s.weight_adapter},
                      {"k_max", s.k_max},
                      {"refresh_s", secs(s.refresh_period)},
                      {"max_input", s.max_input},
                      {"max_output", s.max_output},
                      {"max_rank", s.max_rank},
                      {"windowed_normalization", s.windowed_normalization},
                      {"sjf_aging", s.sjf_aging},
                      {"bypass", s.bypass},
                      {"kmeans_stop_ratio", s.kmeans_stop_ratio},
                      {"token_pool_fraction", s.token_pool_fraction},
                      {"unbounded_quota", s.unbounded_quota},
                      {"initial_boundaries", s.initial_boundaries},
                      {"quota_slo_multiplier", s.quota_slo_multiplier}};
    if (s.quota_slo) j["scheduler"]["quota_slo_ms"] = ms(*s.quota_slo);
    const auto& k = c.cache;
    j["cache"] = {{"policy", to_string(k.policy)},
                  {"weight_frequency", k.weight_frequency},
                  {"weight_recency", k.weight_recency},
                  {"weight_size", k.weight_size},
                  {"frequency_window_s", secs(k.frequency_window)},
                  {"prefetch", to_string(k.prefetch)},
                  {"histogram_top_k", k.histogram_top_k},
                  {"histogram_window_s", secs(k.histogram_window)},
                  {"histogram_depth", k.histogram_depth}};
    if (k.idle_capacity_tokens) j["cache"]["idle_capacity_tokens"] = *k.idle_capacity_tokens;
    j["slo"] = {{"multiplier", c.slo.slo_multiplier}, {"calibration_fraction", c.slo.calibration_fraction}};
    if (c.slo.ttft_slo) j["slo"]["ttft_ms"] = ms(*c.slo.ttft_slo);
    if (c.slo.tbt_slo) j["slo"]["tbt_ms"] = ms(*c.slo.tbt_slo);
    j["metrics"] = {{"warmup_fraction", c.metrics.warmup_fraction},
                    {"tbt_pooling", to_string(c.metrics.tbt_pooling)},
                    {"squash_alert_threshold", c.metrics.squash_alert_threshold}};
    return j;
}

inline SimConfig load_config_file(const std::string& path, SimConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigLoadError({{"<file>", "cannot open '" + path + "'"}});
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigLoadError({{"<file>", std::string("invalid JSON: ") + e.what()}});
    }
    return config_from_json(j, std::move(base));
}

}  // namespace lorasim
