// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lorasim/model.hpp"

namespace lorasim {

struct LengthDistribution {
    double median = 600.0;
    double sigma = 0.9;
    std::int64_t min = 8;
    std::int64_t max = 4096;
};

struct WorkloadConfig {
    double arrival_rate = 8.0;  // requests per second
    std::size_t num_adapters = 100;
    std::vector<int> ranks{8, 16, 32, 64, 128};
    double rank_popularity_exponent = 1.0;
    Duration duration = std::chrono::seconds{600};
    std::optional<std::string> trace_path;
    double rate_scale = 1.0;
    LengthDistribution input{600.0, 0.9, 8, 4096};
    LengthDistribution output{120.0, 1.0, 1, 2048};
};

enum class ErrorKernel { AdjacentBucket, UniformBucket };

struct PredictorConfig {
    double accuracy = 0.8;
    // Bucket i covers [edges[i], edges[i+1]).
    std::vector<std::int64_t> bucket_edges{1, 16, 32, 64, 128, 256, 512, 1024, 2049};
    ErrorKernel error_kernel = ErrorKernel::AdjacentBucket;
};

enum class SchedulerPolicy { FIFO, SJF, MLQ };

struct SchedulerConfig {
    SchedulerPolicy policy = SchedulerPolicy::MLQ;
    double weight_input = 0.3;
    double weight_output = 0.5;
    double weight_adapter = 0.2;
    std::size_t k_max = 4;
    Duration refresh_period = std::chrono::seconds{300};
    std::int64_t max_input = 4096;
    std::int64_t max_output = 2048;
    int max_rank = 128;
    bool windowed_normalization = false;
    double sjf_aging = 0.0;  // predicted tokens forgiven per second waited
    bool bypass = true;
    // Stop adding queues once WCSS(K+1)/WCSS(K) exceeds this ratio.
    double kmeans_stop_ratio = 0.5;
    // Fraction of GPU token slots handed to the queue quotas.
    double token_pool_fraction = 1.0;
    bool unbounded_quota = false;
    std::vector<double> initial_boundaries;
    std::optional<Duration> quota_slo;
    double quota_slo_multiplier = 5.0;
};

enum class CachePolicy { NoCache, LRU, FairShare, CostAware };
enum class PrefetchMode { Off, QueueDriven, Histogram };

struct CacheConfig {
    CachePolicy policy = CachePolicy::CostAware;
    double weight_frequency = 0.45;
    double weight_recency = 0.10;
    double weight_size = 0.45;
    Duration frequency_window = std::chrono::seconds{60};
    PrefetchMode prefetch = PrefetchMode::QueueDriven;
    std::size_t histogram_top_k = 8;
    Duration histogram_window = std::chrono::seconds{60};
    std::size_t histogram_depth = 10;
    // Upper bound on tokens held by idle (RC = 0) adapters; unset = all free memory.
    std::optional<std::int64_t> idle_capacity_tokens;
};

enum class TbtPooling { Pooled, PerRequestMax };

struct MetricsConfig {
    double warmup_fraction = 0.05;
    TbtPooling tbt_pooling = TbtPooling::Pooled;
    double squash_alert_threshold = 0.10;
};

struct SimConfig {
    std::uint64_t seed = 1;
    HardwareProfile hardware;
    CostModelParams cost;
    WorkloadConfig workload;
    PredictorConfig predictor;
    SchedulerConfig scheduler;
    CacheConfig cache;
    SLOConfig slo;
    MetricsConfig metrics;
    bool check_invariants = true;
};

struct ConfigError {
    std::string path;
    std::string message;
};

/// Checks every cross-field invariant. An empty result means the config is usable.
inline std::vector<ConfigError> validate_config(const SimConfig& c) {
    std::vector<ConfigError> errs;
    auto fail = [&](std::string path, std::string msg) { errs.push_back({std::move(path), std::move(msg)}); };

    const auto& hw = c.hardware;
    if (hw.total_token_slots <= 0) fail("hardware.total_token_slots", "must be positive");
    if (hw.link_bandwidth_bytes_per_sec <= 0) fail("hardware.link_bandwidth_bytes_per_sec", "must be positive");
    if (hw.link_fixed_latency.count() <= 0) fail("hardware.link_fixed_latency_us", "must be positive");
    if (hw.kv_bytes_per_token <= 0) fail("hardware.kv_bytes_per_token", "must be positive");
    if (hw.adapter_bytes_per_rank <= 0) fail("hardware.adapter_bytes_per_rank", "must be positive");

    const auto& cost = c.cost;
    if (cost.prefill_base.count() < 0) fail("cost.prefill_base_ns", "must be non-negative");
    if (cost.prefill_per_token.count() < 0) fail("cost.prefill_per_token_ns", "must be non-negative");
    if (cost.decode_base.count() < 0) fail("cost.decode_base_ns", "must be non-negative");
    if (cost.decode_per_token.count() < 0) fail("cost.decode_per_token_ns", "must be non-negative");
    if (cost.adapter_per_rank_token.count() < 0) fail("cost.adapter_per_rank_token_ns", "must be non-negative");

    const auto& w = c.workload;
    if (!(w.arrival_rate > 0)) fail("workload.rps", "must be positive");
    if (w.ranks.empty()) fail("workload.ranks", "must not be empty");
    for (std::size_t i = 0; i < w.ranks.size(); ++i)
        if (w.ranks[i] <= 0) fail("workload.ranks[" + std::to_string(i) + "]", "rank must be positive");
    if (w.num_adapters == 0) fail("workload.num_adapters", "must be positive");
    else if (!w.ranks.empty() && w.num_adapters % w.ranks.size() != 0)
        fail("workload.num_adapters", "must be divisible by the number of ranks");
    if (w.rank_popularity_exponent < 0) fail("workload.rank_exponent", "must be non-negative");
    if (w.duration.count() < 0) fail("workload.duration_s", "must be non-negative");
    if (!(w.rate_scale > 0)) fail("workload.rate_scale", "must be positive");
    using NamedLength = std::pair<const char*, const LengthDistribution*>;
    for (const auto& [name, d] : {NamedLength{"workload.input", &w.input}, NamedLength{"workload.output", &w.output}}) {
        if (!(d->median > 0)) fail(std::string(name) + ".median", "must be positive");
        if (d->sigma < 0) fail(std::string(name) + ".sigma", "must be non-negative");
        if (d->min < 1) fail(std::string(name) + ".min", "must be at least 1");
        if (d->max < d->min) fail(std::string(name) + ".max", "must be >= min");
    }

    const auto& p = c.predictor;
    if (!(p.accuracy > 0 && p.accuracy <= 1)) fail("predictor.accuracy", "must be in (0, 1]");
    if (p.bucket_edges.size() < 2) fail("predictor.bucket_edges", "needs at least two edges");
    for (std::size_t i = 1; i < p.bucket_edges.size(); ++i)
        if (p.bucket_edges[i] <= p.bucket_edges[i - 1]) {
            fail("predictor.bucket_edges", "must be strictly ascending");
            break;
        }
    if (!p.bucket_edges.empty() && p.bucket_edges.front() < 1) fail("predictor.bucket_edges", "first edge must be >= 1");
    if (!p.bucket_edges.empty() && w.output.max >= p.bucket_edges.back() && !w.trace_path)
        fail("predictor.bucket_edges", "last edge must exceed workload.output.max");

    const auto& s = c.scheduler;
    if (s.weight_input < 0 || s.weight_output < 0 || s.weight_adapter < 0)
        fail("scheduler.weights", "must be non-negative");
    if (s.k_max < 1) fail("scheduler.k_max", "must be at least 1");
    if (s.refresh_period.count() <= 0) fail("scheduler.refresh_s", "must be positive");
    if (s.max_input <= 0) fail("scheduler.max_input", "must be positive");
    if (s.max_output <= 0) fail("scheduler.max_output", "must be positive");
    if (s.max_rank <= 0) fail("scheduler.max_rank", "must be positive");
    if (s.sjf_aging < 0) fail("scheduler.sjf_aging", "must be non-negative");
    if (!(s.kmeans_stop_ratio > 0 && s.kmeans_stop_ratio <= 1)) fail("scheduler.kmeans_stop_ratio", "must be in (0, 1]");
    if (!(s.token_pool_fraction > 0 && s.token_pool_fraction <= 1))
        fail("scheduler.token_pool_fraction", "must be in (0, 1]");
    for (std::size_t i = 1; i < s.initial_boundaries.size(); ++i)
        if (s.initial_boundaries[i] <= s.initial_boundaries[i - 1]) {
            fail("scheduler.initial_boundaries", "must be strictly ascending");
            break;
        }
    if (s.quota_slo && s.quota_slo->count() <= 0) fail("scheduler.quota_slo_ms", "must be positive");
    if (!(s.quota_slo_multiplier > 0)) fail("scheduler.quota_slo_multiplier", "must be positive");

    const auto& k = c.cache;
    if (k.weight_frequency < 0 || k.weight_recency < 0 || k.weight_size < 0)
        fail("cache.weights", "must be non-negative");
    if (k.frequency_window.count() <= 0) fail("cache.frequency_window_s", "must be positive");
    if (k.histogram_window.count() <= 0) fail("cache.histogram_window_s", "must be positive");
    if (k.histogram_depth == 0) fail("cache.histogram_depth", "must be positive");
    if (k.idle_capacity_tokens && *k.idle_capacity_tokens < 0) fail("cache.idle_capacity_tokens", "must be non-negative");

    if (!(c.slo.slo_multiplier > 1)) fail("slo.multiplier", "must be greater than 1");
    if (c.slo.ttft_slo && c.slo.ttft_slo->count() <= 0) fail("slo.ttft_ms", "must be positive");
    if (c.slo.tbt_slo && c.slo.tbt_slo->count() <= 0) fail("slo.tbt_ms", "must be positive");
    if (!(c.slo.calibration_fraction > 0 && c.slo.calibration_fraction <= 1))
        fail("slo.calibration_fraction", "must be in (0, 1]");

    if (c.metrics.warmup_fraction < 0 || c.metrics.warmup_fraction >= 1)
        fail("metrics.warmup_fraction", "must be in [0, 1)");
    return errs;
}

inline std::int64_t token_pool(const SimConfig& c) {
    return static_cast<std::int64_t>(std::floor(static_cast<double>(c.hardware.total_token_slots) *
                                                 c.scheduler.token_pool_fraction));
}

}  // namespace lorasim
