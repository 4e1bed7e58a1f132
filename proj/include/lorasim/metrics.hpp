// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorasim/config.hpp"
#include "lorasim/model.hpp"

namespace lorasim {

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample.
template <class T>
T percentile(std::vector<T> samples, double p) {
    if (samples.empty()) throw std::invalid_argument("percentile of an empty sample");
    if (!(p > 0 && p <= 100)) throw std::invalid_argument("percentile rank must be in (0, 100]");
    const auto n = samples.size();
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n) - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(rank - 1), samples.end());
    return samples[rank - 1];
}

inline double round_to(double v, int decimals) {
    const double scale = std::pow(10.0, decimals);
    return static_cast<double>(std::llround(v * scale)) / scale;
}

struct MetricsRecord {
    std::uint64_t request_id = 0;
    std::int64_t arrival_us = 0;
    std::size_t queue = 0;
    double wrs = 0.0;             // 6 decimals
    std::uint32_t adapter_id = 0;
    int rank = 0;
    std::int64_t ttft_us = 0;
    std::int64_t e2e_us = 0;
    double mean_tbt_us = 0.0;     // 3 decimals
    double slowdown = 0.0;        // 6 decimals
    int squashes = 0;
    bool bypassed = false;
    bool adapter_hit = false;
    std::vector<std::int64_t> tbt_samples_us;  // not part of the CSV
};

inline constexpr const char* kRecordCsvHeader =
    "request_id,arrival_us,queue,wrs,adapter_id,rank,ttft_us,e2e_us,mean_tbt_us,slowdown,squashes,adapter_hit";

inline void write_records_csv(std::ostream& out, const std::vector<MetricsRecord>& recs) {
    out << kRecordCsvHeader << '\n';
    char buf[320];
    for (const auto& r : recs) {
        std::snprintf(buf, sizeof buf, "%llu,%lld,%zu,%.6f,%u,%d,%lld,%lld,%.3f,%.6f,%d,%d\n",
                      static_cast<unsigned long long>(r.request_id), static_cast<long long>(r.arrival_us), r.queue,
                      r.wrs, r.adapter_id, r.rank, static_cast<long long>(r.ttft_us),
                      static_cast<long long>(r.e2e_us), r.mean_tbt_us, r.slowdown, r.squashes,
                      r.adapter_hit ? 1 : 0);
        out << buf;
    }
}

inline std::vector<MetricsRecord> read_records_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("records csv: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kRecordCsvHeader) throw std::runtime_error("records csv: unexpected header");
    std::vector<MetricsRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> c;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) c.push_back(cell);
        if (c.size() != 12) throw std::runtime_error("records csv line " + std::to_string(lineno) + ": expected 12 columns");
        try {
            MetricsRecord r;
            r.request_id = std::stoull(c[0]);
            r.arrival_us = std::stoll(c[1]);
            r.queue = std::stoull(c[2]);
            r.wrs = std::stod(c[3]);
            r.adapter_id = static_cast<std::uint32_t>(std::stoul(c[4]));
            r.rank = std::stoi(c[5]);
            r.ttft_us = std::stoll(c[6]);
            r.e2e_us = std::stoll(c[7]);
            r.mean_tbt_us = std::stod(c[8]);
            r.slowdown = std::stod(c[9]);
            r.squashes = std::stoi(c[10]);
            r.adapter_hit = c[11] == "1";
            out.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw std::runtime_error("records csv line " + std::to_string(lineno) + ": malformed value");
        }
    }
    return out;
}

/// Engine-side counters that the per-request CSV cannot carry.
struct SystemCounters {
    std::int64_t bytes_transferred = 0;
    std::int64_t transfers = 0;
    std::int64_t cache_hits = 0;
    std::int64_t cache_misses = 0;
    std::int64_t inflight_joins = 0;
    std::int64_t prefetch_loads = 0;
    std::int64_t evictions = 0;
    std::int64_t steps = 0;
    std::int64_t bypass_admissions = 0;
    std::int64_t bypass_squashes = 0;
    std::int64_t memory_squashes = 0;
    std::int64_t forced_admissions = 0;
    std::int64_t refreshes = 0;
    std::int64_t invariant_checks = 0;
    std::int64_t sim_end_us = 0;
};

struct AbsoluteSlo {
    Duration ttft{};
    Duration tbt{};
};

struct RunSummary {
    std::size_t total_requests = 0;
    std::size_t measured_requests = 0;
    std::int64_t p50_ttft_us = 0;
    std::int64_t p99_ttft_us = 0;
    double mean_ttft_us = 0.0;
    std::int64_t p99_tbt_us = 0;  // from gap samples when available
    double mean_tbt_us = 0.0;     // mean of per-request mean gaps
    std::int64_t p50_e2e_us = 0;
    std::int64_t p99_e2e_us = 0;
    std::vector<std::pair<double, double>> slowdown_cdf;  // (percentile, slowdown)
    double adapter_hit_rate = 0.0;
    double squash_rate = 0.0;
    double bypass_rate = 0.0;
    std::optional<double> slo_attainment;
    std::map<std::size_t, std::size_t> queue_counts;
    bool squash_alert = false;
};

inline constexpr double kSlowdownCdfPoints[] = {10, 25, 50, 75, 90, 95, 99, 100};

/// Summary over requests arriving after the warm-up cut. All per-request
/// fields come from CSV-representable values, so summarizing records read
/// back from the CSV gives the same numbers (except pooled TBT percentiles).
inline RunSummary summarize(const std::vector<MetricsRecord>& recs, const MetricsConfig& cfg, std::int64_t horizon_us,
                            std::optional<AbsoluteSlo> slo = std::nullopt) {
    RunSummary s;
    s.total_requests = recs.size();
    const auto cut = static_cast<std::int64_t>(std::floor(cfg.warmup_fraction * static_cast<double>(horizon_us)));
    std::vector<std::int64_t> ttft, e2e, gaps;
    std::vector<double> slow;
    double tbt_sum = 0.0;
    std::size_t tbt_n = 0, hits = 0, squashed = 0, bypassed = 0, met = 0;
    bool have_gaps = false;
    for (const auto& r : recs) {
        if (r.arrival_us < cut) continue;
        ++s.measured_requests;
        ttft.push_back(r.ttft_us);
        e2e.push_back(r.e2e_us);
        slow.push_back(r.slowdown);
        if (r.adapter_hit) ++hits;
        if (r.squashes > 0) ++squashed;
        if (r.bypassed) ++bypassed;
        ++s.queue_counts[r.queue];
        if (r.e2e_us > r.ttft_us) {
            tbt_sum += r.mean_tbt_us;
            ++tbt_n;
        }
        if (!r.tbt_samples_us.empty()) {
            have_gaps = true;
            if (cfg.tbt_pooling == TbtPooling::Pooled) gaps.insert(gaps.end(), r.tbt_samples_us.begin(), r.tbt_samples_us.end());
            else gaps.push_back(*std::max_element(r.tbt_samples_us.begin(), r.tbt_samples_us.end()));
        }
        if (slo && r.ttft_us <= slo->ttft.count() && r.mean_tbt_us <= static_cast<double>(slo->tbt.count())) ++met;
    }
    if (s.measured_requests == 0) return s;
    const double n = static_cast<double>(s.measured_requests);
    s.p50_ttft_us = percentile(ttft, 50);
    s.p99_ttft_us = percentile(ttft, 99);
    double tsum = 0;
    for (auto v : ttft) tsum += static_cast<double>(v);
    s.mean_ttft_us = tsum / n;
    s.p50_e2e_us = percentile(e2e, 50);
    s.p99_e2e_us = percentile(e2e, 99);
    if (have_gaps) s.p99_tbt_us = percentile(gaps, 99);
    s.mean_tbt_us = tbt_n ? tbt_sum / static_cast<double>(tbt_n) : 0.0;
    for (double p : kSlowdownCdfPoints) s.slowdown_cdf.push_back({p, percentile(slow, p)});
    s.adapter_hit_rate = static_cast<double>(hits) / n;
    s.squash_rate = static_cast<double>(squashed) / n;
    s.bypass_rate = static_cast<double>(bypassed) / n;
    s.squash_alert = s.squash_rate > cfg.squash_alert_threshold;
    if (slo) s.slo_attainment = static_cast<double>(met) / n;
    return s;
}

/// SLO = multiplier x low-load mean latency; absolute overrides win.
inline AbsoluteSlo derive_slo(const std::optional<RunSummary>& calibration, const SLOConfig& cfg) {
    AbsoluteSlo out;
    if ((!cfg.ttft_slo || !cfg.tbt_slo) && (!calibration || calibration->measured_requests == 0))
        throw std::runtime_error("no calibration run and no absolute SLO override");
    auto scaled = [&](double mean) { return Duration{static_cast<std::int64_t>(std::llround(cfg.slo_multiplier * mean))}; };
    out.ttft = cfg.ttft_slo ? *cfg.ttft_slo : scaled(calibration->mean_ttft_us);
    out.tbt = cfg.tbt_slo ? *cfg.tbt_slo : scaled(calibration->mean_tbt_us);
    return out;
}

struct SweepPoint {
    double rps = 0.0;
    std::int64_t p99_ttft_us = 0;
    std::int64_t p99_tbt_us = 0;
    bool ok = false;
};

struct SweepResult {
    std::optional<double> max_rps;  // empty: even the smallest grid point violates
    bool below_grid = false;
    bool saturation_warning = false;  // every point met the SLO
    bool non_monotone = false;        // a point passes after an earlier failure
    std::vector<SweepPoint> table;
};

/// Scans an ascending grid and reports the point before the first violation.
inline SweepResult throughput_sweep(std::vector<SweepPoint> points, const AbsoluteSlo& slo) {
    SweepResult res;
    std::optional<std::size_t> first_fail;
    for (std::size_t i = 0; i < points.size(); ++i) {
        auto& p = points[i];
        p.ok = p.p99_ttft_us <= slo.ttft.count() && p.p99_tbt_us <= slo.tbt.count();
        if (!p.ok && !first_fail) first_fail = i;
        if (p.ok && first_fail) res.non_monotone = true;
    }
    if (!first_fail) {
        if (!points.empty()) res.max_rps = points.back().rps;
        res.saturation_warning = true;
    } else if (*first_fail == 0) {
        res.below_grid = true;
    } else {
        res.max_rps = points[*first_fail - 1].rps;
    }
    res.table = std::move(points);
    return res;
}

inline nlohmann::json to_json(const RunSummary& s) {
    nlohmann::json j;
    j["total_requests"] = s.total_requests;
    j["measured_requests"] = s.measured_requests;
    j["p50_ttft_us"] = s.p50_ttft_us;
    j["p99_ttft_us"] = s.p99_ttft_us;
    j["mean_ttft_us"] = s.mean_ttft_us;
    j["p99_tbt_us"] = s.p99_tbt_us;
    j["mean_tbt_us"] = s.mean_tbt_us;
    j["p50_e2e_us"] = s.p50_e2e_us;
    j["p99_e2e_us"] = s.p99_e2e_us;
    auto cdf = nlohmann::json::array();
    for (const auto& [p, v] : s.slowdown_cdf) cdf.push_back({{"percentile", p}, {"slowdown", v}});
    j["slowdown_cdf"] = cdf;
    j["adapter_hit_rate"] = s.adapter_hit_rate;
    j["squash_rate"] = s.squash_rate;
    j["squash_alert"] = s.squash_alert;
    j["bypass_rate"] = s.bypass_rate;
    j["slo_attainment"] = s.slo_attainment ? nlohmann::json(*s.slo_attainment) : nlohmann::json(nullptr);
    auto q = nlohmann::json::object();
    for (const auto& [k, v] : s.queue_counts) q[std::to_string(k)] = v;
    j["queue_counts"] = q;
    return j;
}

inline nlohmann::json to_json(const SystemCounters& c) {
    return {{"bytes_transferred", c.bytes_transferred},
            {"transfers", c.transfers},
            {"cache_hits", c.cache_hits},
            {"cache_misses", c.cache_misses},
            {"inflight_joins", c.inflight_joins},
            {"prefetch_loads", c.prefetch_loads},
            {"evictions", c.evictions},
            {"steps", c.steps},
            {"bypass_admissions", c.bypass_admissions},
            {"bypass_squashes", c.bypass_squashes},
            {"memory_squashes", c.memory_squashes},
            {"forced_admissions", c.forced_admissions},
            {"refreshes", c.refreshes},
            {"invariant_checks", c.invariant_checks},
            {"sim_end_us", c.sim_end_us}};
}

}  // namespace lorasim
