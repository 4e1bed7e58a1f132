// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lorasim/config.hpp"
#include "lorasim/config_io.hpp"
#include "lorasim/engine.hpp"
#include "lorasim/metrics.hpp"

namespace lorasim {

namespace fs = std::filesystem;

/// One policy bundle of a scenario. `overrides` is a config fragment applied
/// on top of the scenario's base config before the policy fields.
struct PolicyVariant {
    std::string name;
    SchedulerPolicy scheduler = SchedulerPolicy::MLQ;
    CachePolicy cache = CachePolicy::CostAware;
    PrefetchMode prefetch = PrefetchMode::QueueDriven;
    json overrides = json::object();
};

struct Scenario {
    std::string name = "custom";
    std::string description;
    SimConfig base;
    std::vector<PolicyVariant> variants;
    std::vector<double> rps;
    std::vector<std::uint64_t> seeds;
};

/// Resolved config of one (variant, rps, seed) cell.
inline SimConfig cell_config(const Scenario& s, const PolicyVariant& v, double rps, std::uint64_t seed) {
    SimConfig c = v.overrides.empty() ? s.base : config_from_json(v.overrides, s.base);
    c.scheduler.policy = v.scheduler;
    c.cache.policy = v.cache;
    c.cache.prefetch = v.prefetch;
    c.workload.arrival_rate = rps;
    c.seed = seed;
    return c;
}

inline std::vector<ConfigError> validate_scenario(const Scenario& s) {
    std::vector<ConfigError> errs;
    if (s.rps.empty()) errs.push_back({"rps", "must not be empty"});
    for (std::size_t i = 0; i < s.rps.size(); ++i)
        if (!(s.rps[i] > 0)) errs.push_back({"rps[" + std::to_string(i) + "]", "must be positive"});
    if (s.seeds.empty()) errs.push_back({"seeds", "must not be empty"});
    if (s.variants.empty()) errs.push_back({"variants", "must not be empty"});
    std::set<std::string> names;
    for (std::size_t i = 0; i < s.variants.size(); ++i) {
        const auto& v = s.variants[i];
        const std::string path = "variants[" + std::to_string(i) + "]";
        if (v.name.empty() || v.name.find_first_of("/\\ ,") != std::string::npos)
            errs.push_back({path + ".name", "must be a non-empty name without '/', '\\\\', ',' or spaces"});
        if (!names.insert(v.name).second) errs.push_back({path + ".name", "duplicate variant '" + v.name + "'"});
        try {
            auto c = cell_config(s, v, s.rps.empty() ? 1.0 : s.rps.front(), s.seeds.empty() ? 1 : s.seeds.front());
            for (auto& e : validate_config(c)) errs.push_back({path + "." + e.path, e.message});
            if (c.workload.trace_path && !fs::exists(*c.workload.trace_path))
                errs.push_back({path + ".workload.trace", "file '" + *c.workload.trace_path + "' does not exist"});
        } catch (const ConfigLoadError& e) {
            for (const auto& fe : e.errors()) errs.push_back({path + ".config." + fe.path, fe.message});
        }
    }
    return errs;
}

// ---------------------------------------------------------------------------
// Scenario files

inline json scenario_to_json(const Scenario& s) {
    json j;
    j["name"] = s.name;
    if (!s.description.empty()) j["description"] = s.description;
    j["config"] = config_to_json(s.base);
    j["rps"] = s.rps;
    j["seeds"] = s.seeds;
    auto vs = json::array();
    for (const auto& v : s.variants) {
        json jv{{"name", v.name},
                {"scheduler", to_string(v.scheduler)},
                {"cache", to_string(v.cache)},
                {"prefetch", to_string(v.prefetch)}};
        if (!v.overrides.empty()) jv["config"] = v.overrides;
        vs.push_back(std::move(jv));
    }
    j["variants"] = vs;
    return j;
}

/// Parses a scenario document. A bare config (no "variants") becomes a
/// single-variant scenario using the config's own policies.
inline Scenario scenario_from_json(const json& j, const SimConfig& defaults = {}) {
    std::vector<ConfigError> errs;
    if (!j.is_object()) throw ConfigLoadError(std::vector<ConfigError>{{"<root>", "expected an object"}});
    if (!j.contains("variants")) {
        Scenario s;
        s.base = config_from_json(j, defaults);
        s.variants.push_back({"default", s.base.scheduler.policy, s.base.cache.policy, s.base.cache.prefetch, json::object()});
        s.rps = {s.base.workload.arrival_rate};
        s.seeds = {s.base.seed};
        return s;
    }
    static const std::set<std::string> known{"name", "description", "config", "rps", "seeds", "variants"};
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) errs.push_back({k, "unknown field"});
    Scenario s;
    if (j.contains("name")) {
        if (j["name"].is_string()) s.name = j["name"].get<std::string>();
        else errs.push_back({"name", "expected a string"});
    }
    if (j.contains("description") && j["description"].is_string()) s.description = j["description"].get<std::string>();
    try {
        s.base = j.contains("config") ? config_from_json(j["config"], defaults) : defaults;
    } catch (const ConfigLoadError& e) {
        for (const auto& fe : e.errors()) errs.push_back({"config." + fe.path, fe.message});
    }
    auto read_list = [&](const char* key, auto& out) {
        if (!j.contains(key)) return;
        if (!j[key].is_array()) {
            errs.push_back({key, "expected an array"});
            return;
        }
        for (std::size_t i = 0; i < j[key].size(); ++i) {
            const auto& e = j[key][i];
            if (!e.is_number() || (std::is_integral_v<typename std::decay_t<decltype(out)>::value_type> && !e.is_number_unsigned()))
                errs.push_back({std::string(key) + "[" + std::to_string(i) + "]", "expected a number"});
            else out.push_back(e.get<typename std::decay_t<decltype(out)>::value_type>());
        }
    };
    read_list("rps", s.rps);
    read_list("seeds", s.seeds);
    if (s.rps.empty() && !j.contains("rps")) s.rps = {s.base.workload.arrival_rate};
    if (s.seeds.empty() && !j.contains("seeds")) s.seeds = {s.base.seed};
    if (!j["variants"].is_array()) {
        errs.push_back({"variants", "expected an array"});
    } else {
        for (std::size_t i = 0; i < j["variants"].size(); ++i) {
            const auto& jv = j["variants"][i];
            const std::string path = "variants[" + std::to_string(i) + "]";
            if (!jv.is_object()) {
                errs.push_back({path, "expected an object"});
                continue;
            }
            PolicyVariant v{"", s.base.scheduler.policy, s.base.cache.policy, s.base.cache.prefetch, json::object()};
            for (const auto& [k, val] : jv.items()) {
                const std::string p = path + "." + k;
                auto str = [&]() -> std::optional<std::string> {
                    if (val.is_string()) return val.get<std::string>();
                    errs.push_back({p, "expected a string"});
                    return std::nullopt;
                };
                if (k == "name") {
                    if (auto sv = str()) v.name = *sv;
                } else if (k == "scheduler") {
                    if (auto sv = str()) {
                        if (auto e = parse_scheduler_policy(*sv)) v.scheduler = *e;
                        else errs.push_back({p, "unknown scheduler policy '" + *sv + "'"});
                    }
                } else if (k == "cache") {
                    if (auto sv = str()) {
                        if (auto e = parse_cache_policy(*sv)) v.cache = *e;
                        else errs.push_back({p, "unknown cache policy '" + *sv + "'"});
                    }
                } else if (k == "prefetch") {
                    if (auto sv = str()) {
                        if (auto e = parse_prefetch(*sv)) v.prefetch = *e;
                        else errs.push_back({p, "unknown prefetch mode '" + *sv + "'"});
                    }
                } else if (k == "config") {
                    if (val.is_object()) v.overrides = val;
                    else errs.push_back({p, "expected an object"});
                } else {
                    errs.push_back({p, "unknown field"});
                }
            }
            s.variants.push_back(std::move(v));
        }
    }
    if (!errs.empty()) throw ConfigLoadError(std::move(errs));
    return s;
}

inline Scenario load_scenario_file(const std::string& path, const SimConfig& defaults = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigLoadError({{"<file>", "cannot open '" + path + "'"}});
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigLoadError({{"<file>", std::string("invalid JSON: ") + e.what()}});
    }
    return scenario_from_json(j, defaults);
}

// ---------------------------------------------------------------------------
// Presets

struct PresetInfo {
    std::string name;
    std::string description;
};

inline const std::vector<PresetInfo>& preset_list() {
    static const std::vector<PresetInfo> list{
        {"tail-latency", "P99 TTFT of FIFO/MLQ with and without adapter caching across an rps grid"},
        {"eviction-policies", "MLQ with NoCache, LRU, FairShare and CostAware under a tight idle-adapter budget"},
        {"scheduler-ordering", "FIFO+NoCache, SJF and MLQ near saturation; long-request starvation check"},
        {"link-contention", "NoCache transfer volume with 1 vs 500 distinct adapters at equal load"},
        {"prefetch", "MLQ+CostAware with prefetch off, queue-driven and histogram-driven"},
        {"squash", "MLQ squash rate across predictor accuracies"},
    };
    return list;
}

inline Scenario make_preset(const std::string& name) {
    Scenario s;
    s.name = name;
    auto variant = [](std::string n, SchedulerPolicy sp, CachePolicy cp, PrefetchMode pm, json o = json::object()) {
        return PolicyVariant{std::move(n), sp, cp, pm, std::move(o)};
    };
    using SP = SchedulerPolicy;
    using CP = CachePolicy;
    using PM = PrefetchMode;
    for (const auto& p : preset_list())
        if (p.name == name) s.description = p.description;
    if (name == "tail-latency") {
        s.base.workload.duration = std::chrono::seconds{900};
        // Pooled P99 TBT includes every gap stalled behind a prefill, so a
        // 5x-mean TBT target would fail the whole grid; use an absolute one.
        s.base.slo.tbt_slo = std::chrono::milliseconds{150};
        s.rps = {3.0, 4.0, 4.5, 5.0, 5.5};
        s.seeds = {1, 2, 3};
        s.variants = {variant("fifo-nocache", SP::FIFO, CP::NoCache, PM::Off),
                      variant("mlq-nocache", SP::MLQ, CP::NoCache, PM::Off),
                      variant("fifo-cache", SP::FIFO, CP::CostAware, PM::QueueDriven),
                      variant("mlq-cache", SP::MLQ, CP::CostAware, PM::QueueDriven)};
    } else if (name == "eviction-policies") {
        s.base.workload.duration = std::chrono::seconds{1200};
        // 25% of the working set: 20 adapters per rank x 4 x (8+16+32+64+128) tokens.
        s.base.cache.idle_capacity_tokens = 4960;
        s.rps = {4.0};
        s.seeds = {1, 2, 3};
        s.variants = {variant("nocache", SP::MLQ, CP::NoCache, PM::Off),
                      variant("lru", SP::MLQ, CP::LRU, PM::QueueDriven),
                      variant("fairshare", SP::MLQ, CP::FairShare, PM::QueueDriven),
                      variant("cost-aware", SP::MLQ, CP::CostAware, PM::QueueDriven)};
    } else if (name == "scheduler-ordering") {
        s.base.workload.duration = std::chrono::seconds{1950};
        s.rps = {5.2};
        s.seeds = {1};
        s.variants = {variant("fifo-nocache", SP::FIFO, CP::NoCache, PM::Off),
                      variant("sjf-cache", SP::SJF, CP::CostAware, PM::QueueDriven),
                      variant("mlq-cache", SP::MLQ, CP::CostAware, PM::QueueDriven)};
    } else if (name == "link-contention") {
        s.base.workload.duration = std::chrono::seconds{600};
        s.base.workload.ranks = {32};
        s.rps = {4.0};
        s.seeds = {1};
        s.variants = {variant("adapters-1", SP::FIFO, CP::NoCache, PM::Off, {{"workload", {{"num_adapters", 1}}}}),
                      variant("adapters-500", SP::FIFO, CP::NoCache, PM::Off, {{"workload", {{"num_adapters", 500}}}})};
    } else if (name == "prefetch") {
        s.base.workload.duration = std::chrono::seconds{900};
        s.base.cache.idle_capacity_tokens = 4960;
        s.rps = {4.0};
        s.seeds = {1, 2};
        s.variants = {variant("off", SP::MLQ, CP::CostAware, PM::Off),
                      variant("queue", SP::MLQ, CP::CostAware, PM::QueueDriven),
                      variant("histogram", SP::MLQ, CP::CostAware, PM::Histogram)};
    } else if (name == "squash") {
        s.base.workload.duration = std::chrono::seconds{900};
        s.rps = {5.0};
        s.seeds = {1, 2};
        s.variants = {variant("acc-0.6", SP::MLQ, CP::CostAware, PM::QueueDriven, {{"predictor", {{"accuracy", 0.6}}}}),
                      variant("acc-0.8", SP::MLQ, CP::CostAware, PM::QueueDriven, {{"predictor", {{"accuracy", 0.8}}}}),
                      variant("acc-1.0", SP::MLQ, CP::CostAware, PM::QueueDriven, {{"predictor", {{"accuracy", 1.0}}}})};
    } else {
        throw std::invalid_argument("unknown preset '" + name + "'");
    }
    return s;
}

// ---------------------------------------------------------------------------
// Running

inline std::string format_rps(double rps) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", rps);
    return buf;
}

inline std::string cell_dir(const std::string& variant, double rps, std::uint64_t seed) {
    return variant + "/rps_" + format_rps(rps) + "/seed_" + std::to_string(seed);
}

struct RankStats {
    std::size_t count = 0;
    std::int64_t p50_ttft_us = 0;
    std::int64_t p99_ttft_us = 0;
};

struct CellResult {
    std::string variant;
    double rps = 0.0;
    std::uint64_t seed = 0;
    bool ok = false;
    int exit_code = 0;  // 2 config error, 3 invariant violation, 1 other
    std::string error;
    RunSummary summary;
    SystemCounters counters;
    double throughput_rps = 0.0;
    std::map<int, RankStats> by_rank;
};

struct ScenarioResult {
    std::vector<CellResult> cells;
    std::map<std::uint64_t, AbsoluteSlo> slo;  // per seed
    std::map<std::string, std::map<std::uint64_t, SweepResult>> sweeps;  // variant -> seed -> sweep

    bool all_ok() const {
        return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
    }
    int exit_code() const {
        for (const auto& c : cells)
            if (!c.ok) return c.exit_code ? c.exit_code : 1;
        return 0;
    }
};

struct RunOptions {
    unsigned jobs = 1;
    bool write_files = true;
};

/// Completed requests per second over the span from the first arrival to the last completion.
inline double completion_throughput(const std::vector<MetricsRecord>& recs) {
    if (recs.empty()) return 0.0;
    std::int64_t first = recs.front().arrival_us, last = 0;
    for (const auto& r : recs) {
        first = std::min(first, r.arrival_us);
        last = std::max(last, r.arrival_us + r.e2e_us);
    }
    return last > first ? static_cast<double>(recs.size()) / (static_cast<double>(last - first) * 1e-6) : 0.0;
}

inline std::map<int, RankStats> rank_breakdown(const std::vector<MetricsRecord>& recs, const MetricsConfig& m,
                                               std::int64_t horizon_us) {
    const auto cut = static_cast<std::int64_t>(std::floor(m.warmup_fraction * static_cast<double>(horizon_us)));
    std::map<int, std::vector<std::int64_t>> ttft;
    for (const auto& r : recs)
        if (r.arrival_us >= cut) ttft[r.rank].push_back(r.ttft_us);
    std::map<int, RankStats> out;
    for (auto& [rank, v] : ttft) out[rank] = {v.size(), percentile(v, 50), percentile(v, 99)};
    return out;
}

inline nlohmann::json summary_document(const SimConfig& cfg, const RunSummary& s, const SystemCounters& c,
                                       double throughput) {
    json j = to_json(s);
    j["throughput_rps"] = throughput;
    j["counters"] = to_json(c);
    j["seed"] = cfg.seed;
    j["config"] = config_to_json(cfg);
    return j;
}

/// Runs a single simulation and optionally writes records.csv / summary.json into `dir`.
inline CellResult run_cell(const SimConfig& cfg, const std::optional<AbsoluteSlo>& slo, const std::string& dir) {
    CellResult cell;
    cell.rps = cfg.workload.arrival_rate;
    cell.seed = cfg.seed;
    try {
        auto errs = validate_config(cfg);
        if (!errs.empty()) throw ConfigLoadError(std::move(errs));
        auto res = simulate(cfg);
        cell.summary = summarize(res.records, cfg.metrics, res.horizon_us, slo);
        cell.counters = res.counters;
        cell.throughput_rps = completion_throughput(res.records);
        cell.by_rank = rank_breakdown(res.records, cfg.metrics, res.horizon_us);
        if (!dir.empty()) {
            fs::create_directories(dir);
            std::ofstream csv(fs::path(dir) / "records.csv", std::ios::binary);
            write_records_csv(csv, res.records);
            std::ofstream js(fs::path(dir) / "summary.json", std::ios::binary);
            js << summary_document(cfg, cell.summary, cell.counters, cell.throughput_rps).dump(2) << "\n";
            if (!csv || !js) throw std::runtime_error("failed writing results to '" + dir + "'");
        }
        cell.ok = true;
    } catch (const ConfigLoadError& e) {
        cell.exit_code = 2;
        cell.error = e.what();
    } catch (const TraceError& e) {
        cell.exit_code = 2;
        cell.error = e.what();
    } catch (const InvariantViolation& e) {
        cell.exit_code = 3;
        cell.error = e.what();
    } catch (const std::exception& e) {
        cell.exit_code = 1;
        cell.error = e.what();
    }
    return cell;
}

/// Runs `work(i)` for i in [0, n) on up to `jobs` threads.
template <class F>
void parallel_for(std::size_t n, unsigned jobs, F&& work) {
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) work(i);
        });
    for (auto& th : pool) th.join();
}

inline void write_comparison_csv(std::ostream& out, const std::vector<CellResult>& cells) {
    out << "variant,rps,seed,ok,measured_requests,p50_ttft_us,p99_ttft_us,p99_tbt_us,mean_ttft_us,p99_e2e_us,"
           "throughput_rps,adapter_hit_rate,bytes_transferred,transfers,evictions,squash_rate,slo_attainment\n";
    char buf[512];
    for (const auto& c : cells) {
        const auto& s = c.summary;
        std::snprintf(buf, sizeof buf, "%s,%s,%llu,%d,%zu,%lld,%lld,%lld,%.3f,%lld,%.6f,%.6f,%lld,%lld,%lld,%.6f,", c.variant.c_str(),
                      format_rps(c.rps).c_str(), static_cast<unsigned long long>(c.seed), c.ok ? 1 : 0,
                      s.measured_requests, static_cast<long long>(s.p50_ttft_us), static_cast<long long>(s.p99_ttft_us),
                      static_cast<long long>(s.p99_tbt_us), s.mean_ttft_us, static_cast<long long>(s.p99_e2e_us),
                      c.throughput_rps, s.adapter_hit_rate, static_cast<long long>(c.counters.bytes_transferred),
                      static_cast<long long>(c.counters.transfers), static_cast<long long>(c.counters.evictions),
                      s.squash_rate);
        out << buf;
        if (s.slo_attainment) {
            std::snprintf(buf, sizeof buf, "%.6f", *s.slo_attainment);
            out << buf;
        }
        out << "\n";
    }
}

/// Runs every (variant, rps, seed) cell. SLOs come from a calibration run of
/// the first variant at calibration_fraction x the largest rps, per seed.
inline ScenarioResult run_scenario(const Scenario& s, const std::string& out_dir, const RunOptions& opt = {}) {
    if (auto errs = validate_scenario(s); !errs.empty()) throw ConfigLoadError(std::move(errs));
    ScenarioResult result;
    const double max_rps = *std::max_element(s.rps.begin(), s.rps.end());
    const bool write = opt.write_files && !out_dir.empty();

    std::vector<std::optional<AbsoluteSlo>> slos(s.seeds.size());
    std::vector<std::string> calib_errors(s.seeds.size());
    parallel_for(s.seeds.size(), opt.jobs, [&](std::size_t i) {
        auto cfg = cell_config(s, s.variants.front(), max_rps * s.base.slo.calibration_fraction, s.seeds[i]);
        try {
            if (cfg.slo.ttft_slo && cfg.slo.tbt_slo) {
                slos[i] = derive_slo(std::nullopt, cfg.slo);
                return;
            }
            auto cal = run_cell(cfg, std::nullopt, write ? out_dir + "/calibration/seed_" + std::to_string(s.seeds[i]) : "");
            if (!cal.ok) throw std::runtime_error(cal.error);
            slos[i] = derive_slo(cal.summary, cfg.slo);
        } catch (const std::exception& e) {
            calib_errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < s.seeds.size(); ++i)
        if (slos[i]) result.slo[s.seeds[i]] = *slos[i];

    struct Job {
        const PolicyVariant* v;
        double rps;
        std::size_t seed_index;
    };
    std::vector<Job> jobs;
    for (const auto& v : s.variants)
        for (double r : s.rps)
            for (std::size_t i = 0; i < s.seeds.size(); ++i) jobs.push_back({&v, r, i});
    result.cells.resize(jobs.size());
    parallel_for(jobs.size(), opt.jobs, [&](std::size_t k) {
        const auto& job = jobs[k];
        const auto seed = s.seeds[job.seed_index];
        auto cfg = cell_config(s, *job.v, job.rps, seed);
        auto dir = write ? out_dir + "/" + cell_dir(job.v->name, job.rps, seed) : std::string();
        auto cell = run_cell(cfg, slos[job.seed_index], dir);
        cell.variant = job.v->name;
        if (cell.ok && !calib_errors[job.seed_index].empty())
            cell.error = "SLO calibration failed: " + calib_errors[job.seed_index];
        result.cells[k] = std::move(cell);
    });

    for (const auto& v : s.variants)
        for (std::size_t i = 0; i < s.seeds.size(); ++i) {
            if (!slos[i]) continue;
            std::vector<SweepPoint> pts;
            for (const auto& c : result.cells)
                if (c.ok && c.variant == v.name && c.seed == s.seeds[i])
                    pts.push_back({c.rps, c.summary.p99_ttft_us, c.summary.p99_tbt_us, false});
            std::sort(pts.begin(), pts.end(), [](const SweepPoint& a, const SweepPoint& b) { return a.rps < b.rps; });
            result.sweeps[v.name][s.seeds[i]] = throughput_sweep(std::move(pts), *slos[i]);
        }

    if (write) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "scenario.json", std::ios::binary) << scenario_to_json(s).dump(2) << "\n";
        std::ofstream cmp(fs::path(out_dir) / "comparison.csv", std::ios::binary);
        write_comparison_csv(cmp, result.cells);

        std::ofstream tp(fs::path(out_dir) / "throughput.csv", std::ios::binary);
        tp << "variant,seed,slo_ttft_us,slo_tbt_us,max_rps,below_grid,saturation_warning,non_monotone\n";
        for (const auto& [variant, per_seed] : result.sweeps)
            for (const auto& [seed, sw] : per_seed) {
                const auto& slo = result.slo.at(seed);
                tp << variant << "," << seed << "," << slo.ttft.count() << "," << slo.tbt.count() << ","
                   << (sw.max_rps ? format_rps(*sw.max_rps) : "") << "," << sw.below_grid << "," << sw.saturation_warning
                   << "," << sw.non_monotone << "\n";
            }

        std::ofstream br(fs::path(out_dir) / "by_rank.csv", std::ios::binary);
        br << "variant,rps,seed,rank,requests,p50_ttft_us,p99_ttft_us\n";
        for (const auto& c : result.cells)
            for (const auto& [rank, st] : c.by_rank)
                br << c.variant << "," << format_rps(c.rps) << "," << c.seed << "," << rank << "," << st.count << ","
                   << st.p50_ttft_us << "," << st.p99_ttft_us << "\n";

        std::ofstream fl(fs::path(out_dir) / "failures.txt", std::ios::binary);
        for (const auto& c : result.cells)
            if (!c.error.empty()) fl << cell_dir(c.variant, c.rps, c.seed) << ": " << c.error << "\n";
    }
    return result;
}

// ---------------------------------------------------------------------------
// Diffing two result directories

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MetricTable {
    std::vector<std::string> metrics;                        // numeric columns, header order
    std::map<std::string, std::map<std::string, double>> rows;  // key -> metric -> value
};

inline const std::vector<std::string>& diff_metrics() {
    static const std::vector<std::string> m{"p50_ttft_us", "p99_ttft_us", "p99_tbt_us",        "mean_ttft_us",
                                            "p99_e2e_us",  "throughput_rps", "adapter_hit_rate", "bytes_transferred",
                                            "squash_rate"};
    return m;
}

/// Loads comparison.csv from a scenario directory, or summary.json from a single-run directory.
inline MetricTable load_metric_table(const std::string& dir) {
    MetricTable t;
    const auto cmp = fs::path(dir) / "comparison.csv";
    const auto sum = fs::path(dir) / "summary.json";
    if (fs::exists(cmp)) {
        std::ifstream in(cmp);
        std::string line;
        if (!std::getline(in, line)) throw SchemaError(cmp.string() + ": empty file");
        auto header = detail::split_csv(line);
        std::map<std::string, std::size_t> col;
        for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
        for (const char* k : {"variant", "rps", "seed"})
            if (!col.count(k)) throw SchemaError(cmp.string() + ": missing column '" + k + "'");
        for (const auto& m : diff_metrics()) {
            if (!col.count(m)) throw SchemaError(cmp.string() + ": missing metric column '" + m + "'");
            t.metrics.push_back(m);
        }
        std::size_t ln = 1;
        while (std::getline(in, line)) {
            ++ln;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto f = detail::split_csv(line);
            if (f.size() != header.size()) throw SchemaError(cmp.string() + ":" + std::to_string(ln) + ": wrong field count");
            const auto key = f[col["variant"]] + "/rps_" + f[col["rps"]] + "/seed_" + f[col["seed"]];
            auto& row = t.rows[key];
            for (const auto& m : t.metrics) {
                const auto& v = f[col[m]];
                if (v.empty()) continue;
                try {
                    row[m] = std::stod(v);
                } catch (const std::exception&) {
                    throw SchemaError(cmp.string() + ":" + std::to_string(ln) + ": bad number in '" + m + "'");
                }
            }
        }
        return t;
    }
    if (fs::exists(sum)) {
        std::ifstream in(sum);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw SchemaError(sum.string() + ": " + e.what());
        }
        auto& row = t.rows["run"];
        for (const auto& m : diff_metrics()) {
            const json* v = nullptr;
            if (j.contains(m)) v = &j[m];
            else if (j.contains("counters") && j["counters"].contains(m)) v = &j["counters"][m];
            if (!v || !v->is_number()) throw SchemaError(sum.string() + ": missing metric '" + m + "'");
            t.metrics.push_back(m);
            row[m] = v->get<double>();
        }
        return t;
    }
    throw SchemaError("'" + dir + "' has neither comparison.csv nor summary.json");
}

/// Relative change of b against baseline a, in percent. Null when a is 0 and b is not.
inline std::optional<double> relative_change_pct(double a, double b) {
    if (a == b) return 0.0;
    if (a == 0) return std::nullopt;
    return (b - a) / std::abs(a) * 100.0;
}

/// Per-metric relative deltas of `dir_b` against baseline `dir_a`.
inline json diff_runs(const std::string& dir_a, const std::string& dir_b) {
    const auto a = load_metric_table(dir_a);
    const auto b = load_metric_table(dir_b);
    if (a.metrics != b.metrics) throw SchemaError("metric columns differ between the two runs");
    std::set<std::string> keys_a, keys_b;
    for (const auto& [k, _] : a.rows) keys_a.insert(k);
    for (const auto& [k, _] : b.rows) keys_b.insert(k);
    if (keys_a != keys_b) throw SchemaError("the two runs cover different (variant, rps, seed) cells");

    json out;
    out["baseline"] = dir_a;
    out["candidate"] = dir_b;
    auto rows = json::array();
    for (const auto& [key, ma] : a.rows) {
        const auto& mb = b.rows.at(key);
        json r{{"cell", key}};
        json d = json::object();
        for (const auto& m : a.metrics) {
            auto ia = ma.find(m);
            auto ib = mb.find(m);
            if (ia == ma.end() || ib == mb.end()) {
                d[m] = nullptr;
                continue;
            }
            auto pct = relative_change_pct(ia->second, ib->second);
            d[m] = {{"baseline", ia->second}, {"candidate", ib->second},
                    {"relative_change_pct", pct ? json(*pct) : json(nullptr)}};
        }
        r["metrics"] = d;
        rows.push_back(std::move(r));
    }
    out["cells"] = rows;
    return out;
}

}  // namespace lorasim
