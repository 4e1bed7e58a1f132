// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lorasim/scenario.hpp"
#include "oracles.hpp"

namespace {

using namespace lorasim;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double ms(std::int64_t us) { return static_cast<double>(us) / 1e3; }

unsigned jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

// Runs every config on the thread pool; results keep the input order.
std::vector<RunResult> run_all(const std::vector<SimConfig>& cfgs) {
    std::vector<RunResult> out(cfgs.size());
    parallel_for(cfgs.size(), jobs(), [&](std::size_t i) { out[i] = simulate(cfgs[i]); });
    return out;
}

RunSummary summary_of(const SimConfig& c, const RunResult& r) { return summarize(r.records, c.metrics, r.horizon_us); }

// --- 1 ---------------------------------------------------------------------------

Outcome formula_fixtures() {
    SchedulerConfig s;
    s.max_input = 2048;
    s.max_output = 1024;
    s.max_rank = 128;
    const double w_max = compute_wrs(2048, 1024, 128, s);
    const double w_half = compute_wrs(1024, 512, 64, s);
    const double w_ex = compute_wrs(512, 128, 32, s);
    const double score = eviction_score(0.5, 1.0, 0.25, ScoreWeights{});
    const QueueDemand d{256, std::chrono::seconds{2}, 1.5, std::chrono::seconds{10}};
    const auto tok = solve_quotas(std::span<const QueueDemand>(&d, 1), 1000).tok_min[0];
    const bool ok = std::abs(w_max - 1.0) < 1e-12 && std::abs(w_half - 0.5) < 1e-12 && std::abs(w_ex - 0.1875) < 1e-12 &&
                    std::abs(score - 0.4375) < 1e-12 && tok == 820;
    return {ok, fmt("wrs %.6g / %.6g / %.6g (want 1 / 0.5 / 0.1875), eviction score %.6g (want 0.4375), Tok_min %lld "
                    "(want 820)",
                    w_max, w_half, w_ex, score, static_cast<long long>(tok))};
}

// --- 2 ---------------------------------------------------------------------------

Outcome batch_hand_trace() {
    auto reqs = oracle::numbered_requests(7);
    oracle::TableAdmission o{{30, 30, 30, 30, 40, 50, 80}, {}, true, {}};
    std::vector<PendingQueue> q{{RequestId{0}, RequestId{1}, RequestId{2}, RequestId{3}}, {RequestId{4}},
                                {RequestId{5}, RequestId{6}}};
    const std::vector<std::int64_t> budgets{100, 100, 100};
    const auto tr = generate_batch(q, std::span<const std::int64_t>(budgets), reqs, o, true);
    std::vector<std::int64_t> got;
    std::string list;
    for (const auto& a : tr.admitted) {
        got.push_back(a.need);
        list += (list.empty() ? "" : ",") + std::to_string(a.need);
    }
    const bool ok = got == std::vector<std::int64_t>{30, 30, 30, 40, 50, 30} && tr.leftover_final == 30 &&
                    tr.leftover_after_phase1 == 60 && tr.conserves_quota();
    return {ok, fmt("batch {%s}, leftover after phase 1 %lld, final leftover %lld (want {30,30,30,40,50,30}, 60, 30)",
                    list.c_str(), static_cast<long long>(tr.leftover_after_phase1),
                    static_cast<long long>(tr.leftover_final))};
}

// --- 3 ---------------------------------------------------------------------------

// One queue, one rank-8 adapter, exact predictions, exponential arrivals.
// The pool is set to Tok_min for the largest request (S = 256 tokens).
Outcome quota_law() {
    constexpr double kLambda = 1.5;
    constexpr std::size_t kRequests = 12'000;
    SimConfig c;
    c.workload.ranks = {8};
    c.workload.num_adapters = 1;
    c.predictor.accuracy = 1.0;
    c.predictor.bucket_edges.clear();
    for (std::int64_t e = 1; e <= 97; ++e) c.predictor.bucket_edges.push_back(e);
    c.scheduler.policy = SchedulerPolicy::MLQ;
    c.scheduler.k_max = 1;
    c.cache.policy = CachePolicy::LRU;
    c.cache.prefetch = PrefetchMode::Off;

    const Duration d = isolated_time(128, 96, 8, c.cost, c.hardware);
    const Duration slo = 5 * d;
    const std::int64_t s_max = 128 + 96 + adapter_size_tokens(8, c.hardware);
    const auto tok_min =
        static_cast<std::int64_t>(std::ceil(static_cast<double>(s_max) * to_seconds(d) * (kLambda + 1.0 / to_seconds(slo))));
    c.scheduler.token_pool_fraction = (static_cast<double>(tok_min) + 0.5) / static_cast<double>(c.hardware.total_token_slots);
    c.scheduler.quota_slo = slo;

    Rng arrivals(11, kArrivalStream), lengths(11, kLengthStream);
    std::vector<RequestSpec> wl;
    double t = 0;
    for (std::size_t i = 0; i < kRequests; ++i) {
        t += arrivals.exponential(kLambda);
        const auto in = 32 + static_cast<std::int64_t>(lengths.index(97));
        const auto out = 16 + static_cast<std::int64_t>(lengths.index(81));
        wl.push_back({RequestId{i}, at_us(std::llround(t * 1e6)), in, out, AdapterId{0}});
    }
    const auto res = Engine(c, wl).run();
    const auto cut = res.horizon_us / 10;
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : res.records)
        if (r.arrival_us >= cut) {
            sum += static_cast<double>(r.e2e_us);
            ++n;
        }
    const double mean = sum / static_cast<double>(n);
    const double limit = 1.1 * static_cast<double>(slo.count());
    return {token_pool(c) == tok_min && mean <= limit,
            fmt("S=%lld, D=%.1f ms, SLO=%.1f ms, quota=Tok_min=%lld; mean time-in-system %.1f ms over %zu requests "
                "(limit %.1f ms)",
                static_cast<long long>(s_max), ms(d.count()), ms(slo.count()), static_cast<long long>(tok_min),
                mean / 1e3, n, limit / 1e3)};
}

// --- 4 ---------------------------------------------------------------------------

std::int64_t p99_of_top_wrs_decile(const std::vector<MetricsRecord>& recs, const std::vector<bool>& in_decile) {
    std::vector<std::int64_t> ttft;
    for (std::size_t i = 0; i < recs.size(); ++i)
        if (in_decile[i]) ttft.push_back(recs[i].ttft_us);
    return percentile(ttft, 99);
}

Outcome scheduler_ordering() {
    const auto s = make_preset("scheduler-ordering");
    const auto variant = [&](const std::string& n) {
        return *std::find_if(s.variants.begin(), s.variants.end(), [&](const PolicyVariant& v) { return v.name == n; });
    };
    const auto seed = s.seeds.front();

    // Saturation of the FIFO+NoCache baseline: completion rate under overload.
    std::vector<SimConfig> sat;
    for (double rps : {6.0, 7.0, 8.0}) {
        auto c = cell_config(s, variant("fifo-nocache"), rps, seed);
        c.workload.duration = std::chrono::seconds{600};
        sat.push_back(c);
    }
    double saturation = 0;
    for (const auto& r : run_all(sat)) saturation = std::max(saturation, completion_throughput(r.records));
    const double rps = 0.9 * saturation;

    std::vector<SimConfig> cfgs;
    for (const char* n : {"fifo-nocache", "sjf-cache", "mlq-cache"}) {
        auto c = cell_config(s, variant(n), rps, seed);
        c.workload.duration = Duration{static_cast<std::int64_t>(std::llround(10'000 / rps * 1e6))};
        cfgs.push_back(c);
    }
    const auto runs = run_all(cfgs);
    const auto fifo = summary_of(cfgs[0], runs[0]);
    const auto mlq = summary_of(cfgs[2], runs[2]);

    // Top WRS decile of the measured requests (WRS does not depend on the policy).
    const auto& recs = runs[2].records;
    const auto cut = static_cast<std::int64_t>(cfgs[2].metrics.warmup_fraction * static_cast<double>(runs[2].horizon_us));
    std::vector<double> wrs;
    for (const auto& r : recs)
        if (r.arrival_us >= cut) wrs.push_back(r.wrs);
    const double threshold = percentile(wrs, 90);
    std::vector<bool> decile(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) decile[i] = recs[i].arrival_us >= cut && recs[i].wrs > threshold;
    const auto long_mlq = p99_of_top_wrs_decile(runs[2].records, decile);
    const auto long_sjf = p99_of_top_wrs_decile(runs[1].records, decile);

    const double reduction = 1.0 - static_cast<double>(mlq.p99_ttft_us) / static_cast<double>(fifo.p99_ttft_us);
    const bool ok = reduction >= 0.20 && long_mlq < long_sjf;
    return {ok, fmt("saturation %.2f rps, run at %.2f rps (%zu requests): P99 TTFT MLQ+cache %.0f ms vs FIFO+NoCache "
                    "%.0f ms (%.1f%% lower, need >= 20%%); top-decile P99 TTFT MLQ %.0f ms vs SJF %.0f ms",
                    saturation, rps, runs[0].records.size(), ms(mlq.p99_ttft_us), ms(fifo.p99_ttft_us),
                    100 * reduction, ms(long_mlq), ms(long_sjf))};
}

// --- 5 ---------------------------------------------------------------------------

Outcome cache_ordering() {
    const auto s = make_preset("eviction-policies");
    std::vector<SimConfig> cfgs;
    for (auto seed : s.seeds)
        for (const auto& v : s.variants) cfgs.push_back(cell_config(s, v, s.rps.front(), seed));
    const auto runs = run_all(cfgs);
    bool ok = true;
    std::string detail;
    const std::size_t nv = s.variants.size();
    for (std::size_t k = 0; k < s.seeds.size(); ++k) {
        std::vector<std::int64_t> p99;
        std::vector<std::int64_t> bytes;
        for (std::size_t v = 0; v < nv; ++v) {
            p99.push_back(summary_of(cfgs[k * nv + v], runs[k * nv + v]).p99_ttft_us);
            bytes.push_back(runs[k * nv + v].counters.bytes_transferred);
        }
        // Variant order: nocache, lru, fairshare, cost-aware.
        const bool order = p99[0] > p99[1] && p99[1] >= p99[2] && p99[2] >= p99[3];
        const bool fewer = bytes[3] < bytes[1];
        ok = ok && order && fewer;
        detail += fmt("%sseed %llu: P99 TTFT %.0f/%.0f/%.0f/%.0f ms%s, GB LRU %.1f vs CostAware %.1f%s",
                      detail.empty() ? "" : "; ", static_cast<unsigned long long>(s.seeds[k]), ms(p99[0]), ms(p99[1]),
                      ms(p99[2]), ms(p99[3]), order ? "" : " (order broken)", static_cast<double>(bytes[1]) / 1e9,
                      static_cast<double>(bytes[3]) / 1e9, fewer ? "" : " (not fewer)");
    }
    return {ok, "NoCache/LRU/FairShare/CostAware " + detail};
}

// --- 6 ---------------------------------------------------------------------------

Outcome link_contention() {
    const auto s = make_preset("link-contention");
    std::vector<SimConfig> cfgs;
    for (const auto& v : s.variants) cfgs.push_back(cell_config(s, v, s.rps.front(), s.seeds.front()));
    const auto runs = run_all(cfgs);
    const auto one = runs[0].counters.bytes_transferred;
    const auto many = runs[1].counters.bytes_transferred;
    const double ratio = one > 0 ? static_cast<double>(many) / static_cast<double>(one) : INFINITY;
    return {ratio >= 100, fmt("NoCache bytes: 500 adapters %.2f GB vs 1 adapter %.3f GB, ratio %.0fx (need >= 100x)",
                              static_cast<double>(many) / 1e9, static_cast<double>(one) / 1e9, ratio)};
}

// --- 7 ---------------------------------------------------------------------------

std::string csv_of(const RunResult& r) {
    std::ostringstream os;
    write_records_csv(os, r.records);
    return os.str();
}

// Every preset cell (first rps and seed, shortened) runs twice with invariant
// checks on; any violation throws, and the two CSVs must match byte for byte.
Outcome invariant_suite() {
    std::vector<SimConfig> cfgs;
    std::vector<std::string> names;
    for (const auto& p : preset_list()) {
        const auto s = make_preset(p.name);
        for (const auto& v : s.variants) {
            auto c = cell_config(s, v, s.rps.back(), s.seeds.front());
            c.workload.duration = std::min(c.workload.duration, Duration{std::chrono::seconds{240}});
            c.scheduler.refresh_period = std::chrono::seconds{60};
            c.check_invariants = true;
            cfgs.push_back(c);
            cfgs.push_back(c);
            names.push_back(p.name + "/" + v.name);
        }
    }
    std::vector<std::string> csv(cfgs.size()), errors(cfgs.size());
    std::vector<std::int64_t> checks(cfgs.size(), 0);
    parallel_for(cfgs.size(), jobs(), [&](std::size_t i) {
        try {
            const auto r = simulate(cfgs[i]);
            csv[i] = csv_of(r);
            checks[i] = r.counters.invariant_checks;
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    std::string bad;
    std::int64_t total_checks = 0;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto a = 2 * i, b = 2 * i + 1;
        total_checks += checks[a] + checks[b];
        if (!errors[a].empty() || !errors[b].empty()) bad += " " + names[i] + ": " + errors[a] + errors[b];
        else if (csv[a] != csv[b]) bad += " " + names[i] + ": CSVs differ";
    }
    return {bad.empty(), bad.empty() ? fmt("%zu preset cells x 2 runs, %lld invariant checks, identical CSVs", names.size(),
                                           static_cast<long long>(total_checks))
                                     : "failures:" + bad};
}

// --- 8 ---------------------------------------------------------------------------

Outcome subsumption() {
    std::size_t fifo_ok = 0, lru_ok = 0, evictions = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
        const auto [fifo, mlq] = oracle::fifo_vs_single_queue(t);
        if (!fifo.empty() && fifo == mlq) ++fifo_ok;
        const auto ref = oracle::eviction_trace(t + 1, CachePolicy::LRU, {}, true);
        evictions += ref.size();
        if (oracle::eviction_trace(t + 1, CachePolicy::CostAware, {0.0, 1.0, 0.0}, false) == ref) ++lru_ok;
    }
    return {fifo_ok == 100 && lru_ok == 100,
            fmt("single unbounded queue == FIFO admission order on %zu/100 traces; CostAware(0,1,0) == LRU oracle "
                "eviction sequence on %zu/100 traces (%zu evictions)",
                fifo_ok, lru_ok, evictions)};
}

// --- 9 ---------------------------------------------------------------------------

Outcome squash_bound() {
    const auto s = make_preset("squash");
    const auto& v = *std::find_if(s.variants.begin(), s.variants.end(), [](const PolicyVariant& x) { return x.name == "acc-0.8"; });
    std::vector<SimConfig> cfgs;
    for (auto seed : s.seeds) cfgs.push_back(cell_config(s, v, s.rps.front(), seed));
    const auto runs = run_all(cfgs);
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        const auto sum = summary_of(cfgs[i], runs[i]);
        ok = ok && sum.squash_rate <= 0.10 && !sum.squash_alert;
        detail += fmt("%sseed %llu %.2f%%", detail.empty() ? "" : ", ", static_cast<unsigned long long>(cfgs[i].seed),
                      100 * sum.squash_rate);
    }
    return {ok, "squash rate at 80% accuracy, " + detail + " (limit 10%)"};
}

// --- 10 --------------------------------------------------------------------------

Outcome kmeans_fixtures() {
    const SchedulerConfig d;
    const auto bi = oracle::bimodal_fixture();
    const auto tri = oracle::trimodal_fixture();
    const auto lb = fit_layout(bi, d.k_max, d.kmeans_stop_ratio);
    const auto lt = fit_layout(tri, d.k_max, d.kmeans_stop_ratio);
    auto matches_oracle = [](const QueueLayout& l, const std::vector<double>& x) {
        const auto best = oracle::exhaustive_kmeans(x, l.k);
        for (std::size_t j = 0; j + 1 < l.k; ++j)
            if (std::abs(l.boundaries[j] - (best.centroids[j] + best.centroids[j + 1]) / 2) > 1e-9) return false;
        return true;
    };
    const bool ok = lb.k == 2 && std::abs(lb.boundaries[0] - 0.5) <= 0.02 && lt.k == 3 && matches_oracle(lb, bi) &&
                    matches_oracle(lt, tri);
    return {ok, fmt("bimodal K=%zu boundary %.4f (want K=2, 0.5 +- 0.02); trimodal K=%zu; boundaries match the "
                    "exhaustive optimum: %s",
                    lb.k, lb.boundaries.empty() ? NAN : lb.boundaries[0], lt.k,
                    matches_oracle(lb, bi) && matches_oracle(lt, tri) ? "yes" : "no")};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"formula fixtures", formula_fixtures},
        {"two-phase batch hand trace", batch_hand_trace},
        {"quota law", quota_law},
        {"scheduler ordering", scheduler_ordering},
        {"cache ordering", cache_ordering},
        {"link contention", link_contention},
        {"invariant suite", invariant_suite},
        {"baseline subsumption", subsumption},
        {"squash bound", squash_bound},
        {"k-means configurator", kmeans_fixtures},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %2zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
