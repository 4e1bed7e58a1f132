// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>

#include "lorasim/scheduler.hpp"
#include "oracles.hpp"

namespace lorasim {
namespace {

using FakeOracle = oracle::TableAdmission;
static_assert(AdmissionOracle<FakeOracle>);

RequestTable make_table(std::size_t n) { return oracle::numbered_requests(n); }

std::vector<std::int64_t> needs_of(const BatchTrace& tr) {
    std::vector<std::int64_t> v;
    for (const auto& a : tr.admitted) v.push_back(a.need);
    return v;
}

TEST(ComputeWrs, Fixtures) {
    SchedulerConfig c;
    c.max_input = 2048;
    c.max_output = 1024;
    c.max_rank = 128;
    EXPECT_DOUBLE_EQ(compute_wrs(2048, 1024, 128, c), 1.0);
    EXPECT_DOUBLE_EQ(compute_wrs(1024, 512, 64, c), 0.5);
    EXPECT_DOUBLE_EQ(compute_wrs(512, 128, 32, c), 0.3 * 0.25 + 0.5 * 0.125 + 0.2 * 0.25);
    EXPECT_NEAR(compute_wrs(512, 128, 32, c), 0.1875, 1e-15);
    // Inputs beyond the maxima are clipped.
    EXPECT_DOUBLE_EQ(compute_wrs(100000, 100000, 256, c), 1.0);
}

TEST(SolveQuotas, TokMinFixture) {
    const QueueDemand d{256, std::chrono::seconds{2}, 1.5, std::chrono::seconds{10}};
    const auto sol = solve_quotas(std::span<const QueueDemand>(&d, 1), 1000);
    EXPECT_EQ(sol.tok_min[0], 820);
    EXPECT_TRUE(sol.feasible);
    EXPECT_EQ(sol.quota[0], 1000);
}

TEST(SolveQuotas, LimitingCaseGoesToZero) {
    const QueueDemand d{256, std::chrono::seconds{2}, 0.0, Duration{0}};  // SLO unset = infinite
    EXPECT_EQ(solve_quotas(std::span<const QueueDemand>(&d, 1), 10).tok_min[0], 0);
}

TEST(SolveQuotas, SurplusProportionalAndConserved) {
    const std::vector<QueueDemand> d{{100, std::chrono::seconds{1}, 1.0, std::chrono::seconds{1}},   // 200
                                     {300, std::chrono::seconds{1}, 1.0, std::chrono::seconds{1}}};  // 600
    const auto sol = solve_quotas(d, 1000);
    EXPECT_EQ(sol.tok_min, (std::vector<std::int64_t>{200, 600}));
    EXPECT_EQ(sol.quota, (std::vector<std::int64_t>{250, 750}));
}

TEST(SolveQuotas, InfeasibleSplitsWholePool) {
    const std::vector<QueueDemand> d{{100, std::chrono::seconds{1}, 1.0, std::chrono::seconds{1}},
                                     {300, std::chrono::seconds{1}, 1.0, std::chrono::seconds{1}}};
    const auto sol = solve_quotas(d, 401);
    EXPECT_FALSE(sol.feasible);
    EXPECT_EQ(sol.quota[0] + sol.quota[1], 401);
    EXPECT_EQ(sol.quota, (std::vector<std::int64_t>{100, 301}));
}

TEST(SolveQuotas, RandomizedConservation) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<QueueDemand> d(1 + rng() % 4);
        for (auto& q : d)
            q = {static_cast<double>(1 + rng() % 500), Duration{static_cast<std::int64_t>(rng() % 3'000'000)},
                 static_cast<double>(rng() % 100) / 10.0, Duration{1 + static_cast<std::int64_t>(rng() % 20'000'000)}};
        const std::int64_t total = static_cast<std::int64_t>(rng() % 50'000);
        const auto sol = solve_quotas(d, total);
        EXPECT_EQ(std::accumulate(sol.quota.begin(), sol.quota.end(), std::int64_t{0}), total);
        for (std::size_t q = 0; q < d.size(); ++q) {
            EXPECT_GE(sol.quota[q], 0);
            if (sol.feasible) {
                EXPECT_GE(sol.quota[q], sol.tok_min[q]);
            }
        }
    }
}

TEST(GenerateBatch, HandTracedTwoPhaseFixture) {
    // Q1 needs [30,30,30,30], Q2 [40], Q3 [50,80]; quotas 100 each.
    auto reqs = make_table(7);
    FakeOracle o{{30, 30, 30, 30, 40, 50, 80}, {}, true, {}};
    std::vector<PendingQueue> q{{RequestId{0}, RequestId{1}, RequestId{2}, RequestId{3}}, {RequestId{4}},
                                {RequestId{5}, RequestId{6}}};
    const std::vector<std::int64_t> budgets{100, 100, 100};
    const auto tr = generate_batch(q, std::span<const std::int64_t>(budgets), reqs, o, false);
    EXPECT_EQ(needs_of(tr), (std::vector<std::int64_t>{30, 30, 30, 40, 50, 30}));
    ASSERT_EQ(tr.admitted.size(), 6u);
    EXPECT_EQ(tr.admitted.back().id, RequestId{3});
    EXPECT_EQ(tr.admitted.back().phase, 2);
    EXPECT_EQ(tr.leftover_after_phase1, 60);
    EXPECT_EQ(tr.leftover_final, 30);
    EXPECT_EQ(tr.stranded, (std::vector<std::int64_t>{10, 0, 50}));
    EXPECT_TRUE(tr.conserves_quota());
    // The phase-2 admission is charged to the queue that donated the budget.
    ASSERT_EQ(reqs[3].charges.size(), 1u);
    EXPECT_EQ(reqs[3].charges[0].queue, 1u);
    EXPECT_EQ(q[2].front(), RequestId{6});
}

TEST(GenerateBatch, EmptyQueuesKeepEverything) {
    RequestTable reqs;
    FakeOracle o;
    std::vector<PendingQueue> q(3);
    const std::vector<std::int64_t> budgets{10, 20, 30};
    const auto tr = generate_batch(q, std::span<const std::int64_t>(budgets), reqs, o, true);
    EXPECT_TRUE(tr.admitted.empty());
    EXPECT_EQ(tr.leftover_final, 60);
    EXPECT_TRUE(tr.conserves_quota());
}

TEST(GenerateBatch, ZeroQuotaAdmitsNothing) {
    auto reqs = make_table(1);
    FakeOracle o{{5}, {}, true, {}};
    std::vector<PendingQueue> q{{RequestId{0}}};
    const std::vector<std::int64_t> budgets{0};
    EXPECT_TRUE(generate_batch(q, std::span<const std::int64_t>(budgets), reqs, o, true).admitted.empty());
}

TEST(GenerateBatch, LeftoverSpansSeveralDonors) {
    // Q1 and Q2 drain with 20 and 30 left; Q3's 45 takes both parts.
    auto reqs = make_table(3);
    FakeOracle o{{80, 70, 45}, {}, true, {}};
    std::vector<PendingQueue> q{{RequestId{0}}, {RequestId{1}}, {RequestId{2}}};
    const std::vector<std::int64_t> budgets{100, 100, 0};
    const auto tr = generate_batch(q, std::span<const std::int64_t>(budgets), reqs, o, false);
    ASSERT_EQ(tr.admitted.size(), 3u);
    ASSERT_EQ(reqs[2].charges.size(), 2u);
    EXPECT_EQ(reqs[2].charges[0].queue, 0u);
    EXPECT_EQ(reqs[2].charges[0].tokens, 20);
    EXPECT_EQ(reqs[2].charges[1].queue, 1u);
    EXPECT_EQ(reqs[2].charges[1].tokens, 25);
    EXPECT_EQ(tr.leftover_final, 5);
    EXPECT_TRUE(tr.conserves_quota());
}

TEST(Bypass, MemoryBlockedHeadLetsYoungerRequestThrough) {
    auto reqs = make_table(3);
    FakeOracle o{{40, 10, 10}, {0}, true, {}};
    std::vector<PendingQueue> q{{RequestId{0}, RequestId{1}, RequestId{2}}};
    const std::vector<std::int64_t> budgets{100};
    const auto tr = generate_batch(q, std::span<const std::int64_t>(budgets), reqs, o, true);
    ASSERT_EQ(tr.admitted.size(), 2u);
    EXPECT_TRUE(tr.admitted[0].bypass);
    EXPECT_TRUE(reqs[1].bypass_flag);
    EXPECT_EQ(reqs[1].displaced_head, RequestId{0});
    EXPECT_EQ(q[0].front(), RequestId{0});
}

TEST(Bypass, CandidateRejectedByOracleStays) {
    auto reqs = make_table(2);
    FakeOracle o{{40, 10}, {0}, false, {}};
    std::vector<PendingQueue> q{{RequestId{0}, RequestId{1}}};
    const std::vector<std::int64_t> budgets{100};
    EXPECT_TRUE(generate_batch(q, std::span<const std::int64_t>(budgets), reqs, o, true).admitted.empty());
    EXPECT_EQ(q[0].size(), 2u);
}

TEST(Bypass, CandidateWithoutMemoryStays) {
    auto reqs = make_table(2);
    FakeOracle o{{40, 10}, {0, 1}, true, {}};
    std::vector<PendingQueue> q{{RequestId{0}, RequestId{1}}};
    const std::vector<std::int64_t> budgets{100};
    EXPECT_TRUE(generate_batch(q, std::span<const std::int64_t>(budgets), reqs, o, true).admitted.empty());
}

TEST(Bypass, QuotaBlockedHeadIsNotBypassed) {
    auto reqs = make_table(2);
    FakeOracle o{{150, 10}, {}, true, {}};
    std::vector<PendingQueue> q{{RequestId{0}, RequestId{1}}};
    const std::vector<std::int64_t> budgets{100};
    EXPECT_TRUE(generate_batch(q, std::span<const std::int64_t>(budgets), reqs, o, true).admitted.empty());
    EXPECT_TRUE(o.admit_attempts.empty());
}

TEST(EnforceSquash, Rules) {
    RequestState r;
    r.bypass_flag = true;
    r.predicted_output_tokens = 50;
    r.tokens_generated = 48;
    EXPECT_EQ(enforce_squash(r, true), SquashDecision::Continue);
    r.tokens_generated = 51;
    EXPECT_EQ(enforce_squash(r, true), SquashDecision::Squash);
    EXPECT_EQ(enforce_squash(r, false), SquashDecision::Continue);
    r.bypass_flag = false;
    EXPECT_EQ(enforce_squash(r, true), SquashDecision::Continue);
}

TEST(Baselines, FifoHeadOfLineBlocking) {
    auto reqs = make_table(2);
    FakeOracle o{{90, 10}, {}, true, {}};
    PendingQueue p{RequestId{0}, RequestId{1}};
    EXPECT_TRUE(baseline_next(SchedulerPolicy::FIFO, p, 50, reqs, o, 0.0, kSimStart).admitted.empty());
    EXPECT_EQ(p.size(), 2u);
}

TEST(Baselines, SjfSortsByPrediction) {
    auto reqs = make_table(3);
    reqs[0].predicted_output_tokens = 100;
    reqs[1].predicted_output_tokens = 5;
    reqs[2].predicted_output_tokens = 40;
    FakeOracle o{{1, 1, 1}, {}, true, {}};
    PendingQueue p{RequestId{0}, RequestId{1}, RequestId{2}};
    const auto tr = baseline_next(SchedulerPolicy::SJF, p, 100, reqs, o, 0.0, at_us(10));
    ASSERT_EQ(tr.admitted.size(), 3u);
    EXPECT_EQ(tr.admitted[0].id, RequestId{1});
    EXPECT_EQ(tr.admitted[1].id, RequestId{2});
    EXPECT_EQ(tr.admitted[2].id, RequestId{0});
}

TEST(Baselines, SjfWithHugeAgingIsFifo) {
    auto reqs = make_table(3);
    reqs[0].predicted_output_tokens = 100;
    reqs[1].predicted_output_tokens = 5;
    reqs[2].predicted_output_tokens = 40;
    for (std::size_t i = 0; i < 3; ++i) reqs[i].spec.arrival = at_us(static_cast<std::int64_t>(i) * 1'000'000);
    FakeOracle o{{1, 1, 1}, {}, true, {}};
    PendingQueue p{RequestId{2}, RequestId{0}, RequestId{1}};
    const auto tr = baseline_next(SchedulerPolicy::SJF, p, 100, reqs, o, 1e9, at_us(5'000'000));
    ASSERT_EQ(tr.admitted.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(tr.admitted[i].id, RequestId{i});
}

// --- Stateful scheduler -----------------------------------------------------

RequestCostEstimator simple_estimator() {
    RequestCostEstimator e;
    e.isolated = [](std::int64_t in, std::int64_t out, int rank) {
        return Duration{1000 * (in + 10 * out) + 100 * rank};
    };
    e.adapter_tokens = [](int rank) { return std::int64_t{4} * rank; };
    e.rank = [](AdapterId) { return 8; };
    return e;
}

struct Harness {
    SchedulerConfig cfg;
    RequestTable reqs;

    Harness() {
        cfg.refresh_period = std::chrono::seconds{100};
        cfg.max_input = 1000;
        cfg.max_output = 1000;
    }

    // Enqueues `n` requests with WRS values drawn around the given centers.
    void feed(Scheduler& s, const std::vector<std::int64_t>& sizes, std::int64_t t0_us, std::uint64_t seed,
              std::uint64_t jitter = 5) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            RequestState r;
            r.spec.id = RequestId{reqs.size()};
            r.spec.arrival = at_us(t0_us + static_cast<std::int64_t>(i) * 1000);
            r.spec.input_tokens = sizes[i] + static_cast<std::int64_t>(rng() % jitter);
            r.predicted_output_tokens = sizes[i];
            reqs.push_back(r);
            s.enqueue(reqs.back(), 8, reqs.back().spec.arrival, 10);
        }
    }
};

std::vector<std::int64_t> bimodal(std::size_t n) {
    std::vector<std::int64_t> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(i % 2 ? 800 : 50);
    return v;
}

TEST(Scheduler, InitialQuotasSplitPoolEvenly) {
    SchedulerConfig c;
    c.initial_boundaries = {0.2, 0.5};
    Scheduler s(c, 1001);
    EXPECT_EQ(s.num_queues(), 3u);
    EXPECT_EQ(s.quotas(), (std::vector<std::int64_t>{334, 334, 333}));
}

TEST(Scheduler, FifoUsesOneQueue) {
    SchedulerConfig c;
    c.policy = SchedulerPolicy::FIFO;
    c.initial_boundaries = {0.2, 0.5};
    Scheduler s(c, 100);
    EXPECT_EQ(s.num_queues(), 1u);
}

TEST(Scheduler, EmptyWindowLeavesLayout) {
    Harness h;
    Scheduler s(h.cfg, 10'000);
    const auto rep = s.refresh(at_us(1), h.reqs, simple_estimator());
    EXPECT_FALSE(rep.changed);
    EXPECT_EQ(s.num_queues(), 1u);
    EXPECT_EQ(s.quotas(), (std::vector<std::int64_t>{10'000}));
}

TEST(Scheduler, StationaryWorkloadGivesStableLayout) {
    Harness h;
    Scheduler s(h.cfg, 10'000);
    h.feed(s, bimodal(200), 0, 1);
    const auto a = s.refresh(at_us(100'000'000), h.reqs, simple_estimator());
    h.feed(s, bimodal(200), 100'000'000, 1);
    const auto b = s.refresh(at_us(200'000'000), h.reqs, simple_estimator());
    EXPECT_EQ(a.layout.k, 2u);
    EXPECT_EQ(b.layout.k, 2u);
    EXPECT_NEAR(a.layout.boundaries[0], b.layout.boundaries[0], 1e-3);
    EXPECT_EQ(std::accumulate(b.quotas.quota.begin(), b.quotas.quota.end(), std::int64_t{0}), 10'000);
}

TEST(Scheduler, ShiftToUnimodalShrinksK) {
    Harness h;
    Scheduler s(h.cfg, 10'000);
    h.feed(s, bimodal(200), 0, 1);
    EXPECT_EQ(s.refresh(at_us(100'000'000), h.reqs, simple_estimator()).layout.k, 2u);
    h.feed(s, std::vector<std::int64_t>(200, 300), 150'000'000, 2, 1);
    const auto rep = s.refresh(at_us(250'000'000), h.reqs, simple_estimator());
    // Oracle: the fit on the second window alone (the first has aged out).
    std::vector<double> w;
    for (std::size_t i = 200; i < 400; ++i) w.push_back(h.reqs[i].wrs);
    EXPECT_EQ(rep.samples, 200u);
    EXPECT_EQ(rep.layout.k, fit_layout(w, h.cfg.k_max, h.cfg.kmeans_stop_ratio).k);
    EXPECT_EQ(rep.layout.k, 1u);
    EXPECT_EQ(s.num_queues(), 1u);
    EXPECT_EQ(s.pending_count(), 400u);
}

TEST(Scheduler, RefreshRebucketsPendingAndKeepsArrivalOrder) {
    Harness h;
    Scheduler s(h.cfg, 10'000);
    h.feed(s, bimodal(40), 0, 3);
    s.refresh(at_us(1'000'000), h.reqs, simple_estimator());
    ASSERT_EQ(s.num_queues(), 2u);
    for (std::size_t q = 0; q < 2; ++q) {
        const auto& p = s.pending(q);
        EXPECT_EQ(p.size(), 20u);
        for (std::size_t i = 1; i < p.size(); ++i) EXPECT_LT(p[i - 1], p[i]);
        for (auto id : p) EXPECT_EQ(h.reqs[index_of(id)].queue_index, q);
    }
}

TEST(Scheduler, ChargesFollowAdmissionsAndReleases) {
    Harness h;
    h.cfg.initial_boundaries = {0.5};
    Scheduler s(h.cfg, 120);
    h.feed(s, {50, 50, 900}, 0, 4);
    FakeOracle o{{30, 30, 40}, {}, true, {}};
    const auto tr = s.next_batch(h.reqs, o, at_us(10));
    EXPECT_EQ(tr.admitted.size(), 3u);
    EXPECT_EQ(s.recompute_charged(h.reqs), (std::vector<std::int64_t>{s.charged(0), s.charged(1)}));
    EXPECT_EQ(s.charged(0) + s.charged(1), 100);
    s.release(h.reqs[0]);
    EXPECT_EQ(s.charged(0) + s.charged(1), 70);
    s.requeue(h.reqs[1]);
    EXPECT_EQ(s.pending_count(), 1u);
    EXPECT_EQ(s.charged(0) + s.charged(1), 40);
}

TEST(Scheduler, ForceAdmitUsesCombinedQuota) {
    Harness h;
    h.cfg.initial_boundaries = {0.5};
    Scheduler s(h.cfg, 100);
    h.feed(s, {900}, 0, 5);
    FakeOracle o{{80}, {}, true, {}};
    EXPECT_TRUE(s.next_batch(h.reqs, o, at_us(1)).admitted.empty());
    ASSERT_EQ(s.force_admit(h.reqs, o), RequestId{0});
    EXPECT_EQ(s.charged(0) + s.charged(1), 80);
    EXPECT_EQ(s.charged(1), 50);  // own queue first
}

}  // namespace
}  // namespace lorasim
