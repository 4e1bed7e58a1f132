// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "lorasim/config.hpp"
#include "lorasim/kmeans.hpp"
#include "lorasim/model.hpp"

namespace lorasim {

inline constexpr std::int64_t kUnboundedQuota = std::numeric_limits<std::int64_t>::max() / 64;

/// Weighted request size on inputs clipped to the normalization maxima.
inline double compute_wrs(std::int64_t input_tokens, std::int64_t predicted_output, int adapter_rank,
                          const SchedulerConfig& cfg) {
    const double in = static_cast<double>(std::min(input_tokens, cfg.max_input)) / static_cast<double>(cfg.max_input);
    const double out =
        static_cast<double>(std::min(predicted_output, cfg.max_output)) / static_cast<double>(cfg.max_output);
    const double ad = static_cast<double>(std::min(adapter_rank, cfg.max_rank)) / static_cast<double>(cfg.max_rank);
    return cfg.weight_input * in + cfg.weight_output * out + cfg.weight_adapter * ad;
}

// ---------------------------------------------------------------------------
// Quotas

struct QueueDemand {
    double max_size_tokens = 0.0;  // S
    Duration expected{};           // D
    double arrival_rate = 0.0;     // lambda, requests per second
    Duration slo{};
};

struct QuotaSolution {
    std::vector<std::int64_t> tok_min;
    std::vector<std::int64_t> quota;
    std::int64_t total_min = 0;
    bool feasible = true;
};

/// Tok_min = ceil(S * D * (1/SLO + lambda)) per queue; any surplus of the pool
/// is split in proportion to Tok_min and the result always sums to `tok_total`.
/// When the minima do not fit, they are scaled down proportionally.
inline QuotaSolution solve_quotas(std::span<const QueueDemand> queues, std::int64_t tok_total) {
    QuotaSolution sol;
    const std::size_t k = queues.size();
    if (k == 0) return sol;
    for (const auto& q : queues) {
        const double d = to_seconds(q.expected);
        const double inv_slo = q.slo.count() > 0 ? 1.0 / to_seconds(q.slo) : 0.0;
        // Guard against 819.2000000001-style float noise before the ceiling.
        const double raw = q.max_size_tokens * d * (inv_slo + q.arrival_rate);
        const auto tok = static_cast<std::int64_t>(std::ceil(raw - 1e-9));
        sol.tok_min.push_back(std::max<std::int64_t>(tok, 0));
        sol.total_min += sol.tok_min.back();
    }
    sol.quota.assign(k, 0);
    if (sol.total_min > tok_total) sol.feasible = false;

    const std::int64_t weight_total = sol.total_min;
    auto split = [&](std::int64_t amount, bool add_to_min) {
        // Largest-remainder apportionment; equal shares when every weight is zero.
        std::vector<std::int64_t> share(k, 0);
        std::vector<std::pair<double, std::size_t>> rema;
        std::int64_t given = 0;
        for (std::size_t q = 0; q < k; ++q) {
            const double exact = weight_total > 0 ? static_cast<double>(amount) *
                                                        static_cast<double>(sol.tok_min[q]) /
                                                        static_cast<double>(weight_total)
                                                  : static_cast<double>(amount) / static_cast<double>(k);
            share[q] = static_cast<std::int64_t>(std::floor(exact));
            given += share[q];
            rema.push_back({exact - static_cast<double>(share[q]), q});
        }
        std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
        for (std::size_t i = 0; given < amount; ++i, ++given) ++share[rema[i % k].second];
        for (std::size_t q = 0; q < k; ++q) sol.quota[q] = (add_to_min ? sol.tok_min[q] : 0) + share[q];
    };
    if (sol.feasible) split(tok_total - sol.total_min, true);
    else split(tok_total, false);
    return sol;
}

// ---------------------------------------------------------------------------
// Batch generation

template <class O>
concept AdmissionOracle = requires(O& o, RequestState& r, const RequestState& head) {
    { o.need_tokens(r) } -> std::convertible_to<std::int64_t>;
    // false means the request could not get memory for its KV space or adapter.
    { o.try_admit(r) } -> std::same_as<bool>;
    { o.may_bypass(head, r) } -> std::same_as<bool>;
};

struct AdmissionRecord {
    RequestId id{};
    std::size_t queue = 0;
    int phase = 1;
    bool bypass = false;
    std::int64_t need = 0;
};

struct BatchTrace {
    std::vector<AdmissionRecord> admitted;
    std::vector<std::int64_t> budgets;
    std::vector<std::int64_t> consumed_phase1;
    std::vector<std::int64_t> consumed_phase2;
    std::vector<std::int64_t> stranded;
    std::int64_t leftover_after_phase1 = 0;
    std::int64_t leftover_final = 0;

    std::int64_t consumed_total() const {
        std::int64_t s = 0;
        for (auto v : consumed_phase1) s += v;
        for (auto v : consumed_phase2) s += v;
        return s;
    }

    /// consumed + final leftover + stranded == sum of budgets.
    bool conserves_quota() const {
        std::int64_t lhs = consumed_total() + leftover_final, rhs = 0;
        for (auto v : stranded) lhs += v;
        for (auto v : budgets) rhs += v;
        return lhs == rhs;
    }
};

using RequestTable = std::vector<RequestState>;
using PendingQueue = std::deque<RequestId>;

inline constexpr std::size_t kBypassScanLimit = 64;

namespace detail {

// Leftover pool made of (queue, tokens) contributions, drawn first-in first-out
// so every admitted token is charged to exactly one queue.
struct LeftoverPool {
    std::deque<QuotaCharge> parts;
    std::int64_t total = 0;

    void add(std::size_t q, std::int64_t tokens) {
        if (tokens <= 0) return;
        parts.push_back({q, tokens});
        total += tokens;
    }

    std::vector<QuotaCharge> take(std::int64_t tokens) {
        std::vector<QuotaCharge> out;
        total -= tokens;
        while (tokens > 0) {
            auto& p = parts.front();
            const auto t = std::min(tokens, p.tokens);
            out.push_back({p.queue, t});
            p.tokens -= t;
            tokens -= t;
            if (p.tokens == 0) parts.pop_front();
        }
        return out;
    }
};

template <AdmissionOracle O, class Charge>
std::int64_t put_batch(std::size_t q, PendingQueue& queue, std::int64_t budget, RequestTable& reqs, O& oracle,
                       bool bypass, int phase, BatchTrace& trace, Charge&& charge) {
    std::int64_t consumed = 0;
    auto admit = [&](std::size_t pos, std::int64_t need, bool via_bypass) {
        auto& r = reqs[index_of(queue[pos])];
        budget -= need;
        consumed += need;
        r.borrowed_quota = need;
        r.charges = charge(need);
        trace.admitted.push_back({r.spec.id, q, phase, via_bypass, need});
        queue.erase(queue.begin() + static_cast<std::ptrdiff_t>(pos));
    };
    while (!queue.empty()) {
        auto& head = reqs[index_of(queue.front())];
        const std::int64_t need = oracle.need_tokens(head);
        if (need > budget) break;
        if (oracle.try_admit(head)) {
            head.bypass_flag = false;
            head.displaced_head.reset();
            admit(0, need, false);
            continue;
        }
        // Head is blocked on memory: younger requests may jump ahead if they
        // finish before the head's memory is expected to free up.
        if (bypass) {
            std::size_t pos = 1, scanned = 0;
            while (pos < queue.size() && scanned < kBypassScanLimit && budget > 0) {
                ++scanned;
                auto& cand = reqs[index_of(queue[pos])];
                const std::int64_t cneed = oracle.need_tokens(cand);
                if (cneed <= budget && oracle.may_bypass(head, cand) && oracle.try_admit(cand)) {
                    cand.bypass_flag = true;
                    cand.displaced_head = head.spec.id;
                    admit(pos, cneed, true);
                } else {
                    ++pos;
                }
            }
        }
        break;
    }
    return consumed;
}

}  // namespace detail

/// Two-phase batch generation: every queue first admits within its own budget,
/// then budget left by drained queues is offered to all queues in priority order.
template <AdmissionOracle O>
BatchTrace generate_batch(std::vector<PendingQueue>& queues, std::span<const std::int64_t> budgets, RequestTable& reqs,
                          O& oracle, bool bypass) {
    BatchTrace trace;
    const std::size_t k = queues.size();
    trace.budgets.assign(budgets.begin(), budgets.end());
    trace.consumed_phase1.assign(k, 0);
    trace.consumed_phase2.assign(k, 0);
    trace.stranded.assign(k, 0);

    detail::LeftoverPool pool;
    for (std::size_t q = 0; q < k; ++q) {
        auto own = [q](std::int64_t need) { return std::vector<QuotaCharge>{{q, need}}; };
        const auto consumed = detail::put_batch(q, queues[q], budgets[q], reqs, oracle, bypass, 1, trace, own);
        trace.consumed_phase1[q] = consumed;
        if (queues[q].empty()) pool.add(q, budgets[q] - consumed);
        else trace.stranded[q] = budgets[q] - consumed;
    }
    trace.leftover_after_phase1 = pool.total;
    for (std::size_t q = 0; q < k; ++q) {
        if (pool.total == 0) break;
        auto from_pool = [&pool](std::int64_t need) { return pool.take(need); };
        trace.consumed_phase2[q] = detail::put_batch(q, queues[q], pool.total, reqs, oracle, bypass, 2, trace, from_pool);
    }
    trace.leftover_final = pool.total;
    return trace;
}

/// FIFO and SJF baselines: one ordered list, admit while the head fits, stop
/// at the first head that does not.
template <AdmissionOracle O>
BatchTrace baseline_next(SchedulerPolicy policy, PendingQueue& pending, std::int64_t budget, RequestTable& reqs,
                         O& oracle, double sjf_aging, TimePoint now) {
    if (policy == SchedulerPolicy::SJF) {
        auto key = [&](RequestId id) {
            const auto& r = reqs[index_of(id)];
            return static_cast<double>(r.predicted_output_tokens) - sjf_aging * to_seconds(now - r.spec.arrival);
        };
        std::stable_sort(pending.begin(), pending.end(), [&](RequestId a, RequestId b) {
            const double ka = key(a), kb = key(b);
            if (ka != kb) return ka < kb;
            return arrival_less(reqs[index_of(a)], reqs[index_of(b)]);
        });
    }
    std::vector<PendingQueue> one;
    one.push_back(std::move(pending));
    const std::int64_t b[1] = {budget};
    auto trace = generate_batch(one, std::span<const std::int64_t>(b, 1), reqs, oracle, false);
    pending = std::move(one[0]);
    return trace;
}

/// Returns Squash when a bypassing request outlives its prediction while the
/// head it jumped is still waiting.
enum class SquashDecision { Continue, Squash };

inline SquashDecision enforce_squash(const RequestState& r, bool displaced_head_waiting) {
    if (!r.bypass_flag) return SquashDecision::Continue;
    if (r.tokens_generated > r.predicted_output_tokens && displaced_head_waiting) return SquashDecision::Squash;
    return SquashDecision::Continue;
}

// ---------------------------------------------------------------------------
// Stateful scheduler

/// Cost callbacks the scheduler needs when it re-derives quotas.
struct RequestCostEstimator {
    std::function<Duration(std::int64_t input, std::int64_t output, int rank)> isolated;
    std::function<std::int64_t(int rank)> adapter_tokens;
    std::function<int(AdapterId)> rank;  // needed for windowed normalization
};

struct RefreshReport {
    TimePoint time{};
    bool changed = false;
    QueueLayout layout;
    std::vector<QueueDemand> demands;
    QuotaSolution quotas;
    std::size_t samples = 0;
};

class Scheduler {
public:
    Scheduler(SchedulerConfig cfg, std::int64_t token_pool) : cfg_(std::move(cfg)), pool_(token_pool) {
        if (cfg_.policy == SchedulerPolicy::MLQ && !cfg_.initial_boundaries.empty()) {
            layout_.boundaries = cfg_.initial_boundaries;
            layout_.k = layout_.boundaries.size() + 1;
        }
        reset_queues(layout_.k);
        // Until the first refresh the pool is split evenly.
        quotas_.assign(layout_.k, 0);
        for (std::size_t q = 0; q < layout_.k; ++q)
            quotas_[q] = cfg_.unbounded_quota ? kUnboundedQuota
                                              : pool_ / static_cast<std::int64_t>(layout_.k) +
                                                    (static_cast<std::int64_t>(q) < pool_ % static_cast<std::int64_t>(layout_.k) ? 1 : 0);
    }

    const SchedulerConfig& config() const { return cfg_; }
    SchedulerPolicy policy() const { return cfg_.policy; }
    const QueueLayout& layout() const { return layout_; }
    std::size_t num_queues() const { return queues_.size(); }
    const std::vector<std::int64_t>& quotas() const { return quotas_; }
    std::int64_t charged(std::size_t q) const { return charged_[q]; }
    std::int64_t available(std::size_t q) const { return quotas_[q] - charged_[q]; }
    const PendingQueue& pending(std::size_t q) const { return queues_[q]; }
    std::int64_t token_pool() const { return pool_; }

    std::size_t pending_count() const {
        std::size_t n = 0;
        for (const auto& q : queues_) n += q.size();
        return n;
    }

    double wrs_for(const RequestState& r, int rank) const {
        return compute_wrs(r.spec.input_tokens, r.predicted_output_tokens, rank, norm_cfg());
    }

    std::size_t queue_for(double wrs) const { return admit_index(wrs, layout_.boundaries); }

    /// Computes WRS, picks the queue, and appends in arrival order.
    void enqueue(RequestState& r, int rank, TimePoint now, std::int64_t need_tokens) {
        r.wrs = wrs_for(r, rank);
        window_.push_back({now, r.wrs, r.spec.input_tokens, r.predicted_output_tokens, rank, need_tokens});
        r.phase = Phase::Queued;
        insert_pending(r);
    }

    /// Removes a request that was admitted, returning its quota.
    void release(RequestState& r) {
        for (const auto& c : r.charges) charged_[c.queue] -= c.tokens;
        r.charges.clear();
        r.borrowed_quota = 0;
    }

    /// Squashed requests go back to their queue in arrival order.
    void requeue(RequestState& r) {
        release(r);
        r.phase = Phase::Queued;
        insert_pending(r);
    }

    std::vector<std::int64_t> budgets() const {
        std::vector<std::int64_t> b(queues_.size());
        for (std::size_t q = 0; q < b.size(); ++q) b[q] = std::max<std::int64_t>(0, available(q));
        return b;
    }

    template <AdmissionOracle O>
    BatchTrace next_batch(RequestTable& reqs, O& oracle, TimePoint now) {
        const auto b = budgets();
        BatchTrace trace;
        if (cfg_.policy == SchedulerPolicy::MLQ) trace = generate_batch(queues_, std::span<const std::int64_t>(b), reqs, oracle, cfg_.bypass);
        else trace = baseline_next(cfg_.policy, queues_[0], b[0], reqs, oracle, cfg_.sjf_aging, now);
        for (const auto& a : trace.admitted) {
            auto& r = reqs[index_of(a.id)];
            for (const auto& c : r.charges) charged_[c.queue] += c.tokens;
        }
        return trace;
    }

    /// Progress guarantee for an otherwise idle node: when nothing holds quota
    /// and no head fits its own budget or the leftover pool, the oldest head of
    /// the highest-priority non-empty queue is admitted against the combined
    /// quota of all queues, its own queue charged first.
    template <AdmissionOracle O>
    std::optional<RequestId> force_admit(RequestTable& reqs, O& oracle) {
        for (std::size_t q = 0; q < queues_.size(); ++q) {
            if (queues_[q].empty()) continue;
            auto& r = reqs[index_of(queues_[q].front())];
            const std::int64_t need = oracle.need_tokens(r);
            std::int64_t room = 0;
            for (std::size_t j = 0; j < queues_.size(); ++j) room += std::max<std::int64_t>(0, available(j));
            if (need > room || !oracle.try_admit(r)) return std::nullopt;
            std::vector<QuotaCharge> ch;
            std::int64_t left = need;
            for (std::size_t k = 0; k < queues_.size() && left > 0; ++k) {
                const std::size_t j = (q + k) % queues_.size();
                const auto t = std::min(left, std::max<std::int64_t>(0, available(j)));
                if (t > 0) ch.push_back({j, t});
                left -= t;
            }
            r.borrowed_quota = need;
            r.charges = ch;
            r.bypass_flag = false;
            r.displaced_head.reset();
            for (const auto& c : ch) charged_[c.queue] += c.tokens;
            queues_[q].pop_front();
            return r.spec.id;
        }
        return std::nullopt;
    }

    /// Pending requests in scheduling priority order (queue, then position).
    std::vector<RequestId> pending_in_priority_order() const {
        std::vector<RequestId> out;
        for (const auto& q : queues_) out.insert(out.end(), q.begin(), q.end());
        return out;
    }

    bool due_for_refresh(TimePoint now) const { return now - last_refresh_ >= cfg_.refresh_period; }

    /// Re-fits the queue layout and quotas on the recent WRS window.
    RefreshReport refresh(TimePoint now, RequestTable& reqs, const RequestCostEstimator& est) {
        RefreshReport rep;
        rep.time = now;
        last_refresh_ = now;
        while (!window_.empty() && window_.front().time + cfg_.refresh_period < now) window_.pop_front();
        rep.samples = window_.size();
        if (cfg_.policy != SchedulerPolicy::MLQ || window_.empty()) {
            rep.layout = layout_;
            return rep;
        }
        if (cfg_.windowed_normalization) {
            std::int64_t mi = 1, mo = 1;
            for (const auto& s : window_) {
                mi = std::max(mi, s.input);
                mo = std::max(mo, s.predicted);
            }
            norm_max_input_ = mi;
            norm_max_output_ = mo;
            for (auto& s : window_) s.wrs = compute_wrs(s.input, s.predicted, s.rank, norm_cfg());
        }

        std::vector<double> wrs;
        wrs.reserve(window_.size());
        for (const auto& s : window_) wrs.push_back(s.wrs);
        auto layout = fit_layout(wrs, cfg_.k_max, cfg_.kmeans_stop_ratio);
        const std::size_t k = layout.k;

        const double span_s = std::max(1e-6, std::min(to_seconds(cfg_.refresh_period), to_seconds(now - kSimStart)));
        struct Acc {
            std::size_t n = 0;
            double in = 0, out = 0, rank = 0, max_wrs = 0;
        };
        std::vector<Acc> acc(k);
        for (const auto& s : window_) {
            auto& a = acc[admit_index(s.wrs, layout.boundaries)];
            ++a.n;
            a.in += static_cast<double>(s.input);
            a.out += static_cast<double>(s.predicted);
            a.rank += s.rank;
            a.max_wrs = std::max(a.max_wrs, s.wrs);
        }
        const auto ncfg = norm_cfg();
        for (std::size_t q = 0; q < k; ++q) {
            QueueDemand d;
            const auto& a = acc[q];
            if (a.n > 0) {
                const double n = static_cast<double>(a.n);
                const double mean_in = a.in / n, mean_out = a.out / n;
                const int rank = static_cast<int>(std::lround(a.rank / n));
                // The last queue has no cut-off; mirror its lower cut-off around
                // the centroid instead of letting one outlier set its size.
                const double lower = q > 0 ? layout.boundaries[q - 1] : 0.0;
                const double upper = q + 1 < k ? layout.boundaries[q]
                                               : std::min(a.max_wrs, 2.0 * layout.centroids[q] - lower);
                // Scale the queue's mean input/output split up to its WRS cut-off.
                const double ad = ncfg.weight_adapter * std::min(rank, ncfg.max_rank) / ncfg.max_rank;
                const double per_f = ncfg.weight_input * mean_in / static_cast<double>(ncfg.max_input) +
                                     ncfg.weight_output * mean_out / static_cast<double>(ncfg.max_output);
                double f = per_f > 0 ? (upper - ad) / per_f : 1.0;
                f = std::max(f, 1.0);
                const auto in = std::clamp<std::int64_t>(std::llround(mean_in * f), 1, ncfg.max_input);
                const auto out = std::clamp<std::int64_t>(std::llround(mean_out * f), 1, ncfg.max_output);
                d.max_size_tokens = static_cast<double>(in + out + est.adapter_tokens(rank));
                d.expected = est.isolated(in, out, rank);
                d.arrival_rate = n / span_s;
            }
            d.slo = cfg_.quota_slo ? *cfg_.quota_slo
                                   : Duration{static_cast<std::int64_t>(std::llround(
                                         cfg_.quota_slo_multiplier * static_cast<double>(d.expected.count())))};
            rep.demands.push_back(d);
        }
        rep.quotas = solve_quotas(rep.demands, pool_);
        rep.changed = layout.boundaries != layout_.boundaries || rep.quotas.quota != quotas_;
        rep.layout = layout;

        layout_ = std::move(layout);
        quotas_ = cfg_.unbounded_quota ? std::vector<std::int64_t>(k, kUnboundedQuota) : rep.quotas.quota;

        // Re-bucket pending requests and re-attribute the quota of admitted ones.
        std::vector<RequestId> pending = pending_in_priority_order();
        reset_queues(k);
        for (auto id : pending) {
            auto& r = reqs[index_of(id)];
            if (cfg_.windowed_normalization && est.rank)
                r.wrs = compute_wrs(r.spec.input_tokens, r.predicted_output_tokens, est.rank(r.spec.adapter), ncfg);
            insert_pending(r);
        }
        for (auto& r : reqs) {
            if (!r.holds_resources() || r.borrowed_quota == 0) continue;
            r.queue_index = queue_for(r.wrs);
            r.charges = {{r.queue_index, r.borrowed_quota}};
            charged_[r.queue_index] += r.borrowed_quota;
        }
        return rep;
    }

    /// Recomputes the quota charged to each queue from the request table.
    std::vector<std::int64_t> recompute_charged(const RequestTable& reqs) const {
        std::vector<std::int64_t> c(queues_.size(), 0);
        for (const auto& r : reqs)
            for (const auto& ch : r.charges) c[ch.queue] += ch.tokens;
        return c;
    }

private:
    struct Sample {
        TimePoint time{};
        double wrs = 0;
        std::int64_t input = 0;
        std::int64_t predicted = 0;
        int rank = 0;
        std::int64_t need = 0;
    };

    SchedulerConfig norm_cfg() const {
        SchedulerConfig c = cfg_;
        if (norm_max_input_ > 0) c.max_input = norm_max_input_;
        if (norm_max_output_ > 0) c.max_output = norm_max_output_;
        return c;
    }

    void reset_queues(std::size_t k) {
        queues_.assign(k, {});
        charged_.assign(k, 0);
    }

    void insert_pending(RequestState& r) {
        const std::size_t q = cfg_.policy == SchedulerPolicy::MLQ ? queue_for(r.wrs) : 0;
        r.queue_index = q;
        auto& dq = queues_[q];
        // Pending lists stay in arrival order; squashed requests slot back in.
        auto it = dq.end();
        while (it != dq.begin()) {
            auto prev = std::prev(it);
            if (static_cast<std::uint64_t>(*prev) < static_cast<std::uint64_t>(r.spec.id)) break;
            it = prev;
        }
        dq.insert(it, r.spec.id);
    }

    SchedulerConfig cfg_;
    std::int64_t pool_;
    QueueLayout layout_;
    std::vector<std::int64_t> quotas_;
    std::vector<std::int64_t> charged_;
    std::vector<PendingQueue> queues_;
    std::deque<Sample> window_;
    TimePoint last_refresh_ = kSimStart;
    std::int64_t norm_max_input_ = 0;
    std::int64_t norm_max_output_ = 0;
};

}  // namespace lorasim
