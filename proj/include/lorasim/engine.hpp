// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lorasim/adapter_cache.hpp"
#include "lorasim/config.hpp"
#include "lorasim/metrics.hpp"
#include "lorasim/model.hpp"
#include "lorasim/scheduler.hpp"
#include "lorasim/workload.hpp"

namespace lorasim {

// ---------------------------------------------------------------------------
// Cost model

struct BatchEntry {
    std::int64_t input_tokens = 0;
    std::int64_t context_tokens = 0;  // input + generated, for decoding requests
    int rank = 0;
    bool prefill = false;
};

/// Linear iteration cost. A prefilling request processes its whole input;
/// a decoding request produces one token attending over its context.
inline Nanos step_cost(std::span<const BatchEntry> batch, const CostModelParams& c) {
    if (batch.empty()) return Nanos{0};
    Nanos total = c.decode_base;
    bool any_prefill = false;
    for (const auto& e : batch) {
        if (e.prefill) {
            any_prefill = true;
            total += c.prefill_per_token * e.input_tokens + c.adapter_per_rank_token * (e.rank * e.input_tokens);
        } else {
            total += c.decode_per_token * e.context_tokens + c.adapter_per_rank_token * e.rank;
        }
    }
    if (any_prefill) total += c.prefill_base;
    return total;
}

inline Duration step_duration(std::span<const BatchEntry> batch, const CostModelParams& c) {
    return ceil_us(step_cost(batch, c));
}

/// Wire time of a transfer, rounded up to whole microseconds.
inline Duration wire_time(std::int64_t bytes, const HardwareProfile& hw) {
    const auto bw = hw.link_bandwidth_bytes_per_sec;
    return Duration{(bytes * 1'000'000 + bw - 1) / bw};
}

inline Duration transfer_time(std::int64_t bytes, const HardwareProfile& hw) {
    return hw.link_fixed_latency + wire_time(bytes, hw);
}

/// End-to-end latency of a request running alone with a cold adapter on an
/// idle link, using exactly the engine's per-step rounding.
inline Duration isolated_time(std::int64_t input, std::int64_t output, int rank, const CostModelParams& c,
                              const HardwareProfile& hw) {
    Duration total = transfer_time(adapter_size_bytes(rank, hw), hw);
    BatchEntry e{input, input, rank, true};
    total += step_duration(std::span<const BatchEntry>(&e, 1), c);
    e.prefill = false;
    for (std::int64_t k = 2; k <= output; ++k) {
        e.context_tokens = input + k - 1;
        total += step_duration(std::span<const BatchEntry>(&e, 1), c);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Host-to-device link

/// Single serialized channel. The wire is occupied for bytes/bandwidth; the
/// fixed latency is added on top and does not block the next transfer.
class Link {
public:
    explicit Link(const HardwareProfile& hw) : hw_(hw) {}

    TimePoint enqueue(std::int64_t bytes, TimePoint now) {
        const TimePoint start = std::max(now, busy_until_);
        busy_until_ = start + wire_time(bytes, hw_);
        cumulative_bytes_ += bytes;
        ++transfers_;
        return busy_until_ + hw_.link_fixed_latency;
    }

    TimePoint busy_until() const { return busy_until_; }
    std::int64_t cumulative_bytes() const { return cumulative_bytes_; }
    std::int64_t transfers() const { return transfers_; }

private:
    HardwareProfile hw_;
    TimePoint busy_until_ = kSimStart;
    std::int64_t cumulative_bytes_ = 0;
    std::int64_t transfers_ = 0;
};

// ---------------------------------------------------------------------------
// Simulation

struct RunResult {
    std::vector<MetricsRecord> records;
    SystemCounters counters;
    std::vector<RefreshReport> refreshes;
    std::vector<RequestId> admission_order;  // every admission, re-admissions included
    std::int64_t horizon_us = 0;             // last arrival time
};

enum class EventKind { Arrival, StepComplete, TransferComplete, Refresh };

struct SimEvent {
    TimePoint time{};
    std::uint64_t seq = 0;
    EventKind kind = EventKind::Arrival;
    std::uint64_t payload = 0;

    bool operator>(const SimEvent& o) const {
        if (time != o.time) return time > o.time;
        return seq > o.seq;
    }
};

inline constexpr std::size_t kPrefetchLookahead = 64;

/// Discrete-event model of one serving node with iteration-level batching.
class Engine {
public:
    Engine(const SimConfig& cfg, std::vector<RequestSpec> arrivals)
        : cfg_(cfg),
          catalog_(cfg.workload.ranks, cfg.workload.num_adapters, cfg.hardware),
          cache_(catalog_, cfg.cache),
          scheduler_(cfg.scheduler, token_pool(cfg)),
          link_(cfg.hardware),
          hint_count_(catalog_.size(), 0) {
        Rng predictor(cfg.seed, kPredictorStream);
        reqs_.reserve(arrivals.size());
        const auto pool = token_pool(cfg);
        for (std::size_t i = 0; i < arrivals.size(); ++i) {
            auto spec = arrivals[i];
            if (index_of(spec.id) != i) throw std::invalid_argument("request ids must be 0..n-1 in arrival order");
            if (!catalog_.contains(spec.adapter)) throw std::invalid_argument("request references an unknown adapter");
            RequestState r;
            r.spec = spec;
            r.predicted_output_tokens = predict_output(spec, cfg.predictor, predictor);
            const auto worst = spec.input_tokens + std::max(spec.actual_output_tokens, r.predicted_output_tokens) +
                               catalog_.at(spec.adapter).size_tokens;
            if (worst > cfg.hardware.total_token_slots || need_upper(r) > pool)
                throw std::invalid_argument("request " + std::to_string(i) + " can never fit on the node");
            reqs_.push_back(std::move(r));
        }
        finish_count_.assign(reqs_.size(), 0);
    }

    const AdapterCatalog& catalog() const { return catalog_; }
    const AdapterCache& cache() const { return cache_; }
    const Scheduler& scheduler() const { return scheduler_; }
    const RequestTable& requests() const { return reqs_; }

    RunResult run() {
        RunResult res;
        for (std::size_t i = 0; i < reqs_.size(); ++i)
            push(reqs_[i].spec.arrival, EventKind::Arrival, i);
        if (!reqs_.empty()) res.horizon_us = to_us(reqs_.back().spec.arrival);
        if (cfg_.scheduler.policy == SchedulerPolicy::MLQ && !reqs_.empty())
            push(kSimStart + cfg_.scheduler.refresh_period, EventKind::Refresh, 0);

        while (!events_.empty()) {
            const TimePoint now = events_.top().time;
            while (!events_.empty() && events_.top().time == now) {
                const auto ev = events_.top();
                events_.pop();
                dispatch(ev, res);
            }
            if (!busy_) start_step(now, res);
        }

        for (std::size_t i = 0; i < reqs_.size(); ++i)
            LORASIM_CHECK(finish_count_[i] == 1, "request " + std::to_string(i) + " finished " +
                                                     std::to_string(finish_count_[i]) + " times");
        LORASIM_CHECK(active_.empty() && scheduler_.pending_count() == 0, "work left after the last event");

        res.records.reserve(reqs_.size());
        for (const auto& r : reqs_) res.records.push_back(make_record(r));
        const auto& cs = cache_.stats();
        auto& c = counters_;
        c.bytes_transferred = link_.cumulative_bytes();
        c.transfers = link_.transfers();
        c.cache_hits = cs.hits;
        c.cache_misses = cs.misses;
        c.inflight_joins = cs.inflight_joins;
        c.prefetch_loads = cs.prefetch_loads;
        c.evictions = cs.evictions;
        c.sim_end_us = to_us(last_time_);
        res.counters = counters_;
        return res;
    }

    MetricsRecord make_record(const RequestState& r) const {
        MetricsRecord m;
        const auto& ad = catalog_.at(r.spec.adapter);
        m.request_id = static_cast<std::uint64_t>(r.spec.id);
        m.arrival_us = to_us(r.spec.arrival);
        m.queue = r.queue_index;
        m.wrs = round_to(r.wrs, 6);
        m.adapter_id = static_cast<std::uint32_t>(r.spec.adapter);
        m.rank = ad.rank;
        m.ttft_us = to_us(*r.first_token_time - r.spec.arrival);
        m.e2e_us = to_us(*r.finish_time - r.spec.arrival);
        m.squashes = r.squash_count;
        m.bypassed = r.bypass_flag;
        m.adapter_hit = r.adapter_hit;
        std::int64_t sum = 0;
        for (auto g : r.tbt_samples) {
            m.tbt_samples_us.push_back(g.count());
            sum += g.count();
        }
        m.mean_tbt_us = r.tbt_samples.empty()
                            ? 0.0
                            : round_to(static_cast<double>(sum) / static_cast<double>(r.tbt_samples.size()), 3);
        const auto iso = isolated_time(r.spec.input_tokens, r.spec.actual_output_tokens, ad.rank, cfg_.cost, cfg_.hardware);
        m.slowdown = round_to(static_cast<double>(m.e2e_us) / static_cast<double>(iso.count()), 6);
        return m;
    }

private:
    // Scheduler view of node memory; admission side effects happen here.
    struct Oracle {
        Engine& e;
        TimePoint now;
        std::optional<RequestId> eta_head;
        std::int64_t eta_steps = 0;

        std::int64_t need_tokens(const RequestState& r) const { return e.need_tokens(r); }
        bool try_admit(RequestState& r) { return e.try_admit(r, now); }
        bool may_bypass(const RequestState& head, const RequestState& cand) {
            if (eta_head != head.spec.id) {
                eta_head = head.spec.id;
                eta_steps = e.memory_eta_steps(head);
            }
            return e.predicted_steps(cand) <= eta_steps;
        }
    };
    friend struct Oracle;

    std::int64_t need_upper(const RequestState& r) const {
        return r.spec.input_tokens + r.predicted_output_tokens + catalog_.at(r.spec.adapter).size_tokens;
    }

    std::int64_t need_tokens(const RequestState& r) const {
        const auto& ad = catalog_.at(r.spec.adapter);
        return r.spec.input_tokens + r.predicted_output_tokens + (cache_.resident(ad.id) ? 0 : ad.size_tokens);
    }

    std::int64_t total() const { return cfg_.hardware.total_token_slots; }

    void push(TimePoint t, EventKind k, std::uint64_t payload) { events_.push({t, seq_++, k, payload}); }

    void dispatch(const SimEvent& ev, RunResult& res) {
        last_time_ = ev.time;
        switch (ev.kind) {
            case EventKind::Arrival: {
                auto& r = reqs_[ev.payload];
                cache_.record_arrival(r.spec.adapter, ev.time);
                const auto rank = catalog_.at(r.spec.adapter).rank;
                scheduler_.enqueue(r, rank, ev.time, need_tokens(r));
                ++hint_count_[index_of(r.spec.adapter)];
                break;
            }
            case EventKind::StepComplete: finish_step(ev.time); break;
            case EventKind::TransferComplete: {
                const AdapterId a{static_cast<std::uint32_t>(ev.payload)};
                cache_.complete_load(a);
                for (auto id : active_) {
                    auto& r = reqs_[index_of(id)];
                    if (r.phase == Phase::LoadingAdapter && r.spec.adapter == a) r.phase = Phase::Prefill;
                }
                break;
            }
            case EventKind::Refresh: {
                RequestCostEstimator est;
                est.isolated = [this](std::int64_t in, std::int64_t out, int rank) {
                    return isolated_time(in, out, rank, cfg_.cost, cfg_.hardware);
                };
                est.adapter_tokens = [this](int rank) { return adapter_size_tokens(rank, cfg_.hardware); };
                est.rank = [this](AdapterId a) { return catalog_.at(a).rank; };
                res.refreshes.push_back(scheduler_.refresh(ev.time, reqs_, est));
                ++counters_.refreshes;
                if (finished_ < reqs_.size()) push(ev.time + cfg_.scheduler.refresh_period, EventKind::Refresh, 0);
                break;
            }
        }
    }

    AdapterSet hints() const {
        AdapterSet s;
        for (std::size_t i = 0; i < hint_count_.size(); ++i)
            if (hint_count_[i] > 0) s.insert(static_cast<std::uint32_t>(i));
        return s;
    }

    void sync_cache_capacity(TimePoint now) {
        cache_.set_capacity(total() - reserved_);
        const auto ev = cache_.evict_until(0, hints_, now);
        LORASIM_CHECK(ev.ok, "cache cannot shrink to its capacity");
    }

    bool try_admit(RequestState& r, TimePoint now) {
        const auto& ad = catalog_.at(r.spec.adapter);
        const bool resident = cache_.resident(ad.id);
        const std::int64_t kv = r.spec.input_tokens + std::max<std::int64_t>(r.predicted_output_tokens, 1);
        const std::int64_t need_mem = kv + (resident ? 0 : ad.size_tokens);
        // A resident idle adapter becomes pinned by this admission.
        const std::int64_t self_pin = resident && cache_.entry(ad.id).evictable() ? ad.size_tokens : 0;
        if (need_mem > total() - reserved_ - cache_.used_tokens() &&
            need_mem > total() - reserved_ - cache_.pinned_tokens() - self_pin)
            return false;

        reserved_ += kv;
        r.kv_reserved = kv;
        cache_.set_capacity(total() - reserved_);
        if (resident) {
            const auto acq = cache_.acquire(ad.id, now);
            r.adapter_hit = acq.kind == AcquireKind::Hit;
            r.phase = acq.kind == AcquireKind::Hit ? Phase::Prefill : Phase::LoadingAdapter;
            const auto ev = cache_.evict_until(0, hints_, now);
            LORASIM_CHECK(ev.ok, "admission overcommitted memory");
        } else {
            const auto acq = cache_.acquire(ad.id, now);
            LORASIM_CHECK(acq.kind == AcquireKind::Miss, "non-resident adapter acquired");
            const auto ev = cache_.evict_until(ad.size_tokens, hints_, now);
            LORASIM_CHECK(ev.ok, "admission could not make room for its adapter");
            cache_.begin_load(ad.id, now, true);
            push(link_.enqueue(ad.size_bytes, now), EventKind::TransferComplete, index_of(ad.id));
            r.adapter_hit = false;
            r.phase = Phase::LoadingAdapter;
        }
        --hint_count_[index_of(ad.id)];
        active_.push_back(r.spec.id);
        admitted_now_.push_back(r.spec.id);
        return true;
    }

    std::int64_t step_estimate_us() const {
        const auto fallback = ceil_us(cfg_.cost.decode_base).count();
        return std::max<std::int64_t>(1, last_step_us_ > 0 ? last_step_us_ : fallback);
    }

    // Steps a request is expected to run for, including its adapter transfer.
    std::int64_t predicted_steps(const RequestState& r) const {
        std::int64_t steps = r.predicted_output_tokens;
        const auto& ad = catalog_.at(r.spec.adapter);
        if (!cache_.resident(ad.id)) steps += (transfer_time(ad.size_bytes, cfg_.hardware).count() + step_estimate_us() - 1) / step_estimate_us();
        return steps;
    }

    // Steps until enough running requests are predicted to finish to fit `head`.
    std::int64_t memory_eta_steps(const RequestState& head) const {
        const auto& ad = catalog_.at(head.spec.adapter);
        const std::int64_t need = head.spec.input_tokens + std::max<std::int64_t>(head.predicted_output_tokens, 1) +
                                  (cache_.resident(ad.id) ? 0 : ad.size_tokens);
        std::int64_t free = total() - reserved_ - cache_.pinned_tokens();
        std::vector<std::pair<std::int64_t, std::int64_t>> runs;  // (remaining steps, tokens freed)
        for (auto id : active_) {
            const auto& r = reqs_[index_of(id)];
            const std::int64_t left = std::max<std::int64_t>(r.predicted_output_tokens - r.tokens_generated, 1);
            runs.push_back({left, r.kv_reserved});
        }
        std::sort(runs.begin(), runs.end());
        for (const auto& [left, tokens] : runs) {
            free += tokens;
            if (free >= need) return left;
        }
        return std::numeric_limits<std::int64_t>::max();
    }

    void remove_active(RequestId id) {
        auto it = std::find(active_.begin(), active_.end(), id);
        LORASIM_CHECK(it != active_.end(), "request not active");
        active_.erase(it);
    }

    void release_resources(RequestState& r, TimePoint now) {
        reserved_ -= r.kv_reserved;
        r.kv_reserved = 0;
        cache_.release(r.spec.adapter, now);
        remove_active(r.spec.id);
    }

    void squash(RequestState& r, TimePoint now) {
        release_resources(r, now);
        ++r.squash_count;
        r.tokens_generated = 0;
        r.first_token_time.reset();
        r.last_token_time.reset();
        r.tbt_samples.clear();
        r.adapter_hit = false;
        r.bypass_flag = false;
        r.displaced_head.reset();
        scheduler_.requeue(r);
        ++hint_count_[index_of(r.spec.adapter)];
    }

    void finish(RequestState& r, TimePoint now) {
        release_resources(r, now);
        scheduler_.release(r);
        r.phase = Phase::Finished;
        r.finish_time = now;
        ++finish_count_[index_of(r.spec.id)];
        ++finished_;
    }

    // Grows KV reservations for the next token; squashes the youngest
    // request while the node cannot hold every running request.
    void reserve_growth(TimePoint now) {
        while (true) {
            std::int64_t delta = 0;
            for (auto id : active_) {
                const auto& r = reqs_[index_of(id)];
                if (r.phase != Phase::Decode) continue;
                const auto want = r.spec.input_tokens + std::max(r.predicted_output_tokens, r.tokens_generated + 1);
                delta += want - r.kv_reserved;
            }
            if (delta == 0) return;
            if (reserved_ + delta <= total() - cache_.pinned_tokens()) break;
            auto victim = std::max_element(active_.begin(), active_.end(), [&](RequestId a, RequestId b) {
                return arrival_less(reqs_[index_of(a)], reqs_[index_of(b)]);
            });
            LORASIM_CHECK(victim != active_.end(), "memory exhausted with nothing to squash");
            ++counters_.memory_squashes;
            squash(reqs_[index_of(*victim)], now);
        }
        for (auto id : active_) {
            auto& r = reqs_[index_of(id)];
            if (r.phase != Phase::Decode) continue;
            const auto want = r.spec.input_tokens + std::max(r.predicted_output_tokens, r.tokens_generated + 1);
            reserved_ += want - r.kv_reserved;
            r.kv_reserved = want;
        }
        sync_cache_capacity(now);
    }

    void start_step(TimePoint now, RunResult& res) {
        hints_ = hints();
        cache_.set_capacity(total() - reserved_);
        LORASIM_CHECK(cache_.enforce_limits(hints_, now).ok, "cache over capacity at step start");
        // An idle node still applies the cache limits (NoCache drops here).
        if (active_.empty() && scheduler_.pending_count() == 0) return;
        reserve_growth(now);

        admitted_now_.clear();
        Oracle oracle{*this, now, std::nullopt, 0};
        const auto trace = scheduler_.next_batch(reqs_, oracle, now);
        if (cfg_.check_invariants) LORASIM_CHECK(trace.conserves_quota(), "quota conservation identity");
        for (const auto& a : trace.admitted)
            if (a.bypass) ++counters_.bypass_admissions;
        if (admitted_now_.empty() && active_.empty() && scheduler_.pending_count() > 0) {
            if (scheduler_.force_admit(reqs_, oracle)) ++counters_.forced_admissions;
        }
        res.admission_order.insert(res.admission_order.end(), admitted_now_.begin(), admitted_now_.end());

        if (cfg_.cache.prefetch != PrefetchMode::Off) {
            // Room first goes to the KV space of the waiting requests, so a
            // prefetched adapter is not evicted again by the next admission.
            std::int64_t room = cache_.prefetch_room();
            std::vector<AdapterId> queued;
            for (std::size_t q = 0; q < scheduler_.num_queues() && room > 0; ++q)
                for (auto id : scheduler_.pending(q)) {
                    const auto& r = reqs_[index_of(id)];
                    room -= r.spec.input_tokens + r.predicted_output_tokens;
                    if (room < 0 || queued.size() >= kPrefetchLookahead) break;
                    queued.push_back(r.spec.adapter);
                }
            for (auto a : cache_.prefetch_candidates(queued, std::max<std::int64_t>(room, 0), cfg_.cache.prefetch)) {
                cache_.begin_load(a, now, false);
                push(link_.enqueue(catalog_.at(a).size_bytes, now), EventKind::TransferComplete, index_of(a));
            }
        }

        batch_.clear();
        step_members_.clear();
        for (auto id : active_) {
            const auto& r = reqs_[index_of(id)];
            const int rank = catalog_.at(r.spec.adapter).rank;
            if (r.phase == Phase::Prefill) batch_.push_back({r.spec.input_tokens, r.spec.input_tokens, rank, true});
            else if (r.phase == Phase::Decode)
                batch_.push_back({r.spec.input_tokens, r.spec.input_tokens + r.tokens_generated, rank, false});
            else continue;
            step_members_.push_back(id);
        }
        if (cfg_.check_invariants) check_invariants();
        if (batch_.empty()) return;
        const auto dur = step_duration(batch_, cfg_.cost);
        last_step_us_ = dur.count();
        busy_ = true;
        ++counters_.steps;
        push(now + dur, EventKind::StepComplete, 0);
    }

    void finish_step(TimePoint now) {
        busy_ = false;
        for (auto id : step_members_) {
            auto& r = reqs_[index_of(id)];
            if (r.phase == Phase::Prefill) {
                r.tokens_generated = 1;
                r.first_token_time = now;
                r.phase = Phase::Decode;
            } else {
                LORASIM_CHECK(r.phase == Phase::Decode, "step member in an unexpected phase");
                ++r.tokens_generated;
                r.tbt_samples.push_back(now - *r.last_token_time);
            }
            r.last_token_time = now;
            if (r.tokens_generated == r.spec.actual_output_tokens) {
                finish(r, now);
                continue;
            }
            const bool head_waiting =
                r.displaced_head && reqs_[index_of(*r.displaced_head)].phase == Phase::Queued;
            if (enforce_squash(r, head_waiting) == SquashDecision::Squash) {
                ++counters_.bypass_squashes;
                squash(r, now);
            }
        }
        step_members_.clear();
    }

    void check_invariants() {
        ++counters_.invariant_checks;
        std::int64_t reserved = 0, kv_used = 0;
        std::vector<int> refs(catalog_.size(), 0);
        std::vector<std::int64_t> charged(scheduler_.num_queues(), 0);
        for (auto id : active_) {
            const auto& r = reqs_[index_of(id)];
            LORASIM_CHECK(r.holds_resources(), "inactive request in the running set");
            LORASIM_CHECK(r.borrowed_quota > 0, "running request without borrowed quota");
            LORASIM_CHECK(r.tokens_generated <= r.spec.actual_output_tokens, "generated past the true length");
            reserved += r.kv_reserved;
            kv_used += r.spec.input_tokens + r.tokens_generated;
            ++refs[index_of(r.spec.adapter)];
            std::int64_t ch = 0;
            for (const auto& c : r.charges) {
                charged[c.queue] += c.tokens;
                ch += c.tokens;
            }
            LORASIM_CHECK(ch == r.borrowed_quota, "charges do not sum to the borrowed quota");
            if (r.running()) {
                const auto& e = cache_.entry(r.spec.adapter);
                LORASIM_CHECK(e.resident && !e.loading, "running request without its adapter");
            }
        }
        LORASIM_CHECK(reserved == reserved_, "KV reservation ledger drifted");
        LORASIM_CHECK(kv_used <= reserved_, "KV use exceeds reservations");
        LORASIM_CHECK(reserved_ + cache_.used_tokens() <= total(), "memory ledger exceeds the node");
        LORASIM_CHECK(cache_.used_tokens() <= cache_.capacity(), "cache above capacity");
        LORASIM_CHECK(cache_.recompute_used() == cache_.used_tokens(), "cache accounting drifted");
        for (std::size_t i = 0; i < refs.size(); ++i)
            LORASIM_CHECK(cache_.entry(AdapterId{static_cast<std::uint32_t>(i)}).ref_count == refs[i],
                          "adapter reference count mismatch");
        for (std::size_t q = 0; q < charged.size(); ++q) {
            LORASIM_CHECK(charged[q] == scheduler_.charged(q), "borrowed-quota ledger mismatch");
        }
    }

    SimConfig cfg_;
    AdapterCatalog catalog_;
    AdapterCache cache_;
    Scheduler scheduler_;
    Link link_;
    RequestTable reqs_;
    std::priority_queue<SimEvent, std::vector<SimEvent>, std::greater<>> events_;
    std::uint64_t seq_ = 0;
    std::vector<RequestId> active_;  // holds KV space and an adapter reference
    std::vector<RequestId> step_members_;
    std::vector<RequestId> admitted_now_;
    std::vector<BatchEntry> batch_;
    std::vector<int> hint_count_;
    AdapterSet hints_;
    std::vector<int> finish_count_;
    std::size_t finished_ = 0;
    std::int64_t reserved_ = 0;
    std::int64_t last_step_us_ = 0;
    bool busy_ = false;
    TimePoint last_time_ = kSimStart;
    SystemCounters counters_;
};

/// Materializes the request stream described by `cfg.workload`.
inline std::vector<RequestSpec> make_workload(const SimConfig& cfg) {
    AdapterCatalog catalog(cfg.workload.ranks, cfg.workload.num_adapters, cfg.hardware);
    if (cfg.workload.trace_path)
        return load_trace(*cfg.workload.trace_path, catalog, cfg.workload.rank_popularity_exponent, cfg.seed,
                          cfg.workload.rate_scale);
    return generate_arrivals(cfg.workload, catalog, cfg.seed);
}

inline RunResult simulate(const SimConfig& cfg) { return Engine(cfg, make_workload(cfg)).run(); }

}  // namespace lorasim
