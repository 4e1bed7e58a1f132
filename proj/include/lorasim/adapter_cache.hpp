// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <unordered_set>
#include <vector>

#include "lorasim/config.hpp"
#include "lorasim/model.hpp"

namespace lorasim {

struct AdapterEntry {
    AdapterId id{};
    int rank = 0;
    std::int64_t size_tokens = 0;
    std::int64_t size_bytes = 0;
    TimePoint last_used{};
    std::int64_t usage_frequency = 0;  // acquires within the frequency window
    int ref_count = 0;
    bool resident = false;
    bool loading = false;  // transfer in flight; space is held but the entry is pinned

    bool evictable() const { return resident && !loading && ref_count == 0; }
};

struct ScoreWeights {
    double frequency = 0.45;
    double recency = 0.10;
    double size = 0.45;
};

/// Score = F * Frequency + R * Recency + S * Size on normalized features.
/// Higher means more valuable to keep.
constexpr double eviction_score(double freq_norm, double rec_norm, double size_norm, const ScoreWeights& w) {
    return w.frequency * freq_norm + w.recency * rec_norm + w.size * size_norm;
}

/// Min-max normalization onto [0, 1]; a constant feature maps to 1.
inline std::vector<double> min_max_normalize(const std::vector<double>& values) {
    std::vector<double> out(values.size(), 1.0);
    if (values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*hi == *lo) return out;
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / (*hi - *lo);
    return out;
}

enum class AcquireKind { Hit, InFlight, Miss };

struct AcquireResult {
    AcquireKind kind = AcquireKind::Miss;
    std::int64_t size_bytes = 0;  // bytes to transfer when kind == Miss
};

struct EvictionResult {
    bool ok = true;  // false: InsufficientEvictableMemory, nothing was evicted
    std::vector<AdapterId> evicted;
};

struct CacheStats {
    std::int64_t hits = 0;
    std::int64_t inflight_joins = 0;
    std::int64_t misses = 0;
    std::int64_t loads = 0;
    std::int64_t prefetch_loads = 0;
    std::int64_t bytes_loaded = 0;
    std::int64_t evictions = 0;
};

using AdapterSet = std::unordered_set<std::uint32_t>;

inline AdapterSet make_adapter_set(const std::vector<AdapterId>& ids) {
    AdapterSet s;
    for (auto id : ids) s.insert(static_cast<std::uint32_t>(id));
    return s;
}

inline ScoreWeights weights_for(const CacheConfig& cfg) {
    if (cfg.policy == CachePolicy::FairShare) return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    return {cfg.weight_frequency, cfg.weight_recency, cfg.weight_size};
}

/// GPU-resident adapter store. Capacity is set from outside every scheduling
/// step; adapters with a non-zero reference count are never evicted.
class AdapterCache {
public:
    AdapterCache(const AdapterCatalog& catalog, CacheConfig cfg)
        : cfg_(std::move(cfg)), entries_(catalog.size()), freq_events_(catalog.size()),
          hist_current_(catalog.size(), 0) {
        for (const auto& a : catalog.adapters()) {
            auto& e = entries_[index_of(a.id)];
            e.id = a.id;
            e.rank = a.rank;
            e.size_tokens = a.size_tokens;
            e.size_bytes = a.size_bytes;
        }
    }

    const CacheConfig& config() const { return cfg_; }
    const CacheStats& stats() const { return stats_; }

    std::int64_t capacity() const { return capacity_; }
    std::int64_t used_tokens() const { return used_; }
    std::int64_t free_tokens() const { return capacity_ - used_; }

    void set_capacity(std::int64_t tokens) { capacity_ = tokens; }

    bool resident(AdapterId id) const { return entries_[index_of(id)].resident; }
    bool loading(AdapterId id) const { return entries_[index_of(id)].loading; }
    const AdapterEntry& entry(AdapterId id) const { return entries_[index_of(id)]; }

    std::int64_t pinned_tokens() const {
        std::int64_t s = 0;
        for (const auto& e : entries_)
            if (e.resident && !e.evictable()) s += e.size_tokens;
        return s;
    }

    std::int64_t idle_tokens() const {
        std::int64_t s = 0;
        for (const auto& e : entries_)
            if (e.evictable()) s += e.size_tokens;
        return s;
    }

    std::int64_t recompute_used() const {
        std::int64_t s = 0;
        for (const auto& e : entries_)
            if (e.resident) s += e.size_tokens;
        return s;
    }

    std::vector<AdapterId> resident_ids() const {
        std::vector<AdapterId> ids;
        for (const auto& e : entries_)
            if (e.resident) ids.push_back(e.id);
        return ids;
    }

    std::int64_t usage_frequency(AdapterId id, TimePoint now) {
        prune(id, now);
        return static_cast<std::int64_t>(freq_events_[index_of(id)].size());
    }

    /// Hit/InFlight take a reference immediately; Miss leaves the cache untouched
    /// and reports how many bytes the caller must move before calling begin_load.
    AcquireResult acquire(AdapterId id, TimePoint now) {
        auto& e = entries_[index_of(id)];
        if (!e.resident) {
            ++stats_.misses;
            return {AcquireKind::Miss, e.size_bytes};
        }
        touch(e, now);
        ++e.ref_count;
        if (e.loading) {
            ++stats_.inflight_joins;
            return {AcquireKind::InFlight, 0};
        }
        ++stats_.hits;
        return {AcquireKind::Hit, 0};
    }

    /// Reserves space for an adapter whose transfer is starting.
    void begin_load(AdapterId id, TimePoint now, bool take_reference) {
        auto& e = entries_[index_of(id)];
        LORASIM_CHECK(!e.resident, "begin_load on a resident adapter");
        LORASIM_CHECK(free_tokens() >= e.size_tokens, "begin_load without free space");
        e.resident = true;
        e.loading = true;
        used_ += e.size_tokens;
        ++stats_.loads;
        stats_.bytes_loaded += e.size_bytes;
        if (take_reference) {
            touch(e, now);
            ++e.ref_count;
        } else {
            ++stats_.prefetch_loads;
        }
    }

    void complete_load(AdapterId id) {
        auto& e = entries_[index_of(id)];
        LORASIM_CHECK(e.resident && e.loading, "complete_load without a transfer in flight");
        e.loading = false;
    }

    /// Drops one reference. The adapter stays resident and becomes eligible
    /// for eviction once nothing references it.
    void release(AdapterId id, TimePoint now) {
        auto& e = entries_[index_of(id)];
        LORASIM_CHECK(e.ref_count > 0, "release on an adapter with RC = 0");
        --e.ref_count;
        e.last_used = now;
    }

    /// Eviction order over the eligible entries: adapters not named in
    /// `hints` come first, each tier sorted least valuable first.
    std::vector<AdapterId> eviction_order(const AdapterSet& hints, TimePoint now) {
        std::vector<std::size_t> eligible;
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].evictable()) eligible.push_back(i);
        if (eligible.empty()) return {};

        std::vector<double> key(entries_.size(), 0.0);
        if (cfg_.policy == CachePolicy::CostAware || cfg_.policy == CachePolicy::FairShare) {
            std::vector<double> freq, rec, size;
            for (auto i : eligible) {
                freq.push_back(static_cast<double>(usage_frequency(entries_[i].id, now)));
                rec.push_back(static_cast<double>(to_us(entries_[i].last_used)));
                size.push_back(static_cast<double>(entries_[i].size_tokens));
            }
            const auto fn = min_max_normalize(freq), rn = min_max_normalize(rec), sn = min_max_normalize(size);
            const auto w = weights_for(cfg_);
            for (std::size_t j = 0; j < eligible.size(); ++j)
                key[eligible[j]] = eviction_score(fn[j], rn[j], sn[j], w);
        } else {
            for (auto i : eligible) key[i] = static_cast<double>(to_us(entries_[i].last_used));
        }
        std::stable_sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
            const bool ha = hints.count(static_cast<std::uint32_t>(entries_[a].id)) != 0;
            const bool hb = hints.count(static_cast<std::uint32_t>(entries_[b].id)) != 0;
            if (ha != hb) return !ha;
            if (key[a] != key[b]) return key[a] < key[b];
            if (entries_[a].size_tokens != entries_[b].size_tokens) return entries_[a].size_tokens < entries_[b].size_tokens;
            return entries_[a].id < entries_[b].id;
        });
        std::vector<AdapterId> out;
        out.reserve(eligible.size());
        for (auto i : eligible) out.push_back(entries_[i].id);
        return out;
    }

    /// Evicts until at least `needed_free` tokens are free under the current capacity.
    EvictionResult evict_until(std::int64_t needed_free, const AdapterSet& hints, TimePoint now) {
        EvictionResult res;
        if (free_tokens() >= needed_free) return res;
        if (free_tokens() + idle_tokens() < needed_free) {
            res.ok = false;
            return res;
        }
        for (auto id : eviction_order(hints, now)) {
            if (free_tokens() >= needed_free) break;
            evict(id);
            res.evicted.push_back(id);
        }
        return res;
    }

    /// Re-establishes used <= capacity and the idle-tokens bound. With NoCache
    /// every idle adapter not needed by a queued request is dropped.
    EvictionResult enforce_limits(const AdapterSet& hints, TimePoint now) {
        EvictionResult res = evict_until(0, hints, now);
        if (!res.ok) return res;
        if (cfg_.policy == CachePolicy::NoCache) {
            for (auto& e : entries_)
                if (e.evictable() && hints.count(static_cast<std::uint32_t>(e.id)) == 0) {
                    evict(e.id);
                    res.evicted.push_back(e.id);
                }
        }
        if (cfg_.idle_capacity_tokens) {
            const auto limit = *cfg_.idle_capacity_tokens;
            auto idle = idle_tokens();
            if (idle > limit) {
                for (auto id : eviction_order(hints, now)) {
                    if (idle <= limit) break;
                    idle -= entries_[index_of(id)].size_tokens;
                    evict(id);
                    res.evicted.push_back(id);
                }
            }
        }
        return res;
    }

    /// Tokens that prefetching may still fill without evicting anything.
    std::int64_t prefetch_room() const {
        auto room = free_tokens();
        if (cfg_.idle_capacity_tokens) {
            std::int64_t idle_and_incoming = 0;
            for (const auto& e : entries_)
                if (e.resident && e.ref_count == 0) idle_and_incoming += e.size_tokens;
            room = std::min(room, *cfg_.idle_capacity_tokens - idle_and_incoming);
        }
        return std::max<std::int64_t>(room, 0);
    }

    /// Adapters worth loading ahead of admission, in load order. Queue-driven
    /// candidates come from `queued` (priority order); Histogram mode then adds
    /// the adapters with the highest predicted arrival count.
    std::vector<AdapterId> prefetch_candidates(const std::vector<AdapterId>& queued, std::int64_t room,
                                               PrefetchMode mode) const {
        std::vector<AdapterId> out;
        if (mode == PrefetchMode::Off) return out;
        AdapterSet seen;
        auto consider = [&](AdapterId id) {
            if (!seen.insert(static_cast<std::uint32_t>(id)).second) return;
            const auto& e = entries_[index_of(id)];
            if (e.resident || e.size_tokens > room) return;
            room -= e.size_tokens;
            out.push_back(id);
        };
        for (auto id : queued) consider(id);
        if (mode == PrefetchMode::Histogram && cfg_.policy != CachePolicy::NoCache) {
            std::size_t added = 0;
            for (auto id : histogram_ranking()) {
                if (added >= cfg_.histogram_top_k) break;
                if (seen.count(static_cast<std::uint32_t>(id))) continue;
                const auto before = out.size();
                consider(id);
                if (out.size() > before) ++added;
            }
        }
        return out;
    }

    /// Feeds the per-adapter arrival histogram used by Histogram prefetch.
    void record_arrival(AdapterId id, TimePoint now) {
        const auto w = to_us(now) / std::max<std::int64_t>(1, to_us(cfg_.histogram_window));
        if (hist_window_ < 0) hist_window_ = w;
        while (hist_window_ < w) {
            hist_history_.push_back(hist_current_);
            if (hist_history_.size() > cfg_.histogram_depth) hist_history_.pop_front();
            std::fill(hist_current_.begin(), hist_current_.end(), 0);
            ++hist_window_;
        }
        ++hist_current_[index_of(id)];
    }

    /// Mean arrivals per completed window (the open window when none completed).
    double predicted_arrivals(AdapterId id) const {
        if (hist_history_.empty()) return static_cast<double>(hist_current_[index_of(id)]);
        double total = 0.0;
        for (const auto& w : hist_history_) total += static_cast<double>(w[index_of(id)]);
        return total / static_cast<double>(hist_history_.size());
    }

    std::vector<AdapterId> histogram_ranking() const {
        std::vector<AdapterId> ids;
        for (const auto& e : entries_)
            if (predicted_arrivals(e.id) > 0) ids.push_back(e.id);
        std::stable_sort(ids.begin(), ids.end(), [&](AdapterId a, AdapterId b) {
            const auto pa = predicted_arrivals(a), pb = predicted_arrivals(b);
            if (pa != pb) return pa > pb;
            return a < b;
        });
        return ids;
    }

private:
    void touch(AdapterEntry& e, TimePoint now) {
        e.last_used = now;
        freq_events_[index_of(e.id)].push_back(now);
        prune(e.id, now);
        e.usage_frequency = static_cast<std::int64_t>(freq_events_[index_of(e.id)].size());
    }

    void prune(AdapterId id, TimePoint now) {
        auto& q = freq_events_[index_of(id)];
        while (!q.empty() && q.front() + cfg_.frequency_window <= now) q.pop_front();
        entries_[index_of(id)].usage_frequency = static_cast<std::int64_t>(q.size());
    }

    void evict(AdapterId id) {
        auto& e = entries_[index_of(id)];
        LORASIM_CHECK(e.ref_count == 0, "eviction of an adapter with RC > 0");
        LORASIM_CHECK(e.resident && !e.loading, "eviction of a non-resident or loading adapter");
        e.resident = false;
        used_ -= e.size_tokens;
        ++stats_.evictions;
    }

    CacheConfig cfg_;
    std::vector<AdapterEntry> entries_;
    std::vector<std::deque<TimePoint>> freq_events_;
    std::int64_t capacity_ = std::numeric_limits<std::int64_t>::max() / 4;
    std::int64_t used_ = 0;
    CacheStats stats_;
    std::vector<std::int64_t> hist_current_;
    std::deque<std::vector<std::int64_t>> hist_history_;
    std::int64_t hist_window_ = -1;
};

}  // namespace lorasim
