// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lorasim {

// Simulated time is integer microseconds since the start of a run.
using Duration = std::chrono::microseconds;
using Nanos = std::chrono::nanoseconds;

struct SimClock {
    using rep = std::int64_t;
    using period = std::micro;
    using duration = Duration;
    using time_point = std::chrono::time_point<SimClock, Duration>;
    static constexpr bool is_steady = true;
};

using TimePoint = SimClock::time_point;

inline constexpr TimePoint kSimStart{};

constexpr std::int64_t to_us(Duration d) { return d.count(); }
constexpr std::int64_t to_us(TimePoint t) { return t.time_since_epoch().count(); }
constexpr TimePoint at_us(std::int64_t us) { return TimePoint{Duration{us}}; }

constexpr double to_seconds(Duration d) { return static_cast<double>(d.count()) * 1e-6; }

// Rounds a nanosecond quantity up to whole microseconds.
constexpr Duration ceil_us(Nanos ns) {
    const auto n = ns.count();
    return Duration{n <= 0 ? 0 : (n + 999) / 1000};
}

enum class AdapterId : std::uint32_t {};
enum class RequestId : std::uint64_t {};

constexpr std::size_t index_of(AdapterId id) { return static_cast<std::size_t>(id); }
constexpr std::size_t index_of(RequestId id) { return static_cast<std::size_t>(id); }

/// Raised when a runtime invariant of the simulation is broken.
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

#define LORASIM_CHECK(cond, msg)                                                         \
    do {                                                                                 \
        if (!(cond)) throw ::lorasim::InvariantViolation(std::string("invariant: ") + (msg)); \
    } while (0)

struct AdapterSpec {
    AdapterId id{};
    int rank = 0;
    std::int64_t size_bytes = 0;
    std::int64_t size_tokens = 0;
};

struct RequestSpec {
    RequestId id{};
    TimePoint arrival{};
    std::int64_t input_tokens = 1;
    std::int64_t actual_output_tokens = 1;  // ground truth, hidden from the scheduler
    AdapterId adapter{};
};

enum class Phase { Queued, LoadingAdapter, Prefill, Decode, Finished, Squashed };

inline const char* to_string(Phase p) {
    switch (p) {
        case Phase::Queued: return "queued";
        case Phase::LoadingAdapter: return "loading_adapter";
        case Phase::Prefill: return "prefill";
        case Phase::Decode: return "decode";
        case Phase::Finished: return "finished";
        case Phase::Squashed: return "squashed";
    }
    return "?";
}

// One quota charge: `tokens` borrowed from queue `queue`.
struct QuotaCharge {
    std::size_t queue = 0;
    std::int64_t tokens = 0;
};

struct RequestState {
    RequestSpec spec;
    std::int64_t predicted_output_tokens = 1;
    double wrs = 0.0;
    std::size_t queue_index = 0;
    Phase phase = Phase::Queued;
    std::int64_t tokens_generated = 0;
    std::optional<TimePoint> first_token_time;
    std::optional<TimePoint> finish_time;
    std::optional<TimePoint> last_token_time;
    std::int64_t borrowed_quota = 0;
    std::vector<QuotaCharge> charges;
    int squash_count = 0;
    bool bypass_flag = false;
    std::optional<RequestId> displaced_head;  // head this request bypassed
    bool adapter_hit = false;                 // adapter resident on the final admission
    std::int64_t kv_reserved = 0;             // token slots held in the memory ledger
    std::vector<Duration> tbt_samples;

    bool running() const { return phase == Phase::Prefill || phase == Phase::Decode; }
    bool holds_resources() const { return running() || phase == Phase::LoadingAdapter; }
};

/// Deterministic total order used for every WRS comparison.
inline bool wrs_less(const RequestState& a, const RequestState& b) {
    if (a.wrs != b.wrs) return a.wrs < b.wrs;
    if (a.spec.arrival != b.spec.arrival) return a.spec.arrival < b.spec.arrival;
    return a.spec.id < b.spec.id;
}

inline bool arrival_less(const RequestState& a, const RequestState& b) {
    if (a.spec.arrival != b.spec.arrival) return a.spec.arrival < b.spec.arrival;
    return a.spec.id < b.spec.id;
}

struct HardwareProfile {
    std::int64_t total_token_slots = 60'000;
    std::int64_t link_bandwidth_bytes_per_sec = 16'000'000'000;
    Duration link_fixed_latency{500};
    std::int64_t kv_bytes_per_token = 524'288;
    // Llama-7B shaped: 2 matrices x 4 projections x 32 layers x 4096 hidden x 2 bytes.
    std::int64_t adapter_bytes_per_rank = 2'097'152;
};

struct CostModelParams {
    Nanos prefill_base = std::chrono::milliseconds{5};
    Nanos prefill_per_token = std::chrono::microseconds{40};
    Nanos decode_base = std::chrono::milliseconds{6};
    Nanos decode_per_token = Nanos{500};
    Nanos adapter_per_rank_token = Nanos{160};
};

struct SLOConfig {
    double slo_multiplier = 5.0;
    std::optional<Duration> ttft_slo;
    std::optional<Duration> tbt_slo;
    double calibration_fraction = 0.1;
};

inline std::int64_t adapter_size_bytes(int rank, const HardwareProfile& hw) {
    return hw.adapter_bytes_per_rank * rank;
}

inline std::int64_t adapter_size_tokens(int rank, const HardwareProfile& hw) {
    const auto bytes = adapter_size_bytes(rank, hw);
    const auto per = hw.kv_bytes_per_token;
    const auto tokens = (bytes + per - 1) / per;
    return tokens < 1 ? 1 : tokens;
}

inline AdapterSpec make_adapter(AdapterId id, int rank, const HardwareProfile& hw) {
    return AdapterSpec{id, rank, adapter_size_bytes(rank, hw), adapter_size_tokens(rank, hw)};
}

/// Immutable set of adapters served by a node. Adapters are laid out in
/// contiguous blocks of equal size, one block per rank in `ranks` order.
class AdapterCatalog {
public:
    AdapterCatalog() = default;

    AdapterCatalog(const std::vector<int>& ranks, std::size_t num_adapters, const HardwareProfile& hw)
        : ranks_(ranks) {
        if (ranks.empty() || num_adapters % ranks.size() != 0)
            throw std::invalid_argument("num_adapters must be a multiple of the rank count");
        per_rank_ = num_adapters / ranks.size();
        adapters_.reserve(num_adapters);
        for (std::size_t r = 0; r < ranks.size(); ++r)
            for (std::size_t j = 0; j < per_rank_; ++j)
                adapters_.push_back(make_adapter(AdapterId{static_cast<std::uint32_t>(adapters_.size())}, ranks[r], hw));
    }

    const AdapterSpec& at(AdapterId id) const {
        if (index_of(id) >= adapters_.size()) throw std::out_of_range("unknown adapter id");
        return adapters_[index_of(id)];
    }
    bool contains(AdapterId id) const { return index_of(id) < adapters_.size(); }
    std::size_t size() const { return adapters_.size(); }
    std::size_t per_rank() const { return per_rank_; }
    const std::vector<int>& ranks() const { return ranks_; }
    const std::vector<AdapterSpec>& adapters() const { return adapters_; }

    AdapterId adapter_for(std::size_t rank_index, std::size_t within) const {
        return AdapterId{static_cast<std::uint32_t>(rank_index * per_rank_ + within)};
    }

    std::int64_t working_set_tokens() const {
        std::int64_t s = 0;
        for (const auto& a : adapters_) s += a.size_tokens;
        return s;
    }

private:
    std::vector<int> ranks_;
    std::size_t per_rank_ = 0;
    std::vector<AdapterSpec> adapters_;
};

}  // namespace lorasim
