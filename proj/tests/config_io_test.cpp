// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "lorasim/config_io.hpp"

namespace lorasim {
namespace {

std::vector<std::string> error_paths(const json& j) {
    try {
        config_from_json(j);
    } catch (const ConfigLoadError& e) {
        std::vector<std::string> p;
        for (const auto& err : e.errors()) p.push_back(err.path);
        return p;
    }
    return {};
}

TEST(ConfigFromJson, EmptyObjectGivesDefaults) {
    const auto c = config_from_json(json::object());
    EXPECT_EQ(config_to_json(c), config_to_json(SimConfig{}));
}

TEST(ConfigFromJson, ReadsNestedFieldsAndUnits) {
    const auto c = config_from_json(json::parse(R"({
        "seed": 7,
        "workload": {"rps": 3.5, "ranks": [8, 64], "num_adapters": 10, "duration_s": 1.25},
        "scheduler": {"policy": "sjf", "refresh_s": 30, "quota_slo_ms": 2.5},
        "cache": {"policy": "fairshare", "prefetch": "histogram", "idle_capacity_tokens": 4960},
        "cost": {"decode_per_token_ns": 700},
        "slo": {"tbt_ms": 150}
    })"));
    EXPECT_EQ(c.seed, 7u);
    EXPECT_DOUBLE_EQ(c.workload.arrival_rate, 3.5);
    EXPECT_EQ(c.workload.ranks, (std::vector<int>{8, 64}));
    EXPECT_EQ(c.workload.duration, Duration{1'250'000});
    EXPECT_EQ(c.scheduler.policy, SchedulerPolicy::SJF);
    EXPECT_EQ(c.scheduler.refresh_period, Duration{30'000'000});
    EXPECT_EQ(c.scheduler.quota_slo, Duration{2500});
    EXPECT_EQ(c.cache.policy, CachePolicy::FairShare);
    EXPECT_EQ(c.cache.prefetch, PrefetchMode::Histogram);
    EXPECT_EQ(c.cache.idle_capacity_tokens, 4960);
    EXPECT_EQ(c.cost.decode_per_token, Nanos{700});
    EXPECT_EQ(c.slo.tbt_slo, Duration{150'000});
    EXPECT_FALSE(c.slo.ttft_slo);
}

TEST(ConfigFromJson, OverlaysOnABase) {
    SimConfig base;
    base.seed = 99;
    base.workload.arrival_rate = 2;
    const auto c = config_from_json(json::parse(R"({"workload": {"rps": 4}})"), base);
    EXPECT_EQ(c.seed, 99u);
    EXPECT_DOUBLE_EQ(c.workload.arrival_rate, 4);
}

TEST(ConfigFromJson, UnknownFieldsReportedByPath) {
    EXPECT_EQ(error_paths(json::parse(R"({"sed": 1, "cache": {"polcy": "lru"}})")),
              (std::vector<std::string>{"cache.polcy", "sed"}));
}

TEST(ConfigFromJson, TypeErrorsReportedByPath) {
    const auto p = error_paths(json::parse(R"({
        "seed": -1,
        "workload": {"rps": "fast", "ranks": [8, "x"]},
        "scheduler": {"policy": "random", "bypass": 1},
        "cost": {"decode_base_ns": 1.5}
    })"));
    EXPECT_EQ(p, (std::vector<std::string>{"seed", "cost.decode_base_ns", "workload.rps", "workload.ranks[1]",
                                           "scheduler.policy", "scheduler.bypass"}));
}

TEST(ConfigFromJson, RootMustBeObject) {
    EXPECT_EQ(error_paths(json::array()), (std::vector<std::string>{"<root>"}));
}

TEST(ConfigFromJson, EnumNamesRoundTrip) {
    for (auto p : {SchedulerPolicy::FIFO, SchedulerPolicy::SJF, SchedulerPolicy::MLQ})
        EXPECT_EQ(parse_scheduler_policy(to_string(p)), p);
    for (auto p : {CachePolicy::NoCache, CachePolicy::LRU, CachePolicy::FairShare, CachePolicy::CostAware})
        EXPECT_EQ(parse_cache_policy(to_string(p)), p);
    for (auto m : {PrefetchMode::Off, PrefetchMode::QueueDriven, PrefetchMode::Histogram})
        EXPECT_EQ(parse_prefetch(to_string(m)), m);
    EXPECT_FALSE(parse_scheduler_policy("MLQ "));
}

TEST(ConfigToJson, RoundTripsEveryField) {
    SimConfig c;
    c.seed = 12345;
    c.hardware.total_token_slots = 30'000;
    c.cost.adapter_per_rank_token = Nanos{321};
    c.workload.ranks = {16, 32, 128};
    c.workload.num_adapters = 30;
    c.workload.duration = Duration{1'500'001};
    c.workload.trace_path = "trace.csv";
    c.workload.output = {50.0, 0.5, 2, 900};
    c.predictor.bucket_edges = {1, 10, 100, 1000};
    c.predictor.error_kernel = ErrorKernel::UniformBucket;
    c.scheduler.policy = SchedulerPolicy::FIFO;
    c.scheduler.initial_boundaries = {0.25, 0.5};
    c.scheduler.quota_slo = Duration{1'234'567};
    c.scheduler.unbounded_quota = true;
    c.cache.policy = CachePolicy::NoCache;
    c.cache.idle_capacity_tokens = 100;
    c.slo.ttft_slo = Duration{2'000'001};
    c.metrics.tbt_pooling = TbtPooling::PerRequestMax;
    const auto j = config_to_json(c);
    const auto back = config_from_json(j);
    EXPECT_EQ(config_to_json(back), j);
    EXPECT_EQ(back.workload.duration, c.workload.duration);
    EXPECT_EQ(back.scheduler.quota_slo, c.scheduler.quota_slo);
    EXPECT_EQ(back.slo.ttft_slo, c.slo.ttft_slo);
    EXPECT_EQ(back.workload.trace_path, c.workload.trace_path);
}

TEST(LoadConfigFile, MissingAndMalformedFiles) {
    EXPECT_THROW(load_config_file("/nonexistent/lorasim.json"), ConfigLoadError);
    const auto path = std::filesystem::temp_directory_path() / "lorasim_config_io_test.json";
    std::ofstream(path) << "{ \"seed\": ";
    try {
        load_config_file(path.string());
        FAIL() << "expected a ConfigLoadError";
    } catch (const ConfigLoadError& e) {
        ASSERT_EQ(e.errors().size(), 1u);
        EXPECT_EQ(e.errors()[0].path, "<file>");
    }
    std::ofstream(path) << R"({"seed": 5})";
    EXPECT_EQ(load_config_file(path.string()).seed, 5u);
    std::filesystem::remove(path);
}

}  // namespace
}  // namespace lorasim
