// Copyright 2026 The lorasim Authors
// SPDX-License-Identifier: Apache-2.0

// lorasim command-line runner.
//
// Exit codes: 0 success, 1 other failure, 2 config / input error, 3 invariant violation.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "lorasim/config_io.hpp"
#include "lorasim/scenario.hpp"

namespace {

using namespace lorasim;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInvariant = 3;

struct Overlay {
    std::string config;
    std::optional<double> rps;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> policy;
    std::optional<std::string> cache_policy;
    std::optional<std::string> trace;
    std::optional<double> duration;
    std::optional<std::size_t> num_adapters;
    std::optional<double> refresh_secs;
};

void add_overlay_flags(CLI::App* cmd, Overlay& o, bool with_config = true) {
    if (with_config) cmd->add_option("-c,--config", o.config, "JSON config (or scenario) file")->check(CLI::ExistingFile);
    cmd->add_option("--rps", o.rps, "arrival rate, requests per second");
    cmd->add_option("--seed", o.seed, "RNG seed");
    cmd->add_option("--policy", o.policy, "scheduler policy: fifo | sjf | mlq");
    cmd->add_option("--cache-policy", o.cache_policy, "cache policy: none | lru | fairshare | cost-aware");
    cmd->add_option("--trace", o.trace, "CSV trace to replay instead of synthetic arrivals");
    cmd->add_option("--duration", o.duration, "synthetic workload duration, seconds");
    cmd->add_option("--num-adapters", o.num_adapters, "number of distinct adapters");
    cmd->add_option("--refresh-secs", o.refresh_secs, "queue refresh period, seconds");
}

/// Flag values as a config fragment, so they go through the same validation as file values.
json overlay_json(const Overlay& o) {
    json j = json::object();
    if (o.seed) j["seed"] = *o.seed;
    if (o.rps) j["workload"]["rps"] = *o.rps;
    if (o.trace) j["workload"]["trace"] = *o.trace;
    if (o.duration) j["workload"]["duration_s"] = *o.duration;
    if (o.num_adapters) j["workload"]["num_adapters"] = *o.num_adapters;
    if (o.policy) j["scheduler"]["policy"] = *o.policy;
    if (o.refresh_secs) j["scheduler"]["refresh_s"] = *o.refresh_secs;
    if (o.cache_policy) j["cache"]["policy"] = *o.cache_policy;
    return j;
}

SimConfig resolve_config(const Overlay& o) {
    SimConfig c = o.config.empty() ? SimConfig{} : load_config_file(o.config);
    c = config_from_json(overlay_json(o), c);
    if (auto errs = validate_config(c); !errs.empty()) throw ConfigLoadError(std::move(errs));
    return c;
}

/// Applies flag overrides to a scenario: base config fields, and for the
/// list-valued knobs (rps, seed) and policies, the grid / every variant.
void apply_overlay(Scenario& s, const Overlay& o) {
    s.base = config_from_json(overlay_json(o), s.base);
    if (o.rps) s.rps = {*o.rps};
    if (o.seed) s.seeds = {*o.seed};
    for (auto& v : s.variants) {
        if (o.policy) v.scheduler = s.base.scheduler.policy;
        if (o.cache_policy) v.cache = s.base.cache.policy;
    }
}

std::string default_out_root() {
    if (const char* env = std::getenv("LORASIM_OUT"); env && *env) return env;
    return "lorasim-out";
}

void print_errors(const std::string& what, const std::string& msg) {
    std::cerr << "lorasim: " << what << ":\n" << msg;
    if (!msg.empty() && msg.back() != '\n') std::cerr << "\n";
}

void print_summary_line(const CellResult& c) {
    std::printf("%-16s rps=%-6s seed=%-4llu p50_ttft=%.1fms p99_ttft=%.1fms p99_tbt=%.1fms hit=%.3f squash=%.4f%s\n",
                c.variant.c_str(), format_rps(c.rps).c_str(), static_cast<unsigned long long>(c.seed),
                static_cast<double>(c.summary.p50_ttft_us) / 1e3, static_cast<double>(c.summary.p99_ttft_us) / 1e3,
                static_cast<double>(c.summary.p99_tbt_us) / 1e3, c.summary.adapter_hit_rate, c.summary.squash_rate,
                c.ok ? "" : "  FAILED");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lorasim: discrete-event simulator for multi-adapter LLM serving"};
    app.require_subcommand(1);

    Overlay run_o, sweep_o, val_o;
    std::string run_out, sweep_out, sweep_preset, diff_a, diff_b, diff_out, presets_show;
    bool run_dry = false, sweep_dry = false;
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());

    auto* run = app.add_subcommand("run", "run one simulation and write records.csv + summary.json");
    add_overlay_flags(run, run_o);
    run->add_option("-o,--out", run_out, "output directory (default: $LORASIM_OUT/run)");
    run->add_flag("--dry-run", run_dry, "print the resolved config and exit");

    auto* sweep = app.add_subcommand("sweep", "run a scenario (preset or file) over its rps x seed x policy grid");
    add_overlay_flags(sweep, sweep_o);
    sweep->add_option("-p,--preset", sweep_preset, "named preset (see `lorasim presets`)");
    sweep->add_option("-o,--out", sweep_out, "output directory (default: $LORASIM_OUT/<scenario>)");
    sweep->add_option("-j,--jobs", jobs, "parallel cells")->check(CLI::PositiveNumber);
    sweep->add_flag("--dry-run", sweep_dry, "print the resolved scenario and exit");

    auto* diff = app.add_subcommand("diff", "relative change of run B against baseline run A");
    diff->add_option("baseline", diff_a, "baseline result directory")->required()->check(CLI::ExistingDirectory);
    diff->add_option("candidate", diff_b, "candidate result directory")->required()->check(CLI::ExistingDirectory);
    diff->add_option("-o,--out", diff_out, "also write the JSON report here");

    auto* validate = app.add_subcommand("validate", "check a config or scenario file and report every problem");
    add_overlay_flags(validate, val_o);

    auto* presets = app.add_subcommand("presets", "list presets, or print one as a scenario file");
    presets->add_option("name", presets_show, "preset to print");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) {
            const auto cfg = resolve_config(run_o);
            if (run_dry) {
                std::cout << config_to_json(cfg).dump(2) << "\n";
                return kExitOk;
            }
            const auto out = run_out.empty() ? default_out_root() + "/run" : run_out;
            std::optional<AbsoluteSlo> slo;
            if (cfg.slo.ttft_slo && cfg.slo.tbt_slo) slo = derive_slo(std::nullopt, cfg.slo);
            auto cell = run_cell(cfg, slo, out);
            cell.variant = to_string(cfg.scheduler.policy) + std::string("+") + to_string(cfg.cache.policy);
            if (!cell.ok) {
                print_errors("run failed", cell.error);
                return cell.exit_code;
            }
            print_summary_line(cell);
            std::cout << "results: " << out << "\n";
            return kExitOk;
        }
        if (*sweep) {
            if (!sweep_preset.empty() && !sweep_o.config.empty()) {
                print_errors("sweep", "--preset and --config are mutually exclusive");
                return kExitConfig;
            }
            Scenario s;
            if (!sweep_preset.empty()) s = make_preset(sweep_preset);
            else if (!sweep_o.config.empty()) s = load_scenario_file(sweep_o.config);
            else {
                print_errors("sweep", "need --preset or --config");
                return kExitConfig;
            }
            apply_overlay(s, sweep_o);
            if (auto errs = validate_scenario(s); !errs.empty()) throw ConfigLoadError(std::move(errs));
            if (sweep_dry) {
                std::cout << scenario_to_json(s).dump(2) << "\n";
                return kExitOk;
            }
            const auto out = sweep_out.empty() ? default_out_root() + "/" + s.name : sweep_out;
            auto res = run_scenario(s, out, {jobs, true});
            for (const auto& c : res.cells) print_summary_line(c);
            for (const auto& [variant, per_seed] : res.sweeps)
                for (const auto& [seed, sw] : per_seed)
                    std::printf("%-16s seed=%-4llu max_rps_under_slo=%s%s%s\n", variant.c_str(),
                                static_cast<unsigned long long>(seed), sw.max_rps ? format_rps(*sw.max_rps).c_str() : "-",
                                sw.below_grid ? " (below grid)" : "", sw.saturation_warning ? " (grid never saturated)" : "");
            std::cout << "results: " << out << "\n";
            for (const auto& c : res.cells)
                if (!c.ok) std::cerr << "lorasim: " << cell_dir(c.variant, c.rps, c.seed) << ": " << c.error << "\n";
            return res.exit_code();
        }
        if (*diff) {
            const auto report = diff_runs(diff_a, diff_b);
            if (!diff_out.empty()) std::ofstream(diff_out) << report.dump(2) << "\n";
            std::cout << report.dump(2) << "\n";
            return kExitOk;
        }
        if (*validate) {
            Scenario s = val_o.config.empty() ? Scenario{} : load_scenario_file(val_o.config);
            if (val_o.config.empty()) {
                s.variants.push_back({"default", s.base.scheduler.policy, s.base.cache.policy, s.base.cache.prefetch, json::object()});
                s.rps = {s.base.workload.arrival_rate};
                s.seeds = {s.base.seed};
            }
            apply_overlay(s, val_o);
            if (auto errs = validate_scenario(s); !errs.empty()) throw ConfigLoadError(std::move(errs));
            std::cout << "ok: " << s.variants.size() << " variant(s) x " << s.rps.size() << " rps x " << s.seeds.size()
                      << " seed(s)\n";
            return kExitOk;
        }
        if (*presets) {
            if (!presets_show.empty()) {
                std::cout << scenario_to_json(make_preset(presets_show)).dump(2) << "\n";
                return kExitOk;
            }
            for (const auto& p : preset_list()) std::printf("%-20s %s\n", p.name.c_str(), p.description.c_str());
            return kExitOk;
        }
    } catch (const ConfigLoadError& e) {
        print_errors("invalid configuration", e.what());
        return kExitConfig;
    } catch (const TraceError& e) {
        print_errors("invalid trace", e.what());
        return kExitConfig;
    } catch (const SchemaError& e) {
        print_errors("schema mismatch", e.what());
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        print_errors("invalid argument", e.what());
        return kExitConfig;
    } catch (const InvariantViolation& e) {
        print_errors("invariant violation", e.what());
        return kExitInvariant;
    } catch (const std::exception& e) {
        print_errors("error", e.what());
        return kExitFailure;
    }
    return kExitOk;
}
