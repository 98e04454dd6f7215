// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <evmmon/monitor.hpp>
#include <evmmon/simnode.hpp>

#include "oracle.hpp"

using namespace evmmon;

namespace {

const fs::path fixtures = EVMMON_FIXTURES;
const fs::path configs = EVMMON_CONFIGS;

// Tolerances and budgets.
constexpr double quantile_tolerance = 1e-12;
constexpr double stats_budget_s = 10.0;
constexpr double constant_fee_budget_s = 5.0;
constexpr double volatility_budget_s = 30.0;
constexpr double conservation_budget_s = 30.0;

struct outcome {
    bool pass = false;
    std::string detail;
};

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("evmmon-acceptance-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string l; std::getline(in, l);)
        if (!l.empty()) out.push_back(l);
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << v;
    return ss.str();
}

network_profile profile_for(const sim::scenario& s, const std::string& url) {
    network_profile p;
    p.chain = s.chain;
    p.rpc_url = url;
    p.poll_interval_ms = 10;
    return p;
}

network_entry entry(network_profile p, std::optional<std::uint64_t> max_blocks) {
    network_entry e{validate_profile(std::move(p)), 0, max_blocks};
    return e;
}

outcome statistics_oracle() {
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<std::size_t> length(1, 1000);
    std::uniform_real_distribution<double> value(0.0, 1.0);
    std::uniform_int_distribution<int> coarse(0, 9);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> xs(length(rng));
        // every fourth series draws from a few values so ties are exercised
        for (auto& x : xs) x = i % 4 == 0 ? coarse(rng) / 10.0 : value(rng);
        auto got = summarize(std::span<const double>(xs));
        double q1 = oracle::quantile(xs, 0.25), med = oracle::quantile(xs, 0.5), q3 = oracle::quantile(xs, 0.75);
        for (double d : {got.q1 - q1, got.median - med, got.q3 - q3, got.iqr - (q3 - q1)}) worst = std::max(worst, std::abs(d));
        if (got.count != xs.size()) return {false, "count mismatch in series " + std::to_string(i)};
    }
    return {worst <= quantile_tolerance, "max deviation " + fmt(worst)};
}

outcome constant_fee_reproduction() {
    sim::scenario s;
    s.chain = {"arbitrum", 42161};
    s.seed = 42;
    s.block_count = 1000;
    s.block_interval_s = 1;
    s.regime = sim::constant_base_fee{fee_quantity::from_gwei(0.01).value_wei};
    s.usage = {569, 200};
    s.reported_limit = {1'125'000'000};
    s.fee_limit = gas_quantity{32'000'000};
    s.priority = {true, 2 * wei_per_gwei, wei_per_gwei};
    auto ledger = std::make_shared<const std::vector<raw_block_header>>(sim::generate_scenario(s));
    sim::rpc_server server(sim::rpc_handler(ledger, std::make_shared<sim::virtual_clock>(UINT64_MAX / 2)));

    auto p = profile_for(s, server.url());
    p.limits = limit_override{{32'000'000}};
    p.priority = priority_policy::exclude;
    run_config cfg;
    cfg.networks.push_back(entry(p, 1000));
    cfg.output_dir = scratch("constant-fee").string();
    std::stop_source stop;
    auto summary = run_monitor(cfg, stop.get_token());
    const auto& c = summary.chains.at(0);
    if (summary.failed() || !c.gas_price) return {false, "pipeline failed"};
    bool ok = c.gas_price->count == 1000 && c.gas_price->median == 0.01 && c.gas_price->iqr == 0.0;
    return {ok, "median " + fmt(c.gas_price->median) + " gwei, IQR " + fmt(c.gas_price->iqr) + ", n=" +
                    std::to_string(c.gas_price->count)};
}

outcome volatility_ordering() {
    auto scenarios = sim::load_scenarios((configs / "scenarios-12h.json").string());
    auto cfg = load_config((configs / "local.json").string());
    cfg.output_dir = scratch("volatility").string();
    std::vector<raw_block_header> input;
    for (auto& s : scenarios) {
        if (s.block_count * s.block_interval_s != 12 * 3600) return {false, s.chain.name + " does not span 12 h"};
        auto l = sim::generate_scenario(s);
        input.insert(input.end(), l.begin(), l.end());
    }
    auto summary = run_replay(input, cfg);
    if (summary.failed()) return {false, "pipeline failed"};
    const chain_report* eth = nullptr;
    std::vector<const chain_report*> rollups;
    for (auto& c : summary.chains) {
        if (c.chain == "ethereum")
            eth = &c;
        else
            rollups.push_back(&c);
    }
    if (!eth || rollups.size() != 3) return {false, "expected ethereum plus three rollups"};
    bool ok = true;
    std::string detail = "ethereum gas IQR " + fmt(eth->gas_price->iqr) + " ratio IQR " + fmt(eth->block_usage->iqr);
    for (auto* r : rollups) {
        ok = ok && eth->gas_price->iqr > r->gas_price->iqr && eth->block_usage->iqr > r->block_usage->iqr;
        detail += "; " + r->chain + " " + fmt(r->gas_price->iqr) + "/" + fmt(r->block_usage->iqr);
    }
    return {ok, detail};
}

/// Every sink file of a chain holds exactly blocks 0..n-1 in order.
bool sink_holds_sequence(const fs::path& file, std::uint64_t n, std::string& why) {
    auto lines = lines_of(file);
    if (lines.size() != n) {
        why = file.filename().string() + " has " + std::to_string(lines.size()) + " lines";
        return false;
    }
    for (std::uint64_t i = 0; i < n; ++i) {
        auto number = nlohmann::json::parse(lines[i])["number"].get<std::uint64_t>();
        if (number != i) {
            why = file.filename().string() + " line " + std::to_string(i + 1) + " holds block " + std::to_string(number);
            return false;
        }
    }
    return true;
}

outcome conservation() {
    constexpr std::uint64_t per_chain = 5000;
    auto clock = std::make_shared<sim::virtual_clock>(UINT64_MAX / 2);
    std::vector<sim::scenario> scenarios(2);
    std::vector<std::unique_ptr<sim::rpc_server>> servers;
    run_config cfg;
    cfg.retention.max_records = 1000;  // small enough that backpressure engages
    cfg.output_dir = scratch("conservation").string();
    for (std::size_t i = 0; i < 2; ++i) {
        auto& s = scenarios[i];
        s.chain = {i == 0 ? "alpha" : "beta", 900 + i};
        s.seed = 100 + i;
        s.block_count = per_chain;
        s.block_interval_s = i == 0 ? 12 : 2;
        s.regime = sim::adaptive_base_fee{wei_per_gwei, 7, 8, 500'000};
        s.usage = {500'000, 400'000};
        s.reported_limit = {30'000'000};
        s.priority = {true, 1'000'000, 500'000};
        auto ledger = std::make_shared<const std::vector<raw_block_header>>(sim::generate_scenario(s));
        servers.push_back(std::make_unique<sim::rpc_server>(sim::rpc_handler(ledger, clock)));
        cfg.networks.push_back(entry(profile_for(s, servers.back()->url()), per_chain));
    }
    std::stop_source stop;
    auto summary = run_monitor(cfg, stop.get_token());
    if (summary.failed()) return {false, "pipeline failed"};
    std::uint64_t windowed = 0;
    for (auto& s : scenarios) {
        auto dir = fs::path(cfg.output_dir) / s.chain.name;
        std::string why;
        for (auto f : {"raw.jsonl", "normalized.jsonl", "gas_price.jsonl", "block_usage.jsonl"})
            if (!sink_holds_sequence(dir / f, per_chain, why)) return {false, s.chain.name + ": " + why};
        std::set<std::uint64_t> starts;
        for (auto& l : lines_of(dir / "windows.jsonl")) {
            auto w = nlohmann::json::parse(l);
            if (w["kind"] != "GasPriceGwei") continue;
            if (!starts.insert(w["window_start"].get<std::uint64_t>()).second) return {false, "window emitted twice"};
            windowed += w["count"].get<std::uint64_t>();
        }
        if (!lines_of(dir / "dead_letters.jsonl").empty()) return {false, s.chain.name + ": dead letters"};
    }
    bool ok = windowed == 2 * per_chain;
    return {ok, std::to_string(2 * per_chain) + " blocks in, window counts sum to " + std::to_string(windowed)};
}

outcome ratio_bounds() {
    sim::scenario s;
    s.chain = {"ethereum", 1};
    s.seed = 5;
    s.block_count = 10'000;
    s.block_interval_s = 12;
    s.regime = sim::adaptive_base_fee{10 * wei_per_gwei, 7, 8, 500'000};
    s.usage = {500'000, 700'000};  // clamps at both ends, so full and empty blocks occur
    s.reported_limit = {30'000'000};
    auto ledger = sim::generate_scenario(s);

    auto run = [&](limit_policy limits, const std::string& name) {
        network_profile p = profile_for(s, "http://127.0.0.1:1");
        p.limits = limits;
        run_config cfg;
        cfg.networks.push_back(entry(p, std::nullopt));
        cfg.output_dir = scratch(name).string();
        run_replay(ledger, cfg);
        return fs::path(cfg.output_dir) / s.chain.name;
    };

    auto reported = run(limit_reported{}, "ratio-reported");
    auto usage = lines_of(reported / "block_usage.jsonl");
    if (usage.size() != ledger.size()) return {false, "reported run lost records"};
    double lo = 1.0, hi = 0.0;
    for (auto& l : usage) {
        double v = records::parse_metric(l).value;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    bool reported_ok = lo >= 0.0 && hi <= 1.0;

    const std::uint64_t override_gas = 10'000'000;
    auto overridden = run(limit_override{{override_gas}}, "ratio-override");
    auto normalized = lines_of(overridden / "normalized.jsonl");
    auto ratios = lines_of(overridden / "block_usage.jsonl");
    if (normalized.size() != ledger.size() || ratios.size() != ledger.size()) return {false, "override run lost records"};
    std::uint64_t flagged = 0, above_one = 0;
    bool consistent = true;
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        auto r = records::parse_normalized(normalized[i]);
        double v = records::parse_metric(ratios[i]).value;
        bool exceeds = r.header.gas_used.value > override_gas;
        consistent = consistent && r.flags.has(record_flag::usage_exceeds_effective_limit) == exceeds &&
                     v == static_cast<double>(r.header.gas_used.value) / static_cast<double>(override_gas);
        flagged += r.flags.has(record_flag::usage_exceeds_effective_limit);
        above_one += v > 1.0;
    }
    bool ok = reported_ok && consistent && flagged > 0 && above_one == flagged;
    return {ok, "reported range [" + fmt(lo) + ", " + fmt(hi) + "]; override: " + std::to_string(flagged) +
                    " flagged, " + std::to_string(above_one) + " above 1"};
}

outcome broker_resume() {
    constexpr std::uint64_t total = 10'000;
    streamlog::broker broker;
    broker.create_topic("t", streamlog::retention_policy{total, std::nullopt});
    for (std::uint64_t i = 0; i < total; ++i) broker.append("t", std::to_string(i), 0);

    std::mt19937_64 rng(77);
    std::string detail;
    for (auto group : {"a", "b", "c"}) {
        std::vector<std::uint64_t> processed;  // offsets whose processing was committed
        std::uint64_t redelivered = 0, kills = 0;
        auto cycle = [&](bool drain) {
            auto h = broker.subscribe("t", group, broker.resume_position("t", group));
            auto committed = h.committed_offset();
            std::vector<std::uint64_t> pending;
            std::uniform_int_distribution<int> polls(1, 4);
            std::uniform_int_distribution<std::size_t> batch(1, 120);
            for (int k = drain ? 1 << 30 : polls(rng); k > 0; --k) {
                auto recs = broker.poll_records(h, batch(rng));
                if (recs.empty()) break;
                for (auto& r : recs) {
                    if (committed && r.offset <= *committed) ++redelivered;
                    if (r.payload != std::to_string(r.offset)) ++redelivered;
                    pending.push_back(r.offset);
                }
            }
            if (pending.empty()) return;
            // commit somewhere in what was polled, then drop the handle as if the process died
            auto upto = drain ? pending.size() : std::uniform_int_distribution<std::size_t>(0, pending.size())(rng);
            if (upto > 0) {
                broker.commit(h, pending[upto - 1]);
                processed.insert(processed.end(), pending.begin(), pending.begin() + static_cast<long>(upto));
            }
            ++kills;
        };
        for (int i = 0; i < 100; ++i) cycle(false);
        cycle(true);
        bool exact = processed.size() == total;
        for (std::uint64_t i = 0; exact && i < total; ++i) exact = processed[i] == i;
        if (!exact || redelivered != 0 || kills < 100)
            return {false, std::string("group ") + group + ": " + std::to_string(processed.size()) + " processed, " +
                               std::to_string(redelivered) + " redelivered"};
        detail += std::string(detail.empty() ? "" : ", ") + group + ": " + std::to_string(kills) + " cycles";
    }
    return {true, "offsets 0..9999 exactly once per group (" + detail + ")"};
}

outcome determinism() {
    auto cfg = load_config((configs / "local.json").string());
    std::vector<raw_block_header> input;
    {
        std::ifstream in(fixtures / "replay.jsonl");
        input = read_replay_input(in, cfg);
    }
    std::vector<fs::path> dirs;
    for (auto name : {"determinism-a", "determinism-b"}) {
        cfg.output_dir = scratch(name).string();
        run_replay(input, cfg);
        dirs.emplace_back(cfg.output_dir);
    }
    std::size_t compared = 0;
    for (auto& e : fs::recursive_directory_iterator(dirs[0])) {
        if (!e.is_regular_file()) continue;
        auto rel = fs::relative(e.path(), dirs[0]);
        if (slurp(e.path()) != slurp(dirs[1] / rel)) return {false, rel.string() + " differs"};
        ++compared;
    }
    std::size_t ledgers = 0;
    for (auto& file : {configs / "scenarios-12h.json", fixtures / "replay_scenarios.json"}) {
        for (auto& s : sim::load_scenarios(file.string())) {
            std::string a, b;
            for (auto& h : sim::generate_scenario(s)) a += records::to_line(records::to_json(h)) + "\n";
            for (auto& h : sim::generate_scenario(s)) b += records::to_line(records::to_json(h)) + "\n";
            if (a != b) return {false, s.chain.name + " ledger differs between runs"};
            ++ledgers;
        }
    }
    return {compared > 0, std::to_string(compared) + " output files identical; " + std::to_string(ledgers) +
                              " seeded ledgers identical"};
}

outcome normalization_independence() {
    auto cfg = load_config((configs / "local.json").string());
    std::vector<raw_block_header> fixture;
    {
        std::ifstream in(fixtures / "replay.jsonl");
        for (auto& h : read_replay_input(in, cfg))
            if (h.chain.name == "arbitrum") fixture.push_back(h);
    }
    if (fixture.size() != 1000) return {false, "fixture holds " + std::to_string(fixture.size()) + " arbitrum blocks"};
    const auto& profile = cfg.find("arbitrum")->profile;
    if (profile->priority != priority_policy::exclude) return {false, "arbitrum profile does not exclude priority"};

    normalizer baseline(profile);
    std::vector<fee_quantity> prices;
    for (auto& h : fixture) prices.push_back(baseline(h).effective_gas_price);

    std::mt19937_64 rng(8);
    std::uint64_t changed = 0;
    for (int trial = 0; trial < 20; ++trial) {
        normalizer perturbed(profile);
        for (std::size_t i = 0; i < fixture.size(); ++i) {
            auto h = fixture[i];
            switch (rng() % 3) {
                case 0: h.priority_fee_observed.reset(); break;
                case 1: h.priority_fee_observed = fee_quantity{rng() >> 8}; break;
                default: h.priority_fee_observed = fee_quantity{0}; break;
            }
            changed += perturbed(h).effective_gas_price != prices[i];
        }
    }
    return {changed == 0, "20 perturbations x 1000 blocks, " + std::to_string(changed) + " prices changed"};
}

}  // namespace

int main() {
    struct criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<outcome()> run;
    };
    const std::vector<criterion> criteria = {
        {1, "statistics oracle", stats_budget_s, statistics_oracle},
        {2, "constant-fee reproduction", constant_fee_budget_s, constant_fee_reproduction},
        {3, "volatility ordering", volatility_budget_s, volatility_ordering},
        {4, "end-to-end conservation", conservation_budget_s, conservation},
        {5, "ratio bounds", 0, ratio_bounds},
        {6, "broker resume", 0, broker_resume},
        {7, "determinism", 0, determinism},
        {8, "normalization independence", 0, normalization_independence},
    };
    int failures = 0;
    for (auto& c : criteria) {
        auto t0 = std::chrono::steady_clock::now();
        outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string timing = fmt(secs) + " s";
        if (c.budget_s > 0) {
            timing += " of " + fmt(c.budget_s) + " s";
            if (secs >= c.budget_s) {
                o.pass = false;
                o.detail += "; over time budget";
            }
        }
        failures += !o.pass;
        std::printf("%s  %d  %-28s %s (%s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
