#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include <evmmon/config.hpp>
#include <evmmon/monitor.hpp>
#include <evmmon/records.hpp>
#include <evmmon/simnode.hpp>

namespace {

enum exit_code : int { ok = 0, config_error = 1, data_error = 2, runtime_abort = 3 };

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

int classify(const evmmon::error& e) {
    using evmmon::error_code;
    switch (e.code()) {
        case error_code::config_parse:
        case error_code::invalid_profile:
        case error_code::invalid_scenario:
            return config_error;
        case error_code::malformed_record:
        case error_code::malformed_quantity:
        case error_code::invalid_header:
        case error_code::empty_series:
        case error_code::mixed_series:
        case error_code::zero_limit:
            return data_error;
        default:
            return runtime_abort;
    }
}

/// Requests stop on SIGINT/SIGTERM or when `duration_s` elapses (0 = no limit).
std::jthread watch_for_stop(std::stop_source& src, double duration_s) {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    return std::jthread([&src, duration_s](std::stop_token own) {
        auto start = std::chrono::steady_clock::now();
        while (!own.stop_requested() && !src.stop_requested()) {
            if (g_interrupted) src.request_stop();
            if (duration_s > 0 &&
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= duration_s)
                src.request_stop();
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
    });
}

int finish_run(const evmmon::run_summary& s, const evmmon::run_config& cfg) {
    evmmon::print_summary_table(std::cout, s);
    std::cout << "outputs written to " << cfg.output_dir << "\n";
    for (auto& c : s.chains) {
        for (auto* o : {&c.normalize, &c.metrics, &c.windows})
            if (!o->failure.empty()) std::cerr << c.chain << ": " << o->failure << "\n";
        if (c.ingest && c.ingest->halted) std::cerr << c.chain << ": ingest halted: " << c.ingest->diagnostic << "\n";
    }
    return s.failed() ? runtime_abort : ok;
}

void print_stats(std::ostream& os, const evmmon::series& s, const evmmon::summary_stats& st) {
    os << evmmon::stats_line(s.chain().name, s.kind(), st).dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evmmon: stream-based monitoring of EVM chain fee and capacity metrics"};
    app.require_subcommand(1);

    std::string config_path, input_path, out_path, scenario_path, host = "127.0.0.1";
    double duration_s = 0, speed = 1.0;
    std::uint64_t bucket_s = 300;
    int port = 8545;
    bool verbose = false;

    auto* monitor = app.add_subcommand("monitor", "Capture blocks from every configured chain and run the pipeline");
    monitor->add_option("--config", config_path, "Run configuration (JSON)")->required();
    monitor->add_option("--duration", duration_s, "Stop after this many seconds (default: until interrupted)");
    monitor->add_flag("-v,--verbose", verbose, "Log ingest retries and anomalies to stderr");

    auto* replay = app.add_subcommand("replay", "Run the pipeline over recorded raw headers (JSONL)");
    replay->add_option("--input", input_path, "Raw header JSONL")->required();
    replay->add_option("--config", config_path, "Run configuration (JSON)")->required();

    auto* stats = app.add_subcommand("stats", "Whole-series median/IQR summary of one metric JSONL series");
    stats->add_option("--input", input_path, "Metric JSONL (one chain, one kind)")->required();
    stats->add_option("--out", out_path, "Where to write the summary (default: <input>.stats.json)");

    auto* plot = app.add_subcommand("plot", "Downsample a metric series to CSV buckets and an SVG chart");
    plot->add_option("--input", input_path, "Metric JSONL (one chain, one kind)")->required();
    plot->add_option("--bucket", bucket_s, "Bucket width in seconds")->check(CLI::PositiveNumber);
    plot->add_option("--out", out_path, "Output path stem; writes <stem>.csv and <stem>.svg")->required();

    auto* simnode = app.add_subcommand("simnode", "Serve synthetic scenarios over JSON-RPC (one port per scenario)");
    simnode->add_option("--scenario", scenario_path, "Scenario file (JSON)")->required();
    simnode->add_option("--host", host, "Bind address");
    simnode->add_option("--port", port, "First port; further scenarios use consecutive ports");
    simnode->add_option("--speed", speed, "Chain seconds per wall-clock second")->check(CLI::PositiveNumber);
    simnode->add_option("--duration", duration_s, "Stop after this many seconds");

    auto* generate = app.add_subcommand("generate", "Write the ledgers of a scenario file as raw header JSONL");
    generate->add_option("--scenario", scenario_path, "Scenario file (JSON)")->required();
    generate->add_option("--out", out_path, "Output JSONL path")->required();

    CLI11_PARSE(app, argc, argv);

    int config_stage_exit = config_error;
    try {
        if (*monitor) {
            auto cfg = evmmon::load_config(config_path);
            config_stage_exit = runtime_abort;
            std::stop_source stop;
            auto watcher = watch_for_stop(stop, duration_s);
            evmmon::monitor_options opts;
            if (verbose) opts.log = [](const std::string& m) { std::cerr << m << "\n"; };
            auto summary = evmmon::run_monitor(cfg, stop.get_token(), opts);
            watcher.request_stop();
            return finish_run(summary, cfg);
        }
        if (*replay) {
            auto cfg = evmmon::load_config(config_path);
            config_stage_exit = data_error;
            std::ifstream in(input_path, std::ios::binary);
            if (!in) throw evmmon::error(evmmon::error_code::malformed_record, "cannot open " + input_path);
            auto input = evmmon::read_replay_input(in, cfg);
            config_stage_exit = runtime_abort;
            return finish_run(evmmon::run_replay(input, cfg), cfg);
        }
        if (*stats) {
            auto s = evmmon::read_metric_series(input_path);
            auto st = evmmon::run_stats(s);
            print_stats(std::cout, s, st);
            std::ofstream out(out_path.empty() ? input_path + ".stats.json" : out_path, std::ios::binary);
            print_stats(out, s, st);
            return out ? ok : runtime_abort;
        }
        if (*plot) {
            auto s = evmmon::read_metric_series(input_path);
            auto files = evmmon::run_plot(s, bucket_s, out_path);
            std::cout << files.rows << " buckets -> " << files.csv.string() << ", " << files.svg.string() << "\n";
            return ok;
        }
        if (*simnode) {
            auto scenarios = evmmon::sim::load_scenarios(scenario_path);
            config_stage_exit = runtime_abort;
            std::vector<std::unique_ptr<evmmon::sim::rpc_server>> servers;
            for (std::size_t i = 0; i < scenarios.size(); ++i) {
                auto ledger = std::make_shared<const std::vector<evmmon::raw_block_header>>(
                    evmmon::sim::generate_scenario(scenarios[i]));
                auto clock =
                    std::make_shared<evmmon::sim::scaled_real_clock>(scenarios[i].genesis_timestamp, speed);
                servers.push_back(std::make_unique<evmmon::sim::rpc_server>(
                    evmmon::sim::rpc_handler(ledger, clock), host, port + static_cast<int>(i)));
                std::cout << scenarios[i].chain.name << " " << servers.back()->url() << std::endl;
            }
            std::stop_source stop;
            auto watcher = watch_for_stop(stop, duration_s);
            while (!stop.stop_requested()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
            return ok;
        }
        if (*generate) {
            auto scenarios = evmmon::sim::load_scenarios(scenario_path);
            config_stage_exit = runtime_abort;
            std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
            for (auto& sc : scenarios)
                for (auto& h : evmmon::sim::generate_scenario(sc))
                    out << evmmon::records::to_line(evmmon::records::to_json(h)) << "\n";
            return out ? ok : runtime_abort;
        }
    } catch (const evmmon::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return classify(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return config_stage_exit;
    }
    return ok;
}
