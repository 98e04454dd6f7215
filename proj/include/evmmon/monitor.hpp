#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "cep.hpp"
#include "config.hpp"
#include "core_model.hpp"
#include "ingest.hpp"
#include "metrics.hpp"
#include "normalize.hpp"
#include "plot.hpp"
#include "records.hpp"
#include "streamlog.hpp"

namespace evmmon {

namespace fs = std::filesystem;

class line_writer {
public:
    explicit line_writer(const fs::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw error(error_code::sink_failure, "cannot open " + path.string());
    }

    void write(const std::string& line) {
        out_ << line << '\n';
        if (!out_) throw error(error_code::sink_failure, "write failed: " + path_.string());
    }

    void close() { out_.close(); }

private:
    fs::path path_;
    std::ofstream out_;
};

inline void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw error(error_code::sink_failure, "write failed: " + path.string());
}

struct block_metrics {
    metric_sample gas_price;
    metric_sample block_usage;
};

inline block_metrics metrics_of(const normalized_block_record& r) { return {gas_price_sample(r), block_usage_sample(r)}; }

struct window_summary {
    cep::window_assignment assignment;
    bool partial = false;
    summary_stats gas_price;
    summary_stats block_usage;
};

inline window_summary summarize_window(const cep::window<block_metrics>& w) {
    std::vector<double> gas, usage;
    for (auto& m : w.items) {
        gas.push_back(m.gas_price.value);
        usage.push_back(m.block_usage.value);
    }
    return {w.assignment, w.partial, summarize(std::span<const double>(gas)), summarize(std::span<const double>(usage))};
}

inline records::ojson stats_line(const std::string& chain, metric_kind kind, const summary_stats& s) {
    records::ojson j;
    j["chain"] = chain;
    j["kind"] = to_string(kind);
    records::put_stats(j, s);
    return j;
}

inline records::ojson window_line(const window_summary& w, metric_kind kind) {
    records::ojson j;
    j["chain"] = w.assignment.key;
    j["kind"] = to_string(kind);
    j["window_start"] = w.assignment.start;
    j["window_end"] = w.assignment.end;
    j["partial"] = w.partial;
    records::put_stats(j, kind == metric_kind::gas_price_gwei ? w.gas_price : w.block_usage);
    return j;
}

struct consumer_outcome {
    cep::run_report report;
    std::uint64_t skipped = 0;
    std::string failure;
};

struct chain_report {
    std::string chain;
    std::uint64_t raw_records = 0;
    consumer_outcome normalize;
    consumer_outcome metrics;
    consumer_outcome windows;
    std::optional<ingest_result> ingest;
    std::optional<summary_stats> gas_price;
    std::optional<summary_stats> block_usage;

    bool failed() const {
        return !normalize.failure.empty() || !metrics.failure.empty() || !windows.failure.empty() ||
               (ingest && ingest->halted);
    }
};

struct run_summary {
    std::vector<chain_report> chains;
    bool interrupted = false;

    bool failed() const {
        for (auto& c : chains)
            if (c.failed()) return true;
        return false;
    }
};

/// Everything that happens to one chain after its headers are captured:
/// raw topic -> normalizer -> normalized topic -> {series writer, window summarizer}.
/// Each consumer is its own broker group on its own thread.
class chain_runtime {
public:
    static constexpr const char* normalize_group = "normalize";
    static constexpr const char* series_group = "series";
    static constexpr const char* windows_group = "windows";

    chain_runtime(const network_entry& net, streamlog::broker& broker, const fs::path& out_dir,
                  const run_config& cfg)
        : net_(net), broker_(broker), dir_(out_dir / net.profile.chain().name), window_s_(cfg.window_s),
          bucket_s_(cfg.downsample_bucket_s), capacity_(cfg.retention.max_records.value_or(UINT64_MAX)) {
        fs::create_directories(dir_);
        const auto& name = chain().name;
        raw_topic_ = broker_.create_topic("raw." + name, cfg.retention);
        normalized_topic_ = broker_.create_topic("normalized." + name, cfg.retention);
        raw_out_ = std::make_unique<line_writer>(dir_ / "raw.jsonl");
        dead_out_ = std::make_unique<line_writer>(dir_ / "dead_letters.jsonl");
        for (auto g : {normalize_group, series_group, windows_group}) failed_groups_[g] = false;
    }

    const chain_ref& chain() const { return net_.profile.chain(); }

    /// Appends a captured header to the raw topic; blocks while the normalizer lags a full retention window behind.
    void produce(const raw_block_header& h, std::stop_token stop = {}) {
        auto line = records::to_line(records::to_json(h));
        wait_for_capacity(*raw_topic_, {normalize_group}, stop);
        raw_out_->write(line);
        broker_.append(raw_topic_->name(), std::move(line));
        ++raw_records_;
    }

    void set_ingest_result(ingest_result r) { ingest_ = std::move(r); }

    void producer_done() { raw_done_.store(true); }

    /// Starts the three consumer threads.
    void start(std::stop_token stop) {
        threads_.emplace_back([this, stop] { run_normalizer(stop); });
        threads_.emplace_back([this, stop] { run_series(stop); });
        threads_.emplace_back([this, stop] { run_windows(stop); });
    }

    void join() {
        for (auto& t : threads_) t.join();
        threads_.clear();
    }

    /// Whole-run statistics, plot files and the chain's section of the run report. Call after join().
    chain_report finish() {
        chain_report r;
        r.chain = chain().name;
        r.raw_records = raw_records_;
        r.normalize = normalize_;
        r.metrics = metrics_;
        r.windows = windows_;
        r.ingest = ingest_;
        raw_out_->close();
        dead_out_->close();
        auto emit_plot = [&](const series& s, const char* stem) {
            auto buckets = downsample(s.samples(), bucket_s_);
            write_file(dir_ / (std::string(stem) + ".csv"), plot::to_csv(buckets));
            write_file(dir_ / (std::string(stem) + ".svg"),
                       plot::to_svg(buckets, chain().name + " " + to_string(s.kind())));
        };
        emit_plot(gas_series_, "gas_price");
        emit_plot(usage_series_, "block_usage");
        if (!gas_series_.empty()) r.gas_price = summarize(gas_series_.samples());
        if (!usage_series_.empty()) r.block_usage = summarize(usage_series_.samples());
        return r;
    }

    const series& gas_series() const { return gas_series_; }
    const series& usage_series() const { return usage_series_; }

private:
    void wait_for_capacity(const streamlog::topic& t, std::initializer_list<const char*> groups, std::stop_token stop) {
        for (;;) {
            auto next = t.next_offset();
            std::uint64_t slowest = next;
            for (auto g : groups) {
                if (failed_groups_.at(g).load()) continue;
                auto c = t.committed(g);
                slowest = std::min<std::uint64_t>(slowest, c ? *c + 1 : 0);
            }
            if (next - slowest < capacity_ || stop.stop_requested()) return;
            std::this_thread::sleep_for(std::chrono::microseconds(200));
        }
    }

    template <class In>
    consumer_outcome consume(const std::shared_ptr<streamlog::topic>& topic, const char* group,
                             cep::pipeline<In>& pipeline, const std::atomic<bool>& upstream_done,
                             std::stop_token stop) {
        consumer_outcome outcome;
        pipeline.on_dead_letter([this, group](const cep::dead_letter& d) {
            std::lock_guard lock(dead_mtx_);
            records::ojson j;
            j["chain"] = chain().name;
            j["consumer"] = group;
            j["stage"] = d.stage_name;
            j["reason"] = d.reason;
            dead_out_->write(j.dump());
        });
        auto handle = broker_.subscribe(topic->name(), group, streamlog::earliest{});
        const std::size_t batch = static_cast<std::size_t>(std::min<std::uint64_t>(512, capacity_));
        try {
            for (;;) {
                auto recs = broker_.poll_records(handle, batch);
                if (recs.empty()) {
                    bool done = upstream_done.load();
                    if (done && handle.position() >= topic->next_offset()) break;
                    std::this_thread::sleep_for(std::chrono::microseconds(200));
                    continue;
                }
                for (auto& rec : recs) pipeline.push(std::move(rec.payload));
                broker_.commit(handle, recs.back().offset);
            }
            outcome.report = pipeline.finish(stop.stop_requested());
        } catch (const cep::sink_failure& e) {
            outcome.report = e.report();
            outcome.failure = e.what();
            failed_groups_.at(group).store(true);
        }
        outcome.skipped = handle.skipped();
        return outcome;
    }

    void run_normalizer(std::stop_token stop) {
        normalizer norm(net_.profile);
        auto id = chain().chain_id;
        line_writer out(dir_ / "normalized.jsonl");
        auto p = cep::source<std::string>()
                     .map(
                         [id](const std::string& line) {
                             auto h = records::parse_raw(line);
                             h.chain.chain_id = id;
                             return h;
                         },
                         "decode")
                     .map([&norm](const raw_block_header& h) { return norm(h); }, "normalize")
                     .sink(
                         [&](const normalized_block_record& r) {
                             auto line = records::to_line(records::to_json(r));
                             wait_for_capacity(*normalized_topic_, {series_group, windows_group}, stop);
                             out.write(line);
                             broker_.append(normalized_topic_->name(), std::move(line));
                         },
                         "normalized-topic");
        normalize_ = consume(raw_topic_, normalize_group, p, raw_done_, stop);
        out.close();
        normalized_done_.store(true);
    }

    auto decode_normalized() {
        auto id = chain().chain_id;
        return cep::source<std::string>().map(
            [id](const std::string& line) {
                auto r = records::parse_normalized(line);
                r.header.chain.chain_id = id;
                return r;
            },
            "decode");
    }

    void run_series(std::stop_token stop) {
        line_writer gas_out(dir_ / "gas_price.jsonl");
        line_writer usage_out(dir_ / "block_usage.jsonl");
        auto p = decode_normalized()
                     .map(metrics_of, "metrics")
                     .sink(
                         [&](const block_metrics& m) {
                             gas_out.write(records::to_line(records::to_json(m.gas_price)));
                             usage_out.write(records::to_line(records::to_json(m.block_usage)));
                             gas_series_.push(m.gas_price);
                             usage_series_.push(m.block_usage);
                         },
                         "series-files");
        metrics_ = consume(normalized_topic_, series_group, p, normalized_done_, stop);
    }

    void run_windows(std::stop_token stop) {
        line_writer out(dir_ / "windows.jsonl");
        auto p = decode_normalized()
                     .map(metrics_of, "metrics")
                     .tumbling_window(
                         window_s_, [](const block_metrics& m) { return m.gas_price.chain.name; },
                         [](const block_metrics& m) { return m.gas_price.timestamp; })
                     .aggregate(summarize_window, "summarize")
                     .sink(
                         [&](const window_summary& w) {
                             out.write(records::to_line(window_line(w, metric_kind::gas_price_gwei)));
                             out.write(records::to_line(window_line(w, metric_kind::block_usage_ratio)));
                         },
                         "window-file");
        windows_ = consume(normalized_topic_, windows_group, p, normalized_done_, stop);
    }

    const network_entry& net_;
    streamlog::broker& broker_;
    fs::path dir_;
    std::uint64_t window_s_;
    std::uint64_t bucket_s_;
    std::uint64_t capacity_;

    std::shared_ptr<streamlog::topic> raw_topic_;
    std::shared_ptr<streamlog::topic> normalized_topic_;
    std::unique_ptr<line_writer> raw_out_;
    std::unique_ptr<line_writer> dead_out_;
    std::mutex dead_mtx_;
    std::map<std::string, std::atomic<bool>> failed_groups_;

    std::atomic<bool> raw_done_{false};
    std::atomic<bool> normalized_done_{false};
    std::uint64_t raw_records_ = 0;
    std::optional<ingest_result> ingest_;

    series gas_series_{chain(), metric_kind::gas_price_gwei};
    series usage_series_{chain(), metric_kind::block_usage_ratio};
    consumer_outcome normalize_;
    consumer_outcome metrics_;
    consumer_outcome windows_;
    std::vector<std::jthread> threads_;
};

inline records::ojson stage_json(const consumer_outcome& o) {
    records::ojson j;
    j["records_in"] = o.report.records_in;
    j["dead_letters"] = o.report.dead_letter_count;
    j["windows_flushed"] = o.report.windows_flushed;
    j["windowed_records"] = o.report.windowed_records;
    j["skipped"] = o.skipped;
    j["aborted"] = o.report.aborted;
    if (!o.failure.empty()) j["failure"] = o.failure;
    auto stages = records::ojson::array();
    for (auto& s : o.report.stages) {
        records::ojson st;
        st["name"] = s.name;
        st["in"] = s.in;
        st["out"] = s.out;
        st["dead_letters"] = s.dead_letters;
        stages.push_back(st);
    }
    j["stages"] = stages;
    return j;
}

inline records::ojson report_json(const run_summary& s) {
    records::ojson j;
    j["interrupted"] = s.interrupted;
    auto chains = records::ojson::array();
    for (auto& c : s.chains) {
        records::ojson cj;
        cj["chain"] = c.chain;
        cj["raw_records"] = c.raw_records;
        if (c.ingest) {
            records::ojson ij;
            ij["emitted"] = c.ingest->emitted;
            ij["rpc_failures"] = c.ingest->rpc_failures;
            ij["head_regressions"] = c.ingest->head_regressions;
            ij["halted"] = c.ingest->halted;
            if (c.ingest->halted) ij["diagnostic"] = c.ingest->diagnostic;
            cj["ingest"] = ij;
        }
        cj["normalize"] = stage_json(c.normalize);
        cj["metrics"] = stage_json(c.metrics);
        cj["windows"] = stage_json(c.windows);
        chains.push_back(cj);
    }
    j["chains"] = chains;
    return j;
}

/// Writes summary.jsonl (whole-run statistics per chain and metric) and report.json.
inline void write_run_outputs(const fs::path& out_dir, const run_summary& s) {
    std::string summary;
    for (auto& c : s.chains) {
        if (c.gas_price) summary += records::to_line(stats_line(c.chain, metric_kind::gas_price_gwei, *c.gas_price)) + "\n";
        if (c.block_usage)
            summary += records::to_line(stats_line(c.chain, metric_kind::block_usage_ratio, *c.block_usage)) + "\n";
    }
    write_file(out_dir / "summary.jsonl", summary);
    write_file(out_dir / "report.json", report_json(s).dump(2) + "\n");
}

/// Table of whole-run median and IQR per chain.
inline void print_summary_table(std::ostream& os, const run_summary& s) {
    auto cell = [](const std::optional<summary_stats>& st, bool iqr) {
        return st ? plot::format_double(iqr ? st->iqr : st->median) : std::string("-");
    };
    os << "chain\tgas_price_iqr\tgas_price_median\tblock_ratio_iqr\tblock_ratio_median\tblocks\n";
    for (auto& c : s.chains)
        os << c.chain << '\t' << cell(c.gas_price, true) << '\t' << cell(c.gas_price, false) << '\t'
           << cell(c.block_usage, true) << '\t' << cell(c.block_usage, false) << '\t' << c.raw_records << '\n';
}

using source_factory = std::function<std::unique_ptr<block_source>(const network_entry&)>;

inline std::unique_ptr<block_source> rpc_source(const network_entry& n) {
    return std::make_unique<rpc_client>(n.profile.chain(), http_transport(n.profile->rpc_url), n.sample_priority);
}

struct monitor_options {
    source_factory make_source = rpc_source;
    std::function<void(const std::string&)> log;
    /// Ingest sleeps; tests replace this to run without wall-clock delays.
    std::function<void(std::chrono::milliseconds, std::stop_token)> sleep;
};

/// Live monitoring: one ingest loop per chain feeding its runtime, until every chain reaches
/// max_blocks, halts, or `stop` is requested.
inline run_summary run_monitor(const run_config& cfg, std::stop_token stop, monitor_options opts = {}) {
    fs::path out_dir = cfg.output_dir;
    fs::create_directories(out_dir);
    streamlog::broker broker(cfg.retention);
    std::vector<std::unique_ptr<chain_runtime>> runtimes;
    for (auto& n : cfg.networks) runtimes.push_back(std::make_unique<chain_runtime>(n, broker, out_dir, cfg));
    for (auto& rt : runtimes) rt->start(stop);

    std::vector<std::jthread> ingest_threads;
    for (std::size_t i = 0; i < cfg.networks.size(); ++i) {
        ingest_threads.emplace_back([&, i] {
            const auto& net = cfg.networks[i];
            auto& rt = *runtimes[i];
            ingest_cursor cursor{net.profile.chain(), std::nullopt};
            std::uint64_t emitted = 0;
            poll_options po;
            po.start_block = net.start_block;
            po.max_blocks = net.max_blocks;
            po.log = opts.log;
            po.sleep = opts.sleep;
            try {
                auto source = opts.make_source(net);
                rt.set_ingest_result(poll_chain(
                    net.profile, *source, cursor, [&](raw_block_header h) {
                        rt.produce(h, stop);
                        ++emitted;
                    }, stop, po));
            } catch (const std::exception& e) {
                ingest_result r;
                r.halted = true;
                r.diagnostic = e.what();
                r.emitted = emitted;
                if (opts.log) opts.log(net.profile.chain().name + ": ingest aborted: " + e.what());
                rt.set_ingest_result(r);
            }
            rt.producer_done();
        });
    }
    for (auto& t : ingest_threads) t.join();

    run_summary summary;
    summary.interrupted = stop.stop_requested();
    for (auto& rt : runtimes) {
        rt->join();
        summary.chains.push_back(rt->finish());
    }
    write_run_outputs(out_dir, summary);
    return summary;
}

/// Parses and checks a recorded raw-header JSONL stream. Errors carry the 1-based line number.
inline std::vector<raw_block_header> read_replay_input(std::istream& in, const run_config& cfg) {
    std::vector<raw_block_header> out;
    std::map<std::string, raw_block_header> last;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fail = [&](const std::string& why) {
            throw error(error_code::malformed_record, "line " + std::to_string(lineno) + ": " + why);
        };
        raw_block_header h;
        try {
            h = records::parse_raw(line);
        } catch (const error& e) {
            fail(e.message());
        }
        auto* net = cfg.find(h.chain.name);
        if (!net) fail("chain '" + h.chain.name + "' is not configured");
        h.chain.chain_id = net->profile.chain().chain_id;
        try {
            check_header(h);
        } catch (const error& e) {
            fail(e.message());
        }
        if (auto it = last.find(h.chain.name); it != last.end()) {
            if (h.number <= it->second.number) fail("block numbers must strictly increase per chain");
            if (h.timestamp < it->second.timestamp) fail("timestamps must not decrease per chain");
        }
        last[h.chain.name] = h;
        out.push_back(std::move(h));
    }
    return out;
}

/// Offline run over recorded headers. Output bytes depend only on the input and configuration.
inline run_summary run_replay(const std::vector<raw_block_header>& input, const run_config& cfg) {
    fs::path out_dir = cfg.output_dir;
    fs::create_directories(out_dir);
    streamlog::broker broker(cfg.retention);
    std::vector<std::unique_ptr<chain_runtime>> runtimes;
    for (auto& n : cfg.networks) runtimes.push_back(std::make_unique<chain_runtime>(n, broker, out_dir, cfg));
    std::stop_source never;
    for (auto& rt : runtimes) rt->start(never.get_token());

    std::vector<std::jthread> producers;
    for (std::size_t i = 0; i < cfg.networks.size(); ++i) {
        producers.emplace_back([&, i] {
            auto& rt = *runtimes[i];
            for (auto& h : input)
                if (h.chain == rt.chain()) rt.produce(h);
            rt.producer_done();
        });
    }
    for (auto& t : producers) t.join();

    run_summary summary;
    for (auto& rt : runtimes) {
        rt->join();
        summary.chains.push_back(rt->finish());
    }
    write_run_outputs(out_dir, summary);
    return summary;
}

/// Reads a metric JSONL file that must hold exactly one (chain, kind) series.
inline series read_metric_series(std::istream& in) {
    std::optional<series> s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        metric_sample m;
        try {
            m = records::parse_metric(line);
        } catch (const error& e) {
            throw error(error_code::malformed_record, "line " + std::to_string(lineno) + ": " + e.message());
        }
        if (!s) s.emplace(m.chain, m.kind);
        if (m.chain != s->chain() || m.kind != s->kind())
            throw error(error_code::mixed_series, "line " + std::to_string(lineno) + ": statistics need a single chain and kind, found " +
                                                      s->chain().name + "/" + to_string(s->kind()) + " and " +
                                                      m.chain.name + "/" + to_string(m.kind));
        try {
            s->push(std::move(m));
        } catch (const error& e) {
            throw error(e.code(), "line " + std::to_string(lineno) + ": " + e.message());
        }
    }
    if (!s) throw error(error_code::empty_series, "input holds no samples");
    return std::move(*s);
}

inline series read_metric_series(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error(error_code::malformed_record, "cannot open " + path);
    return read_metric_series(in);
}

inline summary_stats run_stats(const series& s) { return summarize(s.samples()); }

struct plot_files {
    fs::path csv;
    fs::path svg;
    std::size_t rows = 0;
};

/// Writes <out>.csv and <out>.svg (any extension on `out` is replaced).
inline plot_files run_plot(const series& s, std::uint64_t bucket_s, fs::path out) {
    if (s.empty()) throw error(error_code::empty_series, "nothing to plot");
    auto buckets = downsample(s.samples(), bucket_s);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    plot_files f{fs::path(out).replace_extension(".csv"), fs::path(out).replace_extension(".svg"), buckets.size()};
    write_file(f.csv, plot::to_csv(buckets));
    write_file(f.svg, plot::to_svg(buckets, s.chain().name + " " + to_string(s.kind())));
    return f;
}

}  // namespace evmmon
