#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "core_model.hpp"

namespace evmmon::cep {

struct window_assignment {
    std::string key;
    std::uint64_t start = 0;
    std::uint64_t end = 0;  // exclusive

    friend bool operator==(const window_assignment&, const window_assignment&) = default;
};

inline window_assignment assign_tumbling_window(std::string key, std::uint64_t timestamp, std::uint64_t width_s) {
    if (width_s == 0) throw std::invalid_argument("window width must be positive");
    auto start = timestamp / width_s * width_s;
    return {std::move(key), start, start + width_s};
}

/// Contents of one closed tumbling window.
template <class T>
struct window {
    window_assignment assignment;
    std::vector<T> items;
    /// Flushed at shutdown rather than by the watermark passing its end.
    bool partial = false;
};

struct dead_letter {
    std::size_t stage;
    std::string stage_name;
    std::string reason;
};

struct stage_report {
    std::string name;
    std::uint64_t in = 0;
    std::uint64_t out = 0;
    std::uint64_t dead_letters = 0;
};

struct run_report {
    std::vector<stage_report> stages;
    std::uint64_t records_in = 0;
    std::uint64_t dead_letter_count = 0;
    /// Sum of item counts over every window flushed by window stages.
    std::uint64_t windowed_records = 0;
    std::uint64_t windows_flushed = 0;
    bool aborted = false;
    bool interrupted = false;
};

class sink_failure : public error {
public:
    sink_failure(const std::string& msg, run_report report)
        : error(error_code::sink_failure, msg), report_(std::move(report)) {}
    const run_report& report() const noexcept { return report_; }

private:
    run_report report_;
};

namespace detail {

struct context {
    std::vector<stage_report> stages;
    std::vector<dead_letter> dead_letters;
    std::function<void(const dead_letter&)> on_dead_letter;
    std::vector<std::pair<std::size_t, std::function<void()>>> flushers;
    std::uint64_t windowed_records = 0;
    std::uint64_t windows_flushed = 0;

    void reject(std::size_t stage, std::string reason) {
        ++stages[stage].dead_letters;
        dead_letter d{stage, stages[stage].name, std::move(reason)};
        if (on_dead_letter) on_dead_letter(d);
        dead_letters.push_back(std::move(d));
    }
};

// Thrown through the stage chain so sink errors are not mistaken for a transform error.
struct sink_error {
    std::string message;
};

template <class T>
using push_fn = std::function<void(T)>;

template <class In, class Cur>
using factory = std::function<push_fn<In>(push_fn<Cur>, context&)>;

}  // namespace detail

template <class In>
class pipeline;

template <class In, class Cur>
class windowed_builder;

/// Builds an operator chain from a source record type `In`; `Cur` is the type leaving the last stage.
template <class In, class Cur = In>
class builder {
public:
    builder() requires std::is_same_v<In, Cur>
        : factory_([](detail::push_fn<Cur> down, detail::context&) { return down; }) {}

    builder(detail::factory<In, Cur> f, std::vector<std::string> names)
        : factory_(std::move(f)), names_(std::move(names)) {}

    /// One output per input. A throwing `fn` sends that record to the dead-letter list instead.
    template <class Fn, class Out = std::invoke_result_t<Fn, const Cur&>>
    builder<In, Out> map(Fn fn, std::string name = "map") && {
        auto idx = names_.size();
        auto prev = std::move(factory_);
        auto f = [prev, fn, idx](detail::push_fn<Out> down, detail::context& ctx) {
            return prev(
                [fn, down, idx, &ctx](Cur c) {
                    auto& st = ctx.stages[idx];
                    ++st.in;
                    std::optional<Out> o;
                    try {
                        o.emplace(fn(c));
                    } catch (const std::exception& e) {
                        ctx.reject(idx, e.what());
                        return;
                    }
                    ++st.out;
                    down(std::move(*o));
                },
                ctx);
        };
        names_.push_back(std::move(name));
        return builder<In, Out>(std::move(f), std::move(names_));
    }

    template <class Pred>
    builder<In, Cur> filter(Pred pred, std::string name = "filter") && {
        auto idx = names_.size();
        auto prev = std::move(factory_);
        auto f = [prev, pred, idx](detail::push_fn<Cur> down, detail::context& ctx) {
            return prev(
                [pred, down, idx, &ctx](Cur c) {
                    auto& st = ctx.stages[idx];
                    ++st.in;
                    if (!pred(c)) return;
                    ++st.out;
                    down(std::move(c));
                },
                ctx);
        };
        names_.push_back(std::move(name));
        return builder<In, Cur>(std::move(f), std::move(names_));
    }

    /// Event-time tumbling windows keyed per chain. Watermark = max timestamp seen per key;
    /// records behind it are dead-lettered as late.
    template <class KeyFn, class TsFn>
    windowed_builder<In, Cur> tumbling_window(std::uint64_t width_s, KeyFn key_of, TsFn ts_of,
                                              std::string name = "window") &&;

    pipeline<In> sink(std::function<void(const Cur&)> consumer, std::string name = "sink") &&;

private:
    template <class, class>
    friend class windowed_builder;

    detail::factory<In, Cur> factory_;
    std::vector<std::string> names_;
};

/// A window stage waiting for its aggregate.
template <class In, class Cur>
class windowed_builder {
public:
    windowed_builder(detail::factory<In, window<Cur>> f, std::vector<std::string> names)
        : factory_(std::move(f)), names_(std::move(names)) {}

    template <class Fn, class Out = std::invoke_result_t<Fn, const window<Cur>&>>
    builder<In, Out> aggregate(Fn fn, std::string name = "aggregate") && {
        return builder<In, window<Cur>>(std::move(factory_), std::move(names_)).map(std::move(fn), std::move(name));
    }

private:
    detail::factory<In, window<Cur>> factory_;
    std::vector<std::string> names_;
};

template <class In, class Cur>
template <class KeyFn, class TsFn>
windowed_builder<In, Cur> builder<In, Cur>::tumbling_window(std::uint64_t width_s, KeyFn key_of, TsFn ts_of,
                                                             std::string name) && {
    if (width_s == 0) throw std::invalid_argument("window width must be positive");
    auto idx = names_.size();
    auto prev = std::move(factory_);
    auto f = [prev, key_of, ts_of, width_s, idx](detail::push_fn<window<Cur>> down, detail::context& ctx) {
        struct open_window {
            window<Cur> w;
            std::uint64_t watermark = 0;
        };
        auto state = std::make_shared<std::map<std::string, open_window>>();
        auto emit = [down, idx, &ctx](window<Cur>&& w) {
            ctx.stages[idx].out += w.items.size();
            ctx.windowed_records += w.items.size();
            ++ctx.windows_flushed;
            down(std::move(w));
        };
        ctx.flushers.emplace_back(idx, [state, emit] {
            auto open = std::move(*state);
            state->clear();
            for (auto& [key, ow] : open) {
                if (ow.w.items.empty()) continue;
                ow.w.partial = true;
                emit(std::move(ow.w));
            }
        });
        return prev(
            [state, emit, key_of, ts_of, width_s, idx, &ctx](Cur c) {
                ++ctx.stages[idx].in;
                std::string key = key_of(c);
                std::uint64_t ts = ts_of(c);
                auto it = state->find(key);
                if (it != state->end() && ts < it->second.watermark) {
                    ctx.reject(idx, "late record for " + key + ": ts " + std::to_string(ts) + " < watermark " +
                                        std::to_string(it->second.watermark));
                    return;
                }
                auto a = assign_tumbling_window(key, ts, width_s);
                if (it == state->end()) {
                    it = state->emplace(key, open_window{}).first;
                    it->second.w.assignment = a;
                } else if (it->second.w.assignment.start != a.start) {
                    auto closed = std::move(it->second.w);
                    it->second.w = window<Cur>{a, {}, false};
                    if (!closed.items.empty()) emit(std::move(closed));
                }
                it->second.watermark = std::max(it->second.watermark, ts);
                it->second.w.items.push_back(std::move(c));
            },
            ctx);
    };
    names_.push_back(std::move(name));
    return windowed_builder<In, Cur>(std::move(f), std::move(names_));
}

/// A complete chain ending in exactly one sink. Single-threaded; one instance per chain.
template <class In>
class pipeline {
public:
    template <class Cur>
    pipeline(detail::factory<In, Cur> f, std::vector<std::string> names, std::function<void(const Cur&)> consumer)
        : ctx_(std::make_unique<detail::context>()) {
        for (auto& n : names) ctx_->stages.push_back({n, 0, 0, 0});
        auto sink_idx = ctx_->stages.size() - 1;
        auto& ctx = *ctx_;
        entry_ = f(
            [consumer = std::move(consumer), sink_idx, &ctx](Cur c) {
                ++ctx.stages[sink_idx].in;
                try {
                    consumer(c);
                } catch (const std::exception& e) {
                    throw detail::sink_error{e.what()};
                }
                ++ctx.stages[sink_idx].out;
            },
            ctx);
        std::stable_sort(ctx_->flushers.begin(), ctx_->flushers.end(),
                         [](auto& a, auto& b) { return a.first < b.first; });
    }

    void on_dead_letter(std::function<void(const dead_letter&)> fn) { ctx_->on_dead_letter = std::move(fn); }

    /// Pushes one source record through every stage. Throws sink_failure if the sink throws.
    void push(In record) {
        check_open();
        ++records_in_;
        guarded([&] { entry_(std::move(record)); });
    }

    /// Flushes open windows (marked partial). Further pushes are rejected.
    run_report finish(bool interrupted = false) {
        check_open();
        finished_ = true;
        interrupted_ = interrupted;
        for (auto& [idx, flush] : ctx_->flushers) guarded([&] { flush(); });
        return report();
    }

    template <class Range>
    run_report run(Range&& source) {
        for (auto&& r : source) push(r);
        return finish();
    }

    run_report report() const {
        run_report r;
        r.stages = ctx_->stages;
        r.records_in = records_in_;
        r.dead_letter_count = ctx_->dead_letters.size();
        r.windowed_records = ctx_->windowed_records;
        r.windows_flushed = ctx_->windows_flushed;
        r.aborted = aborted_;
        r.interrupted = interrupted_;
        return r;
    }

    const std::vector<dead_letter>& dead_letters() const noexcept { return ctx_->dead_letters; }

private:
    template <class Fn>
    void guarded(Fn&& fn) {
        try {
            fn();
        } catch (const detail::sink_error& e) {
            aborted_ = true;
            finished_ = true;
            throw sink_failure(e.message, report());
        }
    }

    void check_open() const {
        if (finished_) throw std::logic_error("pipeline already finished");
    }

    std::unique_ptr<detail::context> ctx_;
    detail::push_fn<In> entry_;
    std::uint64_t records_in_ = 0;
    bool finished_ = false;
    bool aborted_ = false;
    bool interrupted_ = false;
};

template <class In, class Cur>
pipeline<In> builder<In, Cur>::sink(std::function<void(const Cur&)> consumer, std::string name) && {
    names_.push_back(std::move(name));
    return pipeline<In>(std::move(factory_), std::move(names_), std::move(consumer));
}

template <class In>
builder<In> source() {
    return builder<In>();
}

}  // namespace evmmon::cep
