#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "core_model.hpp"
#include "hex.hpp"

namespace evmmon::sim {

/// xorshift64 (Marsaglia 2003, shifts 13/7/17). State must be nonzero; seed 0 maps to a fixed constant.
class xorshift64 {
public:
    static constexpr std::uint64_t zero_seed_replacement = 0x9E3779B97F4A7C15ULL;

    explicit xorshift64(std::uint64_t seed) : state_(seed ? seed : zero_seed_replacement) {}

    std::uint64_t next() noexcept {
        state_ ^= state_ << 13;
        state_ ^= state_ >> 7;
        state_ ^= state_ << 17;
        return state_;
    }

    /// Uniform integer in [-spread, spread] (modulo reduction; bias is irrelevant at these spreads).
    std::int64_t symmetric(std::uint64_t spread) noexcept {
        if (spread == 0) return 0;
        return static_cast<std::int64_t>(next() % (2 * spread + 1)) - static_cast<std::int64_t>(spread);
    }

private:
    std::uint64_t state_;
};

struct constant_base_fee {
    std::uint64_t base_fee_wei = 0;
};

struct adaptive_base_fee {
    std::uint64_t initial_wei = 0;
    std::uint64_t min_wei = 0;
    std::uint64_t adjust_denominator = 8;
    /// Target fraction of the limit, in parts per million (500'000 = half full).
    std::uint64_t target_ratio_ppm = 500'000;
};

using fee_regime = std::variant<constant_base_fee, adaptive_base_fee>;

inline constexpr std::uint64_t ppm = 1'000'000;

/// gas_used = limit * clamp(mean + U[-jitter, jitter], 0, 1e6) / 1e6.
struct usage_model {
    std::uint64_t mean_ppm = 500'000;
    std::uint64_t jitter_ppm = 0;
};

/// priority = max(0, mean + U[-jitter, jitter]) wei; absent from the node when disabled.
struct priority_model {
    bool enabled = true;
    std::uint64_t mean_wei = 0;
    std::uint64_t jitter_wei = 0;
};

struct scenario {
    chain_ref chain;
    std::uint64_t seed = 0;
    std::uint64_t block_count = 0;
    std::uint64_t block_interval_s = 0;
    std::uint64_t genesis_timestamp = 1'700'000'000;
    fee_regime regime = constant_base_fee{};
    usage_model usage;
    gas_quantity reported_limit;
    /// Limit the fee rule adjusts against; defaults to the reported limit.
    std::optional<gas_quantity> fee_limit;
    priority_model priority;
};

/// One step of the standard EVM fee-market update:
/// max(min, round(current * (1 + (used / (target * limit) - 1) / denominator))), in exact integer arithmetic.
inline std::uint64_t next_base_fee(std::uint64_t current_wei, std::uint64_t gas_used, std::uint64_t effective_limit,
                                   const fee_regime& regime) {
    if (auto* c = std::get_if<constant_base_fee>(&regime)) return c->base_fee_wei;
    const auto& a = std::get<adaptive_base_fee>(regime);
    if (effective_limit == 0 || a.adjust_denominator == 0 || a.target_ratio_ppm == 0)
        throw error(error_code::invalid_scenario, "adaptive fee rule needs positive limit, denominator and target");
    using i128 = __int128;
    // delta = current * (used*1e6 - target_ppm*limit) / (target_ppm*limit*denominator)
    const i128 target_scaled = static_cast<i128>(a.target_ratio_ppm) * effective_limit;
    const i128 num = static_cast<i128>(current_wei) * (static_cast<i128>(gas_used) * ppm - target_scaled);
    const i128 den = target_scaled * a.adjust_denominator;
    i128 q = num / den, r = num % den;
    // round half away from zero
    if (2 * (r < 0 ? -r : r) >= den) q += num < 0 ? -1 : 1;
    i128 next = static_cast<i128>(current_wei) + q;
    if (next < static_cast<i128>(a.min_wei)) next = a.min_wei;
    if (next > static_cast<i128>(UINT64_MAX)) next = UINT64_MAX;
    return static_cast<std::uint64_t>(next);
}

inline void check_scenario(const scenario& s) {
    auto fail = [&](const std::string& why) { throw error(error_code::invalid_scenario, s.chain.name + ": " + why); };
    if (s.chain.name.empty()) fail("chain name is empty");
    if (s.block_count == 0) fail("block_count must be positive");
    if (s.block_interval_s == 0) fail("block_interval_s must be positive");
    if (s.reported_limit.value == 0) fail("reported_limit must be positive");
    if (s.usage.mean_ppm > ppm) fail("usage mean above 1");
    if (s.fee_limit && s.fee_limit->value == 0) fail("fee_limit must be positive");
    if (auto* a = std::get_if<adaptive_base_fee>(&s.regime)) {
        if (a->adjust_denominator == 0) fail("adjust_denominator must be positive");
        if (a->target_ratio_ppm == 0 || a->target_ratio_ppm > ppm) fail("target ratio must be in (0, 1]");
    }
}

/// Deterministic block ledger for a scenario. Integer arithmetic only.
inline std::vector<raw_block_header> generate_scenario(const scenario& s) {
    check_scenario(s);
    xorshift64 rng(s.seed);
    std::vector<raw_block_header> ledger;
    ledger.reserve(s.block_count);
    std::uint64_t base_fee = std::visit(
        [](auto& r) {
            if constexpr (std::is_same_v<std::decay_t<decltype(r)>, constant_base_fee>)
                return r.base_fee_wei;
            else
                return r.initial_wei;
        },
        s.regime);
    const std::uint64_t limit = s.reported_limit.value;
    const std::uint64_t fee_limit = s.fee_limit.value_or(s.reported_limit).value;
    for (std::uint64_t n = 0; n < s.block_count; ++n) {
        auto ratio = static_cast<std::int64_t>(s.usage.mean_ppm) + rng.symmetric(s.usage.jitter_ppm);
        ratio = std::clamp<std::int64_t>(ratio, 0, static_cast<std::int64_t>(ppm));
        auto used = static_cast<std::uint64_t>(static_cast<unsigned __int128>(limit) * static_cast<std::uint64_t>(ratio) / ppm);

        raw_block_header h;
        h.chain = s.chain;
        h.number = n;
        h.timestamp = s.genesis_timestamp + n * s.block_interval_s;
        h.gas_used = {used};
        h.gas_limit = {limit};
        h.base_fee_per_gas = {base_fee};
        if (s.priority.enabled) {
            auto p = static_cast<std::int64_t>(s.priority.mean_wei) + rng.symmetric(s.priority.jitter_wei);
            h.priority_fee_observed = fee_quantity{static_cast<std::uint64_t>(std::max<std::int64_t>(p, 0))};
        }
        ledger.push_back(std::move(h));
        base_fee = next_base_fee(base_fee, std::min(used, fee_limit), fee_limit, s.regime);
    }
    return ledger;
}

/// Block object exactly as eth_getBlockByNumber returns it (header fields only).
inline nlohmann::json encode_block(const raw_block_header& h) {
    return {{"number", to_quantity(h.number)},
            {"timestamp", to_quantity(h.timestamp)},
            {"gasUsed", to_quantity(h.gas_used.value)},
            {"gasLimit", to_quantity(h.gas_limit.value)},
            {"baseFeePerGas", to_quantity(h.base_fee_per_gas.value_wei)}};
}

class node_clock {
public:
    virtual ~node_clock() = default;
    virtual std::uint64_t now() const = 0;
};

/// Set or advanced explicitly; lets a 12-hour scenario run in milliseconds.
class virtual_clock : public node_clock {
public:
    explicit virtual_clock(std::uint64_t t = 0) : t_(t) {}
    std::uint64_t now() const override { return t_.load(); }
    void set(std::uint64_t t) {
        auto cur = t_.load();
        while (t > cur && !t_.compare_exchange_weak(cur, t)) {
        }
    }
    void advance(std::uint64_t dt) { t_.fetch_add(dt); }

private:
    std::atomic<std::uint64_t> t_;
};

/// Wall time since construction, scaled by `speed` and offset to `origin`.
class scaled_real_clock : public node_clock {
public:
    scaled_real_clock(std::uint64_t origin, double speed)
        : origin_(origin), speed_(speed), start_(std::chrono::steady_clock::now()) {}
    std::uint64_t now() const override {
        auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        return origin_ + static_cast<std::uint64_t>(dt * speed_);
    }

private:
    std::uint64_t origin_;
    double speed_;
    std::chrono::steady_clock::time_point start_;
};

/// JSON-RPC 2.0 request handling over an immutable ledger.
class rpc_handler {
public:
    rpc_handler(std::shared_ptr<const std::vector<raw_block_header>> ledger, std::shared_ptr<const node_clock> clock)
        : ledger_(std::move(ledger)), clock_(std::move(clock)) {}

    /// Highest block whose timestamp is at or before the clock; genesis is always visible.
    std::uint64_t head() const {
        if (ledger_->empty()) return 0;
        auto t = clock_->now();
        auto it = std::upper_bound(ledger_->begin(), ledger_->end(), t,
                                   [](std::uint64_t v, const raw_block_header& h) { return v < h.timestamp; });
        if (it == ledger_->begin()) return 0;
        return std::prev(it)->number;
    }

    std::string handle(const std::string& body) const {
        auto req = nlohmann::json::parse(body, nullptr, false);
        if (req.is_discarded()) return error_response(nullptr, -32700, "Parse error").dump();
        if (req.is_array()) {
            if (req.empty()) return error_response(nullptr, -32600, "Invalid Request").dump();
            auto out = nlohmann::json::array();
            for (auto& r : req) out.push_back(handle_one(r));
            return out.dump();
        }
        return handle_one(req).dump();
    }

    nlohmann::json handle_one(const nlohmann::json& req) const {
        if (!req.is_object() || req.value("jsonrpc", "") != "2.0" || !req.contains("method") ||
            !req["method"].is_string())
            return error_response(req.is_object() && req.contains("id") ? req["id"] : nullptr, -32600,
                                  "Invalid Request");
        const auto id = req.value("id", nlohmann::json());
        const auto method = req["method"].get<std::string>();
        const auto params = req.value("params", nlohmann::json::array());
        if (!params.is_array()) return error_response(id, -32602, "Invalid params");

        if (method == "eth_blockNumber") return result(id, to_quantity(head()));
        if (method == "eth_chainId")
            return result(id, to_quantity(ledger_->empty() ? 0 : ledger_->front().chain.chain_id));
        if (method == "eth_getBlockByNumber") {
            if (params.empty()) return error_response(id, -32602, "Invalid params");
            auto n = block_param(params[0]);
            if (!n) return error_response(id, -32602, "Invalid params");
            if (*n > head() || *n >= ledger_->size()) return result(id, nullptr);
            return result(id, encode_block((*ledger_)[*n]));
        }
        if (method == "eth_feeHistory") return fee_history(id, params);
        return error_response(id, -32601, "Method not found");
    }

private:
    std::optional<std::uint64_t> block_param(const nlohmann::json& p) const {
        if (!p.is_string()) return std::nullopt;
        auto s = p.get<std::string>();
        if (s == "latest" || s == "safe" || s == "finalized") return head();
        if (s == "earliest") return 0;
        try {
            return parse_quantity(s);
        } catch (const error&) {
            return std::nullopt;
        }
    }

    // Only blockCount 1 with a single percentile is meaningful here: the stored per-block priority estimate.
    nlohmann::json fee_history(const nlohmann::json& id, const nlohmann::json& params) const {
        if (params.size() < 2) return error_response(id, -32602, "Invalid params");
        auto newest = block_param(params[1]);
        if (!newest || *newest > head() || *newest >= ledger_->size())
            return error_response(id, -32602, "Invalid params");
        const auto& h = (*ledger_)[*newest];
        if (!h.priority_fee_observed) return error_response(id, -32601, "Method not found");
        nlohmann::json reward = nlohmann::json::array();
        if (params.size() >= 3 && params[2].is_array() && !params[2].empty())
            reward.push_back(nlohmann::json::array({to_quantity(h.priority_fee_observed->value_wei)}));
        nlohmann::json base = nlohmann::json::array({to_quantity(h.base_fee_per_gas.value_wei)});
        return result(id, {{"oldestBlock", to_quantity(h.number)}, {"baseFeePerGas", base}, {"reward", reward}});
    }

    static nlohmann::json result(const nlohmann::json& id, nlohmann::json r) {
        return {{"jsonrpc", "2.0"}, {"id", id}, {"result", std::move(r)}};
    }

    static nlohmann::json error_response(const nlohmann::json& id, int code, const char* msg) {
        return {{"jsonrpc", "2.0"}, {"id", id}, {"error", {{"code", code}, {"message", msg}}}};
    }

    std::shared_ptr<const std::vector<raw_block_header>> ledger_;
    std::shared_ptr<const node_clock> clock_;
};

/// Serves an rpc_handler over HTTP POST on 127.0.0.1. Stops on destruction.
class rpc_server {
public:
    explicit rpc_server(rpc_handler handler, std::string host = "127.0.0.1", int port = 0)
        : handler_(std::move(handler)), host_(std::move(host)) {
        server_.set_tcp_nodelay(true);
        server_.Post(".*", [this](const httplib::Request& req, httplib::Response& res) {
            res.set_content(handler_.handle(req.body), "application/json");
        });
        port_ = port == 0 ? server_.bind_to_any_port(host_) : (server_.bind_to_port(host_, port) ? port : -1);
        if (port_ < 0) throw error(error_code::rpc_unavailable, "cannot bind " + host_ + ":" + std::to_string(port));
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    rpc_server(const rpc_server&) = delete;
    rpc_server& operator=(const rpc_server&) = delete;

    ~rpc_server() { stop(); }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const noexcept { return port_; }
    std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }

private:
    rpc_handler handler_;
    std::string host_;
    httplib::Server server_;
    int port_ = -1;
    std::thread thread_;
};

}  // namespace evmmon::sim
