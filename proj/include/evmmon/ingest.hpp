#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "core_model.hpp"
#include "hex.hpp"

namespace evmmon {

/// Sends one JSON-RPC request body and returns the response body.
/// Implementations throw error(rpc_unavailable) on transport failure.
using rpc_transport = std::function<std::string(const std::string&)>;

struct endpoint_parts {
    std::string scheme_host_port;
    std::string path;
};

inline endpoint_parts split_endpoint(const std::string& url) {
    auto scheme_end = url.find("://");
    auto path_start = scheme_end == std::string::npos ? std::string::npos : url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline rpc_transport http_transport(const std::string& url, std::chrono::milliseconds timeout = std::chrono::seconds(10)) {
    auto parts = split_endpoint(url);
    auto client = std::make_shared<httplib::Client>(parts.scheme_host_port);
    client->set_connection_timeout(timeout);
    client->set_read_timeout(timeout);
    client->set_keep_alive(true);
    client->set_tcp_nodelay(true);
    auto mtx = std::make_shared<std::mutex>();
    return [client, mtx, path = parts.path, url](const std::string& body) {
        std::lock_guard lock(*mtx);
        auto res = client->Post(path, body, "application/json");
        if (!res) throw error(error_code::rpc_unavailable, url + ": " + httplib::to_string(res.error()));
        if (res->status != 200) throw error(error_code::rpc_unavailable, url + ": HTTP " + std::to_string(res->status));
        return res->body;
    };
}

class block_source {
public:
    virtual ~block_source() = default;
    virtual std::uint64_t head() = 0;
    virtual raw_block_header block(std::uint64_t number) = 0;
};

class rpc_client : public block_source {
public:
    rpc_client(chain_ref chain, rpc_transport transport, bool sample_priority = true)
        : chain_(std::move(chain)), transport_(std::move(transport)), sample_priority_(sample_priority) {}

    /// Full response envelope; throws only for transport or framing failures.
    nlohmann::json exchange(const std::string& method, nlohmann::json params) {
        nlohmann::json req = {{"jsonrpc", "2.0"}, {"id", ++next_id_}, {"method", method}, {"params", std::move(params)}};
        auto body = transport_(req.dump());
        nlohmann::json res = nlohmann::json::parse(body, nullptr, false);
        if (res.is_discarded() || !res.is_object())
            throw error(error_code::rpc_unavailable, method + ": unparseable response");
        return res;
    }

    nlohmann::json call(const std::string& method, nlohmann::json params) {
        auto res = exchange(method, std::move(params));
        if (auto it = res.find("error"); it != res.end() && !it->is_null())
            throw error(error_code::rpc_unavailable, method + ": " + it->dump());
        if (!res.contains("result")) throw error(error_code::rpc_unavailable, method + ": response without result");
        return res["result"];
    }

    std::uint64_t head() override {
        auto r = call("eth_blockNumber", nlohmann::json::array());
        if (!r.is_string()) throw error(error_code::rpc_unavailable, "eth_blockNumber: non-string result");
        try {
            return parse_quantity(r.get<std::string>());
        } catch (const error& e) {
            throw error(error_code::rpc_unavailable, std::string("eth_blockNumber: ") + e.what());
        }
    }

    raw_block_header block(std::uint64_t number) override { return fetch_block(number); }

    /// eth_getBlockByNumber, plus the block's median priority fee via eth_feeHistory when sampling is on.
    raw_block_header fetch_block(std::uint64_t number) {
        auto r = call("eth_getBlockByNumber", nlohmann::json::array({to_quantity(number), false}));
        if (r.is_null()) throw error(error_code::block_not_found, chain_.name + " block " + std::to_string(number));
        auto h = decode_block(chain_, r);
        if (h.number != number)
            throw error(error_code::invalid_header, chain_.name + ": asked for block " + std::to_string(number) +
                                                        ", node returned " + std::to_string(h.number));
        if (sample_priority_) h.priority_fee_observed = sample_priority_fee(number);
        return h;
    }

    static raw_block_header decode_block(const chain_ref& chain, const nlohmann::json& obj) {
        if (!obj.is_object()) throw error(error_code::invalid_header, chain.name + ": block is not an object");
        auto field = [&](const char* name) -> std::uint64_t {
            auto it = obj.find(name);
            if (it == obj.end() || it->is_null())
                throw error(error_code::invalid_header, chain.name + ": missing field " + name);
            if (!it->is_string()) throw error(error_code::invalid_header, chain.name + ": field " + name + " not a string");
            try {
                return parse_quantity(it->get<std::string>());
            } catch (const error& e) {
                throw error(error_code::invalid_header, chain.name + ": field " + name + ": " + e.message());
            }
        };
        raw_block_header h;
        h.chain = chain;
        h.number = field("number");
        h.timestamp = field("timestamp");
        h.gas_used = {field("gasUsed")};
        h.gas_limit = {field("gasLimit")};
        h.base_fee_per_gas = {field("baseFeePerGas")};
        check_header(h);
        return h;
    }

private:
    std::optional<fee_quantity> sample_priority_fee(std::uint64_t number) {
        // A node without eth_feeHistory answers with an error object: the sample is absent.
        auto res = exchange("eth_feeHistory", nlohmann::json::array({"0x1", to_quantity(number), nlohmann::json::array({50})}));
        try {
            const auto& reward = res.at("result").at("reward");
            if (reward.empty() || reward[0].empty()) return std::nullopt;
            return fee_quantity{parse_quantity(reward[0][0].get<std::string>())};
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    chain_ref chain_;
    rpc_transport transport_;
    bool sample_priority_;
    std::uint64_t next_id_ = 0;
};

struct ingest_cursor {
    chain_ref chain;
    std::optional<std::uint64_t> last_emitted;
};

struct poll_options {
    /// First block to emit when the cursor is empty; defaults to the head seen at startup.
    std::optional<std::uint64_t> start_block;
    /// Stop after this many emissions.
    std::optional<std::uint64_t> max_blocks;
    int invalid_header_attempts = 3;
    std::chrono::milliseconds backoff_cap{30'000};
    std::function<void(std::chrono::milliseconds, std::stop_token)> sleep;
    std::function<void(const std::string&)> log;
};

struct ingest_result {
    std::uint64_t emitted = 0;
    std::uint64_t rpc_failures = 0;
    std::uint64_t head_regressions = 0;
    bool halted = false;
    std::string diagnostic;
};

inline void interruptible_sleep(std::chrono::milliseconds d, std::stop_token st) {
    std::mutex m;
    std::condition_variable_any cv;
    std::unique_lock lock(m);
    cv.wait_for(lock, st, d, [] { return false; });
}

/// min(base * 2^(failures-1), cap)
inline std::chrono::milliseconds backoff_delay(std::chrono::milliseconds base, std::uint64_t failures,
                                               std::chrono::milliseconds cap) {
    if (failures == 0) return std::chrono::milliseconds(0);
    auto d = base;
    for (std::uint64_t i = 1; i < failures && d < cap; ++i) d *= 2;
    return std::min(d, cap);
}

/// Emits every new block of one chain exactly once, in ascending order, until stopped.
/// Gaps between observed heads are backfilled; repeated or regressing heads emit nothing.
inline ingest_result poll_chain(const validated_profile& profile, block_source& source, ingest_cursor& cursor,
                                const std::function<void(raw_block_header)>& emit, std::stop_token stop,
                                poll_options opts = {}) {
    using std::chrono::milliseconds;
    auto sleep = opts.sleep ? opts.sleep : interruptible_sleep;
    auto log = opts.log ? opts.log : [](const std::string&) {};
    const milliseconds poll{profile->poll_interval_ms};
    const auto& name = profile.chain().name;

    ingest_result result;
    std::uint64_t consecutive_failures = 0;
    int invalid_attempts = 0;

    auto done = [&] { return stop.stop_requested() || (opts.max_blocks && result.emitted >= *opts.max_blocks); };
    auto back_off = [&](const std::string& why) {
        ++result.rpc_failures;
        ++consecutive_failures;
        auto d = backoff_delay(poll, consecutive_failures, opts.backoff_cap);
        log(name + ": " + why + "; retrying in " + std::to_string(d.count()) + " ms");
        sleep(d, stop);
    };

    while (!done()) {
        std::uint64_t head;
        try {
            head = source.head();
        } catch (const error& e) {
            back_off(e.what());
            continue;
        }

        std::uint64_t next;
        if (cursor.last_emitted) {
            if (head < *cursor.last_emitted) {
                ++result.head_regressions;
                log(name + ": head regressed to " + std::to_string(head) + " below emitted " +
                    std::to_string(*cursor.last_emitted) + "; ignored");
            }
            next = *cursor.last_emitted + 1;
        } else {
            next = opts.start_block.value_or(head);
        }

        bool failed = false;
        while (next <= head && !done()) {
            try {
                auto h = source.block(next);
                consecutive_failures = 0;
                invalid_attempts = 0;
                emit(std::move(h));
                cursor.last_emitted = next;
                ++result.emitted;
                ++next;
            } catch (const error& e) {
                if (e.code() == error_code::invalid_header) {
                    if (++invalid_attempts >= opts.invalid_header_attempts) {
                        result.halted = true;
                        result.diagnostic = e.what();
                        log(name + ": halting ingest: " + result.diagnostic);
                        return result;
                    }
                }
                back_off(e.what());
                failed = true;
                break;
            }
        }
        if (!failed && !done()) {
            consecutive_failures = 0;
            sleep(poll, stop);
        }
    }
    return result;
}

}  // namespace evmmon
