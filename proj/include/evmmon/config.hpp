#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core_model.hpp"
#include "simnode.hpp"
#include "streamlog.hpp"

namespace evmmon {

struct network_entry {
    validated_profile profile;
    std::optional<std::uint64_t> start_block;
    std::optional<std::uint64_t> max_blocks;
    bool sample_priority = true;
};

struct run_config {
    std::vector<network_entry> networks;
    streamlog::retention_policy retention;
    std::uint64_t window_s = 300;
    std::uint64_t downsample_bucket_s = 300;
    std::string output_dir = "evmmon-out";

    const network_entry* find(const std::string& chain) const {
        for (auto& n : networks)
            if (n.profile.chain().name == chain) return &n;
        return nullptr;
    }
};

inline constexpr const char* output_dir_env = "EVMMON_OUTPUT_DIR";

namespace detail {

inline bool is_count(const nlohmann::json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

inline std::uint64_t positive_or(const nlohmann::json& j, const char* key, std::uint64_t fallback, const std::string& ctx) {
    if (!j.contains(key)) return fallback;
    const auto& v = j[key];
    if (!detail::is_count(v) || v.get<std::uint64_t>() == 0)
        throw error(error_code::config_parse, ctx + ": '" + key + "' must be a positive integer");
    return v.get<std::uint64_t>();
}

inline std::optional<std::uint64_t> optional_u64(const nlohmann::json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!detail::is_count(j[key]))
        throw error(error_code::config_parse, ctx + ": '" + key + "' must be a non-negative integer");
    return j[key].get<std::uint64_t>();
}

inline network_profile parse_network(const nlohmann::json& n, std::size_t index) {
    if (!n.is_object()) throw error(error_code::config_parse, "networks[" + std::to_string(index) + "] is not an object");
    std::string ctx = "network '" + (n.contains("name") && n["name"].is_string() ? n["name"].get<std::string>()
                                                                                   : "#" + std::to_string(index)) + "'";
    network_profile p;
    if (!n.contains("name") || !n["name"].is_string()) throw error(error_code::config_parse, ctx + ": missing name");
    p.chain.name = n["name"].get<std::string>();
    if (!n.contains("chain_id") || !detail::is_count(n["chain_id"]))
        throw error(error_code::config_parse, ctx + ": missing or invalid chain_id");
    p.chain.chain_id = n["chain_id"].get<std::uint64_t>();
    if (!n.contains("rpc_url") || !n["rpc_url"].is_string())
        throw error(error_code::config_parse, ctx + ": missing rpc_url");
    p.rpc_url = n["rpc_url"].get<std::string>();
    if (n.contains("poll_interval_ms")) {
        if (!detail::is_count(n["poll_interval_ms"]))
            throw error(error_code::config_parse, ctx + ": poll_interval_ms must be an integer");
        p.poll_interval_ms = n["poll_interval_ms"].get<std::uint64_t>();
    }
    if (n.contains("limit_policy")) {
        const auto& lp = n["limit_policy"];
        if (lp == "reported") {
            p.limits = limit_reported{};
        } else if (lp.is_object() && lp.contains("override") && detail::is_count(lp["override"])) {
            p.limits = limit_override{{lp["override"].get<std::uint64_t>()}};
        } else {
            throw error(error_code::config_parse, ctx + ": limit_policy must be \"reported\" or {\"override\": <gas>}");
        }
    }
    if (n.contains("priority_policy")) {
        const auto& pp = n["priority_policy"];
        if (pp == "include")
            p.priority = priority_policy::include;
        else if (pp == "exclude")
            p.priority = priority_policy::exclude;
        else
            throw error(error_code::config_parse, ctx + ": priority_policy must be \"include\" or \"exclude\"");
    }
    if (n.contains("constant_base_fee_expected")) {
        if (!n["constant_base_fee_expected"].is_boolean())
            throw error(error_code::config_parse, ctx + ": constant_base_fee_expected must be a boolean");
        p.constant_base_fee_expected = n["constant_base_fee_expected"].get<bool>();
    }
    p.base_fee_tolerance_wei = optional_u64(n, "base_fee_tolerance_wei", ctx).value_or(0);
    return p;
}

}  // namespace detail

inline run_config parse_config(const nlohmann::json& j) {
    if (!j.is_object()) throw error(error_code::config_parse, "top level must be an object");
    if (!j.contains("networks") || !j["networks"].is_array() || j["networks"].empty())
        throw error(error_code::config_parse, "at least one network is required");

    run_config cfg;
    std::set<std::string> names;
    for (std::size_t i = 0; i < j["networks"].size(); ++i) {
        const auto& n = j["networks"][i];
        auto profile = detail::parse_network(n, i);
        if (!names.insert(profile.chain.name).second)
            throw error(error_code::config_parse, "duplicate chain name '" + profile.chain.name + "'");
        std::string ctx = "network '" + profile.chain.name + "'";
        network_entry e{validate_profile(std::move(profile)), std::nullopt, std::nullopt};
        e.start_block = detail::optional_u64(n, "start_block", ctx);
        e.max_blocks = detail::optional_u64(n, "max_blocks", ctx);
        if (n.contains("sample_priority")) {
            if (!n["sample_priority"].is_boolean())
                throw error(error_code::config_parse, ctx + ": sample_priority must be a boolean");
            e.sample_priority = n["sample_priority"].get<bool>();
        }
        cfg.networks.push_back(std::move(e));
    }
    if (j.contains("topics")) {
        const auto& t = j["topics"];
        if (!t.is_object()) throw error(error_code::config_parse, "topics must be an object");
        cfg.retention.max_records = detail::positive_or(t, "retention_records", 100'000, "topics");
        if (t.contains("retention_age_s") && !t["retention_age_s"].is_null())
            cfg.retention.max_age_s = detail::positive_or(t, "retention_age_s", 0, "topics");
    }
    cfg.window_s = detail::positive_or(j, "window_s", cfg.window_s, "config");
    cfg.downsample_bucket_s = detail::positive_or(j, "downsample_bucket_s", cfg.downsample_bucket_s, "config");
    if (j.contains("output_dir")) {
        if (!j["output_dir"].is_string()) throw error(error_code::config_parse, "output_dir must be a string");
        cfg.output_dir = j["output_dir"].get<std::string>();
    }
    return cfg;
}

inline std::string read_file(const std::string& path, error_code on_failure) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error(on_failure, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Parses and validates every network. `EVMMON_OUTPUT_DIR`, when set, replaces output_dir.
inline run_config load_config(const std::string& path) {
    auto text = read_file(path, error_code::config_parse);
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw error(error_code::config_parse, path + ": not valid JSON");
    auto cfg = parse_config(j);
    if (const char* env = std::getenv(output_dir_env); env && *env) cfg.output_dir = env;
    return cfg;
}

namespace sim {

inline scenario parse_scenario(const nlohmann::json& j) {
    auto fail = [](const std::string& why) -> void { throw error(error_code::invalid_scenario, why); };
    if (!j.is_object()) fail("scenario must be an object");
    auto u64 = [&](const nlohmann::json& o, const char* key, std::optional<std::uint64_t> fallback = {}) {
        if (!o.contains(key)) {
            if (fallback) return *fallback;
            fail(std::string("missing '") + key + "'");
        }
        if (!evmmon::detail::is_count(o[key])) fail(std::string("'") + key + "' must be a non-negative integer");
        return o[key].get<std::uint64_t>();
    };
    scenario s;
    if (!j.contains("chain") || !j["chain"].is_string()) fail("missing 'chain'");
    s.chain.name = j["chain"].get<std::string>();
    s.chain.chain_id = u64(j, "chain_id");
    s.seed = u64(j, "seed");
    s.block_count = u64(j, "block_count");
    s.block_interval_s = u64(j, "block_interval_s");
    s.genesis_timestamp = u64(j, "genesis_timestamp", s.genesis_timestamp);
    s.reported_limit = {u64(j, "reported_limit")};
    if (j.contains("fee_limit")) s.fee_limit = gas_quantity{u64(j, "fee_limit")};

    if (!j.contains("regime") || !j["regime"].is_object()) fail("missing 'regime'");
    const auto& r = j["regime"];
    if (r.contains("constant")) {
        s.regime = constant_base_fee{u64(r["constant"], "base_fee_wei")};
    } else if (r.contains("adaptive")) {
        const auto& a = r["adaptive"];
        s.regime = adaptive_base_fee{u64(a, "initial_wei"), u64(a, "min_wei", 0), u64(a, "adjust_denominator", 8),
                                     u64(a, "target_ratio_ppm", 500'000)};
    } else {
        fail("regime must be {\"constant\": ...} or {\"adaptive\": ...}");
    }
    if (j.contains("usage")) {
        const auto& u = j["usage"];
        s.usage = {u64(u, "mean_ppm", s.usage.mean_ppm), u64(u, "jitter_ppm", 0)};
    }
    if (j.contains("priority")) {
        const auto& p = j["priority"];
        s.priority.enabled = p.value("enabled", true);
        s.priority.mean_wei = u64(p, "mean_wei", 0);
        s.priority.jitter_wei = u64(p, "jitter_wei", 0);
    }
    check_scenario(s);
    return s;
}

/// A scenario file holds one scenario object or {"scenarios": [...]}.
inline std::vector<scenario> load_scenarios(const std::string& path) {
    auto j = nlohmann::json::parse(read_file(path, error_code::invalid_scenario), nullptr, false);
    if (j.is_discarded()) throw error(error_code::invalid_scenario, path + ": not valid JSON");
    std::vector<scenario> out;
    if (j.is_object() && j.contains("scenarios")) {
        if (!j["scenarios"].is_array()) throw error(error_code::invalid_scenario, "'scenarios' must be an array");
        for (auto& s : j["scenarios"]) out.push_back(parse_scenario(s));
    } else {
        out.push_back(parse_scenario(j));
    }
    return out;
}

}  // namespace sim

}  // namespace evmmon
