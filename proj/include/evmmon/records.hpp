#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "core_model.hpp"

// JSONL encodings shared by topics, replay input and exported series.
// Field names: chain, number, ts, gas_used, gas_limit, base_fee_wei, priority_fee_wei,
// eff_limit, eff_price_wei, flags, kind, value.
namespace evmmon::records {

using ojson = nlohmann::ordered_json;

namespace detail {

inline const ojson& require(const ojson& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw error(error_code::malformed_record, std::string("missing field '") + key + "'");
    return *it;
}

inline std::uint64_t u64(const ojson& j, const char* key) {
    const auto& v = require(j, key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw error(error_code::malformed_record, std::string("field '") + key + "' is not a non-negative integer");
    return v.get<std::uint64_t>();
}

inline std::string str(const ojson& j, const char* key) {
    const auto& v = require(j, key);
    if (!v.is_string()) throw error(error_code::malformed_record, std::string("field '") + key + "' is not a string");
    return v.get<std::string>();
}

inline double number(const ojson& j, const char* key) {
    const auto& v = require(j, key);
    if (!v.is_number()) throw error(error_code::malformed_record, std::string("field '") + key + "' is not a number");
    auto d = v.get<double>();
    if (!std::isfinite(d)) throw error(error_code::malformed_record, std::string("field '") + key + "' is not finite");
    return d;
}

inline ojson parse_object(std::string_view line) {
    auto j = ojson::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded()) throw error(error_code::malformed_record, "not valid JSON");
    if (!j.is_object()) throw error(error_code::malformed_record, "not a JSON object");
    return j;
}

}  // namespace detail

inline ojson to_json(const raw_block_header& h) {
    ojson j;
    j["chain"] = h.chain.name;
    j["number"] = h.number;
    j["ts"] = h.timestamp;
    j["gas_used"] = h.gas_used.value;
    j["gas_limit"] = h.gas_limit.value;
    j["base_fee_wei"] = h.base_fee_per_gas.value_wei;
    j["priority_fee_wei"] = h.priority_fee_observed ? ojson(h.priority_fee_observed->value_wei) : ojson(nullptr);
    return j;
}

/// chain_id is not carried on the wire; callers resolve it from configuration.
inline raw_block_header raw_from_json(const ojson& j) {
    raw_block_header h;
    h.chain.name = detail::str(j, "chain");
    h.number = detail::u64(j, "number");
    h.timestamp = detail::u64(j, "ts");
    h.gas_used = {detail::u64(j, "gas_used")};
    h.gas_limit = {detail::u64(j, "gas_limit")};
    h.base_fee_per_gas = {detail::u64(j, "base_fee_wei")};
    if (auto it = j.find("priority_fee_wei"); it != j.end() && !it->is_null())
        h.priority_fee_observed = fee_quantity{detail::u64(j, "priority_fee_wei")};
    return h;
}

inline ojson flags_to_json(flag_set f) {
    auto a = ojson::array();
    for (auto flag : all_record_flags)
        if (f.has(flag)) a.push_back(to_string(flag));
    return a;
}

inline ojson to_json(const normalized_block_record& r) {
    auto j = to_json(r.header);
    j["eff_limit"] = r.effective_gas_limit.value;
    j["eff_price_wei"] = r.effective_gas_price.value_wei;
    j["flags"] = flags_to_json(r.flags);
    return j;
}

inline normalized_block_record normalized_from_json(const ojson& j) {
    normalized_block_record r;
    r.header = raw_from_json(j);
    r.effective_gas_limit = {detail::u64(j, "eff_limit")};
    r.effective_gas_price = {detail::u64(j, "eff_price_wei")};
    const auto& flags = detail::require(j, "flags");
    if (!flags.is_array()) throw error(error_code::malformed_record, "field 'flags' is not an array");
    for (auto& f : flags) {
        auto flag = f.is_string() ? record_flag_from_string(f.get<std::string>()) : std::nullopt;
        if (!flag) throw error(error_code::malformed_record, "unknown flag " + f.dump());
        r.flags.set(*flag);
    }
    return r;
}

inline ojson to_json(const metric_sample& s) {
    ojson j;
    j["chain"] = s.chain.name;
    j["number"] = s.block_number;
    j["ts"] = s.timestamp;
    j["kind"] = to_string(s.kind);
    j["value"] = s.value;
    return j;
}

inline metric_sample metric_from_json(const ojson& j) {
    metric_sample s;
    s.chain.name = detail::str(j, "chain");
    s.block_number = detail::u64(j, "number");
    s.timestamp = detail::u64(j, "ts");
    auto kind = metric_kind_from_string(detail::str(j, "kind"));
    if (!kind) throw error(error_code::malformed_record, "unknown metric kind");
    s.kind = *kind;
    s.value = detail::number(j, "value");
    if (s.value < 0.0) throw error(error_code::malformed_record, "negative metric value");
    return s;
}

inline void put_stats(ojson& j, const summary_stats& s) {
    j["count"] = s.count;
    j["median"] = s.median;
    j["q1"] = s.q1;
    j["q3"] = s.q3;
    j["iqr"] = s.iqr;
    j["min"] = s.min;
    j["max"] = s.max;
}

inline summary_stats stats_from_json(const ojson& j) {
    summary_stats s;
    s.count = detail::u64(j, "count");
    s.median = detail::number(j, "median");
    s.q1 = detail::number(j, "q1");
    s.q3 = detail::number(j, "q3");
    s.iqr = detail::number(j, "iqr");
    s.min = detail::number(j, "min");
    s.max = detail::number(j, "max");
    return s;
}

inline std::string to_line(const ojson& j) { return j.dump(); }

inline raw_block_header parse_raw(std::string_view line) { return raw_from_json(detail::parse_object(line)); }
inline normalized_block_record parse_normalized(std::string_view line) {
    return normalized_from_json(detail::parse_object(line));
}
inline metric_sample parse_metric(std::string_view line) { return metric_from_json(detail::parse_object(line)); }

}  // namespace evmmon::records
