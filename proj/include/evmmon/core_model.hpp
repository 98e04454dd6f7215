#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace evmmon {

enum class error_code {
    invalid_profile,
    malformed_quantity,
    rpc_unavailable,
    block_not_found,
    invalid_header,
    topic_missing,
    offset_evicted,
    commit_regression,
    commit_beyond_polled,
    transform_error,
    sink_failure,
    profile_mismatch,
    zero_limit,
    empty_series,
    invalid_scenario,
    config_parse,
    malformed_record,
    mixed_series,
};

inline const char* to_string(error_code c) {
    switch (c) {
        case error_code::invalid_profile: return "InvalidProfile";
        case error_code::malformed_quantity: return "MalformedQuantity";
        case error_code::rpc_unavailable: return "RpcUnavailable";
        case error_code::block_not_found: return "BlockNotFound";
        case error_code::invalid_header: return "InvalidHeader";
        case error_code::topic_missing: return "TopicMissing";
        case error_code::offset_evicted: return "OffsetEvicted";
        case error_code::commit_regression: return "CommitRegression";
        case error_code::commit_beyond_polled: return "CommitBeyondPolled";
        case error_code::transform_error: return "TransformError";
        case error_code::sink_failure: return "SinkFailure";
        case error_code::profile_mismatch: return "ProfileMismatch";
        case error_code::zero_limit: return "ZeroLimit";
        case error_code::empty_series: return "EmptySeries";
        case error_code::invalid_scenario: return "InvalidScenario";
        case error_code::config_parse: return "ConfigParse";
        case error_code::malformed_record: return "MalformedRecord";
        case error_code::mixed_series: return "MixedSeries";
    }
    return "Unknown";
}

class error : public std::runtime_error {
public:
    error(error_code code, const std::string& msg)
        : std::runtime_error(std::string(to_string(code)) + ": " + msg), code_(code), message_(msg) {}

    error_code code() const noexcept { return code_; }
    /// The text without the code prefix.
    const std::string& message() const noexcept { return message_; }

private:
    error_code code_;
    std::string message_;
};

struct chain_ref {
    std::string name;
    std::uint64_t chain_id = 0;

    friend bool operator==(const chain_ref&, const chain_ref&) = default;
};

struct gas_quantity {
    std::uint64_t value = 0;

    friend auto operator<=>(const gas_quantity&, const gas_quantity&) = default;
};

inline constexpr std::uint64_t wei_per_gwei = 1'000'000'000ULL;

/// Per-gas price in wei. Gwei is only a display/export unit.
struct fee_quantity {
    std::uint64_t value_wei = 0;

    double gwei() const noexcept { return static_cast<double>(value_wei) / static_cast<double>(wei_per_gwei); }

    /// Nearest wei to a gwei decimal; negative and NaN inputs map to zero.
    static fee_quantity from_gwei(double gwei) noexcept {
        if (!(gwei > 0.0)) return {};
        return {static_cast<std::uint64_t>(std::llround(gwei * static_cast<double>(wei_per_gwei)))};
    }

    friend auto operator<=>(const fee_quantity&, const fee_quantity&) = default;
};

struct limit_reported {
    friend bool operator==(const limit_reported&, const limit_reported&) = default;
};
struct limit_override {
    gas_quantity effective_limit;
    friend bool operator==(const limit_override&, const limit_override&) = default;
};
using limit_policy = std::variant<limit_reported, limit_override>;

enum class priority_policy { include, exclude };

struct network_profile {
    chain_ref chain;
    std::string rpc_url;
    std::uint64_t poll_interval_ms = 1000;
    limit_policy limits = limit_reported{};
    priority_policy priority = priority_policy::include;
    bool constant_base_fee_expected = false;
    std::uint64_t base_fee_tolerance_wei = 0;
};

inline bool endpoint_well_formed(std::string_view url) {
    std::string_view rest;
    if (url.starts_with("http://"))
        rest = url.substr(7);
    else if (url.starts_with("https://"))
        rest = url.substr(8);
    else
        return false;
    auto host = rest.substr(0, rest.find_first_of(":/"));
    if (host.empty()) return false;
    for (char c : rest)
        if (c <= ' ' || c == 0x7f) return false;
    return true;
}

class validated_profile;
validated_profile validate_profile(network_profile profile);

/// A profile that passed validate_profile. Only obtainable through it.
class validated_profile {
public:
    const network_profile& get() const noexcept { return profile_; }
    const network_profile* operator->() const noexcept { return &profile_; }
    const chain_ref& chain() const noexcept { return profile_.chain; }

    std::optional<gas_quantity> limit_override_value() const {
        if (auto* o = std::get_if<limit_override>(&profile_.limits)) return o->effective_limit;
        return std::nullopt;
    }

private:
    explicit validated_profile(network_profile p) : profile_(std::move(p)) {}
    friend validated_profile validate_profile(network_profile profile);

    network_profile profile_;
};

inline validated_profile validate_profile(network_profile profile) {
    auto fail = [&](const std::string& why) {
        throw error(error_code::invalid_profile,
                    (profile.chain.name.empty() ? std::string("<unnamed>") : profile.chain.name) + ": " + why);
    };
    if (profile.chain.name.empty()) fail("chain name is empty");
    for (unsigned char c : profile.chain.name)
        if (c < 0x21 || c > 0x7e) fail("chain name must be printable ASCII without spaces");
    if (profile.chain.chain_id == 0) fail("chain_id must be positive");
    if (profile.poll_interval_ms == 0) fail("poll_interval_ms must be positive");
    if (auto* o = std::get_if<limit_override>(&profile.limits); o && o->effective_limit.value == 0)
        fail("override effective limit must be positive");
    if (!endpoint_well_formed(profile.rpc_url)) fail("malformed rpc endpoint '" + profile.rpc_url + "'");
    return validated_profile(std::move(profile));
}

struct raw_block_header {
    chain_ref chain;
    std::uint64_t number = 0;
    std::uint64_t timestamp = 0;
    gas_quantity gas_used;
    gas_quantity gas_limit;
    fee_quantity base_fee_per_gas;
    std::optional<fee_quantity> priority_fee_observed;

    friend bool operator==(const raw_block_header&, const raw_block_header&) = default;
};

inline void check_header(const raw_block_header& h) {
    if (h.gas_used.value > h.gas_limit.value)
        throw error(error_code::invalid_header, h.chain.name + " block " + std::to_string(h.number) + ": gas_used " +
                                                    std::to_string(h.gas_used.value) + " exceeds gas_limit " +
                                                    std::to_string(h.gas_limit.value));
}

enum class record_flag : std::uint8_t {
    limit_overridden = 1u << 0,
    priority_excluded = 1u << 1,
    base_fee_deviation = 1u << 2,
    usage_exceeds_effective_limit = 1u << 3,
};

class flag_set {
public:
    constexpr flag_set() = default;
    constexpr flag_set(std::initializer_list<record_flag> fs) {
        for (auto f : fs) set(f);
    }

    constexpr void set(record_flag f) noexcept { bits_ |= static_cast<std::uint8_t>(f); }
    constexpr bool has(record_flag f) const noexcept { return bits_ & static_cast<std::uint8_t>(f); }
    constexpr bool empty() const noexcept { return bits_ == 0; }
    constexpr flag_set& operator|=(flag_set o) noexcept {
        bits_ |= o.bits_;
        return *this;
    }
    constexpr std::uint8_t bits() const noexcept { return bits_; }

    friend constexpr bool operator==(flag_set, flag_set) = default;

private:
    std::uint8_t bits_ = 0;
};

inline constexpr record_flag all_record_flags[] = {
    record_flag::limit_overridden,
    record_flag::priority_excluded,
    record_flag::base_fee_deviation,
    record_flag::usage_exceeds_effective_limit,
};

inline const char* to_string(record_flag f) {
    switch (f) {
        case record_flag::limit_overridden: return "LimitOverridden";
        case record_flag::priority_excluded: return "PriorityExcluded";
        case record_flag::base_fee_deviation: return "BaseFeeDeviation";
        case record_flag::usage_exceeds_effective_limit: return "UsageExceedsEffectiveLimit";
    }
    return "?";
}

inline std::optional<record_flag> record_flag_from_string(std::string_view s) {
    for (auto f : all_record_flags)
        if (s == to_string(f)) return f;
    return std::nullopt;
}

struct normalized_block_record {
    raw_block_header header;
    gas_quantity effective_gas_limit;
    fee_quantity effective_gas_price;
    flag_set flags;

    friend bool operator==(const normalized_block_record&, const normalized_block_record&) = default;
};

enum class metric_kind { gas_price_gwei, block_usage_ratio };

inline const char* to_string(metric_kind k) {
    return k == metric_kind::gas_price_gwei ? "GasPriceGwei" : "BlockUsageRatio";
}

inline std::optional<metric_kind> metric_kind_from_string(std::string_view s) {
    if (s == "GasPriceGwei") return metric_kind::gas_price_gwei;
    if (s == "BlockUsageRatio") return metric_kind::block_usage_ratio;
    return std::nullopt;
}

struct metric_sample {
    chain_ref chain;
    std::uint64_t block_number = 0;
    std::uint64_t timestamp = 0;
    metric_kind kind = metric_kind::gas_price_gwei;
    double value = 0.0;

    friend bool operator==(const metric_sample&, const metric_sample&) = default;
};

struct summary_stats {
    std::size_t count = 0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double iqr = 0.0;
    double min = 0.0;
    double max = 0.0;

    bool ordered() const noexcept { return min <= q1 && q1 <= median && median <= q3 && q3 <= max && iqr >= 0.0; }

    friend bool operator==(const summary_stats&, const summary_stats&) = default;
};

}  // namespace evmmon
