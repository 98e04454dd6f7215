#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "core_model.hpp"

namespace evmmon {

struct limit_result {
    gas_quantity limit;
    flag_set flags;
};

struct price_result {
    fee_quantity price;
    flag_set flags;
};

/// Reported policy passes the reported limit through. Override takes min(reported, override),
/// so a chain that reports honestly is never inflated. Usage above the effective limit is flagged, not clamped.
inline limit_result effective_gas_limit(const raw_block_header& h, const validated_profile& p) {
    limit_result r{h.gas_limit, {}};
    if (auto o = p.limit_override_value()) {
        r.limit = std::min(h.gas_limit, *o);
        r.flags.set(record_flag::limit_overridden);
    }
    if (h.gas_used > r.limit) r.flags.set(record_flag::usage_exceeds_effective_limit);
    return r;
}

/// `reference_base_fee` is the chain's first-seen base fee, used only when the profile expects a constant base fee.
inline price_result effective_gas_price(const raw_block_header& h, const validated_profile& p,
                                        std::optional<fee_quantity> reference_base_fee = std::nullopt) {
    price_result r{h.base_fee_per_gas, {}};
    if (p->priority == priority_policy::exclude) {
        r.flags.set(record_flag::priority_excluded);
    } else if (h.priority_fee_observed) {
        r.price.value_wei += h.priority_fee_observed->value_wei;
    }
    if (p->constant_base_fee_expected && reference_base_fee) {
        auto a = h.base_fee_per_gas.value_wei, b = reference_base_fee->value_wei;
        if ((a > b ? a - b : b - a) > p->base_fee_tolerance_wei) r.flags.set(record_flag::base_fee_deviation);
    }
    return r;
}

inline normalized_block_record normalize_header(const raw_block_header& h, const validated_profile& p,
                                                std::optional<fee_quantity> reference_base_fee) {
    if (h.chain != p.chain())
        throw error(error_code::profile_mismatch, "header for " + h.chain.name + " (" + std::to_string(h.chain.chain_id) +
                                                      ") given profile for " + p.chain().name + " (" +
                                                      std::to_string(p.chain().chain_id) + ")");
    auto lim = effective_gas_limit(h, p);
    auto price = effective_gas_price(h, p, reference_base_fee);
    normalized_block_record rec{h, lim.limit, price.price, lim.flags};
    rec.flags |= price.flags;
    return rec;
}

/// The normalization operator for one chain. Holds the first-seen base fee used as the constant-fee reference.
class normalizer {
public:
    explicit normalizer(validated_profile profile) : profile_(std::move(profile)) {}

    normalized_block_record operator()(const raw_block_header& h) {
        if (h.chain != profile_.chain()) return normalize_header(h, profile_, reference_);
        if (!reference_) reference_ = h.base_fee_per_gas;
        return normalize_header(h, profile_, reference_);
    }

    std::optional<fee_quantity> reference_base_fee() const noexcept { return reference_; }
    const validated_profile& profile() const noexcept { return profile_; }

private:
    validated_profile profile_;
    std::optional<fee_quantity> reference_;
};

}  // namespace evmmon
