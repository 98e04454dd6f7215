#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "core_model.hpp"

namespace evmmon {

inline metric_sample gas_price_sample(const normalized_block_record& r) {
    return {r.header.chain, r.header.number, r.header.timestamp, metric_kind::gas_price_gwei,
            r.effective_gas_price.gwei()};
}

/// gas_used / effective_gas_limit. Not clamped: usage above an overridden limit yields values above 1.
inline metric_sample block_usage_sample(const normalized_block_record& r) {
    if (r.effective_gas_limit.value == 0)
        throw error(error_code::zero_limit,
                    r.header.chain.name + " block " + std::to_string(r.header.number) + ": effective gas limit is 0");
    return {r.header.chain, r.header.number, r.header.timestamp, metric_kind::block_usage_ratio,
            static_cast<double>(r.header.gas_used.value) / static_cast<double>(r.effective_gas_limit.value)};
}

struct quartile_triple {
    double q1;
    double median;
    double q3;
};

/// Linear interpolation between order statistics of an ascending-sorted range.
/// With 1-based rank h = (n-1)p + 1: x[floor h] + (h - floor h)(x[ceil h] - x[floor h]).
inline double sorted_quantile(std::span<const double> sorted, double p) {
    const auto n = sorted.size();
    const double h = static_cast<double>(n - 1) * p;  // 0-based rank
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, n - 1);
    const double frac = h - static_cast<double>(lo);
    if (frac == 0.0) return sorted[lo];
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline std::vector<double> sorted_copy(std::span<const double> values) {
    if (values.empty()) throw error(error_code::empty_series, "statistics need at least one value");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    return v;
}

inline quartile_triple quartiles(std::span<const double> values) {
    auto v = sorted_copy(values);
    return {sorted_quantile(v, 0.25), sorted_quantile(v, 0.5), sorted_quantile(v, 0.75)};
}

inline summary_stats summarize(std::span<const double> values) {
    auto v = sorted_copy(values);
    summary_stats s;
    s.count = v.size();
    s.q1 = sorted_quantile(v, 0.25);
    s.median = sorted_quantile(v, 0.5);
    s.q3 = sorted_quantile(v, 0.75);
    s.iqr = s.q3 - s.q1;
    s.min = v.front();
    s.max = v.back();
    return s;
}

inline std::vector<double> sample_values(std::span<const metric_sample> series) {
    std::vector<double> v;
    v.reserve(series.size());
    for (auto& s : series) v.push_back(s.value);
    return v;
}

inline summary_stats summarize(std::span<const metric_sample> series) {
    auto v = sample_values(series);
    return summarize(std::span<const double>(v));
}

/// Samples of one (chain, kind), timestamps non-decreasing and block numbers strictly increasing.
class series {
public:
    series(chain_ref chain, metric_kind kind) : chain_(std::move(chain)), kind_(kind) {}

    void push(metric_sample s) {
        if (s.chain != chain_ || s.kind != kind_)
            throw error(error_code::mixed_series, "sample for " + s.chain.name + "/" + to_string(s.kind) +
                                                      " pushed to series " + chain_.name + "/" + to_string(kind_));
        if (!samples_.empty()) {
            auto& last = samples_.back();
            if (s.block_number <= last.block_number || s.timestamp < last.timestamp)
                throw error(error_code::malformed_record, chain_.name + ": sample for block " +
                                                              std::to_string(s.block_number) + " out of order");
        }
        samples_.push_back(std::move(s));
    }

    const chain_ref& chain() const noexcept { return chain_; }
    metric_kind kind() const noexcept { return kind_; }
    std::span<const metric_sample> samples() const noexcept { return samples_; }
    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }

private:
    chain_ref chain_;
    metric_kind kind_;
    std::vector<metric_sample> samples_;
};

struct bucket {
    std::uint64_t start = 0;
    double mean = 0.0;
    std::size_t count = 0;

    friend bool operator==(const bucket&, const bucket&) = default;
};

/// Tumbling-time bucket means; empty buckets are omitted. Input must be in timestamp order.
inline std::vector<bucket> downsample(std::span<const metric_sample> samples, std::uint64_t bucket_s) {
    if (bucket_s == 0) throw std::invalid_argument("bucket width must be positive");
    std::vector<bucket> out;
    double sum = 0.0;
    auto close = [&] {
        if (!out.empty() && out.back().count) out.back().mean = sum / static_cast<double>(out.back().count);
    };
    for (auto& s : samples) {
        auto start = s.timestamp / bucket_s * bucket_s;
        if (out.empty() || out.back().start != start) {
            close();
            out.push_back({start, 0.0, 0});
            sum = 0.0;
        }
        sum += s.value;
        ++out.back().count;
    }
    close();
    // A mean of doubles can round a hair outside [min, max] for near-constant buckets.
    std::size_t i = 0;
    for (auto& b : out) {
        double lo = samples[i].value, hi = lo;
        for (std::size_t k = 0; k < b.count; ++k, ++i) {
            lo = std::min(lo, samples[i].value);
            hi = std::max(hi, samples[i].value);
        }
        b.mean = std::clamp(b.mean, lo, hi);
    }
    return out;
}

}  // namespace evmmon
