#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <evmmon/metrics.hpp>

#include "oracle.hpp"

using namespace evmmon;

namespace {

normalized_block_record record(std::uint64_t used, std::uint64_t eff_limit, std::uint64_t eff_price_wei) {
    normalized_block_record r;
    r.header.chain = {"arbitrum", 42161};
    r.header.number = 1;
    r.header.timestamp = 100;
    r.header.gas_used = {used};
    r.header.gas_limit = {std::max(used, eff_limit)};
    r.effective_gas_limit = {eff_limit};
    r.effective_gas_price = {eff_price_wei};
    return r;
}

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> d(-1e3, 1e3);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    // occasional ties
    if (n > 3 && rng() % 3 == 0) v[1] = v[0];
    return v;
}

metric_sample at(std::uint64_t ts, double v, std::uint64_t n) {
    return {{"c", 1}, n, ts, metric_kind::gas_price_gwei, v};
}

}  // namespace

TEST(GasPriceSample, Gwei) {
    EXPECT_EQ(gas_price_sample(record(0, 1, 10'000'000)).value, 0.01);
    EXPECT_EQ(gas_price_sample(record(0, 1, 0)).value, 0.0);
    EXPECT_EQ(gas_price_sample(record(0, 1, 1'645'000'000)).value, 1.645);
    EXPECT_EQ(gas_price_sample(record(0, 1, 0)).kind, metric_kind::gas_price_gwei);
}

TEST(BlockUsageSample, Ratio) {
    EXPECT_EQ(block_usage_sample(record(15'000'000, 30'000'000, 0)).value, 0.5);
    EXPECT_DOUBLE_EQ(block_usage_sample(record(640'000, 32'000'000, 0)).value, 0.02);
    EXPECT_EQ(block_usage_sample(record(0, 30'000'000, 0)).value, 0.0);
    EXPECT_EQ(block_usage_sample(record(40'000'000, 32'000'000, 0)).value, 1.25);
    try {
        block_usage_sample(record(0, 0, 0));
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.code(), error_code::zero_limit);
    }
}

TEST(Quartiles, SmallExamples) {
    std::vector<double> one{5};
    auto q = quartiles(one);
    EXPECT_EQ(q.q1, 5);
    EXPECT_EQ(q.median, 5);
    EXPECT_EQ(q.q3, 5);

    std::vector<double> five{5, 3, 1, 4, 2};
    q = quartiles(five);
    EXPECT_EQ(q.q1, 2);
    EXPECT_EQ(q.median, 3);
    EXPECT_EQ(q.q3, 4);

    std::vector<double> four{4, 1, 3, 2};
    auto s = summarize(std::span<const double>(four));
    EXPECT_EQ(s.median, 2.5);
    EXPECT_EQ(s.min, 1);
    EXPECT_EQ(s.max, 4);
    EXPECT_EQ(s.q1, 1.75);
    EXPECT_EQ(s.q3, 3.25);
    EXPECT_EQ(s.iqr, 1.5);

    std::vector<double> empty;
    try {
        quartiles(empty);
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.code(), error_code::empty_series);
    }
}

TEST(Quartiles, MatchesOracleForEveryLengthUpTo2000) {
    std::mt19937_64 rng(1);
    for (std::size_t n = 1; n <= 2000; ++n) {
        auto v = random_values(rng, n);
        auto s = summarize(std::span<const double>(v));
        EXPECT_NEAR(s.q1, oracle::quantile(v, 0.25), 1e-12) << n;
        EXPECT_NEAR(s.median, oracle::quantile(v, 0.5), 1e-12) << n;
        EXPECT_NEAR(s.q3, oracle::quantile(v, 0.75), 1e-12) << n;
        ASSERT_TRUE(s.ordered()) << n;
    }
}

TEST(Quartiles, LargeUniformSeries) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(0, 1);
    std::vector<double> v(10'000);
    for (auto& x : v) x = d(rng);
    auto q = quartiles(v);
    EXPECT_NEAR(q.q1, oracle::quantile(v, 0.25), 1e-12);
    EXPECT_NEAR(q.median, oracle::quantile(v, 0.5), 1e-12);
    EXPECT_NEAR(q.q3, oracle::quantile(v, 0.75), 1e-12);
}

TEST(SummaryProperties, ScaleAndPermutation) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        auto v = random_values(rng, 1 + rng() % 300);
        auto base = summarize(std::span<const double>(v));

        // powers of two keep the scaling exact
        const double c = std::ldexp(1.0, static_cast<int>(rng() % 9) - 4);
        auto scaled = v;
        for (auto& x : scaled) x *= c;
        auto s = summarize(std::span<const double>(scaled));
        EXPECT_EQ(s.median, c * base.median);
        EXPECT_EQ(s.iqr, c * base.iqr);

        auto shuffled = v;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        EXPECT_EQ(summarize(std::span<const double>(shuffled)), base);

        EXPECT_EQ(base.iqr == 0.0, base.q1 == base.q3);
    }
}

TEST(SummaryProperties, ConstantSeries) {
    std::vector<double> v(1000, 0.01);
    auto s = summarize(std::span<const double>(v));
    EXPECT_EQ(s.median, 0.01);
    EXPECT_EQ(s.iqr, 0.0);
    EXPECT_EQ(s.count, 1000u);
}

TEST(Series, OrderAndIdentity) {
    series s({"c", 1}, metric_kind::gas_price_gwei);
    s.push(at(10, 1, 1));
    s.push(at(10, 1, 2));
    EXPECT_THROW(s.push(at(11, 1, 2)), error);
    EXPECT_THROW(s.push(at(9, 1, 3)), error);
    auto other = at(12, 1, 3);
    other.kind = metric_kind::block_usage_ratio;
    EXPECT_THROW(s.push(other), error);
    EXPECT_EQ(s.size(), 2u);
}

TEST(Downsample, Examples) {
    std::vector<metric_sample> two{at(0, 1, 0), at(30, 3, 1)};
    auto b = downsample(two, 60);
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b[0], (bucket{0, 2.0, 2}));

    std::vector<metric_sample> single{at(125, 7.5, 0)};
    b = downsample(single, 60);
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b[0], (bucket{120, 7.5, 1}));

    std::vector<metric_sample> gap{at(0, 1, 0), at(200, 2, 1)};
    b = downsample(gap, 60);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b[1].start, 180u);
}

TEST(Downsample, MatchesPerBucketOracle) {
    std::mt19937_64 rng(5);
    std::vector<metric_sample> samples;
    std::vector<std::pair<std::uint64_t, double>> ref;
    std::uint64_t t = 1'700'000'000;
    std::uniform_real_distribution<double> d(0, 50);
    for (std::uint64_t i = 0; i < 10'000; ++i) {
        t += rng() % 25;
        double v = d(rng);
        samples.push_back(at(t, v, i));
        ref.emplace_back(t, v);
    }
    auto out = downsample(samples, 300);
    auto expected = oracle::buckets(ref, 300);
    ASSERT_EQ(out.size(), expected.size());
    std::size_t total = 0;
    for (auto& b : out) {
        auto& e = expected.at(b.start);
        EXPECT_EQ(b.count, e.count);
        EXPECT_NEAR(b.mean, e.sum / static_cast<double>(e.count), 1e-9);
        EXPECT_GE(b.mean, e.min);
        EXPECT_LE(b.mean, e.max);
        total += b.count;
    }
    EXPECT_EQ(total, samples.size());
}
