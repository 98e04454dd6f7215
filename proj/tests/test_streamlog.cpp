#include <gtest/gtest.h>

#include <random>
#include <set>
#include <thread>

#include <evmmon/streamlog.hpp>

using namespace evmmon;
using namespace evmmon::streamlog;

namespace {

error_code code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return error_code::config_parse;
}

std::vector<offset_t> offsets(const std::vector<record>& recs) {
    std::vector<offset_t> out;
    for (auto& r : recs) out.push_back(r.offset);
    return out;
}

}  // namespace

TEST(Append, OffsetsStartAtZeroAndIncrement) {
    broker b;
    b.create_topic("t");
    EXPECT_EQ(b.append("t", "a"), 0u);
    EXPECT_EQ(b.append("t", "b"), 1u);
    EXPECT_EQ(b.append("t", "c"), 2u);
    EXPECT_EQ(code_of([&] { b.append("missing", "x"); }), error_code::topic_missing);
}

TEST(Append, CountRetentionEvictsPrefix) {
    broker b;
    auto t = b.create_topic("t", retention_policy{1'000, std::nullopt});
    for (int i = 0; i < 10'000; ++i) b.append("t", std::to_string(i));
    EXPECT_EQ(t->earliest_offset(), 9'000u);
    EXPECT_EQ(t->next_offset(), 10'000u);
    auto h = b.subscribe("t", "g", earliest{});
    auto recs = b.poll_records(h, 5);
    EXPECT_EQ(offsets(recs), (std::vector<offset_t>{9000, 9001, 9002, 9003, 9004}));
    EXPECT_EQ(recs[0].payload, "9000");
}

TEST(Append, AgeRetention) {
    broker b;
    auto t = b.create_topic("t", retention_policy{std::nullopt, 60});
    b.append("t", "old", 1000);
    b.append("t", "mid", 1030);
    b.append("t", "new", 1061);
    EXPECT_EQ(t->earliest_offset(), 1u);
}

TEST(Subscribe, BroadcastAcrossGroups) {
    broker b;
    b.create_topic("t");
    for (int i = 0; i < 5; ++i) b.append("t", "x");
    auto g1 = b.subscribe("t", "one", earliest{});
    auto g2 = b.subscribe("t", "two", earliest{});
    EXPECT_EQ(b.poll_records(g1, 100).size(), 5u);
    EXPECT_EQ(b.poll_records(g2, 100).size(), 5u);
}

TEST(Subscribe, EvictedOffset) {
    broker b;
    b.create_topic("t", retention_policy{5, std::nullopt});
    for (int i = 0; i < 10; ++i) b.append("t", "x");
    EXPECT_EQ(code_of([&] { b.subscribe("t", "g", at{3}); }), error_code::offset_evicted);
    EXPECT_NO_THROW(b.subscribe("t", "g", at{5}));
    EXPECT_EQ(code_of([&] { b.subscribe("nope", "g", earliest{}); }), error_code::topic_missing);
}

TEST(Subscribe, LatestSeesOnlyNewRecords) {
    broker b;
    b.create_topic("t");
    for (int i = 0; i < 3; ++i) b.append("t", "old");
    auto h = b.subscribe("t", "g", latest{});
    b.append("t", "n1");
    b.append("t", "n2");
    auto recs = b.poll_records(h, 100);
    EXPECT_EQ(offsets(recs), (std::vector<offset_t>{3, 4}));
}

TEST(Poll, CaughtUpAndBatching) {
    broker b;
    b.create_topic("t");
    auto h = b.subscribe("t", "g", earliest{});
    EXPECT_TRUE(b.poll_records(h, 10).empty());
    for (int i = 0; i < 5; ++i) b.append("t", "x");
    EXPECT_EQ(offsets(b.poll_records(h, 2)), (std::vector<offset_t>{0, 1}));
    EXPECT_EQ(offsets(b.poll_records(h, 2)), (std::vector<offset_t>{2, 3}));
    EXPECT_EQ(offsets(b.poll_records(h, 2)), (std::vector<offset_t>{4}));
    EXPECT_TRUE(b.poll_records(h, 2).empty());
}

TEST(Poll, InterleavedAppendAndPoll) {
    broker b;
    b.create_topic("t");
    auto h = b.subscribe("t", "g", earliest{});
    std::mt19937_64 rng(9);
    std::vector<offset_t> seen;
    int appended = 0;
    while (seen.size() < 1000) {
        int n = static_cast<int>(rng() % 7);
        for (int i = 0; i < n && appended < 1000; ++i, ++appended) b.append("t", "x");
        for (auto o : offsets(b.poll_records(h, 1 + rng() % 5))) seen.push_back(o);
    }
    EXPECT_TRUE(b.poll_records(h, 10).empty());
    ASSERT_EQ(seen.size(), 1000u);
    for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], i);
}

TEST(Commit, ResumeAfterCommit) {
    broker b;
    b.create_topic("t");
    for (int i = 0; i < 20; ++i) b.append("t", "x");
    {
        auto h = b.subscribe("t", "g", earliest{});
        b.poll_records(h, 15);
        b.commit(h, 10);
        EXPECT_EQ(h.committed_offset(), 10u);
    }
    auto resumed = b.subscribe("t", "g", b.resume_position("t", "g"));
    EXPECT_EQ(b.poll_records(resumed, 1).front().offset, 11u);
}

TEST(Commit, RegressionAndBeyondPolled) {
    broker b;
    b.create_topic("t");
    for (int i = 0; i < 20; ++i) b.append("t", "x");
    auto h = b.subscribe("t", "g", earliest{});
    EXPECT_EQ(code_of([&] { b.commit(h, 0); }), error_code::commit_beyond_polled);
    b.poll_records(h, 12);
    b.commit(h, 10);
    EXPECT_EQ(code_of([&] { b.commit(h, 5); }), error_code::commit_regression);
    EXPECT_EQ(code_of([&] { b.commit(h, 12); }), error_code::commit_beyond_polled);
    EXPECT_NO_THROW(b.commit(h, 10));
    EXPECT_NO_THROW(b.commit(h, 11));
}

TEST(Concurrency, ProducersAndGroupsSeeEverythingInOrder) {
    broker b;
    b.create_topic("t");
    constexpr int producers = 4, per_producer = 2'500;
    std::vector<std::thread> threads;
    for (int p = 0; p < producers; ++p)
        threads.emplace_back([&] {
            for (int i = 0; i < per_producer; ++i) b.append("t", "x");
        });
    std::vector<std::vector<offset_t>> seen(3);
    std::vector<std::thread> consumers;
    for (int g = 0; g < 3; ++g)
        consumers.emplace_back([&, g] {
            auto h = b.subscribe("t", "group" + std::to_string(g), earliest{});
            while (seen[g].size() < producers * per_producer)
                for (auto& r : b.poll_records(h, 64)) seen[g].push_back(r.offset);
        });
    for (auto& t : threads) t.join();
    for (auto& t : consumers) t.join();
    for (auto& s : seen) {
        ASSERT_EQ(s.size(), static_cast<std::size_t>(producers * per_producer));
        for (std::size_t i = 0; i < s.size(); ++i) ASSERT_EQ(s[i], i);
    }
}
