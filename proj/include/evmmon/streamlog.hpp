#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "core_model.hpp"

namespace evmmon::streamlog {

using offset_t = std::uint64_t;
using bytes = std::string;

struct retention_policy {
    std::optional<std::uint64_t> max_records = 100'000;
    std::optional<std::uint64_t> max_age_s;
};

struct record {
    offset_t offset;
    std::uint64_t timestamp;
    bytes payload;
};

struct earliest {};
struct latest {};
struct at {
    offset_t offset;
};
using start_position = std::variant<earliest, latest, at>;

/// Single-partition append-only log. Eviction only ever drops a prefix.
class topic {
public:
    topic(std::string name, retention_policy retention) : name_(std::move(name)), retention_(retention) {}

    const std::string& name() const noexcept { return name_; }

    offset_t append(bytes payload, std::uint64_t now_s) {
        std::lock_guard lock(mtx_);
        offset_t off = base_ + records_.size();
        records_.push_back({off, now_s, std::move(payload)});
        evict(now_s);
        return off;
    }

    offset_t earliest_offset() const {
        std::lock_guard lock(mtx_);
        return base_;
    }

    offset_t next_offset() const {
        std::lock_guard lock(mtx_);
        return base_ + records_.size();
    }

    /// Records in [from, from + max) that are still retained. `from` is clamped up to the earliest retained offset.
    std::vector<record> read(offset_t from, std::size_t max) const {
        std::lock_guard lock(mtx_);
        std::vector<record> out;
        if (from < base_) from = base_;
        for (auto i = from - base_; i < records_.size() && out.size() < max; ++i) out.push_back(records_[i]);
        return out;
    }

    std::optional<offset_t> committed(const std::string& group) const {
        std::lock_guard lock(mtx_);
        auto it = commits_.find(group);
        if (it == commits_.end()) return std::nullopt;
        return it->second;
    }

    void commit(const std::string& group, offset_t off) {
        std::lock_guard lock(mtx_);
        if (off >= base_ + records_.size())
            throw error(error_code::commit_beyond_polled, name_ + "/" + group + ": offset " + std::to_string(off) +
                                                              " not yet appended");
        auto [it, inserted] = commits_.try_emplace(group, off);
        if (!inserted) {
            if (off < it->second)
                throw error(error_code::commit_regression, name_ + "/" + group + ": " + std::to_string(off) + " < " +
                                                               std::to_string(it->second));
            it->second = off;
        }
    }

private:
    void evict(std::uint64_t now_s) {
        if (retention_.max_records)
            while (records_.size() > *retention_.max_records) pop();
        if (retention_.max_age_s)
            while (!records_.empty() && now_s > records_.front().timestamp + *retention_.max_age_s) pop();
    }

    void pop() {
        records_.pop_front();
        ++base_;
    }

    std::string name_;
    retention_policy retention_;
    mutable std::mutex mtx_;
    std::deque<record> records_;
    offset_t base_ = 0;
    std::map<std::string, offset_t> commits_;
};

/// Read position of one consumer group member. Owned by a single thread.
class consumer_handle {
public:
    const std::string& topic_name() const noexcept { return topic_->name(); }
    const std::string& group() const noexcept { return group_; }
    offset_t position() const noexcept { return position_; }
    std::optional<offset_t> last_polled() const noexcept { return last_polled_; }
    std::optional<offset_t> committed_offset() const { return topic_->committed(group_); }
    /// Records that were evicted before this handle could read them.
    std::uint64_t skipped() const noexcept { return skipped_; }

private:
    friend class broker;
    consumer_handle(std::shared_ptr<topic> t, std::string group, offset_t pos)
        : topic_(std::move(t)), group_(std::move(group)), position_(pos) {}

    std::shared_ptr<topic> topic_;
    std::string group_;
    offset_t position_;
    std::optional<offset_t> last_polled_;
    std::uint64_t skipped_ = 0;
};

inline std::uint64_t wall_clock_seconds() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count());
}

/// In-process broker: named topics, per-group commits, broadcast across groups.
class broker {
public:
    explicit broker(retention_policy default_retention = {}) : default_retention_(default_retention) {}

    std::shared_ptr<topic> create_topic(const std::string& name, std::optional<retention_policy> retention = {}) {
        std::unique_lock lock(mtx_);
        auto [it, inserted] = topics_.try_emplace(name, nullptr);
        if (inserted) it->second = std::make_shared<topic>(name, retention.value_or(default_retention_));
        return it->second;
    }

    std::shared_ptr<topic> find(const std::string& name) const {
        std::shared_lock lock(mtx_);
        auto it = topics_.find(name);
        if (it == topics_.end()) throw error(error_code::topic_missing, name);
        return it->second;
    }

    std::vector<std::string> topic_names() const {
        std::shared_lock lock(mtx_);
        std::vector<std::string> out;
        for (auto& [k, _] : topics_) out.push_back(k);
        return out;
    }

    offset_t append(const std::string& topic_name, bytes payload, std::uint64_t now_s = wall_clock_seconds()) {
        return find(topic_name)->append(std::move(payload), now_s);
    }

    consumer_handle subscribe(const std::string& topic_name, const std::string& group, start_position start) {
        auto t = find(topic_name);
        offset_t pos = 0;
        if (std::holds_alternative<earliest>(start)) {
            pos = t->earliest_offset();
        } else if (std::holds_alternative<latest>(start)) {
            pos = t->next_offset();
        } else {
            pos = std::get<at>(start).offset;
            if (pos < t->earliest_offset())
                throw error(error_code::offset_evicted, topic_name + ": offset " + std::to_string(pos) +
                                                            " precedes earliest retained " +
                                                            std::to_string(t->earliest_offset()));
        }
        return consumer_handle(std::move(t), group, pos);
    }

    /// Up to `max` records after the handle's position. Advances the read position, not the commit.
    std::vector<record> poll_records(consumer_handle& h, std::size_t max) {
        auto recs = h.topic_->read(h.position_, max);
        if (!recs.empty()) {
            if (recs.front().offset > h.position_) h.skipped_ += recs.front().offset - h.position_;
            h.position_ = recs.back().offset + 1;
            h.last_polled_ = recs.back().offset;
        }
        return recs;
    }

    void commit(consumer_handle& h, offset_t off) {
        if (!h.last_polled_ || off > *h.last_polled_)
            throw error(error_code::commit_beyond_polled, h.topic_name() + "/" + h.group_ + ": offset " +
                                                              std::to_string(off) + " not yet polled");
        h.topic_->commit(h.group_, off);
    }

    /// Resume point for a group: one past its commit, or the earliest retained record.
    start_position resume_position(const std::string& topic_name, const std::string& group) const {
        auto c = find(topic_name)->committed(group);
        if (c) return at{*c + 1};
        return earliest{};
    }

private:
    retention_policy default_retention_;
    mutable std::shared_mutex mtx_;
    std::map<std::string, std::shared_ptr<topic>> topics_;
};

}  // namespace evmmon::streamlog
