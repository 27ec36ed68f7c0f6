#include "hkv/oplog.hpp"

#include <cassert>

namespace hkv {

OpLog::OpLog(Exec& ex, uint32_t partitions, size_t capacity)
    : ex_(ex), capacity_(capacity) {
    assert(partitions >= 1);
    assert(capacity >= 2);
    for (uint32_t i = 0; i < partitions; i++) parts_.push_back(std::make_unique<Part>(ex));
}

OpLog::Part& OpLog::part(uint32_t p) {
    assert(p < parts_.size());
    return *parts_[p];
}

Seq OpLog::append_batch(uint32_t p, std::vector<LogEntry> entries) {
    assert(!entries.empty());
    Part& pt = part(p);
    Lock l(pt.m);
    while (pt.ring.size() + entries.size() > capacity_) pt.m.wait();
    Seq first = pt.head + 1;
    for (LogEntry& e : entries) {
        e.seq = ++pt.head;
        pt.ring.push_back(std::move(e));
    }
    pt.m.notify_all();
    return first;
}

Seq OpLog::append(uint32_t p, OpKind kind, const std::string& key, ValueAddr addr,
                  uint8_t item_len) {
    std::vector<LogEntry> one(1);
    one[0].kind = kind;
    one[0].key = key;
    one[0].addr = addr;
    one[0].item_len = item_len;
    return append_batch(p, std::move(one));
}

Result<void> OpLog::append_replica(uint32_t p, const std::vector<LogEntry>& entries) {
    if (entries.empty()) return {};
    Part& pt = part(p);
    Lock l(pt.m);
    if (entries.front().seq != pt.head + 1)
        return fail<void>(Errc::Rejected, "replica append would leave a gap");
    for (size_t i = 1; i < entries.size(); i++)
        if (entries[i].seq != entries[i - 1].seq + 1)
            return fail<void>(Errc::Rejected, "batch not dense");
    // Replicas never block on capacity: the primary's own ring (same size)
    // is the shared throttle, so an overrun here means a config mismatch.
    for (const LogEntry& e : entries) pt.ring.push_back(e);
    pt.head = entries.back().seq;
    pt.m.notify_all();
    return {};
}

Result<std::vector<LogEntry>> OpLog::fetch(uint32_t p, Seq since, size_t max) {
    Part& pt = part(p);
    Lock l(pt.m);
    if (since < pt.floor)
        return fail<std::vector<LogEntry>>(Errc::Bounds, "requested entries were truncated");
    std::vector<LogEntry> out;
    size_t start = size_t(since - pt.floor);
    for (size_t i = start; i < pt.ring.size() && out.size() < max; i++)
        out.push_back(pt.ring[i]);
    return out;
}

void OpLog::mark_applied(uint32_t p, Seq up_to) {
    Part& pt = part(p);
    Lock l(pt.m);
    assert(up_to <= pt.head);
    if (up_to > pt.applied) {
        pt.applied = up_to;
        pt.m.notify_all();
    }
}

Seq OpLog::applied(uint32_t p) {
    Part& pt = part(p);
    Lock l(pt.m);
    return pt.applied;
}

Seq OpLog::head(uint32_t p) {
    Part& pt = part(p);
    Lock l(pt.m);
    return pt.head;
}

Seq OpLog::floor(uint32_t p) {
    Part& pt = part(p);
    Lock l(pt.m);
    return pt.floor;
}

bool OpLog::wait_head_above(uint32_t p, Seq above, Nanos timeout) {
    Part& pt = part(p);
    Nanos deadline = ex_.now() + timeout;
    Lock l(pt.m);
    while (pt.head <= above) {
        Nanos now = ex_.now();
        if (now >= deadline) return false;
        pt.m.wait_for(deadline - now);
    }
    return true;
}

bool OpLog::wait_applied(uint32_t p, Seq target, Nanos timeout) {
    Part& pt = part(p);
    Nanos deadline = ex_.now() + timeout;
    Lock l(pt.m);
    while (pt.applied < target) {
        Nanos now = ex_.now();
        if (now >= deadline) return false;
        pt.m.wait_for(deadline - now);
    }
    return true;
}

void OpLog::reset_to(uint32_t p, Seq at) {
    Part& pt = part(p);
    Lock l(pt.m);
    pt.ring.clear();
    pt.floor = pt.head = pt.applied = at;
    pt.m.notify_all();
}

void OpLog::truncate(uint32_t p, Seq keep_floor) {
    if (trunc_paused_) return;
    Part& pt = part(p);
    Lock l(pt.m);
    Seq target = std::min(keep_floor, pt.applied);  // never drop unapplied entries
    while (pt.floor < target && !pt.ring.empty()) {
        pt.ring.pop_front();
        pt.floor++;
        truncated_total_++;
    }
    pt.m.notify_all();  // appends blocked on capacity
}

void OpLog::pause_truncation(bool paused) { trunc_paused_ = paused; }

size_t OpLog::retained(uint32_t p) {
    Part& pt = part(p);
    Lock l(pt.m);
    return pt.ring.size();
}

}  // namespace hkv
