#pragma once

#include <memory>
#include <vector>

#include "hkv/codec.hpp"
#include "hkv/exec.hpp"
#include "hkv/types.hpp"

namespace hkv {

/// Hash-partitioned replicated operation log (one instance per group
/// member). Each partition is an independent ring with its own dense
/// sequence numbers starting at 1: the primary assigns seqs on append,
/// replicas install already-numbered entries and reject anything that
/// would create a gap, so a replica log is always a dense prefix extension
/// of what it had. Appends block while a ring is at capacity
/// (backpressure); truncation frees space but is suspended while any
/// recovery that might still need old entries is in flight.
class OpLog {
public:
    static constexpr size_t kDefaultCapacity = 1u << 20;

    OpLog(Exec& ex, uint32_t partitions, size_t capacity = kDefaultCapacity);

    uint32_t partitions() const { return uint32_t(parts_.size()); }
    size_t capacity() const { return capacity_; }

    /// Primary-side append of one batch: entries get consecutive seqs,
    /// atomically visible. Returns the first assigned seq.
    Seq append_batch(uint32_t part, std::vector<LogEntry> entries);
    Seq append(uint32_t part, OpKind kind, const std::string& key, ValueAddr addr,
               uint8_t item_len);

    /// Replica-side install. Entries must start exactly at head+1; anything
    /// already held must match is implied by density. On gap: Rejected, no
    /// change (the caller learns our head from head()).
    Result<void> append_replica(uint32_t part, const std::vector<LogEntry>& entries);

    /// Entries with seq in (since, since+max]. If since predates the
    /// retained window the gap is unservable: Bounds.
    Result<std::vector<LogEntry>> fetch(uint32_t part, Seq since, size_t max);

    void mark_applied(uint32_t part, Seq up_to);  // monotone, regressions ignored
    Seq applied(uint32_t part);
    Seq head(uint32_t part);   // last appended seq (0 = empty history)
    Seq floor(uint32_t part);  // highest truncated seq (retained = (floor, head])

    /// Blocks until head(part) > above (true) or timeout (false).
    bool wait_head_above(uint32_t part, Seq above, Nanos timeout);
    /// Blocks until applied(part) >= target (true) or timeout (false).
    bool wait_applied(uint32_t part, Seq target, Nanos timeout);

    /// Reposition a partition at a snapshot point, dropping anything held:
    /// the log behaves as if seqs [1, at] were appended, applied, and
    /// truncated. Rebuild uses this so replay can continue with ordinary
    /// replica appends; a restarted rebuild may move the floor forward.
    void reset_to(uint32_t part, Seq at);

    /// Drop entries with seq <= keep_floor. No-op while paused. Never drops
    /// unapplied entries.
    void truncate(uint32_t part, Seq keep_floor);
    void pause_truncation(bool paused);
    bool truncation_paused() const { return trunc_paused_; }

    size_t retained(uint32_t part);
    uint64_t truncated_total() const { return truncated_total_; }

private:
    struct Part {
        explicit Part(Exec& ex) : m(ex) {}
        Monitor m;
        std::deque<LogEntry> ring;  // seqs (floor, head], dense
        Seq floor = 0;
        Seq head = 0;
        Seq applied = 0;
    };
    Part& part(uint32_t p);

    Exec& ex_;
    std::vector<std::unique_ptr<Part>> parts_;
    size_t capacity_;
    bool trunc_paused_ = false;
    uint64_t truncated_total_ = 0;
};

}  // namespace hkv
