#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hkv/codec.hpp"
#include "hkv/hashfn.hpp"
#include "hkv/types.hpp"

namespace hkv {

/// Hash-partitioned ordered index: P independent skiplists, each owning the
/// keys whose digest low byte maps to it (the same selector the op log uses,
/// so one log partition feeds exactly one skiplist partition and a single
/// writer per partition needs no internal locking). Ordered reads seek in
/// every partition and merge.
///
/// The level cap is deliberately low: beyond it the top lane degenerates
/// into a linear walk, so per-lookup node visits keep growing with size
/// long after a taller skiplist would have flattened. That models the
/// paper-grade CPU gap between small and large ordered indexes.
class PartitionedSkiplist {
public:
    static constexpr uint32_t kMaxLevel = 6;
    static constexpr uint32_t kDefaultPartitions = 4;

    explicit PartitionedSkiplist(uint32_t partitions = kDefaultPartitions,
                                 uint64_t seed = 1);
    ~PartitionedSkiplist();
    PartitionedSkiplist(const PartitionedSkiplist&) = delete;
    PartitionedSkiplist& operator=(const PartitionedSkiplist&) = delete;

    struct Entry {
        std::string key;
        ValueAddr addr{};
        uint8_t item_len = 0;

        friend bool operator<(const Entry& a, const Entry& b) { return a.key < b.key; }
    };

    uint32_t partitions() const { return uint32_t(parts_.size()); }
    static uint32_t partition_of(const std::string& key, uint32_t partitions) {
        return KeyHash(key).log_partition(partitions);
    }

    /// Insert/overwrite (Put, Update) or erase (Delete). Re-applying the
    /// same mutation is a no-op on the resulting map. Returns the node
    /// comparisons the internal seek performed (CPU cost unit).
    uint64_t apply(OpKind kind, const std::string& key, ValueAddr addr, uint8_t item_len);

    /// Point lookup. visits (if given) accumulates the node comparisons the
    /// search performed — the unit the CPU cost model charges.
    std::optional<std::pair<ValueAddr, uint8_t>> find(const std::string& key,
                                                      uint64_t* visits = nullptr) const;

    /// The n smallest entries with key >= lo, in global key order: seek in
    /// each partition, then loser-tree merge. visits accumulates seek
    /// comparisons, consumed nodes, and merge steps.
    std::vector<Entry> range(const std::string& lo, size_t n,
                             uint64_t* visits = nullptr) const;

    /// Snapshot stream in global key order; the cursor is the last key
    /// handed out, so it survives interleaved mutations (log replay squares
    /// up any drift). Returns false when the stream is exhausted.
    struct ExportCursor {
        std::string after;  // resume strictly after this key; empty = start
    };
    bool export_entries(ExportCursor& cur, size_t max_records,
                        std::vector<SnapshotRecord>& out) const;

    /// Bulk load for rebuild. The first call must land on an empty index;
    /// later chunks of the same stream may follow.
    Result<void> import_records(const std::vector<SnapshotRecord>& records);

    size_t size() const;
    uint64_t total_visits() const { return total_visits_; }
    std::map<std::string, std::pair<ValueAddr, uint8_t>> export_map() const;

private:
    struct Node;
    struct Partition {
        Node* head = nullptr;
        size_t count = 0;
        uint64_t rng = 0;
    };

    static Node* make_node(const std::string& key, ValueAddr addr, uint8_t item_len,
                           uint32_t level);
    uint32_t random_level(Partition& p);
    // First node with key >= target, counting comparisons into visits.
    Node* seek(const Partition& p, const std::string& target, uint64_t& visits) const;

    std::vector<Partition> parts_;
    mutable uint64_t total_visits_ = 0;
    bool imported_any_ = false;
    std::vector<std::array<Node*, kMaxLevel>> import_tails_;  // bulk-load append points
};

}  // namespace hkv
