#pragma once

#include <bit>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hkv/codec.hpp"
#include "hkv/hashfn.hpp"
#include "hkv/transport.hpp"
#include "hkv/types.hpp"
#include "hkv/wire.hpp"

namespace hkv {

/// Geometry of one region-backed hash table. Shipped to clients inside the
/// cluster view so lookups can compute bucket offsets without any RPC.
struct HashTableLayout {
    RegionId region = 0;
    uint32_t bucket_count = 0;    // primary buckets, power of two
    uint32_t overflow_count = 0;  // overflow buckets, appended after primaries

    // Capacity rule: slots cover the provisioned key count at load factor
    // <= 0.7, so the expected probe chain stays a whisker above one bucket.
    static HashTableLayout size_for(uint64_t provisioned_keys) {
        HashTableLayout lay;
        uint64_t need = provisioned_keys * 10 / 7 / kSlotsPerBucket + 1;
        lay.bucket_count = uint32_t(std::bit_ceil(std::max<uint64_t>(need, 8)));
        lay.overflow_count = std::max<uint32_t>(16, lay.bucket_count / 8);
        return lay;
    }

    uint64_t region_bytes() const {
        return uint64_t(bucket_count + overflow_count) * kBucketBytes;
    }
    uint64_t bucket_offset(uint32_t index) const { return uint64_t(index) * kBucketBytes; }
    uint64_t overflow_offset() const { return uint64_t(bucket_count) * kBucketBytes; }

    void encode(Writer& w) const {
        w.u32(region);
        w.u32(bucket_count);
        w.u32(overflow_count);
    }
    static HashTableLayout decode(Reader& r) {
        HashTableLayout lay;
        lay.region = r.u32();
        lay.bucket_count = r.u32();
        lay.overflow_count = r.u32();
        return lay;
    }
};

/// Primary-resident hash table over a registered memory region. Mutations
/// run on the owning node (worker path) and touch the region only through
/// single-word atomics, so concurrent remote readers observe each slot
/// either old or new, never torn. A key->slot sidecar map makes updates and
/// deletes O(1) without probing.
class HashIndexServer {
public:
    HashIndexServer(Transport& tr, NodeId self, uint64_t provisioned_keys);

    const HashTableLayout& layout() const { return lay_; }
    size_t size() const { return sidecar_.size(); }
    uint32_t buckets_used_beyond_primary() const { return overflow_cursor_; }

    Result<void> apply_put(const std::string& key, ValueAddr addr, uint8_t item_len);
    Result<void> apply_delete(const std::string& key);
    std::optional<std::pair<ValueAddr, uint8_t>> find_local(const std::string& key) const;

    /// Chunked snapshot of live entries in region (bucket) order. The cursor
    /// is a bucket index, so it stays valid across interleaved mutations;
    /// callers reconcile any drift by replaying the op log from the snapshot
    /// sequence. Returns false once the cursor passes the last bucket.
    struct ExportCursor {
        uint32_t bucket = 0;
    };
    bool export_entries(ExportCursor& cur, size_t max_records,
                        std::vector<SnapshotRecord>& out) const;

    /// Full live map, for quiesce comparison and oracle checks.
    std::map<std::string, std::pair<ValueAddr, uint8_t>> export_map() const;

private:
    uint64_t* word_at(uint64_t offset);
    const uint64_t* word_at(uint64_t offset) const;
    Result<uint64_t> grab_overflow_bucket();

    Transport& tr_;
    NodeId self_;
    HashTableLayout lay_;
    uint8_t* base_ = nullptr;
    uint32_t overflow_cursor_ = 0;
    // key -> byte offset of its slot word; reverse map serves exports.
    std::unordered_map<std::string, uint64_t> sidecar_;
    std::unordered_map<uint64_t, std::string> slot_key_;
};

/// One client-driven lookup outcome. round_trips counts every one-sided
/// read issued (bucket reads plus item verification reads).
struct LookupResult {
    std::optional<std::pair<ValueAddr, uint8_t>> hit;
    uint32_t round_trips = 0;
    uint32_t bucket_reads = 0;
    uint32_t item_reads = 0;
    Nanos bucket_elapsed = 0;  // time spent in bucket reads (index phase)
    Nanos item_elapsed = 0;    // time spent verifying candidate items (data phase)
};

/// Reads one stored item for signature-collision verification; implemented
/// by the data-store client. Must perform exactly one one-sided read.
using ItemReadFn =
    std::function<Result<StoredItem>(ValueAddr addr, uint8_t item_len)>;

/// Pure one-sided GET against a remote hash table: read the home bucket,
/// filter slots by signature byte, verify candidates by reading the item
/// bytes, follow overflow links as needed. Never issues an RPC.
Result<LookupResult> client_lookup(Transport& tr, NodeId caller, NodeId server,
                                   const HashTableLayout& lay, const std::string& key,
                                   const ItemReadFn& read_item);

}  // namespace hkv
