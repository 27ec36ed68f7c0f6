#include "hkv/hash_index.hpp"

#include <atomic>
#include <bit>
#include <cassert>

namespace hkv {

static_assert(std::endian::native == std::endian::little,
              "slot words are stored as native u64 and read remotely as "
              "little-endian byte sequences");

HashIndexServer::HashIndexServer(Transport& tr, NodeId self, uint64_t provisioned_keys)
    : tr_(tr), self_(self) {
    lay_ = HashTableLayout::size_for(provisioned_keys);
    auto r = tr_.register_region(self_, lay_.region_bytes());
    assert(r.ok() && "hash region registration");
    lay_.region = r.value();
    base_ = tr_.region_base(self_, lay_.region);
}

uint64_t* HashIndexServer::word_at(uint64_t offset) {
    return reinterpret_cast<uint64_t*>(base_ + offset);
}
const uint64_t* HashIndexServer::word_at(uint64_t offset) const {
    return reinterpret_cast<const uint64_t*>(base_ + offset);
}

Result<uint64_t> HashIndexServer::grab_overflow_bucket() {
    if (overflow_cursor_ >= lay_.overflow_count)
        return fail<uint64_t>(Errc::RegionFull,
                              "overflow buckets exhausted; table provisioned too small");
    return lay_.overflow_offset() + uint64_t(overflow_cursor_++) * kBucketBytes;
}

Result<void> HashIndexServer::apply_put(const std::string& key, ValueAddr addr,
                                        uint8_t item_len) {
    if (key.empty() || key.size() > kMaxKeyLen)
        return fail<void>(Errc::BadArgument, "key length");
    KeyHash h(key);
    Slot fresh{h.signature(), item_len, addr};
    uint64_t fresh_word = fresh.pack();

    if (auto it = sidecar_.find(key); it != sidecar_.end()) {
        // Update in place: the slot flips old->new in one atomic word, so a
        // concurrent remote reader sees exactly one of the two versions.
        std::atomic_ref<uint64_t> w(*word_at(it->second));
        w.store(fresh_word, std::memory_order_release);
        return {};
    }

    uint64_t bucket_off = lay_.bucket_offset(h.bucket_index(lay_.bucket_count));
    for (;;) {
        for (size_t i = 0; i < kSlotsPerBucket; i++) {
            uint64_t off = bucket_off + 8 * i;
            std::atomic_ref<uint64_t> w(*word_at(off));
            uint64_t cur = w.load(std::memory_order_acquire);
            // CAS claims the slot; a racing applier for a different key may
            // steal it, in which case we just keep probing.
            if (cur == 0 && w.compare_exchange_strong(cur, fresh_word)) {
                sidecar_.emplace(key, off);
                slot_key_.emplace(off, key);
                return {};
            }
        }
        std::atomic_ref<uint64_t> next(*word_at(bucket_off + 8 * kSlotsPerBucket));
        uint64_t link = next.load(std::memory_order_acquire);
        if (link != 0) {
            bucket_off = link;
            continue;
        }
        auto fresh_bucket = grab_overflow_bucket();
        if (!fresh_bucket.ok()) return fail<void>(fresh_bucket.code(), fresh_bucket.error().detail);
        // Fill before link so readers chasing the pointer always find the
        // slot populated.
        std::atomic_ref<uint64_t> slot0(*word_at(fresh_bucket.value()));
        slot0.store(fresh_word, std::memory_order_release);
        next.store(fresh_bucket.value(), std::memory_order_release);
        sidecar_.emplace(key, fresh_bucket.value());
        slot_key_.emplace(fresh_bucket.value(), key);
        return {};
    }
}

Result<void> HashIndexServer::apply_delete(const std::string& key) {
    auto it = sidecar_.find(key);
    if (it == sidecar_.end()) return {};  // idempotent: already gone
    std::atomic_ref<uint64_t> w(*word_at(it->second));
    w.store(0, std::memory_order_release);
    slot_key_.erase(it->second);
    sidecar_.erase(it);
    return {};
}

std::optional<std::pair<ValueAddr, uint8_t>> HashIndexServer::find_local(
    const std::string& key) const {
    auto it = sidecar_.find(key);
    if (it == sidecar_.end()) return std::nullopt;
    Slot s = Slot::unpack(
        std::atomic_ref<const uint64_t>(*word_at(it->second)).load(std::memory_order_acquire));
    return std::make_pair(s.addr, s.item_len);
}

bool HashIndexServer::export_entries(ExportCursor& cur, size_t max_records,
                                     std::vector<SnapshotRecord>& out) const {
    uint32_t total = lay_.bucket_count + lay_.overflow_count;
    while (cur.bucket < total && out.size() < max_records) {
        uint64_t bucket_off = lay_.bucket_offset(cur.bucket);
        for (size_t i = 0; i < kSlotsPerBucket; i++) {
            uint64_t off = bucket_off + 8 * i;
            uint64_t word =
                std::atomic_ref<const uint64_t>(*word_at(off)).load(std::memory_order_acquire);
            if (word == 0) continue;
            auto kit = slot_key_.find(off);
            if (kit == slot_key_.end()) continue;  // claimed mid-apply; log replay covers it
            Slot s = Slot::unpack(word);
            out.push_back(SnapshotRecord{s.item_len, s.addr, kit->second});
        }
        cur.bucket++;
    }
    return cur.bucket < total;
}

std::map<std::string, std::pair<ValueAddr, uint8_t>> HashIndexServer::export_map() const {
    std::map<std::string, std::pair<ValueAddr, uint8_t>> out;
    for (const auto& [key, off] : sidecar_) {
        Slot s = Slot::unpack(
            std::atomic_ref<const uint64_t>(*word_at(off)).load(std::memory_order_acquire));
        out.emplace(key, std::make_pair(s.addr, s.item_len));
    }
    return out;
}

Result<LookupResult> client_lookup(Transport& tr, NodeId caller, NodeId server,
                                   const HashTableLayout& lay, const std::string& key,
                                   const ItemReadFn& read_item) {
    if (key.empty() || key.size() > kMaxKeyLen)
        return fail<LookupResult>(Errc::BadArgument, "key length");
    Exec& ex = tr.exec();
    LookupResult res;
    KeyHash h(key);
    uint8_t sig = h.signature();
    uint64_t off = lay.bucket_offset(h.bucket_index(lay.bucket_count));

    // Chain length is bounded by the overflow area; anything longer means a
    // corrupt link.
    for (uint32_t hops = 0; hops <= lay.overflow_count; hops++) {
        Nanos t0 = ex.now();
        auto raw = tr.read(caller, server, lay.region, off, kBucketBytes);
        res.bucket_elapsed += ex.now() - t0;
        if (!raw.ok()) return fail<LookupResult>(raw.code(), "bucket read failed");
        res.bucket_reads++;
        res.round_trips++;
        Bucket b = Bucket::unpack(raw.value().data());
        for (const Slot& s : b.slots) {
            if (s.empty() || s.signature != sig) continue;
            t0 = ex.now();
            auto item = read_item(s.addr, s.item_len);
            res.item_elapsed += ex.now() - t0;
            res.item_reads++;
            res.round_trips++;
            if (!item.ok()) return fail<LookupResult>(item.code(), "item verify failed");
            if (item.value().key == key) {
                res.hit = std::make_pair(s.addr, s.item_len);
                return res;
            }
        }
        if (b.next == 0) return res;  // miss
        off = b.next;
    }
    return fail<LookupResult>(Errc::Corrupt, "overflow chain cycle");
}

}  // namespace hkv
