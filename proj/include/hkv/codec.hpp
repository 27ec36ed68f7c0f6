#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>

#include "hkv/types.hpp"

namespace hkv {

// ---------------------------------------------------------------------------
// Little-endian primitives. All wire/in-memory formats below are explicitly
// little-endian so that raw region snapshots are portable.
// ---------------------------------------------------------------------------

inline void put_u16(uint8_t* p, uint16_t v) {
    p[0] = uint8_t(v);
    p[1] = uint8_t(v >> 8);
}
inline void put_u32(uint8_t* p, uint32_t v) {
    for (int i = 0; i < 4; i++) p[i] = uint8_t(v >> (8 * i));
}
inline void put_u48(uint8_t* p, uint64_t v) {
    for (int i = 0; i < 6; i++) p[i] = uint8_t(v >> (8 * i));
}
inline void put_u64(uint8_t* p, uint64_t v) {
    for (int i = 0; i < 8; i++) p[i] = uint8_t(v >> (8 * i));
}
inline uint16_t get_u16(const uint8_t* p) {
    return uint16_t(p[0]) | uint16_t(p[1]) << 8;
}
inline uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v |= uint32_t(p[i]) << (8 * i);
    return v;
}
inline uint64_t get_u48(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 6; i++) v |= uint64_t(p[i]) << (8 * i);
    return v;
}
inline uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= uint64_t(p[i]) << (8 * i);
    return v;
}

// ---------------------------------------------------------------------------
// Hash-table slot: one 64-bit word, updated atomically with CAS.
//
//   byte 0      signature (top byte of the key digest)
//   byte 1      total stored-item length in bytes
//   bytes 2..7  48-bit item address, little-endian
//
// The all-zero word means "empty". A valid occupied slot always has a
// nonzero address (data servers never allocate offset 0), so empty vs
// occupied is decidable from the word alone.
// ---------------------------------------------------------------------------

struct Slot {
    uint8_t signature = 0;
    uint8_t item_len = 0;
    ValueAddr addr{};

    bool empty() const { return pack() == 0; }

    uint64_t pack() const {
        return uint64_t(signature) | uint64_t(item_len) << 8 | (addr.raw << 16);
    }
    static Slot unpack(uint64_t word) {
        Slot s;
        s.signature = uint8_t(word);
        s.item_len = uint8_t(word >> 8);
        s.addr = ValueAddr::from_u48(word >> 16);
        return s;
    }
    bool operator==(const Slot&) const = default;
};

// ---------------------------------------------------------------------------
// Hash-table bucket: exactly 64 bytes (one cacheline, one fetch unit).
// Seven slots plus a 64-bit pointer word whose low 48 bits address an
// overflow bucket in the same region (0 = no overflow).
// ---------------------------------------------------------------------------

inline constexpr size_t kSlotsPerBucket = 7;
inline constexpr size_t kBucketBytes = 64;

struct Bucket {
    std::array<Slot, kSlotsPerBucket> slots{};
    uint64_t next = 0;  // offset of overflow bucket, 0 = none

    void pack(uint8_t* out64) const {
        for (size_t i = 0; i < kSlotsPerBucket; i++)
            put_u64(out64 + 8 * i, slots[i].pack());
        put_u64(out64 + 8 * kSlotsPerBucket, next);
    }
    static Bucket unpack(const uint8_t* in64) {
        Bucket b;
        for (size_t i = 0; i < kSlotsPerBucket; i++)
            b.slots[i] = Slot::unpack(get_u64(in64 + 8 * i));
        b.next = get_u64(in64 + 8 * kSlotsPerBucket);
        return b;
    }
};

// ---------------------------------------------------------------------------
// Stored item: the self-describing record placed in data regions.
//
//   [key_len u16][value_len u16][key bytes][value bytes]
//
// Total size (header + key + value) must fit in one byte so the slot can
// carry it; readers then fetch the item with a single sized read.
// ---------------------------------------------------------------------------

inline constexpr size_t kItemHeaderBytes = 4;

inline size_t stored_item_size(size_t key_len, size_t value_len) {
    return kItemHeaderBytes + key_len + value_len;
}

struct StoredItem {
    std::string key;
    std::string value;

    size_t wire_size() const { return stored_item_size(key.size(), value.size()); }

    Result<Bytes> encode() const {
        if (key.empty() || key.size() > kMaxKeyLen)
            return fail<Bytes>(Errc::BadArgument, "key length");
        size_t n = wire_size();
        if (n > kMaxItemLen)
            return fail<Bytes>(Errc::Oversize, "stored item > 255 bytes");
        Bytes out(n);
        put_u16(out.data(), uint16_t(key.size()));
        put_u16(out.data() + 2, uint16_t(value.size()));
        std::memcpy(out.data() + 4, key.data(), key.size());
        std::memcpy(out.data() + 4 + key.size(), value.data(), value.size());
        return out;
    }

    static Result<StoredItem> decode(const uint8_t* p, size_t len) {
        if (len < kItemHeaderBytes)
            return fail<StoredItem>(Errc::Corrupt, "item truncated");
        uint16_t klen = get_u16(p);
        uint16_t vlen = get_u16(p + 2);
        if (klen == 0 || klen > kMaxKeyLen || kItemHeaderBytes + klen + vlen > len)
            return fail<StoredItem>(Errc::Corrupt, "item header out of range");
        StoredItem it;
        it.key.assign(reinterpret_cast<const char*>(p + 4), klen);
        it.value.assign(reinterpret_cast<const char*>(p + 4 + klen), vlen);
        return it;
    }
    static Result<StoredItem> decode(const Bytes& b) { return decode(b.data(), b.size()); }
};

// ---------------------------------------------------------------------------
// Operation-log entry. The log carries index mutations, not values: the
// value bytes already live in a data region by the time the entry is
// appended, so replicas only need (key, addr, len, kind).
//
//   [seq u64][kind u8][key_len u16][item_len u8][addr u48][key bytes]
// ---------------------------------------------------------------------------

inline constexpr size_t kLogEntryHeaderBytes = 8 + 1 + 2 + 1 + 6;

struct LogEntry {
    Seq seq = 0;
    OpKind kind = OpKind::Put;
    uint8_t item_len = 0;
    ValueAddr addr{};
    std::string key;

    size_t wire_size() const { return kLogEntryHeaderBytes + key.size(); }

    void encode_to(uint8_t* p) const {
        put_u64(p, seq);
        p[8] = uint8_t(kind);
        put_u16(p + 9, uint16_t(key.size()));
        p[11] = item_len;
        put_u48(p + 12, addr.raw);
        std::memcpy(p + kLogEntryHeaderBytes, key.data(), key.size());
    }
    Bytes encode() const {
        Bytes out(wire_size());
        encode_to(out.data());
        return out;
    }

    static Result<LogEntry> decode(const uint8_t* p, size_t len, size_t* consumed = nullptr) {
        if (len < kLogEntryHeaderBytes)
            return fail<LogEntry>(Errc::Corrupt, "log entry truncated");
        LogEntry e;
        e.seq = get_u64(p);
        uint8_t kind = p[8];
        if (kind < 1 || kind > 3)
            return fail<LogEntry>(Errc::Corrupt, "log entry kind");
        e.kind = OpKind(kind);
        uint16_t klen = get_u16(p + 9);
        e.item_len = p[11];
        e.addr = ValueAddr::from_u48(get_u48(p + 12));
        if (klen == 0 || klen > kMaxKeyLen || kLogEntryHeaderBytes + klen > len)
            return fail<LogEntry>(Errc::Corrupt, "log entry key length");
        e.key.assign(reinterpret_cast<const char*>(p + kLogEntryHeaderBytes), klen);
        if (consumed) *consumed = kLogEntryHeaderBytes + klen;
        return e;
    }

    bool operator==(const LogEntry&) const = default;
};

/// Encode a run of entries back-to-back (replication batch payload).
Bytes encode_entries(const std::vector<LogEntry>& entries);
Result<std::vector<LogEntry>> decode_entries(const uint8_t* p, size_t len);
inline Result<std::vector<LogEntry>> decode_entries(const Bytes& b) {
    return decode_entries(b.data(), b.size());
}

// ---------------------------------------------------------------------------
// Snapshot-stream record: what index rebuild transfers. Same shape as a
// log entry minus seq/kind (a snapshot is all live puts by construction).
//
//   [key_len u16][item_len u8][addr u48][key bytes]
//
// Records are packed into chunks of at most kSnapshotChunkBytes; a record
// never straddles a chunk boundary.
// ---------------------------------------------------------------------------

inline constexpr size_t kSnapshotRecordHeaderBytes = 2 + 1 + 6;
inline constexpr size_t kSnapshotChunkBytes = 64 * 1024;

struct SnapshotRecord {
    uint8_t item_len = 0;
    ValueAddr addr{};
    std::string key;

    size_t wire_size() const { return kSnapshotRecordHeaderBytes + key.size(); }

    void encode_to(uint8_t* p) const {
        put_u16(p, uint16_t(key.size()));
        p[2] = item_len;
        put_u48(p + 3, addr.raw);
        std::memcpy(p + kSnapshotRecordHeaderBytes, key.data(), key.size());
    }

    static Result<SnapshotRecord> decode(const uint8_t* p, size_t len, size_t* consumed) {
        if (len < kSnapshotRecordHeaderBytes)
            return fail<SnapshotRecord>(Errc::Corrupt, "snapshot record truncated");
        SnapshotRecord r;
        uint16_t klen = get_u16(p);
        r.item_len = p[2];
        r.addr = ValueAddr::from_u48(get_u48(p + 3));
        if (klen == 0 || klen > kMaxKeyLen || kSnapshotRecordHeaderBytes + klen > len)
            return fail<SnapshotRecord>(Errc::Corrupt, "snapshot record key length");
        r.key.assign(reinterpret_cast<const char*>(p + kSnapshotRecordHeaderBytes), klen);
        *consumed = kSnapshotRecordHeaderBytes + klen;
        return r;
    }

    bool operator==(const SnapshotRecord&) const = default;
};

Bytes encode_snapshot_chunk(const std::vector<SnapshotRecord>& records);
Result<std::vector<SnapshotRecord>> decode_snapshot_chunk(const uint8_t* p, size_t len);
inline Result<std::vector<SnapshotRecord>> decode_snapshot_chunk(const Bytes& b) {
    return decode_snapshot_chunk(b.data(), b.size());
}

}  // namespace hkv
