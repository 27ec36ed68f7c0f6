#include "hkv/codec.hpp"

namespace hkv {

Bytes encode_entries(const std::vector<LogEntry>& entries) {
    size_t total = 0;
    for (const auto& e : entries) total += e.wire_size();
    Bytes out(total);
    size_t off = 0;
    for (const auto& e : entries) {
        e.encode_to(out.data() + off);
        off += e.wire_size();
    }
    return out;
}

Result<std::vector<LogEntry>> decode_entries(const uint8_t* p, size_t len) {
    std::vector<LogEntry> out;
    size_t off = 0;
    while (off < len) {
        size_t used = 0;
        auto e = LogEntry::decode(p + off, len - off, &used);
        if (!e) return e.error();
        out.push_back(e.take());
        off += used;
    }
    return out;
}

Bytes encode_snapshot_chunk(const std::vector<SnapshotRecord>& records) {
    size_t total = 0;
    for (const auto& r : records) total += r.wire_size();
    Bytes out(total);
    size_t off = 0;
    for (const auto& r : records) {
        r.encode_to(out.data() + off);
        off += r.wire_size();
    }
    return out;
}

Result<std::vector<SnapshotRecord>> decode_snapshot_chunk(const uint8_t* p, size_t len) {
    std::vector<SnapshotRecord> out;
    size_t off = 0;
    while (off < len) {
        size_t used = 0;
        auto r = SnapshotRecord::decode(p + off, len - off, &used);
        if (!r) return r.error();
        out.push_back(r.take());
        off += used;
    }
    return out;
}

}  // namespace hkv
