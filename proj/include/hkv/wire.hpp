#pragma once

#include <cstring>
#include <string>
#include <string_view>

#include "hkv/codec.hpp"
#include "hkv/types.hpp"

namespace hkv {

/// RPC endpoint ids (uint16 on the wire).
enum Endpoint : uint16_t {
    kEpStoreItem = 1,   // data servers
    kEpWrite = 2,       // (temporary) primary
    kEpScan = 3,        // scan-serving index nodes
    kEpGetIndexed = 4,  // server-side GET: degraded hybrid / all-skiplist / all-hash backup
    kEpLogReplicate = 5,
    kEpLogFetch = 6,
    kEpExportIndex = 7,  // snapshot stream of whatever index the node holds
    kEpSnapshotSeqs = 8,
    kEpRoleChange = 9,
    kEpHeartbeat = 10,
    kEpView = 11,        // control node: current cluster view
    kEpRebuildDone = 12  // control node: rebuilding node reports catch-up
};

/// Byte-writer with the same primitive set as the codecs.
struct Writer {
    Bytes buf;

    void u8(uint8_t v) { buf.push_back(v); }
    void u16(uint16_t v) {
        size_t o = grow(2);
        put_u16(buf.data() + o, v);
    }
    void u32(uint32_t v) {
        size_t o = grow(4);
        put_u32(buf.data() + o, v);
    }
    void u48(uint64_t v) {
        size_t o = grow(6);
        put_u48(buf.data() + o, v);
    }
    void u64(uint64_t v) {
        size_t o = grow(8);
        put_u64(buf.data() + o, v);
    }
    void str(std::string_view s) {  // u16 length prefix
        u16(uint16_t(s.size()));
        size_t o = grow(s.size());
        std::memcpy(buf.data() + o, s.data(), s.size());
    }
    void raw(const uint8_t* p, size_t n) {
        size_t o = grow(n);
        std::memcpy(buf.data() + o, p, n);
    }
    void raw(const Bytes& b) { raw(b.data(), b.size()); }

    Bytes take() { return std::move(buf); }

private:
    size_t grow(size_t n) {
        size_t o = buf.size();
        buf.resize(o + n);
        return o;
    }
};

/// Bounds-checked reader; sticky failure flag, callers test ok() once at
/// the end instead of after every field.
struct Reader {
    const uint8_t* p;
    size_t n;
    size_t off = 0;
    bool good = true;

    explicit Reader(const Bytes& b) : p(b.data()), n(b.size()) {}
    Reader(const uint8_t* data, size_t len) : p(data), n(len) {}

    bool ok() const { return good; }
    bool done() const { return good && off == n; }
    size_t remaining() const { return n - off; }

    uint8_t u8() { return take(1) ? p[off - 1] : 0; }
    uint16_t u16() { return take(2) ? get_u16(p + off - 2) : 0; }
    uint32_t u32() { return take(4) ? get_u32(p + off - 4) : 0; }
    uint64_t u48() { return take(6) ? get_u48(p + off - 6) : 0; }
    uint64_t u64() { return take(8) ? get_u64(p + off - 8) : 0; }
    std::string str() {
        uint16_t len = u16();
        if (!take(len)) return {};
        return std::string(reinterpret_cast<const char*>(p + off - len), len);
    }
    Bytes rest() {
        Bytes out(p + off, p + n);
        off = n;
        return out;
    }

private:
    bool take(size_t k) {
        if (!good || n - off < k) {
            good = false;
            return false;
        }
        off += k;
        return true;
    }
};

/// Response convention: [status:1][payload]. Helpers for both ends.
inline Bytes status_only(Errc e) { return Bytes{uint8_t(e)}; }

inline Bytes with_status(Errc e, Writer w) {
    Bytes payload = w.take();
    Bytes out;
    out.reserve(payload.size() + 1);
    out.push_back(uint8_t(e));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

}  // namespace hkv
