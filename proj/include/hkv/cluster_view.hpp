#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hkv/data_store.hpp"
#include "hkv/hash_index.hpp"
#include "hkv/types.hpp"
#include "hkv/wire.hpp"

namespace hkv {

enum class Role : uint8_t {
    Primary = 1,
    Backup = 2,
    TemporaryPrimary = 3,  // promoted backup: write authority, still ordered index
    Rebuilding = 4,        // replaying; not a replication target, serves nothing
};

/// What each group member keeps in memory. Hybrid is the design point: a
/// hash table on the write authority, ordered indexes on the backups. The
/// uniform modes exist as baselines.
enum class IndexMode : uint8_t {
    Hybrid = 1,
    AllHash = 2,
    AllSkiplist = 3,
};

inline const char* role_name(Role r) {
    switch (r) {
        case Role::Primary: return "primary";
        case Role::Backup: return "backup";
        case Role::TemporaryPrimary: return "temporary-primary";
        case Role::Rebuilding: return "rebuilding";
    }
    return "?";
}

inline const char* mode_name(IndexMode m) {
    switch (m) {
        case IndexMode::Hybrid: return "hybrid";
        case IndexMode::AllHash: return "all-hash";
        case IndexMode::AllSkiplist: return "all-skiplist";
    }
    return "?";
}

struct GroupMember {
    NodeId node = 0;
    Role role = Role::Backup;
};

/// One group's client-visible state, distributed by the control node.
struct GroupView {
    GroupId id = 0;
    uint64_t epoch = 0;
    uint16_t slice_lo = 0;  // inclusive range of the 16-bit group selector
    uint16_t slice_hi = 0;
    IndexMode mode = IndexMode::Hybrid;
    std::vector<GroupMember> members;
    bool writes_paused = false;  // rebuild cutover in progress
    // Valid when the write authority holds a hash table reachable by
    // one-sided lookups (hybrid with live primary, or all-hash).
    bool hash_valid = false;
    HashTableLayout hash;

    std::optional<NodeId> write_node() const {
        for (const auto& m : members)
            if (m.role == Role::Primary || m.role == Role::TemporaryPrimary) return m.node;
        return std::nullopt;
    }

    /// Nodes that can answer served (RPC) reads: ordered-index holders.
    std::vector<NodeId> serving_nodes() const {
        std::vector<NodeId> out;
        for (const auto& m : members) {
            if (m.role == Role::Rebuilding) continue;
            if (mode == IndexMode::Hybrid && m.role != Role::Backup &&
                m.role != Role::TemporaryPrimary)
                continue;  // hybrid primaries hold no ordered index
            out.push_back(m.node);
        }
        return out;
    }

    bool covers(uint16_t selector) const {
        return selector >= slice_lo && selector <= slice_hi;
    }

    void encode(Writer& w) const {
        w.u16(id);
        w.u64(epoch);
        w.u16(slice_lo);
        w.u16(slice_hi);
        w.u8(uint8_t(mode));
        w.u8(writes_paused ? 1 : 0);
        w.u8(hash_valid ? 1 : 0);
        hash.encode(w);
        w.u8(uint8_t(members.size()));
        for (const auto& m : members) {
            w.u16(m.node);
            w.u8(uint8_t(m.role));
        }
    }
    static GroupView decode(Reader& r) {
        GroupView g;
        g.id = r.u16();
        g.epoch = r.u64();
        g.slice_lo = r.u16();
        g.slice_hi = r.u16();
        g.mode = IndexMode(r.u8());
        g.writes_paused = r.u8() != 0;
        g.hash_valid = r.u8() != 0;
        g.hash = HashTableLayout::decode(r);
        uint8_t n = r.u8();
        for (uint8_t i = 0; i < n; i++) {
            GroupMember m;
            m.node = r.u16();
            m.role = Role(r.u8());
            g.members.push_back(m);
        }
        return g;
    }
};

struct ClusterView {
    uint64_t version = 0;
    std::vector<GroupView> groups;
    DataMap data;

    const GroupView* group_for(uint16_t selector) const {
        for (const auto& g : groups)
            if (g.covers(selector)) return &g;
        return nullptr;
    }
    const GroupView* group_by_id(GroupId id) const {
        for (const auto& g : groups)
            if (g.id == id) return &g;
        return nullptr;
    }

    Bytes encode() const {
        Writer w;
        w.u64(version);
        w.u16(uint16_t(groups.size()));
        for (const auto& g : groups) g.encode(w);
        data.encode(w);
        return w.take();
    }
    static Result<ClusterView> decode(const Bytes& b) {
        Reader r(b);
        ClusterView v;
        v.version = r.u64();
        uint16_t n = r.u16();
        for (uint16_t i = 0; i < n; i++) v.groups.push_back(GroupView::decode(r));
        v.data = DataMap::decode(r);
        if (!r.done()) return fail<ClusterView>(Errc::Corrupt, "view blob malformed");
        return v;
    }
};

}  // namespace hkv
