#pragma once

#include <string>
#include <vector>

#include "hkv/codec.hpp"
#include "hkv/transport.hpp"
#include "hkv/types.hpp"
#include "hkv/wire.hpp"

namespace hkv {

/// Append-only value store backing one registered region. Writers go
/// through the store_item RPC (the server assigns the offset); readers go
/// around the CPU entirely with one sized one-sided read. Updates simply
/// append a fresh item and re-point the index; old bytes become garbage
/// but are never reused, so a racing reader of a stale address still sees
/// an intact record.
class DataStoreServer {
public:
    DataStoreServer(Transport& tr, NodeId self, uint8_t server_tag, size_t region_bytes);

    NodeId node() const { return self_; }
    uint8_t server_tag() const { return tag_; }
    RegionId region() const { return region_; }
    uint64_t bytes_used() const { return cursor_; }

    /// Local append; also the body of the store_item RPC handler. The
    /// first item lands at offset 8 (offset 0 is reserved so a zero address
    /// stays unambiguous); every item starts 8-byte aligned.
    Result<std::pair<ValueAddr, uint8_t>> append(const std::string& key,
                                                 const std::string& value);

private:
    Transport& tr_;
    NodeId self_;
    uint8_t tag_;
    RegionId region_ = 0;
    uint8_t* base_ = nullptr;
    uint64_t size_ = 0;
    uint64_t cursor_ = 8;
};

/// Where each address tag lives. Shipped to clients inside the cluster
/// view so read_item can resolve addresses without asking anyone.
struct DataMap {
    struct Server {
        NodeId node = 0;
        RegionId region = 0;
    };
    std::vector<Server> servers;  // indexed by address server tag

    Result<Server> locate(ValueAddr addr) const {
        if (addr.server_tag() >= servers.size())
            return fail<Server>(Errc::UnknownNode, "address tag out of range");
        return servers[addr.server_tag()];
    }

    void encode(Writer& w) const {
        w.u16(uint16_t(servers.size()));
        for (const Server& s : servers) {
            w.u16(s.node);
            w.u32(s.region);
        }
    }
    static DataMap decode(Reader& r) {
        DataMap m;
        uint16_t n = r.u16();
        for (uint16_t i = 0; i < n; i++) {
            Server s;
            s.node = r.u16();
            s.region = r.u32();
            m.servers.push_back(s);
        }
        return m;
    }
};

/// Client-side wrappers.
Result<std::pair<ValueAddr, uint8_t>> store_item(Transport& tr, NodeId caller,
                                                 NodeId server, const std::string& key,
                                                 const std::string& value);

/// One one-sided read of exactly item_len bytes, then parse. A length that
/// does not match the record is reported as corruption.
Result<StoredItem> read_item(Transport& tr, NodeId caller, const DataMap& map,
                             ValueAddr addr, uint8_t item_len);

}  // namespace hkv
