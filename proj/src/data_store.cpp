#include "hkv/data_store.hpp"

#include <cassert>
#include <cstring>

namespace hkv {

DataStoreServer::DataStoreServer(Transport& tr, NodeId self, uint8_t server_tag,
                                 size_t region_bytes)
    : tr_(tr), self_(self), tag_(server_tag) {
    auto r = tr_.register_region(self_, region_bytes);
    assert(r.ok() && "data region registration");
    region_ = r.value();
    base_ = tr_.region_base(self_, region_);
    size_ = region_bytes;

    tr_.register_rpc(self_, kEpStoreItem,
                     [this](Bytes req, const RpcContext&, ReplyFn reply) {
                         Reader rd(req);
                         std::string key = rd.str();
                         std::string value = rd.str();
                         if (!rd.done()) {
                             reply(status_only(Errc::BadArgument));
                             return;
                         }
                         auto res = append(key, value);
                         if (!res.ok()) {
                             reply(status_only(res.code()));
                             return;
                         }
                         Writer w;
                         w.u48(res.value().first.raw);
                         w.u8(res.value().second);
                         reply(with_status(Errc::Ok, std::move(w)));
                     });
}

Result<std::pair<ValueAddr, uint8_t>> DataStoreServer::append(const std::string& key,
                                                              const std::string& value) {
    auto enc = StoredItem{key, value}.encode();
    if (!enc.ok()) return fail<std::pair<ValueAddr, uint8_t>>(enc.code(), enc.error().detail);
    const Bytes& bytes = enc.value();
    if (cursor_ + bytes.size() > size_)
        return fail<std::pair<ValueAddr, uint8_t>>(Errc::RegionFull, "data region full");
    uint64_t off = cursor_;
    std::memcpy(base_ + off, bytes.data(), bytes.size());
    cursor_ = (off + bytes.size() + 7) & ~uint64_t(7);
    if (off >= kValueAddrMax >> 8)
        return fail<std::pair<ValueAddr, uint8_t>>(Errc::RegionFull, "offset exceeds 40 bits");
    return std::make_pair(ValueAddr(tag_, off), uint8_t(bytes.size()));
}

Result<std::pair<ValueAddr, uint8_t>> store_item(Transport& tr, NodeId caller,
                                                 NodeId server, const std::string& key,
                                                 const std::string& value) {
    Writer w;
    w.str(key);
    w.str(value);
    auto resp = tr.call(caller, server, kEpStoreItem, w.take(), tr.net().rpc_timeout());
    if (!resp.ok()) return fail<std::pair<ValueAddr, uint8_t>>(resp.code(), "store rpc");
    Reader rd(resp.value());
    Errc st = Errc(rd.u8());
    if (st != Errc::Ok) return fail<std::pair<ValueAddr, uint8_t>>(st, "store rejected");
    ValueAddr addr = ValueAddr::from_u48(rd.u48());
    uint8_t len = rd.u8();
    if (!rd.done() || !addr.valid())
        return fail<std::pair<ValueAddr, uint8_t>>(Errc::Corrupt, "store reply malformed");
    return std::make_pair(addr, len);
}

Result<StoredItem> read_item(Transport& tr, NodeId caller, const DataMap& map,
                             ValueAddr addr, uint8_t item_len) {
    auto loc = map.locate(addr);
    if (!loc.ok()) return fail<StoredItem>(loc.code(), loc.error().detail);
    if (item_len < kItemHeaderBytes) return fail<StoredItem>(Errc::Corrupt, "length too small");
    auto raw = tr.read(caller, loc.value().node, loc.value().region, addr.offset(), item_len);
    if (!raw.ok()) return fail<StoredItem>(raw.code(), "item read");
    auto item = StoredItem::decode(raw.value());
    if (!item.ok()) return item;
    if (item.value().wire_size() != item_len)
        return fail<StoredItem>(Errc::Corrupt, "length does not match record");
    return item;
}

}  // namespace hkv
