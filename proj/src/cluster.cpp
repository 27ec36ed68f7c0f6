#include "hkv/cluster.hpp"

#include <algorithm>

#include "hkv/codec.hpp"

namespace hkv {

Result<void> Cluster::bootstrap(Transport& tr, const Topology& topo,
                                std::shared_ptr<WriteProbe> probe) {
    if (up_) return fail<void>(Errc::Rejected, "cluster already bootstrapped");
    auto ok = validate_topology(topo);
    if (!ok) return ok;
    tr_ = &tr;
    topo_ = topo;

    tr.add_node(kControlNode);
    for (NodeId n : topo.index_nodes) tr.add_node(n);
    for (NodeId n : topo.data_nodes) tr.add_node(n);

    DataMap dmap;
    for (size_t i = 0; i < topo.data_nodes.size(); i++) {
        auto ds = std::make_unique<DataStoreServer>(
            tr, topo.data_nodes[i], uint8_t(i), topo.cfg.nodes.data_region_mb << 20);
        dmap.servers.push_back({ds->node(), ds->region()});
        data_.push_back(std::move(ds));
    }

    GroupTuning tune;
    tune.partitions = topo.cfg.log.partitions;
    tune.batch_max = topo.cfg.log.batch_max;
    tune.linger = us(topo.cfg.log.linger_us);
    tune.ring_capacity = topo.cfg.log.ring_capacity;
    tune.provisioned_keys = topo.cfg.groups.provisioned_keys;

    for (NodeId n : topo.index_nodes)
        index_[n] = std::make_unique<IndexNode>(tr, n, probe);
    for (const auto& g : topo.groups)
        for (NodeId n : g.members) index_[n]->add_shard(g.id, g.mode, tune);

    ClusterView view;
    view.data = dmap;
    for (const auto& g : topo.groups) {
        GroupView gv;
        gv.id = g.id;
        gv.epoch = 1;
        gv.slice_lo = g.slice_lo;
        gv.slice_hi = g.slice_hi;
        gv.mode = g.mode;
        for (size_t i = 0; i < g.members.size(); i++)
            gv.members.push_back({g.members[i], i == 0 ? Role::Primary : Role::Backup});
        view.groups.push_back(std::move(gv));
    }
    ctl_ = std::make_unique<ControlNode>(tr, std::move(view));
    ctl_->start();
    up_ = true;
    return {};
}

void Cluster::stop() {
    if (!up_) return;
    ctl_->stop();
    for (auto& [n, node] : index_) node->halt();
    up_ = false;
}

IndexNode* Cluster::index_node(NodeId n) {
    auto it = index_.find(n);
    return it == index_.end() ? nullptr : it->second.get();
}

void Cluster::crash_node(NodeId n) {
    tr_->crash(n);
    if (IndexNode* node = index_node(n)) node->halt();
}

Result<void> Cluster::revive_node(NodeId n) {
    IndexNode* node = index_node(n);
    if (!node) return fail<void>(Errc::UnknownNode, "not an index node");
    tr_->revive(n);
    node->reset_after_revive();
    return ctl_->notice_revive(n);
}

// ---------------------------------------------------------------------------
// Quiesce check
// ---------------------------------------------------------------------------

namespace {

struct MemberSeqs {
    bool ok = false;
    uint32_t pending = 0;
    std::vector<Seq> head, applied;
};

MemberSeqs fetch_seqs(Transport& tr, NodeId caller, NodeId node, GroupId gid) {
    Writer q;
    q.u16(gid);
    MemberSeqs out;
    auto r = tr.call(caller, node, kEpSnapshotSeqs, q.take(), tr.net().rpc_timeout());
    if (!r) return out;
    Reader rd(r.value());
    if (Errc(rd.u8()) != Errc::Ok) return out;
    rd.u8();
    HashTableLayout::decode(rd);
    rd.u8();
    out.pending = rd.u32();
    uint8_t np = rd.u8();
    for (uint32_t p = 0; p < np; p++) {
        out.head.push_back(rd.u64());
        out.applied.push_back(rd.u64());
    }
    out.ok = rd.ok();
    return out;
}

using KeyMap = std::map<std::string, std::pair<ValueAddr, uint8_t>>;

Result<KeyMap> stream_export(Transport& tr, NodeId caller, NodeId node, GroupId gid) {
    KeyMap out;
    std::string cursor;
    for (;;) {
        Writer w;
        w.u16(gid);
        w.str(cursor);
        w.u32(0);  // server default page size
        auto r = tr.call(caller, node, kEpExportIndex, w.take(), tr.net().rpc_timeout());
        if (!r) return fail<KeyMap>(r.error().code, "export from node " + std::to_string(node));
        Reader rd(r.value());
        Errc st = Errc(rd.u8());
        if (st != Errc::Ok)
            return fail<KeyMap>(st, "export refused by node " + std::to_string(node));
        bool more = rd.u8() != 0;
        std::string next = rd.str();
        auto recs = decode_snapshot_chunk(rd.rest());
        if (!recs) return fail<KeyMap>(recs.error().code, "export chunk");
        for (const auto& rec : recs.value())
            out.emplace(rec.key, std::make_pair(rec.addr, rec.item_len));
        if (!more) break;
        cursor = std::move(next);
    }
    return out;
}

}  // namespace

QuiesceReport group_quiesce_check(Cluster& c, NodeId caller, Nanos max_wait) {
    Transport& tr = c.transport();
    Exec& ex = tr.exec();
    QuiesceReport rep;
    ClusterView view = c.view();

    // settle: every member of every group agrees on head == applied, and
    // the authority holds no pending acks
    const Nanos deadline = ex.now() + max_wait;
    for (const auto& g : view.groups) {
        for (;;) {
            bool settled = true;
            std::string why;
            std::vector<Seq> ref;
            for (const auto& m : g.members) {
                MemberSeqs s = fetch_seqs(tr, caller, m.node, g.id);
                if (!s.ok) {
                    settled = false;
                    why = "node " + std::to_string(m.node) + " unreachable";
                    break;
                }
                bool auth = m.role == Role::Primary || m.role == Role::TemporaryPrimary;
                if (s.head != s.applied || (auth && s.pending > 0)) {
                    settled = false;
                    why = "node " + std::to_string(m.node) + " still applying";
                    break;
                }
                if (ref.empty()) {
                    ref = s.head;
                } else if (s.head != ref) {
                    settled = false;
                    why = "node " + std::to_string(m.node) + " behind the group";
                    break;
                }
            }
            if (settled) break;
            if (ex.now() >= deadline) {
                rep.detail = "group " + std::to_string(g.id) + " did not settle: " + why;
                return rep;
            }
            ex.sleep_for(us(200));
        }
    }

    // compare: every member's export of group g must be identical
    for (const auto& g : view.groups) {
        KeyMap ref;
        bool have_ref = false;
        for (const auto& m : g.members) {
            auto exp = stream_export(tr, caller, m.node, g.id);
            if (!exp) {
                rep.detail = "group " + std::to_string(g.id) + ": " + exp.error().detail;
                return rep;
            }
            if (!have_ref) {
                ref = exp.take();
                have_ref = true;
                continue;
            }
            const KeyMap& got = exp.value();
            if (got == ref) continue;
            rep.detail = "group " + std::to_string(g.id) + ": node " +
                         std::to_string(m.node) + " export differs (" +
                         std::to_string(got.size()) + " vs " + std::to_string(ref.size()) +
                         " keys)";
            for (const auto& [k, v] : ref) {
                auto it = got.find(k);
                if (it == got.end()) {
                    rep.detail += "; first missing key '" + k + "'";
                    break;
                }
                if (it->second != v) {
                    rep.detail += "; first differing key '" + k + "'";
                    break;
                }
            }
            return rep;
        }
        for (auto& [k, v] : ref) rep.map.emplace(k, v);
    }
    rep.settled = true;
    return rep;
}

}  // namespace hkv
