#include "hkv/group.hpp"

#include <doctest.h>

#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hkv/sim_exec.hpp"
#include "hkv/sim_transport.hpp"

using namespace hkv;

namespace {

constexpr GroupId kGid = 0;

GroupTuning small_tune() {
    GroupTuning t;
    t.partitions = 4;
    t.batch_max = 8;
    t.linger = us(50);
    t.provisioned_keys = 4096;
    return t;
}

struct Rig {
    SimExec ex;
    NetConfig cfg;
    SimTransport tr;
    GroupTuning tune;
    std::shared_ptr<WriteProbe> probe = std::make_shared<WriteProbe>();
    std::vector<std::unique_ptr<IndexNode>> nodes;
    NodeId client = 0;
    bool rebuild_reported = false;

    explicit Rig(IndexMode mode = IndexMode::Hybrid, int n = 3, GroupTuning t = small_tune())
        : tr(ex, cfg), tune(t) {
        tr.add_node(kControlNode);
        tr.register_rpc(kControlNode, kEpRebuildDone,
                        [this](Bytes, const RpcContext&, ReplyFn reply) {
                            rebuild_reported = true;
                            reply(status_only(Errc::Ok));
                        });
        for (NodeId id = 1; id <= n; id++) {
            tr.add_node(id);
            nodes.push_back(std::make_unique<IndexNode>(tr, id, probe));
            nodes.back()->add_shard(kGid, mode, tune);
        }
        client = tr.add_client();
    }

    ~Rig() {
        for (auto& n : nodes) n->halt();
        ex.drain();
    }

    IndexNode& node(NodeId id) { return *nodes[id - 1]; }
    GroupShard& shard(NodeId id) { return *node(id).shard(kGid); }

    void crash(NodeId id) {
        tr.crash(id);
        node(id).halt();
    }
    void revive(NodeId id) {
        tr.revive(id);
        node(id).reset_after_revive();
    }

    struct M {
        NodeId node;
        Role role;
        Role target;
    };
    // Direct view installation, as the control plane would do over RPC.
    void install(uint64_t epoch, const std::vector<M>& ms, bool paused = false,
                 bool ptrunc = false) {
        std::vector<GroupMember> mem;
        for (const auto& m : ms) mem.push_back({m.node, m.role});
        for (const auto& m : ms) {
            if (tr.is_crashed(m.node)) continue;
            REQUIRE(shard(m.node).install_view(epoch, mem, m.target, paused, ptrunc).ok());
        }
    }

    Errc role_change_rpc(NodeId target, uint64_t epoch, const std::vector<M>& ms,
                         bool paused = false, bool ptrunc = false) {
        Writer w;
        w.u16(kGid);
        w.u64(epoch);
        w.u8(paused ? 1 : 0);
        w.u8(ptrunc ? 1 : 0);
        w.u8(uint8_t(ms.size()));
        for (const auto& m : ms) {
            w.u16(m.node);
            w.u8(uint8_t(m.role));
            w.u8(uint8_t(m.target));
        }
        auto res = tr.call(client, target, kEpRoleChange, w.take(), hkv::ms(100));
        if (!res) return res.error().code;
        return Errc(res.value().at(0));
    }
};

struct WriteResp {
    Errc st = Errc::Timeout;
    Nanos qw = 0, ls = 0, ia = 0;
};

Bytes write_req(uint64_t epoch, NodeId client, uint64_t req_id, OpKind kind,
                const std::string& key, ValueAddr addr, uint8_t len) {
    Writer w;
    w.u16(kGid);
    w.u64(epoch);
    w.u16(client);
    w.u64(req_id);
    w.u8(uint8_t(kind));
    w.str(key);
    w.u48(addr.raw);
    w.u8(len);
    return w.take();
}

WriteResp parse_write(const Result<Bytes>& res) {
    WriteResp out;
    if (!res) {
        out.st = res.error().code;
        return out;
    }
    Reader r(res.value());
    out.st = Errc(r.u8());
    if (out.st == Errc::Ok) {
        out.qw = r.u64();
        out.ls = r.u64();
        out.ia = r.u64();
    }
    return out;
}

WriteResp do_write(Rig& rig, NodeId target, uint64_t epoch, uint64_t req_id,
                   const std::string& key, ValueAddr addr, uint8_t len = 16,
                   OpKind kind = OpKind::Put) {
    auto res = rig.tr.call(rig.client, target, kEpWrite,
                           write_req(epoch, rig.client, req_id, kind, key, addr, len),
                           ms(20));
    return parse_write(res);
}

struct GetResp {
    Errc st = Errc::Timeout;
    bool found = false;
    ValueAddr addr{};
    uint8_t len = 0;
    Nanos qw = 0, ia = 0;
};

GetResp do_get(Rig& rig, NodeId target, uint64_t epoch, const std::string& key) {
    Writer w;
    w.u16(kGid);
    w.u64(epoch);
    w.str(key);
    auto res = rig.tr.call(rig.client, target, kEpGetIndexed, w.take(), ms(20));
    GetResp out;
    if (!res) {
        out.st = res.error().code;
        return out;
    }
    Reader r(res.value());
    out.st = Errc(r.u8());
    if (out.st != Errc::Ok) return out;
    out.found = r.u8() != 0;
    out.addr = ValueAddr::from_u48(r.u48());
    out.len = r.u8();
    out.qw = r.u64();
    out.ia = r.u64();
    return out;
}

struct ScanResp {
    Errc st = Errc::Timeout;
    Nanos qw = 0, ia = 0;
    std::vector<SnapshotRecord> recs;
};

ScanResp do_scan(Rig& rig, NodeId target, uint64_t epoch, const std::string& lo,
                 uint32_t count) {
    Writer w;
    w.u16(kGid);
    w.u64(epoch);
    w.str(lo);
    w.u32(count);
    auto res = rig.tr.call(rig.client, target, kEpScan, w.take(), ms(20));
    ScanResp out;
    if (!res) {
        out.st = res.error().code;
        return out;
    }
    Reader r(res.value());
    out.st = Errc(r.u8());
    if (out.st != Errc::Ok) return out;
    out.qw = r.u64();
    out.ia = r.u64();
    auto recs = decode_snapshot_chunk(r.rest());
    REQUIRE(recs.ok());
    out.recs = recs.take();
    return out;
}

// Wait until every live member's log is fully replicated and applied.
void wait_quiesce(Rig& rig, const std::vector<NodeId>& members) {
    bool settled = false;
    for (int tries = 0; tries < 20000 && !settled; tries++) {
        settled = true;
        for (uint32_t p = 0; p < rig.tune.partitions && settled; p++) {
            Seq head = rig.shard(members[0]).log().head(p);
            for (NodeId n : members) {
                OpLog& log = rig.shard(n).log();
                if (log.head(p) != head || log.applied(p) != head) {
                    settled = false;
                    break;
                }
            }
        }
        if (!settled) rig.ex.sleep_for(us(100));
    }
    REQUIRE_MESSAGE(settled, "group did not quiesce");
}

std::string key_of(int i) {
    char buf[16];
    snprintf(buf, sizeof buf, "key%04d", i);
    return buf;
}

}  // namespace

TEST_CASE("writes replicate, ack after apply, and every read path sees them") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        rig.install(1, {{1, Role::Primary, Role::Primary},
                        {2, Role::Backup, Role::Backup},
                        {3, Role::Backup, Role::Backup}});

        std::map<std::string, ValueAddr> oracle;
        for (int i = 0; i < 20; i++) {
            ValueAddr a(1, 8 + 8 * uint64_t(i));
            Nanos t0 = rig.ex.now();
            auto w = do_write(rig, 1, 1, uint64_t(i), key_of(i), a);
            Nanos elapsed = rig.ex.now() - t0;
            REQUIRE(w.st == Errc::Ok);
            oracle[key_of(i)] = a;
            // sequential writes ride the full linger before their batch goes out
            CHECK(w.ls >= rig.tune.linger);
            // phases the server reports never exceed what the client measured
            CHECK(w.qw + w.ls + w.ia <= elapsed);
            // the remainder is rpc transit + handler cpu: at least one rpc rtt
            CHECK(elapsed - (w.qw + w.ls + w.ia) >= rig.cfg.rpc_rtt);
        }

        // authority serves inline; backups drain to their barrier first
        for (NodeId n : {NodeId(1), NodeId(2), NodeId(3)}) {
            for (auto& [k, a] : oracle) {
                auto g = do_get(rig, n, 1, k);
                REQUIRE(g.st == Errc::Ok);
                CHECK(g.found);
                CHECK(g.addr == a);
            }
        }
        auto miss = do_get(rig, 2, 1, "nope");
        CHECK(miss.st == Errc::Ok);
        CHECK(!miss.found);

        // ordered read on a backup sees every acked write, globally sorted
        auto sc = do_scan(rig, 2, 1, "", 100);
        REQUIRE(sc.st == Errc::Ok);
        REQUIRE(sc.recs.size() == oracle.size());
        auto it = oracle.begin();
        for (size_t i = 0; i < sc.recs.size(); i++, ++it) {
            CHECK(sc.recs[i].key == it->first);
            CHECK(sc.recs[i].addr == it->second);
        }

        // the hybrid primary holds no ordered index
        CHECK(do_scan(rig, 1, 1, "", 10).st == Errc::WrongRole);

        // delete propagates everywhere
        auto d = do_write(rig, 1, 1, 100, key_of(3), ValueAddr{}, 0, OpKind::Delete);
        REQUIRE(d.st == Errc::Ok);
        for (NodeId n : {NodeId(1), NodeId(2), NodeId(3)})
            CHECK(!do_get(rig, n, 1, key_of(3)).found);

        wait_quiesce(rig, {1, 2, 3});
        auto m1 = rig.shard(1).export_map();
        auto m2 = rig.shard(2).export_map();
        auto m3 = rig.shard(3).export_map();
        CHECK(m1.size() == 19);
        CHECK(m1 == m2);
        CHECK(m2 == m3);

        // replication bookkeeping retired applied entries on the authority
        uint64_t truncated = rig.shard(1).log().truncated_total();
        CHECK(truncated > 0);
    });
    rig.ex.run();
}

TEST_CASE("burst writes batch together instead of each waiting out the linger") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        rig.install(1, {{1, Role::Primary, Role::Primary},
                        {2, Role::Backup, Role::Backup},
                        {3, Role::Backup, Role::Backup}});
        std::vector<Future<Result<Bytes>>> futs;
        Nanos t0 = rig.ex.now();
        for (int i = 0; i < 64; i++)
            futs.push_back(rig.tr.call_async(
                rig.client, 1, kEpWrite,
                write_req(1, rig.client, uint64_t(i), OpKind::Put, key_of(i),
                          ValueAddr(1, 8 + 8 * uint64_t(i)), 16)));
        Nanos worst = 0;
        for (auto& f : futs) {
            auto v = f.get_for(ms(20));
            REQUIRE(v.has_value());
            auto w = parse_write(*v);
            REQUIRE(w.st == Errc::Ok);
            worst = std::max(worst, rig.ex.now() - t0);
        }
        // 64 writes over 4 partitions fill batches of 8 immediately; nothing
        // should be stuck waiting out multiple lingers sequentially
        CHECK(worst < 8 * rig.tune.linger);
    });
    rig.ex.run();
}

TEST_CASE("duplicate requests are acked exactly once") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        rig.install(1, {{1, Role::Primary, Role::Primary},
                        {2, Role::Backup, Role::Backup},
                        {3, Role::Backup, Role::Backup}});

        ValueAddr a(2, 64);
        auto first = do_write(rig, 1, 1, 7, "dup-key", a);
        REQUIRE(first.st == Errc::Ok);
        Seq head_after = 0;
        for (uint32_t p = 0; p < rig.tune.partitions; p++)
            head_after += rig.shard(1).log().head(p);

        // completed request replayed from the dedup window, not re-executed
        auto again = do_write(rig, 1, 1, 7, "dup-key", a);
        REQUIRE(again.st == Errc::Ok);
        CHECK(again.ls == first.ls);
        CHECK(again.ia == first.ia);
        Seq head_now = 0;
        for (uint32_t p = 0; p < rig.tune.partitions; p++)
            head_now += rig.shard(1).log().head(p);
        CHECK(head_now == head_after);

        // two in-flight copies of one request: both acked, one append
        auto f1 = rig.tr.call_async(rig.client, 1, kEpWrite,
                                    write_req(1, rig.client, 8, OpKind::Put, "dup2",
                                              ValueAddr(2, 128), 16));
        auto f2 = rig.tr.call_async(rig.client, 1, kEpWrite,
                                    write_req(1, rig.client, 8, OpKind::Put, "dup2",
                                              ValueAddr(2, 128), 16));
        auto v1 = f1.get_for(ms(20));
        auto v2 = f2.get_for(ms(20));
        REQUIRE(v1.has_value());
        REQUIRE(v2.has_value());
        CHECK(parse_write(*v1).st == Errc::Ok);
        CHECK(parse_write(*v2).st == Errc::Ok);
        Seq head_dup = 0;
        for (uint32_t p = 0; p < rig.tune.partitions; p++)
            head_dup += rig.shard(1).log().head(p);
        CHECK(head_dup == head_now + 1);
    });
    rig.ex.run();
}

TEST_CASE("epoch and role gates hold on every endpoint") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        rig.install(3, {{1, Role::Primary, Role::Primary},
                        {2, Role::Backup, Role::Backup},
                        {3, Role::Backup, Role::Backup}});

        CHECK(do_write(rig, 1, 2, 1, "k", ValueAddr(1, 8)).st == Errc::StaleEpoch);
        CHECK(do_write(rig, 1, 4, 1, "k", ValueAddr(1, 8)).st == Errc::StaleEpoch);
        CHECK(do_write(rig, 2, 3, 1, "k", ValueAddr(1, 8)).st == Errc::WrongRole);
        CHECK(do_get(rig, 2, 2, "k").st == Errc::StaleEpoch);
        CHECK(do_scan(rig, 3, 9, "", 5).st == Errc::StaleEpoch);

        // view regression is refused
        CHECK(rig.role_change_rpc(1, 2,
                                  {{1, Role::Primary, Role::Primary},
                                   {2, Role::Backup, Role::Backup},
                                   {3, Role::Backup, Role::Backup}}) == Errc::StaleEpoch);

        // bad arguments never take down the node
        CHECK(do_write(rig, 1, 3, 2, "", ValueAddr(1, 8)).st == Errc::BadArgument);
        CHECK(do_write(rig, 1, 3, 3, std::string(kMaxKeyLen + 1, 'x'), ValueAddr(1, 8)).st ==
              Errc::BadArgument);
        CHECK(do_write(rig, 1, 3, 4, "k", ValueAddr{}).st == Errc::BadArgument);
        CHECK(do_write(rig, 1, 3, 5, "ok", ValueAddr(1, 8)).st == Errc::Ok);
    });
    rig.ex.run();
}

TEST_CASE("paused authority rejects new writes but still answers duplicates") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        std::vector<Rig::M> roles = {{1, Role::Primary, Role::Primary},
                                     {2, Role::Backup, Role::Backup},
                                     {3, Role::Backup, Role::Backup}};
        rig.install(1, roles);
        auto w = do_write(rig, 1, 1, 11, "before-pause", ValueAddr(1, 8));
        REQUIRE(w.st == Errc::Ok);

        rig.install(2, roles, /*paused=*/true);
        CHECK(do_write(rig, 1, 2, 12, "during-pause", ValueAddr(1, 16)).st ==
              Errc::Unavailable);
        auto dup = do_write(rig, 1, 2, 11, "before-pause", ValueAddr(1, 8));
        CHECK(dup.st == Errc::Ok);
        CHECK(dup.ls == w.ls);
        // reads stay up through the pause
        CHECK(do_get(rig, 2, 2, "before-pause").found);

        rig.install(3, roles, /*paused=*/false);
        CHECK(do_write(rig, 1, 3, 13, "after-pause", ValueAddr(1, 24)).st == Errc::Ok);
    });
    rig.ex.run();
}

TEST_CASE("pause drains in-flight writes rather than dropping them") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        std::vector<Rig::M> roles = {{1, Role::Primary, Role::Primary},
                                     {2, Role::Backup, Role::Backup},
                                     {3, Role::Backup, Role::Backup}};
        rig.install(1, roles);
        std::vector<Future<Result<Bytes>>> futs;
        for (int i = 0; i < 10; i++)
            futs.push_back(rig.tr.call_async(
                rig.client, 1, kEpWrite,
                write_req(1, rig.client, uint64_t(i), OpKind::Put, key_of(i),
                          ValueAddr(1, 8 + 8 * uint64_t(i)), 16)));
        // let them pass the admission gate (append) but not reach their acks
        // (those wait out the replication linger), then flip to paused
        rig.ex.sleep_for(us(10));
        rig.install(2, roles, /*paused=*/true);
        for (auto& f : futs) {
            auto v = f.get_for(ms(20));
            REQUIRE(v.has_value());
            CHECK(parse_write(*v).st == Errc::Ok);
        }
        wait_quiesce(rig, {1, 2, 3});
        CHECK(rig.shard(1).export_map().size() == 10);
    });
    rig.ex.run();
}

TEST_CASE("a single-member group acks against its own log") {
    Rig rig(IndexMode::Hybrid, 1);
    rig.ex.spawn("main", [&] {
        rig.install(1, {{1, Role::Primary, Role::Primary}});
        for (int i = 0; i < 10; i++) {
            auto w = do_write(rig, 1, 1, uint64_t(i), key_of(i), ValueAddr(1, 8 + 8 * uint64_t(i)));
            REQUIRE(w.st == Errc::Ok);
        }
        for (int i = 0; i < 10; i++) CHECK(do_get(rig, 1, 1, key_of(i)).found);
        CHECK(rig.shard(1).export_map().size() == 10);
    });
    rig.ex.run();
}

TEST_CASE("all-skiplist groups serve ordered reads from the authority") {
    Rig rig(IndexMode::AllSkiplist);
    rig.ex.spawn("main", [&] {
        rig.install(1, {{1, Role::Primary, Role::Primary},
                        {2, Role::Backup, Role::Backup},
                        {3, Role::Backup, Role::Backup}});
        for (int i = 0; i < 12; i++)
            REQUIRE(do_write(rig, 1, 1, uint64_t(i), key_of(i),
                             ValueAddr(1, 8 + 8 * uint64_t(i)))
                        .st == Errc::Ok);
        // the authority itself holds an ordered index in this mode
        auto sc = do_scan(rig, 1, 1, key_of(4), 3);
        REQUIRE(sc.st == Errc::Ok);
        REQUIRE(sc.recs.size() == 3);
        CHECK(sc.recs[0].key == key_of(4));
        CHECK(sc.recs[2].key == key_of(6));
        CHECK(do_get(rig, 1, 1, key_of(7)).found);
    });
    rig.ex.run();
}

TEST_CASE("failover adopts the longest survivor log and loses nothing acked") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        rig.install(1, {{1, Role::Primary, Role::Primary},
                        {2, Role::Backup, Role::Backup},
                        {3, Role::Backup, Role::Backup}});

        std::map<std::string, ValueAddr> acked;
        for (int i = 0; i < 30; i++) {
            ValueAddr a(1, 8 + 8 * uint64_t(i));
            REQUIRE(do_write(rig, 1, 1, uint64_t(i), key_of(i), a).st == Errc::Ok);
            acked[key_of(i)] = a;
        }

        // kill the write authority between append and ack of one more write:
        // the client saw no ack, so either outcome is legal; survivors must
        // simply agree with each other
        rig.probe->fn = [&](NodeId n, const char* point) {
            if (n == 1 && std::string_view(point) == "post_append") rig.crash(1);
        };
        auto lost = do_write(rig, 1, 1, 999, "unacked", ValueAddr(1, 4096));
        CHECK(lost.st == Errc::Timeout);
        rig.probe->fn = nullptr;

        // control promotes backup 2; adoption pulls whatever 3 has beyond 2
        CHECK(rig.role_change_rpc(2, 2,
                                  {{2, Role::TemporaryPrimary, Role::TemporaryPrimary},
                                   {3, Role::Backup, Role::Backup}}) == Errc::Ok);
        CHECK(rig.role_change_rpc(3, 2,
                                  {{2, Role::TemporaryPrimary, Role::TemporaryPrimary},
                                   {3, Role::Backup, Role::Backup}}) == Errc::Ok);

        // degraded but available: writes land on the temporary primary
        for (int i = 30; i < 40; i++) {
            ValueAddr a(1, 8 + 8 * uint64_t(i));
            REQUIRE(do_write(rig, 2, 2, uint64_t(i), key_of(i), a).st == Errc::Ok);
            acked[key_of(i)] = a;
        }

        // every acked write is visible on both survivors
        for (auto& [k, a] : acked) {
            auto g2 = do_get(rig, 2, 2, k);
            REQUIRE(g2.st == Errc::Ok);
            CHECK(g2.found);
            CHECK(g2.addr == a);
            auto g3 = do_get(rig, 3, 2, k);
            REQUIRE(g3.st == Errc::Ok);
            CHECK(g3.found);
            CHECK(g3.addr == a);
        }

        wait_quiesce(rig, {2, 3});
        auto m2 = rig.shard(2).export_map();
        auto m3 = rig.shard(3).export_map();
        CHECK(m2 == m3);
        for (auto& [k, a] : acked) {
            REQUIRE(m2.count(k) == 1);
            CHECK(m2[k].first == a);
        }
    });
    rig.ex.run();
}

TEST_CASE("promotion pulls a longer survivor log instead of truncating it") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        rig.install(1, {{1, Role::Primary, Role::Primary},
                        {2, Role::Backup, Role::Backup},
                        {3, Role::Backup, Role::Backup}});
        for (int i = 0; i < 8; i++)
            REQUIRE(do_write(rig, 1, 1, uint64_t(i), key_of(i),
                             ValueAddr(1, 8 + 8 * uint64_t(i)))
                        .st == Errc::Ok);
        wait_quiesce(rig, {1, 2, 3});

        // cut node 3 off, then write: the entry reaches node 2's log but can
        // never be fully replicated, so the client sees no ack
        rig.tr.partition(1, 3);
        auto r = do_write(rig, 1, 1, 500, "tail-key", ValueAddr(1, 4096));
        CHECK(r.st == Errc::Timeout);
        rig.crash(1);
        rig.tr.heal_all();

        // survivor logs now differ; promote the SHORTER one. Adoption must
        // pull node 2's extra suffix, never cut it off — node 2 may already
        // have applied it.
        CHECK(rig.role_change_rpc(3, 2,
                                  {{3, Role::TemporaryPrimary, Role::TemporaryPrimary},
                                   {2, Role::Backup, Role::Backup}}) == Errc::Ok);
        CHECK(rig.role_change_rpc(2, 2,
                                  {{3, Role::TemporaryPrimary, Role::TemporaryPrimary},
                                   {2, Role::Backup, Role::Backup}}) == Errc::Ok);

        for (int i = 8; i < 12; i++)
            REQUIRE(do_write(rig, 3, 2, uint64_t(i), key_of(i),
                             ValueAddr(1, 8 + 8 * uint64_t(i)))
                        .st == Errc::Ok);

        wait_quiesce(rig, {2, 3});
        auto m2 = rig.shard(2).export_map();
        auto m3 = rig.shard(3).export_map();
        CHECK(m2 == m3);
        // the unacked tail write converged onto both survivors
        CHECK(m2.count("tail-key") == 1);
        for (int i = 0; i < 12; i++) CHECK(m2.count(key_of(i)) == 1);
    });
    rig.ex.run();
}

TEST_CASE("a revived node rebuilds from the authority and rejoins as backup") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        rig.install(1, {{1, Role::Primary, Role::Primary},
                        {2, Role::Backup, Role::Backup},
                        {3, Role::Backup, Role::Backup}});

        std::map<std::string, ValueAddr> acked;
        for (int i = 0; i < 30; i++) {
            ValueAddr a(1, 8 + 8 * uint64_t(i));
            REQUIRE(do_write(rig, 1, 1, uint64_t(i), key_of(i), a).st == Errc::Ok);
            acked[key_of(i)] = a;
        }

        rig.crash(1);
        rig.install(2, {{2, Role::TemporaryPrimary, Role::TemporaryPrimary},
                        {3, Role::Backup, Role::Backup}});
        for (int i = 30; i < 45; i++) {
            ValueAddr a(1, 8 + 8 * uint64_t(i));
            REQUIRE(do_write(rig, 2, 2, uint64_t(i), key_of(i), a).st == Errc::Ok);
            acked[key_of(i)] = a;
        }

        // control pauses truncation group-wide, then seeds the revived node
        rig.revive(1);
        rig.install(3,
                    {{2, Role::TemporaryPrimary, Role::TemporaryPrimary},
                     {3, Role::Backup, Role::Backup},
                     {1, Role::Rebuilding, Role::Backup}},
                    /*paused=*/false, /*ptrunc=*/true);

        // keep writing while the rebuild streams the index
        for (int i = 45; i < 60; i++) {
            ValueAddr a(1, 8 + 8 * uint64_t(i));
            REQUIRE(do_write(rig, 2, 3, uint64_t(i), key_of(i), a).st == Errc::Ok);
            acked[key_of(i)] = a;
        }

        for (int tries = 0; tries < 20000 && !rig.rebuild_reported; tries++)
            rig.ex.sleep_for(us(100));
        REQUIRE(rig.rebuild_reported);

        // cutover: the rebuilt node becomes a live backup again
        rig.install(4,
                    {{2, Role::TemporaryPrimary, Role::TemporaryPrimary},
                     {3, Role::Backup, Role::Backup},
                     {1, Role::Backup, Role::Backup}},
                    /*paused=*/false, /*ptrunc=*/false);

        for (int i = 60; i < 70; i++) {
            ValueAddr a(1, 8 + 8 * uint64_t(i));
            REQUIRE(do_write(rig, 2, 4, uint64_t(i), key_of(i), a).st == Errc::Ok);
            acked[key_of(i)] = a;
        }

        wait_quiesce(rig, {1, 2, 3});
        auto m1 = rig.shard(1).export_map();
        auto m2 = rig.shard(2).export_map();
        auto m3 = rig.shard(3).export_map();
        CHECK(m1 == m2);
        CHECK(m2 == m3);
        CHECK(m1.size() == acked.size());
        for (auto& [k, a] : acked) {
            REQUIRE(m1.count(k) == 1);
            CHECK(m1[k].first == a);
        }

        // and it serves reads again
        CHECK(do_get(rig, 1, 4, key_of(0)).found);
        CHECK(do_scan(rig, 1, 4, "", 200).recs.size() == acked.size());
    });
    rig.ex.run();
}

TEST_CASE("backup reads drain the log so acked writes are never invisible") {
    Rig rig;
    rig.ex.spawn("main", [&] {
        rig.install(1, {{1, Role::Primary, Role::Primary},
                        {2, Role::Backup, Role::Backup},
                        {3, Role::Backup, Role::Backup}});
        // interleave: every ack is immediately chased by reads on both backups
        for (int i = 0; i < 25; i++) {
            ValueAddr a(1, 8 + 8 * uint64_t(i));
            REQUIRE(do_write(rig, 1, 1, uint64_t(i), key_of(i), a).st == Errc::Ok);
            auto g2 = do_get(rig, 2, 1, key_of(i));
            REQUIRE(g2.st == Errc::Ok);
            CHECK(g2.found);
            CHECK(g2.addr == a);
            auto sc = do_scan(rig, 3, 1, key_of(i), 1);
            REQUIRE(sc.st == Errc::Ok);
            REQUIRE(sc.recs.size() == 1);
            CHECK(sc.recs[0].key == key_of(i));
        }
    });
    rig.ex.run();
}

TEST_CASE("crash probes cut the write path at every stage without divergence") {
    // crash the primary at each protocol point in turn; after failover the
    // survivors must agree, and every write acked before the crash survives
    const char* points[] = {"pre_append",    "post_append", "pre_replicate",
                            "post_replicate", "pre_apply",   "post_apply",
                            "pre_ack"};
    for (const char* point : points) {
        CAPTURE(point);
        Rig rig;
        rig.ex.spawn("main", [&] {
            rig.install(1, {{1, Role::Primary, Role::Primary},
                            {2, Role::Backup, Role::Backup},
                            {3, Role::Backup, Role::Backup}});
            std::map<std::string, ValueAddr> acked;
            for (int i = 0; i < 10; i++) {
                ValueAddr a(1, 8 + 8 * uint64_t(i));
                REQUIRE(do_write(rig, 1, 1, uint64_t(i), key_of(i), a).st == Errc::Ok);
                acked[key_of(i)] = a;
            }
            rig.probe->fn = [&](NodeId n, const char* p) {
                if (n == 1 && std::string_view(p) == point) rig.crash(1);
            };
            auto r = do_write(rig, 1, 1, 777, "maybe", ValueAddr(1, 4096));
            rig.probe->fn = nullptr;
            CHECK(r.st == Errc::Timeout);  // the ack never made it out

            rig.install(2, {{2, Role::TemporaryPrimary, Role::TemporaryPrimary},
                            {3, Role::Backup, Role::Backup}});
            for (auto& [k, a] : acked) {
                auto g = do_get(rig, 2, 2, k);
                REQUIRE(g.st == Errc::Ok);
                CHECK(g.found);
                CHECK(g.addr == a);
            }
            wait_quiesce(rig, {2, 3});
            CHECK(rig.shard(2).export_map() == rig.shard(3).export_map());
        });
        rig.ex.run();
    }
}
