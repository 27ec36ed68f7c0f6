#include "hkv/client.hpp"

#include <algorithm>

#include "hkv/codec.hpp"
#include "hkv/hash_index.hpp"
#include "hkv/hashfn.hpp"
#include "hkv/wire.hpp"

namespace hkv {

Client::Client(Transport& tr, ClientOptions opt)
    : tr_(tr),
      ex_(tr.exec()),
      opt_(opt),
      self_(tr.add_client()),
      mu_(ex_),
      rng_(opt.seed * 0x9E3779B97F4A7C15ULL + self_) {}

Result<void> Client::connect() {
    for (uint32_t a = 0; a < opt_.max_attempts; a++) {
        if (a) backoff(a - 1);
        if (refresh_view().ok()) return {};
    }
    return fail<void>(Errc::Unavailable, "control node unreachable");
}

ClusterView Client::view() {
    return snapshot();
}

ClientStats Client::stats() {
    Lock l(mu_);
    return stats_;
}

ClusterView Client::snapshot() {
    Lock l(mu_);
    return view_;
}

Result<void> Client::refresh_view() {
    {
        Lock l(mu_);
        stats_.view_refreshes++;
    }
    auto res = tr_.call(self_, opt_.control, kEpView, {}, tr_.net().rpc_timeout());
    if (!res.ok()) return Err(res.error());
    Reader r(res.value());
    if (Errc(r.u8()) != Errc::Ok || !r.ok())
        return fail<void>(Errc::Unavailable, "view endpoint rejected the request");
    auto v = ClusterView::decode(r.rest());
    if (!v.ok()) return Err(v.error());
    Lock l(mu_);
    if (v.value().version >= view_.version) view_ = v.take();
    return {};
}

void Client::backoff(uint32_t attempt) {
    ex_.sleep_for((2 * tr_.net().rpc_rtt) << std::min<uint32_t>(attempt, 6));
}

// ---------------------------------------------------------------------------
// Writes
// ---------------------------------------------------------------------------

Result<void> Client::put(const std::string& key, const std::string& value, PhaseTrace* pt) {
    return write_op(OpKind::Put, key, value, pt);
}

Result<void> Client::update(const std::string& key, const std::string& value, PhaseTrace* pt) {
    return write_op(OpKind::Update, key, value, pt);
}

Result<void> Client::del(const std::string& key, PhaseTrace* pt) {
    return write_op(OpKind::Delete, key, {}, pt);
}

Result<void> Client::write_op(OpKind kind, const std::string& key, const std::string& value,
                              PhaseTrace* pt) {
    if (key.empty() || key.size() > kMaxKeyLen)
        return fail<void>(Errc::BadArgument, "key length");
    if (pt) *pt = {};
    uint64_t req;
    {
        Lock l(mu_);
        req = next_req_++;
        stats_.ops++;
    }
    Nanos op_start = ex_.now();

    // The value is stored once; every retry reuses the address together
    // with the request id, so a duplicate ack collapses on the server.
    ValueAddr addr{};
    uint8_t item_len = 0;
    Nanos data_ns = 0;
    if (kind != OpKind::Delete) {
        ClusterView v = snapshot();
        if (v.data.servers.empty()) {
            auto rf = refresh_view();
            if (!rf.ok()) return rf;
            v = snapshot();
            if (v.data.servers.empty())
                return fail<void>(Errc::Unavailable, "no data servers in view");
        }
        uint64_t pick;
        {
            Lock l(mu_);
            pick = data_rr_++;
        }
        Nanos t0 = ex_.now();
        auto stored =
            store_item(tr_, self_, v.data.servers[pick % v.data.servers.size()].node, key, value);
        data_ns = ex_.now() - t0;
        if (!stored.ok()) return Err(stored.error());
        addr = stored.value().first;
        item_len = stored.value().second;
    }

    Err last{Errc::Unavailable, "no write authority reachable"};
    for (uint32_t a = 0; a < opt_.max_attempts; a++) {
        if (a) {
            backoff(a - 1);
            refresh_view();
            Lock l(mu_);
            stats_.retries++;
        }
        ClusterView v = snapshot();
        const GroupView* g = v.group_for(KeyHash(key).group_selector());
        if (!g) continue;
        if (g->writes_paused) {
            last = {Errc::Unavailable, "writes paused for cutover"};
            continue;
        }
        auto wn = g->write_node();
        if (!wn) continue;
        Writer w;
        w.u16(g->id);
        w.u64(g->epoch);
        w.u16(self_);
        w.u64(req);
        w.u8(uint8_t(kind));
        w.str(key);
        w.u48(addr.raw);
        w.u8(item_len);
        Nanos t0 = ex_.now();
        auto res = tr_.call(self_, *wn, kEpWrite, w.take(), tr_.net().rpc_timeout());
        Nanos elapsed = ex_.now() - t0;
        if (!res.ok()) {
            last = res.error();
            continue;
        }
        Reader r(res.value());
        Errc st = Errc(r.u8());
        if (st == Errc::Ok) {
            Nanos qw = Nanos(r.u64());
            Nanos ls = Nanos(r.u64());
            Nanos ia = Nanos(r.u64());
            if (pt) {
                pt->total = ex_.now() - op_start;
                pt->queue_wait = qw;
                pt->log_sync = ls;
                pt->index_access = ia;
                pt->data_access = data_ns;
                pt->index_rpc = elapsed > qw + ls + ia ? elapsed - qw - ls - ia : 0;
            }
            return {};
        }
        if (st == Errc::StaleEpoch || st == Errc::WrongRole || st == Errc::Unavailable) {
            last = {st, "write routed to a stale authority"};
            continue;
        }
        return fail<void>(st, "write rejected");
    }
    return Err(std::move(last));
}

// ---------------------------------------------------------------------------
// GET
// ---------------------------------------------------------------------------

Result<std::optional<std::string>> Client::get(const std::string& key, PhaseTrace* pt) {
    if (key.empty() || key.size() > kMaxKeyLen)
        return fail<std::optional<std::string>>(Errc::BadArgument, "key length");
    {
        Lock l(mu_);
        stats_.ops++;
    }
    Nanos op_start = ex_.now();
    Err last{Errc::Unavailable, "no replica answered the read"};
    for (uint32_t a = 0; a < opt_.max_attempts; a++) {
        if (a) {
            backoff(a - 1);
            refresh_view();
            Lock l(mu_);
            stats_.retries++;
        }
        ClusterView v = snapshot();
        const GroupView* g = v.group_for(KeyHash(key).group_selector());
        if (!g) continue;
        if (pt) *pt = {};
        Result<std::optional<std::string>> r(Errc::Unavailable);
        if (g->hash_valid && g->write_node()) {
            r = get_onesided(v, *g, *g->write_node(), key, pt);
        } else {
            auto target = pick_rpc_get_target(*g);
            if (!target) continue;
            r = get_rpc(v, *g, *target, key, pt);
        }
        if (r.ok()) {
            if (pt) pt->total = ex_.now() - op_start;
            return r;
        }
        if (r.code() == Errc::BadArgument) return r;
        last = r.error();
    }
    return Err(std::move(last));
}

Result<std::optional<std::string>> Client::get_onesided(const ClusterView& v, const GroupView& g,
                                                        NodeId server, const std::string& key,
                                                        PhaseTrace* pt) {
    // The verification read inside the lookup already carries the value
    // bytes; keep the last item so a hit costs no extra round trip.
    std::optional<StoredItem> seen;
    auto reader = [&](ValueAddr a, uint8_t l) -> Result<StoredItem> {
        auto r = read_item(tr_, self_, v.data, a, l);
        if (r.ok()) seen = r.value();
        return r;
    };
    auto res = client_lookup(tr_, self_, server, g.hash, key, reader);
    if (!res.ok()) return Err(res.error());
    const LookupResult& lr = res.value();
    if (pt) {
        pt->index_access = lr.bucket_elapsed;
        pt->data_access = lr.item_elapsed;
    }
    if (!lr.hit) return std::optional<std::string>{};
    if (seen && seen->key == key) return std::optional<std::string>(std::move(seen->value));
    auto item = read_item(tr_, self_, v.data, lr.hit->first, lr.hit->second);
    if (!item.ok()) return Err(item.error());
    return std::optional<std::string>(std::move(item.value().value));
}

std::optional<NodeId> Client::pick_rpc_get_target(const GroupView& g) {
    // All-skiplist groups serve point reads from the write authority (its
    // index is synchronously current, and reads there exercise the
    // RPC-thread bottleneck the hybrid layout exists to avoid). Elsewhere
    // this path only runs degraded, where reads spread randomly across the
    // ordered-index backups.
    if (g.mode == IndexMode::AllSkiplist) {
        if (auto wn = g.write_node()) return wn;
    }
    std::vector<NodeId> backups;
    for (const auto& m : g.members)
        if (m.role == Role::Backup) backups.push_back(m.node);
    if (!backups.empty()) {
        Lock l(mu_);
        return backups[rng_() % backups.size()];
    }
    return g.write_node();
}

Result<std::optional<std::string>> Client::get_rpc(const ClusterView& v, const GroupView& g,
                                                   NodeId server, const std::string& key,
                                                   PhaseTrace* pt) {
    Writer w;
    w.u16(g.id);
    w.u64(g.epoch);
    w.str(key);
    Nanos t0 = ex_.now();
    auto res = tr_.call(self_, server, kEpGetIndexed, w.take(), tr_.net().rpc_timeout());
    Nanos elapsed = ex_.now() - t0;
    if (!res.ok()) return Err(res.error());
    Reader r(res.value());
    Errc st = Errc(r.u8());
    if (st != Errc::Ok) return fail<std::optional<std::string>>(st, "indexed get rejected");
    bool found = r.u8() != 0;
    ValueAddr addr = ValueAddr::from_u48(r.u48());
    uint8_t item_len = r.u8();
    Nanos qw = Nanos(r.u64());
    Nanos ia = Nanos(r.u64());
    if (!r.ok()) return fail<std::optional<std::string>>(Errc::Corrupt, "short get reply");
    if (pt) {
        pt->queue_wait = qw;
        pt->index_access = ia;
        pt->index_rpc = elapsed > qw + ia ? elapsed - qw - ia : 0;
    }
    if (!found) return std::optional<std::string>{};
    t0 = ex_.now();
    auto item = read_item(tr_, self_, v.data, addr, item_len);
    if (pt) pt->data_access = ex_.now() - t0;
    if (!item.ok()) return Err(item.error());
    return std::optional<std::string>(std::move(item.value().value));
}

// ---------------------------------------------------------------------------
// SCAN
// ---------------------------------------------------------------------------

Result<std::vector<std::pair<std::string, std::string>>> Client::scan(
    const std::string& start_key, uint32_t count, PhaseTrace* pt) {
    using Out = std::vector<std::pair<std::string, std::string>>;
    if (count == 0) return fail<Out>(Errc::BadArgument, "scan count");
    {
        Lock l(mu_);
        stats_.ops++;
    }
    Nanos op_start = ex_.now();
    if (pt) *pt = {};
    Err last{Errc::Unavailable, "scan found no serving replicas"};
    for (uint32_t a = 0; a < opt_.max_attempts; a++) {
        if (a) {
            backoff(a - 1);
            refresh_view();
            Lock l(mu_);
            stats_.retries++;
        }
        ClusterView v = snapshot();
        if (v.groups.empty()) continue;

        // one ordered-index backup per group, rotating across ops
        struct Target {
            uint16_t gid;
            uint64_t epoch;
            NodeId node;
        };
        std::vector<Target> targets;
        targets.reserve(v.groups.size());
        uint64_t cursor;
        {
            Lock l(mu_);
            cursor = scan_rr_++;
        }
        bool gap = false;
        for (const auto& g : v.groups) {
            std::vector<NodeId> backups;
            for (const auto& m : g.members)
                if (m.role == Role::Backup) backups.push_back(m.node);
            if (backups.empty()) {
                last = {Errc::Unavailable,
                        "group " + std::to_string(g.id) + " has no scan-capable backup"};
                gap = true;
                break;
            }
            targets.push_back({g.id, g.epoch, backups[cursor % backups.size()]});
        }
        if (gap) continue;

        Nanos fan_start = ex_.now();
        std::vector<Future<Result<Bytes>>> futs;
        futs.reserve(targets.size());
        for (const auto& t : targets) {
            Writer w;
            w.u16(t.gid);
            w.u64(t.epoch);
            w.str(start_key);
            w.u32(count);
            futs.push_back(tr_.call_async(self_, t.node, kEpScan, w.take()));
        }
        std::vector<std::vector<SnapshotRecord>> shards;
        shards.reserve(targets.size());
        Nanos qw_slow = 0, cpu_slow = 0;
        bool failed = false;
        for (auto& f : futs) {
            auto got = f.get_for(tr_.net().rpc_timeout());
            if (!got || !got->ok()) {
                last = got ? got->error() : Err{Errc::Timeout, "scan rpc timeout"};
                failed = true;
                continue;  // drain the rest so replies don't leak
            }
            Reader r(got->value());
            Errc st = Errc(r.u8());
            if (st != Errc::Ok) {
                last = {st, "scan shard rejected"};
                failed = true;
                continue;
            }
            Nanos qw = Nanos(r.u64());
            Nanos cpu = Nanos(r.u64());
            auto recs = decode_snapshot_chunk(r.rest());
            if (!recs.ok()) {
                last = recs.error();
                failed = true;
                continue;
            }
            if (qw + cpu > qw_slow + cpu_slow) {
                qw_slow = qw;
                cpu_slow = cpu;
            }
            shards.push_back(recs.take());
        }
        if (failed) continue;
        Nanos fan_ns = ex_.now() - fan_start;

        // k-way merge of per-group sorted runs, truncated to count
        std::vector<SnapshotRecord> merged;
        merged.reserve(count);
        std::vector<size_t> pos(shards.size(), 0);
        while (merged.size() < count) {
            int best = -1;
            for (size_t s = 0; s < shards.size(); s++) {
                if (pos[s] >= shards[s].size()) continue;
                if (best < 0 || shards[s][pos[s]].key < shards[size_t(best)][pos[size_t(best)]].key)
                    best = int(s);
            }
            if (best < 0) break;
            merged.push_back(std::move(shards[size_t(best)][pos[size_t(best)]++]));
        }

        // pipelined value fetch: a few readers stride the address list
        Nanos fetch_start = ex_.now();
        Out out(merged.size());
        uint32_t width = std::max<uint32_t>(1, opt_.scan_fetch_width);
        width = std::min<uint32_t>(width, uint32_t(merged.size() ? merged.size() : 1));
        std::vector<Errc> worker_err(width, Errc::Ok);
        WaitGroup wg(ex_);
        wg.add(int(width));
        for (uint32_t wkr = 0; wkr < width; wkr++) {
            ex_.spawn("cli/fetch", [&, wkr] {
                for (size_t i = wkr; i < merged.size(); i += width) {
                    auto item = read_item(tr_, self_, v.data, merged[i].addr, merged[i].item_len);
                    if (!item.ok()) {
                        worker_err[wkr] = item.code();
                        break;
                    }
                    out[i] = {std::move(merged[i].key), std::move(item.value().value)};
                }
                wg.done();
            });
        }
        wg.wait();
        bool fetch_failed = false;
        for (Errc e : worker_err)
            if (e != Errc::Ok) {
                last = {e, "scan value fetch failed"};
                fetch_failed = true;
            }
        if (fetch_failed) continue;

        if (pt) {
            pt->total = ex_.now() - op_start;
            pt->queue_wait = qw_slow;
            pt->index_access = cpu_slow;
            pt->index_rpc = fan_ns > qw_slow + cpu_slow ? fan_ns - qw_slow - cpu_slow : 0;
            pt->data_access = ex_.now() - fetch_start;
        }
        return out;
    }
    return Err(std::move(last));
}

}  // namespace hkv
