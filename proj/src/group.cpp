#include "hkv/group.hpp"

#include <algorithm>
#include <cassert>
#include <cstdlib>

namespace hkv {

namespace {

bool target_needs_hash(IndexMode mode, Role target) {
    if (mode == IndexMode::AllHash) return true;
    if (mode == IndexMode::AllSkiplist) return false;
    return target == Role::Primary;  // hybrid: write authority keeps the hash
}

}  // namespace

GroupShard::GroupShard(Transport& tr, NodeId self, GroupId gid, IndexMode mode,
                       GroupTuning tune, std::shared_ptr<WriteProbe> probe)
    : tr_(tr),
      ex_(tr.exec()),
      self_(self),
      gid_(gid),
      mode_(mode),
      tune_(tune),
      probe_(std::move(probe)),
      mu_(ex_),
      log_(std::make_unique<OpLog>(ex_, tune.partitions, tune.ring_capacity)),
      stop_(ex_) {
    assert(tune_.partitions >= 1);
    for (uint32_t p = 0; p < tune_.partitions; p++)
        parts_.push_back(std::make_unique<PartState>(ex_));
    scans_ = std::make_unique<Chan<ScanJob>>(ex_);
}

void GroupShard::start() {
    if (started_) return;
    started_ = true;
    std::string base = "g" + std::to_string(gid_) + "/n" + std::to_string(self_);
    for (uint32_t p = 0; p < tune_.partitions; p++)
        ex_.spawn(base + "/part" + std::to_string(p), [this, p] { part_worker(p); });
    for (uint32_t i = 0; i < tune_.scan_workers; i++)
        ex_.spawn(base + "/scan" + std::to_string(i), [this] { scan_worker(); });
}

void GroupShard::stop() {
    stop_.set();
    for (auto& ps : parts_) ps->events.close();
    scans_->close();
}

Role GroupShard::role() {
    Lock l(mu_);
    return role_;
}

uint64_t GroupShard::epoch() {
    Lock l(mu_);
    return epoch_;
}

std::vector<GroupMember> GroupShard::members() {
    Lock l(mu_);
    return members_;
}

bool GroupShard::has_hash() {
    Lock l(mu_);
    return hash_ != nullptr;
}

HashTableLayout GroupShard::hash_layout() {
    Lock l(mu_);
    return hash_ ? hash_->layout() : HashTableLayout{};
}

size_t GroupShard::index_size() {
    Lock l(mu_);
    if (hash_) return hash_->size();
    if (skip_) return skip_->size();
    return 0;
}

std::map<std::string, std::pair<ValueAddr, uint8_t>> GroupShard::export_map() {
    HashIndexServer* h;
    PartitionedSkiplist* s;
    {
        Lock l(mu_);
        h = hash_.get();
        s = skip_.get();
    }
    if (h) return h->export_map();
    if (s) return s->export_map();
    return {};
}

bool GroupShard::probe_point(const char* label) {
    if (probe_ && probe_->fn) probe_->fn(self_, label);
    return !tr_.is_crashed(self_);
}

void GroupShard::kick(uint32_t p) { parts_[p]->events.push(PartEvent{}); }

void GroupShard::ensure_index_locked() {
    bool want_hash = target_needs_hash(mode_, role_);
    if (want_hash && !hash_)
        hash_ = std::make_unique<HashIndexServer>(tr_, self_, tune_.provisioned_keys);
    if (!want_hash && !skip_)
        skip_ = std::make_unique<PartitionedSkiplist>(
            tune_.partitions, uint64_t(self_) * 1000003 + gid_ + 1);
}

void GroupShard::drop_acks_locked(uint32_t p) {
    PartState& ps = *parts_[p];
    for (auto& [seq, rec] : ps.acks) dedup_.erase(rec.dkey);
    ps.acks.clear();
    ps.send_cursor.clear();
    ps.peer_applied.clear();
}

// ---------------------------------------------------------------------------
// View installation / role transitions
// ---------------------------------------------------------------------------

Result<void> GroupShard::install_view(uint64_t new_epoch, std::vector<GroupMember> members,
                                      Role my_target, bool writes_paused, bool pause_trunc) {
    bool adopt = false;
    bool spawn_rebuild = false;
    {
        Lock l(mu_);
        if (new_epoch < epoch_) return fail<void>(Errc::StaleEpoch, "view regression");
        bool fresh = new_epoch > epoch_;
        epoch_ = new_epoch;
        paused_ = writes_paused;
        members_ = std::move(members);
        Role old = role_;
        Role next = Role::Rebuilding;
        bool mine = false;
        for (const auto& m : members_)
            if (m.node == self_) {
                next = m.role;
                mine = true;
            }
        role_ = next;
        target_ = my_target;
        if (mine && next != Role::Rebuilding) ensure_index_locked();
        adopt = fresh && is_authority(next);
        if (adopt) {
            // replication state from any previous authority stint is stale
            for (auto& ps : parts_) {
                ps->send_cursor.clear();
                ps->peer_applied.clear();
            }
        }
        if (mine && next == Role::Rebuilding && !rebuild_running_) {
            rebuild_running_ = true;
            spawn_rebuild = true;
        }
        if (is_authority(old) && !is_authority(next)) {
            // demoted with the group drained; any straggler acks are
            // orphaned — their clients retry against the new authority
            for (uint32_t p = 0; p < tune_.partitions; p++) drop_acks_locked(p);
        }
    }
    log_->pause_truncation(pause_trunc);
    Result<void> res = {};
    if (adopt) res = adopt_authority();
    if (spawn_rebuild)
        ex_.spawn("g" + std::to_string(gid_) + "/n" + std::to_string(self_) + "/rebuild",
                  [this] { rebuild_loop(); });
    for (uint32_t p = 0; p < tune_.partitions; p++) kick(p);
    return res;
}

Result<void> GroupShard::adopt_authority() {
    // Survivor logs are prefixes of the same per-partition history, so the
    // longest one is authoritative. Pull whatever a peer holds beyond us —
    // never truncate: a peer may already have applied those entries.
    std::vector<NodeId> peers;
    {
        Lock l(mu_);
        for (const auto& m : members_)
            if (m.node != self_ && m.role == Role::Backup) peers.push_back(m.node);
    }
    const Nanos to = tr_.net().rpc_timeout();
    for (NodeId b : peers) {
        Writer q;
        q.u16(gid_);
        auto r = tr_.call(self_, b, kEpSnapshotSeqs, q.take(), to);
        if (!r) continue;  // freshly dead peer: the next view will drop it
        Reader rd(r.value());
        if (Errc(rd.u8()) != Errc::Ok) continue;
        rd.u8();
        HashTableLayout::decode(rd);
        rd.u8();
        rd.u32();
        uint8_t np = rd.u8();
        if (!rd.ok() || np != tune_.partitions) continue;
        for (uint32_t p = 0; p < np; p++) {
            Seq peer_head = rd.u64();
            Seq peer_applied = rd.u64();
            if (!rd.ok()) break;
            while (log_->head(p) < peer_head) {
                Writer fw;
                fw.u16(gid_);
                fw.u8(uint8_t(p));
                fw.u64(log_->head(p));
                fw.u32(1024);
                auto fr = tr_.call(self_, b, kEpLogFetch, fw.take(), to);
                if (!fr) break;
                Reader frd(fr.value());
                if (Errc(frd.u8()) != Errc::Ok) break;
                frd.u64();  // peer head, already known
                auto ents = decode_entries(frd.rest());
                if (!ents || ents.value().empty()) break;
                if (!log_->append_replica(p, ents.value())) break;
            }
            Lock l(mu_);
            parts_[p]->send_cursor[b] = peer_head;
            parts_[p]->peer_applied[b] = peer_applied;
        }
    }
    return {};
}

// ---------------------------------------------------------------------------
// RPC dispatch and handlers
// ---------------------------------------------------------------------------

void GroupShard::dispatch(uint16_t endpoint, Bytes req, size_t offset,
                          const RpcContext& ctx, ReplyFn reply) {
    Reader r(req.data() + offset, req.size() - offset);
    switch (endpoint) {
        case kEpWrite: rpc_write(r, ctx, std::move(reply)); break;
        case kEpGetIndexed: rpc_get(r, ctx, std::move(reply)); break;
        case kEpScan: rpc_scan(r, ctx, std::move(reply)); break;
        case kEpLogReplicate: rpc_log_replicate(r, std::move(reply)); break;
        case kEpLogFetch: rpc_log_fetch(r, std::move(reply)); break;
        case kEpExportIndex: rpc_export(r, std::move(reply)); break;
        case kEpSnapshotSeqs: rpc_snapshot_seqs(std::move(reply)); break;
        case kEpRoleChange: rpc_role_change(r, std::move(reply)); break;
        default: reply(status_only(Errc::UnknownEndpoint));
    }
}

void GroupShard::rpc_write(Reader r, const RpcContext& ctx, ReplyFn reply) {
    uint64_t e = r.u64();
    NodeId client = NodeId(r.u16());
    uint64_t req_id = r.u64();
    uint8_t kind_b = r.u8();
    std::string key = r.str();
    ValueAddr addr = ValueAddr::from_u48(r.u48());
    uint8_t item_len = r.u8();
    if (!r.done() || key.empty() || key.size() > kMaxKeyLen || kind_b < 1 || kind_b > 3) {
        reply(status_only(Errc::BadArgument));
        return;
    }
    OpKind kind = OpKind(kind_b);
    if (kind != OpKind::Delete && !addr.valid()) {
        reply(status_only(Errc::BadArgument));
        return;
    }
    uint64_t dkey = dedup_key(client, req_id);
    {
        Lock l(mu_);
        if (e != epoch_) {
            reply(status_only(Errc::StaleEpoch));
            return;
        }
        if (!is_authority(role_)) {
            reply(status_only(Errc::WrongRole));
            return;
        }
        auto it = dedup_.find(dkey);
        if (it != dedup_.end()) {
            if (it->second.done) {
                Writer w;
                w.u64(it->second.queue_wait);
                w.u64(it->second.log_sync);
                w.u64(it->second.index_access);
                reply(with_status(it->second.status, std::move(w)));
            } else {
                it->second.waiters.push_back(std::move(reply));
            }
            return;
        }
        if (paused_) {
            reply(status_only(Errc::Unavailable));
            return;
        }
        dedup_[dkey].waiters.push_back(std::move(reply));
    }
    if (!probe_point("pre_append")) return;
    uint32_t p = KeyHash(key).log_partition(tune_.partitions);
    Seq seq = log_->append(p, kind, key, addr, item_len);
    Nanos append_at = ex_.now();
    if (!probe_point("post_append")) return;
    {
        Lock l(mu_);
        AckRec rec;
        rec.dkey = dkey;
        rec.append_at = append_at;
        rec.queue_wait = ctx.queue_wait;
        parts_[p]->acks.emplace(seq, rec);
    }
    kick(p);
}

std::optional<std::pair<ValueAddr, uint8_t>> GroupShard::local_find_with_cost(
    const std::string& key) {
    HashIndexServer* h;
    PartitionedSkiplist* s;
    {
        Lock l(mu_);
        h = hash_.get();
        s = skip_.get();
    }
    if (h) {
        ex_.sleep_for(kHashApplyCpu);
        return h->find_local(key);
    }
    if (s) {
        uint64_t v = 0;
        auto res = s->find(key, &v);
        ex_.sleep_for(v * kSkipVisitCpu);
        return res;
    }
    return std::nullopt;
}

void GroupShard::rpc_get(Reader r, const RpcContext& ctx, ReplyFn reply) {
    uint64_t e = r.u64();
    std::string key = r.str();
    if (!r.done() || key.empty() || key.size() > kMaxKeyLen) {
        reply(status_only(Errc::BadArgument));
        return;
    }
    bool inline_serve;
    {
        Lock l(mu_);
        if (e != epoch_) {
            reply(status_only(Errc::StaleEpoch));
            return;
        }
        if (role_ == Role::Rebuilding || (!hash_ && !skip_)) {
            reply(status_only(Errc::WrongRole));
            return;
        }
        // The authority applies before acking, so its index already covers
        // every acknowledged write: serve inline on the RPC thread (this is
        // where a served index burns server CPU). Backups must first drain
        // their partition to the arrival point, so they go through the
        // partition worker.
        inline_serve = is_authority(role_);
    }
    if (inline_serve) {
        Nanos t0 = ex_.now();
        auto res = local_find_with_cost(key);
        Writer w;
        w.u8(res ? 1 : 0);
        w.u48(res ? res->first.raw : 0);
        w.u8(res ? res->second : 0);
        w.u64(ctx.queue_wait);
        w.u64(ex_.now() - t0);
        reply(with_status(Errc::Ok, std::move(w)));
        return;
    }
    uint32_t p = KeyHash(key).log_partition(tune_.partitions);
    PartEvent ev;
    ev.is_get = true;
    ev.get.key = std::move(key);
    ev.get.barrier = log_->head(p);
    ev.get.queue_wait = ctx.queue_wait;
    ev.get.enq_at = ex_.now();
    ev.get.reply = std::move(reply);
    parts_[p]->events.push(std::move(ev));
}

void GroupShard::rpc_scan(Reader r, const RpcContext& ctx, ReplyFn reply) {
    uint64_t e = r.u64();
    std::string lo = r.str();
    uint32_t want = r.u32();
    if (!r.done() || want == 0) {
        reply(status_only(Errc::BadArgument));
        return;
    }
    {
        Lock l(mu_);
        if (e != epoch_) {
            reply(status_only(Errc::StaleEpoch));
            return;
        }
        if (role_ == Role::Rebuilding || !skip_) {
            reply(status_only(Errc::WrongRole));
            return;
        }
    }
    ScanJob j;
    j.lo = std::move(lo);
    j.want = std::min<uint32_t>(want, 4096);
    j.barriers.resize(tune_.partitions);
    for (uint32_t p = 0; p < tune_.partitions; p++) j.barriers[p] = log_->head(p);
    j.queue_wait = ctx.queue_wait;
    j.enq_at = ex_.now();
    j.reply = std::move(reply);
    scans_->push(std::move(j));
}

void GroupShard::rpc_log_replicate(Reader r, ReplyFn reply) {
    uint64_t e = r.u64();
    uint32_t p = r.u8();
    Seq flr = r.u64();
    if (!r.ok() || p >= tune_.partitions) {
        reply(status_only(Errc::BadArgument));
        return;
    }
    auto ents = decode_entries(r.rest());
    if (!ents) {
        reply(status_only(Errc::Corrupt));
        return;
    }
    {
        Lock l(mu_);
        if (e != epoch_) {
            reply(status_only(Errc::StaleEpoch));
            return;
        }
        if (role_ != Role::Backup) {
            reply(status_only(Errc::WrongRole));
            return;
        }
    }
    if (!probe_point("replica_pre_append")) return;
    auto res = log_->append_replica(p, ents.value());
    if (!probe_point("replica_post_append")) return;
    log_->truncate(p, flr);  // authority's floor, capped by our own applied
    Writer w;
    w.u64(log_->head(p));
    w.u64(log_->applied(p));
    reply(with_status(res.ok() ? Errc::Ok : res.code(), std::move(w)));
    if (res.ok()) kick(p);
}

void GroupShard::rpc_log_fetch(Reader r, ReplyFn reply) {
    uint32_t p = r.u8();
    Seq since = r.u64();
    uint32_t max = r.u32();
    if (!r.done() || p >= tune_.partitions) {
        reply(status_only(Errc::BadArgument));
        return;
    }
    auto res = log_->fetch(p, since, std::min<uint32_t>(max, 1024));
    Writer w;
    w.u64(log_->head(p));
    if (res) w.raw(encode_entries(res.value()));
    reply(with_status(res.ok() ? Errc::Ok : res.code(), std::move(w)));
}

void GroupShard::rpc_export(Reader r, ReplyFn reply) {
    std::string cursor = r.str();
    uint32_t max = r.u32();
    if (!r.done()) {
        reply(status_only(Errc::BadArgument));
        return;
    }
    // keep chunks comfortably under the snapshot chunk cap
    max = std::min<uint32_t>(max == 0 ? 800 : max, 800);
    std::vector<SnapshotRecord> recs;
    bool more;
    std::string next;
    {
        Lock l(mu_);
        if (hash_) {
            HashIndexServer::ExportCursor c;
            c.bucket = uint32_t(std::strtoul(cursor.c_str(), nullptr, 10));
            more = hash_->export_entries(c, max, recs);
            next = std::to_string(c.bucket);
        } else if (skip_) {
            PartitionedSkiplist::ExportCursor c;
            c.after = cursor;
            more = skip_->export_entries(c, max, recs);
            next = c.after;
        } else {
            reply(status_only(Errc::WrongRole));
            return;
        }
    }
    Writer w;
    w.u8(more ? 1 : 0);
    w.str(next);
    w.raw(encode_snapshot_chunk(recs));
    reply(with_status(Errc::Ok, std::move(w)));
}

void GroupShard::rpc_snapshot_seqs(ReplyFn reply) {
    Writer w;
    {
        Lock l(mu_);
        w.u8(hash_ ? 1 : 0);
        HashTableLayout lay = hash_ ? hash_->layout() : HashTableLayout{};
        lay.encode(w);
        w.u8(paused_ ? 1 : 0);
        uint32_t pending = 0;
        for (auto& ps : parts_) pending += uint32_t(ps->acks.size());
        w.u32(pending);
    }
    w.u8(uint8_t(tune_.partitions));
    for (uint32_t p = 0; p < tune_.partitions; p++) {
        w.u64(log_->head(p));
        w.u64(log_->applied(p));
    }
    reply(with_status(Errc::Ok, std::move(w)));
}

void GroupShard::rpc_role_change(Reader r, ReplyFn reply) {
    uint64_t ne = r.u64();
    bool paused = r.u8() != 0;
    bool ptrunc = r.u8() != 0;
    uint8_t n = r.u8();
    std::vector<GroupMember> mem;
    Role my_target = Role::Backup;
    for (uint8_t i = 0; i < n; i++) {
        GroupMember m;
        m.node = NodeId(r.u16());
        m.role = Role(r.u8());
        Role target = Role(r.u8());
        if (m.node == self_) my_target = target;
        mem.push_back(m);
    }
    if (!r.done() || n == 0) {
        reply(status_only(Errc::BadArgument));
        return;
    }
    auto res = install_view(ne, std::move(mem), my_target, paused, ptrunc);
    reply(status_only(res.code()));
}

// ---------------------------------------------------------------------------
// Workers: replication pipeline, apply, serving
// ---------------------------------------------------------------------------

void GroupShard::part_worker(uint32_t p) {
    PartState& ps = *parts_[p];
    for (;;) {
        if (dead()) return;
        Nanos timeout = 0;  // 0 = block until the next event
        bool authority;
        {
            Lock l(mu_);
            authority = is_authority(role_);
        }
        if (authority) {
            for (;;) {
                if (dead()) return;
                bool do_flush = false;
                {
                    Lock l(mu_);
                    if (!is_authority(role_)) break;
                    Seq head = log_->head(p);
                    bool solo = members_.size() == 1;
                    Seq mincur = head;
                    bool have_target = false;
                    for (const auto& m : members_) {
                        if (m.node == self_ || m.role != Role::Backup) continue;
                        auto it = ps.send_cursor.find(m.node);
                        mincur = std::min(mincur,
                                          it == ps.send_cursor.end() ? 0 : it->second);
                        have_target = true;
                    }
                    if (solo) mincur = ps.acked;
                    if (!solo && !have_target) {
                        // headless: no backup can ack anything; wait for a
                        // view change rather than spinning
                        timeout = 0;
                        break;
                    }
                    Seq behind = head > mincur ? head - mincur : 0;
                    bool acks_waiting =
                        !ps.acks.empty() && ps.acks.begin()->first <= mincur;
                    bool apply_behind = log_->applied(p) < mincur;
                    if (behind == 0 && !acks_waiting && !apply_behind) {
                        ps.linger_armed = false;
                        timeout = 0;
                        break;
                    }
                    if (!ps.linger_armed) {
                        ps.linger_armed = true;
                        ps.linger_at = ex_.now();
                    }
                    if (behind < tune_.batch_max && !acks_waiting && !apply_behind &&
                        ex_.now() < ps.linger_at + tune_.linger) {
                        timeout = ps.linger_at + tune_.linger - ex_.now();
                        break;
                    }
                    ps.linger_armed = false;
                    do_flush = true;
                }
                if (do_flush) flush(p);
            }
        } else {
            // backups apply eagerly; a rebuilding shard owns its own replay
            bool rebuilding;
            {
                Lock l(mu_);
                rebuilding = role_ == Role::Rebuilding;
            }
            if (!rebuilding) apply_up_to(p, log_->head(p));
        }
        auto ev = timeout == 0 ? ps.events.pop() : ps.events.pop_for(timeout);
        if (!ev) {
            if (timeout == 0) return;  // channel closed: shutting down
            continue;                  // linger expired
        }
        if (ev->is_get) serve_get(p, ev->get);
    }
}

void GroupShard::serve_get(uint32_t p, GetJob& job) {
    Nanos t0 = ex_.now();
    apply_up_to(p, job.barrier);
    if (dead()) return;
    auto res = local_find_with_cost(job.key);
    Writer w;
    w.u8(res ? 1 : 0);
    w.u48(res ? res->first.raw : 0);
    w.u8(res ? res->second : 0);
    w.u64(job.queue_wait + (t0 - job.enq_at));
    w.u64(ex_.now() - t0);
    job.reply(with_status(Errc::Ok, std::move(w)));
}

void GroupShard::scan_worker() {
    for (;;) {
        auto j = scans_->pop();
        if (!j || dead()) return;
        Nanos t0 = ex_.now();
        for (uint32_t p = 0; p < tune_.partitions; p++) {
            apply_up_to(p, j->barriers[p]);
            if (dead()) return;
        }
        PartitionedSkiplist* sk;
        {
            Lock l(mu_);
            sk = skip_.get();
        }
        if (!sk) {
            j->reply(status_only(Errc::WrongRole));
            continue;
        }
        uint64_t v = 0;
        auto entries = sk->range(j->lo, j->want, &v);
        ex_.sleep_for(v * kSkipVisitCpu);
        std::vector<SnapshotRecord> recs;
        recs.reserve(entries.size());
        for (auto& e : entries)
            recs.push_back(SnapshotRecord{e.item_len, e.addr, std::move(e.key)});
        Writer w;
        w.u64(j->queue_wait + (t0 - j->enq_at));
        w.u64(ex_.now() - t0);
        w.raw(encode_snapshot_chunk(recs));
        j->reply(with_status(Errc::Ok, std::move(w)));
    }
}

void GroupShard::apply_up_to(uint32_t p, Seq target) {
    for (;;) {
        Seq applied = log_->applied(p);
        if (applied >= target) return;
        auto ents = log_->fetch(p, applied, size_t(std::min<Seq>(target - applied, 256)));
        if (!ents || ents.value().empty()) return;
        for (const auto& e : ents.value()) {
            if (e.seq > target) return;
            if (!apply_one(p, e)) return;
        }
    }
}

bool GroupShard::apply_one(uint32_t p, const LogEntry& e) {
    bool auth;
    {
        Lock l(mu_);
        auth = is_authority(role_);
    }
    if (!probe_point(auth ? "pre_apply" : "replica_pre_apply")) return false;
    Nanos t0 = ex_.now();
    HashIndexServer* h;
    PartitionedSkiplist* s;
    {
        Lock l(mu_);
        h = hash_.get();
        s = skip_.get();
    }
    if (h) {
        ex_.sleep_for(kHashApplyCpu);
        if (e.kind == OpKind::Delete)
            h->apply_delete(e.key);
        else
            h->apply_put(e.key, e.addr, e.item_len);
    } else if (s) {
        uint64_t v = s->apply(e.kind, e.key, e.addr, e.item_len);
        ex_.sleep_for(v * kSkipVisitCpu);
    }
    Nanos dt = ex_.now() - t0;
    log_->mark_applied(p, e.seq);
    {
        Lock l(mu_);
        auto it = parts_[p]->acks.find(e.seq);
        if (it != parts_[p]->acks.end()) it->second.apply_dur = dt;
    }
    return probe_point(auth ? "post_apply" : "replica_post_apply");
}

void GroupShard::flush(uint32_t p) {
    PartState& ps = *parts_[p];
    uint64_t e;
    bool solo;
    std::vector<NodeId> targets;
    {
        Lock l(mu_);
        if (!is_authority(role_)) return;
        e = epoch_;
        solo = members_.size() == 1;
        for (const auto& m : members_)
            if (m.node != self_ && m.role == Role::Backup) targets.push_back(m.node);
    }
    const Nanos to = tr_.net().rpc_timeout();

    // A target joining mid-stream (post-rebuild) tells us where it stands.
    for (NodeId b : targets) {
        {
            Lock l(mu_);
            if (ps.send_cursor.count(b)) continue;
        }
        Writer q;
        q.u16(gid_);
        auto r = tr_.call(self_, b, kEpSnapshotSeqs, q.take(), to);
        if (!r) continue;
        Reader rd(r.value());
        if (Errc(rd.u8()) != Errc::Ok) continue;
        rd.u8();
        HashTableLayout::decode(rd);
        rd.u8();
        rd.u32();
        uint8_t np = rd.u8();
        if (!rd.ok() || np != tune_.partitions) continue;
        for (uint32_t q2 = 0; q2 < np; q2++) {
            Seq h = rd.u64();
            Seq a = rd.u64();
            if (!rd.ok()) break;
            Lock l(mu_);
            if (!parts_[q2]->send_cursor.count(b)) {
                parts_[q2]->send_cursor[b] = h;
                parts_[q2]->peer_applied[b] = a;
            }
        }
    }

    Seq head = log_->head(p);
    struct Sent {
        NodeId b;
        Future<Result<Bytes>> fut;
    };
    std::vector<Sent> sent;
    bool any_send = false;
    for (NodeId b : targets) {
        Seq cur;
        {
            Lock l(mu_);
            auto it = ps.send_cursor.find(b);
            if (it == ps.send_cursor.end()) continue;
            cur = it->second;
        }
        if (cur >= head) continue;
        auto ents = log_->fetch(p, cur, tune_.batch_max);
        if (!ents || ents.value().empty()) continue;  // truncated past cur: rebuild's job
        if (!any_send) {
            any_send = true;
            if (!probe_point("pre_replicate")) return;
        }
        Writer w;
        w.u16(gid_);
        w.u64(e);
        w.u8(uint8_t(p));
        w.u64(log_->floor(p));
        w.raw(encode_entries(ents.value()));
        sent.push_back({b, tr_.call_async(self_, b, kEpLogReplicate, w.take())});
    }
    Nanos deadline = ex_.now() + to;
    for (auto& s : sent) {
        Nanos now = ex_.now();
        auto v = s.fut.get_for(now < deadline ? deadline - now : 1);
        if (!v || !v->ok()) continue;  // timed out / dropped: retried next round
        Reader rd(v->value());
        Errc st = Errc(rd.u8());
        Seq phead = rd.u64();
        Seq papplied = rd.u64();
        if (!rd.done()) continue;
        if (st == Errc::Ok || st == Errc::Rejected) {
            // Rejected still reports where the peer actually is (resync)
            Lock l(mu_);
            ps.send_cursor[s.b] = phead;
            ps.peer_applied[s.b] = papplied;
        }
    }
    if (any_send && !probe_point("post_replicate")) return;

    Seq min_acked = head;
    {
        Lock l(mu_);
        if (!is_authority(role_) || epoch_ != e) return;  // demoted mid-flush
        solo = members_.size() == 1;
        bool have = false;
        for (const auto& m : members_) {
            if (m.node == self_ || m.role != Role::Backup) continue;
            auto it = ps.send_cursor.find(m.node);
            min_acked = std::min(min_acked, it == ps.send_cursor.end() ? 0 : it->second);
            have = true;
        }
        if (!have && !solo) return;  // nothing replicated anywhere: no acks
    }
    Nanos t_repl = ex_.now();
    apply_up_to(p, min_acked);
    if (dead()) return;
    complete_acks(p, min_acked, t_repl);

    // retire entries every member has applied
    Seq gmin = log_->applied(p);
    {
        Lock l(mu_);
        for (const auto& m : members_) {
            if (m.node == self_ || m.role != Role::Backup) continue;
            auto it = ps.peer_applied.find(m.node);
            gmin = std::min(gmin, it == ps.peer_applied.end() ? 0 : it->second);
        }
    }
    log_->truncate(p, gmin);
}

void GroupShard::complete_acks(uint32_t p, Seq through, Nanos replicated_at) {
    PartState& ps = *parts_[p];
    for (;;) {
        AckRec rec;
        {
            Lock l(mu_);
            auto it = ps.acks.begin();
            if (it == ps.acks.end() || it->first > through) {
                ps.acked = std::max(ps.acked, through);
                return;
            }
            rec = it->second;
            ps.acks.erase(it);
        }
        if (!probe_point("pre_ack")) return;  // crashed: ack dies with us
        Bytes payload;
        std::vector<ReplyFn> waiters;
        {
            Lock l(mu_);
            auto& dv = dedup_[rec.dkey];
            dv.done = true;
            dv.status = Errc::Ok;
            dv.queue_wait = rec.queue_wait;
            dv.log_sync = replicated_at - rec.append_at;
            dv.index_access = rec.apply_dur;
            waiters = std::move(dv.waiters);
            dv.waiters.clear();
            dedup_fifo_.push_back(rec.dkey);
            while (dedup_fifo_.size() > tune_.dedup_window) {
                dedup_.erase(dedup_fifo_.front());
                dedup_fifo_.pop_front();
            }
            Writer w;
            w.u64(dv.queue_wait);
            w.u64(dv.log_sync);
            w.u64(dv.index_access);
            payload = with_status(Errc::Ok, std::move(w));
        }
        for (auto& fn : waiters) fn(payload);
    }
}

// ---------------------------------------------------------------------------
// Rebuild (runs on the revived node, pulling from the write authority)
// ---------------------------------------------------------------------------

void GroupShard::rebuild_loop() {
    for (;;) {
        if (dead()) break;
        NodeId src = 0;
        {
            Lock l(mu_);
            if (role_ != Role::Rebuilding) break;  // cutover happened
            for (const auto& m : members_)
                if (is_authority(m.role)) src = m.node;
        }
        if (src == 0) {
            ex_.sleep_for(ms(1));
            continue;
        }
        if (!rebuild_attempt(src)) {
            // source died or moved mid-rebuild; retry against the new view
            ex_.sleep_for(ms(1));
            continue;
        }
        break;
    }
    Lock l(mu_);
    rebuild_running_ = false;
}

Result<void> GroupShard::rebuild_attempt(NodeId src) {
    const Nanos to = tr_.net().rpc_timeout();
    bool build_hash;
    {
        Lock l(mu_);
        build_hash = target_needs_hash(mode_, target_);
        // fresh structures: a retried attempt starts over
        if (build_hash)
            hash_ = std::make_unique<HashIndexServer>(tr_, self_, tune_.provisioned_keys);
        else
            skip_ = std::make_unique<PartitionedSkiplist>(
                tune_.partitions, uint64_t(self_) * 1000003 + gid_ + 7);
    }

    // snapshot point: everything at or before these seqs will be in the
    // export; anything after comes from replay (overshoot re-applies are
    // idempotent because retries carry identical key->address bindings)
    Writer sq;
    sq.u16(gid_);
    auto sr = tr_.call(self_, src, kEpSnapshotSeqs, sq.take(), to);
    if (!sr) return sr.error();
    std::vector<Seq> snap(tune_.partitions);
    {
        Reader rd(sr.value());
        if (Errc(rd.u8()) != Errc::Ok) return fail<void>(Errc::Unavailable, "source not ready");
        rd.u8();
        HashTableLayout::decode(rd);
        rd.u8();
        rd.u32();
        uint8_t np = rd.u8();
        if (np != tune_.partitions) return fail<void>(Errc::BadArgument, "partition mismatch");
        for (uint32_t p = 0; p < np; p++) {
            rd.u64();            // head: learned again during replay
            snap[p] = rd.u64();  // applied: the export is guaranteed to cover
                                 // exactly this prefix; replay covers the rest
        }
        if (!rd.ok()) return fail<void>(Errc::Corrupt, "snapshot header");
    }

    // stream the source index
    std::vector<SnapshotRecord> sorted;  // ordered-index build accumulates + sorts
    std::string cursor;
    for (;;) {
        if (dead()) return fail<void>(Errc::Unavailable, "stopped");
        Writer w;
        w.u16(gid_);
        w.str(cursor);
        w.u32(800);
        auto r = tr_.call(self_, src, kEpExportIndex, w.take(), to);
        if (!r) return r.error();
        Reader rd(r.value());
        Errc st = Errc(rd.u8());
        if (st != Errc::Ok) return fail<void>(st, "export refused");
        bool more = rd.u8() != 0;
        std::string next = rd.str();
        auto recs = decode_snapshot_chunk(rd.rest());
        if (!recs) return recs.error();
        if (build_hash) {
            for (const auto& rec : recs.value())
                hash_->apply_put(rec.key, rec.addr, rec.item_len);
            ex_.sleep_for(Nanos(recs.value().size()) * kHashApplyCpu);
        } else {
            for (auto& rec : recs.value()) sorted.push_back(std::move(rec));
        }
        if (!more) break;
        cursor = std::move(next);
    }
    if (!build_hash) {
        std::sort(sorted.begin(), sorted.end(),
                  [](const SnapshotRecord& a, const SnapshotRecord& b) { return a.key < b.key; });
        auto ir = skip_->import_records(sorted);
        if (!ir) return ir;
        ex_.sleep_for(Nanos(sorted.size()) * kSkipVisitCpu);
    }

    for (uint32_t p = 0; p < tune_.partitions; p++) log_->reset_to(p, snap[p]);

    // replay until within one batch of the source, then report in; keep
    // chasing until the control plane flips our role (for a primary handover
    // it pauses writes first, so the gap really closes)
    bool reported = false;
    for (;;) {
        if (dead()) return fail<void>(Errc::Unavailable, "stopped");
        {
            Lock l(mu_);
            if (role_ != Role::Rebuilding) return {};
        }
        Seq lag = 0;
        for (uint32_t p = 0; p < tune_.partitions; p++) {
            for (;;) {
                Writer w;
                w.u16(gid_);
                w.u8(uint8_t(p));
                w.u64(log_->head(p));
                w.u32(1024);
                auto r = tr_.call(self_, src, kEpLogFetch, w.take(), to);
                if (!r) return r.error();
                Reader rd(r.value());
                Errc st = Errc(rd.u8());
                Seq src_head = rd.u64();
                if (st != Errc::Ok) return fail<void>(st, "log fetch refused");
                auto ents = decode_entries(rd.rest());
                if (!ents) return ents.error();
                if (!ents.value().empty()) {
                    auto ar = log_->append_replica(p, ents.value());
                    if (!ar) return ar;
                    apply_up_to(p, log_->head(p));
                    if (dead()) return fail<void>(Errc::Unavailable, "stopped");
                }
                Seq mine = log_->head(p);
                if (mine >= src_head || ents.value().empty()) {
                    lag += src_head > mine ? src_head - mine : 0;
                    break;
                }
            }
        }
        if (!reported && lag <= tune_.batch_max) {
            Writer w;
            w.u16(gid_);
            w.u16(self_);
            w.u8(build_hash ? 1 : 0);
            HashTableLayout lay = build_hash ? hash_->layout() : HashTableLayout{};
            lay.encode(w);
            w.u64(index_size());
            tr_.call(self_, kControlNode, kEpRebuildDone, w.take(), to);
            reported = true;  // control also polls, a lost report is benign
        }
        ex_.sleep_for(us(100));
    }
}

// ---------------------------------------------------------------------------
// IndexNode
// ---------------------------------------------------------------------------

IndexNode::IndexNode(Transport& tr, NodeId self, std::shared_ptr<WriteProbe> probe)
    : tr_(tr), self_(self), probe_(std::move(probe)) {
    register_endpoints();
}

GroupShard& IndexNode::add_shard(GroupId gid, IndexMode mode, GroupTuning tune) {
    params_[gid] = ShardParams{mode, tune};
    auto sh = std::make_unique<GroupShard>(tr_, self_, gid, mode, tune, probe_);
    GroupShard& ref = *sh;
    shards_[gid] = std::move(sh);
    ref.start();
    return ref;
}

GroupShard* IndexNode::shard(GroupId gid) {
    auto it = shards_.find(gid);
    return it == shards_.end() ? nullptr : it->second.get();
}

void IndexNode::register_endpoints() {
    auto bind = [this](uint16_t ep) {
        tr_.register_rpc(self_, ep,
                         [this, ep](Bytes req, const RpcContext& ctx, ReplyFn reply) {
                             if (req.size() < 2) {
                                 reply(status_only(Errc::BadArgument));
                                 return;
                             }
                             GroupId gid = get_u16(req.data());
                             auto it = shards_.find(gid);
                             if (it == shards_.end()) {
                                 reply(status_only(Errc::BadArgument));
                                 return;
                             }
                             it->second->dispatch(ep, std::move(req), 2, ctx,
                                                  std::move(reply));
                         });
    };
    for (uint16_t ep : {uint16_t(kEpWrite), uint16_t(kEpGetIndexed), uint16_t(kEpScan),
                        uint16_t(kEpLogReplicate), uint16_t(kEpLogFetch),
                        uint16_t(kEpExportIndex), uint16_t(kEpSnapshotSeqs),
                        uint16_t(kEpRoleChange)})
        bind(ep);
    tr_.register_rpc(self_, kEpHeartbeat,
                     [](Bytes, const RpcContext&, ReplyFn reply) {
                         reply(status_only(Errc::Ok));
                     });
}

void IndexNode::halt() {
    for (auto& [gid, sh] : shards_) sh->stop();
}

void IndexNode::reset_after_revive() {
    for (auto& [gid, sh] : shards_) {
        sh->stop();
        retired_.push_back(std::move(sh));
    }
    shards_.clear();
    for (const auto& [gid, prm] : params_) {
        auto sh = std::make_unique<GroupShard>(tr_, self_, gid, prm.mode, prm.tune, probe_);
        sh->start();
        shards_[gid] = std::move(sh);
    }
    register_endpoints();
}

}  // namespace hkv
