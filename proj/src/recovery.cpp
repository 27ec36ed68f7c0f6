#include "hkv/recovery.hpp"

#include <algorithm>

namespace hkv {

namespace {

// Control RPCs tolerate a busy peer (a freshly promoted authority may be
// mid-adoption when its role_change ack comes due).
constexpr Nanos kCtlRpcTimeout = ms(10);
constexpr Nanos kCutoverPoll = us(100);
constexpr int kCutoverPollLimit = 2000;  // give up and requeue after this many

bool is_write_authority(Role r) {
    return r == Role::Primary || r == Role::TemporaryPrimary;
}

}  // namespace

ControlNode::ControlNode(Transport& tr, ClusterView initial)
    : tr_(tr),
      ex_(tr.exec()),
      ctl_mu_(ex_),
      view_mu_(ex_),
      state_(std::move(initial)),
      stop_(ex_) {
    published_ = state_;
    for (const auto& g : state_.groups) {
        std::vector<NodeId> want;
        for (const auto& m : g.members) want.push_back(m.node);
        desired_.push_back(std::move(want));
    }
    tasks_ = std::make_unique<Chan<Task>>(ex_);

    tr_.register_rpc(kControlNode, kEpView,
                     [this](Bytes, const RpcContext&, ReplyFn reply) {
                         Bytes blob;
                         {
                             Lock l(view_mu_);
                             blob = published_.encode();
                         }
                         Writer w;
                         w.raw(blob);
                         reply(with_status(Errc::Ok, std::move(w)));
                     });
    // Catch-up reports go through the task channel: the handler must not
    // touch ctl_mu_, which a cutover may hold for a long stretch.
    tr_.register_rpc(kControlNode, kEpRebuildDone,
                     [this](Bytes req, const RpcContext&, ReplyFn reply) {
                         Reader r(req);
                         Task t;
                         t.gid = GroupId(r.u16());
                         t.node = NodeId(r.u16());
                         t.has_hash = r.u8() != 0;
                         t.layout = HashTableLayout::decode(r);
                         t.keys = r.u64();
                         if (!r.done()) {
                             reply(status_only(Errc::BadArgument));
                             return;
                         }
                         tasks_->push(t);
                         reply(status_only(Errc::Ok));
                     });
}

void ControlNode::start() {
    {
        Lock l(ctl_mu_);
        if (started_) return;
        started_ = true;
        // Install the bootstrap view, then learn what the write authorities
        // hold so clients can start one-sided lookups at once.
        for (auto& g : state_.groups) {
            std::map<NodeId, Role> targets;
            for (const auto& m : g.members) targets[m.node] = m.role;
            broadcast_group(g, targets, g.writes_paused, false);
            refresh_hash_fields(g);
        }
        publish_locked();
    }
    ex_.spawn("ctl/monitor", [this] { monitor_loop(); });
    ex_.spawn("ctl/worker", [this] { worker_loop(); });
}

void ControlNode::stop() {
    stop_.set();
    tasks_->close();
}

ClusterView ControlNode::view() {
    Lock l(view_mu_);
    return published_;
}

bool ControlNode::quiet() {
    Lock l(ctl_mu_);
    return pending_.empty() && tasks_->size() == 0;
}

std::vector<RecoveryRecord> ControlNode::recoveries() {
    Lock l(ctl_mu_);
    return records_;
}

void ControlNode::publish_locked() {
    state_.version++;
    Lock l(view_mu_);
    published_ = state_;
}

GroupView* ControlNode::group_mut(GroupId gid) {
    for (auto& g : state_.groups)
        if (g.id == gid) return &g;
    return nullptr;
}

ControlNode::Seqs ControlNode::query_seqs(NodeId node, GroupId gid) {
    Writer q;
    q.u16(gid);
    Seqs s;
    auto r = tr_.call(kControlNode, node, kEpSnapshotSeqs, q.take(), kCtlRpcTimeout);
    if (!r) return s;
    Reader rd(r.value());
    if (Errc(rd.u8()) != Errc::Ok) return s;
    s.has_hash = rd.u8() != 0;
    s.layout = HashTableLayout::decode(rd);
    s.paused = rd.u8() != 0;
    s.pending = rd.u32();
    uint8_t np = rd.u8();
    for (uint32_t p = 0; p < np; p++) {
        s.head.push_back(rd.u64());
        s.applied.push_back(rd.u64());
    }
    s.ok = rd.ok();
    return s;
}

void ControlNode::refresh_hash_fields(GroupView& g) {
    auto wn = g.write_node();
    if (!wn) {
        g.hash_valid = false;
        return;
    }
    Seqs s = query_seqs(*wn, g.id);
    g.hash_valid = s.ok && s.has_hash;
    if (g.hash_valid) g.hash = s.layout;
}

Result<void> ControlNode::broadcast_group(const GroupView& g,
                                          const std::map<NodeId, Role>& targets,
                                          bool paused, bool ptrunc) {
    Writer w;
    w.u16(g.id);
    w.u64(g.epoch);
    w.u8(paused ? 1 : 0);
    w.u8(ptrunc ? 1 : 0);
    w.u8(uint8_t(g.members.size()));
    for (const auto& m : g.members) {
        w.u16(m.node);
        w.u8(uint8_t(m.role));
        auto it = targets.find(m.node);
        w.u8(uint8_t(it != targets.end() ? it->second : m.role));
    }
    Bytes req = w.take();

    // Authority last: its role_change handler finishes adoption (pulling log
    // suffixes from peers) before replying, so an Ok here means the group is
    // writable again.
    std::vector<NodeId> order;
    std::optional<NodeId> auth;
    for (const auto& m : g.members) {
        if (is_write_authority(m.role))
            auth = m.node;
        else
            order.push_back(m.node);
    }
    if (auth) order.push_back(*auth);

    Result<void> out = {};
    for (NodeId n : order) {
        auto r = tr_.call(kControlNode, n, kEpRoleChange, req, kCtlRpcTimeout);
        Errc st = r ? Errc(r.value().at(0)) : r.error().code;
        if (st != Errc::Ok && out.ok())
            out = fail<void>(st, "role change to node " + std::to_string(n));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Failure / revival decisions
// ---------------------------------------------------------------------------

Result<void> ControlNode::fail_node(NodeId n) {
    Lock l(ctl_mu_);
    return do_fail(n);
}

Result<void> ControlNode::notice_revive(NodeId n) {
    Lock l(ctl_mu_);
    return do_revive(n);
}

Result<void> ControlNode::do_fail(NodeId n) {
    if (n == kControlNode) return fail<void>(Errc::BadArgument, "control node");
    if (failed_.count(n)) return {};
    failed_.insert(n);
    bool touched = false;
    for (auto& g : state_.groups) {
        auto it = std::find_if(g.members.begin(), g.members.end(),
                               [n](const GroupMember& m) { return m.node == n; });
        if (it == g.members.end()) continue;
        touched = true;
        bool lost_authority = is_write_authority(it->role);
        g.members.erase(it);
        if (lost_authority) {
            for (auto& m : g.members)
                if (m.role == Role::Backup) {
                    m.role = Role::TemporaryPrimary;
                    break;
                }
            // no backup left: the group is headless until a revival
        }
        auto pit = pending_.find(g.id);
        if (pit != pending_.end() && pit->second.node == n) pending_.erase(pit);

        g.epoch++;
        g.writes_paused = false;
        std::map<NodeId, Role> targets;
        for (const auto& m : g.members) {
            targets[m.node] = m.role;
            if (m.role == Role::Rebuilding && pending_.count(g.id))
                targets[m.node] = pending_[g.id].target;
        }
        // best effort: an unreachable member learns the epoch when it fails
        // a heartbeat or answers a stale-epoch request
        broadcast_group(g, targets, false, pending_.count(g.id) != 0);
        refresh_hash_fields(g);
    }
    if (touched) publish_locked();
    return {};
}

Result<void> ControlNode::do_revive(NodeId n) {
    if (!failed_.count(n)) return {};
    failed_.erase(n);
    bool touched = false;
    for (size_t gi = 0; gi < state_.groups.size(); gi++) {
        GroupView& g = state_.groups[gi];
        const auto& want = desired_[gi];
        if (std::find(want.begin(), want.end(), n) == want.end()) continue;
        if (std::any_of(g.members.begin(), g.members.end(),
                        [n](const GroupMember& m) { return m.node == n; }))
            continue;
        if (pending_.count(g.id)) continue;  // one rebuild per group at a time
        touched = true;

        bool has_primary = std::any_of(
            g.members.begin(), g.members.end(),
            [](const GroupMember& m) { return m.role == Role::Primary; });
        Role target = has_primary ? Role::Backup : Role::Primary;

        g.epoch++;
        g.members.push_back({n, Role::Rebuilding});
        pending_[g.id] = Pending{n, target, ex_.now(), 0, false, {}};

        std::map<NodeId, Role> targets;
        for (const auto& m : g.members) targets[m.node] = m.role;
        targets[n] = target;
        // log truncation pauses group-wide until the cutover: the rebuild
        // replays from its snapshot point, which must stay fetchable
        broadcast_group(g, targets, g.writes_paused, true);
    }
    if (touched) publish_locked();
    return {};
}

// ---------------------------------------------------------------------------
// Rebuild completion and cutover
// ---------------------------------------------------------------------------

void ControlNode::worker_loop() {
    for (;;) {
        auto t = tasks_->pop();
        if (!t) return;
        do_rebuild_done(*t);
    }
}

void ControlNode::do_rebuild_done(const Task& t) {
    Lock l(ctl_mu_);
    auto pit = pending_.find(t.gid);
    if (pit == pending_.end() || pit->second.node != t.node) return;  // stale
    GroupView* g = group_mut(t.gid);
    if (!g) return;
    Pending p = pit->second;
    if (t.keys) {  // a requeued retry carries no fresh report
        p.keys = t.keys;
        p.has_hash = t.has_hash;
        p.layout = t.layout;
        pit->second = p;
    }

    Result<void> res = {};
    if (p.target == Role::Backup) {
        // Backups cut over immediately: they only serve reads behind a drain
        // barrier, so trailing less than a batch is already correct.
        g->epoch++;
        for (auto& m : g->members)
            if (m.node == t.node) m.role = Role::Backup;
        std::map<NodeId, Role> targets;
        for (const auto& m : g->members) targets[m.node] = m.role;
        res = broadcast_group(*g, targets, g->writes_paused, false);
    } else {
        res = primary_cutover(t.gid, *g, p);
    }

    if (!res.ok()) {
        // A member died mid-cutover. Leave the pause for the failure handler
        // to clear and try again once the membership settles.
        ex_.sleep_for(ms(1));
        Task retry = t;
        retry.keys = 0;
        tasks_->push(retry);
        return;
    }
    records_.push_back(RecoveryRecord{t.gid, p.node, p.target, p.keys, p.started,
                                      ex_.now()});
    pending_.erase(t.gid);
    publish_locked();
}

Result<void> ControlNode::primary_cutover(GroupId gid, GroupView g, Pending p) {
    // Phase A: stop admitting writes, roles unchanged. In-flight writes keep
    // replicating and applying; the rebuilding node keeps replaying.
    g.epoch++;
    g.writes_paused = true;
    std::map<NodeId, Role> targets;
    for (const auto& m : g.members) targets[m.node] = m.role;
    targets[p.node] = Role::Primary;
    auto br = broadcast_group(g, targets, true, true);
    GroupView* live = group_mut(gid);
    live->epoch = g.epoch;
    live->writes_paused = true;
    publish_locked();
    if (!br.ok()) return br;

    auto wn = g.write_node();
    if (!wn) return fail<void>(Errc::Unavailable, "no authority to drain");

    // Wait for the authority to drain: nothing pending, log fully applied.
    std::vector<Seq> heads;
    for (int i = 0;; i++) {
        if (i >= kCutoverPollLimit) return fail<void>(Errc::Timeout, "drain stalled");
        Seqs s = query_seqs(*wn, gid);
        if (s.ok && s.pending == 0 && s.head == s.applied) {
            heads = s.head;
            break;
        }
        ex_.sleep_for(kCutoverPoll);
    }
    // ...and for the rebuilt node to finish replaying that exact history.
    for (int i = 0;; i++) {
        if (i >= kCutoverPollLimit) return fail<void>(Errc::Timeout, "catch-up stalled");
        Seqs s = query_seqs(p.node, gid);
        if (s.ok && s.head == heads && s.applied == heads) break;
        ex_.sleep_for(kCutoverPoll);
    }

    // Phase B: identical indexes everywhere — swap roles and resume.
    g.epoch++;
    g.writes_paused = false;
    for (auto& m : g.members) {
        if (m.role == Role::TemporaryPrimary) m.role = Role::Backup;
        if (m.node == p.node) m.role = Role::Primary;
    }
    targets.clear();
    for (const auto& m : g.members) targets[m.node] = m.role;
    br = broadcast_group(g, targets, false, false);
    if (!br.ok()) return br;

    *group_mut(gid) = g;
    refresh_hash_fields(*group_mut(gid));
    return {};
}

// ---------------------------------------------------------------------------
// Heartbeats
// ---------------------------------------------------------------------------

void ControlNode::monitor_loop() {
    std::map<NodeId, int> misses;
    while (!stop_.wait_for(kHeartbeatInterval)) {
        std::vector<NodeId> live;
        {
            Lock l(ctl_mu_);
            std::set<NodeId> seen;
            for (const auto& g : state_.groups)
                for (const auto& m : g.members)
                    if (!failed_.count(m.node)) seen.insert(m.node);
            live.assign(seen.begin(), seen.end());
        }
        std::vector<NodeId> down;
        for (NodeId n : live) {
            auto r = tr_.call(kControlNode, n, kEpHeartbeat, {},
                              tr_.net().rpc_timeout());
            if (r && !r.value().empty() && Errc(r.value()[0]) == Errc::Ok) {
                misses.erase(n);
                continue;
            }
            if (++misses[n] >= kHeartbeatMisses) {
                misses.erase(n);
                down.push_back(n);
            }
        }
        for (NodeId n : down) fail_node(n);
    }
}

}  // namespace hkv
