#pragma once

#include <map>
#include <memory>
#include <set>
#include <vector>

#include "hkv/cluster_view.hpp"
#include "hkv/transport.hpp"
#include "hkv/wire.hpp"

namespace hkv {

inline constexpr Nanos kHeartbeatInterval = ms(100);
inline constexpr int kHeartbeatMisses = 3;

/// One completed rebuild, for the recovery-time experiments.
struct RecoveryRecord {
    GroupId gid = 0;
    NodeId node = 0;
    Role target = Role::Backup;  // role the node was rebuilt into
    uint64_t keys = 0;           // index size at catch-up
    Nanos started = 0;
    Nanos finished = 0;
};

/// The control plane: a single logical actor on node 0. It serves the
/// cluster view to clients, monitors members by heartbeat, reassigns roles
/// on failure, seeds rebuilds on revival, and runs the write-pause cutover
/// that hands a rebuilt primary back its group. Role changes are serialized
/// per group by the epoch counter; everything here runs under one lock, so
/// there is exactly one recovery decision in flight at a time.
class ControlNode {
public:
    ControlNode(Transport& tr, ClusterView initial);

    void start();
    void stop();

    ClusterView view();

    /// Declare a node dead now (tests and the fault suite call this instead
    /// of waiting out heartbeats). Idempotent.
    Result<void> fail_node(NodeId n);
    /// A failed node is back, empty: seed it with Rebuilding roles in every
    /// group that lost it.
    Result<void> notice_revive(NodeId n);

    /// True when no rebuild or pending control work is in flight.
    bool quiet();
    std::vector<RecoveryRecord> recoveries();

private:
    struct Pending {  // a rebuild the control plane is tracking
        NodeId node = 0;
        Role target = Role::Backup;
        Nanos started = 0;
        uint64_t keys = 0;
        bool has_hash = false;
        HashTableLayout layout;
    };
    struct Task {  // deferred work from RPC handlers
        GroupId gid = 0;
        NodeId node = 0;
        bool has_hash = false;
        HashTableLayout layout;
        uint64_t keys = 0;
    };

    void monitor_loop();
    void worker_loop();

    Result<void> do_fail(NodeId n);
    Result<void> do_revive(NodeId n);
    void do_rebuild_done(const Task& t);
    Result<void> primary_cutover(GroupId gid, GroupView g, Pending p);

    /// Push the new membership to every live member, non-authority first so
    /// the authority's adoption (which runs inside its role_change handler)
    /// can pull from peers that already speak the new epoch.
    Result<void> broadcast_group(const GroupView& g,
                                 const std::map<NodeId, Role>& targets, bool paused,
                                 bool ptrunc);
    /// Ask the group's write authority what it holds, to refresh the
    /// client-visible hash fields.
    void refresh_hash_fields(GroupView& g);
    GroupView* group_mut(GroupId gid);
    void publish_locked();  // bump version, store client-visible copy

    struct Seqs {
        bool ok = false;
        bool paused = false;
        uint32_t pending = 0;
        std::vector<Seq> head, applied;
        bool has_hash = false;
        HashTableLayout layout;
    };
    Seqs query_seqs(NodeId node, GroupId gid);

    Transport& tr_;
    Exec& ex_;

    Monitor ctl_mu_;   // serializes every control decision
    Monitor view_mu_;  // guards the published view only (kept fast for kEpView)
    ClusterView state_;      // authoritative, under ctl_mu_
    ClusterView published_;  // client-visible copy, under view_mu_
    std::vector<std::vector<NodeId>> desired_;  // per group: full membership
    std::set<NodeId> failed_;
    std::map<GroupId, Pending> pending_;
    std::vector<RecoveryRecord> records_;

    std::unique_ptr<Chan<Task>> tasks_;
    Flag stop_;
    bool started_ = false;
};

}  // namespace hkv
