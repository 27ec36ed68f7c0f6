#pragma once

#include <deque>
#include <map>
#include <memory>
#include <unordered_map>
#include <vector>

#include "hkv/cluster_view.hpp"
#include "hkv/data_store.hpp"
#include "hkv/hash_index.hpp"
#include "hkv/oplog.hpp"
#include "hkv/skiplist.hpp"
#include "hkv/transport.hpp"
#include "hkv/types.hpp"
#include "hkv/wire.hpp"

namespace hkv {

// CPU cost model for index work, charged as virtual busy time on whichever
// task performs it. Hash operations are O(1); ordered-index operations are
// charged per node comparison so their cost grows with index size.
inline constexpr Nanos kHashApplyCpu = 250;
inline constexpr Nanos kSkipVisitCpu = 25;

struct GroupTuning {
    uint32_t partitions = 4;       // log/ordered-index partitions per group
    uint32_t batch_max = 64;       // replication batch size cap
    Nanos linger = us(50);         // max time an entry waits for a batch
    size_t ring_capacity = OpLog::kDefaultCapacity;
    uint64_t provisioned_keys = 1u << 20;
    uint32_t scan_workers = 2;
    uint32_t dedup_window = 1u << 16;  // completed requests remembered
};

/// Test instrumentation: called at named points along the write/replication
/// path. A fault suite can crash the node mid-protocol from inside the
/// callback; the caller re-checks its own liveness right after.
struct WriteProbe {
    std::function<void(NodeId node, const char* point)> fn;
};

/// One group's slice of an index node: log, index structure, replication
/// machinery, and the RPC behaviors of whatever role the control plane has
/// assigned. Crash/revive replaces the whole object, mirroring loss of
/// volatile state.
class GroupShard {
public:
    GroupShard(Transport& tr, NodeId self, GroupId gid, IndexMode mode,
               GroupTuning tune, std::shared_ptr<WriteProbe> probe = nullptr);

    void start();  // spawn partition/scan workers
    void stop();   // signal workers to exit (crash or teardown)

    GroupId gid() const { return gid_; }
    NodeId node() const { return self_; }
    IndexMode mode() const { return mode_; }
    const GroupTuning& tuning() const { return tune_; }

    Role role();
    uint64_t epoch();
    std::vector<GroupMember> members();

    /// Adopt a membership/epoch decision from the control plane. Promotion
    /// to write authority pulls any log suffix a peer holds that we lack
    /// before returning, so the caller (control) knows adoption finished.
    Result<void> install_view(uint64_t new_epoch, std::vector<GroupMember> members,
                              Role my_target, bool writes_paused, bool pause_trunc);

    /// RPC dispatch; `req` still carries everything after the group id.
    void dispatch(uint16_t endpoint, Bytes req, size_t offset, const RpcContext& ctx,
                  ReplyFn reply);

    /// Whether this member currently holds a servable hash table (drives
    /// the hash_valid flag in the client view).
    bool has_hash();
    HashTableLayout hash_layout();

    OpLog& log() { return *log_; }
    size_t index_size();
    /// Live key->(addr,len) map of the local index; quiesce checks compare
    /// these across members.
    std::map<std::string, std::pair<ValueAddr, uint8_t>> export_map();

private:
    struct GetJob {
        std::string key;
        Seq barrier = 0;
        Nanos queue_wait = 0;
        Nanos enq_at = 0;
        ReplyFn reply;
    };
    struct PartEvent {
        bool is_get = false;
        GetJob get;  // valid when is_get
    };
    struct ScanJob {
        std::string lo;
        uint32_t want = 0;
        std::vector<Seq> barriers;
        Nanos queue_wait = 0;
        Nanos enq_at = 0;
        ReplyFn reply;
    };
    struct AckRec {
        uint64_t dkey = 0;       // dedup key of the originating request
        Nanos append_at = 0;     // when the entry hit the log
        Nanos queue_wait = 0;    // RPC queue wait, echoed back to the client
        Nanos apply_dur = 0;     // filled when the entry is applied locally
    };
    struct DedupVal {
        bool done = false;
        Errc status = Errc::Ok;
        Nanos queue_wait = 0, log_sync = 0, index_access = 0;
        std::vector<ReplyFn> waiters;
    };
    struct PartState {
        explicit PartState(Exec& ex) : events(ex) {}
        Chan<PartEvent> events;
        std::map<Seq, AckRec> acks;       // pending client acks, by seq (mu_)
        std::map<NodeId, Seq> send_cursor;    // per-backup replicated-to (mu_)
        std::map<NodeId, Seq> peer_applied;   // last applied seq peers reported
        Seq acked = 0;                        // acks completed through here
        bool linger_armed = false;
        Nanos linger_at = 0;
    };

    // RPC behaviors
    void rpc_write(Reader r, const RpcContext& ctx, ReplyFn reply);
    void rpc_get(Reader r, const RpcContext& ctx, ReplyFn reply);
    void rpc_scan(Reader r, const RpcContext& ctx, ReplyFn reply);
    void rpc_log_replicate(Reader r, ReplyFn reply);
    void rpc_log_fetch(Reader r, ReplyFn reply);
    void rpc_export(Reader r, ReplyFn reply);
    void rpc_snapshot_seqs(ReplyFn reply);
    void rpc_role_change(Reader r, ReplyFn reply);

    // worker internals
    void part_worker(uint32_t p);
    void scan_worker();
    void serve_get(uint32_t p, GetJob& job);
    std::optional<std::pair<ValueAddr, uint8_t>> local_find_with_cost(const std::string& key);
    void flush(uint32_t p);
    void apply_up_to(uint32_t p, Seq target);
    bool apply_one(uint32_t p, const LogEntry& e);
    void complete_acks(uint32_t p, Seq through, Nanos replicated_at);
    void drop_acks_locked(uint32_t p);
    void kick(uint32_t p);

    // role plumbing
    bool is_authority(Role r) const {
        return r == Role::Primary || r == Role::TemporaryPrimary;
    }
    void ensure_index_locked();
    Result<void> adopt_authority();
    void rebuild_loop();
    Result<void> rebuild_attempt(NodeId source);

    bool probe_point(const char* label);
    bool dead() { return stop_.is_set() || tr_.is_crashed(self_); }
    static uint64_t dedup_key(NodeId client, uint64_t req) {
        return uint64_t(client) << 48 | (req & 0xFFFFFFFFFFFFULL);
    }

    Transport& tr_;
    Exec& ex_;
    NodeId self_;
    GroupId gid_;
    IndexMode mode_;
    GroupTuning tune_;
    std::shared_ptr<WriteProbe> probe_;

    Monitor mu_;  // role/epoch/membership/acks/dedup/cursors
    uint64_t epoch_ = 0;
    Role role_ = Role::Rebuilding;    // inert until the first view arrives
    Role target_ = Role::Backup;      // role a rebuild is working toward
    bool paused_ = false;             // write authority rejects new writes
    std::vector<GroupMember> members_;
    bool rebuild_running_ = false;

    std::unique_ptr<OpLog> log_;
    std::unique_ptr<HashIndexServer> hash_;
    std::unique_ptr<PartitionedSkiplist> skip_;
    std::vector<std::unique_ptr<PartState>> parts_;
    std::unique_ptr<Chan<ScanJob>> scans_;
    Flag stop_;
    bool started_ = false;

    std::unordered_map<uint64_t, DedupVal> dedup_;
    std::deque<uint64_t> dedup_fifo_;  // completed entries, eviction order
};

/// Per-node registry: owns this node's shards, dispatches group-prefixed
/// RPCs to them, and rebuilds them from scratch on revive (a revived node
/// has lost all volatile state and must be re-seeded by the control plane).
class IndexNode {
public:
    IndexNode(Transport& tr, NodeId self, std::shared_ptr<WriteProbe> probe = nullptr);

    NodeId node() const { return self_; }

    GroupShard& add_shard(GroupId gid, IndexMode mode, GroupTuning tune);
    GroupShard* shard(GroupId gid);

    void register_endpoints();
    /// Crash path: stop every shard's workers so the scheduler can quiesce.
    void halt();
    /// Revive path: discard shard state, re-create empty shards with the
    /// same static parameters, re-register RPC handlers.
    void reset_after_revive();

private:
    struct ShardParams {
        IndexMode mode;
        GroupTuning tune;
    };

    Transport& tr_;
    NodeId self_;
    std::shared_ptr<WriteProbe> probe_;
    std::map<GroupId, std::unique_ptr<GroupShard>> shards_;
    std::map<GroupId, ShardParams> params_;
    // Old generations; their fibers have exited but the objects must outlive
    // any still-parked reference, so they are dropped only at teardown.
    std::vector<std::unique_ptr<GroupShard>> retired_;
};

}  // namespace hkv
