#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hkv/cluster_view.hpp"
#include "hkv/data_store.hpp"
#include "hkv/transport.hpp"

namespace hkv {

/// Per-operation latency breakdown, in nanoseconds of the transport clock.
/// Phases are disjoint; for each op they add up to total minus pure client
/// compute (which the simulation models as zero).
struct PhaseTrace {
    Nanos total = 0;
    Nanos index_rpc = 0;     // two-sided index traffic net of server-side time
    Nanos queue_wait = 0;    // time queued behind other requests on the server
    Nanos log_sync = 0;      // replication wait inside writes
    Nanos index_access = 0;  // index reads/mutations, either side of the wire
    Nanos data_access = 0;   // stored-item transfers to/from data servers
};

struct ClientStats {
    uint64_t ops = 0;
    uint64_t retries = 0;         // resent or re-routed attempts
    uint64_t view_refreshes = 0;  // trips to the control node
};

struct ClientOptions {
    NodeId control = kControlNode;
    uint32_t max_attempts = 5;     // per operation, with exponential backoff
    uint32_t scan_fetch_width = 2; // parallel one-sided reads in the value-fetch stage
    uint64_t seed = 0;             // backup selection for degraded reads
};

/// Application-facing KV handle. Verb policy: GETs on a healthy group go
/// straight to the authority's hash region with one-sided reads (zero
/// server CPU); writes and scans are RPCs; degraded or hash-less groups
/// serve GETs over RPC from an ordered-index replica. One handle may be
/// shared by concurrent callers; every operation is independent.
class Client {
public:
    Client(Transport& tr, ClientOptions opt = {});

    /// Fetches the initial routing view. Call once before issuing ops.
    Result<void> connect();

    Result<void> put(const std::string& key, const std::string& value,
                     PhaseTrace* pt = nullptr);
    Result<void> update(const std::string& key, const std::string& value,
                        PhaseTrace* pt = nullptr);
    Result<void> del(const std::string& key, PhaseTrace* pt = nullptr);
    Result<std::optional<std::string>> get(const std::string& key, PhaseTrace* pt = nullptr);
    Result<std::vector<std::pair<std::string, std::string>>> scan(const std::string& start_key,
                                                                  uint32_t count,
                                                                  PhaseTrace* pt = nullptr);

    NodeId id() const { return self_; }
    ClusterView view();
    ClientStats stats();

private:
    Result<void> refresh_view();
    ClusterView snapshot();
    void backoff(uint32_t attempt);
    Result<void> write_op(OpKind kind, const std::string& key, const std::string& value,
                          PhaseTrace* pt);
    Result<std::optional<std::string>> get_onesided(const ClusterView& v, const GroupView& g,
                                                    NodeId server, const std::string& key,
                                                    PhaseTrace* pt);
    Result<std::optional<std::string>> get_rpc(const ClusterView& v, const GroupView& g,
                                               NodeId server, const std::string& key,
                                               PhaseTrace* pt);
    std::optional<NodeId> pick_rpc_get_target(const GroupView& g);

    Transport& tr_;
    Exec& ex_;
    ClientOptions opt_;
    NodeId self_;

    Monitor mu_;  // guards everything below; never held across the wire
    ClusterView view_;
    uint64_t next_req_ = 1;
    uint64_t data_rr_ = 0;  // spreads stored items across data servers
    uint64_t scan_rr_ = 0;  // rotates scan load across a group's backups
    std::mt19937_64 rng_;
    ClientStats stats_;
};

}  // namespace hkv
