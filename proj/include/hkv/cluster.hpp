#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hkv/config.hpp"
#include "hkv/data_store.hpp"
#include "hkv/group.hpp"
#include "hkv/recovery.hpp"

namespace hkv {

/// Owns every server-side object of a running deployment: data servers,
/// index nodes with their group shards, and the control node. The caller
/// owns the transport and executor; teardown order is stop() (or the
/// destructor), then Exec::drain(), then the members may die.
class Cluster {
public:
    Cluster() = default;
    ~Cluster() { stop(); }
    Cluster(const Cluster&) = delete;
    Cluster& operator=(const Cluster&) = delete;

    /// Bring the topology up: nodes added to the transport, regions and
    /// endpoints registered, initial view installed and published. Must run
    /// on an executor task (it issues RPCs). Rejects a second call.
    Result<void> bootstrap(Transport& tr, const Topology& topo,
                           std::shared_ptr<WriteProbe> probe = nullptr);

    void stop();

    ControlNode& control() { return *ctl_; }
    Transport& transport() { return *tr_; }
    ClusterView view() { return ctl_->view(); }
    const Topology& topology() const { return topo_; }
    IndexNode* index_node(NodeId n);
    DataStoreServer& data_server(size_t tag) { return *data_[tag]; }
    size_t data_servers() const { return data_.size(); }

    /// Fault helpers. crash_node only injects the fault; detection is the
    /// control node's job (benches may call control().fail_node to skip the
    /// heartbeat wait). revive_node restores serving state and tells the
    /// control node to seed the rebuild.
    void crash_node(NodeId n);
    Result<void> revive_node(NodeId n);

private:
    Transport* tr_ = nullptr;
    Topology topo_;
    std::vector<std::unique_ptr<DataStoreServer>> data_;
    std::map<NodeId, std::unique_ptr<IndexNode>> index_;
    std::unique_ptr<ControlNode> ctl_;
    bool up_ = false;
};

/// Distributed settle-and-compare: wait until every group's members agree
/// on head == applied with no pending acks, then stream every member's
/// index export and require them identical per group. Returns the merged
/// key -> (addr, item_len) map across groups for oracle comparison.
struct QuiesceReport {
    bool settled = false;
    std::string detail;  // first discrepancy, for diagnostics
    std::map<std::string, std::pair<ValueAddr, uint8_t>> map;
};
QuiesceReport group_quiesce_check(Cluster& c, NodeId caller, Nanos max_wait = ms(500));

}  // namespace hkv
