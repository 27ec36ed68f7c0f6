#pragma once

#include <map>
#include <memory>
#include <set>

#include "hkv/sim_exec.hpp"
#include "hkv/transport.hpp"

namespace hkv {

/// Deterministic transport over SimExec's virtual clock.
///
/// One-sided verbs: the calling fiber sleeps half an RTT, touches the
/// target's memory directly (no target CPU involved), sleeps the second
/// half. Two-sided calls: the request is delivered to the target's FIFO
/// queue after half an RTT; one of rpc_threads_per_node worker fibers
/// dequeues it, burns per_request_cpu of virtual time, and invokes the
/// handler; the reply reaches the caller half an RTT after the handler
/// (or whoever it deferred to) completes it. Queue wait is measured at
/// dequeue and passed to the handler.
class SimTransport : public Transport {
public:
    SimTransport(SimExec& ex, NetConfig cfg);
    ~SimTransport() override;

    void add_node(NodeId node) override;
    NodeId add_client() override;

    Result<RegionId> register_region(NodeId owner, size_t bytes) override;
    uint8_t* region_base(NodeId owner, RegionId r) override;
    size_t region_size(NodeId owner, RegionId r) override;

    void register_rpc(NodeId node, uint16_t endpoint, RpcHandler h) override;

    Result<Bytes> read(NodeId caller, NodeId target, RegionId r, uint64_t off,
                       size_t len) override;
    Result<void> write(NodeId caller, NodeId target, RegionId r, uint64_t off,
                       std::span<const uint8_t> data) override;
    Result<uint64_t> cas64(NodeId caller, NodeId target, RegionId r, uint64_t off,
                           uint64_t expected, uint64_t desired) override;

    Future<Result<Bytes>> call_async(NodeId caller, NodeId target,
                                     uint16_t endpoint, Bytes req) override;

    void crash(NodeId) override;
    void revive(NodeId) override;
    bool is_crashed(NodeId) const override;
    void partition(NodeId a, NodeId b) override;
    void heal(NodeId a, NodeId b) override;
    void heal_all() override;

    VerbCounters counters(NodeId) override;
    void reset_counters() override;

    const NetConfig& net() const override { return cfg_; }

    Exec& exec() override { return ex_; }
    SimExec& sim_exec() { return ex_; }

private:
    struct PendingRpc {
        NodeId caller;
        uint16_t endpoint;
        Bytes req;
        Nanos arrival;
        uint64_t epoch;  // target crash epoch at delivery
        Promise<Result<Bytes>> prom;
    };

    struct Node {
        explicit Node(Exec& ex) : queue(std::make_unique<Chan<PendingRpc>>(ex)) {}
        bool is_server = false;
        bool crashed = false;
        uint64_t crash_epoch = 0;
        std::unique_ptr<Chan<PendingRpc>> queue;
        std::map<uint16_t, RpcHandler> handlers;
        std::map<RegionId, Bytes> regions;
        RegionId next_region = 1;
        VerbCounters ctr;
    };

    struct MemProbe {
        Node* node = nullptr;
        uint8_t* base = nullptr;
        size_t size = 0;
        Errc err = Errc::Ok;
    };

    Node& node_of(NodeId id);
    bool blocked(NodeId a, NodeId b) const;
    /// Common preamble of a one-sided verb: first half RTT, target/crash/
    /// partition/region/bounds checks at the instant memory is touched.
    MemProbe probe(NodeId caller, NodeId target, RegionId r, uint64_t off,
                   size_t len);
    void rpc_worker(NodeId node);

    SimExec& ex_;
    NetConfig cfg_;
    std::map<NodeId, Node> nodes_;
    std::set<std::pair<NodeId, NodeId>> cuts_;
    std::vector<Bytes> graveyard_;  // buffers of crashed nodes, see crash()
    NodeId next_client_ = 0x8000;
};

}  // namespace hkv
