#pragma once

#include <algorithm>
#include <functional>
#include <span>

#include "hkv/exec.hpp"
#include "hkv/types.hpp"

namespace hkv {

/// Network timing/resource model. One-sided verbs consume no CPU on the
/// target node and complete in one round trip. Two-sided calls consume one
/// RPC thread on the target for per_request_cpu before the handler runs;
/// requests queue when all threads are busy.
struct NetConfig {
    Nanos one_sided_rtt = us(2);
    Nanos rpc_rtt = us(3);
    Nanos per_request_cpu = us(1);
    uint32_t rpc_threads_per_node = 4;

    // Requests that get no response are abandoned after 10 round trips
    // (floor 20us) — generous against queueing, small enough that failure
    // detection and client retries stay fast.
    Nanos rpc_timeout() const { return std::max<Nanos>(10 * rpc_rtt, us(20)); }
    Nanos one_sided_timeout() const { return std::max<Nanos>(10 * one_sided_rtt, us(20)); }
};

struct VerbCounters {
    uint64_t onesided_read = 0;
    uint64_t onesided_write = 0;
    uint64_t onesided_cas = 0;
    uint64_t rpc_handled = 0;  // requests this node's RPC threads served
    uint64_t rpc_sent = 0;     // requests this node issued as a caller
    uint64_t bytes_read = 0;
    uint64_t bytes_written = 0;
};

struct RpcContext {
    NodeId caller = 0;
    Nanos queue_wait = 0;  // arrival -> dequeue on the server
};

/// Completion callback handed to RPC handlers. A handler may invoke it
/// inline (cheap request) or capture it and complete later from another
/// task (the RPC thread is then free as soon as the handler returns, so
/// its busy time stays per_request_cpu regardless of how long the
/// deferred work takes).
using ReplyFn = std::function<void(Bytes)>;

using RpcHandler = std::function<void(Bytes req, const RpcContext& ctx, ReplyFn reply)>;

/// Verb-level transport. Two implementations: a deterministic simulation
/// (virtual time, fibers) and a TCP-socket backend (real threads). All
/// endpoints — servers and clients — are nodes; only server nodes have
/// RPC threads and registered memory.
///
/// Memory semantics both backends honor:
///  - 8-byte-aligned 8-byte accesses are atomic; cas64 requires alignment.
///  - Reads spanning multiple words are NOT a consistent snapshot;
///    protocols may only rely on per-word atomicity.
///  - Offset/length outside the region fail with Errc::Bounds.
///
/// Failure semantics:
///  - crash(n): n stops serving (one-sided and RPC both time out), its
///    queued and in-flight requests never produce replies, and anything n
///    itself tries to send goes nowhere. Registered regions are lost.
///  - revive(n): n serves again with empty memory; regions/handlers must
///    be re-registered by the recovery path.
///  - partition(a,b): drops traffic both ways between a and b until heal.
class Transport {
public:
    virtual ~Transport() = default;

    virtual void add_node(NodeId node) = 0;
    virtual NodeId add_client() = 0;

    virtual Result<RegionId> register_region(NodeId owner, size_t bytes) = 0;
    /// Local (same-node) access to a region. Servers use this to touch
    /// their own memory without paying network costs.
    virtual uint8_t* region_base(NodeId owner, RegionId r) = 0;
    virtual size_t region_size(NodeId owner, RegionId r) = 0;

    virtual void register_rpc(NodeId node, uint16_t endpoint, RpcHandler h) = 0;

    virtual Result<Bytes> read(NodeId caller, NodeId target, RegionId r,
                               uint64_t off, size_t len) = 0;
    virtual Result<void> write(NodeId caller, NodeId target, RegionId r,
                               uint64_t off, std::span<const uint8_t> data) = 0;
    /// Returns the previous value at the location (compare with expected
    /// to learn whether the swap happened).
    virtual Result<uint64_t> cas64(NodeId caller, NodeId target, RegionId r,
                                   uint64_t off, uint64_t expected,
                                   uint64_t desired) = 0;

    virtual Future<Result<Bytes>> call_async(NodeId caller, NodeId target,
                                             uint16_t endpoint, Bytes req) = 0;

    Result<Bytes> call(NodeId caller, NodeId target, uint16_t endpoint,
                       Bytes req, Nanos timeout) {
        auto fut = call_async(caller, target, endpoint, std::move(req));
        auto v = fut.get_for(timeout);
        if (!v) return fail<Bytes>(Errc::Timeout, "rpc timeout");
        return std::move(*v);
    }

    virtual void crash(NodeId) = 0;
    virtual void revive(NodeId) = 0;
    virtual bool is_crashed(NodeId) const = 0;
    virtual void partition(NodeId a, NodeId b) = 0;
    virtual void heal(NodeId a, NodeId b) = 0;
    virtual void heal_all() = 0;

    virtual VerbCounters counters(NodeId) = 0;
    virtual void reset_counters() = 0;

    virtual const NetConfig& net() const = 0;

    /// The executor this transport schedules on. Protocol code uses it for
    /// clocks, task spawning, and monitors so it stays backend-agnostic.
    virtual Exec& exec() = 0;
};

}  // namespace hkv
