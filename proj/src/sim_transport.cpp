#include "hkv/sim_transport.hpp"

#include "hkv/codec.hpp"

#include <cassert>
#include <stdexcept>

namespace hkv {

SimTransport::SimTransport(SimExec& ex, NetConfig cfg) : ex_(ex), cfg_(cfg) {}

SimTransport::~SimTransport() {
    // RPC worker fibers hold references into nodes_; unwind every fiber
    // while that state is still alive. One transport per executor.
    ex_.drain();
}

SimTransport::Node& SimTransport::node_of(NodeId id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw std::logic_error("unknown node id");
    return it->second;
}

bool SimTransport::blocked(NodeId a, NodeId b) const {
    return cuts_.count({std::min(a, b), std::max(a, b)}) != 0;
}

void SimTransport::add_node(NodeId node) {
    auto [it, fresh] = nodes_.try_emplace(node, ex_);
    assert(fresh);
    it->second.is_server = true;
    for (uint32_t i = 0; i < cfg_.rpc_threads_per_node; i++) {
        ex_.spawn("rpc/" + std::to_string(node) + "/" + std::to_string(i),
                  [this, node] { rpc_worker(node); });
    }
}

NodeId SimTransport::add_client() {
    NodeId id = next_client_++;
    nodes_.try_emplace(id, ex_);
    return id;
}

Result<RegionId> SimTransport::register_region(NodeId owner, size_t bytes) {
    Node& n = node_of(owner);
    RegionId r = n.next_region++;
    n.regions.emplace(r, Bytes(bytes, 0));
    return r;
}

uint8_t* SimTransport::region_base(NodeId owner, RegionId r) {
    Node& n = node_of(owner);
    auto it = n.regions.find(r);
    return it == n.regions.end() ? nullptr : it->second.data();
}

size_t SimTransport::region_size(NodeId owner, RegionId r) {
    Node& n = node_of(owner);
    auto it = n.regions.find(r);
    return it == n.regions.end() ? 0 : it->second.size();
}

void SimTransport::register_rpc(NodeId node, uint16_t endpoint, RpcHandler h) {
    node_of(node).handlers[endpoint] = std::move(h);
}

SimTransport::MemProbe SimTransport::probe(NodeId caller, NodeId target,
                                           RegionId r, uint64_t off, size_t len) {
    MemProbe p;
    if (node_of(caller).crashed) {
        p.err = Errc::Unavailable;  // dead callers issue nothing
        return p;
    }
    if (blocked(caller, target)) {
        ex_.sleep_for(cfg_.one_sided_timeout());
        p.err = Errc::Timeout;
        return p;
    }
    ex_.sleep_for(cfg_.one_sided_rtt / 2);
    // State checked at the instant memory would be touched.
    Node& t = node_of(target);
    if (t.crashed || blocked(caller, target)) {
        ex_.sleep_for(cfg_.one_sided_timeout() - cfg_.one_sided_rtt / 2);
        p.err = Errc::Timeout;
        return p;
    }
    auto it = t.regions.find(r);
    if (it == t.regions.end()) {
        ex_.sleep_for(cfg_.one_sided_rtt / 2);
        p.err = Errc::UnknownRegion;
        return p;
    }
    if (off + len > it->second.size() || off + len < off) {
        ex_.sleep_for(cfg_.one_sided_rtt / 2);
        p.err = Errc::Bounds;
        return p;
    }
    p.node = &t;
    p.base = it->second.data();
    p.size = it->second.size();
    return p;
}

Result<Bytes> SimTransport::read(NodeId caller, NodeId target, RegionId r,
                                 uint64_t off, size_t len) {
    MemProbe p = probe(caller, target, r, off, len);
    if (p.err != Errc::Ok) return fail<Bytes>(p.err, "one-sided read");
    Bytes out(p.base + off, p.base + off + len);
    p.node->ctr.onesided_read++;
    p.node->ctr.bytes_read += len;
    ex_.sleep_for(cfg_.one_sided_rtt / 2);
    return out;
}

Result<void> SimTransport::write(NodeId caller, NodeId target, RegionId r,
                                 uint64_t off, std::span<const uint8_t> data) {
    MemProbe p = probe(caller, target, r, off, data.size());
    if (p.err != Errc::Ok) return Result<void>(p.err, "one-sided write");
    std::copy(data.begin(), data.end(), p.base + off);
    p.node->ctr.onesided_write++;
    p.node->ctr.bytes_written += data.size();
    ex_.sleep_for(cfg_.one_sided_rtt / 2);
    return Result<void>();
}

Result<uint64_t> SimTransport::cas64(NodeId caller, NodeId target, RegionId r,
                                     uint64_t off, uint64_t expected,
                                     uint64_t desired) {
    if (off % 8 != 0) return fail<uint64_t>(Errc::Misaligned, "cas64 alignment");
    MemProbe p = probe(caller, target, r, off, 8);
    if (p.err != Errc::Ok) return fail<uint64_t>(p.err, "one-sided cas");
    uint64_t old = get_u64(p.base + off);
    if (old == expected) put_u64(p.base + off, desired);
    p.node->ctr.onesided_cas++;
    ex_.sleep_for(cfg_.one_sided_rtt / 2);
    return old;
}

Future<Result<Bytes>> SimTransport::call_async(NodeId caller, NodeId target,
                                               uint16_t endpoint, Bytes req) {
    Promise<Result<Bytes>> prom(ex_);
    Node& src = node_of(caller);
    src.ctr.rpc_sent++;
    if (src.crashed) return prom.future();  // never completes
    if (!nodes_.count(target)) {
        prom.set(fail<Bytes>(Errc::UnknownNode, "rpc target"));
        return prom.future();
    }
    if (blocked(caller, target)) return prom.future();
    ex_.post_at(ex_.now() + cfg_.rpc_rtt / 2,
                [this, caller, target, endpoint, req = std::move(req), prom]() mutable {
                    Node& t = node_of(target);
                    if (t.crashed || blocked(caller, target)) return;  // dropped
                    t.queue->push(PendingRpc{caller, endpoint, std::move(req),
                                             ex_.now(), t.crash_epoch, prom});
                });
    return prom.future();
}

void SimTransport::rpc_worker(NodeId node) {
    Node& n = node_of(node);
    while (auto r = n.queue->pop()) {
        if (n.crashed || r->epoch != n.crash_epoch) continue;  // stale request
        RpcContext ctx;
        ctx.caller = r->caller;
        ctx.queue_wait = ex_.now() - r->arrival;
        n.ctr.rpc_handled++;
        ex_.sleep_for(cfg_.per_request_cpu);
        if (n.crashed || r->epoch != n.crash_epoch) continue;  // died mid-request
        auto h = n.handlers.find(r->endpoint);
        if (h == n.handlers.end()) {
            // No handler: in the field this would be a NAK; model as a
            // dropped request so callers see a timeout.
            continue;
        }
        NodeId caller = r->caller;
        uint64_t epoch = r->epoch;
        Promise<Result<Bytes>> prom = r->prom;
        ReplyFn reply = [this, node, caller, epoch, prom](Bytes resp) mutable {
            Node& s = node_of(node);
            if (s.crashed || s.crash_epoch != epoch) return;  // died pre-reply
            if (blocked(node, caller)) return;
            ex_.post_at(ex_.now() + cfg_.rpc_rtt / 2,
                        [prom, resp = std::move(resp)]() mutable {
                            prom.set(Result<Bytes>(std::move(resp)));
                        });
        };
        h->second(std::move(r->req), ctx, std::move(reply));
    }
}

void SimTransport::crash(NodeId id) {
    Node& n = node_of(id);
    if (n.crashed) return;
    n.crashed = true;
    n.crash_epoch++;
    while (n.queue->try_pop()) {
    }
    // The node's memory is unreachable from now on, but in-flight server
    // tasks of the crashed node may still hold raw pointers into these
    // buffers (they notice the crash at their next check point). Park the
    // buffers instead of freeing so such ghost accesses stay harmless.
    for (auto& [rid, buf] : n.regions) graveyard_.push_back(std::move(buf));
    n.regions.clear();
}

void SimTransport::revive(NodeId id) {
    Node& n = node_of(id);
    n.crashed = false;  // fresh process: regions/handlers re-registered by recovery
    n.handlers.clear();
}

bool SimTransport::is_crashed(NodeId id) const {
    auto it = nodes_.find(id);
    return it != nodes_.end() && it->second.crashed;
}

void SimTransport::partition(NodeId a, NodeId b) {
    cuts_.insert({std::min(a, b), std::max(a, b)});
}

void SimTransport::heal(NodeId a, NodeId b) {
    cuts_.erase({std::min(a, b), std::max(a, b)});
}

void SimTransport::heal_all() { cuts_.clear(); }

VerbCounters SimTransport::counters(NodeId id) { return node_of(id).ctr; }

void SimTransport::reset_counters() {
    for (auto& [id, n] : nodes_) n.ctr = VerbCounters{};
}

}  // namespace hkv
