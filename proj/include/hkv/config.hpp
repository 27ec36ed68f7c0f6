#pragma once

#include <string>
#include <vector>

#include "hkv/cluster_view.hpp"
#include "hkv/transport.hpp"
#include "hkv/types.hpp"

namespace hkv {

/// Everything a run needs, parsed from one INI-style file. Defaults
/// reproduce the desk-scale reference deployment: one control node, one
/// three-member index group, one data server.
struct Config {
    NetConfig net;

    struct Nodes {
        uint32_t index = 3;
        uint32_t data = 1;
        uint64_t data_region_mb = 256;  // per data server
    } nodes;

    struct Groups {
        uint32_t count = 1;
        uint32_t replicas = 3;
        IndexMode mode = IndexMode::Hybrid;
        uint64_t provisioned_keys = 1u << 20;
    } groups;

    struct Log {
        uint32_t partitions = 4;
        uint32_t batch_max = 64;
        uint64_t linger_us = 50;
        uint64_t ring_capacity = 1u << 20;
    } log;

    struct Bench {
        double zipf_theta = 0.9;
        uint32_t scan_count = 100;
        uint32_t scan_fetch_width = 2;
        uint32_t value_len = 16;
    } bench;

    uint64_t seed = 1;
    std::string backend = "sim";  // sim | socket
};

/// Parse the INI text. Unknown sections or keys are errors (typos should
/// not silently fall back to defaults); messages carry `section.key` paths.
Result<Config> parse_config(const std::string& text);

/// Read the file, then apply the only two environment overrides the
/// artifact honors: SEED and BACKEND.
Result<Config> load_config(const std::string& path);

/// Node-id plan and group placement derived from a Config. Node 0 is the
/// control node; index servers follow, then data servers.
struct Topology {
    Config cfg;
    std::vector<NodeId> index_nodes;
    std::vector<NodeId> data_nodes;

    struct GroupSpec {
        GroupId id = 0;
        uint16_t slice_lo = 0;  // group-selector range, inclusive
        uint16_t slice_hi = 0;
        IndexMode mode = IndexMode::Hybrid;
        std::vector<NodeId> members;  // members[0] is the initial primary
    };
    std::vector<GroupSpec> groups;
};

Result<Topology> plan_topology(const Config& cfg);

/// Re-check the structural invariants on an already-built Topology:
/// referential integrity and that the group slices exactly partition the
/// selector space.
Result<void> validate_topology(const Topology& topo);

}  // namespace hkv
