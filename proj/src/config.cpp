#include "hkv/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace hkv {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Parser {
    std::string err;

    bool fail_at(const std::string& path, const std::string& msg) {
        if (err.empty()) err = path + ": " + msg;
        return false;
    }

    bool to_u64(const std::string& path, const std::string& v, uint64_t& out) {
        try {
            size_t pos = 0;
            unsigned long long x = std::stoull(v, &pos);
            if (pos != v.size()) return fail_at(path, "not an integer: '" + v + "'");
            out = x;
            return true;
        } catch (...) {
            return fail_at(path, "not an integer: '" + v + "'");
        }
    }
    bool to_u32(const std::string& path, const std::string& v, uint32_t& out) {
        uint64_t x;
        if (!to_u64(path, v, x)) return false;
        if (x > UINT32_MAX) return fail_at(path, "out of range");
        out = uint32_t(x);
        return true;
    }
    bool to_f64(const std::string& path, const std::string& v, double& out) {
        try {
            size_t pos = 0;
            out = std::stod(v, &pos);
            if (pos != v.size()) return fail_at(path, "not a number: '" + v + "'");
            return true;
        } catch (...) {
            return fail_at(path, "not a number: '" + v + "'");
        }
    }
};

bool parse_mode(const std::string& v, IndexMode& out) {
    if (v == "hybrid") out = IndexMode::Hybrid;
    else if (v == "all-hash") out = IndexMode::AllHash;
    else if (v == "all-skiplist") out = IndexMode::AllSkiplist;
    else return false;
    return true;
}

}  // namespace

Result<Config> parse_config(const std::string& text) {
    Config c;
    Parser p;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                return fail<Config>(Errc::BadArgument,
                                    "line " + std::to_string(lineno) + ": unterminated section");
            section = trim(s.substr(1, s.size() - 2));
            if (section != "net" && section != "nodes" && section != "groups" &&
                section != "log" && section != "bench")
                return fail<Config>(Errc::BadArgument, "unknown section [" + section + "]");
            continue;
        }
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            return fail<Config>(Errc::BadArgument,
                                "line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (section.empty())
            return fail<Config>(Errc::BadArgument, key + ": key outside any section");
        std::string path = section + "." + key;
        bool ok = true, known = true;
        uint64_t us_v = 0;
        if (section == "net") {
            if (key == "one_sided_rtt_us") {
                ok = p.to_u64(path, val, us_v);
                c.net.one_sided_rtt = us(us_v);
            } else if (key == "rpc_rtt_us") {
                ok = p.to_u64(path, val, us_v);
                c.net.rpc_rtt = us(us_v);
            } else if (key == "per_request_cpu_us") {
                ok = p.to_u64(path, val, us_v);
                c.net.per_request_cpu = us(us_v);
            } else if (key == "rpc_threads") {
                ok = p.to_u32(path, val, c.net.rpc_threads_per_node);
            } else {
                known = false;
            }
        } else if (section == "nodes") {
            if (key == "index") ok = p.to_u32(path, val, c.nodes.index);
            else if (key == "data") ok = p.to_u32(path, val, c.nodes.data);
            else if (key == "data_region_mb") ok = p.to_u64(path, val, c.nodes.data_region_mb);
            else known = false;
        } else if (section == "groups") {
            if (key == "count") ok = p.to_u32(path, val, c.groups.count);
            else if (key == "replicas") ok = p.to_u32(path, val, c.groups.replicas);
            else if (key == "provisioned_keys") ok = p.to_u64(path, val, c.groups.provisioned_keys);
            else if (key == "mode") {
                if (!parse_mode(val, c.groups.mode))
                    return fail<Config>(Errc::BadArgument,
                                        path + ": expected hybrid|all-hash|all-skiplist");
            } else {
                known = false;
            }
        } else if (section == "log") {
            if (key == "partitions") ok = p.to_u32(path, val, c.log.partitions);
            else if (key == "batch_max") ok = p.to_u32(path, val, c.log.batch_max);
            else if (key == "linger_us") ok = p.to_u64(path, val, c.log.linger_us);
            else if (key == "ring_capacity") ok = p.to_u64(path, val, c.log.ring_capacity);
            else known = false;
        } else if (section == "bench") {
            if (key == "zipf_theta") ok = p.to_f64(path, val, c.bench.zipf_theta);
            else if (key == "scan_count") ok = p.to_u32(path, val, c.bench.scan_count);
            else if (key == "scan_fetch_width") ok = p.to_u32(path, val, c.bench.scan_fetch_width);
            else if (key == "value_len") ok = p.to_u32(path, val, c.bench.value_len);
            else known = false;
        }
        if (!known)
            return fail<Config>(Errc::BadArgument, path + ": unknown key");
        if (!ok) return fail<Config>(Errc::BadArgument, p.err);
    }

    // range checks, with the same path convention
    auto bad = [](const std::string& m) { return fail<Config>(Errc::BadArgument, m); };
    if (c.net.one_sided_rtt <= 0 || c.net.rpc_rtt <= 0)
        return bad("net.*_rtt_us: must be positive");
    if (c.net.rpc_threads_per_node < 1) return bad("net.rpc_threads: must be >= 1");
    if (c.nodes.index < 1) return bad("nodes.index: need at least one index server");
    if (c.nodes.data < 1 || c.nodes.data > 256)
        return bad("nodes.data: need 1..256 data servers (address tag is one byte)");
    if (c.nodes.data_region_mb < 1) return bad("nodes.data_region_mb: must be >= 1");
    if (c.groups.count < 1) return bad("groups.count: must be >= 1");
    if (c.groups.count > 0x10000) return bad("groups.count: exceeds selector space");
    if (c.groups.replicas < 2)
        return bad("groups.replicas: a group needs a primary and at least one backup");
    if (c.groups.replicas > c.nodes.index)
        return bad("groups.replicas: more replicas than index servers");
    if (c.groups.provisioned_keys < 1) return bad("groups.provisioned_keys: must be >= 1");
    if (c.log.partitions < 1 || c.log.partitions > 256)
        return bad("log.partitions: must be 1..256");
    if (c.log.batch_max < 1) return bad("log.batch_max: must be >= 1");
    if (c.log.ring_capacity < c.log.batch_max * 4)
        return bad("log.ring_capacity: too small to hold a few batches");
    if (!(c.bench.zipf_theta > 0.0 && c.bench.zipf_theta < 1.0))
        return bad("bench.zipf_theta: must be in (0, 1)");
    if (c.bench.scan_count < 1) return bad("bench.scan_count: must be >= 1");
    if (c.bench.scan_fetch_width < 1) return bad("bench.scan_fetch_width: must be >= 1");
    if (c.bench.value_len < 1 || c.bench.value_len > 180)
        return bad("bench.value_len: must be 1..180 (items encode to one length byte)");
    return c;
}

Result<Config> load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) return fail<Config>(Errc::BadArgument, "cannot open config file " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    auto cfg = parse_config(buf.str());
    if (!cfg) return cfg;
    Config c = cfg.take();
    if (const char* s = std::getenv("SEED")) {
        Parser p;
        if (!p.to_u64("env.SEED", s, c.seed)) return fail<Config>(Errc::BadArgument, p.err);
    }
    if (const char* b = std::getenv("BACKEND")) {
        c.backend = b;
        if (c.backend != "sim" && c.backend != "socket")
            return fail<Config>(Errc::BadArgument, "env.BACKEND: expected sim|socket");
    }
    return c;
}

Result<Topology> plan_topology(const Config& cfg) {
    Topology t;
    t.cfg = cfg;
    NodeId next = kControlNode + 1;
    for (uint32_t i = 0; i < cfg.nodes.index; i++) t.index_nodes.push_back(next++);
    for (uint32_t i = 0; i < cfg.nodes.data; i++) t.data_nodes.push_back(next++);

    const uint64_t space = 0x10000;
    for (uint32_t g = 0; g < cfg.groups.count; g++) {
        Topology::GroupSpec spec;
        spec.id = GroupId(g);
        spec.slice_lo = uint16_t(g * space / cfg.groups.count);
        spec.slice_hi = uint16_t((g + 1) * space / cfg.groups.count - 1);
        spec.mode = cfg.groups.mode;
        // rotate placement so primaries spread across the index servers
        for (uint32_t r = 0; r < cfg.groups.replicas; r++)
            spec.members.push_back(t.index_nodes[(g + r) % t.index_nodes.size()]);
        t.groups.push_back(std::move(spec));
    }
    auto v = validate_topology(t);
    if (!v) return fail<Topology>(v.error().code, v.error().detail);
    return t;
}

Result<void> validate_topology(const Topology& topo) {
    auto bad = [](const std::string& m) { return fail<void>(Errc::BadArgument, m); };
    std::set<NodeId> known;
    known.insert(kControlNode);
    for (NodeId n : topo.index_nodes)
        if (!known.insert(n).second) return bad("index_nodes: duplicate node id");
    for (NodeId n : topo.data_nodes)
        if (!known.insert(n).second) return bad("data_nodes: duplicate node id");

    if (topo.groups.empty()) return bad("groups: empty");
    uint32_t expect_lo = 0;
    for (size_t i = 0; i < topo.groups.size(); i++) {
        const auto& g = topo.groups[i];
        std::string path = "groups[" + std::to_string(i) + "]";
        if (g.members.size() < 2) return bad(path + ".members: missing backup");
        std::set<NodeId> uniq;
        for (NodeId n : g.members) {
            if (std::find(topo.index_nodes.begin(), topo.index_nodes.end(), n) ==
                topo.index_nodes.end())
                return bad(path + ".members: node " + std::to_string(n) +
                           " is not an index server");
            if (!uniq.insert(n).second)
                return bad(path + ".members: node " + std::to_string(n) + " repeated");
        }
        if (g.slice_lo != expect_lo || g.slice_hi < g.slice_lo)
            return bad(path + ".slice: group slices must partition the selector space "
                       "in order without gaps or overlap");
        expect_lo = uint32_t(g.slice_hi) + 1;
    }
    if (expect_lo != 0x10000)
        return bad("groups: slices leave selector space uncovered");
    return {};
}

}  // namespace hkv
