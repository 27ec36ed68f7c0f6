#pragma once

#include <cassert>
#include <cstdint>
#include <string_view>

#include "hkv/types.hpp"

namespace hkv {

/// FNV-1a, 64-bit. All index placement decisions below derive from a
/// single digest of the key so that every node (and every client doing
/// one-sided lookups) computes identical placement.
inline constexpr uint64_t kFnvBasis = 14695981039346656037ULL;
inline constexpr uint64_t kFnvPrime = 1099511628211ULL;

inline uint64_t fnv1a64(std::string_view key) {
    uint64_t h = kFnvBasis;
    for (unsigned char c : key) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

/// Field carving of the digest:
///   bits 56..63  slot signature byte
///   bits 40..55  group selector (16-bit space carved into slices)
///   bits  8..39  bucket selector
///   bits  0..7   log-partition selector
/// Disjoint fields keep the signature filter independent of bucket
/// placement: two keys in the same bucket still disagree on signature
/// with probability 255/256.
struct KeyHash {
    uint64_t digest;

    explicit KeyHash(std::string_view key) : digest(fnv1a64(key)) {
        assert(!key.empty() && key.size() <= kMaxKeyLen);
    }
    static KeyHash from_digest(uint64_t d) {
        KeyHash h;
        h.digest = d;
        return h;
    }

    uint8_t signature() const { return uint8_t(digest >> 56); }
    uint16_t group_selector() const { return uint16_t((digest >> 40) & 0xFFFF); }
    uint32_t bucket_index(uint32_t bucket_count) const {
        return uint32_t(((digest >> 8) & 0xFFFFFFFFULL) % bucket_count);
    }
    uint32_t log_partition(uint32_t partition_count) const {
        return uint32_t((digest & 0xFF) % partition_count);
    }

private:
    KeyHash() = default;
};

}  // namespace hkv
