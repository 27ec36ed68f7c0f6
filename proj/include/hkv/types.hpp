#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hkv {

using NodeId = uint16_t;
using RegionId = uint32_t;
using GroupId = uint16_t;
using Seq = uint64_t;

// Node 0 is reserved for the control plane.
inline constexpr NodeId kControlNode = 0;

// Virtual (or steady-clock) nanoseconds.
using Nanos = uint64_t;
constexpr Nanos us(uint64_t v) { return v * 1000; }
constexpr Nanos ms(uint64_t v) { return v * 1000 * 1000; }

using Bytes = std::vector<uint8_t>;

inline Bytes to_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}
inline std::string to_string(const Bytes& b) {
    return std::string(b.begin(), b.end());
}

enum class OpKind : uint8_t {
    Put = 1,
    Update = 2,
    Delete = 3,
};

/// 6-byte global address of a stored item: low byte selects the data
/// server (index into the group's data-server list), upper 5 bytes are
/// the byte offset in that server's region. Value 0 is reserved/invalid;
/// data servers never hand out offset 0.
struct ValueAddr {
    uint64_t raw = 0;  // low 48 bits significant

    ValueAddr() = default;
    ValueAddr(uint8_t server_tag, uint64_t offset)
        : raw(uint64_t(server_tag) | (offset << 8)) {}

    static ValueAddr from_u48(uint64_t v) {
        ValueAddr a;
        a.raw = v & 0xFFFFFFFFFFFFULL;
        return a;
    }
    uint8_t server_tag() const { return uint8_t(raw & 0xFF); }
    uint64_t offset() const { return raw >> 8; }
    bool valid() const { return raw != 0; }
    bool operator==(const ValueAddr&) const = default;
};

inline constexpr uint64_t kValueAddrMax = (1ULL << 48);
inline constexpr size_t kMaxKeyLen = 64;
inline constexpr size_t kMaxItemLen = 255;

enum class Errc : uint8_t {
    Ok = 0,
    Timeout,
    UnknownNode,
    UnknownRegion,
    UnknownEndpoint,
    Bounds,
    Misaligned,
    RegionFull,
    Oversize,
    BadArgument,
    WrongRole,
    StaleEpoch,
    Redirect,
    Corrupt,
    Unavailable,
    Rejected,
};

const char* errc_name(Errc e);

struct Err {
    Errc code = Errc::Ok;
    std::string detail;
};

/// Minimal expected<T>: systems code here reports recoverable failures
/// (timeouts, bounds, role gates) as values, exceptions are reserved for
/// configuration/fatal errors.
template <typename T>
class Result {
public:
    Result(T v) : ok_(true), value_(std::move(v)) {}
    Result(Err e) : ok_(false), err_(std::move(e)) {}
    Result(Errc c, std::string detail = {}) : ok_(false), err_{c, std::move(detail)} {}

    bool ok() const { return ok_; }
    explicit operator bool() const { return ok_; }
    T& value() & { return value_; }
    const T& value() const& { return value_; }
    T&& take() { return std::move(value_); }
    const Err& error() const { return err_; }
    Errc code() const { return ok_ ? Errc::Ok : err_.code; }

private:
    bool ok_;
    T value_{};
    Err err_{};
};

template <>
class Result<void> {
public:
    Result() : ok_(true) {}
    Result(Err e) : ok_(false), err_(std::move(e)) {}
    Result(Errc c, std::string detail = {}) : ok_(false), err_{c, std::move(detail)} {}

    bool ok() const { return ok_; }
    explicit operator bool() const { return ok_; }
    const Err& error() const { return err_; }
    Errc code() const { return ok_ ? Errc::Ok : err_.code; }

private:
    bool ok_;
    Err err_{};
};

template <typename T>
Result<T> fail(Errc c, std::string detail = {}) {
    return Result<T>(Err{c, std::move(detail)});
}

}  // namespace hkv
