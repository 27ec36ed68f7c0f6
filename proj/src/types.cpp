#include "hkv/types.hpp"

namespace hkv {

const char* errc_name(Errc e) {
    switch (e) {
        case Errc::Ok: return "ok";
        case Errc::Timeout: return "timeout";
        case Errc::UnknownNode: return "unknown_node";
        case Errc::UnknownRegion: return "unknown_region";
        case Errc::UnknownEndpoint: return "unknown_endpoint";
        case Errc::Bounds: return "bounds";
        case Errc::Misaligned: return "misaligned";
        case Errc::RegionFull: return "region_full";
        case Errc::Oversize: return "oversize";
        case Errc::BadArgument: return "bad_argument";
        case Errc::WrongRole: return "wrong_role";
        case Errc::StaleEpoch: return "stale_epoch";
        case Errc::Redirect: return "redirect";
        case Errc::Corrupt: return "corrupt";
        case Errc::Unavailable: return "unavailable";
        case Errc::Rejected: return "rejected";
    }
    return "unknown";
}

}  // namespace hkv
