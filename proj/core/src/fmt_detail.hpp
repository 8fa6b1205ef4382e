#pragma once

#include <cstdio>
#include <string>

namespace moerlab::detail {

// %.17g: enough digits that a round trip through text reproduces the double
// exactly, which keeps emitted files byte-stable across runs.
inline std::string g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace moerlab::detail
