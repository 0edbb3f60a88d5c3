#pragma once

#include <cstdio>
#include <string>

namespace ripple::util {

// 17 significant digits: lossless text round-trip for 64-bit floats.
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace ripple::util
