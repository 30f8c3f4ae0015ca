// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyncast {

// Builds a message from streamable parts.
template <class... Parts>
std::string msg(const Parts&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    return os.str();
}

template <class... Parts>
void require(bool condition, const Parts&... parts) {
    if (!condition) {
        throw std::invalid_argument(msg(parts...));
    }
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

// Uniform index in [lo, hi], independent of distribution implementations.
template <class Rng>
std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

}  // namespace dyncast
