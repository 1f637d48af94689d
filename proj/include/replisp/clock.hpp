#pragma once

#include <chrono>
#include <cstdint>
#include <functional>

namespace replisp {

// Milliseconds since an arbitrary epoch. Injected everywhere a timestamp or
// latency is recorded so that --fixed-clock runs are byte-reproducible.
using Clock = std::function<std::int64_t()>;

inline Clock system_clock() {
    return [] {
        auto now = std::chrono::steady_clock::now().time_since_epoch();
        return std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    };
}

inline Clock fixed_clock(std::int64_t value = 0) {
    return [value] { return value; };
}

} // namespace replisp
