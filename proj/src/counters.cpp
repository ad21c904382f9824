#include "bigsel/counters.hpp"

#include <sys/resource.h>

namespace bigsel::counters {

std::atomic<std::uint64_t>& cumulative_alloc_bytes() {
    static std::atomic<std::uint64_t> v{0};
    return v;
}

std::atomic<std::uint64_t>& disk_bytes_written() {
    static std::atomic<std::uint64_t> v{0};
    return v;
}

Snapshot snapshot() {
    return Snapshot{cumulative_alloc_bytes().load(std::memory_order_relaxed),
                    disk_bytes_written().load(std::memory_order_relaxed)};
}

Snapshot delta_since(const Snapshot& since) {
    const Snapshot now = snapshot();
    return Snapshot{now.alloc_bytes - since.alloc_bytes,
                    now.disk_bytes - since.disk_bytes};
}

std::uint64_t peak_rss_bytes() {
    struct rusage ru {};
    if (getrusage(RUSAGE_SELF, &ru) != 0) return 0;
    // ru_maxrss is in kilobytes on Linux.
    return static_cast<std::uint64_t>(ru.ru_maxrss) * 1024;
}

}  // namespace bigsel::counters
