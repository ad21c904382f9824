#ifndef BIGSEL_COUNTERS_HPP
#define BIGSEL_COUNTERS_HPP

// Process-wide instrumentation: cumulative heap-buffer allocations made by
// the pipeline's matrix/vector code, and bytes written to disk through the
// matrix store and checkpoint writers. The benchmark runner snapshots these
// around each run.

#include <atomic>
#include <cstdint>

namespace bigsel::counters {

std::atomic<std::uint64_t>& cumulative_alloc_bytes();
std::atomic<std::uint64_t>& disk_bytes_written();

inline void count_alloc(std::uint64_t bytes) {
    cumulative_alloc_bytes().fetch_add(bytes, std::memory_order_relaxed);
}
inline void count_disk(std::uint64_t bytes) {
    disk_bytes_written().fetch_add(bytes, std::memory_order_relaxed);
}

struct Snapshot {
    std::uint64_t alloc_bytes;
    std::uint64_t disk_bytes;
};

Snapshot snapshot();
// Counter deltas since `since`.
Snapshot delta_since(const Snapshot& since);

// Peak resident set size of this process in bytes (0 if unavailable).
std::uint64_t peak_rss_bytes();

}  // namespace bigsel::counters

#endif
