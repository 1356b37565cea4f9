#pragma once

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

namespace pepnet {

// Forward/backward passes allocate and free multi-megabyte tensors at a high
// rate; with the default glibc thresholds those blocks are mmap'd and
// unmapped every time, so each pass pays the page-fault cost again. Keeping
// them on the heap roughly quarters per-call latency. Call once at startup.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

}  // namespace pepnet
