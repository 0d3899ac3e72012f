#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dmqn {

/// Keeps freed tensor buffers in the heap instead of returning them to the OS,
/// so repeated forwards of equal size do not pay fresh page faults each time.
/// A no-op outside glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace dmqn
