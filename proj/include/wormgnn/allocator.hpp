#pragma once

namespace wormgnn {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS. Training allocates and frees the same large blocks every step; with
/// glibc's default thresholds each of those becomes an mmap/munmap pair.
/// No-op on other allocators. Call once, before any worker threads start.
void tune_allocator();

}  // namespace wormgnn
