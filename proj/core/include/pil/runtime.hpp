#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pil {

/// Training allocates and frees many mid-sized Eigen temporaries per step.
/// glibc's default mmap/trim thresholds turn those into a syscall pair each,
/// so raise them once at process start. No effect on results.
inline void configure_allocator()
{
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace pil
