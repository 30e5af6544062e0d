// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cocktailser {

/// Keeps freed activation buffers in the heap instead of returning them to
/// the kernel after every op. Training allocates and frees many
/// 100 KB-1 MB buffers per step; with glibc defaults each one is a fresh
/// mmap plus page faults. Call once at process start.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace cocktailser
