"""Process-level allocator tuning for the training hot loops.

The inner loops allocate multi-megabyte float64 temporaries every step;
with glibc defaults those exceed the mmap threshold, so each one costs an
mmap/munmap round trip and a page-fault storm.  Raising the thresholds
keeps the blocks on the heap for reuse (observed ~2x end-to-end speedup).
No-op on platforms without glibc's mallopt.
"""

from __future__ import annotations

import ctypes

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_LIMIT = 64 * 1024 * 1024


def tune_allocator() -> bool:
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, _LIMIT)
        libc.mallopt(_M_TRIM_THRESHOLD, _LIMIT)
        return True
    except (OSError, AttributeError):
        return False
