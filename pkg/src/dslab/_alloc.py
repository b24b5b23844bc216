"""Allocator tuning for sandboxed kernels where mmap-backed temporaries are
expensive: large spectral meshes churn through malloc every step, and glibc's
default mmap threshold turns each one into a page-fault round trip."""

from __future__ import annotations

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator() -> bool:
    """Raise the malloc mmap threshold so large array temporaries are served
    from the heap. Safe no-op where glibc is unavailable."""
    global _done
    if _done:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(_M_TRIM_THRESHOLD, -1)
        _done = True
    except (OSError, AttributeError):
        return False
    return True
