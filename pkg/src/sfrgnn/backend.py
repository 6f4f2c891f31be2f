"""Hot-kernel backend selection and instrumentation.

The one edge-dependent kernel in the whole pipeline is the CSR sparse-dense
matmul used for graph propagation. Two interchangeable implementations exist:

  * numba  -- @njit compiled serial loops (default when numba imports)
  * numpy  -- pure-numpy fallback built on unbuffered scatter-adds

Selection is via the `SFR_BACKEND` environment variable ("numba" | "numpy"),
read once at import. Both backends use a fixed accumulation order per output
row, so each is bitwise deterministic run to run; they are not required to
agree bitwise with each other (last-ulp rounding may differ).

A module-level call counter supports the propagation-count instrumentation
used by the trainer and the acceptance suite. `benchmarks/spmm_backend_bench.py`
compares the two backends head to head.
"""

from __future__ import annotations

import os
import threading

import numpy as np

from .errors import ValidationError

_VALID_BACKENDS = ("numba", "numpy")


def spmm_numpy_kernel(row_offsets, col_indices, values, h, out):
    """Pure-numpy CSR @ dense. np.add.at is unbuffered, so contributions land
    in index order and the per-row accumulation order is reproducible."""
    if col_indices.shape[0] == 0:
        return
    rows = np.repeat(np.arange(row_offsets.shape[0] - 1), np.diff(row_offsets))
    np.add.at(out, rows, values[:, None] * h[col_indices])


try:
    from numba import njit

    @njit(cache=True)
    def spmm_numba_kernel(row_offsets, col_indices, values, h, out):
        n = row_offsets.shape[0] - 1
        ncols = h.shape[1]
        for i in range(n):
            for k in range(row_offsets[i], row_offsets[i + 1]):
                j = col_indices[k]
                v = values[k]
                for c in range(ncols):
                    out[i, c] += v * h[j, c]

    HAS_NUMBA = True
except ImportError:
    spmm_numba_kernel = None
    HAS_NUMBA = False


def _resolve_backend() -> str:
    requested = os.environ.get("SFR_BACKEND", "").strip().lower()
    if requested and requested not in _VALID_BACKENDS:
        raise ValidationError(
            f"SFR_BACKEND must be one of {_VALID_BACKENDS}, got {requested!r}"
        )
    if requested == "numpy":
        return "numpy"
    if requested == "numba" and not HAS_NUMBA:
        raise ValidationError("SFR_BACKEND=numba but numba is not installed")
    return "numba" if HAS_NUMBA else "numpy"


BACKEND = _resolve_backend()
_spmm_kernel = spmm_numba_kernel if BACKEND == "numba" else spmm_numpy_kernel

_counter = threading.local()  # per-thread so concurrent trials count independently


def spmm_calls() -> int:
    """This thread's CSR spmm kernel invocations since the last reset."""
    return getattr(_counter, "calls", 0)


def reset_spmm_calls() -> None:
    _counter.calls = 0


def spmm_raw(row_offsets, col_indices, values, h: np.ndarray) -> np.ndarray:
    """out[i] = sum_k values[k] * h[col_indices[k]] over row i's slice."""
    _counter.calls = getattr(_counter, "calls", 0) + 1
    out = np.zeros((row_offsets.shape[0] - 1, h.shape[1]), dtype=h.dtype)
    vals = values if values.dtype == h.dtype else values.astype(h.dtype)
    _spmm_kernel(row_offsets, col_indices, vals, np.ascontiguousarray(h), out)
    return out


def warmup() -> None:
    """Trigger JIT compilation outside any timed region."""
    ro = np.array([0, 1, 2], dtype=np.int64)
    ci = np.array([1, 0], dtype=np.int64)
    for dt in (np.float32, np.float64):
        vals = np.ones(2, dtype=dt)
        _spmm_kernel(ro, ci, vals, np.zeros((2, 1), dtype=dt), np.zeros((2, 1), dtype=dt))
