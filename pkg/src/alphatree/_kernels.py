"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The split-candidate scan dominates induction time (per leaf, per feature:
walk every boundary between consecutive distinct sorted values and score the
weighted two-child entropy).  Both backends consume identical presummed
inputs and evaluate the same elementwise expression, so they pick the same
candidate; tests and benchmarks/split_bench.py compare them.

Backend selection: env var ALPHATREE_KERNELS=numpy forces the fallback,
ALPHATREE_KERNELS=numba forces the jit path (error if numba is missing),
anything else auto-detects.  set_backend() overrides at runtime.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba present in normal installs
    HAVE_NUMBA = False

__all__ = [
    "HAVE_NUMBA",
    "active_backend",
    "set_backend",
    "numeric_split_scan",
    "numeric_split_scan_numpy",
    "numeric_split_scan_numba",
]


def _backend_from_env() -> str:
    raw = os.environ.get("ALPHATREE_KERNELS", "").strip().lower()
    if raw == "numpy":
        return "numpy"
    if raw == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("ALPHATREE_KERNELS=numba but numba is not importable")
        return "numba"
    return "numba" if HAVE_NUMBA else "numpy"


_BACKEND = _backend_from_env()


def active_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> str:
    """Switch kernel backend; returns the previous one."""
    global _BACKEND
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    prev = _BACKEND
    _BACKEND = name
    return prev


def _scan_loop(values, cumw, cuma, min_mass, min_count):
    """Best boundary of a sorted leaf: returns (left_count, post_entropy).

    values: sorted feature values; cumw/cuma: inclusive prefix sums of row
    weight and of weight * signed alignment (w * (2 eta - 1) * nlogit).
    A boundary before position i puts i rows left.  Children must carry at
    least min_mass weight and min_count rows each.  Returns (-1, inf) when
    no boundary qualifies.
    """
    n = values.shape[0]
    total_w = cumw[n - 1]
    total_a = cuma[n - 1]
    best_i = -1
    best_post = np.inf
    for i in range(1, n):
        if values[i] == values[i - 1]:
            continue
        if i < min_count or (n - i) < min_count:
            continue
        wl = cumw[i - 1]
        wr = total_w - wl
        if wl < min_mass or wr < min_mass:
            continue
        el = cuma[i - 1] / wl
        er = (total_a - cuma[i - 1]) / wr
        if el > 1.0:
            el = 1.0
        elif el < -1.0:
            el = -1.0
        if er > 1.0:
            er = 1.0
        elif er < -1.0:
            er = -1.0
        pl = 0.5 * (1.0 + el)
        pr = 0.5 * (1.0 + er)
        if pl <= 0.0 or pl >= 1.0:
            hl = 0.0
        else:
            hl = -(pl * np.log(pl) + (1.0 - pl) * np.log(1.0 - pl))
        if pr <= 0.0 or pr >= 1.0:
            hr = 0.0
        else:
            hr = -(pr * np.log(pr) + (1.0 - pr) * np.log(1.0 - pr))
        post = wl * hl + wr * hr
        if post < best_post:
            best_post = post
            best_i = i
    return best_i, best_post


if HAVE_NUMBA:
    _scan_jit = njit(cache=False)(_scan_loop)


def numeric_split_scan_numba(values, cumw, cuma, min_mass, min_count):
    if not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    i, post = _scan_jit(values, cumw, cuma, float(min_mass), int(min_count))
    return int(i), float(post)


def numeric_split_scan_numpy(values, cumw, cuma, min_mass, min_count):
    """Vectorized twin of _scan_loop; same candidate set, same arithmetic."""
    n = values.shape[0]
    if n < 2:
        return -1, np.inf
    total_w = cumw[n - 1]
    total_a = cuma[n - 1]
    i = np.arange(1, n)
    wl = cumw[:-1]
    wr = total_w - wl
    valid = values[1:] != values[:-1]
    valid &= (i >= min_count) & ((n - i) >= min_count)
    valid &= (wl >= min_mass) & (wr >= min_mass)
    if not valid.any():
        return -1, np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        el = np.minimum(np.maximum(cuma[:-1] / wl, -1.0), 1.0)
        er = np.minimum(np.maximum((total_a - cuma[:-1]) / wr, -1.0), 1.0)
        pl = 0.5 * (1.0 + el)
        pr = 0.5 * (1.0 + er)
        hl = np.where(
            (pl <= 0.0) | (pl >= 1.0),
            0.0,
            -(pl * np.log(pl) + (1.0 - pl) * np.log(1.0 - pl)),
        )
        hr = np.where(
            (pr <= 0.0) | (pr >= 1.0),
            0.0,
            -(pr * np.log(pr) + (1.0 - pr) * np.log(1.0 - pr)),
        )
    post = wl * hl + wr * hr
    post = np.where(valid, post, np.inf)
    k = int(np.argmin(post))
    if not np.isfinite(post[k]):
        return -1, np.inf
    return k + 1, float(post[k])


def numeric_split_scan(values, cumw, cuma, min_mass, min_count):
    """Dispatch to the active backend."""
    if _BACKEND == "numba":
        return numeric_split_scan_numba(values, cumw, cuma, min_mass, min_count)
    return numeric_split_scan_numpy(values, cumw, cuma, min_mass, min_count)
