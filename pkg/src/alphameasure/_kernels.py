"""Sequential relaxation kernels.

All kernels walk interior rows in a fixed order (row index ascending,
optionally restricted to one parity color), accumulate stencil sums in fixed
column order, and never parallelize. Determinism across runs and across
thread settings is part of the contract; the per-element operation sequence
matches the vectorized residual path in operators.apply, so both report
bit-identical residuals.

Array conventions: u is the full node array, gi maps interior row -> global
node, off holds linear neighbor offsets, W is (rows, n_off) with rows == 1
meaning one shared weight row, center is (rows,).
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = [
    "sweep_linear",
    "sweep_projected",
    "residual_free_max",
    "residual_split",
    "warm_up",
]


@njit(cache=True)
def sweep_linear(u, gi, off, W, center, free, parity, color, omega):
    """One SOR pass over free rows (color < 0 means all parities).

    Returns the largest absolute update."""
    uniform = W.shape[0] == 1
    noff = off.shape[0]
    mx = 0.0
    for r in range(gi.shape[0]):
        if not free[r]:
            continue
        if color >= 0 and parity[r] != color:
            continue
        g = gi[r]
        row = 0 if uniform else r
        s = 0.0
        for k in range(noff):
            s += W[row, k] * u[g + off[k]]
        repl = -s / center[row]
        new = u[g] + omega * (repl - u[g])
        ch = abs(new - u[g])
        if ch > mx:
            mx = ch
        u[g] = new
    return mx


@njit(cache=True)
def sweep_projected(u, phi, gi, off, W, center, parity, color, omega):
    """One projected SOR pass keeping u <= phi exactly (every write passes
    through min). Requires omega <= 1 so iterates stay above the solution.

    Returns the largest absolute update."""
    uniform = W.shape[0] == 1
    noff = off.shape[0]
    mx = 0.0
    for r in range(gi.shape[0]):
        if color >= 0 and parity[r] != color:
            continue
        g = gi[r]
        row = 0 if uniform else r
        s = 0.0
        for k in range(noff):
            s += W[row, k] * u[g + off[k]]
        repl = -s / center[row]
        cand = u[g] + omega * (repl - u[g])
        new = min(phi[g], cand)
        ch = abs(new - u[g])
        if ch > mx:
            mx = ch
        u[g] = new
    return mx


@njit(cache=True)
def residual_free_max(u, gi, off, W, center, free):
    """Largest |L u| over free rows."""
    uniform = W.shape[0] == 1
    noff = off.shape[0]
    mx = 0.0
    for r in range(gi.shape[0]):
        if not free[r]:
            continue
        g = gi[r]
        row = 0 if uniform else r
        s = center[row] * u[g]
        for k in range(noff):
            s += W[row, k] * u[g + off[k]]
        a = abs(s)
        if a > mx:
            mx = a
    return mx


@njit(cache=True)
def residual_split(u, gi, off, W, center, contact):
    """(min signed residual over all rows, max |residual| over rows not in
    contact). The obstacle solve stops when the first is >= -tol and the
    second is <= tol."""
    uniform = W.shape[0] == 1
    noff = off.shape[0]
    mn = np.inf
    mx = 0.0
    for r in range(gi.shape[0]):
        g = gi[r]
        row = 0 if uniform else r
        s = center[row] * u[g]
        for k in range(noff):
            s += W[row, k] * u[g + off[k]]
        if s < mn:
            mn = s
        if not contact[r]:
            a = abs(s)
            if a > mx:
                mx = a
    return mn, mx


def warm_up() -> None:
    """Trigger JIT compilation on toy inputs so timed paths never pay it."""
    u = np.zeros(9)
    phi = np.zeros(9)
    gi = np.array([4], dtype=np.int64)
    off = np.array([-1, 1, -3, 3], dtype=np.int64)
    W = np.ones((1, 4))
    center = np.array([-4.0])
    free = np.array([True])
    parity = np.zeros(1, dtype=np.uint8)
    contact = np.array([False])
    sweep_linear(u, gi, off, W, center, free, parity, -1, 1.0)
    sweep_projected(u, phi, gi, off, W, center, parity, -1, 1.0)
    residual_free_max(u, gi, off, W, center, free)
    residual_split(u, gi, off, W, center, contact)
