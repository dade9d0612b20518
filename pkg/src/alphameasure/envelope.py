"""Relaxation solvers and the discrete obstacle envelope.

Two solve modes share the sweep kernels:

* dirichlet_solve relaxes the stencil equation to zero on free interior
  nodes, holding boundary nodes and an optional hole at prescribed values.
* perron_envelope computes the largest discrete subsolution below an
  obstacle. It runs a short projected-sweep phase (relaxation capped at 1,
  every write projected below the obstacle, so iterates descend toward the
  envelope from above without ever crossing it), then alternates exact
  linear solves pinned on a candidate contact set with pointwise minima.
  Each pinned solve dominates the envelope whenever the candidate set
  contains the true contact set, so the minima only ever tighten from above.
  The candidate set shrinks monotonically; nodes whose residual turns
  negative were pinned wrongly and get released.

The obstacle feasibility certificate is exact by construction: every value
written to the iterate passes through min(obstacle, .), so max(u - phi) over
the interior is a true floating-point 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .grid import ComplexGrid, DomainMask, GridFunction, NodeSet
from .operators import DiscreteOperator, OperatorError, SolverError

__all__ = [
    "SolveOptions",
    "Obstacle",
    "EnvelopeResult",
    "dirichlet_solve",
    "perron_envelope",
    "dense_oracle_solve",
    "upper_regularize",
]

MAX_DENSE_UNKNOWNS = 10_000
CONTACT_REL_TOL = 1e-9
MAX_MERGES = 64
MAX_RESTARTS = 8


@dataclass(frozen=True)
class SolveOptions:
    tolerance: float = 1e-10
    max_sweeps: int = 1_000_000
    relaxation: float = 1.5
    ordering: str = "two_color"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if not 0.0 < self.relaxation < 2.0:
            raise ValueError(f"relaxation must lie in (0, 2), got {self.relaxation}")
        if self.ordering not in ("two_color", "lexicographic"):
            raise ValueError(f"unknown ordering {self.ordering!r}")

    @classmethod
    def tuned_for(cls, grid: ComplexGrid, **overrides) -> "SolveOptions":
        """Relaxation near the model-problem optimum 2 / (1 + sin(pi h / L)),
        capped at 1.95. Worth minutes on fine grids."""
        L = grid.h * (min(grid.extents) - 1)
        omega = 2.0 / (1.0 + math.sin(math.pi * grid.h / L))
        overrides.setdefault("relaxation", min(1.95, omega))
        return cls(**overrides)


@dataclass(frozen=True)
class Obstacle:
    """Upper obstacle for the envelope: strictly negative prescribed values
    on a support node set, zero everywhere else."""

    mask: DomainMask
    phi: GridFunction
    support: NodeSet

    @classmethod
    def from_values(cls, mask: DomainMask, support: NodeSet, values) -> "Obstacle":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != support.indices.shape:
            raise ValueError("one obstacle value per support node is required")
        if values.size and values.max() >= 0:
            raise ValueError(
                f"obstacle values must be strictly negative on the support, max is {values.max():.3e}"
            )
        phi = np.zeros(mask.grid.num_nodes)
        phi[support.indices] = values
        return cls(mask=mask, phi=GridFunction(mask.grid, phi, metadata={"kind": "obstacle"}), support=support)


@dataclass(frozen=True)
class EnvelopeResult:
    solution: GridFunction
    iterations: int
    final_update: float
    contact: np.ndarray
    certificate: float
    restarts: int
    merges: int
    res_tol: float


def _interior_parity(grid: ComplexGrid, gi: np.ndarray) -> np.ndarray:
    rem = gi.astype(np.int64, copy=True)
    tot = np.zeros(gi.size, dtype=np.int64)
    for st in grid.strides:
        q = rem // st
        tot += q
        rem -= q * st
    return (tot & 1).astype(np.uint8)


class _Sweeper:
    """Shared kernel plumbing for one operator."""

    def __init__(self, op: DiscreteOperator, opts: SolveOptions):
        self.op = op
        self.opts = opts
        self.gi = np.ascontiguousarray(op.interior, dtype=np.int64)
        self.off = np.ascontiguousarray(op.offsets_linear, dtype=np.int64)
        self.W = np.ascontiguousarray(op.weights, dtype=np.float64)
        self.center = np.ascontiguousarray(op.center, dtype=np.float64)
        self.parity = _interior_parity(op.grid, self.gi)
        self.colors = (0, 1) if opts.ordering == "two_color" else (-1,)

    def linear_sweep(self, u: np.ndarray, free: np.ndarray, omega: float) -> float:
        mx = 0.0
        for c in self.colors:
            mx = max(mx, _kernels.sweep_linear(u, self.gi, self.off, self.W, self.center, free, self.parity, c, omega))
        return mx

    def projected_sweep(self, u: np.ndarray, phi: np.ndarray, omega: float) -> float:
        mx = 0.0
        for c in self.colors:
            mx = max(mx, _kernels.sweep_projected(u, phi, self.gi, self.off, self.W, self.center, self.parity, c, omega))
        return mx

    def residual_free(self, u: np.ndarray, free: np.ndarray) -> float:
        return float(_kernels.residual_free_max(u, self.gi, self.off, self.W, self.center, free))

    def residual_split(self, u: np.ndarray, contact: np.ndarray) -> tuple[float, float]:
        mn, mx = _kernels.residual_split(u, self.gi, self.off, self.W, self.center, contact)
        return float(mn), float(mx)

    def residual_rows(self, u: np.ndarray) -> np.ndarray:
        idx = self.gi
        r = (self.center[0] if self.op.uniform else self.center) * u[idx]
        for k in range(self.off.size):
            wk = self.W[0, k] if self.op.uniform else self.W[:, k]
            r = r + wk * u[idx + self.off[k]]
        return r

    def center_mag(self) -> float:
        return float(np.max(np.abs(self.center)))


def _check_mask(op: DiscreteOperator, mask: DomainMask) -> None:
    if mask is not op.mask and not np.array_equal(mask.classes, op.mask.classes):
        raise OperatorError("mask does not match the one the operator was assembled on")


def dirichlet_solve(
    op: DiscreteOperator,
    mask: DomainMask,
    dirichlet_data: GridFunction,
    hole: NodeSet | None = None,
    opts: SolveOptions | None = None,
    warm_start: GridFunction | None = None,
) -> GridFunction:
    """Relax L u = 0 on the interior with u = dirichlet_data on the boundary
    ring and on the optional hole. Raises SolverError if the sweep budget
    runs out before the free-node residual meets the tolerance."""
    opts = opts or SolveOptions()
    _check_mask(op, mask)
    if not dirichlet_data.grid.same_layout(op.grid):
        raise OperatorError("dirichlet data lives on a different grid")

    sw = _Sweeper(op, opts)
    u = np.zeros(op.grid.num_nodes)
    bnd = mask.boundary_idx
    u[bnd] = dirichlet_data.values[bnd]
    free = np.ones(sw.gi.size, dtype=bool)
    pinned_vals = [np.abs(u[bnd])] if bnd.size else []
    if hole is not None and hole.indices.size:
        u[hole.indices] = dirichlet_data.values[hole.indices]
        free[op.interior_pos[hole.indices]] = False
        pinned_vals.append(np.abs(u[hole.indices]))
    if warm_start is not None:
        fi = sw.gi[free]
        u[fi] = warm_start.values[fi]

    data_norm = max((float(v.max()) for v in pinned_vals if v.size), default=0.0)
    res_tol = opts.tolerance * max(1.0, data_norm) * sw.center_mag()

    if not free.any():
        return GridFunction(op.grid, u, metadata={"sweeps": 0, "residual": 0.0})

    sweeps = 0
    mc = math.inf
    res = math.inf
    while sweeps < opts.max_sweeps:
        mc = sw.linear_sweep(u, free, opts.relaxation)
        sweeps += 1
        if sweeps % 16 == 0 or mc == 0.0:
            res = sw.residual_free(u, free)
            if res <= res_tol:
                return GridFunction(
                    op.grid,
                    u,
                    metadata={"sweeps": sweeps, "residual": res, "relaxation": opts.relaxation},
                )
    res = sw.residual_free(u, free)
    if res <= res_tol:
        return GridFunction(op.grid, u, metadata={"sweeps": sweeps, "residual": res, "relaxation": opts.relaxation})
    raise SolverError("dirichlet solve exhausted its sweep budget", iterations=sweeps, residual=res)


def _linear_solve_pinned(
    sw: _Sweeper,
    u0: np.ndarray,
    pinned_rows: np.ndarray,
    pinned_values: np.ndarray,
    res_tol: float,
) -> tuple[np.ndarray, int]:
    """SOR solve with given interior rows pinned; boundary stays at whatever
    u0 carries. Returns (solution array, sweeps spent)."""
    opts = sw.opts
    u = u0.copy()
    free = np.ones(sw.gi.size, dtype=bool)
    free[pinned_rows] = False
    u[sw.gi[pinned_rows]] = pinned_values
    sweeps = 0
    while sweeps < opts.max_sweeps:
        mc = sw.linear_sweep(u, free, opts.relaxation)
        sweeps += 1
        if sweeps % 16 == 0 or mc == 0.0:
            if sw.residual_free(u, free) <= res_tol:
                return u, sweeps
    res = sw.residual_free(u, free)
    if res <= res_tol:
        return u, sweeps
    raise SolverError("contact-set solve exhausted its sweep budget", iterations=sweeps, residual=res)


def perron_envelope(
    op: DiscreteOperator,
    obstacle: Obstacle,
    opts: SolveOptions | None = None,
) -> EnvelopeResult:
    opts = opts or SolveOptions()
    _check_mask(op, obstacle.mask)
    if not obstacle.phi.grid.same_layout(op.grid):
        raise OperatorError("obstacle lives on a different grid")

    sw = _Sweeper(op, opts)
    phi = obstacle.phi.values
    gi = sw.gi
    phi_int = phi[gi]
    norm = max(1.0, float(np.max(np.abs(phi_int))) if gi.size else 0.0)
    res_tol = opts.tolerance * norm * sw.center_mag()
    contact_tol = CONTACT_REL_TOL * norm
    omega_p = min(1.0, opts.relaxation)

    u = phi.copy()
    iterations = 0
    final_update = 0.0

    def projected_run(budget: int) -> None:
        nonlocal iterations, final_update
        for _ in range(budget):
            mc = sw.projected_sweep(u, phi, omega_p)
            iterations += 1
            final_update = mc
            if mc == 0.0:
                break

    phase1 = int(min(128, max(16, round(1.0 / op.grid.h))))
    projected_run(phase1)

    negative = phi_int < 0.0
    cand = negative & (u[gi] >= phi_int - contact_tol)
    restarts = 0
    merges = 0
    converged = False

    for _ in range(MAX_MERGES):
        pinned_rows = np.flatnonzero(cand)
        if pinned_rows.size:
            w, spent = _linear_solve_pinned(sw, u, pinned_rows, phi_int[pinned_rows], res_tol)
            iterations += spent
            merges += 1
            np.minimum(u, w, out=u)
        contact_now = negative & (u[gi] >= phi_int - contact_tol)
        mn, mx = sw.residual_split(u, contact_now)
        if mn >= -res_tol and mx <= res_tol:
            converged = True
            break
        rows = sw.residual_rows(u)
        shrunk = cand.copy()
        if pinned_rows.size:
            shrunk &= u[gi] >= phi_int - contact_tol
        shrunk &= ~(rows < -res_tol)
        if np.array_equal(shrunk, cand):
            # merge step stalled; fall back to plain projected sweeps
            restarts += 1
            if restarts > MAX_RESTARTS:
                raise SolverError("envelope solve stalled", iterations=iterations, residual=mn)
            projected_run(4 * phase1)
            shrunk = negative & (u[gi] >= phi_int - contact_tol)
        cand = shrunk
    if not converged:
        mn, mx = sw.residual_split(u, negative & (u[gi] >= phi_int - contact_tol))
        if not (mn >= -res_tol and mx <= res_tol):
            raise SolverError("envelope merge loop did not converge", iterations=iterations, residual=mn)

    certificate = float(max(0.0, float(np.max(u[gi] - phi_int)) if gi.size else 0.0))
    contact = gi[np.abs(u[gi] - phi_int) <= contact_tol]
    sol = GridFunction(
        op.grid,
        u,
        metadata={
            "kind": "obstacle-envelope",
            "iterations": iterations,
            "restarts": restarts,
            "merges": merges,
        },
    )
    return EnvelopeResult(
        solution=sol,
        iterations=iterations,
        final_update=final_update,
        contact=contact,
        certificate=certificate,
        restarts=restarts,
        merges=merges,
        res_tol=res_tol,
    )


def dense_oracle_solve(
    op: DiscreteOperator,
    mask: DomainMask,
    K: NodeSet | None,
    psi: np.ndarray | None = None,
) -> GridFunction:
    """Direct dense solve of the hole problem: L u = 0 on interior minus K,
    u = psi on K, u = 0 on the boundary ring. Deliberately independent of the
    sweep machinery; capped at 10_000 unknowns."""
    _check_mask(op, mask)
    hole_idx = K.indices if K is not None else np.empty(0, dtype=np.int64)
    if psi is None:
        psi = np.zeros(hole_idx.size)
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape != hole_idx.shape:
        raise ValueError("one value per hole node is required")

    vals = np.zeros(op.grid.num_nodes)
    vals[hole_idx] = psi
    in_hole = np.zeros(op.grid.num_nodes, dtype=bool)
    in_hole[hole_idx] = True
    free_nodes = op.interior[~in_hole[op.interior]]
    m = free_nodes.size
    if m > MAX_DENSE_UNKNOWNS:
        raise OperatorError(
            f"dense oracle limited to {MAX_DENSE_UNKNOWNS} unknowns, got {m}; use dirichlet_solve"
        )
    if m == 0:
        return GridFunction(op.grid, vals, metadata={"kind": "dense-oracle"})

    pos = np.full(op.grid.num_nodes, -1, dtype=np.int64)
    pos[free_nodes] = np.arange(m)
    prow = op.interior_pos[free_nodes]
    A = np.zeros((m, m))
    rhs = np.zeros(m)
    A[np.arange(m), np.arange(m)] = op.center[0] if op.uniform else op.center[prow]
    for k in range(op.offsets_linear.size):
        nbr = free_nodes + op.offsets_linear[k]
        w = np.broadcast_to(op.weights[0, k], (m,)) if op.uniform else op.weights[prow, k]
        fr = pos[nbr] >= 0
        A[np.flatnonzero(fr), pos[nbr[fr]]] += w[fr]
        rhs[~fr] -= w[~fr] * vals[nbr[~fr]]
    sol = np.linalg.solve(A, rhs)
    vals[free_nodes] = sol
    return GridFunction(op.grid, vals, metadata={"kind": "dense-oracle"})


def upper_regularize(u: GridFunction) -> GridFunction:
    """Upper-semicontinuous regularization collapses to the identity at a
    fixed grid resolution; record that it was taken. Idempotent."""
    if "usc_regularized_at" in u.metadata:
        return u
    out = u.copy()
    out.metadata["usc_regularized_at"] = u.grid.h
    return out
