"""Discrete elliptic operators for degenerate complex Hessians.

The continuous operator acts on u through the Hermitian coefficient matrix
a(x): L u = scale * sum_jk a_jk d^2 u / dz_j dz_bar_k. In real coordinates
each diagonal entry contributes a quarter Laplacian on its complex axis and
the off-diagonal entry contributes four real mixed derivatives:

    2 Re(a12 u_{z1 zbar2}) = (p/2)(u_{x1x2} + u_{y1y2})
                             - (q/2) u_{x1y2} + (q/2) u_{y1x2},   a12 = p + iq.

Mixed derivatives are discretized with two-corner second differences whose
corner pairing follows the sign of the coefficient, which keeps every
off-center stencil weight nonnegative whenever the diagonal dominates the
cross terms (a_jj >= |p| + |q|). That positive-type structure is enforced at
assembly, not assumed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import (
    BOUNDARY,
    EXTERIOR,
    INTERIOR,
    ComplexGrid,
    DomainMask,
    GridFunction,
)

__all__ = [
    "AlphaForm",
    "DiscreteOperator",
    "DiscretePoissonKernel",
    "SubharmonicCheck",
    "MaxPrincipleReport",
    "OperatorError",
    "SolverError",
    "form_to_effective_coeffs",
    "alpha_form_from_csv",
    "assemble_operator",
    "apply",
    "is_alpha_subharmonic",
    "poisson_kernel",
    "submean_check",
    "max_principle_check",
    "validate_barrier",
    "violations_to_csv",
]

EPS_PD = 1e-9
HERMITIAN_TOL = 1e-14


class OperatorError(ValueError):
    pass


class SolverError(RuntimeError):
    """Raised when a linear or obstacle solve fails to meet its tolerance."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


def _as_field(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=np.float64))


@dataclass(frozen=True)
class AlphaForm:
    """Effective operator coefficients: positive scalar field (n=1) or a
    Hermitian positive-definite 2x2 field (n=2), plus a global positive scale.

    Coefficient entries are scalars (constant form) or arrays over all grid
    nodes (variable form)."""

    n: int
    scale: float = 1.0
    a: np.ndarray | None = None          # n=1
    a11: np.ndarray | None = None        # n=2
    a22: np.ndarray | None = None
    a12_re: np.ndarray | None = None
    a12_im: np.ndarray | None = None

    def __post_init__(self):
        if self.n not in (1, 2):
            raise OperatorError(f"complex dimension must be 1 or 2, got {self.n}")
        if not self.scale > 0:
            raise OperatorError(f"scale must be positive, got {self.scale}")
        if self.n == 1:
            if self.a is None:
                raise OperatorError("n=1 form needs the scalar coefficient a")
            object.__setattr__(self, "a", _as_field(self.a))
            if np.min(self.a) < EPS_PD:
                raise OperatorError(
                    f"coefficient must be >= {EPS_PD} everywhere, min is {np.min(self.a):.3e}"
                )
        else:
            missing = [k for k in ("a11", "a22", "a12_re", "a12_im") if getattr(self, k) is None]
            if missing:
                raise OperatorError(f"n=2 form needs entries {missing}")
            for k in ("a11", "a22", "a12_re", "a12_im"):
                object.__setattr__(self, k, _as_field(getattr(self, k)))
            lam = self.min_eigenvalue()
            if np.min(lam) < EPS_PD:
                raise OperatorError(
                    f"coefficient matrix must have min eigenvalue >= {EPS_PD}, "
                    f"found {np.min(lam):.3e}"
                )

    @property
    def is_constant(self) -> bool:
        arrs = (self.a,) if self.n == 1 else (self.a11, self.a22, self.a12_re, self.a12_im)
        return all(x.size == 1 for x in arrs)

    def min_eigenvalue(self) -> np.ndarray:
        if self.n == 1:
            return self.a
        half_tr = (self.a11 + self.a22) / 2.0
        disc = np.sqrt(((self.a11 - self.a22) / 2.0) ** 2 + self.a12_re**2 + self.a12_im**2)
        return half_tr - disc

    def at(self, idx: np.ndarray) -> tuple[np.ndarray, ...]:
        """Coefficient values at the given nodes (broadcasting constants)."""

        def pick(x):
            return x if x.size == 1 else x[idx]

        if self.n == 1:
            return (pick(self.a),)
        return (pick(self.a11), pick(self.a22), pick(self.a12_re), pick(self.a12_im))


def form_to_effective_coeffs(
    n: int,
    scale: float = 1.0,
    *,
    c=None,
    c11=None,
    c22=None,
    c12_re=None,
    c12_im=None,
    c21_re=None,
    c21_im=None,
) -> AlphaForm:
    """Convert printed form coefficients (the matrix in front of
    dz_j wedge dz_bar_k) into effective operator coefficients.

    For n=2 the exterior-algebra bookkeeping swaps the diagonal entries and
    negates-conjugates the off-diagonal one: the coefficient printed on
    dz_1 wedge dz_bar_1 multiplies d^2 u / dz_2 dz_bar_2 and vice versa,
    and a12 = -conj(c12). For n=1 the printed coefficient is a scalar and
    passes through unchanged. Input must be Hermitian; the effective matrix
    is then Hermitian with the same eigenvalues, so definiteness carries over.
    """
    if n == 1:
        if c is None:
            raise OperatorError("n=1 conversion needs the scalar printed coefficient c")
        return AlphaForm(n=1, scale=scale, a=_as_field(c))
    if any(v is None for v in (c11, c22)) or (c12_re is None) or (c12_im is None):
        raise OperatorError("n=2 conversion needs c11, c22, c12_re, c12_im")
    c11 = _as_field(c11)
    c22 = _as_field(c22)
    c12_re = _as_field(c12_re)
    c12_im = _as_field(c12_im)
    if c21_re is not None or c21_im is not None:
        c21_re = _as_field(0.0 if c21_re is None else c21_re)
        c21_im = _as_field(0.0 if c21_im is None else c21_im)
        mag = max(1.0, float(np.max(np.hypot(c12_re, c12_im))))
        dev = np.max(np.hypot(c21_re - c12_re, c21_im + c12_im))
        if dev > HERMITIAN_TOL * mag:
            raise OperatorError(
                f"printed coefficients are not Hermitian: |c21 - conj(c12)| = {dev:.3e}"
            )
    return AlphaForm(
        n=2,
        scale=scale,
        a11=c22,
        a22=c11,
        a12_re=-c12_re,
        a12_im=c12_im,
    )


def alpha_form_from_csv(grid: ComplexGrid, path: str | Path, scale: float = 1.0) -> AlphaForm:
    """Per-node effective coefficients: rows `index,a11_re[,a12_re,a12_im,a22_re]`."""
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        ncols = len(header) - 1
        if ncols not in (1, 4):
            raise OperatorError("coefficient CSV needs 1 (n=1) or 4 (n=2) value columns")
        data = np.full((grid.num_nodes, ncols), np.nan)
        for row in r:
            data[int(row[0])] = [float(x) for x in row[1:]]
    if np.isnan(data).any():
        raise OperatorError("coefficient CSV does not cover every node")
    if ncols == 1:
        return AlphaForm(n=1, scale=scale, a=data[:, 0])
    return AlphaForm(n=2, scale=scale, a11=data[:, 0], a12_re=data[:, 1], a12_im=data[:, 2], a22=data[:, 3])


# ---------------------------------------------------------------------------
# stencil assembly

# Column layout of the stencil weight table. Axis numbering: x1=0, y1=1,
# x2=2, y2=3 (n=2) or x=0, y=1 (n=1). Mixed pairs are the four combinations
# the complex Hessian produces; (x1,y1) and (x2,y2) never appear.
_PAIRS_N2 = ((0, 2), (1, 3), (0, 3), (1, 2))
_CORNER_SIGNS = ((1, 1), (-1, -1), (1, -1), (-1, 1))


def _offset_table(n: int) -> np.ndarray:
    d = 2 * n
    rows = []
    for ax in range(d):
        for s in (1, -1):
            v = [0] * d
            v[ax] = s
            rows.append(v)
    pairs = _PAIRS_N2 if n == 2 else ((0, 1),)
    for (p, q) in pairs:
        for (sp, sq) in _CORNER_SIGNS:
            v = [0] * d
            v[p] = sp
            v[q] = sq
            rows.append(v)
    return np.array(rows, dtype=np.int64)


@dataclass(frozen=True)
class DiscreteOperator:
    """Assembled positive-type stencil over the interior nodes.

    weights[r, k] is the (nonnegative) coefficient of neighbor offset k for
    interior row r; center[r] < 0 is the node's own coefficient, computed as
    minus the running sum of the off-center weights in column order. With a
    constant coefficient field a single shared row is stored (uniform=True).
    The global scale and 1/h^2 are folded into the stored weights.
    """

    grid: ComplexGrid
    mask: DomainMask
    alpha: AlphaForm
    offsets_multi: np.ndarray
    offsets_linear: np.ndarray
    weights: np.ndarray
    center: np.ndarray
    interior: np.ndarray
    interior_pos: np.ndarray
    uniform: bool

    @property
    def scale(self) -> float:
        return self.alpha.scale

    @property
    def h(self) -> float:
        return self.grid.h


def assemble_operator(alpha: AlphaForm, mask: DomainMask) -> DiscreteOperator:
    """Build the finite-difference stencil on a mask.

    Raises OperatorError when the cross terms overpower the diagonal (the
    positive-type condition a_jj >= |Re a12| + |Im a12| fails), naming the
    worst node and its dominance ratio.
    """
    grid = mask.grid
    if alpha.n != grid.n:
        raise OperatorError(f"form dimension {alpha.n} does not match grid dimension {grid.n}")
    interior = mask.interior_idx
    if interior.size == 0:
        raise OperatorError("mask has no interior nodes")

    offsets = _offset_table(grid.n)
    strides = np.asarray(grid.strides, dtype=np.int64)
    off_lin = offsets @ strides

    factor = alpha.scale / (grid.h * grid.h)
    if alpha.is_constant:
        coeffs = alpha.at(np.array([0]))
        rows = 1
    else:
        coeffs = alpha.at(interior)
        rows = interior.size

    n_off = offsets.shape[0]
    W = np.zeros((rows, n_off))
    if grid.n == 1:
        (a,) = coeffs
        for k in range(4):  # axis columns
            W[:, k] = a / 4.0
        # corner columns stay zero: a 1x1 form has no mixed term
        pair_list = ()
        B_list = ()
    else:
        a11, a22, p, q = coeffs
        cax = {0: a11 / 4.0, 1: a11 / 4.0, 2: a22 / 4.0, 3: a22 / 4.0}
        B_list = (p / 2.0, p / 2.0, -q / 2.0, q / 2.0)
        pair_list = _PAIRS_N2
        # axis weights: quarter Laplacian minus half of each |B| the axis
        # participates in
        for ax in range(4):
            w = np.broadcast_to(cax[ax], (rows,)).astype(np.float64).copy()
            for (pp, qq), B in zip(pair_list, B_list):
                if ax in (pp, qq):
                    w -= np.abs(B) / 2.0
            col0 = 2 * ax
            W[:, col0] = w
            W[:, col0 + 1] = w
        # corner weights by the sign of B
        base = 8
        for j, B in enumerate(B_list):
            Bpos = np.maximum(B, 0.0) / 2.0
            Bneg = np.maximum(-B, 0.0) / 2.0
            W[:, base + 4 * j + 0] = Bpos  # (+,+)
            W[:, base + 4 * j + 1] = Bpos  # (-,-)
            W[:, base + 4 * j + 2] = Bneg  # (+,-)
            W[:, base + 4 * j + 3] = Bneg  # (-,+)

    wmin = W.min()
    if wmin < 0.0:
        r, k = np.unravel_index(np.argmin(W), W.shape)
        node = int(interior[0] if rows == 1 else interior[r])
        if grid.n == 2:
            a11v, a22v, pv, qv = (np.broadcast_to(x, (rows,))[r] for x in coeffs)
            ratio = (abs(pv) + abs(qv)) / min(a11v, a22v)
        else:
            ratio = float("nan")
        raise OperatorError(
            f"positive-type violation at node {node}: cross terms exceed the "
            f"diagonal (dominance ratio {ratio:.6g}, needs <= 1)"
        )

    W *= factor
    center = np.zeros(rows)
    for k in range(n_off):  # fixed column order; kernels accumulate the same way
        center -= W[:, k]

    pos = np.full(grid.num_nodes, -1, dtype=np.int64)
    pos[interior] = np.arange(interior.size)

    return DiscreteOperator(
        grid=grid,
        mask=mask,
        alpha=alpha,
        offsets_multi=offsets,
        offsets_linear=off_lin,
        weights=W,
        center=center,
        interior=interior.astype(np.int64),
        interior_pos=pos,
        uniform=(rows == 1),
    )


def apply(op: DiscreteOperator, u: GridFunction) -> GridFunction:
    """Residual field L u. Interior nodes get the stencil value; boundary and
    exterior positions carry NaN as the not-evaluated sentinel."""
    if not u.grid.same_layout(op.grid):
        raise OperatorError("grid mismatch between operator and argument")
    u.check_finite(op.mask)
    vals = u.values
    res = np.full(op.grid.num_nodes, np.nan)
    res[op.interior] = _interior_residuals(op, vals)
    return GridFunction(op.grid, res, metadata={"kind": "operator-residual"})


def _interior_residuals(op: DiscreteOperator, vals: np.ndarray) -> np.ndarray:
    idx = op.interior
    W, c = op.weights, op.center
    r = (c if not op.uniform else c[0]) * vals[idx]
    for k in range(op.offsets_linear.size):
        wk = W[0, k] if op.uniform else W[:, k]
        r = r + wk * vals[idx + op.offsets_linear[k]]
    return r


@dataclass(frozen=True)
class SubharmonicCheck:
    verdict: bool
    tol: float
    min_residual: float
    worst_node: int
    violation_nodes: np.ndarray
    violation_residuals: np.ndarray


def is_alpha_subharmonic(u: GridFunction, op: DiscreteOperator, tol: float | None = None) -> SubharmonicCheck:
    """Discrete subharmonicity test: L u >= -tol at every interior node.

    The default tolerance scales like scale * ||u||_inf / h^2 so that the
    verdict is invariant under positive rescaling of u or of the operator.
    """
    res = _interior_residuals(op, u.values)
    if tol is None:
        sel = op.mask.classes != EXTERIOR
        norm = float(np.max(np.abs(u.values[sel]))) if sel.any() else 0.0
        tol = 1e-9 * op.scale * norm / (op.h * op.h)
    bad = res < -tol
    kmin = int(np.argmin(res))
    return SubharmonicCheck(
        verdict=not bool(bad.any()),
        tol=float(tol),
        min_residual=float(res[kmin]),
        worst_node=int(op.interior[kmin]),
        violation_nodes=op.interior[bad],
        violation_residuals=res[bad],
    )


def violations_to_csv(check: SubharmonicCheck, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node", "residual"])
        for node, r in zip(check.violation_nodes, check.violation_residuals):
            w.writerow([int(node), repr(float(r))])


# ---------------------------------------------------------------------------
# Poisson kernels and the pointwise inequalities


@dataclass(frozen=True)
class DiscretePoissonKernel:
    """Rows of boundary weights reproducing operator-harmonic functions.

    weights[i, b] >= 0 is the influence of ball-boundary node b on
    ball-interior node i; each row sums to 1.
    """

    op: DiscreteOperator
    ball: DomainMask
    interior: np.ndarray
    boundary: np.ndarray
    weights: np.ndarray


def poisson_kernel(op: DiscreteOperator, ball: DomainMask) -> DiscretePoissonKernel:
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    if not ball.grid.same_layout(op.grid):
        raise OperatorError("ball mask lives on a different grid")
    inb = np.flatnonzero(ball.classes != EXTERIOR)
    if not (op.mask.classes[inb] == INTERIOR).all():
        raise OperatorError("ball (interior and boundary) must sit inside the parent interior")
    bint = ball.interior_idx
    bbnd = ball.boundary_idx
    ni, nb = bint.size, bbnd.size
    if nb == 0:
        raise OperatorError("ball has no boundary ring")

    posI = np.full(op.grid.num_nodes, -1, dtype=np.int64)
    posI[bint] = np.arange(ni)
    posB = np.full(op.grid.num_nodes, -1, dtype=np.int64)
    posB[bbnd] = np.arange(nb)

    prow = op.interior_pos[bint]
    cdiag = np.broadcast_to(op.center, (ni,)) if op.uniform else op.center[prow]
    rowsA = [np.arange(ni)]
    colsA = [np.arange(ni)]
    valsA = [np.asarray(cdiag, dtype=np.float64)]
    rowsB, colsB, valsB = [], [], []
    for k in range(op.offsets_linear.size):
        nbr = bint + op.offsets_linear[k]
        w = np.broadcast_to(op.weights[0, k], (ni,)) if op.uniform else op.weights[prow, k]
        isI = posI[nbr] >= 0
        isB = posB[nbr] >= 0
        if not (isI | isB).all():
            raise OperatorError("ball stencil reaches outside the ball; mask invariant broken")
        rowsA.append(np.flatnonzero(isI))
        colsA.append(posI[nbr[isI]])
        valsA.append(w[isI])
        rowsB.append(np.flatnonzero(isB))
        colsB.append(posB[nbr[isB]])
        valsB.append(w[isB])

    A = sp.csc_matrix(
        (np.concatenate(valsA), (np.concatenate(rowsA), np.concatenate(colsA))),
        shape=(ni, ni),
    )
    B = sp.csc_matrix(
        (np.concatenate(valsB), (np.concatenate(rowsB), np.concatenate(colsB))),
        shape=(ni, nb),
    ).toarray()

    lu = spla.splu(A)
    X = lu.solve(-B)
    resid = float(np.max(np.abs(A @ X + B)))
    center_mag = float(np.max(np.abs(A.diagonal())))
    if resid > 1e-10 * center_mag:
        raise SolverError("kernel factorization residual too large", iterations=0, residual=resid)
    if X.min() < -1e-12:
        raise SolverError("kernel has a negative weight beyond tolerance", residual=float(X.min()))
    rs = X.sum(axis=1)
    if np.max(np.abs(rs - 1.0)) > 1e-10:
        raise SolverError("kernel row sums deviate from 1", residual=float(np.max(np.abs(rs - 1.0))))
    return DiscretePoissonKernel(op=op, ball=ball, interior=bint, boundary=bbnd, weights=X)


def submean_check(u: GridFunction, kernel: DiscretePoissonKernel, tol: float = 1e-9) -> bool:
    """Sub-mean-value inequality against the kernel: u(z) <= sum_b P(z,b) u(b)."""
    ui = u.values[kernel.interior]
    ub = kernel.weights @ u.values[kernel.boundary]
    return bool(np.all(ui <= ub + tol))


@dataclass(frozen=True)
class MaxPrincipleReport:
    holds: bool
    argmax_node: int
    interior_max: float
    boundary_max: float


def max_principle_check(u: GridFunction, mask: DomainMask, op: DiscreteOperator, tol: float = 1e-9) -> MaxPrincipleReport:
    """For a discrete subsolution, the interior max cannot exceed the boundary
    max. Raises if u is not a discrete subsolution for op."""
    chk = is_alpha_subharmonic(u, op)
    if not chk.verdict:
        raise OperatorError(
            f"max principle check needs a discrete subsolution; min residual "
            f"{chk.min_residual:.3e} < -{chk.tol:.3e} at node {chk.worst_node}"
        )
    im = mask.interior_idx
    bm = mask.boundary_idx
    ki = int(np.argmax(u.values[im]))
    interior_max = float(u.values[im][ki])
    boundary_max = float(np.max(u.values[bm]))
    return MaxPrincipleReport(
        holds=bool(interior_max <= boundary_max + tol),
        argmax_node=int(im[ki]),
        interior_max=interior_max,
        boundary_max=boundary_max,
    )


def validate_barrier(op: DiscreteOperator, mask: DomainMask, ring_tol: float | None = None) -> None:
    """Barrier contract: strictly negative inside, vanishing at the edge, and
    discretely subharmonic for the ambient operator.

    The boundary ring sits up to one cell diagonal outside the true edge, so
    a smooth defining function is not exactly zero there; zeroing it by hand
    would wreck the residuals of ring-adjacent rows by O(1/h). "Vanishing"
    therefore means |rho| on the ring is bounded by the ring's lattice
    distance to the edge times the field's own gradient bound, estimated
    from axis differences. An explicit ring_tol overrides that estimate."""
    if mask.barrier is None:
        raise OperatorError("mask carries no barrier field")
    rho = mask.barrier
    if np.max(rho.values[mask.interior_idx]) >= 0:
        raise OperatorError("barrier must be strictly negative on interior nodes")
    if ring_tol is None:
        n = op.grid.n
        g_max = 0.0
        ii = op.interior
        for off in op.offsets_linear[: 4 * n]:
            g_max = max(g_max, float(np.max(np.abs(rho.values[ii + off] - rho.values[ii]))) / op.h)
        ring_tol = 2.0 * math.sqrt(2 * n) * op.h * g_max
    worst_ring = float(np.max(np.abs(rho.values[mask.boundary_idx])))
    if worst_ring > ring_tol:
        raise OperatorError(
            f"barrier must vanish at the edge: boundary-ring magnitude {worst_ring:.3e} "
            f"exceeds the O(h) allowance {ring_tol:.3e}"
        )
    chk = is_alpha_subharmonic(rho, op)
    if not chk.verdict:
        raise OperatorError(
            f"barrier is not discretely subharmonic: residual {chk.min_residual:.3e} "
            f"at node {chk.worst_node}"
        )
