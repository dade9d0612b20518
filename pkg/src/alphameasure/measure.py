"""Relative extremal fields of compact node sets, weighted variants, and the
verification suite around them.

The central object is the envelope field of a compact node set K inside a
domain D: the largest discrete subsolution that is <= -1 on K (unweighted)
or <= psi on K (weighted), and <= 0 everywhere. Everything else in this
module either produces such fields, compares two of them, or tracks them
under refinement:

* pointwise inequality checks (scaling sandwich between the weighted and
  unweighted fields, the two-constants interpolation bound, monotonicity in
  the set / weight / domain, the boundary barrier bound);
* limit experiments (shrinking compacts, growing domains, exhaustion of an
  open set, negligibility of isolated extra nodes) reported as convergence
  tables;
* pointwise regularity classification by refinement trend of local gaps;
* a harness certifying eventual domination for sequences of subsolutions.

Closed-form weight and barrier inputs travel as small expression objects so
scenario files can reconstruct them at any grid resolution.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .envelope import EnvelopeResult, Obstacle, SolveOptions, perron_envelope
from .grid import (
    BOUNDARY,
    DEFAULT_NODE_BUDGET,
    EXTERIOR,
    INTERIOR,
    Ball,
    ComplexGrid,
    DomainMask,
    GridError,
    GridFunction,
    NodeSet,
    build_grid,
    classify_domain,
    make_node_set,
    nodes_in_shape,
    snap_point,
)
from .operators import (
    AlphaForm,
    DiscreteOperator,
    OperatorError,
    SolverError,
    assemble_operator,
    is_alpha_subharmonic,
    validate_barrier,
)

__all__ = [
    "ConstExpr",
    "AffineExpr",
    "SqNormExpr",
    "SqAxisExpr",
    "RadialPowExpr",
    "expr_from_config",
    "WeightSpec",
    "make_weight",
    "MeasureField",
    "InequalityReport",
    "subharmonic_measure",
    "weighted_measure",
    "check_connection_bounds",
    "check_two_constants",
    "check_monotonicity",
    "boundary_limit_check",
    "ScenarioGeometry",
    "RealizedScenario",
    "realize",
    "measure_for",
    "RegularityReport",
    "PointRegularity",
    "LocalGapRow",
    "regularity_report",
    "ConvergenceTable",
    "TableRow",
    "decreasing_compacts_experiment",
    "increasing_domains_experiment",
    "exhaustion_experiment",
    "polar_union_experiment",
    "HartogsResult",
    "HartogsFamily",
    "hartogs_harness",
    "hartogs_trivial_family",
    "hartogs_bump_family",
    "hartogs_undecided_family",
    "random_admissible_subsolution",
]

BOUND_SLACK = 1e-9  # absolute slack on the defining bounds of a measure field


# ---------------------------------------------------------------------------
# closed-form expressions


def _axis_field(grid: ComplexGrid, terms: Iterable[tuple[int, np.ndarray]], base: float) -> np.ndarray:
    """Sum per-axis 1-D arrays into a full node field without a coordinate
    matrix. terms are (axis, values-along-axis)."""
    acc = np.full(grid.extents, float(base))
    for a, vals in terms:
        sh = [1] * grid.num_axes
        sh[a] = -1
        acc = acc + vals.reshape(sh)
    return acc.ravel()


@dataclass(frozen=True)
class ConstExpr:
    value: float

    def evaluate(self, grid: ComplexGrid) -> np.ndarray:
        return np.full(grid.num_nodes, float(self.value))

    def to_config(self) -> dict:
        return {"kind": "const", "value": self.value}


@dataclass(frozen=True)
class AffineExpr:
    coeffs: tuple[float, ...]
    offset: float = 0.0

    def evaluate(self, grid: ComplexGrid) -> np.ndarray:
        if len(self.coeffs) != grid.num_axes:
            raise GridError("affine expression has the wrong number of coefficients")
        terms = [(a, c * grid.axis_coords(a)) for a, c in enumerate(self.coeffs) if c != 0.0]
        return _axis_field(grid, terms, self.offset)

    def to_config(self) -> dict:
        return {"kind": "affine", "coeffs": list(self.coeffs), "offset": self.offset}


@dataclass(frozen=True)
class SqNormExpr:
    """offset + coeff * |x - center|^2; covers |z|^2 - 1 style weights."""

    coeff: float = 1.0
    offset: float = 0.0
    center: tuple[float, ...] | None = None

    def evaluate(self, grid: ComplexGrid) -> np.ndarray:
        ctr = self.center or (0.0,) * grid.num_axes
        terms = []
        for a in range(grid.num_axes):
            d = grid.axis_coords(a) - ctr[a]
            terms.append((a, self.coeff * d * d))
        return _axis_field(grid, terms, self.offset)

    def to_config(self) -> dict:
        return {"kind": "sqnorm", "coeff": self.coeff, "offset": self.offset, "center": list(self.center) if self.center else None}


@dataclass(frozen=True)
class SqAxisExpr:
    """offset + sum_d coeffs[d] * (x_d - center_d)^2; covers |z_j|^2 terms."""

    coeffs: tuple[float, ...]
    offset: float = 0.0
    center: tuple[float, ...] | None = None

    def evaluate(self, grid: ComplexGrid) -> np.ndarray:
        if len(self.coeffs) != grid.num_axes:
            raise GridError("per-axis expression has the wrong number of coefficients")
        ctr = self.center or (0.0,) * grid.num_axes
        terms = []
        for a, c in enumerate(self.coeffs):
            d = grid.axis_coords(a) - ctr[a]
            terms.append((a, c * d * d))
        return _axis_field(grid, terms, self.offset)

    def to_config(self) -> dict:
        return {
            "kind": "sqaxis",
            "coeffs": list(self.coeffs),
            "offset": self.offset,
            "center": list(self.center) if self.center else None,
        }


@dataclass(frozen=True)
class RadialPowExpr:
    """offset + coeff * (|x - center|^2 + (mollify*h)^2)^(power/2).

    The mollification shoulder (a couple of grid cells wide) keeps powers
    below 2 discretely subharmonic at the center; for coeff >= 0 and
    0 < power <= 2 the smoothed profile is subharmonic for any positive-type
    diagonal operator, the bare power is not."""

    coeff: float = 1.0
    offset: float = 0.0
    power: float = 1.0
    center: tuple[float, ...] | None = None
    mollify: float = 2.0

    def evaluate(self, grid: ComplexGrid) -> np.ndarray:
        ctr = self.center or (0.0,) * grid.num_axes
        terms = []
        for a in range(grid.num_axes):
            d = grid.axis_coords(a) - ctr[a]
            terms.append((a, d * d))
        r2 = _axis_field(grid, terms, (self.mollify * grid.h) ** 2)
        return self.offset + self.coeff * np.power(r2, self.power / 2.0)

    def to_config(self) -> dict:
        return {
            "kind": "radialpow",
            "coeff": self.coeff,
            "offset": self.offset,
            "power": self.power,
            "center": list(self.center) if self.center else None,
            "mollify": self.mollify,
        }


_EXPR_KINDS = {
    "const": ConstExpr,
    "affine": AffineExpr,
    "sqnorm": SqNormExpr,
    "sqaxis": SqAxisExpr,
    "radialpow": RadialPowExpr,
}


def expr_from_config(cfg: Mapping) -> object:
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in _EXPR_KINDS:
        raise ValueError(f"unknown expression kind {kind!r}; allowed: {sorted(_EXPR_KINDS)}")
    cls = _EXPR_KINDS[kind]
    for key in ("coeffs", "center"):
        if key in cfg and cfg[key] is not None:
            cfg[key] = tuple(float(v) for v in cfg[key])
    try:
        return cls(**cfg)
    except TypeError as e:
        raise ValueError(f"bad fields for expression kind {kind!r}: {e}") from None


# ---------------------------------------------------------------------------
# weights and measure fields


@dataclass(frozen=True)
class WeightSpec:
    """Negative data on the support together with its globally defined,
    discretely subharmonic extension. The extension restricted to the support
    IS the data (same array positions), so agreement there is exact."""

    extension: GridFunction
    support: NodeSet
    holder_constant: float | None = None
    holder_exponent: float | None = None
    expression: object | None = None

    @property
    def on_support(self) -> np.ndarray:
        return self.extension.values[self.support.indices]

    def inf_on_support(self) -> float:
        return float(np.min(self.on_support))

    def sup_on_support(self) -> float:
        return float(np.max(self.on_support))


def make_weight(
    op: DiscreteOperator,
    mask: DomainMask,
    K: NodeSet,
    expr_or_field,
    holder_constant: float | None = None,
    holder_exponent: float | None = None,
) -> WeightSpec:
    if hasattr(expr_or_field, "evaluate"):
        vals = expr_or_field.evaluate(mask.grid)
        expr = expr_or_field
        ext = GridFunction(mask.grid, vals, metadata={"kind": "weight-extension"})
    else:
        ext = expr_or_field
        expr = None
    w = WeightSpec(
        extension=ext,
        support=K,
        holder_constant=holder_constant,
        holder_exponent=holder_exponent,
        expression=expr,
    )
    _validate_weight(op, mask, w)
    return w


def _validate_weight(op: DiscreteOperator, mask: DomainMask, w: WeightSpec) -> None:
    if not w.extension.grid.same_layout(mask.grid):
        raise OperatorError("weight extension lives on a different grid")
    if w.support.size and w.sup_on_support() >= 0:
        raise OperatorError("weight must be strictly negative on K")
    interior_vals = w.extension.values[mask.interior_idx]
    if interior_vals.size and interior_vals.max() >= 0:
        k = int(mask.interior_idx[np.argmax(interior_vals)])
        raise OperatorError(
            f"weight extension must be strictly negative on the interior; node {k} has value {interior_vals.max():.3e}"
        )
    chk = is_alpha_subharmonic(w.extension, op)
    if not chk.verdict:
        raise OperatorError(
            f"weight extension is not discretely subharmonic: residual {chk.min_residual:.3e} at node {chk.worst_node}"
        )


@dataclass(frozen=True)
class MeasureField:
    """Envelope field of a compact node set, bundled with the inputs that produced it."""

    omega: GridFunction
    kind: str  # "unweighted" | "weighted"
    support: NodeSet
    mask: DomainMask
    op: DiscreteOperator
    weight: WeightSpec | None = None
    envelope: EnvelopeResult | None = None
    connection: "InequalityReport | None" = None
    geometry: "ScenarioGeometry | None" = None

    def psi_on_support(self) -> np.ndarray:
        if self.weight is not None:
            return self.weight.on_support
        return np.full(self.support.size, -1.0)

    def inf_psi(self) -> float:
        vals = self.psi_on_support()
        return float(vals.min()) if vals.size else -1.0

    def sup_psi(self) -> float:
        vals = self.psi_on_support()
        return float(vals.max()) if vals.size else -1.0

    def psi_norm(self) -> float:
        vals = self.psi_on_support()
        return float(np.max(np.abs(vals))) if vals.size else 1.0


def _solve_measure(
    op: DiscreteOperator,
    mask: DomainMask,
    K: NodeSet,
    psi_values: np.ndarray,
    opts: SolveOptions | None,
) -> tuple[GridFunction, EnvelopeResult | None]:
    if K.is_empty():
        return GridFunction(op.grid, np.zeros(op.grid.num_nodes), metadata={"kind": "measure"}), None
    obstacle = Obstacle.from_values(mask, K, psi_values)
    result = perron_envelope(op, obstacle, opts)
    omega = result.solution
    # defining bounds: between the worst support value and zero
    sel = mask.classes != EXTERIOR
    lo = float(np.min(psi_values))
    vmin = float(np.min(omega.values[sel]))
    vmax = float(np.max(omega.values[sel]))
    if vmin < lo - BOUND_SLACK or vmax > BOUND_SLACK:
        raise SolverError(
            f"measure field violates its defining bounds [{lo:.6g}, 0]: range [{vmin:.6g}, {vmax:.6g}]",
            iterations=result.iterations,
            residual=max(lo - vmin, vmax),
        )
    return omega, result


def subharmonic_measure(
    op: DiscreteOperator,
    mask: DomainMask,
    K: NodeSet,
    opts: SolveOptions | None = None,
    geometry: "ScenarioGeometry | None" = None,
) -> MeasureField:
    """Envelope field with constant data -1 on K; identically 0 when K is
    empty."""
    omega, result = _solve_measure(op, mask, K, np.full(K.size, -1.0), opts)
    omega.metadata["measure_kind"] = "unweighted"
    return MeasureField(
        omega=omega,
        kind="unweighted",
        support=K,
        mask=mask,
        op=op,
        weight=None,
        envelope=result,
        geometry=geometry,
    )


def weighted_measure(
    op: DiscreteOperator,
    mask: DomainMask,
    K: NodeSet,
    w: WeightSpec,
    opts: SolveOptions | None = None,
    check_bounds: bool = True,
    geometry: "ScenarioGeometry | None" = None,
) -> MeasureField:
    """Envelope field with data psi on K, psi taken from the weight's
    extension. Every weighted solve is cross-checked (unless opted out)
    against the unweighted field through the scaling sandwich."""
    if not np.array_equal(w.support.indices, K.indices):
        raise OperatorError("weight support does not match K")
    _validate_weight(op, mask, w)
    omega, result = _solve_measure(op, mask, K, w.on_support, opts)
    omega.metadata["measure_kind"] = "weighted"
    fld = MeasureField(
        omega=omega,
        kind="weighted",
        support=K,
        mask=mask,
        op=op,
        weight=w,
        envelope=result,
        geometry=geometry,
    )
    if check_bounds and not K.is_empty():
        reference = subharmonic_measure(op, mask, K, opts)
        report = check_connection_bounds(fld, reference)
        fld = replace(fld, connection=report)
    return fld


# ---------------------------------------------------------------------------
# inequality reports


@dataclass(frozen=True)
class InequalityReport:
    family: str
    max_violation: float
    worst_node: int
    tol: float
    passed: bool
    status: str  # "pass" | "fail" | "inapplicable"
    details: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "max_violation": self.max_violation,
            "worst_node": self.worst_node,
            "tol": self.tol,
            "passed": self.passed,
            "status": self.status,
            "details": self.details,
        }


def _report(family: str, violations: np.ndarray, nodes: np.ndarray, tol: float, details: dict) -> InequalityReport:
    if violations.size == 0:
        return InequalityReport(family, 0.0, -1, tol, True, "pass", details)
    k = int(np.argmax(violations))
    worst = float(violations[k])
    passed = worst <= tol
    return InequalityReport(
        family=family,
        max_violation=worst,
        worst_node=int(nodes[k]),
        tol=tol,
        passed=passed,
        status="pass" if passed else "fail",
        details=details,
    )


def _inapplicable(family: str, tol: float, reason: str) -> InequalityReport:
    return InequalityReport(family, 0.0, -1, tol, True, "inapplicable", {"reason": reason})


def check_connection_bounds(
    weighted: MeasureField,
    unweighted: MeasureField,
    tol: float = 1e-9,
) -> InequalityReport:
    """Scaling sandwich between a weighted field and the unweighted field of
    the same support: (-inf psi) * w0 <= w_psi <= (-sup psi) * w0."""
    if weighted.op is not unweighted.op and not np.array_equal(weighted.mask.classes, unweighted.mask.classes):
        raise OperatorError("mismatched configurations: different masks")
    if not np.array_equal(weighted.support.indices, unweighted.support.indices):
        raise OperatorError("mismatched configurations: different supports")
    if unweighted.kind != "unweighted":
        raise OperatorError("reference field must be unweighted")
    m = weighted.inf_psi()
    M = weighted.sup_psi()
    sel = np.flatnonzero(weighted.mask.classes != EXTERIOR)
    ww = weighted.omega.values[sel]
    w0 = unweighted.omega.values[sel]
    lower = (-m) * w0 - ww  # > 0 means the lower bound is violated
    upper = ww - (-M) * w0
    viol = np.maximum(lower, upper)
    return _report(
        "connection-bounds",
        viol,
        sel,
        tol,
        {
            "inf_psi": m,
            "sup_psi": M,
            "lower_violation": float(lower.max()) if lower.size else 0.0,
            "upper_violation": float(upper.max()) if upper.size else 0.0,
        },
    )


def check_two_constants(
    u: GridFunction,
    E: NodeSet,
    r: float,
    R: float,
    fld: MeasureField,
    tol: float = 1e-9,
    fourth_derivative_bound: float = 0.0,
) -> InequalityReport:
    """Interpolation bound: a subsolution below R globally and below r on E
    stays below R + (omega/inf psi) * (r - R) pointwise.

    Precondition failures come back as status "inapplicable", never as a
    failed inequality."""
    family = "two-constants"
    h = fld.op.grid.h
    tol_eff = tol * max(1.0, abs(r), abs(R)) + 2.0 * h * h * fourth_derivative_bound
    if not np.array_equal(E.indices, fld.support.indices):
        raise OperatorError("E must be the support of the supplied measure field")
    if not r < R:
        return _inapplicable(family, tol_eff, f"need r < R, got r={r}, R={R}")
    chk = is_alpha_subharmonic(u, fld.op)
    if not chk.verdict:
        return _inapplicable(
            family, tol_eff, f"u is not a discrete subsolution (residual {chk.min_residual:.3e} at node {chk.worst_node})"
        )
    ii = fld.mask.interior_idx
    bb = fld.mask.boundary_idx
    if np.max(u.values[ii]) >= R:
        return _inapplicable(family, tol_eff, f"u must stay strictly below R={R} on the interior")
    if bb.size and np.max(u.values[bb]) > R + 1e-12:
        return _inapplicable(family, tol_eff, f"u must stay at or below R={R} on the boundary")
    if E.size and np.max(u.values[E.indices]) > r + 1e-12:
        return _inapplicable(family, tol_eff, f"u must stay at or below r={r} on E")

    inf_psi = fld.inf_psi()
    theta = fld.omega.values[ii] / inf_psi
    bound = R + theta * (r - R)
    viol = u.values[ii] - bound
    return _report(
        family,
        viol,
        ii,
        tol_eff,
        {"r": r, "R": R, "inf_psi": inf_psi, "theta_max": float(theta.max()) if theta.size else 0.0},
    )


_MONOTONE_KINDS = ("support", "weight", "domain")


def check_monotonicity(
    pairs: Sequence[tuple[str, MeasureField, MeasureField]],
    tol: float = 1e-9,
) -> InequalityReport:
    """Verify the ordering of measure fields along nested data.

    Each entry is (kind, small, large):
      support: small.K subset of large.K  =>  omega_large <= omega_small
      weight:  psi_small <= psi_large on K =>  omega_small <= omega_large
      domain:  small interior subset of large interior => omega_large <= omega_small
    Nesting itself is validated; violations of the conclusion are reported.
    """
    worst = -math.inf
    worst_node = -1
    per_pair = []
    for i, (kind, small, large) in enumerate(pairs):
        if kind not in _MONOTONE_KINDS:
            raise OperatorError(f"unknown monotonicity kind {kind!r}")
        if kind == "support":
            if not np.array_equal(small.mask.classes, large.mask.classes):
                raise OperatorError("support pair must share the domain")
            if not np.isin(small.support.indices, large.support.indices).all():
                raise OperatorError(f"pair {i}: supports are not nested")
            sel = np.flatnonzero(small.mask.classes != EXTERIOR)
            diff = large.omega.values[sel] - small.omega.values[sel]
        elif kind == "weight":
            if not np.array_equal(small.support.indices, large.support.indices):
                raise OperatorError("weight pair must share the support")
            ps, pl = small.psi_on_support(), large.psi_on_support()
            if np.max(ps - pl) > 1e-12:
                raise OperatorError(f"pair {i}: weights are not ordered on the support")
            sel = np.flatnonzero(small.mask.classes != EXTERIOR)
            diff = small.omega.values[sel] - large.omega.values[sel]
        else:  # domain
            si = small.mask.interior_idx
            li = np.zeros(small.mask.grid.num_nodes, dtype=bool)
            li[large.mask.interior_idx] = True
            if not li[si].all():
                raise OperatorError(f"pair {i}: domains are not nested")
            if not np.array_equal(small.support.indices, large.support.indices):
                raise OperatorError("domain pair must share the support")
            sel = si
            diff = large.omega.values[sel] - small.omega.values[sel]
        k = int(np.argmax(diff)) if diff.size else -1
        v = float(diff[k]) if diff.size else 0.0
        per_pair.append(v)
        if v > worst:
            worst = v
            worst_node = int(sel[k]) if diff.size else -1
    worst = 0.0 if worst == -math.inf else worst
    passed = worst <= tol
    return InequalityReport(
        family="monotonicity",
        max_violation=worst,
        worst_node=worst_node,
        tol=tol,
        passed=passed,
        status="pass" if passed else "fail",
        details={"pair_violations": per_pair},
    )


def boundary_limit_check(
    fld: MeasureField,
    barrier: GridFunction | None = None,
    tol: float = 1e-9,
) -> InequalityReport:
    """Barrier bound C*rho <= omega <= 0 with C = (inf_K psi) / (max_K rho);
    also reports the largest |omega| on the interior ring touching the
    boundary, which is what actually certifies decay at the edge."""
    rho = barrier if barrier is not None else fld.mask.barrier
    if rho is None:
        raise OperatorError("missing barrier: the mask carries none and no override was given")
    mask = fld.mask
    ii = mask.interior_idx
    ring = _outer_ring(fld.op, mask)
    ring_max = float(np.max(np.abs(fld.omega.values[ring]))) if ring.size else 0.0
    if fld.support.is_empty():
        viol = np.abs(fld.omega.values[ii])
        rep = _report("boundary-limit", viol, ii, tol, {"C": 0.0, "outer_ring_max_abs_omega": ring_max})
        return rep
    max_rho_K = float(np.max(rho.values[fld.support.indices]))
    if max_rho_K >= 0:
        raise OperatorError("barrier must be negative on the support")
    C = fld.inf_psi() / max_rho_K  # both negative, so C > 0
    tol_eff = tol * max(1.0, abs(fld.inf_psi()))
    lower = C * rho.values[ii] - fld.omega.values[ii]
    upper = fld.omega.values[ii]
    viol = np.maximum(lower, upper)
    ring_rho = float(np.max(np.abs(rho.values[ring]))) if ring.size else 0.0
    return _report(
        "boundary-limit",
        viol,
        ii,
        tol_eff,
        {
            "C": C,
            "outer_ring_max_abs_omega": ring_max,
            "outer_ring_max_abs_rho": ring_rho,
            "ring_bound": C * ring_rho,
        },
    )


def _outer_ring(op: DiscreteOperator, mask: DomainMask) -> np.ndarray:
    """Interior nodes with at least one boundary-ring stencil neighbor."""
    ii = op.interior
    hit = np.zeros(ii.size, dtype=bool)
    for off in op.offsets_linear:
        hit |= mask.classes[ii + off] == BOUNDARY
    return ii[hit]


# ---------------------------------------------------------------------------
# resolution-independent scenario geometry


@dataclass(frozen=True)
class ScenarioGeometry:
    """Everything needed to realize one configuration at any spacing h:
    physical box, domain shape, constant coefficient data, support shapes
    plus optional isolated support points, and closed-form weight/barrier."""

    n: int
    box: tuple[tuple[float, float], ...]
    domain: object
    alpha: Mapping
    support_shapes: tuple = ()
    support_points: tuple = ()
    weight: object | None = None
    barrier: object | None = None
    holder_constant: float | None = None
    holder_exponent: float | None = None
    label: str = ""


@dataclass(frozen=True)
class RealizedScenario:
    geometry: ScenarioGeometry
    grid: ComplexGrid
    mask: DomainMask
    op: DiscreteOperator
    support: NodeSet
    weight: WeightSpec | None


def _realized_barrier(grid: ComplexGrid, mask: DomainMask, expr) -> GridFunction:
    """Evaluate a barrier expression and shift it so the boundary ring is
    nonpositive.

    The ring sits up to one cell diagonal outside the true edge, so a smooth
    defining function is slightly positive there. A positive ring trace would
    leak through the comparison argument behind the boundary bound; the
    constant shift by the ring maximum removes it while keeping the field
    exactly as subharmonic as the expression and still O(h) small at the
    edge. Exterior nodes stay zero, stencils never read them."""
    raw = expr.evaluate(grid)
    vals = np.zeros(grid.num_nodes)
    live = mask.classes != EXTERIOR
    ring = mask.boundary_idx
    shift = max(0.0, float(np.max(raw[ring]))) if ring.size else 0.0
    vals[live] = raw[live] - shift
    return GridFunction(grid, vals, metadata={"kind": "barrier", "ring_shift": shift})


def realize(
    geom: ScenarioGeometry,
    h: float,
    max_nodes: int | None = None,
    check_barrier: bool = True,
) -> RealizedScenario:
    counts = []
    origin = []
    for lo, hi in geom.box:
        span = hi - lo
        m = round(span / h)
        if abs(m * h - span) > 1e-9 * max(1.0, abs(span)):
            raise GridError(f"box span {span} is not an integer multiple of h={h}")
        counts.append(int(m) + 1)
        origin.append(lo)
    grid = build_grid(geom.n, counts, h, origin, max_nodes=max_nodes or DEFAULT_NODE_BUDGET)
    mask = classify_domain(grid, geom.domain)
    if geom.barrier is not None:
        mask = mask.with_barrier(_realized_barrier(grid, mask, geom.barrier))
    alpha = AlphaForm(n=geom.n, **dict(geom.alpha))
    op = assemble_operator(alpha, mask)
    if geom.barrier is not None and check_barrier:
        validate_barrier(op, mask)
    idx = np.empty(0, dtype=np.int64)
    for s in geom.support_shapes:
        idx = np.union1d(idx, nodes_in_shape(mask, s, closed=True).indices)
    for p in geom.support_points:
        idx = np.union1d(idx, [snap_point(grid, p)])
    K = make_node_set(mask, idx, label="K")
    weight = None
    if geom.weight is not None and K.size:
        weight = make_weight(
            op,
            mask,
            K,
            geom.weight,
            holder_constant=geom.holder_constant,
            holder_exponent=geom.holder_exponent,
        )
    return RealizedScenario(geometry=geom, grid=grid, mask=mask, op=op, support=K, weight=weight)


def measure_for(scn: RealizedScenario, opts: SolveOptions | None = None, check_bounds: bool = True) -> MeasureField:
    """Solve the scenario's measure field, weighted when a weight is present."""
    if scn.weight is not None:
        return weighted_measure(
            scn.op, scn.mask, scn.support, scn.weight, opts, check_bounds=check_bounds, geometry=scn.geometry
        )
    return subharmonic_measure(scn.op, scn.mask, scn.support, opts, geometry=scn.geometry)


# ---------------------------------------------------------------------------
# regularity classification


@dataclass(frozen=True)
class LocalGapRow:
    h: float
    radius: float
    node: int
    gap: float
    gap_unweighted: float
    eps_reg: float
    probe_count: int


@dataclass(frozen=True)
class PointRegularity:
    point: tuple[float, ...]
    direct_gap: float
    rows: tuple[LocalGapRow, ...]
    classification: str  # "regular" | "irregular" | "inconclusive"


@dataclass(frozen=True)
class RegularityReport:
    points: tuple[PointRegularity, ...]
    h_schedule: tuple[float, ...]
    radius_schedule: tuple[float, ...]
    probe_scale: float
    eps_rule: str = "10 * h * sup|psi|"

    def classification_of(self, point_index: int) -> str:
        return self.points[point_index].classification


def regularity_report(
    fld: MeasureField,
    points: Sequence[Sequence[float]],
    radius_schedule: Sequence[float],
    h_schedule: Sequence[float],
    opts_factory: Callable[[ComplexGrid], SolveOptions] | None = None,
    probe_scale: float = 0.5,
    max_nodes: int | None = None,
) -> RegularityReport:
    """Classify points of the support by the refinement trend of local gaps.

    For each point, spacing, and radius, the support is cut down to its
    intersection with the closed ball around the point, the local envelope
    field is solved, and the gap is the worst excess of that field over the
    weight on a punctured probe ball of radius probe_scale * sqrt(h). Regular
    points keep every final-level gap below eps_reg = 10 h sup|psi|; a point
    whose gaps grow with refinement and end above eps_reg is irregular;
    anything else is inconclusive.
    """
    if fld.geometry is None:
        raise OperatorError("measure field carries no geometry; refinement needs one")
    geom = fld.geometry
    h_schedule = tuple(sorted(float(h) for h in h_schedule))[::-1]  # coarse -> fine
    radius_schedule = tuple(float(r) for r in radius_schedule)
    if opts_factory is None:
        opts_factory = lambda grid: SolveOptions.tuned_for(grid, tolerance=1e-8)

    per_point_rows: list[list[LocalGapRow]] = [[] for _ in points]
    for h in h_schedule:
        scn = realize(geom, h, max_nodes=max_nodes)
        opts = opts_factory(scn.grid)
        psi_tilde = (
            scn.weight.extension.values if scn.weight is not None else np.full(scn.grid.num_nodes, -1.0)
        )
        psi_norm = float(np.max(np.abs(psi_tilde[scn.support.indices]))) if scn.support.size else 1.0
        eps_reg = 10.0 * h * psi_norm
        for pi, point in enumerate(points):
            node = snap_point(scn.grid, point)
            if node not in scn.support.indices:
                raise OperatorError(f"point {tuple(point)} does not land in the support at h={h}")
            center = scn.grid.node_coords(node)
            for radius in radius_schedule:
                ball = Ball(center=tuple(center), radius=radius)
                loc_idx = np.intersect1d(
                    scn.support.indices,
                    np.flatnonzero(ball.contains(scn.grid, closed=True)),
                )
                K_loc = NodeSet(indices=loc_idx, label="K-local")
                omega_loc, _ = _solve_measure(scn.op, scn.mask, K_loc, psi_tilde[loc_idx], opts)
                probe = _punctured_probe(scn, node, probe_scale * math.sqrt(h))
                gap = float(np.max(omega_loc.values[probe] - psi_tilde[probe]))
                if scn.weight is not None:
                    omega_u, _ = _solve_measure(scn.op, scn.mask, K_loc, np.full(loc_idx.size, -1.0), opts)
                    gap_u = float(np.max(omega_u.values[probe] + 1.0))
                else:
                    gap_u = gap
                per_point_rows[pi].append(
                    LocalGapRow(
                        h=h,
                        radius=radius,
                        node=int(node),
                        gap=gap,
                        gap_unweighted=gap_u,
                        eps_reg=eps_reg,
                        probe_count=int(probe.size),
                    )
                )

    out = []
    h_fine = h_schedule[-1]
    for pi, point in enumerate(points):
        rows = tuple(per_point_rows[pi])
        finals = [r for r in rows if r.h == h_fine]
        final_ok = all(r.gap <= r.eps_reg for r in finals)
        increasing = True
        above = all(r.gap > r.eps_reg for r in finals)
        for radius in radius_schedule:
            seq = [r.gap for r in rows if r.radius == radius]
            if any(b < a - 1e-9 for a, b in zip(seq, seq[1:])):
                increasing = False
        if final_ok:
            cls = "regular"
        elif increasing and above:
            cls = "irregular"
        else:
            cls = "inconclusive"
        direct = _direct_gap(fld, point)
        out.append(PointRegularity(point=tuple(float(c) for c in point), direct_gap=direct, rows=rows, classification=cls))
    return RegularityReport(
        points=tuple(out),
        h_schedule=h_schedule,
        radius_schedule=radius_schedule,
        probe_scale=probe_scale,
    )


def _direct_gap(fld: MeasureField, point: Sequence[float]) -> float:
    node = snap_point(fld.op.grid, point)
    pos = np.searchsorted(fld.support.indices, node)
    if pos >= fld.support.size or fld.support.indices[pos] != node:
        return float("nan")
    psi = fld.psi_on_support()[pos]
    return float(fld.omega.values[node] - psi)


def _punctured_probe(scn: RealizedScenario, node: int, rho: float) -> np.ndarray:
    center = scn.grid.node_coords(node)
    ball = Ball(center=tuple(center), radius=rho)
    sel = ball.contains(scn.grid, closed=True)
    sel[node] = False
    idx = np.flatnonzero(sel & (scn.mask.classes == INTERIOR))
    if idx.size == 0:
        raise OperatorError(f"probe ball of radius {rho:.4g} contains no interior node besides the center")
    return idx


# ---------------------------------------------------------------------------
# convergence experiments


@dataclass(frozen=True)
class TableRow:
    j: int
    h: float
    sup_gap: float
    monotone_ok: bool


@dataclass(frozen=True)
class ConvergenceTable:
    name: str
    rows: tuple[TableRow, ...]
    threshold: float
    converged: bool
    monotone: bool

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["j", "h", "sup_gap", "monotone_ok"])
            for r in self.rows:
                w.writerow([r.j, repr(r.h), repr(r.sup_gap), str(r.monotone_ok).lower()])


def _build_table(name: str, hs: Sequence[float], gaps: Sequence[float], threshold: float) -> ConvergenceTable:
    rows = []
    for j, (h, g) in enumerate(zip(hs, gaps), start=1):
        ok = True if j == 1 else g <= gaps[j - 2] + 1e-9
        rows.append(TableRow(j=j, h=float(h), sup_gap=float(g), monotone_ok=bool(ok)))
    monotone = all(r.monotone_ok for r in rows)
    converged = bool(rows and rows[-1].sup_gap <= threshold)
    return ConvergenceTable(name=name, rows=tuple(rows), threshold=float(threshold), converged=converged, monotone=monotone)


def _restricted_weight(w: WeightSpec | None, K: NodeSet) -> np.ndarray:
    if w is None:
        return np.full(K.size, -1.0)
    return w.extension.values[K.indices]


def decreasing_compacts_experiment(
    op: DiscreteOperator,
    mask: DomainMask,
    K_sequence: Sequence[NodeSet],
    K_limit: NodeSet,
    w: WeightSpec | None = None,
    opts: SolveOptions | None = None,
    threshold: float | None = None,
) -> ConvergenceTable:
    """Fields of a decreasing chain of supports against the field of their
    limit set. Gaps shrink monotonically because each envelope dominates the
    next pointwise."""
    for a, b in zip(K_sequence, K_sequence[1:]):
        if not np.isin(b.indices, a.indices).all():
            raise OperatorError("support sequence is not decreasing")
    for K in K_sequence:
        if not np.isin(K_limit.indices, K.indices).all():
            raise OperatorError("limit set must be contained in every member")
    omega_lim = _solve_measure(op, mask, K_limit, _restricted_weight(w, K_limit), opts)[0]
    sel = mask.classes != EXTERIOR
    gaps = []
    for K in K_sequence:
        om = _solve_measure(op, mask, K, _restricted_weight(w, K), opts)[0]
        gaps.append(float(np.max(np.abs(om.values[sel] - omega_lim.values[sel]))))
    thr = threshold if threshold is not None else 5.0 * op.grid.h
    return _build_table("decreasing-compacts", [op.grid.h] * len(gaps), gaps, thr)


def increasing_domains_experiment(
    grid: ComplexGrid,
    alpha: AlphaForm,
    domain_shapes: Sequence[object],
    limit_shape: object,
    E_shape: object,
    w_expr: object | None = None,
    opts: SolveOptions | None = None,
    threshold: float | None = None,
) -> ConvergenceTable:
    """Fields over a growing chain of domains (same ambient grid, same
    support) against the field on the limit domain, compared on the first
    domain's interior."""
    masks = [classify_domain(grid, s) for s in domain_shapes]
    mask_lim = classify_domain(grid, limit_shape)
    chain = masks + [mask_lim]
    for a, b in zip(chain, chain[1:]):
        inside = np.zeros(grid.num_nodes, dtype=bool)
        inside[b.interior_idx] = True
        if not inside[a.interior_idx].all():
            raise OperatorError("domain sequence is not increasing")

    def solve_on(mask: DomainMask) -> tuple[GridFunction, np.ndarray]:
        op = assemble_operator(alpha, mask)
        K = nodes_in_shape(mask, E_shape, label="E", closed=True)
        if w_expr is not None:
            w = make_weight(op, mask, K, w_expr)
            psi = w.on_support
        else:
            psi = np.full(K.size, -1.0)
        return _solve_measure(op, mask, K, psi, opts)[0], K.indices

    omega_lim, k_lim = solve_on(mask_lim)
    sel = masks[0].interior_idx
    gaps = []
    for mask in masks:
        om, k_j = solve_on(mask)
        if not np.array_equal(k_j, k_lim):
            raise OperatorError("support nodes drifted between domains; E must sit inside the first domain")
        gaps.append(float(np.max(np.abs(om.values[sel] - omega_lim.values[sel]))))
    thr = threshold if threshold is not None else 5.0 * grid.h
    return _build_table("increasing-domains", [grid.h] * len(gaps), gaps, thr)


def exhaustion_experiment(
    op: DiscreteOperator,
    mask: DomainMask,
    U_shape: object,
    K_sequence: Sequence[NodeSet],
    w: WeightSpec | None = None,
    opts: SolveOptions | None = None,
    threshold: float | None = None,
) -> ConvergenceTable:
    """Fields of an increasing chain of compacts inside an open set against
    the field of the open set's full node collection."""
    U_nodes = nodes_in_shape(mask, U_shape, label="U", closed=False)
    inside_U = np.zeros(mask.grid.num_nodes, dtype=bool)
    inside_U[U_nodes.indices] = True
    for a, b in zip(K_sequence, K_sequence[1:]):
        if not np.isin(a.indices, b.indices).all():
            raise OperatorError("compact sequence is not increasing")
    for K in K_sequence:
        if not inside_U[K.indices].all():
            raise OperatorError("every compact must sit inside the open set")
    omega_U = _solve_measure(op, mask, U_nodes, _restricted_weight(w, U_nodes), opts)[0]
    sel = mask.classes != EXTERIOR
    gaps = []
    for K in K_sequence:
        om = _solve_measure(op, mask, K, _restricted_weight(w, K), opts)[0]
        gaps.append(float(np.max(np.abs(om.values[sel] - omega_U.values[sel]))))
    thr = threshold if threshold is not None else 5.0 * op.grid.h
    return _build_table("exhaustion", [op.grid.h] * len(gaps), gaps, thr)


def polar_union_experiment(
    geom: ScenarioGeometry,
    A_points: Sequence[Sequence[float]],
    h_schedule: Sequence[float],
    exclusion_radius: float = 0.25,
    opts_factory: Callable[[ComplexGrid], SolveOptions] | None = None,
    max_nodes: int | None = None,
) -> ConvergenceTable:
    """Effect of adjoining finitely many isolated nodes to the support,
    measured away from those nodes, across refinement levels. Isolated nodes
    carry vanishing influence only in the limit, so the per-level difference
    must decrease as h does."""
    if opts_factory is None:
        opts_factory = lambda grid: SolveOptions.tuned_for(grid, tolerance=1e-10)
    hs = tuple(sorted(float(h) for h in h_schedule))[::-1]
    geom_E = replace(geom, support_points=())
    geom_EA = replace(geom, support_points=tuple(tuple(p) for p in A_points))
    gaps = []
    for h in hs:
        scn_E = realize(geom_E, h, max_nodes=max_nodes)
        scn_EA = realize(geom_EA, h, max_nodes=max_nodes)
        a_nodes = np.setdiff1d(scn_EA.support.indices, scn_E.support.indices)
        if a_nodes.size != len(A_points):
            raise OperatorError("extra points overlap the base support")
        opts = opts_factory(scn_E.grid)
        om_E = measure_for(scn_E, opts, check_bounds=False)
        om_EA = measure_for(scn_EA, opts, check_bounds=False)
        sel = scn_E.mask.classes != EXTERIOR
        far = sel.copy()
        for p in A_points:
            ball = Ball(center=tuple(float(c) for c in p), radius=exclusion_radius)
            far &= ~ball.contains(scn_E.grid, closed=True)
        idx = np.flatnonzero(far)
        gaps.append(float(np.max(np.abs(om_EA.omega.values[idx] - om_E.omega.values[idx]))))
    table = _build_table("polar-union", hs, gaps, threshold=math.inf)
    return replace(table, converged=table.monotone)


# ---------------------------------------------------------------------------
# eventual-domination harness


@dataclass(frozen=True)
class HartogsResult:
    j0: int | None
    excesses: tuple[float, ...]
    decided: bool
    j_max: int
    eps: float


@dataclass(frozen=True)
class HartogsFamily:
    generate: Callable[[int], GridFunction]
    bound: float
    label: str = ""

    def __call__(self, j: int) -> GridFunction:
        return self.generate(j)


def hartogs_harness(
    sequence_generator,
    g: GridFunction,
    K: NodeSet,
    eps: float,
    op: DiscreteOperator,
    j_max: int = 24,
    bound: float | None = None,
) -> HartogsResult:
    """Find the least j0 with u_j <= g + eps on K for every j0 <= j <= j_max.

    Each generated term must be a discrete subsolution and must respect the
    declared upper bound; failing either is an input error. Exhausting j_max
    without domination returns undecided (j0 = None), not a failure."""
    if bound is None:
        bound = getattr(sequence_generator, "bound", None)
    if bound is None:
        raise OperatorError("the sequence generator must declare an upper bound")
    if eps <= 0:
        raise OperatorError("eps must be positive")
    sel = op.mask.classes != EXTERIOR
    excesses = []
    for j in range(1, j_max + 1):
        u = sequence_generator(j)
        chk = is_alpha_subharmonic(u, op)
        if not chk.verdict:
            raise OperatorError(
                f"term {j} is not a discrete subsolution (residual {chk.min_residual:.3e} at node {chk.worst_node})"
            )
        if float(np.max(u.values[sel])) > bound + 1e-12 * max(1.0, abs(bound)):
            raise OperatorError(f"term {j} exceeds the declared bound {bound}")
        excesses.append(float(np.max(u.values[K.indices] - g.values[K.indices])))
    good = [e <= eps for e in excesses]
    if not good[-1]:
        return HartogsResult(j0=None, excesses=tuple(excesses), decided=False, j_max=j_max, eps=eps)
    j0 = j_max
    while j0 > 1 and good[j0 - 2]:
        j0 -= 1
    return HartogsResult(j0=j0, excesses=tuple(excesses), decided=True, j_max=j_max, eps=eps)


def hartogs_trivial_family(g_sub: GridFunction) -> HartogsFamily:
    """u_j = g_sub - 1/j: subsolutions strictly below their limit."""

    def gen(j: int) -> GridFunction:
        return GridFunction(g_sub.grid, g_sub.values - 1.0 / j, metadata={"family": "trivial", "j": j})

    return HartogsFamily(generate=gen, bound=float(np.max(g_sub.values)), label="trivial")


def hartogs_bump_family(
    g_sub: GridFunction,
    mask: DomainMask,
    eps: float,
    switch_j: int,
    seed: int = 0,
) -> HartogsFamily:
    """A lifted family that sits 2*eps above g until switch_j, then drops to
    excesses eps/2 and below: certifies j0 == switch_j. The lift is a negative
    paraboloid vanishing near the domain edge, so each term stays a
    subsolution; the seed jitters its center."""
    rng = np.random.default_rng(seed)
    grid = mask.grid
    ii = mask.interior_idx
    ctr = grid.node_coords(int(ii[rng.integers(0, ii.size)]))
    bump = SqNormExpr(coeff=1.0, offset=0.0, center=tuple(ctr)).evaluate(grid)
    bump = bump - float(np.max(bump[mask.classes != EXTERIOR]))  # <= 0, convex
    c = (eps / 4.0) / max(1.0, float(np.max(np.abs(bump[ii]))))

    def gen(j: int) -> GridFunction:
        delta = 2.0 * eps if j < switch_j else eps / (2.0 * (j - switch_j + 1))
        vals = g_sub.values + delta + c * bump
        return GridFunction(grid, vals, metadata={"family": "bump", "j": j})

    bound = float(np.max(g_sub.values)) + 2.0 * eps
    return HartogsFamily(generate=gen, bound=bound, label="bump")


def hartogs_undecided_family(g_sub: GridFunction, eps: float) -> HartogsFamily:
    """Constant offenders u_j = g + 2*eps: never dominated, so the harness
    must come back undecided."""

    def gen(j: int) -> GridFunction:
        return GridFunction(g_sub.grid, g_sub.values + 2.0 * eps, metadata={"family": "undecided", "j": j})

    return HartogsFamily(generate=gen, bound=float(np.max(g_sub.values)) + 2.0 * eps, label="undecided")


# ---------------------------------------------------------------------------
# admissible-subsolution corpus


def random_admissible_subsolution(
    op: DiscreteOperator,
    mask: DomainMask,
    K: NodeSet,
    rng: np.random.Generator,
    bound_on_K: float = -1.0,
    pieces: int = 3,
    margin: float = 1e-3,
) -> GridFunction:
    """Max of randomly shifted affine and convex axis-quadratic pieces.

    Each piece is exactly subharmonic for any positive-type operator (affine
    pieces are in the kernel; axis-aligned convex quadratics have nonnegative
    stencil image), each is shifted to sit at or below bound_on_K on K and
    strictly below 0 everywhere, and the pointwise max of subsolutions is a
    subsolution for nonnegative off-center weights."""
    grid = mask.grid
    sel = mask.classes != EXTERIOR
    fields = []
    for _ in range(pieces):
        coeffs = rng.uniform(-0.5, 0.5, grid.num_axes)
        if rng.random() < 0.5:
            vals = AffineExpr(coeffs=tuple(coeffs), offset=0.0).evaluate(grid)
        else:
            quad = rng.uniform(0.0, 0.5, grid.num_axes)
            ctr = tuple(rng.uniform(-0.5, 0.5, grid.num_axes))
            vals = AffineExpr(coeffs=tuple(coeffs), offset=0.0).evaluate(grid)
            vals = vals + SqAxisExpr(coeffs=tuple(quad), center=ctr).evaluate(grid)
        shift = min(
            bound_on_K - float(np.max(vals[K.indices])),
            -margin - float(np.max(vals[sel])),
        )
        fields.append(vals + shift)
    u = np.maximum.reduce(fields)
    out = np.zeros(grid.num_nodes)
    out[sel] = u[sel]
    return GridFunction(grid, out, metadata={"kind": "corpus-subsolution"})
