"""Lattice grids over C^n (n = 1 or 2), domain masks, node sets, distance fields.

Real coordinates are ordered (x1, y1) for n=1 and (x1, y1, x2, y2) for n=2,
where z_j = x_j + i*y_j. Linear node indices are row-major (C order) over that
axis order. Node positions are exactly origin + integer*h per axis, so node
coordinates are bit-reproducible.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ComplexGrid",
    "DomainMask",
    "NodeSet",
    "GridFunction",
    "DistanceField",
    "Ball",
    "Rectangle",
    "Shell",
    "ExplicitMask",
    "ShapeUnion",
    "build_grid",
    "classify_domain",
    "distance_field",
    "nodes_in_shape",
    "snap_point",
    "stencil_offsets",
    "mask_to_csv",
    "mask_from_csv",
    "field_to_csv",
    "field_from_csv",
    "field_to_raw",
    "field_from_raw",
]

INTERIOR = np.uint8(1)
BOUNDARY = np.uint8(2)
EXTERIOR = np.uint8(0)

_CLASS_NAMES = {int(INTERIOR): "interior", int(BOUNDARY): "boundary", int(EXTERIOR): "exterior"}
_CLASS_CODES = {v: k for k, v in _CLASS_NAMES.items()}

DEFAULT_NODE_BUDGET = 2_000_000


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class ComplexGrid:
    """Uniform rectangular lattice on R^{2n} with exact node arithmetic."""

    n: int
    extents: tuple[int, ...]
    h: float
    origin: tuple[float, ...]

    def __post_init__(self):
        if self.n not in (1, 2):
            raise GridError(f"complex dimension must be 1 or 2, got {self.n}")
        if not self.h > 0:
            raise GridError(f"spacing must be positive, got {self.h}")
        if len(self.extents) != 2 * self.n:
            raise GridError(
                f"expected {2 * self.n} extents for n={self.n}, got {len(self.extents)}"
            )
        if len(self.origin) != 2 * self.n:
            raise GridError(
                f"expected {2 * self.n} origin components, got {len(self.origin)}"
            )
        if any(e < 3 for e in self.extents):
            raise GridError(f"every axis needs at least 3 nodes, got {self.extents}")

    @property
    def num_axes(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return self.extents

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.extents))

    @property
    def strides(self) -> tuple[int, ...]:
        # linear-index stride per axis, C order
        s = [1] * self.num_axes
        for a in range(self.num_axes - 2, -1, -1):
            s[a] = s[a + 1] * self.extents[a + 1]
        return tuple(s)

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.h * np.arange(self.extents[axis])

    def axis_names(self) -> tuple[str, ...]:
        return ("x1", "y1") if self.n == 1 else ("x1", "y1", "x2", "y2")

    def multi_index(self, idx: np.ndarray | int) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx), self.extents), axis=-1)

    def linear_index(self, multi: np.ndarray) -> np.ndarray:
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(multi[..., a] for a in range(self.num_axes)), self.extents)

    def node_coords(self, idx: np.ndarray | int) -> np.ndarray:
        m = self.multi_index(idx)
        return np.asarray(self.origin) + self.h * m

    def coords_matrix(self, idx: np.ndarray | None = None) -> np.ndarray:
        """Dense (len, 2n) coordinate matrix. Meant for small selections or
        modest grids; shape membership on big grids goes through the
        broadcasting helpers instead."""
        if idx is None:
            idx = np.arange(self.num_nodes)
        return self.node_coords(np.asarray(idx))

    def same_layout(self, other: "ComplexGrid") -> bool:
        return (
            self.n == other.n
            and self.extents == other.extents
            and self.h == other.h
            and self.origin == other.origin
        )


def build_grid(
    n: int,
    extents: Sequence[int],
    h: float,
    origin: Sequence[float],
    max_nodes: int = DEFAULT_NODE_BUDGET,
) -> ComplexGrid:
    """Build a lattice with deterministic row-major indexing.

    max_nodes guards accidental huge allocations; callers doing scheduled
    refinement studies pass an explicit larger budget.
    """
    grid = ComplexGrid(n=int(n), extents=tuple(int(e) for e in extents), h=float(h), origin=tuple(float(o) for o in origin))
    if grid.num_nodes > max_nodes:
        raise GridError(
            f"grid has {grid.num_nodes} nodes, exceeding the node budget {max_nodes}; "
            "pass max_nodes explicitly for scheduled large runs"
        )
    return grid


def stencil_offsets(n: int) -> np.ndarray:
    """Offsets of the stencil neighborhood: all nonzero {-1,0,1} moves with at
    most two nonzero components (8 moves for n=1, 32 for n=2). This is the
    adjacency that domain classification quantifies over; the assembled
    operator only ever touches a subset of it."""
    d = 2 * n
    offs = []
    for delta in np.ndindex(*([3] * d)):
        v = np.array(delta) - 1
        nz = int(np.count_nonzero(v))
        if 1 <= nz <= 2:
            offs.append(v)
    return np.array(sorted(offs, key=tuple), dtype=np.int64)


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def bbox(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def contains(self, grid: ComplexGrid, closed: bool) -> np.ndarray:
        r2 = _sq_dist_field(grid, self.center)
        rad2 = self.radius * self.radius
        return (r2 <= rad2) if closed else (r2 < rad2)


@dataclass(frozen=True)
class Rectangle:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def bbox(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def contains(self, grid: ComplexGrid, closed: bool) -> np.ndarray:
        inside = np.ones(grid.extents, dtype=bool)
        for a in range(grid.num_axes):
            c = grid.axis_coords(a)
            ok = (c >= self.lo[a]) & (c <= self.hi[a]) if closed else (c > self.lo[a]) & (c < self.hi[a])
            sh = [1] * grid.num_axes
            sh[a] = -1
            inside &= ok.reshape(sh)
        return inside.ravel()


@dataclass(frozen=True)
class Shell:
    """Closed/open spherical shell inner_radius <= |z - center| <= outer_radius."""

    center: tuple[float, ...]
    inner_radius: float
    outer_radius: float

    def bbox(self):
        c = np.asarray(self.center)
        return c - self.outer_radius, c + self.outer_radius

    def contains(self, grid: ComplexGrid, closed: bool) -> np.ndarray:
        r2 = _sq_dist_field(grid, self.center)
        lo2 = self.inner_radius * self.inner_radius
        hi2 = self.outer_radius * self.outer_radius
        if closed:
            return (r2 >= lo2) & (r2 <= hi2)
        return (r2 > lo2) & (r2 < hi2)


@dataclass(frozen=True)
class ExplicitMask:
    """Pre-computed class array, e.g. imported from CSV."""

    classes: np.ndarray

    def contains(self, grid: ComplexGrid, closed: bool) -> np.ndarray:
        raise GridError("explicit masks carry classes directly and are not a membership shape")


@dataclass(frozen=True)
class ShapeUnion:
    shapes: tuple

    def bbox(self):
        los, his = zip(*(s.bbox() for s in self.shapes))
        return np.min(los, axis=0), np.max(his, axis=0)

    def contains(self, grid: ComplexGrid, closed: bool) -> np.ndarray:
        out = np.zeros(grid.num_nodes, dtype=bool)
        for s in self.shapes:
            out |= s.contains(grid, closed)
        return out


def _sq_dist_field(grid: ComplexGrid, center: Sequence[float]) -> np.ndarray:
    """|x - center|^2 over all nodes, built by per-axis broadcasting so no
    (N, 2n) coordinate matrix is ever materialized."""
    acc = None
    for a in range(grid.num_axes):
        d = grid.axis_coords(a) - center[a]
        term = d * d
        sh = [1] * grid.num_axes
        sh[a] = -1
        term = term.reshape(sh)
        acc = term if acc is None else acc + term
    return np.broadcast_to(acc, grid.extents).ravel() if acc.shape != grid.extents else acc.ravel()


# ---------------------------------------------------------------------------
# masks


@dataclass(frozen=True)
class DomainMask:
    """Per-node classification of a computational domain.

    Invariant: every stencil neighbor of an Interior node is Interior or
    Boundary, and no Interior node sits on the outermost grid layer (masks are
    built with at least one all-Exterior layer around the domain).
    """

    grid: ComplexGrid
    classes: np.ndarray
    barrier: "GridFunction | None" = None
    extended: "DomainMask | None" = None
    interior_connected: bool = True

    def __post_init__(self):
        if self.classes.shape != (self.grid.num_nodes,):
            raise GridError("classes array does not match grid size")

    @property
    def interior_idx(self) -> np.ndarray:
        return np.flatnonzero(self.classes == INTERIOR)

    @property
    def boundary_idx(self) -> np.ndarray:
        return np.flatnonzero(self.classes == BOUNDARY)

    @property
    def exterior_idx(self) -> np.ndarray:
        return np.flatnonzero(self.classes == EXTERIOR)

    def with_barrier(self, barrier: "GridFunction") -> "DomainMask":
        return DomainMask(
            grid=self.grid,
            classes=self.classes,
            barrier=barrier,
            extended=self.extended,
            interior_connected=self.interior_connected,
        )

    def interior_count(self) -> int:
        return int(np.count_nonzero(self.classes == INTERIOR))


def classify_domain(grid: ComplexGrid, shape) -> DomainMask:
    """Classify nodes against a shape.

    Interior nodes are the nodes strictly inside the open shape. Boundary
    nodes are the non-interior nodes that are stencil-adjacent to an interior
    node (node-snapped boundary, no cut cells). Everything else is Exterior.

    Raises on empty interior or on an interior that reaches the outermost
    grid layer (the caller must leave at least one exterior layer). A
    disconnected interior is flagged, not rejected.
    """
    if isinstance(shape, ExplicitMask):
        classes = np.asarray(shape.classes, dtype=np.uint8).copy()
        if classes.shape != (grid.num_nodes,):
            raise GridError("explicit mask size does not match grid")
        interior = classes == INTERIOR
        if not interior.any():
            raise GridError("empty interior")
        _check_margin(grid, interior)
        # recompute the boundary ring so that imported masks satisfy the
        # adjacency invariant exactly
        ring = _adjacent_ring(grid, interior)
        classes = np.where(interior, INTERIOR, np.where(ring, BOUNDARY, EXTERIOR)).astype(np.uint8)
        connected = _interior_connected(grid, interior)
        return DomainMask(grid=grid, classes=classes, interior_connected=connected)

    interior = shape.contains(grid, closed=False)
    if not interior.any():
        raise GridError("empty interior")
    _check_margin(grid, interior)
    ring = _adjacent_ring(grid, interior)
    classes = np.where(interior, INTERIOR, np.where(ring, BOUNDARY, EXTERIOR)).astype(np.uint8)
    connected = _interior_connected(grid, interior)
    if not connected:
        warnings.warn("interior is not connected under axis adjacency", stacklevel=2)
    return DomainMask(grid=grid, classes=classes, interior_connected=connected)


def _check_margin(grid: ComplexGrid, interior: np.ndarray) -> None:
    cube = interior.reshape(grid.extents)
    for a in range(grid.num_axes):
        face_lo = np.take(cube, 0, axis=a)
        face_hi = np.take(cube, grid.extents[a] - 1, axis=a)
        if face_lo.any() or face_hi.any():
            raise GridError(
                "shape touches the grid edge; enlarge the box so at least one "
                "exterior layer surrounds the domain"
            )


def _adjacent_ring(grid: ComplexGrid, interior: np.ndarray) -> np.ndarray:
    """Non-interior nodes having an interior stencil neighbor."""
    cube = interior.reshape(grid.extents)
    dilated = np.zeros_like(cube)
    for off in stencil_offsets(grid.n):
        shifted = cube
        for a, o in enumerate(off):
            shifted = np.roll(shifted, int(o), axis=a)
            # kill wrap-around
            if o == 1:
                sl = [slice(None)] * grid.num_axes
                sl[a] = 0
                shifted[tuple(sl)] = False
            elif o == -1:
                sl = [slice(None)] * grid.num_axes
                sl[a] = grid.extents[a] - 1
                shifted[tuple(sl)] = False
        dilated |= shifted
    return (dilated & ~cube).ravel()


def _interior_connected(grid: ComplexGrid, interior: np.ndarray) -> bool:
    from scipy.ndimage import label

    cube = interior.reshape(grid.extents)
    # axis adjacency only (orthogonal structuring element)
    structure = np.zeros((3,) * grid.num_axes, dtype=bool)
    it = np.ndindex(*structure.shape)
    for ix in it:
        v = np.array(ix) - 1
        if np.count_nonzero(v) <= 1:
            structure[ix] = True
    _, count = label(cube, structure=structure)
    return count <= 1


# ---------------------------------------------------------------------------
# node sets and grid functions


@dataclass(frozen=True)
class NodeSet:
    """Sorted, duplicate-free set of Interior node indices."""

    indices: np.ndarray
    label: str = ""

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise GridError("node set indices must be one-dimensional")
        if idx.size > 1 and not (np.diff(idx) > 0).all():
            raise GridError("node set indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def is_empty(self) -> bool:
        return self.indices.size == 0


def make_node_set(mask: DomainMask, indices: Iterable[int], label: str = "") -> NodeSet:
    idx = np.unique(np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64))
    if idx.size and not (mask.classes[idx] == INTERIOR).all():
        bad = idx[mask.classes[idx] != INTERIOR][0]
        raise GridError(f"node set must lie in the interior; node {int(bad)} is not interior")
    return NodeSet(indices=idx, label=label)


def nodes_in_shape(mask: DomainMask, shape, label: str = "", closed: bool = True) -> NodeSet:
    """Snap a shape to a NodeSet: closed-membership nodes intersected with the
    interior. Raises if the result is empty."""
    member = shape.contains(mask.grid, closed=closed)
    idx = np.flatnonzero(member & (mask.classes == INTERIOR))
    if idx.size == 0:
        raise GridError(f"shape snapped to an empty node set ({label or shape})")
    return NodeSet(indices=idx, label=label)


def snap_point(grid: ComplexGrid, point: Sequence[float]) -> int:
    """Nearest node to a physical point (exact for points on the lattice)."""
    multi = []
    for a in range(grid.num_axes):
        k = int(round((point[a] - grid.origin[a]) / grid.h))
        k = min(max(k, 0), grid.extents[a] - 1)
        multi.append(k)
    return int(np.ravel_multi_index(tuple(multi), grid.extents))


@dataclass
class GridFunction:
    """Real-valued function sampled on every node of a grid."""

    grid: ComplexGrid
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.num_nodes,):
            raise GridError("value array does not match grid size")
        self.values = v

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy(), dict(self.metadata))

    def check_finite(self, mask: DomainMask) -> None:
        sel = mask.classes != EXTERIOR
        if not np.isfinite(self.values[sel]).all():
            raise GridError("grid function has non-finite values on interior or boundary nodes")


def constant_function(grid: ComplexGrid, value: float) -> GridFunction:
    return GridFunction(grid, np.full(grid.num_nodes, float(value)))


# ---------------------------------------------------------------------------
# distance fields


@dataclass(frozen=True)
class DistanceField:
    dist: GridFunction
    nearest: np.ndarray  # per node, the global index of a nearest K node


def distance_field(grid: ComplexGrid, K: NodeSet) -> DistanceField:
    """Exact Euclidean nearest-node distance to K, with the realizing K node.

    Distances are computed from integer lattice displacements, so they are
    exact (one correctly-rounded sqrt). Ties are broken toward the lowest
    K-node index.
    """
    if K.is_empty():
        raise GridError("distance field needs a nonempty node set")
    from scipy.spatial import cKDTree

    k_multi = grid.multi_index(K.indices).astype(np.float64)
    all_multi = grid.multi_index(np.arange(grid.num_nodes)).astype(np.float64)
    tree = cKDTree(k_multi)
    kq = min(2, K.size)
    dd, ii = tree.query(all_multi, k=kq)
    if kq == 1:
        dd = dd[:, None]
        ii = ii[:, None]
    best = ii[:, 0].astype(np.int64)
    # repair ties so the lowest K index wins
    if kq == 2:
        tied = np.flatnonzero(dd[:, 1] == dd[:, 0])
        if tied.size:
            k_int = grid.multi_index(K.indices).astype(np.int64)
            q_int = grid.multi_index(tied).astype(np.int64)
            balls = tree.query_ball_point(all_multi[tied], r=dd[tied, 0] * (1.0 + 1e-12))
            for row, node in enumerate(tied):
                cand = np.asarray(balls[row], dtype=np.int64)
                d2 = ((k_int[cand] - q_int[row]) ** 2).sum(axis=1)
                best[node] = cand[d2 == d2.min()].min()
    dist = dd[:, 0] * grid.h
    nearest = K.indices[best]
    return DistanceField(dist=GridFunction(grid, dist), nearest=nearest)


# ---------------------------------------------------------------------------
# import / export

# Masks: one CSV row per node "index,x1,y1[,x2,y2],class".
# Fields: CSV "index,coords...,value" with shortest round-trip floats, or a
# raw little-endian float64 dump plus a JSON sidecar describing the grid.


def mask_to_csv(mask: DomainMask, path: str | Path) -> None:
    grid = mask.grid
    names = grid.axis_names()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", *names, "class"])
        coords = [grid.axis_coords(a) for a in range(grid.num_axes)]
        multis = grid.multi_index(np.arange(grid.num_nodes))
        for i in range(grid.num_nodes):
            row = [i]
            for a in range(grid.num_axes):
                row.append(repr(float(coords[a][multis[i, a]])))
            row.append(_CLASS_NAMES[int(mask.classes[i])])
            w.writerow(row)


def mask_from_csv(path: str | Path) -> DomainMask:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        naxes = len(header) - 2
        if naxes not in (2, 4):
            raise GridError(f"mask CSV must have 2 or 4 coordinate columns, got {naxes}")
        rows = list(r)
    idx = np.array([int(row[0]) for row in rows])
    order = np.argsort(idx)
    coords = np.array([[float(row[1 + a]) for a in range(naxes)] for row in rows])[order]
    classes = np.array([_CLASS_CODES[rows[i][-1]] for i in order], dtype=np.uint8)
    grid = _grid_from_coords(naxes // 2, coords)
    interior = classes == INTERIOR
    if not interior.any():
        raise GridError("empty interior")
    mask = classify_domain(grid, ExplicitMask(classes=classes))
    return mask


def _grid_from_coords(n: int, coords: np.ndarray) -> ComplexGrid:
    axes = []
    for a in range(2 * n):
        u = np.unique(coords[:, a])
        axes.append(u)
    hs = [np.diff(u).min() for u in axes if u.size > 1]
    h = float(min(hs))
    extents = tuple(int(round((u[-1] - u[0]) / h)) + 1 for u in axes)
    origin = tuple(float(u[0]) for u in axes)
    grid = ComplexGrid(n=n, extents=extents, h=h, origin=origin)
    if grid.num_nodes != coords.shape[0]:
        raise GridError("mask CSV rows do not form a complete uniform lattice")
    return grid


def field_to_csv(fn: GridFunction, path: str | Path) -> None:
    grid = fn.grid
    names = grid.axis_names()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", *names, "value"])
        coords = [grid.axis_coords(a) for a in range(grid.num_axes)]
        multis = grid.multi_index(np.arange(grid.num_nodes))
        for i in range(grid.num_nodes):
            row = [i]
            for a in range(grid.num_axes):
                row.append(repr(float(coords[a][multis[i, a]])))
            row.append(repr(float(fn.values[i])))
            w.writerow(row)


def field_from_csv(grid: ComplexGrid, path: str | Path) -> GridFunction:
    with open(path, newline="") as f:
        r = csv.reader(f)
        next(r)
        vals = np.empty(grid.num_nodes)
        seen = 0
        for row in r:
            vals[int(row[0])] = float(row[-1])
            seen += 1
    if seen != grid.num_nodes:
        raise GridError(f"field CSV has {seen} rows, grid has {grid.num_nodes} nodes")
    return GridFunction(grid, vals)


def _sidecar(grid: ComplexGrid, count: int) -> dict:
    return {
        "n": grid.n,
        "extents": list(grid.extents),
        "h": grid.h,
        "origin": list(grid.origin),
        "axis_order": list(grid.axis_names()),
        "count": count,
        "dtype": "<f8",
    }


def field_to_raw(fn: GridFunction, path_base: str | Path) -> tuple[Path, Path]:
    """Write <base>.bin (little-endian float64, C node order) and <base>.json."""
    base = Path(path_base)
    bin_path = base.with_suffix(".bin")
    json_path = base.with_suffix(".json")
    fn.values.astype("<f8").tofile(bin_path)
    json_path.write_text(json.dumps(_sidecar(fn.grid, fn.values.size), indent=2, sort_keys=True) + "\n")
    return bin_path, json_path


def field_from_raw(path_base: str | Path) -> GridFunction:
    base = Path(path_base)
    meta = json.loads(base.with_suffix(".json").read_text())
    grid = ComplexGrid(
        n=int(meta["n"]),
        extents=tuple(int(e) for e in meta["extents"]),
        h=float(meta["h"]),
        origin=tuple(float(o) for o in meta["origin"]),
    )
    vals = np.fromfile(base.with_suffix(".bin"), dtype="<f8")
    if vals.size != meta["count"] or vals.size != grid.num_nodes:
        raise GridError("raw dump length does not match the sidecar descriptor")
    return GridFunction(grid, vals.astype(np.float64))
