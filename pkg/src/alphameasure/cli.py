"""Scenario files, run orchestration, and artifact export.

A scenario is a strict-schema JSON document: unknown keys are errors, the
version field is mandatory, and weight/barrier expressions come from a fixed
whitelist so every input stays auditable. Loading either returns a validated
config or raises with every problem found, not just the first.

A run realizes the scenario's geometry, solves its measure field, executes
the selected check tasks in dependency order, and writes deterministic
artifacts (CSV fields, JSON reports, a hashed run summary). Wall-clock
timings go to a separate file so the data artifacts are byte-identical
across reruns. The process exits 0 exactly when every selected check passed
and no solver diverged.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .envelope import SolveOptions
from .grid import (
    INTERIOR,
    Ball,
    ComplexGrid,
    GridError,
    GridFunction,
    Rectangle,
    Shell,
    ShapeUnion,
    build_grid,
    classify_domain,
    distance_field,
    field_from_csv,
    field_to_csv,
    field_to_raw,
    make_node_set,
    mask_from_csv,
    snap_point,
)
from .holder import (
    check_near_K_condition,
    fit_holder,
    global_holder_report,
    sample_modulus,
)
from .measure import (
    ConstExpr,
    MeasureField,
    RealizedScenario,
    ScenarioGeometry,
    boundary_limit_check,
    check_connection_bounds,
    check_two_constants,
    expr_from_config,
    hartogs_bump_family,
    hartogs_harness,
    hartogs_trivial_family,
    make_weight,
    measure_for,
    random_admissible_subsolution,
    realize,
    subharmonic_measure,
)
from .operators import (
    OperatorError,
    SolverError,
    alpha_form_from_csv,
    assemble_operator,
    form_to_effective_coeffs,
    max_principle_check,
)

__all__ = [
    "ScenarioError",
    "ScenarioConfig",
    "RunSummary",
    "load_scenario",
    "run",
    "export_field",
    "main",
]

SCHEMA_VERSION = 1
CHECK_TASKS = ("connection", "two_constants", "max_principle", "barrier", "holder", "hartogs")
TASK_ORDER = ("measure",) + CHECK_TASKS
_FAULTS = (None, "corrupt_omega")


class ScenarioError(ValueError):
    """Carries every validation problem found in a scenario file."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# schema


def _check_keys(obj: Mapping, allowed: set, where: str, errors: list) -> None:
    extra = set(obj) - allowed
    for k in sorted(extra):
        errors.append(f"{where}: unknown key {k!r}")


def _parse_shape(obj, where: str, errors: list):
    if not isinstance(obj, Mapping):
        errors.append(f"{where}: shape must be an object")
        return None
    kind = obj.get("shape")
    try:
        if kind == "ball":
            _check_keys(obj, {"shape", "center", "radius"}, where, errors)
            return Ball(center=tuple(float(c) for c in obj["center"]), radius=float(obj["radius"]))
        if kind == "rectangle":
            _check_keys(obj, {"shape", "lo", "hi"}, where, errors)
            return Rectangle(lo=tuple(float(c) for c in obj["lo"]), hi=tuple(float(c) for c in obj["hi"]))
        if kind == "shell":
            _check_keys(obj, {"shape", "center", "inner_radius", "outer_radius"}, where, errors)
            return Shell(
                center=tuple(float(c) for c in obj["center"]),
                inner_radius=float(obj["inner_radius"]),
                outer_radius=float(obj["outer_radius"]),
            )
        if kind == "union":
            _check_keys(obj, {"shape", "members"}, where, errors)
            members = [_parse_shape(m, f"{where}.members[{i}]", errors) for i, m in enumerate(obj["members"])]
            if any(m is None for m in members):
                return None
            return ShapeUnion(shapes=tuple(members))
    except (KeyError, TypeError, ValueError) as e:
        errors.append(f"{where}: bad shape fields ({e})")
        return None
    errors.append(f"{where}: unknown shape kind {kind!r}; allowed: ball, rectangle, shell, union")
    return None


def _parse_expr(obj, where: str, errors: list):
    if obj is None:
        return None
    if not isinstance(obj, Mapping):
        errors.append(f"{where}: expected an expression object")
        return None
    try:
        return expr_from_config(obj)
    except ValueError as e:
        errors.append(f"{where}: {e}")
        return None


@dataclass(frozen=True)
class ScenarioConfig:
    version: int
    label: str
    seed: int
    geometry: ScenarioGeometry | None  # None when alpha comes from a CSV
    grid_spec: dict
    alpha_spec: dict
    weight_csv: str | None
    solver: dict
    tasks: tuple
    output_dir: str
    fault: str | None
    holder_opts: dict
    hartogs_opts: dict
    two_constants_opts: dict
    raw: dict
    source_path: str

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(canonical).hexdigest()


_TOP_KEYS = {
    "version",
    "label",
    "seed",
    "grid",
    "domain",
    "alpha",
    "support",
    "weight",
    "barrier",
    "solver",
    "tasks",
    "output_dir",
    "fault",
    "holder_opts",
    "hartogs_opts",
    "two_constants_opts",
}


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    with open(path) as f:
        raw = json.load(f)
    errors: list[str] = []
    if not isinstance(raw, Mapping):
        raise ScenarioError(["scenario must be a JSON object"])
    _check_keys(raw, _TOP_KEYS, "top level", errors)

    version = raw.get("version")
    if version is None:
        errors.append("missing mandatory key 'version'")
    elif version != SCHEMA_VERSION:
        errors.append(f"unsupported version {version!r}; this build reads version {SCHEMA_VERSION}")

    label = str(raw.get("label", path.stem))
    try:
        seed = int(raw.get("seed", 0))
    except (TypeError, ValueError):
        errors.append("seed must be an integer")
        seed = 0

    # grid
    n = None
    box = None
    h = None
    base_grid = None
    g = raw.get("grid")
    if not isinstance(g, Mapping):
        errors.append("missing or malformed 'grid' section")
    else:
        _check_keys(g, {"n", "box", "h"}, "grid", errors)
        n = g.get("n")
        if n not in (1, 2):
            errors.append(f"grid.n must be 1 or 2, got {n!r}")
            n = None
        try:
            box = tuple((float(lo), float(hi)) for lo, hi in g.get("box", []))
            h = float(g.get("h", 0.0))
            if h <= 0:
                errors.append("grid.h must be positive")
            if n is not None and len(box) != 2 * n:
                errors.append(f"grid.box needs {2 * n} axis ranges for n={n}, got {len(box)}")
        except (TypeError, ValueError):
            errors.append("grid.box must be a list of [lo, hi] pairs")
            box = None
    if n is not None and box is not None and h and h > 0 and len(box) == 2 * n:
        counts = []
        spans_ok = True
        for lo, hi in box:
            m = round((hi - lo) / h)
            if abs(m * h - (hi - lo)) > 1e-9:
                errors.append(f"grid box span {hi - lo} is not an integer multiple of h")
                spans_ok = False
            counts.append(int(m) + 1)
        if spans_ok:
            try:
                base_grid = build_grid(n, counts, h, [lo for lo, _ in box])
            except GridError as e:
                errors.append(f"grid: {e}")

    # domain
    domain = None
    if "domain" not in raw:
        errors.append("missing mandatory key 'domain'")
    else:
        domain = _parse_shape(raw["domain"], "domain", errors)

    # alpha: exactly one variant
    alpha_spec = raw.get("alpha")
    alpha_kwargs = None
    alpha_csv = None
    if not isinstance(alpha_spec, Mapping):
        errors.append("missing or malformed 'alpha' section")
        alpha_spec = {}
    else:
        _check_keys(
            alpha_spec,
            {"scale", "a", "a11", "a22", "a12_re", "a12_im", "printed", "csv"},
            "alpha",
            errors,
        )
        scale = float(alpha_spec.get("scale", 1.0))
        variants = [
            "a" in alpha_spec,
            any(k in alpha_spec for k in ("a11", "a22", "a12_re", "a12_im")),
            "printed" in alpha_spec,
            "csv" in alpha_spec,
        ]
        if sum(variants) != 1:
            errors.append("alpha: exactly one of 'a', effective matrix entries, 'printed', 'csv' is required")
        elif "csv" in alpha_spec:
            alpha_csv = str(Path(path.parent, alpha_spec["csv"]))
            if not Path(alpha_csv).exists():
                errors.append(f"alpha.csv path does not exist: {alpha_csv}")
        elif "printed" in alpha_spec:
            printed = alpha_spec["printed"]
            if not isinstance(printed, Mapping):
                errors.append("alpha.printed must be an object of printed coefficients")
            else:
                _check_keys(printed, {"c", "c11", "c22", "c12_re", "c12_im", "c21_re", "c21_im"}, "alpha.printed", errors)
                if n is not None and not errors:
                    try:
                        eff = form_to_effective_coeffs(n, scale, **{k: float(v) for k, v in printed.items()})
                        if n == 1:
                            alpha_kwargs = {"scale": scale, "a": float(np.asarray(eff.a).ravel()[0])}
                        else:
                            alpha_kwargs = {
                                "scale": scale,
                                "a11": float(np.asarray(eff.a11).ravel()[0]),
                                "a22": float(np.asarray(eff.a22).ravel()[0]),
                                "a12_re": float(np.asarray(eff.a12_re).ravel()[0]),
                                "a12_im": float(np.asarray(eff.a12_im).ravel()[0]),
                            }
                    except OperatorError as e:
                        errors.append(f"alpha.printed: {e}")
        else:
            alpha_kwargs = {"scale": scale}
            for k in ("a", "a11", "a22", "a12_re", "a12_im"):
                if k in alpha_spec:
                    alpha_kwargs[k] = float(alpha_spec[k])

    # support
    support_shapes: list = []
    support_points: list = []
    sup = raw.get("support")
    if not isinstance(sup, Mapping):
        errors.append("missing or malformed 'support' section")
    else:
        _check_keys(sup, {"shapes", "points", "nodes", "mask_csv"}, "support", errors)
        for i, s in enumerate(sup.get("shapes", [])):
            parsed = _parse_shape(s, f"support.shapes[{i}]", errors)
            if parsed is not None:
                support_shapes.append(parsed)
        for p in sup.get("points", []):
            support_points.append(tuple(float(c) for c in p))
        nodes = sup.get("nodes", [])
        if nodes and base_grid is None:
            errors.append("support.nodes needs a valid grid section")
        elif nodes:
            for k in nodes:
                k = int(k)
                if not 0 <= k < base_grid.num_nodes:
                    errors.append(f"support.nodes: index {k} outside the grid")
                else:
                    support_points.append(tuple(float(c) for c in base_grid.node_coords(k)))
        if "mask_csv" in sup:
            mpath = Path(path.parent, sup["mask_csv"])
            if not mpath.exists():
                errors.append(f"support.mask_csv path does not exist: {mpath}")
            else:
                kmask = mask_from_csv(mpath)
                for k in kmask.interior_idx:
                    support_points.append(tuple(float(c) for c in kmask.grid.node_coords(int(k))))
        if not (support_shapes or support_points):
            errors.append("support must name at least one shape, point, node, or mask")

    # weight
    weight_expr = None
    weight_csv = None
    holder_constant = None
    holder_exponent = None
    wspec = raw.get("weight")
    if wspec is not None:
        if not isinstance(wspec, Mapping):
            errors.append("weight must be an object or null")
        else:
            _check_keys(wspec, {"expr", "csv", "holder_constant", "holder_exponent"}, "weight", errors)
            if ("expr" in wspec) == ("csv" in wspec):
                errors.append("weight: exactly one of 'expr' or 'csv' is required")
            if "expr" in wspec:
                weight_expr = _parse_expr(wspec["expr"], "weight.expr", errors)
                if isinstance(weight_expr, ConstExpr) and weight_expr.value >= 0:
                    errors.append("weight.expr: sup psi < 0 required")
            if "csv" in wspec:
                weight_csv = str(Path(path.parent, wspec["csv"]))
                if not Path(weight_csv).exists():
                    errors.append(f"weight.csv path does not exist: {weight_csv}")
            holder_constant = wspec.get("holder_constant")
            holder_exponent = wspec.get("holder_exponent")

    # barrier
    barrier_expr = _parse_expr(raw.get("barrier"), "barrier", errors)

    # solver
    solver = dict(raw.get("solver", {}))
    _check_keys(solver, {"tolerance", "max_sweeps", "relaxation", "ordering"}, "solver", errors)

    # tasks
    tasks = tuple(raw.get("tasks", ["measure"]))
    for t in tasks:
        if t not in TASK_ORDER:
            errors.append(f"unknown task {t!r}; allowed: {', '.join(TASK_ORDER)}")

    output_dir = str(raw.get("output_dir", "out"))
    fault = raw.get("fault")
    if fault not in _FAULTS:
        errors.append(f"unknown fault {fault!r}; allowed: {_FAULTS[1:]}")

    holder_opts = dict(raw.get("holder_opts", {}))
    _check_keys(holder_opts, {"C", "lambda", "collar_width", "pair_budget"}, "holder_opts", errors)
    hartogs_opts = dict(raw.get("hartogs_opts", {}))
    _check_keys(hartogs_opts, {"eps", "switch_j", "j_max"}, "hartogs_opts", errors)
    tc_opts = dict(raw.get("two_constants_opts", {}))
    _check_keys(tc_opts, {"count"}, "two_constants_opts", errors)

    if errors:
        raise ScenarioError(errors)

    geometry = None
    if alpha_csv is None:
        geometry = ScenarioGeometry(
            n=n,
            box=box,
            domain=domain,
            alpha=alpha_kwargs,
            support_shapes=tuple(support_shapes),
            support_points=tuple(support_points),
            weight=weight_expr,
            barrier=barrier_expr,
            holder_constant=holder_constant,
            holder_exponent=holder_exponent,
            label=label,
        )
    else:
        # per-node coefficients are resolution-bound; keep the pieces for a
        # direct (non-refinable) realization
        geometry = None

    return ScenarioConfig(
        version=SCHEMA_VERSION,
        label=label,
        seed=seed,
        geometry=geometry,
        grid_spec={"n": n, "box": [list(b) for b in box], "h": h},
        alpha_spec={"csv": alpha_csv, "domain": domain, "barrier": barrier_expr, "weight": weight_expr,
                    "holder_constant": holder_constant, "holder_exponent": holder_exponent,
                    "support_shapes": tuple(support_shapes), "support_points": tuple(support_points)}
        if alpha_csv
        else {},
        weight_csv=weight_csv,
        solver=solver,
        tasks=tasks,
        output_dir=output_dir,
        fault=fault,
        holder_opts=holder_opts,
        hartogs_opts=hartogs_opts,
        two_constants_opts=tc_opts,
        raw=dict(raw),
        source_path=str(path),
    )


# ---------------------------------------------------------------------------
# realization and solving


def _realize_config(cfg: ScenarioConfig, h: float | None = None) -> RealizedScenario:
    if cfg.geometry is not None and cfg.weight_csv is None:
        return realize(cfg.geometry, h if h is not None else cfg.grid_spec["h"])
    if h is not None and h != cfg.grid_spec["h"]:
        raise ScenarioError(["per-node coefficient or weight files cannot be refined to a different h"])
    # direct path for resolution-bound inputs
    n = cfg.grid_spec["n"]
    h0 = cfg.grid_spec["h"]
    box = cfg.grid_spec["box"]
    counts = [int(round((hi - lo) / h0)) + 1 for lo, hi in box]
    grid = build_grid(n, counts, h0, [lo for lo, _ in box])
    spec = cfg.alpha_spec if cfg.alpha_spec else None
    if spec is not None:
        domain = spec["domain"]
        mask = classify_domain(grid, domain)
        if spec["barrier"] is not None:
            from .measure import _realized_barrier

            mask = mask.with_barrier(_realized_barrier(grid, mask, spec["barrier"]))
        alpha = alpha_form_from_csv(grid, spec["csv"])
        op = assemble_operator(alpha, mask)
        idx = np.empty(0, dtype=np.int64)
        for s in spec["support_shapes"]:
            idx = np.union1d(idx, np.flatnonzero(s.contains(grid, closed=True)))
        for p in spec["support_points"]:
            idx = np.union1d(idx, [snap_point(grid, p)])
        idx = idx[mask.classes[idx] == INTERIOR]
        K = make_node_set(mask, idx, label="K")
        weight = None
        w_src = spec["weight"]
        if cfg.weight_csv is not None:
            w_src = field_from_csv(grid, cfg.weight_csv)
        if w_src is not None and K.size:
            weight = make_weight(op, mask, K, w_src, spec["holder_constant"], spec["holder_exponent"])
        geom = ScenarioGeometry(n=n, box=tuple(tuple(b) for b in box), domain=domain, alpha={}, label=cfg.label)
        return RealizedScenario(geometry=geom, grid=grid, mask=mask, op=op, support=K, weight=weight)
    # geometry present but weight comes from a file
    scn = realize(cfg.geometry, h0)
    wf = field_from_csv(scn.grid, cfg.weight_csv)
    weight = make_weight(
        scn.op, scn.mask, scn.support, wf, cfg.geometry.holder_constant, cfg.geometry.holder_exponent
    )
    return RealizedScenario(
        geometry=scn.geometry, grid=scn.grid, mask=scn.mask, op=scn.op, support=scn.support, weight=weight
    )


def _solve_options(grid: ComplexGrid, solver: Mapping) -> SolveOptions:
    kw = {}
    if "tolerance" in solver:
        kw["tolerance"] = float(solver["tolerance"])
    if "max_sweeps" in solver:
        kw["max_sweeps"] = int(solver["max_sweeps"])
    if "ordering" in solver:
        kw["ordering"] = str(solver["ordering"])
    relax = solver.get("relaxation", "tuned")
    if relax == "tuned":
        return SolveOptions.tuned_for(grid, **kw)
    kw["relaxation"] = float(relax)
    return SolveOptions(**kw)


def _apply_fault(cfg: ScenarioConfig, fld: MeasureField) -> MeasureField:
    if cfg.fault is None:
        return fld
    # push the field below its scaling lower bound so a downstream check trips
    vals = fld.omega.values.copy()
    shift = 0.5 * abs(fld.inf_psi())
    vals[fld.mask.interior_idx] -= shift
    omega = GridFunction(fld.omega.grid, vals, metadata=dict(fld.omega.metadata, fault=cfg.fault))
    return replace(fld, omega=omega)


# ---------------------------------------------------------------------------
# run summary


@dataclass(frozen=True)
class RunSummary:
    label: str
    config_hash: str
    tasks: tuple  # ((name, status), ...) in execution order
    scalars: dict
    artifacts: tuple
    exit_code: int
    timings: dict = dc_field(default_factory=dict, compare=False)

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "config_hash": self.config_hash,
            "tasks": {name: status for name, status in self.tasks},
            "scalars": self.scalars,
            "artifacts": list(self.artifacts),
            "exit_code": self.exit_code,
        }


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def export_field(fn: GridFunction, path: str | Path, format: str = "csv"):
    """Write a field so that importing it reproduces the values bit-exactly."""
    if format == "csv":
        field_to_csv(fn, path)
        return (Path(path),)
    if format == "raw+json":
        return field_to_raw(fn, path)
    raise ValueError(f"unknown export format {format!r}; allowed: csv, raw+json")


# ---------------------------------------------------------------------------
# tasks


def run(cfg: ScenarioConfig, out_dir: str | Path | None = None, dry_run: bool = False) -> RunSummary:
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    selected = [t for t in TASK_ORDER if t == "measure" or t in cfg.tasks]
    if dry_run:
        counts = [int(round((hi - lo) / cfg.grid_spec["h"])) + 1 for lo, hi in cfg.grid_spec["box"]]
        nodes = int(np.prod(counts))
        print(f"scenario {cfg.label}: {nodes} nodes, h={cfg.grid_spec['h']}")
        print(f"tasks: {' -> '.join(selected)}")
        print(f"output: {out}")
        print("dry run, nothing executed")
        return RunSummary(cfg.label, cfg.config_hash, tuple((t, "planned") for t in selected), {}, (), 0)

    out.mkdir(parents=True, exist_ok=True)
    statuses: list[tuple[str, str]] = []
    scalars: dict = {}
    artifacts: list[str] = []
    timings: dict = {}
    failed = False

    t0 = time.perf_counter()
    try:
        scn = _realize_config(cfg)
        opts = _solve_options(scn.grid, cfg.solver)
        fld = measure_for(scn, opts)
        statuses.append(("measure", "done"))
        env = fld.envelope
        scalars["measure"] = {
            "kind": fld.kind,
            "support_nodes": scn.support.size,
            "interior_nodes": scn.mask.interior_count(),
            "iterations": env.iterations if env else 0,
            "final_update": env.final_update if env else 0.0,
            "certificate": env.certificate if env else 0.0,
            "res_tol": env.res_tol if env else 0.0,
            "contact_nodes": int(env.contact.size) if env else 0,
        }
    except (SolverError, OperatorError, GridError) as e:
        statuses.append(("measure", f"error: {e}"))
        summary = RunSummary(cfg.label, cfg.config_hash, tuple(statuses), scalars, (), 1)
        _write_json(out / "run_summary.json", summary.to_json_dict())
        return summary
    timings["measure"] = time.perf_counter() - t0

    fld = _apply_fault(cfg, fld)
    if cfg.fault:
        scalars["measure"]["fault"] = cfg.fault

    for name in export_field(fld.omega, out / "omega.csv", "csv") + export_field(fld.omega, out / "omega", "raw+json"):
        artifacts.append(Path(name).name)

    for task in selected:
        if task == "measure":
            continue
        t0 = time.perf_counter()
        try:
            status, extra, files = _run_task(task, cfg, scn, fld, opts, out)
        except (SolverError, OperatorError, GridError, ValueError) as e:
            status, extra, files = f"error: {e}", {}, []
        timings[task] = time.perf_counter() - t0
        statuses.append((task, status))
        if extra:
            scalars[task] = extra
        artifacts.extend(files)
        if status not in ("pass", "skipped"):
            failed = True

    exit_code = 1 if failed else 0
    summary = RunSummary(
        label=cfg.label,
        config_hash=cfg.config_hash,
        tasks=tuple(statuses),
        scalars=scalars,
        artifacts=tuple(artifacts),
        exit_code=exit_code,
        timings=timings,
    )
    _write_json(out / "run_summary.json", summary.to_json_dict())
    _write_json(out / "timings.json", {k: round(v, 6) for k, v in timings.items()})
    return summary


def _run_task(task, cfg, scn, fld, opts, out: Path):
    if task == "connection":
        if fld.weight is None:
            return "skipped", {"reason": "unweighted scenario"}, []
        reference = subharmonic_measure(scn.op, scn.mask, scn.support, opts)
        rep = check_connection_bounds(fld, reference)
        _write_json(out / "connection_report.json", rep.to_json_dict())
        return ("pass" if rep.passed else "fail"), {"max_violation": rep.max_violation}, ["connection_report.json"]

    if task == "two_constants":
        count = int(cfg.two_constants_opts.get("count", 20))
        rng = np.random.default_rng(cfg.seed)
        worst = 0.0
        rows = []
        ok = True
        for i in range(count):
            u = random_admissible_subsolution(scn.op, scn.mask, scn.support, rng)
            r = float(np.max(u.values[scn.support.indices]))
            rep = check_two_constants(u, scn.support, r, 0.0, fld)
            rows.append(rep.to_json_dict())
            worst = max(worst, rep.max_violation)
            ok = ok and rep.passed
        _write_json(out / "two_constants_report.json", {"count": count, "max_violation": worst, "cases": rows})
        return ("pass" if ok else "fail"), {"count": count, "max_violation": worst}, ["two_constants_report.json"]

    if task == "max_principle":
        tol = 2.0 * (fld.envelope.res_tol if fld.envelope else 1e-9)
        rep = max_principle_check(fld.omega, scn.mask, scn.op, tol=tol)
        _write_json(
            out / "max_principle_report.json",
            {"holds": rep.holds, "interior_max": rep.interior_max, "boundary_max": rep.boundary_max},
        )
        return ("pass" if rep.holds else "fail"), {"interior_max": rep.interior_max}, ["max_principle_report.json"]

    if task == "barrier":
        if scn.mask.barrier is None:
            return "skipped", {"reason": "scenario declares no barrier"}, []
        rep = boundary_limit_check(fld)
        _write_json(out / "barrier_report.json", rep.to_json_dict())
        return ("pass" if rep.passed else "fail"), {"max_violation": rep.max_violation, "C": rep.details.get("C")}, [
            "barrier_report.json"
        ]

    if task == "holder":
        return _run_holder(cfg, scn, fld, out)

    if task == "hartogs":
        eps = float(cfg.hartogs_opts.get("eps", 0.05))
        switch_j = int(cfg.hartogs_opts.get("switch_j", 4))
        j_max = int(cfg.hartogs_opts.get("j_max", 24))
        g = fld.omega
        trivial = hartogs_trivial_family(g)
        r1 = hartogs_harness(trivial, g, scn.support, eps, scn.op, j_max=j_max)
        bump = hartogs_bump_family(g, scn.mask, eps, switch_j, seed=cfg.seed)
        r2 = hartogs_harness(bump, g, scn.support, eps, scn.op, j_max=j_max)
        ok = r1.j0 == 1 and r2.decided and r2.j0 == switch_j
        _write_json(
            out / "hartogs_report.json",
            {
                "trivial": {"j0": r1.j0, "decided": r1.decided},
                "bump": {"j0": r2.j0, "decided": r2.decided, "expected_j0": switch_j},
                "eps": eps,
            },
        )
        return ("pass" if ok else "fail"), {"trivial_j0": r1.j0, "bump_j0": r2.j0}, ["hartogs_report.json"]

    raise ValueError(f"unknown task {task!r}")


def _run_holder(cfg, scn, fld, out: Path):
    budget = int(cfg.holder_opts.get("pair_budget", 400))
    lam = float(cfg.holder_opts.get("lambda", 1.0))
    width = cfg.holder_opts.get("collar_width")
    width = float(width) if width is not None else 8.0 * scn.grid.h

    interior_region = make_node_set(scn.mask, scn.mask.interior_idx, label="interior")
    s_int = sample_modulus(fld, interior_region, budget, cfg.seed)
    interior_fit = fit_holder(s_int)

    df = distance_field(scn.grid, scn.support)
    collar_idx = np.flatnonzero((df.dist.values > 0) & (df.dist.values <= width) & (scn.mask.classes == INTERIOR))
    collar_region = make_node_set(scn.mask, collar_idx, label="collar")
    s_col = sample_modulus(fld, collar_region, budget, cfg.seed + 1)
    collar_fit = fit_holder(s_col)

    files = []
    for name, s in (("modulus_interior.csv", s_int), ("modulus_collar.csv", s_col)):
        with open(out / name, "w") as f:
            f.write("separation,oscillation\n")
            for d, o in zip(s.separations, s.oscillations):
                f.write(f"{d!r},{o!r}\n")
        files.append(name)

    C = cfg.holder_opts.get("C")
    scalars = {
        "lambda_interior": interior_fit.lam_hat,
        "lambda_collar": collar_fit.lam_hat,
        "C_interior": interior_fit.c_hat,
    }
    near_ok = True
    near_json = None
    if C is not None:
        rep = check_near_K_condition(fld, scn.support, fld.weight, float(C), lam, width)
        near_ok = rep.passed
        near_json = rep.to_json_dict()
        scalars["near_K_violation"] = rep.max_violation
    else:
        # informational: tightest constant the data supports at this lambda
        d = df.dist.values[collar_idx]
        psi = fld.weight.extension.values[df.nearest[collar_idx]] if fld.weight else np.full(collar_idx.size, -1.0)
        osc = np.abs(fld.omega.values[collar_idx] - psi)
        scalars["empirical_C"] = float(np.max(osc / np.power(d, lam)))

    rep_global = global_holder_report(fld, fld.weight, collar_fit, interior_fit)
    _write_json(
        out / "holder_fit.json",
        {
            "interior": {**interior_fit.to_json_dict(), "samples_csv_path": "modulus_interior.csv"},
            "collar": {**collar_fit.to_json_dict(), "samples_csv_path": "modulus_collar.csv"},
            "near_K": near_json,
            "global": rep_global.to_json_dict(),
        },
    )
    files.append("holder_fit.json")
    ok = near_ok and rep_global.passed
    scalars["global_passed"] = rep_global.passed
    return ("pass" if ok else "fail"), scalars, files


# ---------------------------------------------------------------------------
# refinement command


def refine(cfg: ScenarioConfig, levels: int, out_dir: str | Path | None = None) -> int:
    if levels < 2:
        raise ScenarioError(["refine needs at least 2 levels"])
    if cfg.geometry is None or cfg.weight_csv is not None:
        raise ScenarioError(["per-node coefficient or weight files cannot be refined"])
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    h0 = cfg.grid_spec["h"]
    fields = []
    for k in range(levels):
        h = h0 / (2**k)
        scn = _realize_config(cfg, h=h)
        opts = _solve_options(scn.grid, cfg.solver)
        fields.append((h, scn, measure_for(scn, opts, check_bounds=False)))
    print("j,h,sup_gap,monotone_ok")
    rows = []
    prev_gap = None
    monotone = True
    for j in range(1, levels):
        h_c, scn_c, f_c = fields[j - 1]
        h_f, scn_f, f_f = fields[j]
        sel = np.flatnonzero(scn_c.mask.classes != 0)
        coarse_multi = scn_c.grid.multi_index(sel) * 2
        fine_idx = scn_f.grid.linear_index(coarse_multi)
        gap = float(np.max(np.abs(f_f.omega.values[fine_idx] - f_c.omega.values[sel])))
        ok = prev_gap is None or gap <= prev_gap + 1e-9
        monotone = monotone and ok
        prev_gap = gap
        rows.append((j, h_f, gap, ok))
        print(f"{j},{h_f!r},{gap!r},{str(ok).lower()}")
    with open(out / "refine_table.csv", "w") as f:
        f.write("j,h,sup_gap,monotone_ok\n")
        for j, h, gap, ok in rows:
            f.write(f"{j},{h!r},{gap!r},{str(ok).lower()}\n")
    return 0 if monotone else 1


# ---------------------------------------------------------------------------
# entry point


_SUITES = {
    "connection": ("connection",),
    "two-constants": ("two_constants",),
    "two_constants": ("two_constants",),
    "barrier": ("barrier",),
    "max-principle": ("max_principle",),
    "max_principle": ("max_principle",),
    "all": CHECK_TASKS,
}


def _apply_thread_env() -> None:
    v = os.environ.get("ALPHAMEASURE_NUM_THREADS")
    if not v:
        return
    try:
        k = max(1, int(v))
    except ValueError:
        return
    try:
        import numba

        numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))
    except Exception:
        pass


def main(argv: Sequence[str] | None = None) -> int:
    _apply_thread_env()
    parser = argparse.ArgumentParser(prog="alphameasure", description="measure-field solver and check runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a scenario and run its configured tasks")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", default=None)
    p_solve.add_argument("--dry-run", action="store_true")

    p_verify = sub.add_parser("verify", help="run one named check suite")
    p_verify.add_argument("--config", required=True)
    p_verify.add_argument("--suite", required=True, choices=sorted(_SUITES))
    p_verify.add_argument("--out", default=None)

    p_refine = sub.add_parser("refine", help="halve h repeatedly and report the convergence table")
    p_refine.add_argument("--config", required=True)
    p_refine.add_argument("--levels", type=int, default=3)
    p_refine.add_argument("--out", default=None)

    p_holder = sub.add_parser("holder", help="run only the continuity-modulus pipeline")
    p_holder.add_argument("--config", required=True)
    p_holder.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        cfg = load_scenario(args.config)
    except ScenarioError as e:
        for msg in e.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return 2

    try:
        if args.command == "solve":
            summary = run(cfg, out_dir=args.out, dry_run=args.dry_run)
        elif args.command == "verify":
            cfg = replace(cfg, tasks=_SUITES[args.suite])
            summary = run(cfg, out_dir=args.out)
        elif args.command == "refine":
            return refine(cfg, args.levels, out_dir=args.out)
        else:  # holder
            cfg = replace(cfg, tasks=("holder",))
            summary = run(cfg, out_dir=args.out)
    except ScenarioError as e:
        for msg in e.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except (SolverError, OperatorError, GridError) as e:
        print(f"run failed: {e}", file=sys.stderr)
        return 1

    for name, status in summary.tasks:
        print(f"{name}: {status}")
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
