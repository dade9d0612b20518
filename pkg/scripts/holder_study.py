"""Continuity-modulus study: synthetic calibration, then field fits.

Part one samples pure power-law fields dist(z, K)^lam and checks the fitter
recovers lam. Part two fits the disc measure field and, optionally, the
square-root weighted variant, reporting collar and interior exponents plus
the consolidated verdict.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from alphameasure.envelope import SolveOptions
from alphameasure.grid import (
    INTERIOR,
    Ball,
    GridFunction,
    NodeSet,
    build_grid,
    classify_domain,
    distance_field,
    nodes_in_shape,
)
from alphameasure.holder import check_near_K_condition, fit_holder, global_holder_report, sample_modulus
from alphameasure.measure import RadialPowExpr, make_weight, subharmonic_measure, weighted_measure
from alphameasure.operators import AlphaForm, assemble_operator


def build_disc(h):
    m = int(round(2.0 / h)) + 1
    g = build_grid(1, (m, m), h, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=1.0))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    K = nodes_in_shape(mask, Ball(center=(0.0, 0.0), radius=0.25), label="K")
    return g, mask, op, K


def synthetic_calibration(h, budget, seeds):
    g, mask, _, K = build_disc(h)
    d = distance_field(g, K).dist.values
    region = NodeSet(indices=np.flatnonzero((mask.classes == INTERIOR) & (d <= 0.45)), label="collar")
    print("synthetic calibration (true exponent -> fitted, per seed)")
    for lam in (0.5, 1.0):
        fn = GridFunction(g, np.power(d, lam))
        hats = [fit_holder(sample_modulus(fn, region, pair_budget=budget, seed=s)).lam_hat for s in seeds]
        print(f"  {lam}: " + " ".join(f"{v:.3f}" for v in hats) + f"  (max err {max(abs(v - lam) for v in hats):.3f})")


def field_fits(h, budget, weighted, cap):
    g, mask, op, K = build_disc(h)
    opts = SolveOptions.tuned_for(g, tolerance=1e-10)
    w = None
    if weighted:
        expr = RadialPowExpr(coeff=0.5, offset=-1.0, power=0.5, center=(0.0, 0.0), mollify=2.0)
        w = make_weight(op, mask, K, expr, holder_constant=0.5, holder_exponent=0.5)
        fld = weighted_measure(op, mask, K, w, opts, check_bounds=False)
    else:
        fld = subharmonic_measure(op, mask, K, opts)

    d = distance_field(g, K).dist.values
    collar = NodeSet(
        indices=np.flatnonzero((mask.classes == INTERIOR) & (d > 0) & (d <= 8 * h)), label="collar"
    )
    r = np.linalg.norm(g.coords_matrix(), axis=1)
    annulus = NodeSet(indices=np.flatnonzero((mask.classes == INTERIOR) & (r > 0.25)), label="annulus")

    cf = fit_holder(sample_modulus(fld, collar, pair_budget=budget, seed=0))
    itf = fit_holder(sample_modulus(fld, annulus, pair_budget=2 * budget, seed=0), separation_cap=cap)
    tag = "weighted" if weighted else "unweighted"
    print(f"{tag} field at h=1/{int(round(1 / h))}:")
    print(f"  collar fit:   C={cf.c_hat:.3f} lam={cf.lam_hat:.3f} over {cf.bin_count} bins")
    print(f"  interior fit: C={itf.c_hat:.3f} lam={itf.lam_hat:.3f} over {itf.bin_count} bins")
    near = check_near_K_condition(fld, K, w, C=4.5, lam=1.0 if not weighted else 0.5)
    print(f"  near-support bound C=4.5: {'holds' if near.passed else 'violated'} "
          f"(max violation {near.max_violation:.2e})")
    rep = global_holder_report(fld, w, cf, itf)
    print(f"  consolidated: global lam={rep.lambda_global:.3f}, "
          f"target {rep.details.get('target', 0.0):.3f}, passed={rep.passed}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=1 / 64)
    ap.add_argument("--budget", type=int, default=2000)
    ap.add_argument("--seeds", type=int, default=6)
    ap.add_argument("--separation-cap", type=float, default=0.125)
    ap.add_argument("--skip-weighted", action="store_true")
    args = ap.parse_args()

    synthetic_calibration(args.h, args.budget, range(args.seeds))
    field_fits(args.h, args.budget, weighted=False, cap=args.separation_cap)
    if not args.skip_weighted:
        field_fits(args.h, args.budget, weighted=True, cap=args.separation_cap)
    return 0


if __name__ == "__main__":
    sys.exit(main())
