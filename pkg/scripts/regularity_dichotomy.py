"""Classify support points as regular or irregular under grid refinement.

The shipped geometry is a thin spherical shell in two complex variables with
one extra isolated node at the origin. Local measure fields restricted to
shrinking balls distinguish the two: near a shell point the field still
reaches the obstacle, near the isolated center it does not, and the gap grows
toward the full obstacle depth as h shrinks.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from alphameasure.envelope import SolveOptions
from alphameasure.grid import Ball, Shell
from alphameasure.measure import ScenarioGeometry, measure_for, realize, regularity_report


def sphere_plus_center(radius: float, shell_width: float) -> ScenarioGeometry:
    half = shell_width / 2
    return ScenarioGeometry(
        n=2,
        box=((-2.0, 2.0),) * 4,
        domain=Ball(center=(0.0, 0.0, 0.0, 0.0), radius=2.0),
        alpha={"a11": 1.0, "a22": 1.0, "a12_re": 0.0, "a12_im": 0.0},
        support_shapes=(
            Shell(center=(0.0, 0.0, 0.0, 0.0), inner_radius=radius - half, outer_radius=radius + half),
        ),
        support_points=((0.0, 0.0, 0.0, 0.0),),
        weight=None,
        barrier=None,
        label="sphere-plus-center",
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, nargs="+", default=[0.25, 0.125, 0.0625])
    ap.add_argument("--sphere-radius", type=float, default=1.0)
    ap.add_argument("--shell-width", type=float, default=0.25,
                    help="the sphere is realized as a shell this thick so every h resolves it")
    ap.add_argument("--probe-radius", type=float, default=0.5)
    ap.add_argument("--tolerance", type=float, default=1e-8)
    ap.add_argument("--max-nodes", type=int, default=20_000_000)
    args = ap.parse_args()

    t0 = time.perf_counter()
    geom = sphere_plus_center(args.sphere_radius, args.shell_width)
    scn = realize(geom, h=args.h[0])
    fld = measure_for(scn, opts=SolveOptions.tuned_for(scn.grid, tolerance=args.tolerance))
    print(f"base solve at h={args.h[0]}: {time.perf_counter() - t0:.1f}s")

    rep = regularity_report(
        fld,
        points=[(0.0, 0.0, 0.0, 0.0), (args.sphere_radius, 0.0, 0.0, 0.0)],
        radius_schedule=(args.probe_radius,),
        h_schedule=tuple(args.h),
        max_nodes=args.max_nodes,
    )
    for p in rep.points:
        print(f"point {p.point}: {p.classification}")
        for row in p.rows:
            print(f"  h={row.h:<8g} gap={row.gap:.6f} eps_reg={row.eps_reg:.4f} probes={row.probe_count}")
    print(f"total {time.perf_counter() - t0:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
