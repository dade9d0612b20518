import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphameasure.envelope import SolveOptions
from alphameasure.grid import (
    Ball,
    GridError,
    GridFunction,
    build_grid,
    classify_domain,
    make_node_set,
    nodes_in_shape,
    snap_point,
)
from alphameasure.operators import AlphaForm, OperatorError, assemble_operator, is_alpha_subharmonic
from alphameasure.measure import (
    AffineExpr,
    ConstExpr,
    RadialPowExpr,
    ScenarioGeometry,
    SqAxisExpr,
    SqNormExpr,
    boundary_limit_check,
    check_connection_bounds,
    check_monotonicity,
    check_two_constants,
    decreasing_compacts_experiment,
    exhaustion_experiment,
    expr_from_config,
    hartogs_bump_family,
    hartogs_harness,
    hartogs_trivial_family,
    hartogs_undecided_family,
    increasing_domains_experiment,
    make_weight,
    measure_for,
    polar_union_experiment,
    random_admissible_subsolution,
    realize,
    regularity_report,
    subharmonic_measure,
    weighted_measure,
)

from conftest import disc_geometry, sqrt_weight_expr


OPTS = SolveOptions(tolerance=1e-10)


# ---------------------------------------------------------------------------
# expressions


def test_expression_catalog_evaluates():
    g = build_grid(1, (9, 9), 0.25, (-1.0, -1.0))
    C = g.coords_matrix()
    cases = [
        (ConstExpr(value=-1.0), np.full(g.num_nodes, -1.0)),
        (AffineExpr(coeffs=(1.0, -2.0), offset=0.5), C[:, 0] - 2 * C[:, 1] + 0.5),
        (SqNormExpr(coeff=2.0, offset=-1.0, center=(0.0, 0.0)), 2 * (C**2).sum(axis=1) - 1.0),
        (SqAxisExpr(coeffs=(1.0, 3.0), offset=0.0, center=(0.0, 0.0)), C[:, 0] ** 2 + 3 * C[:, 1] ** 2),
    ]
    for expr, expected in cases:
        assert np.allclose(expr.evaluate(g), expected, atol=1e-12)


def test_expression_config_roundtrip():
    exprs = [
        ConstExpr(value=-0.5),
        AffineExpr(coeffs=(1.0, 0.0), offset=-2.0),
        SqNormExpr(coeff=1.0, offset=-1.0, center=(0.5, 0.0)),
        SqAxisExpr(coeffs=(2.0, 1.0), offset=-1.0, center=(0.0, 0.0)),
        RadialPowExpr(coeff=0.5, offset=-1.0, power=0.5, center=(0.0, 0.0), mollify=2.0),
    ]
    g = build_grid(1, (9, 9), 0.25, (-1.0, -1.0))
    for expr in exprs:
        back = expr_from_config(expr.to_config())
        assert type(back) is type(expr)
        assert np.array_equal(back.evaluate(g), expr.evaluate(g))


def test_expr_from_config_rejects_unknown():
    with pytest.raises((OperatorError, ValueError)):
        expr_from_config({"kind": "cubic", "coeff": 1.0})
    with pytest.raises((OperatorError, ValueError)):
        expr_from_config({"kind": "const", "value": -1.0, "extra": 2})


# ---------------------------------------------------------------------------
# weights


def test_make_weight_requires_negative_on_support(disc_scene):
    with pytest.raises(OperatorError, match="strictly negative"):
        make_weight(disc_scene.op, disc_scene.mask, disc_scene.support, ConstExpr(value=0.0))


def test_make_weight_rejects_concave_extension(disc_scene):
    expr = SqNormExpr(coeff=-0.25, offset=-0.5, center=(0.0, 0.0))
    with pytest.raises(OperatorError, match="subharmonic"):
        make_weight(disc_scene.op, disc_scene.mask, disc_scene.support, expr)


def test_make_weight_accepts_mollified_radial_power(disc_scene):
    w = make_weight(disc_scene.op, disc_scene.mask, disc_scene.support, sqrt_weight_expr())
    assert w.sup_on_support() < 0
    assert is_alpha_subharmonic(w.extension, disc_scene.op).verdict


# ---------------------------------------------------------------------------
# measures


def test_measure_bounds_and_support_values(disc_field):
    vals = disc_field.omega.values
    sel = disc_field.mask.classes != 0
    assert vals[sel].max() <= 1e-12
    assert vals[sel].min() >= -1.0 - 1e-12
    assert np.abs(vals[disc_field.support.indices] + 1.0).max() < 1e-9


def test_measure_radial_profile_sanity(disc_field):
    # the exact value at |z| = 1/2 is log(1/2)/log(1/4) = -1/2; the node-snapped
    # support boundary costs O(h), so only a loose agreement is asserted here
    node = snap_point(disc_field.op.grid, (0.5, 0.0))
    assert abs(disc_field.omega.values[node] + 0.5) < 0.05


def test_empty_support_gives_zero_field(disc_scene):
    K = make_node_set(disc_scene.mask, [])
    fld = subharmonic_measure(disc_scene.op, disc_scene.mask, K, OPTS)
    assert np.abs(fld.omega.values).max() == 0.0
    assert fld.envelope is None


def test_constant_weight_minus_one_is_bit_identical(disc_scene, disc_field):
    w = make_weight(disc_scene.op, disc_scene.mask, disc_scene.support, ConstExpr(value=-1.0))
    opts = SolveOptions.tuned_for(disc_scene.grid, tolerance=1e-10)
    wf = weighted_measure(disc_scene.op, disc_scene.mask, disc_scene.support, w, opts, check_bounds=False)
    assert np.array_equal(wf.omega.values, disc_field.omega.values)


def test_constant_weight_scales_exactly(disc_scene, disc_field):
    w = make_weight(disc_scene.op, disc_scene.mask, disc_scene.support, ConstExpr(value=-0.7))
    opts = SolveOptions.tuned_for(disc_scene.grid, tolerance=1e-10)
    wf = weighted_measure(disc_scene.op, disc_scene.mask, disc_scene.support, w, opts, check_bounds=False)
    assert np.abs(wf.omega.values - 0.7 * disc_field.omega.values).max() < 1e-9


def test_weighted_measure_validates_support_match(weighted_scene):
    other = nodes_in_shape(weighted_scene.mask, Ball(center=(0.0, 0.0), radius=0.3), label="K2")
    with pytest.raises(OperatorError, match="support"):
        weighted_measure(weighted_scene.op, weighted_scene.mask, other, weighted_scene.weight, OPTS)


def test_connection_sandwich(weighted_field, disc_field):
    rep = check_connection_bounds(weighted_field, disc_field)
    assert rep.passed
    assert rep.max_violation <= 1e-9


def test_connection_reference_must_be_unweighted(weighted_field):
    with pytest.raises(OperatorError, match="unweighted"):
        check_connection_bounds(weighted_field, weighted_field)


def test_weighted_measure_auto_connection_check(weighted_scene):
    # check_bounds=True (default) solves the unweighted reference and attaches it
    opts = SolveOptions.tuned_for(weighted_scene.grid, tolerance=1e-10)
    fld = measure_for(weighted_scene, opts)
    assert fld.connection is not None
    assert fld.connection.passed


# ---------------------------------------------------------------------------
# two-constants


def test_two_constants_random_corpus(disc_field, rng):
    scn_op, mask, K = disc_field.op, disc_field.mask, disc_field.support
    for _ in range(20):
        u = random_admissible_subsolution(scn_op, mask, K, rng)
        r = float(u.values[K.indices].max())
        rep = check_two_constants(u, K, r, 0.0, disc_field)
        assert rep.status == "pass", rep.details
        assert rep.max_violation <= rep.tol


def test_two_constants_requires_matching_support(disc_field, disc_scene, rng):
    other = nodes_in_shape(disc_scene.mask, Ball(center=(0.0, 0.0), radius=0.35), label="K2")
    u = random_admissible_subsolution(disc_field.op, disc_field.mask, disc_field.support, rng)
    with pytest.raises(OperatorError, match="support"):
        check_two_constants(u, other, -1.0, 0.0, disc_field)


def test_two_constants_inapplicable_paths(disc_field, disc_scene, rng):
    K = disc_field.support
    u = random_admissible_subsolution(disc_field.op, disc_field.mask, K, rng)
    rep = check_two_constants(u, K, 0.5, 0.0, disc_field)  # r >= R
    assert rep.status == "inapplicable" and rep.passed

    g = disc_scene.grid
    C = g.coords_matrix()
    bad = GridFunction(g, -(C**2).sum(axis=1))  # concave, not a subsolution
    rep = check_two_constants(bad, K, -0.9, 0.0, disc_field)
    assert rep.status == "inapplicable"
    assert "subsolution" in rep.details["reason"]


# ---------------------------------------------------------------------------
# monotonicity


def test_monotonicity_in_support(disc_scene):
    wide = nodes_in_shape(disc_scene.mask, Ball(center=(0.0, 0.0), radius=0.4), label="wide")
    small_f = subharmonic_measure(disc_scene.op, disc_scene.mask, disc_scene.support, OPTS)
    large_f = subharmonic_measure(disc_scene.op, disc_scene.mask, wide, OPTS)
    rep = check_monotonicity([("support", small_f, large_f)])
    assert rep.passed


def test_monotonicity_in_weight(disc_scene):
    w_lo = make_weight(disc_scene.op, disc_scene.mask, disc_scene.support, ConstExpr(value=-1.0))
    w_hi = make_weight(disc_scene.op, disc_scene.mask, disc_scene.support, ConstExpr(value=-0.5))
    lo = weighted_measure(disc_scene.op, disc_scene.mask, disc_scene.support, w_lo, OPTS, check_bounds=False)
    hi = weighted_measure(disc_scene.op, disc_scene.mask, disc_scene.support, w_hi, OPTS, check_bounds=False)
    rep = check_monotonicity([("weight", lo, hi)])
    assert rep.passed


def test_monotonicity_in_domain():
    g = build_grid(1, (33, 33), 1 / 16, (-1.0, -1.0))
    small_mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.7))
    large_mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    a = AlphaForm(n=1, a=1.0)
    op_s = assemble_operator(a, small_mask)
    op_l = assemble_operator(a, large_mask)
    K_s = nodes_in_shape(small_mask, Ball(center=(0.0, 0.0), radius=0.25), label="K")
    K_l = nodes_in_shape(large_mask, Ball(center=(0.0, 0.0), radius=0.25), label="K")
    f_s = subharmonic_measure(op_s, small_mask, K_s, OPTS)
    f_l = subharmonic_measure(op_l, large_mask, K_l, OPTS)
    rep = check_monotonicity([("domain", f_s, f_l)])
    assert rep.passed


def test_monotonicity_rejects_non_nested(disc_scene):
    left = nodes_in_shape(disc_scene.mask, Ball(center=(-0.4, 0.0), radius=0.15), label="L")
    right = nodes_in_shape(disc_scene.mask, Ball(center=(0.4, 0.0), radius=0.15), label="R")
    f_l = subharmonic_measure(disc_scene.op, disc_scene.mask, left, OPTS)
    f_r = subharmonic_measure(disc_scene.op, disc_scene.mask, right, OPTS)
    with pytest.raises(OperatorError):
        check_monotonicity([("support", f_l, f_r)])


def test_monotonicity_rejects_unknown_kind(disc_field):
    with pytest.raises(OperatorError):
        check_monotonicity([("resolution", disc_field, disc_field)])


# ---------------------------------------------------------------------------
# barrier bound


def test_boundary_limit_disc(disc_field):
    rep = boundary_limit_check(disc_field)
    assert rep.passed
    assert rep.max_violation <= 1e-9
    assert rep.details["C"] > 0
    assert rep.details["outer_ring_max_abs_omega"] < rep.details["ring_bound"]


def test_boundary_limit_shell(shell_field):
    rep = boundary_limit_check(shell_field)
    assert rep.passed
    assert rep.max_violation <= 1e-9


def test_boundary_limit_needs_barrier(disc_scene):
    geom = disc_geometry()
    geom = type(geom)(**{**geom.__dict__, "barrier": None})
    scn = realize(geom, h=1 / 16)
    fld = measure_for(scn, OPTS)
    with pytest.raises(OperatorError, match="barrier"):
        boundary_limit_check(fld)


# ---------------------------------------------------------------------------
# limit experiments


def test_decreasing_compacts_table(disc_scene):
    opts = SolveOptions.tuned_for(disc_scene.grid, tolerance=1e-10)
    Ks = [
        nodes_in_shape(disc_scene.mask, Ball(center=(0.0, 0.0), radius=r), label=f"K{r}")
        for r in (0.40, 0.33, 0.28)
    ]
    tbl = decreasing_compacts_experiment(disc_scene.op, disc_scene.mask, Ks, disc_scene.support, opts=opts)
    assert tbl.monotone and tbl.converged
    assert tbl.rows[-1].sup_gap <= tbl.threshold


def test_decreasing_compacts_validates_chain(disc_scene):
    small = nodes_in_shape(disc_scene.mask, Ball(center=(0.0, 0.0), radius=0.3), label="s")
    big = nodes_in_shape(disc_scene.mask, Ball(center=(0.0, 0.0), radius=0.4), label="b")
    with pytest.raises(OperatorError, match="decreasing"):
        decreasing_compacts_experiment(disc_scene.op, disc_scene.mask, [small, big], disc_scene.support)


def test_exhaustion_table(disc_scene):
    opts = SolveOptions.tuned_for(disc_scene.grid, tolerance=1e-10)
    Ks = [
        nodes_in_shape(disc_scene.mask, Ball(center=(0.0, 0.0), radius=r), label=f"K{r}")
        for r in (0.30, 0.38, 0.44)
    ]
    tbl = exhaustion_experiment(disc_scene.op, disc_scene.mask, Ball(center=(0.0, 0.0), radius=0.45), Ks, opts=opts)
    assert tbl.monotone and tbl.converged


def test_exhaustion_requires_containment(disc_scene):
    Ks = [nodes_in_shape(disc_scene.mask, Ball(center=(0.0, 0.0), radius=0.5), label="big")]
    with pytest.raises(OperatorError, match="inside"):
        exhaustion_experiment(disc_scene.op, disc_scene.mask, Ball(center=(0.0, 0.0), radius=0.45), Ks)


def test_increasing_domains_table(disc_scene):
    opts = SolveOptions.tuned_for(disc_scene.grid, tolerance=1e-10)
    tbl = increasing_domains_experiment(
        disc_scene.grid,
        AlphaForm(n=1, a=1.0),
        [Ball(center=(0.0, 0.0), radius=r) for r in (0.7, 0.85, 1.0)],
        Ball(center=(0.0, 0.0), radius=1.0),
        Ball(center=(0.0, 0.0), radius=0.25),
        None,
        opts,
    )
    assert tbl.monotone and tbl.converged
    assert tbl.rows[-1].sup_gap == 0.0  # last domain is the limit itself


def test_polar_union_trend_n1():
    tbl = polar_union_experiment(disc_geometry(), [(0.6, 0.0)], (1 / 8, 1 / 16, 1 / 32))
    assert tbl.monotone
    gaps = [r.sup_gap for r in tbl.rows]
    assert gaps[0] > gaps[-1] > 0


def test_polar_union_empty_points_is_exact_zero():
    tbl = polar_union_experiment(disc_geometry(), [], (1 / 8, 1 / 16))
    assert all(r.sup_gap == 0.0 for r in tbl.rows)


def test_convergence_table_csv(tmp_path, disc_scene):
    opts = SolveOptions.tuned_for(disc_scene.grid, tolerance=1e-10)
    Ks = [nodes_in_shape(disc_scene.mask, Ball(center=(0.0, 0.0), radius=0.3), label="K")]
    tbl = decreasing_compacts_experiment(disc_scene.op, disc_scene.mask, Ks, disc_scene.support, opts=opts)
    out = tmp_path / "table.csv"
    tbl.to_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "j,h,sup_gap,monotone_ok"
    assert len(lines) == 2


# ---------------------------------------------------------------------------
# domination harness


def test_hartogs_trivial_family(disc_field):
    g = disc_field.omega
    fam = hartogs_trivial_family(g)
    res = hartogs_harness(fam, g, disc_field.support, eps=0.01, op=disc_field.op, j_max=6)
    assert res.decided and res.j0 == 1


def test_hartogs_bump_family_certifies_switch(disc_field, disc_scene):
    g = disc_field.omega
    fam = hartogs_bump_family(g, disc_scene.mask, eps=0.05, switch_j=5, seed=3)
    res = hartogs_harness(fam, g, disc_field.support, eps=0.05, op=disc_field.op, j_max=10)
    assert res.decided
    assert res.j0 == 5


def test_hartogs_undecided_family(disc_field):
    g = disc_field.omega
    fam = hartogs_undecided_family(g, eps=0.02)
    res = hartogs_harness(fam, g, disc_field.support, eps=0.02, op=disc_field.op, j_max=4)
    assert not res.decided
    assert res.j0 is None


def test_hartogs_rejects_non_subsolution(disc_field, disc_scene):
    g = disc_field.omega
    C = disc_scene.grid.coords_matrix()
    bad = GridFunction(disc_scene.grid, -(C**2).sum(axis=1))

    def gen(j):
        return bad

    gen.bound = 0.0
    with pytest.raises(OperatorError, match="subsolution"):
        hartogs_harness(gen, g, disc_field.support, eps=0.01, op=disc_field.op, j_max=2)


@given(seed=st.integers(min_value=0, max_value=2**31))
@settings(max_examples=15, deadline=None)
def test_random_subsolutions_are_admissible(seed, disc_scene):
    rng = np.random.default_rng(seed)
    u = random_admissible_subsolution(disc_scene.op, disc_scene.mask, disc_scene.support, rng)
    assert is_alpha_subharmonic(u, disc_scene.op).verdict
    assert u.values[disc_scene.support.indices].max() <= -1.0 + 1e-12
    sel = disc_scene.mask.classes != 0
    assert u.values[sel].max() <= -1e-3 + 1e-12


# ---------------------------------------------------------------------------
# regularity


def test_fat_disc_center_is_regular(disc_field):
    rep = regularity_report(
        disc_field,
        points=[(0.0, 0.0)],
        radius_schedule=(0.2,),
        h_schedule=(1 / 8, 1 / 16),
    )
    assert rep.classification_of(0) == "regular"
    assert rep.points[0].rows[-1].gap <= rep.points[0].rows[-1].eps_reg


def test_regularity_requires_support_point(disc_field):
    with pytest.raises(OperatorError, match="support"):
        regularity_report(disc_field, points=[(0.9, 0.0)], radius_schedule=(0.2,), h_schedule=(1 / 8,))


# ---------------------------------------------------------------------------
# envelope-measure property tests


@given(
    r1=st.floats(min_value=0.1, max_value=0.25),
    r2=st.floats(min_value=0.25, max_value=0.45),
)
@settings(max_examples=8, deadline=None)
def test_support_monotonicity_property(r1, r2):
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    K1 = nodes_in_shape(mask, Ball(center=(0.0, 0.0), radius=r1), label="K1")
    K2 = nodes_in_shape(mask, Ball(center=(0.0, 0.0), radius=r2), label="K2")
    f1 = subharmonic_measure(op, mask, K1, OPTS)
    f2 = subharmonic_measure(op, mask, K2, OPTS)
    assert (f2.omega.values <= f1.omega.values + 1e-9).all()


def test_realize_box_span_must_fit_h():
    with pytest.raises(GridError, match="multiple"):
        realize(disc_geometry(), h=0.3)


def test_realize_snaps_support_points():
    geom = disc_geometry()
    geom = type(geom)(**{**geom.__dict__, "support_points": ((0.61, 0.02),)})
    scn = realize(geom, h=1 / 16)
    extra = snap_point(scn.grid, (0.61, 0.02))
    assert extra in scn.support.indices
