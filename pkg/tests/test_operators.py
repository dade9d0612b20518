import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from alphameasure.grid import (
    Ball,
    GridFunction,
    build_grid,
    classify_domain,
    constant_function,
)
from alphameasure.operators import (
    AlphaForm,
    OperatorError,
    alpha_form_from_csv,
    apply,
    assemble_operator,
    form_to_effective_coeffs,
    is_alpha_subharmonic,
    max_principle_check,
    poisson_kernel,
    submean_check,
    validate_barrier,
    violations_to_csv,
)

X1, Y1, X2, Y2 = sp.symbols("x1 y1 x2 y2", real=True)


# ---------------------------------------------------------------------------
# independent continuum oracle: the density of (i ddbar u) wedged with the
# coefficient (1,1)-form, computed from scratch with real-coordinate
# determinants. Written before any expected value below was frozen.


def _dz(f, j):
    x, y = ((X1, Y1), (X2, Y2))[j]
    return (sp.diff(f, x) - sp.I * sp.diff(f, y)) / 2


def _dzbar(f, j):
    x, y = ((X1, Y1), (X2, Y2))[j]
    return (sp.diff(f, x) + sp.I * sp.diff(f, y)) / 2


def _one_form_row(kind, j):
    # coefficients of dz_j (or its conjugate) over the basis dx1,dy1,dx2,dy2
    row = [sp.S(0)] * 4
    row[2 * j] = sp.S(1)
    row[2 * j + 1] = sp.I if kind == "dz" else -sp.I
    return row


def wedge_density(c11, c22, c12, u_expr):
    """Top-form coefficient of (i sum u_jk dz_j^dzbar_k) ^ (i sum c_lm dz_l^dzbar_m)
    over dx1^dy1^dx2^dy2, for a Hermitian printed coefficient matrix."""
    hess = {(j, k): _dzbar(_dz(u_expr, j), k) for j in (0, 1) for k in (0, 1)}
    c = {(0, 0): c11, (0, 1): c12, (1, 0): sp.conjugate(c12), (1, 1): c22}
    total = sp.S(0)
    for (j, k), hjk in hess.items():
        for (l, m), clm in c.items():
            rows = [
                _one_form_row("dz", j),
                _one_form_row("dzbar", k),
                _one_form_row("dz", l),
                _one_form_row("dzbar", m),
            ]
            total += hjk * clm * sp.Matrix(rows).det()
    # the two i prefactors contribute i*i = -1
    return sp.simplify(-total)


QUADRATICS = (
    X1 * X1 + Y1 * Y1,
    X2 * X2 + Y2 * Y2,
    2 * (X1 * X1 + Y1 * Y1) - (X2 * X2 + Y2 * Y2),
    X1 * X2,
    X1 * Y2,
    Y1 * X2,
    Y1 * Y2,
    X1 * X1 - Y2 * Y2,
)

PRINTED_FORMS = (
    (sp.S(1), sp.S(1), sp.S(0)),
    (sp.S(3), sp.S(1), sp.S(0)),
    (sp.S(2), sp.S(2), sp.Rational(1, 2) + sp.I * sp.Rational(1, 4)),
    (sp.S(4), sp.S(2), sp.S(1) - sp.I * sp.Rational(1, 2)),
)


def test_oracle_density_is_real_on_hermitian_data():
    for c11, c22, c12 in PRINTED_FORMS:
        for u in QUADRATICS:
            d = wedge_density(c11, c22, c12, u)
            assert sp.im(sp.nsimplify(d)) == 0


def test_effective_coefficients_match_wedge_oracle():
    # the effective pairing the code uses: a11 h11 + a22 h22 + a12 h12 + conj(a12) h21
    for c11, c22, c12 in PRINTED_FORMS:
        eff = form_to_effective_coeffs(
            2,
            c11=float(c11),
            c22=float(c22),
            c12_re=float(sp.re(c12)),
            c12_im=float(sp.im(c12)),
        )
        a11 = float(eff.a11[0])
        a22 = float(eff.a22[0])
        a12 = complex(float(eff.a12_re[0]), float(eff.a12_im[0]))
        for u in QUADRATICS:
            hess = {(j, k): complex(_dzbar(_dz(u, j), k)) for j in (0, 1) for k in (0, 1)}
            via_effective = (
                a11 * hess[(0, 0)]
                + a22 * hess[(1, 1)]
                + a12 * hess[(0, 1)]
                + a12.conjugate() * hess[(1, 0)]
            )
            # the wedge carries the volume factor 4: dz^dzbar = -2i dx^dy per variable
            oracle = complex(wedge_density(c11, c22, c12, u)) / 4
            assert abs(via_effective - oracle) < 1e-12


def test_discrete_operator_matches_oracle_on_quadratics():
    g = build_grid(2, (9,) * 4, 0.25, (-1.0,) * 4)
    mask = classify_domain(g, Ball(center=(0.0,) * 4, radius=0.9))
    C = g.coords_matrix()
    subs = dict(zip((X1, Y1, X2, Y2), range(4)))
    for c11, c22, c12 in PRINTED_FORMS:
        eff = form_to_effective_coeffs(
            2,
            c11=float(c11),
            c22=float(c22),
            c12_re=float(sp.re(c12)),
            c12_im=float(sp.im(c12)),
        )
        op = assemble_operator(eff, mask)
        for u_expr in QUADRATICS:
            f = sp.lambdify((X1, Y1, X2, Y2), u_expr, "numpy")
            vals = np.asarray(f(C[:, 0], C[:, 1], C[:, 2], C[:, 3]), dtype=float)
            vals = np.broadcast_to(vals, (g.num_nodes,)).copy()
            res = apply(op, GridFunction(g, vals)).values[op.interior]
            oracle = float(sp.re(wedge_density(c11, c22, c12, u_expr))) / 4
            assert np.abs(res - oracle).max() < 1e-12


def test_printed_form_swaps_diagonal_and_flips_offdiagonal():
    eff = form_to_effective_coeffs(2, c11=3.0, c22=1.0, c12_re=0.25, c12_im=0.125)
    assert float(eff.a11[0]) == 1.0
    assert float(eff.a22[0]) == 3.0
    assert float(eff.a12_re[0]) == -0.25
    assert float(eff.a12_im[0]) == 0.125


def test_printed_form_n1_passthrough():
    eff = form_to_effective_coeffs(1, c=2.5)
    assert eff.n == 1
    assert float(eff.a[0]) == 2.5


def test_printed_form_requires_hermitian_input():
    with pytest.raises(OperatorError):
        form_to_effective_coeffs(2, c11=1.0, c22=1.0, c12_re=0.1, c12_im=0.0, c21_re=0.3, c21_im=0.0)


def test_classification_catalog_diag_3_1():
    # printed diag(3,1), so the effective matrix is diag(1,3); residuals of the
    # three quadratics are the constants -1, +3, +4
    g = build_grid(2, (9,) * 4, 0.25, (-1.0,) * 4)
    mask = classify_domain(g, Ball(center=(0.0,) * 4, radius=0.9))
    eff = form_to_effective_coeffs(2, c11=3.0, c22=1.0, c12_re=0.0, c12_im=0.0)
    op = assemble_operator(eff, mask)
    C = g.coords_matrix()
    r1 = 2 * (C[:, 0] ** 2 + C[:, 1] ** 2) - (C[:, 2] ** 2 + C[:, 3] ** 2)
    r2 = -3 * (C[:, 0] ** 2 + C[:, 1] ** 2) + 2 * (C[:, 2] ** 2 + C[:, 3] ** 2)
    r3 = (C**2).sum(axis=1)
    expected = {"u1": (r1, False, -1.0), "u2": (r2, True, 3.0), "u3": (r3, True, 4.0)}
    for name, (vals, verdict, res_const) in expected.items():
        fn = GridFunction(g, vals)
        chk = is_alpha_subharmonic(fn, op)
        assert chk.verdict is verdict, name
        res = apply(op, fn).values[op.interior]
        assert np.abs(res - res_const).max() < 1e-10, name
        assert res.max() - res.min() < 1e-10, name


def test_alpha_form_validation():
    with pytest.raises(OperatorError):
        AlphaForm(n=3, a=1.0)
    with pytest.raises(OperatorError):
        AlphaForm(n=1, a=-1.0)
    with pytest.raises(OperatorError, match="eigenvalue"):
        AlphaForm(n=2, a11=1.0, a22=1.0, a12_re=1.5, a12_im=0.0)
    with pytest.raises(OperatorError):
        AlphaForm(n=1, a=1.0, scale=0.0)


def test_positive_type_rejection_names_node_and_ratio():
    g = build_grid(2, (9,) * 4, 0.25, (-1.0,) * 4)
    mask = classify_domain(g, Ball(center=(0.0,) * 4, radius=0.9))
    form = AlphaForm(n=2, a11=1.0, a22=1.0, a12_re=0.6, a12_im=0.45)
    with pytest.raises(OperatorError, match="node") as exc:
        assemble_operator(form, mask)
    assert "1.05" in str(exc.value)


def test_positive_type_boundary_case_assembles():
    g = build_grid(2, (9,) * 4, 0.25, (-1.0,) * 4)
    mask = classify_domain(g, Ball(center=(0.0,) * 4, radius=0.9))
    op = assemble_operator(AlphaForm(n=2, a11=1.0, a22=1.0, a12_re=0.999, a12_im=0.0), mask)
    assert (op.weights >= 0).all()
    assert (op.center < 0).all()


def test_stencil_row_consistency():
    # constants and linear functions are in the kernel of every row
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    C = g.coords_matrix()
    for vals in (np.ones(g.num_nodes), C[:, 0], C[:, 1], 2 * C[:, 0] - 3 * C[:, 1]):
        res = apply(op, GridFunction(g, vals)).values[op.interior]
        assert np.abs(res).max() < 1e-12


def test_n1_laplacian_normalization():
    # L = a * d^2/dz dzbar, so |z|^2 has residual a and x^2 has residual a/2
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=2.0), mask)
    C = g.coords_matrix()
    res = apply(op, GridFunction(g, (C**2).sum(axis=1))).values[op.interior]
    assert np.abs(res - 2.0).max() < 1e-12
    res = apply(op, GridFunction(g, C[:, 0] ** 2)).values[op.interior]
    assert np.abs(res - 1.0).max() < 1e-12


@given(
    a=st.floats(min_value=0.5, max_value=4.0),
    qxx=st.floats(min_value=-2.0, max_value=2.0),
    qyy=st.floats(min_value=-2.0, max_value=2.0),
    lx=st.floats(min_value=-1.0, max_value=1.0),
)
@settings(max_examples=25, deadline=None)
def test_axis_quadratics_are_exact(a, qxx, qyy, lx):
    g = build_grid(1, (9, 9), 0.25, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=a), mask)
    C = g.coords_matrix()
    vals = qxx * C[:, 0] ** 2 + qyy * C[:, 1] ** 2 + lx * C[:, 0]
    res = apply(op, GridFunction(g, vals)).values[op.interior]
    expected = a * (qxx + qyy) / 2
    assert np.abs(res - expected).max() < 1e-10


def test_truncation_error_second_order():
    # exp(x) cos(y) is harmonic and not quadratic; the residual must shrink
    # at second order in h
    worst = {}
    for h in (1 / 8, 1 / 16, 1 / 32):
        m = round(2 / h) + 1
        g = build_grid(1, (m, m), h, (-1.0, -1.0))
        mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
        op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
        C = g.coords_matrix()
        u = np.exp(C[:, 0]) * np.cos(C[:, 1])
        worst[h] = float(np.abs(apply(op, GridFunction(g, u)).values[op.interior]).max())
    order1 = math.log(worst[1 / 8] / worst[1 / 16], 2)
    order2 = math.log(worst[1 / 16] / worst[1 / 32], 2)
    assert order1 >= 1.8
    assert order2 >= 1.8


def test_is_alpha_subharmonic_scale_invariant_verdict():
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    C = g.coords_matrix()
    u = (C**2).sum(axis=1) + 1e-11 * np.sin(40 * C[:, 0])
    for s in (1.0, 1e6, 1e-6):
        chk = is_alpha_subharmonic(GridFunction(g, s * u), op)
        assert chk.verdict


def test_is_alpha_subharmonic_reports_violations(tmp_path):
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    C = g.coords_matrix()
    chk = is_alpha_subharmonic(GridFunction(g, -(C**2).sum(axis=1)), op)
    assert not chk.verdict
    assert chk.min_residual < 0
    assert chk.violation_nodes.size == op.interior.size
    out = tmp_path / "violations.csv"
    violations_to_csv(chk, out)
    assert out.read_text().count("\n") == chk.violation_nodes.size + 1


def test_poisson_kernel_rows_are_a_probability_kernel():
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    sub = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.5))
    ker = poisson_kernel(op, sub)
    assert (ker.weights >= 0).all()
    sums = ker.weights.sum(axis=1)
    assert np.abs(sums - 1.0).max() < 1e-12


def test_poisson_kernel_reproduces_discrete_harmonics():
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    sub = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.5))
    ker = poisson_kernel(op, sub)
    C = g.coords_matrix()
    for vals in (C[:, 0], C[:, 1], C[:, 0] ** 2 - C[:, 1] ** 2, C[:, 0] * C[:, 1]):
        fn = GridFunction(g, vals)
        lhs = fn.values[ker.interior]
        rhs = ker.weights @ fn.values[ker.boundary]
        assert np.abs(lhs - rhs).max() < 1e-10


def test_poisson_kernel_requires_interior_ball():
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.7))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    sub = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.85))
    with pytest.raises(OperatorError):
        poisson_kernel(op, sub)


def test_submean_inequality_tracks_subharmonicity():
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    ker = poisson_kernel(op, classify_domain(g, Ball(center=(0.0, 0.0), radius=0.5)))
    C = g.coords_matrix()
    r2 = (C**2).sum(axis=1)
    assert submean_check(GridFunction(g, r2), ker)
    assert not submean_check(GridFunction(g, -r2), ker)


def test_max_principle_for_subsolutions():
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    C = g.coords_matrix()
    rep = max_principle_check(GridFunction(g, (C**2).sum(axis=1) + C[:, 0]), mask, op)
    assert rep.holds
    assert rep.interior_max <= rep.boundary_max + 1e-9
    with pytest.raises(OperatorError, match="subsolution"):
        max_principle_check(GridFunction(g, -(C**2).sum(axis=1)), mask, op)


def test_validate_barrier_accepts_scene_barrier(disc_scene):
    validate_barrier(disc_scene.op, disc_scene.mask)


def test_validate_barrier_rejects_interior_positive():
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    C = g.coords_matrix()
    bad = mask.with_barrier(GridFunction(g, (C**2).sum(axis=1) - 0.25))
    op = assemble_operator(AlphaForm(n=1, a=1.0), bad)
    with pytest.raises(OperatorError, match="negative"):
        validate_barrier(op, bad)


def test_validate_barrier_rejects_large_ring_trace():
    g = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g, Ball(center=(0.0, 0.0), radius=0.9))
    C = g.coords_matrix()
    vals = (C**2).sum(axis=1) - 0.81
    vals[mask.exterior_idx] = 0.0
    vals[mask.boundary_idx] = -0.5  # O(1) offset, far beyond the O(h) allowance
    shifted = mask.with_barrier(GridFunction(g, vals))
    op = assemble_operator(AlphaForm(n=1, a=1.0), shifted)
    with pytest.raises(OperatorError):
        validate_barrier(op, shifted)


def test_alpha_form_from_csv_roundtrip(tmp_path):
    g = build_grid(1, (9, 9), 0.25, (-1.0, -1.0))
    path = tmp_path / "alpha.csv"
    rows = ["index,a"] + [f"{i},{1.0 + 0.001 * i}" for i in range(g.num_nodes)]
    path.write_text("\n".join(rows) + "\n")
    form = alpha_form_from_csv(g, path)
    assert form.n == 1
    assert form.a.size == g.num_nodes
    assert float(form.a[5]) == 1.005


def test_apply_requires_matching_grid():
    g1 = build_grid(1, (9, 9), 0.25, (-1.0, -1.0))
    g2 = build_grid(1, (17, 17), 0.125, (-1.0, -1.0))
    mask = classify_domain(g1, Ball(center=(0.0, 0.0), radius=0.9))
    op = assemble_operator(AlphaForm(n=1, a=1.0), mask)
    with pytest.raises(OperatorError):
        apply(op, constant_function(g2, 1.0))
