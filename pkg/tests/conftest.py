import numpy as np
import pytest

from alphameasure import _kernels
from alphameasure.envelope import SolveOptions
from alphameasure.grid import Ball
from alphameasure.measure import (
    RadialPowExpr,
    ScenarioGeometry,
    SqNormExpr,
    measure_for,
    realize,
)


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    _kernels.warm_up()


def disc_geometry(weight=None, holder_constant=None, holder_exponent=None,
                  support_radius=0.25, label="disc"):
    """One complex variable, unit disc domain, centered closed ball support."""
    return ScenarioGeometry(
        n=1,
        box=((-1.0, 1.0), (-1.0, 1.0)),
        domain=Ball(center=(0.0, 0.0), radius=1.0),
        alpha={"a": 1.0},
        support_shapes=(Ball(center=(0.0, 0.0), radius=support_radius),),
        support_points=(),
        weight=weight,
        barrier=SqNormExpr(coeff=1.0, offset=-1.0, center=(0.0, 0.0)),
        holder_constant=holder_constant,
        holder_exponent=holder_exponent,
        label=label,
    )


def shell_geometry(weight=None, label="shell"):
    """Two complex variables, unit ball domain, half-radius ball support."""
    return ScenarioGeometry(
        n=2,
        box=((-1.0, 1.0),) * 4,
        domain=Ball(center=(0.0, 0.0, 0.0, 0.0), radius=1.0),
        alpha={"a11": 1.0, "a22": 1.0, "a12_re": 0.0, "a12_im": 0.0},
        support_shapes=(Ball(center=(0.0, 0.0, 0.0, 0.0), radius=0.5),),
        support_points=(),
        weight=weight,
        barrier=SqNormExpr(coeff=1.0, offset=-1.0, center=(0.0, 0.0, 0.0, 0.0)),
        label=label,
    )


def sqrt_weight_expr():
    # mollified radial power: strictly negative on the support ball and
    # discretely subharmonic at h=1/32 (margin beats the truncation error)
    return RadialPowExpr(coeff=0.5, offset=-1.0, power=0.5, center=(0.0, 0.0), mollify=2.0)


@pytest.fixture(scope="session")
def disc_scene():
    return realize(disc_geometry(), h=1 / 32)


@pytest.fixture(scope="session")
def disc_field(disc_scene):
    opts = SolveOptions.tuned_for(disc_scene.grid, tolerance=1e-10)
    return measure_for(disc_scene, opts)


@pytest.fixture(scope="session")
def weighted_scene():
    geom = disc_geometry(
        weight=sqrt_weight_expr(),
        holder_constant=0.5,
        holder_exponent=0.5,
        label="disc-sqrt-weight",
    )
    return realize(geom, h=1 / 32)


@pytest.fixture(scope="session")
def weighted_field(weighted_scene):
    opts = SolveOptions.tuned_for(weighted_scene.grid, tolerance=1e-10)
    return measure_for(weighted_scene, opts)


@pytest.fixture(scope="session")
def shell_scene():
    return realize(shell_geometry(), h=1 / 8)


@pytest.fixture(scope="session")
def shell_field(shell_scene):
    opts = SolveOptions.tuned_for(shell_scene.grid, tolerance=1e-9)
    return measure_for(shell_scene, opts)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
