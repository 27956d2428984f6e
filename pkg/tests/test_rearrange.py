import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selffocus import functional as fn
from selffocus import rearrange as ra
from selffocus.domain import Ball, Field, GridSpec
from selffocus.errors import AxisNotGridCompatible, NegativeInput
from selffocus.functional import ProblemSpec

SPEC = ProblemSpec(2, 4.0, 1.0, Ball(1.0), GridSpec("cartesian2d", 0.1, 4.0))
GRID = fn.problem_grid(SPEC)
RADIAL = fn.problem_grid(ProblemSpec(3, 4.0, 1.0, Ball(1.0), GridSpec("radial", 0.05, 4.0, 3)))

arrays = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).random(GRID.shape))
axes = st.sampled_from(ra.ALL_AXES)


def test_axis_validation():
    assert ra.HalfspaceAxis.from_vector((0.0, -1.0)).k == 6
    assert ra.HalfspaceAxis.from_vector((1.0, 1.0)).k == 1
    with pytest.raises(AxisNotGridCompatible):
        ra.HalfspaceAxis.from_vector((1.0, 0.3))
    with pytest.raises(AxisNotGridCompatible):
        ra.HalfspaceAxis(8)


@settings(max_examples=30, deadline=None)
@given(arrays, axes)
def test_reflection_is_isometric_involution(v, ax):
    u = Field(GRID, v)
    r = ra.reflect(u, ax)
    assert np.array_equal(ra.reflect(r, ax).values, v)
    pts = GRID.points()
    e = np.array(ax.vector)
    mirrored = pts - 2 * (pts @ e)[..., None] * e
    # node (i, j) of the reflected field holds u at the mirrored node
    i, j = 7, 30
    x = mirrored[i, j]
    k = np.unravel_index(np.argmin(np.sum((pts - x) ** 2, axis=-1)), GRID.shape)
    assert r.values[i, j] == v[k]


@settings(max_examples=30, deadline=None)
@given(arrays, axes)
def test_polarization_identities(v, ax):
    u = Field(GRID, v)
    pol = ra.polarize(u, ax)
    assert np.array_equal(np.sort(pol.values, None), np.sort(v, None))
    assert fn.dirichlet_energy(pol, SPEC) <= fn.dirichlet_energy(u, SPEC) * (1 + 1e-12)
    s = ra.halfspace_sign(GRID, ax)
    assert np.all(pol.values[s > 0] >= ra.reflect(pol, ax).values[s > 0])
    assert np.array_equal(ra.polarize(pol, ax).values, pol.values)


@settings(max_examples=30, deadline=None)
@given(arrays)
def test_schwarz_equimeasurable_and_radial(v):
    u = Field(GRID, v)
    star = ra.schwarz(u)
    assert np.array_equal(np.sort(star.values, None), np.sort(v, None))
    levels = np.quantile(v, [0.1, 0.5, 0.9])
    assert np.array_equal(ra.distribution(star, levels), ra.distribution(u, levels))
    # ties within a lattice shell follow index order, so shells are ordered as wholes
    _, vmax, vmin, _ = ra.shell_profile(star)
    assert np.all(vmax[1:] <= vmin[:-1])
    assert np.array_equal(ra.schwarz(star).values, star.values)


def test_schwarz_radial_grid_sorts():
    v = np.random.default_rng(0).random(RADIAL.shape)
    star = ra.schwarz(Field(RADIAL, v))
    assert np.all(np.diff(star.values) <= 0)
    assert star.values[0] == v.max()


def test_schwarz_rejects_negative():
    with pytest.raises(NegativeInput):
        ra.schwarz(Field(GRID, -np.ones(GRID.shape)))


def test_radial_check_detects_asymmetry():
    r = GRID.radius
    radial = Field(GRID, np.exp(-r**2))
    assert ra.radial_check(radial) < 1e-15
    shifted = Field(GRID, np.exp(-((GRID.points()[..., 0] - 0.3) ** 2 + GRID.points()[..., 1] ** 2)))
    assert ra.radial_check(shifted) > 0.1
    increasing = Field(GRID, np.minimum(r, 1.0))
    assert ra.radial_check(increasing) > 0.05


def test_foliated_check_on_axially_symmetric_field():
    X, Y = GRID.points()[..., 0], GRID.points()[..., 1]
    u = Field(GRID, np.exp(-((X - 0.5) ** 2 + Y**2)) - np.exp(-((X + 0.5) ** 2 + Y**2)))
    rep = ra.foliated_check(u, omega=Ball(1.0))
    assert rep.axis_estimate == (1.0, 0.0)
    assert rep.dichotomy_at_axis == 0.0
    assert rep.angular_monotonicity_violation < 1e-12
    assert rep.per_axis[4]["angular"] > 0.1
