import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import kve

from selffocus import functional as fn
from selffocus.domain import Annulus, Ball, Field, GridSpec
from selffocus.errors import FrameMismatch, InvalidProblem, NotInU, NotNodal, SignPartMissing, ZeroField
from selffocus.functional import ProblemSpec

RAD = ProblemSpec(3, 4.0, 1.0, Ball(1.0), GridSpec("radial", 0.05, 6.0, 3))
CART = ProblemSpec(2, 3.0, 0.5, Annulus(0.5, 1.0), GridSpec("cartesian2d", 0.1, 4.0))
LIM = ProblemSpec(3, 5.0, 0.0, Ball(1.0), GridSpec("radial", 0.05, 6.0, 3))
SPECS = [RAD, CART, LIM]

seeds = st.integers(0, 2**32 - 1)
spec_st = st.sampled_from(SPECS)


def bumps(spec, seed, centred=True):
    rng = np.random.default_rng(seed)
    g = fn.problem_grid(spec)
    pts = g.points()
    v = np.zeros(g.shape)
    for _ in range(3):
        c = rng.uniform(-0.7, 0.7, pts.shape[-1]) if centred else rng.uniform(-2, 2, pts.shape[-1])
        v += rng.uniform(-1, 2) * np.exp(-np.sum((pts - c) ** 2, axis=-1) / rng.uniform(0.2, 1.0) ** 2)
    return Field(g, v)


def test_spec_validation():
    with pytest.raises(InvalidProblem):
        ProblemSpec(3, 6.0, 1.0, Ball(1.0), GridSpec("radial", 0.1, 6.0, 3))
    with pytest.raises(InvalidProblem):
        ProblemSpec(3, 2.0, 1.0, Ball(1.0), GridSpec("radial", 0.1, 6.0, 3))
    with pytest.raises(InvalidProblem):
        ProblemSpec(3, 4.0, 1.0, Ball(1.0), GridSpec("cartesian2d", 0.1, 6.0))
    assert fn.critical_exponent(2) == np.inf
    ProblemSpec(2, 50.0, 1.0, Ball(1.0), GridSpec("cartesian2d", 0.1, 6.0))


@settings(max_examples=40, deadline=None)
@given(spec_st, seeds, seeds)
def test_summation_by_parts(spec, s1, s2):
    u, v = bumps(spec, s1), bumps(spec, s2)
    lap = fn.laplacian_apply(u, spec)
    d = fn.discretization(spec)
    assert fn.l2_inner(lap, v) == pytest.approx(d.dirichlet_form(u.values, v.values), rel=1e-10, abs=1e-12)
    assert d.dirichlet_form(u.values, v.values) == pytest.approx(d.dirichlet_form(v.values, u.values), rel=1e-12)
    assert fn.dirichlet_energy(u, spec) >= 0


@settings(max_examples=30, deadline=None)
@given(spec_st, seeds, seeds)
def test_sobolev_gradient_represents_derivative(spec, s1, s2):
    u, v = bumps(spec, s1), bumps(spec, s2)
    d = fn.sobolev_gradient(u, spec)
    lhs = fn.inner_eps(d, v, spec)
    rhs = fn.l2_inner(fn.gradient(u, spec), v)
    assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(spec_st, seeds, st.floats(0.1, 10.0))
def test_nehari_scale_equivariance(spec, seed, s):
    u = bumps(spec, seed)
    if not fn.in_U(u, spec):
        with pytest.raises(NotInU):
            fn.nehari_project(u, spec)
        return
    t, w = fn.nehari_project(u, spec)
    t2, w2 = fn.nehari_project(s * u, spec)
    assert t2 * s == pytest.approx(t, rel=1e-12)
    assert np.allclose(w2.values, w.values, rtol=1e-12, atol=1e-14 * w.max_abs())
    assert abs(fn.nehari_residual(w, spec)) <= 1e-10 * fn.norm_eps_sq(w, spec)
    assert fn.nehari_energy(u, spec) == pytest.approx(fn.energy_value(w, spec), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(spec_st, seeds)
def test_energy_parts_consistent(spec, seed):
    u = bumps(spec, seed)
    e = fn.energy(u, spec)
    assert e.j == pytest.approx(0.5 * (e.dirichlet + spec.eps**2 * e.mass) - e.q_lp / spec.p, rel=1e-12, abs=1e-12)
    assert abs(e.q_lp) <= e.lp * (1 + 1e-12)


def test_zero_field_rejected():
    with pytest.raises(ZeroField):
        fn.nehari_project(fn.problem_grid(RAD).zeros(), RAD)


def test_exterior_coefficient():
    assert fn.exterior_coefficient(3, 0.0, 2.0) == pytest.approx(0.5)
    nu = 0.5
    expect = 1.0 / 2.0 + 1.5 * kve(nu - 1, 3.0) / kve(nu, 3.0)
    assert fn.exterior_coefficient(3, 1.5, 2.0) == pytest.approx(expect)


def test_dtn_boundary_exact_for_exterior_profile():
    # for eps = 0, N = 3 the harmonic tail 1/r satisfies the discrete exterior
    # condition, so the radial energy of r^{-1} on [R, inf) is captured exactly
    spec = LIM
    d = fn.discretization(spec)
    r = d.grid.coords
    R = r[-1] + d.grid.h / 2
    assert d.boundary_coef == pytest.approx(4 * np.pi * R**2 * (1.0 / R))


def dipole(spec, seed):
    rng = np.random.default_rng(seed)
    g = fn.problem_grid(spec)
    pts = g.points()
    if g.is_radial:
        a = np.exp(-((pts[..., 0] - 0.3) ** 2) / 0.04)
        b = -np.exp(-((pts[..., 0] - 0.8) ** 2) / 0.04)
    else:
        c = np.array([0.75, 0.0])
        a = np.exp(-np.sum((pts - c) ** 2, axis=-1) / 0.04)
        b = -np.exp(-np.sum((pts + c) ** 2, axis=-1) / 0.04)
    return Field(g, rng.uniform(0.5, 2) * a + rng.uniform(0.5, 2) * b)


@settings(max_examples=25, deadline=None)
@given(spec_st, seeds)
def test_nodal_projection(spec, seed):
    u = dipole(spec, seed)
    w, tp, tm = fn.nodal_project(u, spec)
    rp, rm = fn.part_residuals(w, spec)
    np_, nm = fn.part_norms(w, spec)
    assert abs(rp) <= 1e-9 * np_ and abs(rm) <= 1e-9 * nm
    assert fn.is_nodal(w, spec)
    mid = fn.nodal_path(w, 0.5, spec)
    assert np.allclose(mid.values, w.values, rtol=1e-9, atol=1e-12 * w.max_abs())
    ju = fn.energy_value(w, spec)
    for s in (0.1, 0.3, 0.7, 0.9):
        assert fn.energy_value(fn.nodal_path(w, s, spec), spec) < ju


def test_nodal_errors():
    g = fn.problem_grid(RAD)
    with pytest.raises(SignPartMissing):
        fn.nodal_project(Field(g, np.exp(-g.coords**2)), RAD)
    with pytest.raises(NotNodal):
        fn.nodal_path(dipole(RAD, 0), 0.3, RAD)
    far = Field(g, np.exp(-((g.coords - 0.3) ** 2) / 0.04) - np.exp(-((g.coords - 4.0) ** 2) / 0.04))
    with pytest.raises(NotInU) as exc:
        fn.nodal_project(far, RAD)
    assert exc.value.part == "minus"


def test_frames_roundtrip_and_energy_scaling():
    eps, p = 0.5, 4.0
    u_spec = ProblemSpec(3, p, eps, Ball(1.0), GridSpec("radial", 0.02, 8.0, 3))
    v_grid = fn.problem_grid(
        ProblemSpec(3, p, 1.0, Ball(eps), GridSpec("radial", 0.02 * eps, 8.0 * eps, 3))
    )
    g = fn.problem_grid(u_spec)
    u = Field(g, np.exp(-g.coords**2))
    v = fn.rescale_frames(u, eps, p, v_grid, inverse=True)
    back = fn.rescale_frames(v, eps, p, g)
    assert np.allclose(back.values, u.values, atol=1e-12)
    with pytest.raises(FrameMismatch):
        fn.rescale_frames(u, eps, p, g, inverse=True)
