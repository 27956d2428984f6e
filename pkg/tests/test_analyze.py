import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selffocus import analyze as an
from selffocus import functional as fn
from selffocus import solver as sv
from selffocus.domain import Ball, Field, GridSpec
from selffocus.errors import InsufficientTail, WrongRegime
from selffocus.functional import ProblemSpec

SPEC = ProblemSpec(3, 5.0, 0.0, Ball(1.0), GridSpec("radial", 0.05, 40.0, 3))
GRID = fn.problem_grid(SPEC)


def test_serrin_exponent():
    assert an.serrin_exponent(3) == 4.0
    assert an.serrin_exponent(4) == 3.0
    assert math.isinf(an.serrin_exponent(2))


@given(st.floats(-4.0, -0.5), st.floats(0.1, 10.0))
def test_decay_fit_recovers_power_law(k, c):
    u = Field(GRID, c * GRID.coords**k)
    fit = an.decay_fit(u)
    assert fit.exponent == pytest.approx(k, abs=1e-9)
    assert fit.log_constant == pytest.approx(math.log(c), abs=1e-8)
    assert fit.stable


def test_decay_fit_needs_tail():
    u = Field(GRID, np.where(GRID.coords < 10.2, 1.0, 0.0))
    with pytest.raises(InsufficientTail):
        an.decay_fit(u)


def test_bounds_and_regime():
    r = GRID.coords
    u = Field(GRID, 1.0 / r + 1.0 / r**2)
    ok = an.decay_bounds_check(u, SPEC, 10.0, 0.25)
    assert ok.upper_ok and ok.lower_ok
    # a tail decaying faster than r^{2-N-delta} fails the lower check
    fast = Field(GRID, r**-1.5)
    assert not an.decay_bounds_check(fast, SPEC, 10.0, 0.25).lower_ok
    sub = ProblemSpec(3, 3.5, 0.0, Ball(1.0), SPEC.grid)
    with pytest.raises(WrongRegime):
        an.decay_bounds_check(u, sub, 10.0, 0.25)
    assert an.decay_bounds_check(u, sub, 10.0, 0.25, lower=False).lower_ok is None


def test_exp_decay_check_separates_models():
    r = GRID.coords
    exp = an.exp_decay_check(Field(GRID, np.exp(-r) / r), 1.0)
    assert exp.ok and exp.fitted_rate == pytest.approx(-1.0, abs=0.05)
    power = an.exp_decay_check(Field(GRID, r**-2.0), 1.0)
    assert not power.ok


def test_concentration_frame_invariance():
    eps = 0.5
    spec = ProblemSpec(3, 4.0, eps, Ball(1.0), GridSpec("radial", 0.02, 12.0, 3))
    res = sv.solve_positive(spec)
    from_u = an.concentration_from_u(res.u, 1.0, spec)
    vspec = an.scaled_frame_spec(spec)
    v = fn.rescale_frames(res.u, eps, spec.p, fn.problem_grid(vspec), inverse=True)
    direct = an.concentration(v, 1.0, vspec)
    # the v-frame grid is the exact image of the u-frame grid, so the ratios agree
    assert direct.h1_ratio == pytest.approx(from_u.h1_ratio, rel=1e-9)
    assert direct.lp_ratio == pytest.approx(from_u.lp_ratio, rel=1e-9)
    assert 0 < from_u.h1_ratio <= 1 and 0 < from_u.lp_ratio <= 1


def test_serrin_explore_reports_errors_per_row():
    bad = ProblemSpec(3, 5.0, 0.0, Ball(1.0), GridSpec("radial", 0.05, 4.0, 3))
    rows = an.serrin_explore([bad], window=(1.0, 3.5))
    assert len(rows) == 1
    assert rows[0].error is not None or rows[0].exponent is not None
