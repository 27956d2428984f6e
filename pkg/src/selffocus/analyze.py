"""Concentration ratios and tail diagnostics of computed solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import functional as fn
from .domain import Field, GridSpec, scale_shape
from .errors import DegenerateField, InsufficientTail, InvalidProblem, WrongRegime
from .functional import ProblemSpec
from .rearrange import shell_profile

FLOOR = 1e-13
MIN_SHELLS = 10


def serrin_exponent(n: int) -> float:
    return (2.0 * n - 2.0) / (n - 2.0) if n >= 3 else math.inf


# ---------------------------------------------------------------------------
# Concentration
# ---------------------------------------------------------------------------


@dataclass
class ConcentrationReport:
    rho: float
    h1_ratio: float
    lp_ratio: float


def _local_form(d: fn.Discretization, v: np.ndarray, rho: float) -> float:
    """Dirichlet form restricted to edges whose midpoint lies in |x| <= rho."""
    g = d.grid
    if g.is_radial:
        mid = g.coords[:-1] + g.h / 2
        keep = mid <= rho
        total = float(np.sum(d.edge[keep] * np.diff(v)[keep] ** 2))
        if g.coords[-1] + g.h / 2 <= rho:
            total += d.boundary_coef * v[-1] ** 2
        return total
    x = g.coords
    pv = np.pad(v, 1)
    xp = np.concatenate([[x[0] - g.h], x, [x[-1] + g.h]])
    X, Y = np.meshgrid(xp, xp, indexing="ij")
    dx = np.diff(pv, axis=0)[:, 1:-1]
    mx = np.hypot(0.5 * (X[1:, 1:-1] + X[:-1, 1:-1]), Y[1:, 1:-1])
    dy = np.diff(pv, axis=1)[1:-1, :]
    my = np.hypot(X[1:-1, 1:], 0.5 * (Y[1:-1, 1:] + Y[1:-1, :-1]))
    return float(np.sum(dx[mx <= rho] ** 2) + np.sum(dy[my <= rho] ** 2))


def concentration(v: Field, rho: float, spec: ProblemSpec) -> ConcentrationReport:
    """Fractions of ||v||^2 (with mass coefficient spec.eps^2) and of int |v|^p
    carried by the ball |x| <= rho.

    In the scaled frame spec.eps is 1 and these are the H^1 and L^p ratios.

    Raises:
        DegenerateField: a denominator is below 1e-300.
        InvalidProblem: rho is not below the truncation radius.
    """
    d = fn.discretization(spec)
    if not rho < d.grid.rmax:
        raise InvalidProblem("rho must be smaller than rmax")
    vals = v.values
    inside = d.grid.radius <= rho
    eps2 = spec.eps**2
    den_h1 = fn.norm_eps_sq(v, spec)
    a = np.abs(vals) ** spec.p
    den_lp = float(np.sum(d.w * a))
    if den_h1 < 1e-300 or den_lp < 1e-300:
        raise DegenerateField("field carries no energy")
    num_h1 = _local_form(d, vals, rho) + eps2 * float(np.sum((d.w * vals * vals)[inside]))
    num_lp = float(np.sum((d.w * a)[inside]))
    return ConcentrationReport(rho, num_h1 / den_h1, num_lp / den_lp)


def concentration_from_u(u: Field, rho: float, spec: ProblemSpec) -> ConcentrationReport:
    """Ratios of the scaled-frame solution v_eps, evaluated on the unscaled u.

    With v(y) = eps^{-2/(p-2)} u(y/eps) the ball |y| <= rho corresponds to
    |x| <= rho/eps and both ratios are invariant under the change of
    variables.
    """
    if not spec.eps > 0:
        raise InvalidProblem("needs eps > 0")
    rep = concentration(u, rho / spec.eps, spec)
    return ConcentrationReport(rho, rep.h1_ratio, rep.lp_ratio)


def scaled_frame_spec(spec: ProblemSpec) -> ProblemSpec:
    """ProblemSpec of the original problem for v: eps -> 1, core eps*omega."""
    eps = spec.eps
    g = spec.grid
    return ProblemSpec(
        spec.N,
        spec.p,
        1.0,
        scale_shape(spec.omega, eps),
        GridSpec(g.mode, g.h * eps, g.rmax * eps, g.dim),
        spec.q_rule,
        spec.boundary,
    )


# ---------------------------------------------------------------------------
# Decay
# ---------------------------------------------------------------------------


@dataclass
class DecayFit:
    exponent: float
    log_constant: float
    window: tuple
    max_residual: float
    stable: bool = True
    shift_change: float = 0.0


def _tail(u: Field, lo: float, hi: float):
    radii, vmax, vmin, _ = shell_profile(u)
    amp = np.maximum(np.abs(vmax), np.abs(vmin))
    keep = (radii >= lo) & (radii <= hi) & (amp > FLOOR)
    return radii[keep], amp[keep]


def _loglog(r, a):
    x, y = np.log(r), np.log(a)
    slope, icpt = np.polyfit(x, y, 1)
    return float(slope), float(icpt), float(np.max(np.abs(y - (slope * x + icpt))))


def decay_fit(u: Field, window: tuple | None = None) -> DecayFit:
    """Least-squares line through (log r, log shell-max |u|) on ``window``.

    The default window is [rmax/4, 3 rmax/4].  The fit is flagged unstable
    when moving the window by one shell changes the exponent by 0.05 or more.

    Raises:
        InsufficientTail: fewer than 10 shells above the 1e-13 floor.
    """
    g = u.grid
    lo, hi = window if window is not None else (g.rmax / 4.0, 3.0 * g.rmax / 4.0)
    if not lo < hi:
        raise InvalidProblem("window needs r_lo < r_hi")
    r, a = _tail(u, lo, hi)
    if r.size < MIN_SHELLS:
        raise InsufficientTail(f"only {r.size} shells above floor in [{lo}, {hi}]")
    slope, icpt, res = _loglog(r, a)
    change = 0.0
    for shift in (-g.h, g.h):
        rs, as_ = _tail(u, lo + shift, hi + shift)
        if rs.size >= MIN_SHELLS:
            change = max(change, abs(_loglog(rs, as_)[0] - slope))
    return DecayFit(slope, icpt, (lo, hi), res, change < 0.05, change)


@dataclass
class BoundsCheck:
    upper_ok: bool
    lower_ok: bool | None
    fitted_C: float
    fitted_Cdelta: float | None


def decay_bounds_check(
    u: Field, spec: ProblemSpec, rho: float, delta: float, lower: bool = True
) -> BoundsCheck:
    """Fit C |x|^{2-N} from above and C_delta |x|^{2-N-delta} from below on |x| >= rho.

    The upper bound is accepted when the largest value of u r^{N-2} is not
    attained on the outermost shell, the lower bound when the smallest value
    of u r^{N-2+delta} is positive and not attained there.

    Raises:
        WrongRegime: lower check requested with p at or below the Serrin exponent.
    """
    N = spec.N
    if N < 3 or spec.grid.mode != "radial":
        raise InvalidProblem("decay bounds need a radial grid with N >= 3")
    if lower and spec.p <= serrin_exponent(N):
        raise WrongRegime(
            f"p={spec.p} <= (2N-2)/(N-2)={serrin_exponent(N)}: no polynomial lower bound"
        )
    r = u.grid.coords
    v = u.values
    keep = r >= rho
    if np.count_nonzero(keep) < 2:
        raise InsufficientTail("no tail beyond rho")
    rt, vt = r[keep], v[keep]
    last = rt.size - 1
    up = vt * rt ** (N - 2.0)
    i_up = int(np.argmax(up))
    fitted_C = float(up[i_up])
    upper_ok = bool(np.isfinite(fitted_C) and i_up != last)
    if not lower:
        return BoundsCheck(upper_ok, None, fitted_C, None)
    lo = vt * rt ** (N - 2.0 + delta)
    i_lo = int(np.argmin(lo))
    fitted_Cd = float(lo[i_lo])
    lower_ok = bool(fitted_Cd > 0 and i_lo != last)
    return BoundsCheck(upper_ok, lower_ok, fitted_C, fitted_Cd)


@dataclass
class ExpDecayCheck:
    ok: bool
    fitted_rate: float
    linear_residual: float
    loglog_residual: float
    window: tuple


def exp_decay_check(v: Field, eps: float, window_lo: float | None = None) -> ExpDecayCheck:
    """Fit log |v| against r on the outer half of the tail.

    The tail is every shell at radius >= window_lo (default rmax/4) with
    shell max above the floor.  ``ok`` requires a rate of at most -eps/2 and a
    smaller max residual than the log-log (power law) fit on the same points.
    """
    if not eps > 0:
        raise InvalidProblem("exp_decay_check needs eps > 0")
    g = v.grid
    lo = g.rmax / 4.0 if window_lo is None else window_lo
    r, a = _tail(v, lo, g.rmax)
    if r.size < 2 * MIN_SHELLS:
        raise InsufficientTail(f"only {r.size} shells above floor beyond r={lo}")
    mid = 0.5 * (r[0] + r[-1])
    sel = r >= mid
    r, a = r[sel], a[sel]
    y = np.log(a)
    slope, icpt = np.polyfit(r, y, 1)
    lin_res = float(np.max(np.abs(y - (slope * r + icpt))))
    _, _, ll_res = _loglog(r, a)
    ok = bool(slope <= -0.5 * eps and lin_res < ll_res)
    return ExpDecayCheck(ok, float(slope), lin_res, ll_res, (float(r[0]), float(r[-1])))


@dataclass
class SerrinRow:
    N: int
    p: float
    exponent: float | None
    lower_ok: bool | None
    upper_ok: bool | None
    serrin: float
    error: str | None = None
    extra: dict = field(default_factory=dict)


def serrin_explore(specs, opts=None, window=None, rho=None, delta: float = 0.25) -> list[SerrinRow]:
    """Decay diagnostics of limit solutions across (N, p); no pass/fail."""
    from .solver import solve_limit

    rows = []
    for spec in specs:
        if spec.grid.mode != "radial" or spec.eps != 0:
            raise InvalidProblem("serrin_explore needs radial limit problems")
        s = serrin_exponent(spec.N)
        try:
            res = solve_limit(spec, opts)
            fit = decay_fit(res.u, window)
            rho_ = rho if rho is not None else fit.window[0]
            above = spec.p > s
            bc = decay_bounds_check(res.u, spec, rho_, delta, lower=above)
            rows.append(
                SerrinRow(
                    spec.N,
                    spec.p,
                    fit.exponent,
                    bc.lower_ok,
                    bc.upper_ok,
                    s,
                    extra={"energy": res.energy.j, "converged": res.converged, "stable": fit.stable},
                )
            )
        except Exception as exc:  # noqa: BLE001 - recorded per row
            rows.append(SerrinRow(spec.N, spec.p, None, None, None, s, f"{type(exc).__name__}: {exc}"))
    return rows
