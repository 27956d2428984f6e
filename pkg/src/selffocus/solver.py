"""Least-energy positive and nodal solutions by projected descent.

Both solvers move along the Sobolev gradient (the eps-inner-product Riesz
representative of J') and pull every trial point back to the constraint set:
the Nehari set for positive solutions, the nodal Nehari set for sign-changing
ones.  Step lengths follow Armijo backtracking on J.  A damped Newton solver
on a refined radial grid serves as an independent check.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from . import functional as fn
from .domain import Field, GridSpec, outer_radius, contains_radius
from .errors import (
    Diverged,
    InitNotInU,
    InvalidProblem,
    NewtonDiverged,
    NotInU,
    SignPartLost,
    SignPartMissing,
)
from .functional import EnergyBreakdown, ProblemSpec

log = logging.getLogger(__name__)

# relative size of an energy change that is indistinguishable from rounding
_ROUNDING = 1e-13
_MAX_SIGN_HALVINGS = 40


# ---------------------------------------------------------------------------
# Initial guesses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CenterBump:
    """Gaussian bump at the centre of the core (or on its mid-radius)."""

    jitter: float = 0.0


@dataclass(frozen=True)
class OffsetBump:
    center: tuple


@dataclass(frozen=True)
class Dipole:
    """Difference of two Gaussian bumps; ``centers=None`` picks a default pair."""

    centers: tuple | None = None
    jitter: float = 0.0


@dataclass(frozen=True)
class Custom:
    field: Field


def _bump_center(spec: ProblemSpec) -> float:
    """Radius at which a bump sits well inside omega."""
    a, b = spec.omega.intervals()[0]
    return 0.0 if a == 0.0 else 0.5 * (a + b)


def _gauss(spec: ProblemSpec, grid, center, width):
    if grid.is_radial:
        r = grid.coords
        return np.exp(-(((r - float(np.atleast_1d(center)[0])) / width) ** 2))
    pts = grid.points()
    c = np.asarray(center, dtype=float).reshape(2)
    d2 = np.sum((pts - c) ** 2, axis=-1)
    return np.exp(-d2 / width**2)


def default_dipole_centers(spec: ProblemSpec):
    a, b = spec.omega.intervals()[0]
    R = outer_radius(spec.omega)
    if spec.grid.mode == "radial":
        if a == 0.0:
            return (0.0, 0.6 * b)
        return (a + 0.25 * (b - a), a + 0.75 * (b - a))
    c = 0.4 * R if a == 0.0 else 0.5 * (a + b)
    return ((c, 0.0), (-c, 0.0))


def initial_field(spec: ProblemSpec, init, seed: int = 0) -> Field:
    grid = fn.problem_grid(spec)
    width = outer_radius(spec.omega) / 4.0
    rng = np.random.default_rng(seed)
    if isinstance(init, Custom):
        if init.field.grid != grid:
            raise InvalidProblem("custom initial field lives on another grid")
        return init.field.copy()
    if isinstance(init, CenterBump):
        c = _bump_center(spec)
        center = c if grid.is_radial else (c, 0.0)
        w = width
        if init.jitter:
            w *= 1.0 + init.jitter * rng.uniform(-1, 1)
            if not grid.is_radial:
                center = np.asarray(center) + init.jitter * width * rng.uniform(-1, 1, 2)
        return Field(grid, _gauss(spec, grid, center, w))
    if isinstance(init, OffsetBump):
        return Field(grid, _gauss(spec, grid, init.center, width))
    if isinstance(init, Dipole):
        c1, c2 = init.centers if init.centers is not None else default_dipole_centers(spec)
        w = width
        if init.jitter:
            w *= 1.0 + init.jitter * rng.uniform(-1, 1)
        return Field(grid, _gauss(spec, grid, c1, w) - _gauss(spec, grid, c2, w))
    raise InvalidProblem(f"unknown init {init!r}")


# ---------------------------------------------------------------------------
# Options and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveOptions:
    """Descent controls.

    ``grad_tol=None`` means 1e-8 times the projected gradient norm of the
    first (projected) iterate.
    """

    max_iters: int = 3000
    grad_tol: float | None = None
    step0: float = 1.0
    armijo: float = 1e-4
    seed: int = 0
    init: object = field(default_factory=CenterBump)
    rel_grad_tol: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidProblem("max_iters must be >= 1")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise InvalidProblem("grad_tol must be positive")
        if not self.step0 > 0:
            raise InvalidProblem("step0 must be positive")
        if not 0 < self.armijo < 1:
            raise InvalidProblem("armijo must lie in (0, 1)")


@dataclass
class SolveResult:
    u: Field
    energy: EnergyBreakdown
    nehari_residual: float
    grad_norm: float
    iters: int
    converged: bool
    grad_tol: float = math.nan
    history: list = field(default_factory=list, repr=False)
    meta: dict = field(default_factory=dict)


@dataclass
class NodalResult:
    u: Field
    parts: tuple
    energy: EnergyBreakdown
    part_residuals: tuple
    grad_norm: float
    iters: int
    converged: bool
    grad_tol: float = math.nan
    history: list = field(default_factory=list, repr=False)
    meta: dict = field(default_factory=dict)


def projected_gradient(u: Field, spec: ProblemSpec, nodal: bool = False) -> Field:
    """L^2 gradient minus its weighted-L^2 components along u (or u^+, u^-)."""
    g = fn.gradient(u, spec)
    dirs = fn.split_pm(u) if nodal else (u,)
    out = g.values.copy()
    w = u.grid.weights
    for d in dirs:
        nn = float(np.sum(w * d.values**2))
        if nn > 0:
            out -= float(np.sum(w * out * d.values)) / nn * d.values
    return Field(u.grid, out)


def _descend(spec, opts, u, project, nodal):
    """Shared Armijo loop.

    ``project`` maps a trial field onto the constraint set or raises
    NotInU/SignPartMissing, in which case the step is halved.  Once the
    predicted decrease falls below the rounding level of J the energy can no
    longer rank trial points, and the projected gradient norm takes over as
    the acceptance test.
    """
    J = fn.energy_value(u, spec)
    pg = projected_gradient(u, spec, nodal)
    gnorm = fn.weighted_l2(pg)
    tol = opts.grad_tol if opts.grad_tol is not None else opts.rel_grad_tol * gnorm
    history = [J]
    best = (J, u, gnorm)
    it = 0
    converged = gnorm < tol
    while not converged and it < opts.max_iters:
        g = fn.gradient(u, spec)
        sg = fn.sobolev_gradient(u, spec)
        slope = fn.l2_inner(g, sg)
        tau = opts.step0
        halvings = 0
        gnorm_c = None
        while True:
            if tau < 1e-14:
                raise Diverged(f"step underflow at iteration {it}")
            try:
                cand = project(Field(u.grid, u.values - tau * sg.values))
            except (NotInU, SignPartMissing) as exc:
                halvings += 1
                if halvings > _MAX_SIGN_HALVINGS:
                    if nodal:
                        raise SignPartLost(str(exc)) from exc
                    raise Diverged(str(exc)) from exc
                tau *= 0.5
                continue
            Jc = fn.energy_value(cand, spec)
            if Jc <= J - opts.armijo * tau * slope:
                if tau * slope >= _ROUNDING * abs(J):
                    break
                gnorm_c = fn.weighted_l2(projected_gradient(cand, spec, nodal))
                if gnorm_c < gnorm:
                    break
            elif tau * slope < _ROUNDING * abs(J) and Jc <= J + _ROUNDING * abs(J):
                gnorm_c = fn.weighted_l2(projected_gradient(cand, spec, nodal))
                if gnorm_c < gnorm:
                    break
            gnorm_c = None
            tau *= 0.5
        u, J = cand, Jc
        it += 1
        history.append(J)
        if gnorm_c is None:
            gnorm_c = fn.weighted_l2(projected_gradient(u, spec, nodal))
        gnorm = gnorm_c
        if J < best[0] or gnorm < best[2]:
            best = (J, u, gnorm)
        converged = gnorm < tol
    if not converged:
        log.info("max_iters reached with gradient norm %.3e (tol %.3e)", gnorm, tol)
        J, u, gnorm = best
    return u, gnorm, it, converged, tol, history


def solve_positive(spec: ProblemSpec, opts: SolveOptions | None = None) -> SolveResult:
    """Minimize J over the Nehari set starting from |init|.

    Raises:
        InitNotInU: the initial field has int Q|u|^p <= 0.
        Diverged: Armijo backtracking underflowed.
    """
    opts = opts or SolveOptions()
    u0 = Field(fn.problem_grid(spec), np.abs(initial_field(spec, opts.init, opts.seed).values))
    if not fn.in_U(u0, spec):
        raise InitNotInU("initial field is not in U")

    def project(v):
        return fn.nehari_project(abs(v), spec)[1]

    u = project(u0)
    u, gnorm, it, conv, tol, hist = _descend(spec, opts, u, project, nodal=False)
    res = fn.nehari_residual(u, spec)
    if conv and abs(res) >= 1e-8 * (1.0 + fn.norm_eps_sq(u, spec)):
        conv = False
    return SolveResult(u, fn.energy(u, spec), res, gnorm, it, conv, tol, hist)


def solve_nodal(spec: ProblemSpec, opts: SolveOptions | None = None) -> NodalResult:
    """Minimize J over the nodal Nehari set starting from a dipole.

    Raises:
        InitNotInU: a lobe of the initial field is not in U.
        SignPartLost: 40 halvings did not keep both sign parts in U.
    """
    opts = opts or SolveOptions(init=Dipole())
    init = opts.init if not isinstance(opts.init, CenterBump) else Dipole()
    u0 = initial_field(spec, init, opts.seed)
    try:
        u = fn.nodal_project(u0, spec)[0]
    except (NotInU, SignPartMissing) as exc:
        raise InitNotInU(str(exc)) from exc

    def project(v):
        return fn.nodal_project(v, spec)[0]

    u, gnorm, it, conv, tol, hist = _descend(spec, opts, u, project, nodal=True)
    rp, rm = fn.part_residuals(u, spec)
    np_, nm = fn.part_norms(u, spec)
    if conv and not (abs(rp) < 1e-8 * np_ and abs(rm) < 1e-8 * nm):
        conv = False
    return NodalResult(
        u, fn.split_pm(u), fn.energy(u, spec), (rp, rm), gnorm, it, conv, tol, hist
    )


def solve_limit(spec: ProblemSpec, opts: SolveOptions | None = None, nodal: bool = False):
    """Solve the eps = 0 problem; same contracts as the eps > 0 solvers."""
    if spec.eps != 0:
        raise InvalidProblem("solve_limit needs eps = 0")
    return solve_nodal(spec, opts) if nodal else solve_positive(spec, opts)


# ---------------------------------------------------------------------------
# Newton oracle
# ---------------------------------------------------------------------------


def _newton_residual(d, u, spec):
    """PDE residual -Delta_h u + eps^2 u - Q|u|^{p-2}u at the nodes."""
    return d.stiffness_apply(u) / d.w + spec.eps**2 * u - d.q * fn._pow_sign(u, spec.p)


def newton_solve(
    spec: ProblemSpec, u0: Field, tol: float = 1e-11, accept: float = 1e-9, max_iter: int = 60
) -> SolveResult:
    """Damped Newton iteration on the discrete Euler-Lagrange system (radial grids).

    Stops once the max-norm PDE residual is below ``tol``, or when the line
    search stalls at the rounding floor with the residual already below
    ``accept``.
    """
    d = fn.discretization(spec)
    if not d.grid.is_radial:
        raise InvalidProblem("the Newton oracle works on radial grids")
    u = u0.values.copy()
    p = spec.p

    def norm(r):
        return math.sqrt(float(np.sum(d.w * r * r)))

    F = _newton_residual(d, u, spec)
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(F)) < tol:
            it -= 1
            break
        a = np.abs(u)
        dfu = (p - 1.0) * np.where(a > 0, a ** (p - 2.0), 0.0)
        # weighted Jacobian: S + W (eps^2 - Q f'(u)), symmetric tridiagonal
        ab = np.zeros((3, u.size))
        ab[0, 1:] = d.s_off
        ab[1] = d.s_diag + d.w * (spec.eps**2 - d.q * dfu)
        ab[2, :-1] = d.s_off
        try:
            step = linalg.solve_banded((1, 1), ab, -d.w * F)
        except linalg.LinAlgError as exc:
            raise NewtonDiverged("singular Jacobian") from exc
        lam, f0 = 1.0, norm(F)
        while True:
            un = u + lam * step
            Fn = _newton_residual(d, un, spec)
            if norm(Fn) < (1.0 - 1e-4 * lam) * f0 or lam < 1e-10:
                break
            lam *= 0.5
        if lam < 1e-10:
            # stagnation at the rounding floor is convergence if below accept
            if np.max(np.abs(F)) < accept:
                it -= 1
                break
            raise NewtonDiverged(f"line search failed at iteration {it}")
        u, F = un, Fn
        log.debug("newton %d: max residual %.3e (lambda %.3g)", it, np.max(np.abs(F)), lam)
    else:
        if np.max(np.abs(F)) >= accept:
            raise NewtonDiverged(f"no convergence in {max_iter} iterations")
    out = Field(d.grid, u)
    res = fn.nehari_residual(out, spec)
    return SolveResult(
        out,
        fn.energy(out, spec),
        res,
        float(np.max(np.abs(F))),
        it,
        True,
        tol,
        meta={"method": "newton"},
    )


def refine_spec(spec: ProblemSpec, h: float) -> ProblemSpec:
    g = spec.grid
    return ProblemSpec(
        spec.N, spec.p, spec.eps, spec.omega, GridSpec(g.mode, h, g.rmax, g.dim), spec.q_rule, spec.boundary
    )


def radial_oracle(
    spec: ProblemSpec,
    fine_h: float,
    coarse: SolveResult | None = None,
    opts: SolveOptions | None = None,
) -> SolveResult:
    """Newton solve at ``fine_h`` started from an interpolated descent solution."""
    if spec.grid.mode != "radial":
        raise InvalidProblem("radial_oracle needs a radial grid")
    if fine_h > spec.grid.h / 4.0 * (1 + 1e-12):
        raise InvalidProblem("fine_h must be at most h/4")
    if coarse is None:
        coarse = solve_positive(spec, opts)
    fine = refine_spec(spec, fine_h)
    grid = fn.problem_grid(fine)
    cg = coarse.u.grid
    u0 = np.interp(grid.coords, cg.coords, coarse.u.values, right=0.0)
    return newton_solve(fine, Field(grid, u0))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class CurveRow:
    eps: float
    energy: float
    converged: bool
    result: object = None
    error: str | None = None


def energy_curve(
    template: ProblemSpec,
    eps_list: Sequence[float],
    opts: SolveOptions | None = None,
    nodal: bool = False,
    warm_start: bool = True,
) -> list[CurveRow]:
    """Least energies along decreasing eps, warm-starting each row from the last.

    Solver failures are recorded on the row and the sweep moves on.
    """
    eps_list = list(eps_list)
    if any(a < b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be sorted in descending order")
    base = opts or SolveOptions(init=Dipole() if nodal else CenterBump())
    rows = []
    prev = None
    for eps in eps_list:
        spec = template.with_eps(float(eps))
        o = base
        if warm_start and prev is not None:
            o = _with_init(base, Custom(prev))
        try:
            r = solve_nodal(spec, o) if nodal else solve_positive(spec, o)
        except Exception as exc:  # noqa: BLE001 - recorded per row
            log.warning("eps=%g failed: %s", eps, exc)
            rows.append(CurveRow(float(eps), math.nan, False, None, f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(CurveRow(float(eps), r.energy.j, r.converged, r))
        prev = r.u
    return rows


def _with_init(opts: SolveOptions, init) -> SolveOptions:
    return SolveOptions(
        opts.max_iters, opts.grad_tol, opts.step0, opts.armijo, opts.seed, init, opts.rel_grad_tol
    )
