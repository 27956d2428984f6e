"""Discrete energy, gradient and Nehari-type projections.

The Dirichlet form is assembled edge by edge,

    D(u) = sum_edges c_e (u_j - u_i)^2  (+ an exterior boundary term),

and the discrete Laplacian is defined as ``-Delta_h u = W^{-1} S u`` where S is
the matrix of D and W the diagonal of quadrature weights.  With this pairing
``<-Delta_h u, u>_W = D(u)`` holds exactly, so Nehari residuals and the energy
identity on the Nehari set are exact up to rounding.

Radial grids close the domain at R_max with the exact Dirichlet-to-Neumann
map of the linear exterior problem -Delta k + eps^2 k = 0 (decaying k).  For
N <= 2 with eps = 0 no decaying exterior solution exists and the field is set
to zero one cell beyond R_max instead.  Cartesian grids always use the zero
ghost layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft, linalg, special

from .domain import (
    CARTESIAN,
    RADIAL,
    Field,
    Grid,
    GridSpec,
    OmegaShape,
    build_grid,
    q_cell_field,
    q_field,
    sphere_area,
)
from .errors import (
    FrameMismatch,
    GridMismatch,
    InvalidProblem,
    NotInU,
    NotNodal,
    SignPartMissing,
    ZeroField,
)

Q_RULES = ("cell", "node")
BOUNDARY_RULES = ("auto", "dirichlet")


def critical_exponent(n: int) -> float:
    return 2.0 * n / (n - 2.0) if n >= 3 else math.inf


@dataclass(frozen=True)
class ProblemSpec:
    """Parameters of -Delta u + eps^2 u = Q(x)|u|^{p-2}u on a truncated grid.

    ``eps = 0`` selects the limit problem.  ``q_rule`` chooses how Q enters the
    quadrature of the nonlinear term: ``"cell"`` averages Q over each node's
    cell, ``"node"`` samples it at the node.
    """

    N: int
    p: float
    eps: float
    omega: OmegaShape
    grid: GridSpec
    q_rule: str = "cell"
    boundary: str = "auto"

    def __post_init__(self):
        if self.N < 1:
            raise InvalidProblem("N must be >= 1")
        if not (2.0 < self.p < critical_exponent(self.N)):
            raise InvalidProblem(
                f"p={self.p} outside (2, {critical_exponent(self.N)}) for N={self.N}"
            )
        if not self.eps >= 0:
            raise InvalidProblem("eps must be >= 0")
        if self.grid.mode == RADIAL and self.grid.dim != self.N:
            raise InvalidProblem("radial grid dimension must equal N")
        if self.grid.mode == CARTESIAN and self.N != 2:
            raise InvalidProblem("cartesian grids require N = 2")
        if self.q_rule not in Q_RULES:
            raise InvalidProblem(f"q_rule must be one of {Q_RULES}")
        if self.boundary not in BOUNDARY_RULES:
            raise InvalidProblem(f"boundary must be one of {BOUNDARY_RULES}")

    def with_eps(self, eps: float) -> "ProblemSpec":
        return ProblemSpec(self.N, self.p, eps, self.omega, self.grid, self.q_rule, self.boundary)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    mass: float
    q_lp: float
    lp: float
    j: float


# ---------------------------------------------------------------------------
# Assembled operators
# ---------------------------------------------------------------------------


def exterior_coefficient(n: int, eps: float, radius: float) -> float | None:
    """-k'(R)/k(R) for the decaying radial solution of -Delta k + eps^2 k = 0.

    Returns None when no decaying solution exists (eps = 0 and n <= 2).
    """
    if eps == 0.0:
        return (n - 2.0) / radius if n >= 3 else None
    nu = n / 2.0 - 1.0
    z = eps * radius
    return 2.0 * nu / radius + eps * special.kve(nu - 1.0, z) / special.kve(nu, z)


class Discretization:
    """Matrices and weights shared by every operation on one ProblemSpec."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.grid = build_grid(spec.grid, spec.omega)
        g = self.grid
        self.w = g.weights
        if spec.q_rule == "cell":
            self.q = q_cell_field(g, spec.omega).values
        else:
            self.q = q_field(g, spec.omega).values
        if g.mode == RADIAL:
            self._build_radial()
        else:
            self._build_cartesian()

    # radial: S is tridiagonal
    def _build_radial(self):
        g, spec = self.grid, self.spec
        n, h = spec.N, g.h
        r = g.coords
        omega_area = sphere_area(n)
        mid = r[:-1] + h / 2
        self.edge = omega_area * mid ** (n - 1) / h
        r_out = r[-1] + h / 2
        kappa = exterior_coefficient(n, spec.eps, r_out) if spec.boundary == "auto" else None
        if kappa is None:
            self.boundary_coef = omega_area * r_out ** (n - 1) / h
            self.boundary_kind = "dirichlet"
        else:
            self.boundary_coef = omega_area * r_out ** (n - 1) * kappa
            self.boundary_kind = "dtn"
        diag = np.zeros_like(r)
        diag[:-1] += self.edge
        diag[1:] += self.edge
        diag[-1] += self.boundary_coef
        self.s_diag = diag
        self.s_off = -self.edge
        # upper banded storage of A = S + eps^2 W for solveh_banded
        ab = np.zeros((2, r.size))
        ab[0, 1:] = self.s_off
        ab[1] = diag + spec.eps**2 * self.w
        self._a_banded = ab

    def _build_cartesian(self):
        g, spec = self.grid, self.spec
        n = g.shape[0]
        k = np.arange(1, n + 1)
        lam = 2.0 - 2.0 * np.cos(np.pi * k / (n + 1))
        # eigenvalues of A = S + eps^2 h^2 I in the DST-I basis
        self._a_eig = lam[:, None] + lam[None, :] + spec.eps**2 * g.h**2
        self.boundary_kind = "dirichlet"

    def stiffness_apply(self, u: np.ndarray) -> np.ndarray:
        """S u (no weights)."""
        if self.grid.mode == RADIAL:
            out = self.s_diag * u
            out[:-1] += self.s_off * u[1:]
            out[1:] += self.s_off * u[:-1]
            return out
        out = 4.0 * u
        out[1:, :] -= u[:-1, :]
        out[:-1, :] -= u[1:, :]
        out[:, 1:] -= u[:, :-1]
        out[:, :-1] -= u[:, 1:]
        return out

    def dirichlet_form(self, u: np.ndarray, v: np.ndarray | None = None) -> float:
        """D(u, v) summed edge by edge."""
        if v is None:
            v = u
        if self.grid.mode == RADIAL:
            du, dv = np.diff(u), np.diff(v)
            return float(np.sum(self.edge * du * dv) + self.boundary_coef * u[-1] * v[-1])
        pu = np.pad(u, 1)
        pv = np.pad(v, 1)
        total = np.sum(np.diff(pu, axis=0)[:, 1:-1] * np.diff(pv, axis=0)[:, 1:-1])
        total += np.sum(np.diff(pu, axis=1)[1:-1, :] * np.diff(pv, axis=1)[1:-1, :])
        return float(total)

    def solve_a(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (S + eps^2 W) x = rhs."""
        if self.grid.mode == RADIAL:
            return linalg.solveh_banded(self._a_banded, rhs)
        return fft.dstn(fft.dstn(rhs, type=1, norm="ortho") / self._a_eig, type=1, norm="ortho")


@lru_cache(maxsize=64)
def discretization(spec: ProblemSpec) -> Discretization:
    return Discretization(spec)


def problem_grid(spec: ProblemSpec) -> Grid:
    return discretization(spec).grid


def _values(u: Field, spec: ProblemSpec) -> tuple[Discretization, np.ndarray]:
    d = discretization(spec)
    if u.grid is not d.grid and u.grid != d.grid:
        raise GridMismatch("field grid does not match the problem grid")
    return d, u.values


def _pow_sign(u: np.ndarray, p: float) -> np.ndarray:
    """|u|^{p-2} u, with the removable singularity at 0 set to 0."""
    a = np.abs(u)
    return np.where(a > 0, a ** (p - 1.0), 0.0) * np.sign(u)


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------


def dirichlet_energy(u: Field, spec: ProblemSpec) -> float:
    d, v = _values(u, spec)
    return d.dirichlet_form(v)


def norm_eps_sq(u: Field, spec_or_eps, spec: ProblemSpec | None = None) -> float:
    """||u||_eps^2 = D(u) + eps^2 * sum w u^2.

    Accepts ``norm_eps_sq(u, spec)`` or ``norm_eps_sq(u, eps, spec)``; the
    second form evaluates the norm for a different eps on the same grid.
    """
    if isinstance(spec_or_eps, ProblemSpec):
        spec = spec_or_eps
        eps = spec.eps
    else:
        eps = float(spec_or_eps)
        spec = spec.with_eps(eps)
    d, v = _values(u, spec)
    return d.dirichlet_form(v) + eps**2 * float(np.sum(d.w * v * v))


def inner_eps(u: Field, v: Field, spec: ProblemSpec) -> float:
    d, a = _values(u, spec)
    _, b = _values(v, spec)
    return d.dirichlet_form(a, b) + spec.eps**2 * float(np.sum(d.w * a * b))


def q_lp(u: Field, spec: ProblemSpec) -> float:
    d, v = _values(u, spec)
    return float(np.sum(d.w * d.q * np.abs(v) ** spec.p))


def energy(u: Field, spec: ProblemSpec) -> EnergyBreakdown:
    d, v = _values(u, spec)
    dir_ = d.dirichlet_form(v)
    mass = float(np.sum(d.w * v * v))
    a = np.abs(v) ** spec.p
    qlp = float(np.sum(d.w * d.q * a))
    lp = float(np.sum(d.w * a))
    j = dir_ / 2.0 + spec.eps**2 * mass / 2.0 - qlp / spec.p
    return EnergyBreakdown(dir_, mass, qlp, lp, j)


def energy_value(u: Field, spec: ProblemSpec) -> float:
    return energy(u, spec).j


def laplacian_apply(u: Field, spec: ProblemSpec) -> Field:
    """-Delta_h u."""
    d, v = _values(u, spec)
    return Field(d.grid, d.stiffness_apply(v) / d.w)


def gradient(u: Field, spec: ProblemSpec) -> Field:
    """Weighted-L^2 representative of J'(u): -Delta_h u + eps^2 u - Q|u|^{p-2}u."""
    d, v = _values(u, spec)
    g = d.stiffness_apply(v) / d.w + spec.eps**2 * v - d.q * _pow_sign(v, spec.p)
    return Field(d.grid, g)


def sobolev_gradient(u: Field, spec: ProblemSpec) -> Field:
    """Riesz representative of J'(u) in the eps inner product.

    Returns d with <d, v>_eps = J'(u)v for every v.  For eps = 0 the inner
    product is the Dirichlet form including the exterior boundary term.
    """
    d, v = _values(u, spec)
    g = gradient(u, spec).values
    return Field(d.grid, d.solve_a(d.w * g))


def weighted_l2(u: Field) -> float:
    return math.sqrt(float(np.sum(u.grid.weights * u.values**2)))


def l2_inner(u: Field, v: Field) -> float:
    return float(np.sum(u.grid.weights * u.values * v.values))


# ---------------------------------------------------------------------------
# Nehari set
# ---------------------------------------------------------------------------


def in_U(u: Field, spec: ProblemSpec) -> bool:
    return q_lp(u, spec) > 0.0


def nehari_residual(u: Field, spec: ProblemSpec) -> float:
    """J'(u)u = ||u||_eps^2 - int Q|u|^p."""
    return norm_eps_sq(u, spec) - q_lp(u, spec)


def nehari_scale(u: Field, spec: ProblemSpec) -> float:
    """The scalar t_u placing t_u * u on the Nehari set."""
    if not np.any(u.values):
        raise ZeroField("cannot project the zero field")
    nrm = norm_eps_sq(u, spec)
    qlp = q_lp(u, spec)
    if not qlp > 0:
        raise NotInU("int Q|u|^p <= 0")
    if not nrm > 0:
        raise ZeroField("||u||_eps vanishes")
    return (nrm / qlp) ** (1.0 / (spec.p - 2.0))


def nehari_project(u: Field, spec: ProblemSpec) -> tuple[float, Field]:
    t = nehari_scale(u, spec)
    return t, Field(u.grid, t * u.values)


def nehari_energy(u: Field, spec: ProblemSpec) -> float:
    """J(t_u u) from the closed form, without forming t_u u."""
    p = spec.p
    nrm = norm_eps_sq(u, spec)
    qlp = q_lp(u, spec)
    if not qlp > 0:
        raise NotInU("int Q|u|^p <= 0")
    return (p - 2.0) / (2.0 * p) * (nrm / qlp ** (2.0 / p)) ** (p / (p - 2.0))


# ---------------------------------------------------------------------------
# Nodal set
# ---------------------------------------------------------------------------


def split_pm(u: Field) -> tuple[Field, Field]:
    return u.positive_part(), u.negative_part()


def part_residuals(u: Field, spec: ProblemSpec) -> tuple[float, float]:
    """(J'(u)u^+, J'(u)u^-).

    On the discrete grid u^+ and u^- interact through edges that cross the
    nodal line, so these differ from ``nehari_residual(u^+)`` by the cross
    term <u^+, u^->_eps.  Both vanish for every nodal critical point.
    """
    d, v = _values(u, spec)
    up, um = np.maximum(v, 0.0), np.minimum(v, 0.0)
    cross = d.dirichlet_form(up, um)
    res = []
    for part in (up, um):
        nrm = d.dirichlet_form(part) + spec.eps**2 * float(np.sum(d.w * part * part))
        res.append(nrm + cross - float(np.sum(d.w * d.q * np.abs(part) ** spec.p)))
    return res[0], res[1]


def part_norms(u: Field, spec: ProblemSpec) -> tuple[float, float]:
    up, um = split_pm(u)
    return norm_eps_sq(up, spec), norm_eps_sq(um, spec)


def _nodal_coefficients(a, b, m, A, B, p, tol=1e-15, max_iter=100):
    """Solve s a + t m = s^{p-1} A, t b + s m = t^{p-1} B for s, t > 0.

    Newton in logarithmic variables started from the decoupled solution.
    The Jacobian is diagonally dominant, so plain Newton with backtracking on
    the residual converges from that start.
    """
    x = math.log(a / A) / (p - 2.0)
    y = math.log(b / B) / (p - 2.0)

    def resid(x, y):
        return np.array(
            [
                math.exp((p - 2.0) * x) * A / a - 1.0 - math.exp(y - x) * m / a,
                math.exp((p - 2.0) * y) * B / b - 1.0 - math.exp(x - y) * m / b,
            ]
        )

    f = resid(x, y)
    for _ in range(max_iter):
        if np.max(np.abs(f)) < tol:
            break
        exy = math.exp(y - x) * m
        eyx = math.exp(x - y) * m
        jac = np.array(
            [
                [(p - 2.0) * math.exp((p - 2.0) * x) * A / a + exy / a, -exy / a],
                [-eyx / b, (p - 2.0) * math.exp((p - 2.0) * y) * B / b + eyx / b],
            ]
        )
        step = np.linalg.solve(jac, -f)
        lam = 1.0
        fnorm = np.max(np.abs(f))
        while lam > 1e-8:
            xn, yn = x + lam * step[0], y + lam * step[1]
            fn = resid(xn, yn)
            if np.max(np.abs(fn)) < fnorm:
                break
            lam *= 0.5
        else:
            break
        x, y, f = xn, yn, fn
    return math.exp(x), math.exp(y)


def nodal_project(u: Field, spec: ProblemSpec) -> tuple[Field, float, float]:
    """Scale u^+ and u^- so that J'(v)v^+ = J'(v)v^- = 0 for v = t+ u^+ + t- u^-.

    Returns ``(projected, tplus, tminus)``.  When no grid edge joins the
    supports of u^+ and u^- the two scalings decouple and each equals the
    Nehari scale of the corresponding part.
    """
    d, v = _values(u, spec)
    up, um = np.maximum(v, 0.0), np.minimum(v, 0.0)
    if not np.any(up):
        raise SignPartMissing("u^+ vanishes")
    if not np.any(um):
        raise SignPartMissing("u^- vanishes")
    eps2 = spec.eps**2
    a = d.dirichlet_form(up) + eps2 * float(np.sum(d.w * up * up))
    b = d.dirichlet_form(um) + eps2 * float(np.sum(d.w * um * um))
    m = d.dirichlet_form(up, um)
    A = float(np.sum(d.w * d.q * up**spec.p))
    B = float(np.sum(d.w * d.q * np.abs(um) ** spec.p))
    if not A > 0:
        raise NotInU("u^+ is not in U", part="plus")
    if not B > 0:
        raise NotInU("u^- is not in U", part="minus")
    if m == 0.0:
        tp = (a / A) ** (1.0 / (spec.p - 2.0))
        tm = (b / B) ** (1.0 / (spec.p - 2.0))
    else:
        tp, tm = _nodal_coefficients(a, b, m, A, B, spec.p)
    return Field(d.grid, tp * up + tm * um), tp, tm


def is_nodal(u: Field, spec: ProblemSpec, rtol: float = 1e-8) -> bool:
    up, um = split_pm(u)
    if not (np.any(up.values) and np.any(um.values)):
        return False
    rp, rm = part_residuals(u, spec)
    np_, nm = part_norms(u, spec)
    return abs(rp) <= rtol * np_ and abs(rm) <= rtol * nm


def nodal_path(u: Field, s: float, spec: ProblemSpec) -> Field:
    """Point gamma(s) of the path from the projected u^+ (s=0) to u^- (s=1).

    gamma(s) = t_w w with w = (1-s) u^+ + s u^-; for u in the nodal set the
    path passes through u at s = 1/2 and J(gamma(s)) < J(u) elsewhere.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    if not is_nodal(u, spec):
        raise NotNodal("u is not on the nodal set")
    up, um = split_pm(u)
    w = Field(u.grid, (1.0 - s) * up.values + s * um.values)
    return nehari_project(w, spec)[1]


# ---------------------------------------------------------------------------
# Frame change u(x) = eps^{2/(p-2)} v(eps x)
# ---------------------------------------------------------------------------


def frame_spec(spec: ProblemSpec, eps: float, to: str) -> GridSpec:
    """Grid spec of the other frame: spacing and radius scale by eps or 1/eps."""
    g = spec.grid
    factor = eps if to == "v" else 1.0 / eps
    return GridSpec(g.mode, g.h * factor, g.rmax * factor, g.dim)


def _sample(field: Field, points: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of ``field`` at ``points`` (zero outside)."""
    g = field.grid
    if g.is_radial:
        r = np.abs(points[..., 0])
        # the Neumann reflection makes u constant on [0, h]
        return np.interp(r, g.coords, field.values, left=field.values[0], right=0.0)
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator(
        (g.coords, g.coords), field.values, bounds_error=False, fill_value=0.0
    )
    return interp(points.reshape(-1, 2)).reshape(points.shape[:-1])


def rescale_frames(v: Field, eps: float, p: float, target: Grid, inverse: bool = False) -> Field:
    """Change frames between the scaled and unscaled problems.

    Forward (``inverse=False``): u(x) = eps^{2/(p-2)} v(eps x), with ``target``
    the u-frame grid.  Inverse: v(y) = eps^{-2/(p-2)} u(y/eps).

    Raises:
        FrameMismatch: if eps <= 0, the grid modes or dimensions differ, or the
            target truncation radius is not the source radius scaled by 1/eps
            (resp. eps).
    """
    if not eps > 0:
        raise FrameMismatch("eps must be positive")
    src = v.grid
    if src.mode != target.mode or src.dim != target.dim:
        raise FrameMismatch("grid modes differ")
    ratio = 1.0 / eps if not inverse else eps
    if not math.isclose(target.rmax, src.rmax * ratio, rel_tol=1e-9):
        raise FrameMismatch(
            f"target rmax {target.rmax} != {src.rmax} * {ratio} (frame scaling)"
        )
    scale = eps ** (2.0 / (p - 2.0))
    if inverse:
        values = _sample(v, target.points() / eps) / scale
    else:
        values = scale * _sample(v, target.points() * eps)
    return Field(target, values)
