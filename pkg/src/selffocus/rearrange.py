"""Schwarz symmetrization, polarization and symmetry diagnostics on grids.

Cartesian shells are the exact node sets {i^2 + j^2 = const}; all shell
statistics use that membership and never interpolate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Field, Grid, OmegaShape, contains_radius
from .errors import AxisNotGridCompatible, NegativeInput


@dataclass(frozen=True)
class HalfspaceAxis:
    """Unit vector e = (cos(k pi/4), sin(k pi/4)), k = 0..7.

    These are the directions whose reflection x -> x - 2(x.e)e maps the
    square lattice onto itself.
    """

    k: int

    def __post_init__(self):
        if not 0 <= self.k < 8:
            raise AxisNotGridCompatible(f"axis index must lie in 0..7, got {self.k}")

    @classmethod
    def from_vector(cls, e) -> "HalfspaceAxis":
        angle = math.atan2(e[1], e[0])
        k = round(angle / (math.pi / 4)) % 8
        if abs(angle - k * math.pi / 4) > 1e-9 and abs(abs(angle - k * math.pi / 4) - 2 * math.pi) > 1e-9:
            raise AxisNotGridCompatible(f"direction {tuple(e)} is not lattice compatible")
        return cls(k)

    @property
    def vector(self) -> tuple[float, float]:
        a = self.k * math.pi / 4
        c, s = math.cos(a), math.sin(a)
        return (0.0 if abs(c) < 1e-15 else c, 0.0 if abs(s) < 1e-15 else s)


ALL_AXES = tuple(HalfspaceAxis(k) for k in range(8))


def _lattice_index(grid: Grid):
    m = (len(grid.coords) - 1) // 2
    idx = np.arange(-m, m + 1)
    return np.meshgrid(idx, idx, indexing="ij")


def _require_cartesian(grid: Grid, what: str):
    if grid.is_radial:
        raise AxisNotGridCompatible(f"{what} needs a cartesian grid")


def reflect(u: Field, axis: HalfspaceAxis) -> Field:
    """u o sigma_e as a field on the same lattice."""
    _require_cartesian(u.grid, "reflection")
    v = u.values
    k = axis.k % 4
    if k == 0:
        out = v[::-1, :]
    elif k == 2:
        out = v[:, ::-1]
    elif k == 1:
        out = v[::-1, ::-1].T
    else:
        out = v.T
    return Field(u.grid, np.ascontiguousarray(out))


def halfspace_sign(grid: Grid, axis: HalfspaceAxis) -> np.ndarray:
    """sign(x . e) at every node, computed from integer lattice indices."""
    I, J = _lattice_index(grid)
    k = axis.k
    base = {0: I, 1: I + J, 2: J, 3: J - I}[k % 4]
    s = np.sign(base)
    return -s if k >= 4 else s


def polarize(u: Field, axis: HalfspaceAxis) -> Field:
    """Two-point rearrangement putting the larger value of each pair in H(e)."""
    _require_cartesian(u.grid, "polarization")
    ur = reflect(u, axis).values
    s = halfspace_sign(u.grid, axis)
    v = np.where(s >= 0, np.maximum(u.values, ur), np.minimum(u.values, ur))
    return Field(u.grid, v)


# ---------------------------------------------------------------------------
# Schwarz symmetrization
# ---------------------------------------------------------------------------


def _radial_order(grid: Grid) -> np.ndarray:
    """Flat node indices sorted by |x|, ties broken lexicographically."""
    if grid.is_radial:
        return np.arange(grid.shape[0])
    I, J = _lattice_index(grid)
    r2 = (I * I + J * J).ravel()
    return np.lexsort((J.ravel(), I.ravel(), r2))


def schwarz(u: Field) -> Field:
    """Radially nonincreasing rearrangement of a nonnegative field.

    Nodes are taken in order of increasing |x|; node k receives the value of
    u at the cumulative measure of the cells before it plus half its own.
    On uniform-weight grids this is an exact permutation of the values.
    """
    v = u.values.ravel()
    if np.any(v < 0):
        raise NegativeInput("schwarz symmetrization needs u >= 0")
    w = u.grid.weights.ravel()
    order = _radial_order(u.grid)
    by_value = np.argsort(-v, kind="stable")
    cum_val = np.cumsum(w[by_value])
    w_r = w[order]
    mid = np.cumsum(w_r) - 0.5 * w_r
    pick = np.searchsorted(cum_val, mid, side="right")
    pick = np.minimum(pick, v.size - 1)
    out = np.empty_like(v)
    out[order] = v[by_value][pick]
    return Field(u.grid, out.reshape(u.grid.shape))


def distribution(u: Field, levels) -> np.ndarray:
    """mu(t) = measure of {u > t} for each t in ``levels``."""
    v = u.values.ravel()
    w = u.grid.weights.ravel()
    order = np.argsort(v)
    vs = v[order]
    tail = np.concatenate([np.cumsum(w[order][::-1])[::-1], [0.0]])
    idx = np.searchsorted(vs, np.asarray(levels, dtype=float), side="right")
    return tail[idx]


def lp_norm(u: Field, p: float) -> float:
    return float(np.sum(u.grid.weights * np.abs(u.values) ** p)) ** (1.0 / p)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def _shells(grid: Grid):
    """(shell id per flat node, radius per shell) for exact lattice shells."""
    I, J = _lattice_index(grid)
    r2 = (I * I + J * J).ravel()
    uniq, inv = np.unique(r2, return_inverse=True)
    return inv, np.sqrt(uniq) * grid.h


def shell_profile(u: Field):
    """Radii and (max, min, mean) of u on every exact shell."""
    if u.grid.is_radial:
        v = u.values
        return u.grid.coords, v, v, v
    inv, radii = _shells(u.grid)
    v = u.values.ravel()
    n = radii.size
    vmax = np.full(n, -np.inf)
    vmin = np.full(n, np.inf)
    np.maximum.at(vmax, inv, v)
    np.minimum.at(vmin, inv, v)
    mean = np.bincount(inv, weights=v, minlength=n) / np.bincount(inv, minlength=n)
    return radii, vmax, vmin, mean


def radial_check(u: Field, radius: float | None = None) -> float:
    """Largest within-shell oscillation plus largest outward increase of the
    shell-averaged profile over shells with |x| <= radius (default rmax/4).

    Zero iff u is discretely radial and nonincreasing there.  The default
    keeps the square truncation box, which is not radial, out of the check.
    """
    radii, vmax, vmin, mean = shell_profile(u)
    keep = radii <= (u.grid.rmax / 4.0 if radius is None else radius)
    osc = float(np.max((vmax - vmin)[keep], initial=0.0)) if not u.grid.is_radial else 0.0
    inc = float(np.max(np.diff(mean[keep]), initial=0.0))
    return osc + max(inc, 0.0)


def radial_deviation(u: Field, radius: float | None = None) -> float:
    if u.grid.is_radial:
        return 0.0
    radii, vmax, vmin, _ = shell_profile(u)
    keep = radii <= (u.grid.rmax / 4.0 if radius is None else radius)
    return float(np.max((vmax - vmin)[keep], initial=0.0))


def dichotomy_violation(u: Field, axis: HalfspaceAxis, mask: np.ndarray | None = None) -> float:
    """min(max (u - u_e)^+, max (u - u_e)^-) over H(e) (intersected with mask).

    Zero iff u >= u o sigma_e or u <= u o sigma_e throughout the region.
    """
    d = u.values - reflect(u, axis).values
    region = halfspace_sign(u.grid, axis) > 0
    if mask is not None:
        region &= mask
    if not np.any(region):
        return 0.0
    dr = d[region]
    return float(min(np.max(np.maximum(dr, 0.0)), np.max(np.maximum(-dr, 0.0))))


def angular_violation(u: Field, axis: HalfspaceAxis) -> float:
    """Largest increase of u along any exact shell as the angle from e grows."""
    _require_cartesian(u.grid, "angular monotonicity")
    inv, radii = _shells(u.grid)
    I, J = _lattice_index(u.grid)
    ex, ey = axis.vector
    x, y = I.ravel().astype(float), J.ravel().astype(float)
    r = np.hypot(x, y)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.arccos(np.clip((x * ex + y * ey) / r, -1.0, 1.0))
    theta = np.round(theta, 12)
    v = u.values.ravel()
    order = np.lexsort((theta, inv))
    inv_s, th_s, v_s = inv[order], theta[order], v[order]
    worst = 0.0
    bounds = np.flatnonzero(np.diff(inv_s)) + 1
    for seg in np.split(np.arange(inv_s.size), bounds):
        if radii[inv_s[seg[0]]] == 0.0 or seg.size < 2:
            continue
        th, vv = th_s[seg], v_s[seg]
        # smallest value among strictly smaller angles, per angle group
        cuts = np.flatnonzero(np.diff(th)) + 1
        groups = np.split(vv, cuts)
        running = np.inf
        for gv in groups:
            if running < np.inf:
                worst = max(worst, float(np.max(gv)) - running)
            running = min(running, float(np.min(gv)))
    return worst


@dataclass
class SymmetryReport:
    axis_estimate: tuple
    pairwise_violation: float
    angular_monotonicity_violation: float
    radial_deviation: float
    dichotomy_at_axis: float = 0.0
    dichotomy_at_axis_omega: float = 0.0
    per_axis: dict = field(default_factory=dict)


def _moment_direction(u: Field):
    pts = u.grid.points()
    w = u.grid.weights * u.values
    m = np.array([np.sum(w * pts[..., 0]), np.sum(w * pts[..., 1])])
    n = np.linalg.norm(m)
    return m / n if n > 0 else np.array([1.0, 0.0])


def foliated_check(
    u: Field, candidate_axes=ALL_AXES, omega: OmegaShape | None = None
) -> SymmetryReport:
    """Evaluate the two-sided halfspace dichotomy and angular monotonicity.

    The axis estimate is the candidate with the smallest angular monotonicity
    violation; ties go to the direction best aligned with the first moment
    of u.
    """
    _require_cartesian(u.grid, "foliated_check")
    mask = contains_radius(omega, u.grid.radius) if omega is not None else None
    moment = _moment_direction(u)
    per_axis = {}
    for ax in candidate_axes:
        per_axis[ax.k] = {
            "vector": ax.vector,
            "dichotomy": dichotomy_violation(u, ax),
            "dichotomy_omega": dichotomy_violation(u, ax, mask) if mask is not None else None,
            "angular": angular_violation(u, ax),
        }
    scale = max(u.max_abs(), 1e-300)

    def rank(k):
        e = per_axis[k]["vector"]
        # angular violations below rounding count as equal
        return (round(per_axis[k]["angular"] / scale, 10), -(e[0] * moment[0] + e[1] * moment[1]))

    best = min(per_axis, key=rank)
    b = per_axis[best]
    return SymmetryReport(
        axis_estimate=b["vector"],
        pairwise_violation=max(v["dichotomy"] for v in per_axis.values()),
        angular_monotonicity_violation=b["angular"],
        radial_deviation=radial_deviation(u),
        dichotomy_at_axis=b["dichotomy"],
        dichotomy_at_axis_omega=b["dichotomy_omega"] if b["dichotomy_omega"] is not None else b["dichotomy"],
        per_axis=per_axis,
    )
