"""Command-line front end.

A run is described by a flat ``key = value`` file::

    command = solve
    mode = radial
    N = 3
    p = 4
    eps = 1
    omega = ball:1
    h = 0.02
    rmax = 12

and executed with ``selffocus run.cfg``.  Outputs land in ``out_dir``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import analyze as an
from . import functional as fn
from . import rearrange as ra
from . import solver as sv
from .domain import GridSpec, parse_shape
from .errors import InvalidProblem, InvalidShape, ParseError, SelfFocusError, ValidationError
from .functional import ProblemSpec

log = logging.getLogger(__name__)

COMMANDS = ("solve", "solve-nodal", "sweep", "symmetrize", "analyze", "serrin")
FORMATS = ("csv", "json")
N_STARTS = 3

KEYS = {
    "command", "mode", "N", "p", "eps", "eps_list", "omega", "h", "rmax", "init", "seed",
    "max_iters", "grad_tol", "rho_list", "delta", "window_lo", "window_hi", "workers",
    "out_dir", "formats", "q_rule", "serrin_cases",
}  # fmt: skip
REQUIRED = ("mode", "N", "p", "eps", "omega", "h", "rmax")


@dataclass
class RunConfig:
    command: str
    spec: ProblemSpec
    opts: sv.SolveOptions
    out_dir: Path
    formats: tuple = FORMATS
    eps_list: tuple = ()
    rho_list: tuple = (1.0,)
    delta: float = 0.25
    window: tuple | None = None
    workers: int = 1
    serrin_cases: tuple = ((3, 5.0), (3, 2.5), (4, 3.5))
    raw: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _floats(text, key):
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ValidationError(key, f"expected comma-separated numbers, got {text!r}") from exc


def _num(raw, key, cast=float, default=None):
    if key not in raw:
        return default
    try:
        return cast(raw[key])
    except ValueError as exc:
        raise ValidationError(key, f"cannot read {raw[key]!r} as {cast.__name__}") from exc


def _parse_init(text: str, mode: str):
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "center":
        return sv.CenterBump()
    if kind == "offset":
        c = _floats(rest, "init")
        return sv.OffsetBump(c if mode == "cartesian2d" else c[:1])
    if kind == "dipole":
        if not rest.strip():
            return sv.Dipole()
        centers = tuple(_floats(part, "init") for part in rest.split(";"))
        if len(centers) != 2:
            raise ValidationError("init", "dipole needs two centers separated by ';'")
        if mode == "radial":
            centers = (centers[0][0], centers[1][0])
        return sv.Dipole(centers)
    raise ValidationError("init", f"unknown init {text!r}")


def read_pairs(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError(f"expected 'key = value', got {stripped!r}", lineno)
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ParseError("empty key", lineno)
        if key in raw:
            raise ParseError(f"duplicate key {key!r}", lineno)
        if key not in KEYS:
            raise ParseError(f"unknown key {key!r}", lineno)
        raw[key] = value
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run configuration.

    Raises:
        ParseError: malformed line, duplicate or unknown key.
        ValidationError: a value is missing or out of range (names the key).
    """
    raw = read_pairs(text)
    for key in REQUIRED:
        if key not in raw:
            raise ValidationError(key, "required key missing")
    command = raw.get("command", "solve")
    if command not in COMMANDS:
        raise ValidationError("command", f"must be one of {COMMANDS}")
    mode = raw["mode"].lower()
    if mode not in ("radial", "cartesian2d"):
        raise ValidationError("mode", "must be radial or cartesian2d")
    N = _num(raw, "N", int)
    if N < 1:
        raise ValidationError("N", "must be >= 1")
    if mode == "cartesian2d" and N != 2:
        raise ValidationError("N", "cartesian2d requires N = 2")
    p = _num(raw, "p")
    if not 2.0 < p < fn.critical_exponent(N):
        raise ValidationError("p", f"p={p} outside (2, {fn.critical_exponent(N)}) for N={N}")
    eps = _num(raw, "eps")
    if not eps >= 0:
        raise ValidationError("eps", "must be >= 0")
    try:
        omega = parse_shape(raw["omega"])
    except InvalidShape as exc:
        raise ValidationError("omega", str(exc)) from exc
    h = _num(raw, "h")
    rmax = _num(raw, "rmax")
    if not h > 0:
        raise ValidationError("h", "must be positive")
    if not rmax >= 4.0 * max(b for _, b in omega.intervals()):
        raise ValidationError("rmax", "must be at least 4x the outer radius of omega")
    q_rule = raw.get("q_rule", "cell")
    if q_rule not in fn.Q_RULES:
        raise ValidationError("q_rule", f"must be one of {fn.Q_RULES}")
    try:
        spec = ProblemSpec(N, p, eps, omega, GridSpec(mode, h, rmax, N if mode == "radial" else 2), q_rule)
    except InvalidProblem as exc:
        raise ValidationError("spec", str(exc)) from exc

    default_init = "dipole" if command == "solve-nodal" else "center"
    init = _parse_init(raw.get("init", default_init), mode)
    try:
        opts = sv.SolveOptions(
            max_iters=_num(raw, "max_iters", int, 3000),
            grad_tol=_num(raw, "grad_tol", float, None),
            seed=_num(raw, "seed", int, 0),
            init=init,
        )
    except InvalidProblem as exc:
        raise ValidationError("opts", str(exc)) from exc

    eps_list = _floats(raw["eps_list"], "eps_list") if "eps_list" in raw else ()
    if command == "sweep":
        if not eps_list:
            raise ValidationError("eps_list", "sweep needs eps_list")
        if any(e < 0 for e in eps_list):
            raise ValidationError("eps_list", "values must be >= 0")
        eps_list = tuple(sorted(eps_list, reverse=True))
    rho_list = _floats(raw["rho_list"], "rho_list") if "rho_list" in raw else (1.0,)
    if any(r <= 0 for r in rho_list):
        raise ValidationError("rho_list", "values must be positive")
    window = None
    if "window_lo" in raw or "window_hi" in raw:
        window = (_num(raw, "window_lo", float, rmax / 4.0), _num(raw, "window_hi", float, 3.0 * rmax / 4.0))
        if not 0 < window[0] < window[1] <= rmax:
            raise ValidationError("window_lo", "need 0 < window_lo < window_hi <= rmax")
    workers = _num(raw, "workers", int, 1)
    if workers < 1:
        raise ValidationError("workers", "must be >= 1")
    formats = tuple(s.strip() for s in raw.get("formats", "csv,json").split(",") if s.strip())
    if not formats or any(f not in FORMATS for f in formats):
        raise ValidationError("formats", f"subset of {FORMATS}")
    cases = ((3, 5.0), (3, 2.5), (4, 3.5))
    if "serrin_cases" in raw:
        try:
            cases = tuple(
                (int(a), float(b))
                for a, b in (c.split(":") for c in raw["serrin_cases"].split(",") if c.strip())
            )
        except ValueError as exc:
            raise ValidationError("serrin_cases", "expected N:p,N:p,...") from exc
    return RunConfig(
        command=command,
        spec=spec,
        opts=opts,
        out_dir=Path(raw.get("out_dir", "out")),
        formats=formats,
        eps_list=eps_list,
        rho_list=rho_list,
        delta=_num(raw, "delta", float, 0.25),
        window=window,
        workers=workers,
        serrin_cases=cases,
        raw=raw,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def solution_csv(u) -> str:
    g = u.grid
    buf = io.StringIO()
    if g.is_radial:
        buf.write("r,value\n")
        for r, v in zip(g.coords, u.values):
            buf.write(f"{_fmt(r)},{_fmt(v)}\n")
    else:
        buf.write("x,y,value\n")
        x = g.coords
        for i in range(x.size):
            xi = _fmt(x[i])
            for j in range(x.size):
                buf.write(f"{xi},{_fmt(x[j])},{_fmt(u.values[i, j])}\n")
    return buf.getvalue()


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def result_dict(res) -> dict:
    d = {
        "energy": res.energy,
        "grad_norm": res.grad_norm,
        "grad_tol": res.grad_tol,
        "iters": res.iters,
        "converged": res.converged,
    }
    if isinstance(res, sv.NodalResult):
        d["part_residuals"] = list(res.part_residuals)
    else:
        d["nehari_residual"] = res.nehari_residual
    return d


class Writer:
    """Single writer per run: atomic file creation plus checksum bookkeeping."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.checksums = {}

    def write(self, name: str, text: str, record: bool = True):
        data = text.encode()
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.out_dir / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        if record:
            self.checksums[name] = hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_solve(cfg: RunConfig, out: Writer, nodal: bool):
    if nodal:
        opts = cfg.opts
        if isinstance(opts.init, sv.CenterBump):
            opts = sv._with_init(opts, sv.Dipole())
        res = sv.solve_nodal(cfg.spec, opts)
    else:
        res = sv.solve_positive(cfg.spec, cfg.opts)
    if "csv" in cfg.formats:
        out.write("solution.csv", solution_csv(res.u))
    if "json" in cfg.formats:
        out.write("result.json", dumps(result_dict(res)))
    return [{"row": "solve", "status": "ok" if res.converged else "not_converged"}], res.converged


def _sweep_chain(cfg: RunConfig, seed: int):
    init = cfg.opts.init
    if isinstance(init, sv.CenterBump):
        init = sv.CenterBump(jitter=0.1)
    opts = dataclasses.replace(cfg.opts, seed=seed, init=init)
    return sv.energy_curve(cfg.spec, cfg.eps_list, opts)


def _cmd_sweep(cfg: RunConfig, out: Writer):
    seeds = [cfg.opts.seed + k for k in range(N_STARTS)]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        chains = list(pool.map(lambda s: _sweep_chain(cfg, s), seeds))
    rows, status = [], []
    header = ["eps", "energy", "residual", "grad_norm", "converged"]
    header += [f"h1_ratio_{r!r}" for r in cfg.rho_list] + [f"lp_ratio_{r!r}" for r in cfg.rho_list]
    header += ["exponent", "starts_agree"]
    all_ok = True
    for i, eps in enumerate(cfg.eps_list):
        cands = [(c[i], s) for c, s in zip(chains, seeds) if c[i].result is not None]
        if not cands:
            err = chains[0][i].error
            status.append({"row": eps, "status": "error", "error": err})
            rows.append([_fmt(eps), "", "", "", "false"] + [""] * (2 * len(cfg.rho_list) + 2))
            all_ok = False
            continue
        best, seed = min(cands, key=lambda cs: (cs[0].energy, cs[1]))
        res = best.result
        energies = [c.energy for c, _ in cands]
        agree = max(energies) - min(energies) <= 1e-6 * abs(best.energy)
        spec = cfg.spec.with_eps(eps)
        ratios_h1, ratios_lp = [], []
        for rho in cfg.rho_list:
            if eps > 0 and rho / eps < spec.grid.rmax:
                rep = an.concentration_from_u(res.u, rho, spec)
                ratios_h1.append(_fmt(rep.h1_ratio))
                ratios_lp.append(_fmt(rep.lp_ratio))
            else:
                ratios_h1.append("")
                ratios_lp.append("")
        try:
            exponent = _fmt(an.decay_fit(res.u, cfg.window).exponent)
        except SelfFocusError:
            exponent = ""
        rows.append(
            [_fmt(eps), _fmt(best.energy), _fmt(res.nehari_residual), _fmt(res.grad_norm),
             "true" if res.converged else "false"]
            + ratios_h1 + ratios_lp + [exponent, "true" if agree else "false"]
        )  # fmt: skip
        ok = res.converged
        all_ok &= ok
        status.append({"row": eps, "status": "ok" if ok else "not_converged", "seed": seed})
    text = ",".join(header) + "\n" + "".join(",".join(r) + "\n" for r in rows)
    if "csv" in cfg.formats:
        out.write("sweep.csv", text)
    if "json" in cfg.formats:
        out.write("report_sweep.json", dumps({"header": header, "rows": rows}))
    return status, all_ok


def _cmd_symmetrize(cfg: RunConfig, out: Writer):
    spec = cfg.spec
    res = sv.solve_positive(spec, cfg.opts)
    u = res.u
    star = ra.schwarz(u)
    report = {
        "positive": {
            "converged": res.converged,
            "radial_check": ra.radial_check(u),
            "max_abs": u.max_abs(),
            "dirichlet": fn.dirichlet_energy(u, spec),
            "dirichlet_schwarz": fn.dirichlet_energy(star, spec),
            "lp": ra.lp_norm(u, spec.p),
            "lp_schwarz": ra.lp_norm(star, spec.p),
        }
    }
    status = [{"row": "positive", "status": "ok" if res.converged else "not_converged"}]
    ok = res.converged
    if spec.grid.mode == "cartesian2d":
        opts = cfg.opts if not isinstance(cfg.opts.init, sv.CenterBump) else sv._with_init(cfg.opts, sv.Dipole())
        nod = sv.solve_nodal(spec, opts)
        rep = ra.foliated_check(nod.u, omega=spec.omega)
        report["nodal"] = {"converged": nod.converged, "max_abs": nod.u.max_abs(), "foliated": rep}
        status.append({"row": "nodal", "status": "ok" if nod.converged else "not_converged"})
        ok &= nod.converged
    if "csv" in cfg.formats:
        out.write("solution.csv", solution_csv(u))
    if "json" in cfg.formats:
        out.write("result.json", dumps(result_dict(res)))
        out.write("report_symmetry.json", dumps(report))
    return status, ok


def _cmd_analyze(cfg: RunConfig, out: Writer):
    spec = cfg.spec
    res = sv.solve_positive(spec, cfg.opts)
    report = {}
    try:
        report["decay_fit"] = an.decay_fit(res.u, cfg.window)
    except SelfFocusError as exc:
        report["decay_fit"] = {"error": str(exc)}
    if spec.grid.mode == "radial" and spec.N >= 3:
        rho = cfg.window[0] if cfg.window else spec.grid.rmax / 4.0
        lower = spec.p > an.serrin_exponent(spec.N)
        report["bounds"] = an.decay_bounds_check(res.u, spec, rho, cfg.delta, lower=lower)
    if spec.eps > 0:
        try:
            report["exp_decay"] = an.exp_decay_check(res.u, spec.eps, cfg.window[0] if cfg.window else None)
        except SelfFocusError as exc:
            report["exp_decay"] = {"error": str(exc)}
        conc = [an.concentration_from_u(res.u, rho, spec) for rho in cfg.rho_list if rho / spec.eps < spec.grid.rmax]
        if "json" in cfg.formats:
            out.write("report_concentration.json", dumps(conc))
    if "csv" in cfg.formats:
        out.write("solution.csv", solution_csv(res.u))
    if "json" in cfg.formats:
        out.write("result.json", dumps(result_dict(res)))
        out.write("report_decay.json", dumps(report))
    return [{"row": "analyze", "status": "ok" if res.converged else "not_converged"}], res.converged


def _cmd_serrin(cfg: RunConfig, out: Writer):
    base = cfg.spec
    specs = []
    for N, p in cfg.serrin_cases:
        specs.append(ProblemSpec(N, p, 0.0, base.omega, GridSpec("radial", base.grid.h, base.grid.rmax, N), base.q_rule))
    rows = an.serrin_explore(specs, cfg.opts, cfg.window, delta=cfg.delta)
    header = "N,p,serrin,exponent,upper_ok,lower_ok,error\n"

    def cell(x):
        if x is None:
            return ""
        if isinstance(x, bool):
            return "true" if x else "false"
        if isinstance(x, float):
            return _fmt(x)
        return str(x)

    body = "".join(
        ",".join(cell(v) for v in (r.N, r.p, r.serrin, r.exponent, r.upper_ok, r.lower_ok, r.error)) + "\n"
        for r in rows
    )
    if "csv" in cfg.formats:
        out.write("sweep.csv", header + body)
    if "json" in cfg.formats:
        out.write("report_serrin.json", dumps(rows))
    status = [{"row": f"N={r.N},p={r.p}", "status": "error" if r.error else "ok"} for r in rows]
    return status, all(r.error is None for r in rows)


def run(cfg: RunConfig) -> int:
    """Execute a configuration; 0 success, 2 partial, 1 error."""
    t0 = time.time()
    out = Writer(cfg.out_dir)
    try:
        if cfg.command in ("solve", "solve-nodal"):
            status, ok = _cmd_solve(cfg, out, nodal=cfg.command == "solve-nodal")
        elif cfg.command == "sweep":
            status, ok = _cmd_sweep(cfg, out)
        elif cfg.command == "symmetrize":
            status, ok = _cmd_symmetrize(cfg, out)
        elif cfg.command == "analyze":
            status, ok = _cmd_analyze(cfg, out)
        else:
            status, ok = _cmd_serrin(cfg, out)
    except SelfFocusError as exc:
        print(f"error={type(exc).__name__} message={exc}", file=sys.stderr)
        return 1
    code = 0 if ok else 2
    import scipy

    manifest = {
        "config": cfg.raw,
        "command": cfg.command,
        "wall_time": time.time() - t0,
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t0)),
        "versions": {
            "selffocus": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "rows": status,
        "exit_code": code,
        "checksums": dict(out.checksums),
    }
    out.write("manifest.json", dumps(manifest), record=False)
    if code == 2:
        print("status=partial rows_failed=" + str(sum(s["status"] != "ok" for s in status)), file=sys.stderr)
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="selffocus", description="Least-energy solutions with a self-focusing core.")
    ap.add_argument("config", help="flat key = value configuration file")
    ap.add_argument("--out-dir", help="override out_dir from the config")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = parse_config(Path(args.config).read_text())
    except (ParseError, ValidationError) as exc:
        print(f"error={type(exc).__name__} message={exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error=OSError message={exc}", file=sys.stderr)
        return 1
    if args.out_dir:
        cfg.out_dir = Path(args.out_dir)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
