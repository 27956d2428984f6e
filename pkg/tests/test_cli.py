import csv
import hashlib
import json

import pytest

from selffocus import cli
from selffocus.errors import ParseError, ValidationError

BASE = """# minimal radial run
mode = radial
N = 3
p = 4
eps = 1
omega = ball:1
h = 0.05
rmax = 8
"""


def cfg(extra="", tmp=None):
    text = BASE + extra + (f"out_dir = {tmp}\n" if tmp is not None else "")
    return cli.parse_config(text)


def test_defaults():
    c = cfg()
    assert c.command == "solve"
    assert c.formats == ("csv", "json")
    assert c.spec.q_rule == "cell"


@pytest.mark.parametrize(
    "extra, line",
    [("bogus = 1\n", 9), ("p = 3\n", 9), ("just text\n", 9)],
)
def test_parse_errors_carry_line(extra, line):
    with pytest.raises(ParseError) as exc:
        cfg(extra)
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}:")


@pytest.mark.parametrize(
    "old, new, field",
    [
        ("p = 4", "p = 6", "p"),
        ("p = 4", "p = 2", "p"),
        ("eps = 1", "eps = -1", "eps"),
        ("omega = ball:1", "omega = cube:1", "omega"),
        ("rmax = 8", "rmax = 3", "rmax"),
        ("h = 0.05", "h = 0", "h"),
        ("mode = radial", "mode = polar", "mode"),
    ],
)
def test_validation_errors_name_field(old, new, field):
    with pytest.raises(ValidationError) as exc:
        cli.parse_config(BASE.replace(old, new))
    assert exc.value.field == field


def test_missing_key_and_sweep_requirements():
    with pytest.raises(ValidationError) as exc:
        cli.parse_config(BASE.replace("h = 0.05\n", ""))
    assert exc.value.field == "h"
    with pytest.raises(ValidationError) as exc:
        cfg("command = sweep\n")
    assert exc.value.field == "eps_list"
    c = cfg("command = sweep\neps_list = 0.25, 1, 0.5\n")
    assert c.eps_list == (1.0, 0.5, 0.25)


def test_solve_outputs_and_manifest(tmp_path):
    assert cli.run(cfg(tmp=tmp_path)) == 0
    rows = list(csv.reader((tmp_path / "solution.csv").open()))
    assert rows[0] == ["r", "value"]
    assert float(rows[1][0]) == 0.05
    # shortest round-trip floats
    assert all(repr(float(v)) == v for _, v in rows[1:])
    result = json.loads((tmp_path / "result.json").read_text())
    assert result["converged"] is True
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["exit_code"] == 0
    for name, digest in manifest["checksums"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    assert not list(tmp_path.glob(".*.tmp"))


def test_cartesian_csv_header(tmp_path):
    text = BASE.replace("mode = radial", "mode = cartesian2d").replace("N = 3", "N = 2")
    text = text.replace("h = 0.05", "h = 0.2").replace("rmax = 8", "rmax = 4")
    c = cli.parse_config(text + f"out_dir = {tmp_path}\nformats = csv\n")
    assert cli.run(c) == 0
    lines = (tmp_path / "solution.csv").read_text().splitlines()
    assert lines[0] == "x,y,value"
    assert len(lines) == 1 + 41 * 41
    assert not (tmp_path / "result.json").exists()


def test_sweep_partial_exit(tmp_path):
    # max_iters = 1 cannot converge: rows are written but the run is partial
    c = cfg(f"command = sweep\neps_list = 1, 0.5\nmax_iters = 1\n", tmp_path)
    assert cli.run(c) == 2
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("eps,energy,residual,grad_norm,converged")
    assert len(lines) == 3
    statuses = [r["status"] for r in json.loads((tmp_path / "manifest.json").read_text())["rows"]]
    assert statuses == ["not_converged", "not_converged"]


def test_main_reports_errors(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(BASE.replace("p = 4", "p = 9"))
    assert cli.main([str(path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error=ValidationError")
    assert cli.main([str(tmp_path / "missing.cfg")]) == 1


def test_main_runs(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(BASE + "command = analyze\nrho_list = 1, 2\n")
    assert cli.main([str(path), "--out-dir", str(tmp_path / "out")]) == 0
    decay = json.loads((tmp_path / "out" / "report_decay.json").read_text())
    assert "decay_fit" in decay and "exp_decay" in decay
    conc = json.loads((tmp_path / "out" / "report_concentration.json").read_text())
    assert [c["rho"] for c in conc] == [1.0, 2.0]
