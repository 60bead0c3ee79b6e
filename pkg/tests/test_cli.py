import json
import os

import pytest

from vgibbs.cli import EXIT_CONFIG, EXIT_PASS, main

SMALL = """
[model]
d = 1
delta = 1.0
R = 1.0
potential = "{potential}"
c = 0.05
alpha_mark = 1.0
beta_mark = 2.0
{extra}

[run]
suite = "laplace"
box_lo = [0]
box_hi = [0]
n_samples = {n}
seed = 5
dump_count = 2

[output]
dir = "{out}"
formats = ["json", "csv"]
"""


def write_cfg(tmp_path, potential="zero", n=500, extra="", name="c.toml"):
    out = tmp_path / "out"
    p = tmp_path / name
    p.write_text(SMALL.format(potential=potential, n=n, extra=extra, out=out.as_posix()))
    return str(p), out


def test_laplace_suite_zero_potential(tmp_path, capsys):
    cfg, out = write_cfg(tmp_path)
    assert main(["run", "--config", cfg]) == EXIT_PASS
    rep = json.loads((out / "report.json").read_text())
    assert rep["pass"] and rep["status"] == 0 and rep["suites"]["laplace"]
    assert (out / "summary.csv").read_text().startswith("suite")
    assert "checks passed" in capsys.readouterr().out


def test_run_twice_is_byte_identical(tmp_path):
    cfg, out = write_cfg(tmp_path)
    main(["run", "--config", cfg])
    first = (out / "report.json").read_bytes()
    main(["run", "--config", cfg])
    assert (out / "report.json").read_bytes() == first


def test_seed_override_changes_report(tmp_path):
    cfg, out = write_cfg(tmp_path)
    main(["run", "--config", cfg])
    first = (out / "report.json").read_bytes()
    main(["run", "--config", cfg, "--seed", "6"])
    assert (out / "report.json").read_bytes() != first


def test_finite_range_violation_exits_2(tmp_path, capsys):
    cfg, _ = write_cfg(tmp_path, potential="hard_range", extra="cutoff = 1.5")
    assert main(["validate", "--config", cfg]) == EXIT_CONFIG
    assert "finite range" in capsys.readouterr().err
    assert main(["validate", "--config", "configs/fr_violation.toml"]) == EXIT_CONFIG


@pytest.mark.parametrize("text", ["[model]\nd = 1\n", "not toml ["])
def test_bad_config_exits_2(tmp_path, text):
    p = tmp_path / "bad.toml"
    p.write_text(text)
    assert main(["run", "--config", str(p)]) == EXIT_CONFIG
    assert main(["validate", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_validate_prints_resolved_config(tmp_path, capsys):
    cfg, _ = write_cfg(tmp_path, potential="hard_range")
    assert main(["validate", "--config", cfg]) == EXIT_PASS
    info = json.loads(capsys.readouterr().out)
    assert info["A"] == pytest.approx(0.05) and info["region_cubes"] == 1


def test_dump_manifest_only(tmp_path):
    cfg, out = write_cfg(tmp_path, potential="hard_range", n=0)
    assert main(["dump", "--config", cfg]) == EXIT_PASS
    assert os.listdir(out / "samples") == ["manifest.json"]
    man = json.loads((out / "samples" / "manifest.json").read_text())
    assert man["n"] == 0 and man["files"] == []


def test_dump_rerun_identical(tmp_path):
    cfg, out = write_cfg(tmp_path, potential="hard_range", n=20)
    main(["dump", "--config", cfg])
    files = sorted(os.listdir(out / "samples"))
    first = {f: (out / "samples" / f).read_bytes() for f in files}
    assert len(files) == 21
    main(["dump", "--config", cfg])
    assert {f: (out / "samples" / f).read_bytes() for f in files} == first
