import shutil
import subprocess
import sys

import numpy as np
import pytest

from kahlerlab import cli
from kahlerlab import io as kio
from kahlerlab.errors import ConfigError
from kahlerlab.model import make_model, sample_potential


def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_bad_config_exits_2_without_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("task = flow\nmodel = p1\nN = 64\nbogus = 3\n")
    assert _run("run", "--config", cfg, "--out", out) == 2
    assert "bogus" in capsys.readouterr().err
    assert not out.exists()
    assert _run("flow", "--N", 32, "--out", out, "--dt", 2.0) == 2
    assert not any(out.glob("*.csv")) if out.exists() else True


def test_config_errors():
    with pytest.raises(ConfigError):
        cli.resolve_config("flow", {"K": "3"}, {})
    with pytest.raises(ConfigError):
        cli.resolve_config("flow", {"dt": "fast"}, {})
    with pytest.raises(ConfigError):
        cli.resolve_config("flow", {"task": "orbit"}, {})
    with pytest.raises(ConfigError):
        cli.resolve_config("flow", {}, {"jobs": 0})
    assert _run("flow", "--config", "/nonexistent/klab.cfg") == 2


def test_precedence_defaults_file_flags(tmp_path):
    cfg = cli.resolve_config("flow", {"dt": "0.1", "T": "2", "model": "torus"}, {"dt": 0.02})
    assert cfg["dt"] == 0.02 and cfg["T"] == 2.0
    assert cfg["N"] == cli.DEFAULT_N["torus"]
    assert cfg["variant"] == cli.DEFAULTS["variant"]
    path = tmp_path / "c.cfg"
    path.write_text("# comment line\ntask = flow   # trailing comment\n\nN = 12\n")
    assert cli.read_config(path) == {"task": "flow", "N": "12"}


def test_F_file_size_checked(tmp_path):
    f = tmp_path / "F.txt"
    np.savetxt(f, np.zeros(10))
    assert _run("functionals", "--model", "torus", "--N", 8, "--F", f, "--out", tmp_path / "o") == 2
    np.savetxt(f, np.zeros(64))
    assert _run("functionals", "--model", "torus", "--N", 8, "--F", f, "--mu", 0,
                "--out", tmp_path / "o") == 0


def test_window_beyond_truncation_exits_4(tmp_path, capsys):
    assert _run("orbit", "--N", 128, "--X", 12, "--window", 4, "--out", tmp_path) == 4
    assert "X/4" in capsys.readouterr().err


def test_inadmissible_start_exits_3(tmp_path, capsys):
    model = make_model("p1", 64)
    # a bump sharp enough to make some cell masses negative
    bad = model.potential(-5.0 * np.exp(-model.coords ** 2))
    assert not bad.is_admissible()
    kio.write_snapshot(tmp_path / "bad.klab", bad)
    assert _run("flow", "--N", 64, "--phi0", tmp_path / "bad.klab", "--T", 1,
                "--out", tmp_path / "o") == 3
    assert "solver failure" in capsys.readouterr().err


def test_run_subcommand_flow_and_summary(tmp_path):
    cfg = tmp_path / "flow.cfg"
    cfg.write_text("task = flow\nmodel = torus\nN = 8\nT = 1.0\ndt = 0.1\nseed = 5\n")
    out = tmp_path / "out"
    assert _run("run", "--config", cfg, "--out", out) == 0
    rows = kio.read_csv(out / "flow.csv")
    assert list(rows[0]) == cli.FLOW_COLUMNS
    assert len(rows) == 11
    assert kio.read_provenance(out / "flow.csv")["seed"] == "5"
    summary = kio.read_csv(out / "flow_summary.csv")[0]
    assert float(summary["duration"]) == pytest.approx(1.0)
    assert "converged" not in summary


def test_flow_verdict_written_for_long_runs(tmp_path):
    out = tmp_path / "o"
    assert _run("flow", "--model", "torus", "--N", 8, "--T", 20, "--dt", 0.5, "--out", out) == 0
    summary = kio.read_csv(out / "flow_summary.csv")[0]
    assert summary["converged"] == "1"


def test_snapshot_tasks(tmp_path, rng):
    model = make_model("p1", 64)
    a, b = (sample_potential(model, rng) for _ in range(2))
    kio.write_snapshot(tmp_path / "a.klab", a)
    kio.write_snapshot(tmp_path / "b.klab", b)
    out = tmp_path / "o"
    common = ["--N", 64, "--out", out]
    assert _run("functionals", "--in", tmp_path / "a.klab", *common) == 0
    assert _run("distance", "--a", tmp_path / "a.klab", "--b", tmp_path / "b.klab", *common) == 0
    d = float(kio.read_csv(out / "distance.csv")[0]["d1"])
    assert d > 0
    assert _run("geodesic", "--a", tmp_path / "a.klab", "--b", tmp_path / "b.klab", "--K", 8,
                *common) == 0
    assert len(kio.read_csv(out / "geodesic.csv")) == 8
    assert len(list(out.glob("geodesic_*.klab"))) == 9
    # a snapshot from another grid is a model mismatch
    assert _run("functionals", "--in", tmp_path / "a.klab", "--N", 128, "--out", out) == 2
    assert _run("distance", "--a", tmp_path / "a.klab", *common) == 2


def test_orbit_mt_alpha_tasks(tmp_path):
    out = tmp_path / "o"
    assert _run("orbit", "--N", 128, "--steps", 11, "--out", out) == 0
    assert len(kio.read_csv(out / "orbit.csv")) == 11
    assert _run("mt-scan", "--N", 128, "--rays", 2, "--out", out) == 0
    assert _run("alpha", "--N", 256, "--beta", "0.5:0.5:1.5", "--out", out) == 0
    assert len(kio.read_csv(out / "alpha.csv")) == 3
    assert _run("alpha", "--N", 256, "--beta", "1:0:2", "--out", out) == 2


def test_outputs_are_deterministic(tmp_path):
    for name in ("a", "b"):
        assert _run("mt-scan", "--N", 128, "--rays", 2, "--seed", 3, "--out", tmp_path / name) == 0
    assert (tmp_path / "a" / "mt.csv").read_bytes() == (tmp_path / "b" / "mt.csv").read_bytes()
    assert _run("mt-scan", "--N", 128, "--rays", 2, "--seed", 4, "--out", tmp_path / "c") == 0
    assert (tmp_path / "a" / "mt.csv").read_bytes() != (tmp_path / "c" / "mt.csv").read_bytes()


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("klab")
    cmd = [exe] if exe else [sys.executable, "-m", "kahlerlab.cli"]
    res = subprocess.run(cmd + ["functionals", "--N", "32", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "E = " in res.stdout
    res = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert res.stdout.startswith("klab ")
