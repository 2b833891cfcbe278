import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from beclab import cli, harness

CONFIGS = Path(harness.__file__).parent / "configs"

SMALL_MANYBODY = """
scenario = "manybody-sweep"
beta = 0.25
N_list = [2, 3, 4]
d_list = [4]
[grid]
side_length = 1.0
points = 32
[interaction]
profile = "gaussian"
height = -82.76
width = 0.15
[scheme]
epsilon = 0.02631578947368421
M = 14
"""

SMALL_LEMMAS = """
scenario = "lemmas"
seed = 3
[options]
lemma1_cases = 6
lemma2_cases = 4
max_particles = 5
max_modes = 4
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert cli.main(["validate", str(path)]) == 0


def test_missing_epsilon_exits_2(tmp_path, capsys):
    bad = write(tmp_path, "bad.toml", SMALL_MANYBODY.replace("epsilon = 0.02631578947368421\n", ""))
    assert cli.main(["validate", str(bad)]) == 2
    assert "scheme.epsilon: required" in capsys.readouterr().err
    assert cli.main(["run", str(bad), "-o", str(tmp_path / "out")]) == 2
    assert "scheme.epsilon: required" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_cli_entry_point_exit_code(tmp_path):
    bad = write(tmp_path, "bad.toml", SMALL_MANYBODY.replace("epsilon = 0.02631578947368421\n", ""))
    r = subprocess.run([sys.executable, "-m", "beclab.cli", "validate", str(bad)], capture_output=True, text=True)
    assert r.returncode == 2
    assert "scheme.epsilon: required" in r.stderr


@pytest.mark.parametrize("edit,message", [
    (lambda s: s.replace('scenario = "manybody-sweep"', 'scenario = "bogus"'), "scenario: unknown scenario"),
    (lambda s: s.replace("points = 32", "points = 30"), "grid:"),
    (lambda s: s.replace("beta = 0.25", 'beta = "x"'), "beta: expected float"),
    (lambda s: s.replace("M = 14", "M = 5"), "scheme:"),
    (lambda s: s + "\n[solver]\nstep_size = -1\n", "solver:"),
    (lambda s: s + "\nbogus = 1\n", "bogus: unknown field"),
    (lambda s: s.replace("width = 0.15", ""), "interaction:"),
    (lambda s: s.replace("N_list = [2, 3, 4]", ""), "N_list: required"),
])
def test_validation_messages(tmp_path, edit, message):
    p = write(tmp_path, "c.toml", edit(SMALL_MANYBODY))
    with pytest.raises(harness.ConfigError) as exc:
        harness.load_config(p)
    assert any(message in prob for prob in exc.value.problems), exc.value.problems


def test_malformed_toml(tmp_path):
    p = write(tmp_path, "c.toml", "scenario = \n")
    with pytest.raises(harness.ConfigError):
        harness.load_config(p)


def test_workers_env(monkeypatch):
    monkeypatch.setenv("BEC_LAB_WORKERS", "1")
    assert harness.workers() == 1
    monkeypatch.delenv("BEC_LAB_WORKERS")
    assert harness.workers() == 1
    monkeypatch.setenv("BEC_LAB_WORKERS", "many")
    with pytest.raises(ValueError):
        harness.workers()


def test_float_formatting():
    assert harness.fmt(0.1) == "0.10000000000000001"
    assert "0.33333333333333331" in harness.dumps({"x": 1 / 3})


def test_lemmas_run_is_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, "lemmas.toml", SMALL_LEMMAS)
    assert cli.main(["run", str(cfg), "-o", str(tmp_path / "a")]) == 0
    assert "lemmas: 10/10" in capsys.readouterr().out
    assert cli.main(["run", str(cfg), "-o", str(tmp_path / "b")]) == 0
    for name in ("lemmas.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert harness.verify_manifest(tmp_path / "a") == []


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    cfg = write(tmp, "mb.toml", SMALL_MANYBODY)
    outcome, root = harness.run(cfg, tmp / "run")
    assert outcome.ok
    return cfg, root


def test_manybody_outputs_and_manifest(sweep_dir):
    _, root = sweep_dir
    man = json.loads((root / "manifest.json").read_text())
    assert man["complete"] is True
    assert "convergence.csv" in man["files"]
    assert harness.verify_manifest(root) == []
    header = (root / "convergence.csv").read_text().splitlines()[0]
    assert header.startswith("N,d,e_N")


def test_manifest_detects_tampering(sweep_dir, tmp_path):
    _, root = sweep_dir
    copy = tmp_path / "copy"
    shutil.copytree(root, copy)
    cell = next((copy / "cells").iterdir())
    cell.write_text(cell.read_text() + " ")
    (copy / "stray.txt").write_text("x")
    problems = harness.verify_manifest(copy)
    assert any("stray.txt" in p for p in problems)
    assert any(cell.name in p for p in problems)


def test_resume_recomputes_only_missing_cells(sweep_dir, tmp_path, caplog):
    cfg, root = sweep_dir
    copy = tmp_path / "copy"
    shutil.copytree(root, copy)
    victim = copy / "cells" / "N0003_d004.json"
    before = victim.read_bytes()
    keep = copy / "cells" / "N0002_d004.json"
    mtime = keep.stat().st_mtime_ns
    victim.unlink()
    outcome, _ = harness.run(cfg, copy)
    assert "1 cells to compute" in outcome.lines[0]
    assert victim.read_bytes() == before
    assert keep.stat().st_mtime_ns == mtime
    assert harness.verify_manifest(copy) == []


def test_report_command(sweep_dir, capsys):
    _, root = sweep_dir
    assert cli.main(["report", str(root)]) == 0
    out = capsys.readouterr().out
    assert "C_fit" in out and "slope" in out


def test_report_on_incomplete_sweep(sweep_dir, tmp_path, capsys):
    _, root = sweep_dir
    copy = tmp_path / "copy"
    shutil.copytree(root, copy)
    (copy / "cells" / "N0004_d004.json").unlink()
    assert cli.main(["report", str(copy)]) == 1
    assert "incomplete" in capsys.readouterr().err


def test_report_missing_directory(tmp_path):
    assert cli.main(["report", str(tmp_path / "nothing")]) == 1


def test_coo_and_tabulated_interfaces(tmp_path):
    from beclab.potentials import make_interaction, write_tabulated
    from beclab.spectral import Grid2D
    g = Grid2D(4.0, 32)
    w = make_interaction("gaussian", {"height": 1.0, "width": 0.5}, g)
    table = tmp_path / "w.txt"
    write_tabulated(table, g, w.samples())
    lines = table.read_text().split("\n")
    assert lines[0].split() == ["4", "32"]
    cfg = write(tmp_path, "s.toml", f'scenario = "stability"\n[grid]\nside_length = 4.0\npoints = 32\n'
                                    f'[interaction]\nfile = "{table}"\n')
    c = harness.load_config(cfg)
    assert c.make_interaction(g).mass_a == pytest.approx(w.mass_a, rel=1e-6)
