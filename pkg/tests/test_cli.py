import json
import shutil
import subprocess

import pytest
import yaml

from lorenzflow.cli import ERROR, FAILED, OK, main
from lorenzflow.config import OUTPUT_ENV

HEAT = {"name": "heat", "kind": "flow-equivalence", "grid": {"n": 64, "lo": -6.0, "hi": 6.0},
        "init": {"preset": "truncated-gaussian"}, "structure": {"tag": "W2"},
        "functional": {"kind": "boltzmann_entropy"}, "dt": 1e-4, "t_end": 2e-3, "stride": 5}
GINI = {"name": "gini", "kind": "gini-ascent", "grid": {"n": 64, "lo": -6.0, "hi": 6.0},
        "init": {"preset": "truncated-gaussian"}, "structure": {"tag": "CD", "coefficient": "one"},
        "dt": 1e-4, "t_end": 2e-3, "stride": 5}


def _write(tmp_path, doc, name=None):
    p = tmp_path / f"{name or doc['name']}.yaml"
    p.write_text(yaml.safe_dump(doc))
    return str(p)


@pytest.fixture(autouse=True)
def out_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv(OUTPUT_ENV, str(root))
    return root


def test_verify_passes_and_is_deterministic(tmp_path, out_root, capsys):
    cfg = _write(tmp_path, HEAT)
    assert main(["verify", cfg]) == OK
    first = capsys.readouterr().out
    a = (out_root / "heat" / "summary.json").read_bytes()
    assert main(["verify", cfg]) == OK
    assert capsys.readouterr().out == first
    assert (out_root / "heat" / "summary.json").read_bytes() == a
    doc = json.loads(a)
    assert doc["pass"] and doc["name"] == "heat"
    assert not list((out_root / "heat").glob("*.csv"))


def test_failed_assertion_exit_code(tmp_path):
    assert main(["verify", _write(tmp_path, dict(HEAT, tolerances={"sup": 1e-14}))]) == FAILED


def test_bad_config_exit_code(tmp_path, caplog):
    assert main(["verify", _write(tmp_path, {k: v for k, v in HEAT.items() if k != "dt"})]) == ERROR
    assert "dt: missing" in caplog.text
    assert main(["run", str(tmp_path / "absent.yaml")]) == ERROR


def test_experiment_error_exit_code(tmp_path, caplog):
    # an unstable step is reported with its time, not as a traceback
    assert main(["run", _write(tmp_path, dict(HEAT, dt=0.5, t_end=1.0))]) == ERROR
    assert "experiment 'heat' failed at t = 0.5" in caplog.text


def test_run_writes_artifacts(tmp_path, out_root):
    assert main(["run", _write(tmp_path, GINI)]) == OK
    d = out_root / "gini"
    names = {p.name for p in d.iterdir()}
    assert {"summary.json", "diagnostics.json", "density-CD-gini.csv", "lorenz-CD-gini.csv",
            "diagnostics-CD-gini.json", "evolution-CD-gini.svg"} <= names
    assert (d / "evolution-CD-gini.svg").stat().st_size > 1000
    summary = json.loads((d / "summary.json").read_text())
    assert {c["name"] for c in summary["assertions"]} == {
        "max_sup_error", "gini_monotone_violation", "moment_drift_per_time"}


def test_run_is_byte_identical(tmp_path, out_root):
    cfg = _write(tmp_path, HEAT)
    main(["run", cfg])
    first = {p.name: p.read_bytes() for p in (out_root / "heat").iterdir()}
    shutil.rmtree(out_root / "heat")
    main(["run", cfg])
    assert {p.name: p.read_bytes() for p in (out_root / "heat").iterdir()} == first


def test_plot_command(tmp_path, out_root, capsys):
    main(["run", "--no-plot", _write(tmp_path, HEAT)])
    assert not list((out_root / "heat").glob("*.svg"))
    capsys.readouterr()
    assert main(["plot", str(out_root / "heat")]) == OK
    assert capsys.readouterr().out.strip().endswith(".svg")
    assert main(["plot", str(tmp_path / "nothing")]) == ERROR


def test_sweep_worst_code(tmp_path):
    d = tmp_path / "sweep"
    d.mkdir()
    _write(d, HEAT)
    assert main(["sweep", str(d)]) == OK
    _write(d, dict(HEAT, name="strict", tolerances={"sup": 1e-14}))
    assert main(["sweep", str(d), "-j", "2"]) == FAILED
    _write(d, {"name": "broken"})
    assert main(["sweep", str(d)]) == ERROR
    assert main(["sweep", str(tmp_path / "empty")]) == ERROR


def test_console_script():
    exe = shutil.which("lorenzflow")
    if exe is None:
        pytest.skip("package not installed")
    out = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("run", "sweep", "plot", "verify", OUTPUT_ENV):
        assert cmd in out.stdout
