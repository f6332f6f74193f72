import json

import numpy as np
import pytest

from conftest import bump
from lorenzflow import io
from lorenzflow.errors import MissingInput
from lorenzflow.flows import EvolutionSpec, run
from lorenzflow.transforms import Grid1D, lorenz_map


def test_state_json_roundtrip(rho_bump):
    L = lorenz_map(rho_bump, Grid1D.cdf(256))
    for s in (rho_bump, L):
        back = io.state_from_json(json.loads(io.dumps(io.state_to_json(s))))
        assert type(back) is type(s) and back.grid == s.grid
        np.testing.assert_array_equal(back.values, s.values)
    assert io.state_from_json(io.state_to_json(L)).total == L.total


def test_state_csv_has_anchors(tmp_path, rho_bump):
    L = lorenz_map(rho_bump, Grid1D.cdf(256))
    text = io.state_to_csv(L, tmp_path / "L.csv").read_text().splitlines()
    assert text[0] == "# side=lorenz"
    assert text[2] == "f,L"
    assert text[3] == "0.0,0.0"
    assert text[-1] == f"1.0,{L.total!r}"
    assert len(text) == 3 + 258


@pytest.mark.parametrize("side", ["density", "lorenz"])
def test_trajectory_csv_roundtrip(tmp_path, side):
    rho = bump(64)
    init = rho if side == "density" else lorenz_map(rho, Grid1D.cdf(64))
    spec = EvolutionSpec(side, "mvfpe" if side == "density" else "lorenz_pde", 1e-4, 5e-4, stride=2)
    traj = run(spec, init)
    back = io.read_trajectory_csv(io.trajectory_to_csv(traj, tmp_path / "t.csv"))
    assert back["side"] == side and back["grid"] == init.grid
    np.testing.assert_array_equal(back["times"], traj.times)
    np.testing.assert_array_equal(back["values"], np.stack([s.values for s in traj.states]))
    if side == "lorenz":
        np.testing.assert_array_equal(back["top"], [s.total for s in traj.states])


def test_read_missing(tmp_path):
    with pytest.raises(MissingInput):
        io.read_trajectory_csv(tmp_path / "nope.csv")
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    with pytest.raises(MissingInput):
        io.read_trajectory_csv(tmp_path / "bad.csv")


def test_dumps_deterministic_and_clean():
    doc = {"b": np.float64(1.5), "a": [np.int64(2), np.bool_(True)], "c": float("inf"), "d": np.arange(2.0)}
    text = io.dumps(doc)
    assert text == io.dumps(dict(reversed(list(doc.items()))))
    assert json.loads(text) == {"a": [2, True], "b": 1.5, "c": "inf", "d": [0.0, 1.0]}
    assert text.endswith("\n")
