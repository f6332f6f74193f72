import pytest

from conftest import bump
from lorenzflow.errors import MissingInput
from lorenzflow.experiments import Sink
from lorenzflow.flows import EvolutionSpec, run
from lorenzflow.plotting import plot_run
from lorenzflow.transforms import Grid1D, lorenz_map


def _write_run(root):
    rho = bump(64)
    sink = Sink(root)
    sink.trajectory(run(EvolutionSpec("density", "mvfpe", 1e-4, 4e-4, stride=2), rho), "heat")
    sink.trajectory(run(EvolutionSpec("lorenz", "lorenz_pde", 1e-4, 4e-4, stride=2),
                        lorenz_map(rho, Grid1D.cdf(64))), "heat")
    sink.trajectory(rho, "single")


def test_missing_inputs(tmp_path):
    with pytest.raises(MissingInput):
        plot_run(tmp_path / "absent")
    with pytest.raises(MissingInput):
        plot_run(tmp_path)


def test_figures_per_tag(tmp_path):
    _write_run(tmp_path)
    out = plot_run(tmp_path)
    assert [p.name for p in out] == ["evolution-heat.svg", "evolution-single.svg"]
    for p in out:
        text = p.read_text()
        assert text.lstrip().startswith("<?xml") and "<path" in text


def test_svg_deterministic(tmp_path):
    _write_run(tmp_path / "a")
    _write_run(tmp_path / "b")
    a, b = plot_run(tmp_path / "a"), plot_run(tmp_path / "b")
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_pdf(tmp_path):
    _write_run(tmp_path)
    out = plot_run(tmp_path, "pdf")
    assert all(p.read_bytes().startswith(b"%PDF") for p in out)
