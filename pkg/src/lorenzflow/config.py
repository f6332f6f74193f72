"""Experiment configuration: YAML files parsed into a validated dataclass.

Example::

    name: heat-w2
    kind: flow-equivalence
    grid: {n: 256, lo: -6, hi: 6}
    init: {preset: truncated-gaussian, mu: 0.0, sigma: 1.0}
    structure: {tag: W2}
    functional: {kind: boltzmann_entropy}
    direction: descent
    dt: 1.0e-5
    t_end: 0.1
    stride: 1000
    tolerances: {sup: 5.0e-3}
    seed: 0
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .functionals import (
    Functional,
    boltzmann_entropy,
    gaussian_interaction,
    gini_area,
    quadratic_interaction,
    quadratic_potential,
)
from .geometry import DIFFUSIONS, MOBILITIES, TAGS, GradientStructure
from .transforms import Density, Grid1D

KINDS = ("transform-roundtrip", "flow-equivalence", "isometry", "gini-ascent", "functional-audit")
OUTPUT_ENV = "LORENZFLOW_OUTPUT_ROOT"

DEFAULT_TOLERANCES = {
    "transform-roundtrip": {"derivative": 1e-3, "roundtrip": 1e-3, "order": 2.0, "lemma": 1e-3},
    "flow-equivalence": {"sup": 5e-3, "ratio": 2.0},
    "gini-ascent": {"sup": 5e-3, "monotone": 1e-10, "moment_rate": 1e-8},
    "isometry": {"transfer": 1e-3},
    "functional-audit": {"twin": 1e-4, "directional": 1e-3, "cov": 1e-4, "cov_twin": 1e-3},
}
NEEDS_TIME = ("flow-equivalence", "gini-ascent")


# -- initial-condition presets ------------------------------------------------------

def _gaussian(mu=0.0, sigma=1.0):
    return lambda x: np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def _lognormal(mu=0.0, s=0.5):
    def fn(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(-0.5 * ((np.log(x) - mu) / s) ** 2) / x
        return np.where(x > 0, out, 0.0)
    return fn


def _uniform(**_):
    return lambda x: np.ones_like(x)


def _cosine_bump(a=0.5, b=0.2, period=None, lo=-3.0, hi=3.0):
    L = (hi - lo) if period is None else period
    return lambda x: 1.0 + a * np.cos(2 * np.pi * (x - lo) / L) + b * np.sin(2 * np.pi * (x - lo) / L)


PRESETS = {
    "truncated-gaussian": _gaussian,
    "lognormal": _lognormal,
    "uniform": _uniform,
    "cosine-bump": _cosine_bump,
}


def make_density(grid: Grid1D, spec: dict) -> Density:
    spec = dict(spec)
    preset = spec.pop("preset", None)
    if preset not in PRESETS:
        raise ConfigError("init.preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    if preset == "cosine-bump":
        spec.setdefault("lo", grid.lo)
        spec.setdefault("hi", grid.hi)
    try:
        fn = PRESETS[preset](**spec)
    except TypeError as err:
        raise ConfigError("init", str(err)) from None
    return Density.from_function(grid, fn)


def make_functional(spec: dict | None, side: str = "density") -> Functional | None:
    if spec is None:
        return None
    kind = spec.get("kind")
    scale = float(spec.get("scale", 1.0))
    if kind == "potential":
        return quadratic_potential(scale, float(spec.get("center", 0.0)), side=side)
    if kind == "interaction":
        if spec.get("kernel", "quadratic") == "gaussian":
            return gaussian_interaction(scale, float(spec.get("width", 1.0)), side=side)
        return quadratic_interaction(scale, side=side)
    if kind == "boltzmann_entropy":
        return boltzmann_entropy(side)
    if kind == "gini_area":
        return gini_area(side)
    raise ConfigError("functional.kind", f"unknown functional {kind!r}")


def make_structure(spec: dict | None) -> GradientStructure:
    spec = spec or {"tag": "W2"}
    tag = str(spec.get("tag", "W2"))
    if tag.upper() not in {t.upper() for t in TAGS}:
        raise ConfigError("structure.tag", f"unknown tag {tag!r}; choose from {TAGS}")
    coeff = spec.get("coefficient", "one")
    table = MOBILITIES if tag.upper() == "W2M" else DIFFUSIONS
    if coeff not in table:
        raise ConfigError("structure.coefficient", f"unknown preset {coeff!r}; choose from {sorted(table)}")
    return GradientStructure.preset(tag, coeff)


def make_fields(spec: dict | None):
    """Drift and diffusion presets (Sigma, D) for the mvfpe / Lorenz PDE pair."""
    from .flows import DIFFUSION_FIELDS, DRIFTS

    spec = spec or {}
    drift = spec.get("drift", "zero")
    diffusion = spec.get("diffusion", "one")
    if drift not in DRIFTS:
        raise ConfigError("pde.drift", f"unknown preset {drift!r}; choose from {sorted(DRIFTS)}")
    if diffusion not in DIFFUSION_FIELDS:
        raise ConfigError("pde.diffusion", f"unknown preset {diffusion!r}; choose from {sorted(DIFFUSION_FIELDS)}")
    return DRIFTS[drift], DIFFUSION_FIELDS[diffusion]


# -- config --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: str
    grid: dict
    init: dict
    target: dict | None = None
    structure: dict | None = None
    functional: dict | None = None
    pde: dict | None = None
    direction: str = "descent"
    dt: float | None = None
    t_end: float | None = None
    stride: int = 1
    refine: bool = False
    K: int = 32
    iters: int = 20
    reverse: bool = True
    tolerances: dict = field(default_factory=dict)
    output_dir: str = "runs"
    seed: int = 0
    source: str | None = None

    def x_grid(self) -> Grid1D:
        g = self.grid
        return Grid1D(float(g.get("lo", -6.0)), float(g.get("hi", 6.0)), int(g.get("n", 256)))

    def density(self) -> Density:
        return make_density(self.x_grid(), self.init)

    def target_density(self) -> Density:
        if self.target is None:
            raise ConfigError("target", "this experiment needs a target density")
        spec = dict(self.target)
        match = bool(spec.pop("match_mean", False))
        rho = make_density(self.x_grid(), spec)
        if match:
            from .metrics import tilt_to_mean

            rho = tilt_to_mean(rho, self.density().mean)
        return rho

    def tol(self, key: str) -> float:
        return float(self.tolerances[key])

    def run_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ENV)
        base = Path(root) if root else Path(self.output_dir)
        return base / self.name


def _require(doc: dict, key: str):
    if key not in doc or doc[key] is None:
        raise ConfigError(key, "missing required field")
    return doc[key]


def _positive(doc: dict, key: str, cast=float):
    try:
        v = cast(_require(doc, key))
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {doc[key]!r}") from None
    if not v > 0:
        raise ConfigError(key, "must be positive")
    return v


def parse_config(doc: dict, source: str | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a mapping")
    name = str(_require(doc, "name"))
    kind = _require(doc, "kind")
    if kind not in KINDS:
        raise ConfigError("kind", f"unknown experiment kind {kind!r}; choose from {KINDS}")
    grid = doc.get("grid") or {}
    if not isinstance(grid, dict):
        raise ConfigError("grid", "expected a mapping with n, lo, hi")
    n = int(grid.get("n", 256))
    if n < 8:
        raise ConfigError("grid.n", "need at least 8 nodes")
    if float(grid.get("hi", 6.0)) <= float(grid.get("lo", -6.0)):
        raise ConfigError("grid.hi", "must exceed grid.lo")
    init = _require(doc, "init")
    dt = t_end = None
    if kind in NEEDS_TIME:
        dt = _positive(doc, "dt")
        t_end = _positive(doc, "t_end")
    tolerances = dict(DEFAULT_TOLERANCES[kind])
    for k, v in (doc.get("tolerances") or {}).items():
        try:
            v = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"tolerances.{k}", f"expected a number, got {v!r}") from None
        if not v > 0:
            raise ConfigError(f"tolerances.{k}", "must be positive")
        tolerances[k] = v
    direction = doc.get("direction", "ascent" if kind == "gini-ascent" else "descent")
    if direction not in ("ascent", "descent"):
        raise ConfigError("direction", "must be ascent or descent")
    cfg = ExperimentConfig(
        name=name, kind=kind, grid=grid, init=dict(init), target=doc.get("target"),
        structure=doc.get("structure"), functional=doc.get("functional"), pde=doc.get("pde"),
        direction=direction,
        dt=dt, t_end=t_end, stride=int(doc.get("stride", 1)), refine=bool(doc.get("refine", False)),
        K=int(doc.get("K", 32)), iters=int(doc.get("iters", 20)), reverse=bool(doc.get("reverse", True)),
        tolerances=tolerances,
        output_dir=str(doc.get("output_dir", "runs")), seed=int(doc.get("seed", 0)), source=source,
    )
    # validate presets early so errors name the field
    make_structure(cfg.structure)
    make_functional(cfg.functional)
    if kind == "flow-equivalence" and cfg.functional is None:
        make_fields(cfg.pde)
    cfg.density()
    if kind == "isometry":
        cfg.target_density()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as err:
        raise ConfigError("config", f"cannot read {path}: {err.strerror}") from None
    except yaml.YAMLError as err:
        raise ConfigError("config", f"not valid YAML: {err}") from None
    return parse_config(doc, source=str(path))
