"""Energy, entropy and inequality functionals on densities and Lorenz curves.

Every density-side functional has a Lorenz-side twin with F = F~ o L.  The
Lorenz-side Frechet derivatives are the exact gradients of the discretised
functionals, so they carry two boundary coefficients besides the node values:
``left`` pairs with eta(0) and ``right`` with eta(1).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import GridMismatch, SideMismatch
from .transforms import (
    Density,
    Grid1D,
    LorenzCurve,
    _augment,
    _cumulative,
    _cumulative_moment,
    cdf,
    lorenz_map,
    quantiles,
)

KINDS = ("potential", "interaction", "boltzmann_entropy", "gini_area", "linear_combination")
GAUGES = ("modulo_constant", "modulo_affine", "absolute")


@dataclass(frozen=True)
class Functional:
    side: str
    kind: str
    V: Callable | None = None
    dV: Callable | None = None
    W: Callable | None = None
    dW1: Callable | None = None
    terms: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.side not in ("density", "lorenz"):
            raise ValueError(f"unknown side {self.side!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "interaction":
            _check_symmetric(self.W)

    def twin(self) -> "Functional":
        other = "lorenz" if self.side == "density" else "density"
        terms = tuple((w, t.twin()) for w, t in self.terms)
        return replace(self, side=other, terms=terms)

    def __add__(self, other):
        return combine([(1.0, self), (1.0, other)])


def _check_symmetric(W, samples=16):
    rng = np.random.default_rng(0)
    x, y = rng.normal(scale=3.0, size=(2, samples))
    if not np.allclose(W(x, y), W(y, x), rtol=1e-12, atol=1e-12):
        raise ValueError("interaction kernel must be symmetric, W(x, y) = W(y, x)")


def quadratic_potential(scale=1.0, center=0.0, side="density") -> Functional:
    return Functional(
        side,
        "potential",
        V=lambda x: scale * (x - center) ** 2,
        dV=lambda x: 2.0 * scale * (x - center),
        name=f"quadratic_potential(scale={scale}, center={center})",
    )


def quadratic_interaction(scale=1.0, side="density") -> Functional:
    return Functional(
        side,
        "interaction",
        W=lambda x, y: 0.5 * scale * (x - y) ** 2,
        dW1=lambda x, y: scale * (x - y),
        name=f"quadratic_interaction(scale={scale})",
    )


def gaussian_interaction(scale=1.0, width=1.0, side="density") -> Functional:
    return Functional(
        side,
        "interaction",
        W=lambda x, y: scale * np.exp(-((x - y) ** 2) / (2 * width**2)),
        dW1=lambda x, y: -scale * (x - y) / width**2 * np.exp(-((x - y) ** 2) / (2 * width**2)),
        name=f"gaussian_interaction(scale={scale}, width={width})",
    )


def boltzmann_entropy(side="density") -> Functional:
    return Functional(side, "boltzmann_entropy", name="boltzmann_entropy")


def gini_area(side="lorenz") -> Functional:
    return Functional(side, "gini_area", name="gini_area")


def combine(weighted) -> Functional:
    weighted = tuple((float(w), f) for w, f in weighted)
    sides = {f.side for _, f in weighted}
    if len(sides) != 1:
        raise SideMismatch("cannot combine functionals from different sides")
    name = " + ".join(f"{w:g}*{f.name}" for w, f in weighted)
    return Functional(sides.pop(), "linear_combination", terms=weighted, name=name)


def free_energy(potential=None, interaction=None, side="density") -> Functional:
    """V + W + entropy, the classical free energy."""
    parts = [p for p in (potential, interaction) if p is not None]
    parts.append(boltzmann_entropy(side))
    return combine([(1.0, p if p.side == side else p.twin()) for p in parts])


# -- evaluation -----------------------------------------------------------------

def _state_side(state):
    if isinstance(state, Density):
        return "density"
    if isinstance(state, LorenzCurve):
        return "lorenz"
    raise TypeError(f"expected Density or LorenzCurve, got {type(state).__name__}")


def _require_side(F: Functional, state):
    side = _state_side(state)
    if side != F.side:
        raise SideMismatch(f"{F.name or F.kind} is a {F.side}-side functional, state is {side}-side")


def evaluate(F: Functional, state) -> float:
    _require_side(F, state)
    if F.kind == "linear_combination":
        return sum(w * evaluate(t, state) for w, t in F.terms)
    if F.side == "density":
        return _eval_density(F, state)
    return _eval_lorenz(F, state)


def _eval_density(F, rho: Density) -> float:
    g, x, r = rho.grid, rho.grid.nodes, rho.values
    if F.kind == "potential":
        return g.integrate(F.V(x) * r)
    if F.kind == "interaction":
        wr = g.weights * r
        return 0.5 * float(wr @ F.W(x[:, None], x[None, :]) @ wr)
    if F.kind == "boltzmann_entropy":
        return g.integrate(r * np.log(r))
    if F.kind == "gini_area":
        return _eval_lorenz(F, lorenz_map(rho, Grid1D.cdf(g.n)))
    raise AssertionError(F.kind)


def _eval_lorenz(F, L: LorenzCurve) -> float:
    dfw = L.grid.weights
    if F.kind == "potential":
        return float(dfw @ F.V(L.lf))
    if F.kind == "interaction":
        return 0.5 * float(dfw @ F.W(L.lf[:, None], L.lf[None, :]) @ dfw)
    if F.kind == "boltzmann_entropy":
        return -float(dfw @ np.log(L.lff))
    if F.kind == "gini_area":
        return 0.5 * L.total - float(dfw @ L.values)
    raise AssertionError(F.kind)


# -- Frechet derivatives -------------------------------------------------------------

@dataclass(frozen=True)
class FrechetDerivative:
    side: str
    grid: Grid1D
    values: np.ndarray
    gauge: str = "modulo_constant"
    left: float = 0.0
    right: float = 0.0
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.gauge not in GAUGES:
            raise ValueError(f"unknown gauge {self.gauge!r}")
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def pair(self, eta) -> float:
        """Action on a tangent vector: int dF * eta (+ boundary terms)."""
        out = self.grid.integrate(self.values * eta.values)
        if self.side == "lorenz":
            out += self.right * eta.right
        return out

    def projected(self, weights=None, mask=None) -> np.ndarray:
        return gauge_project(self.values, self.grid.nodes, self.gauge, weights, mask)

    def __add__(self, other):
        if self.grid != other.grid or self.side != other.side:
            raise GridMismatch("cannot add derivatives on different grids")
        return replace(self, values=self.values + other.values,
                       left=self.left + other.left, right=self.right + other.right)

    def scaled(self, c):
        return replace(self, values=c * self.values, left=c * self.left, right=c * self.right)


def gauge_project(values, x, gauge, weights=None, mask=None) -> np.ndarray:
    """Remove the gauge part: weighted mean, or best-fit affine function."""
    v = np.asarray(values, dtype=float)
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    if gauge == "absolute":
        return v.copy()
    if gauge == "modulo_constant":
        return v - np.sum(w * v) / np.sum(w)
    basis = np.stack([np.ones_like(x), x], axis=1)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(basis * sw[:, None], v * sw, rcond=None)
    return v - basis @ coef


def frechet(F: Functional, state, gauge: str = "modulo_constant") -> FrechetDerivative:
    _require_side(F, state)
    if F.kind == "linear_combination":
        parts = [frechet(t, state, gauge).scaled(w) for w, t in F.terms]
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out
    if F.side == "density":
        vals = _frechet_density(F, state)
        return FrechetDerivative("density", state.grid, vals, gauge)
    vals, left, right = _frechet_lorenz(F, state)
    return FrechetDerivative("lorenz", state.grid, vals, gauge, left=left, right=right)


def _frechet_density(F, rho: Density) -> np.ndarray:
    g, x, r = rho.grid, rho.grid.nodes, rho.values
    if F.kind == "potential":
        return F.V(x)
    if F.kind == "interaction":
        return F.W(x[:, None], x[None, :]) @ (g.weights * r)
    if F.kind == "boltzmann_entropy":
        return np.log(r) + 1.0
    if F.kind == "gini_area":
        # derivative of int x rho (C - 1/2) dx, the density form of the scaled Gini
        c = cdf(rho).values
        mom = _cumulative_moment(g, r)
        return x * (c - 0.5) + (mom[-1] - mom)
    raise AssertionError(F.kind)


def stencil_coefficients(grid: Grid1D):
    """Three-point (minus, centre, plus) coefficients of d/df and d2/df2 at each
    node of a cell-centred grid augmented with the anchor points f=0 and f=1."""
    fa, _ = _augment(grid, np.zeros(grid.n), 0.0)
    h1 = fa[1:-1] - fa[:-2]
    h2 = fa[2:] - fa[1:-1]
    den = h1 * h2 * (h1 + h2)
    d1 = (-(h2**2) / den, (h2**2 - h1**2) / den, h1**2 / den)
    d2 = (2.0 / (h1 * (h1 + h2)), -2.0 / (h1 * h2), 2.0 / (h2 * (h1 + h2)))
    return d1, d2


def stencil_adjoint(coeffs, u) -> np.ndarray:
    """Transpose of a three-point stencil applied to node data, on the augmented grid."""
    cm, c0, cp = coeffs
    out = np.zeros(len(u) + 2)
    out[:-2] += cm * u
    out[1:-1] += c0 * u
    out[2:] += cp * u
    return out


def _frechet_lorenz(F, L: LorenzCurve):
    g = L.grid
    dfw = g.weights
    d1, d2 = stencil_coefficients(g)
    if F.kind == "gini_area":
        return -np.ones(g.n), 0.0, 0.5
    if F.kind == "potential":
        full = stencil_adjoint(d1, dfw * F.dV(L.lf))
    elif F.kind == "interaction":
        u = F.dW1(L.lf[:, None], L.lf[None, :]) @ dfw
        full = stencil_adjoint(d1, dfw * u)
    elif F.kind == "boltzmann_entropy":
        full = stencil_adjoint(d2, -dfw / L.lff)
    else:
        raise AssertionError(F.kind)
    return full[1:-1] / dfw, float(full[0]), float(full[-1])


# -- change of variables between the two Frechet derivatives ------------------------

def _inner_integral(dF: FrechetDerivative):
    """Piecewise-linear I(f) = left + int_0^f dF on the augmented cdf points."""
    g = dF.grid
    h = g.spacing
    faces = dF.left + np.concatenate(([0.0], np.cumsum(h * dF.values)))
    at_nodes = faces[:-1] + 0.5 * h * dF.values
    fa = np.concatenate(([0.0], g.nodes, [1.0]))
    ia = np.concatenate(([faces[0]], at_nodes, [faces[-1]]))
    # insert the faces so the interpolant is exact for piecewise-constant dF
    fx = np.concatenate((fa, np.arange(1, g.n) * h))
    ix = np.concatenate((ia, faces[1:-1]))
    order = np.argsort(fx, kind="stable")
    return fx[order], ix[order]


def cov_frechet(dF: FrechetDerivative, rho: Density, form: str = "x") -> FrechetDerivative:
    """Density-side derivative from a Lorenz-side one.

    form="x" integrates -int^x I(C(y)) dy on the spatial grid; form="f" builds
    -int_0^f I dG on the quantiles and resamples onto the spatial grid.  The
    constant is fixed at the left end of the window.
    """
    if dF.side != "lorenz":
        raise SideMismatch("cov_frechet expects a Lorenz-side derivative")
    if dF.grid.n < 8 or not dF.grid.centered:
        raise GridMismatch("Lorenz-side derivative must live on a cell-centred cdf grid")
    fi, ii = _inner_integral(dF)
    xg = rho.grid
    if form == "x":
        c = cdf(rho).values
        integrand = np.interp(c, fi, ii)
        vals = -_cumulative(xg, integrand)
    elif form == "f":
        gq = quantiles(rho, fi)
        gq[0], gq[-1] = xg.lo, xg.hi
        phi = -np.concatenate(([0.0], np.cumsum(0.5 * (ii[1:] + ii[:-1]) * np.diff(gq))))
        keep = np.concatenate(([True], np.diff(gq) > 0))
        vals = np.interp(xg.nodes, gq[keep], phi[keep])
    else:
        raise ValueError(f"unknown form {form!r}")
    return FrechetDerivative("density", xg, vals, "modulo_constant")
