"""Density <-> Lorenz-curve dictionary on truncated 1D grids.

Densities live on a uniform node grid over a spatial window and are modelled
as piecewise-linear between nodes, so the cumulative trapezoid sums are exact
integrals of the model.  Lorenz curves live on a cell-centred grid over
[0, 1] and carry the two anchor values L(0) = 0 and L(1) = first moment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DegenerateCurvature, NonInvertibleCdf

EPS_POS = 1e-12
EPS_CURV = 1e-10
TAU_TAIL = 1e-6


@dataclass(frozen=True)
class Grid1D:
    lo: float
    hi: float
    n: int
    centered: bool = False

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"grid needs hi > lo, got [{self.lo}, {self.hi}]")
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"grid needs n >= 8 nodes, got {self.n}")

    @classmethod
    def cdf(cls, n: int) -> "Grid1D":
        """Cell-centred grid f_j = (j + 1/2)/n on [0, 1]."""
        return cls(0.0, 1.0, n, centered=True)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n if self.centered else self.n - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        h = self.spacing
        if self.centered:
            x = self.lo + (np.arange(self.n) + 0.5) * h
        else:
            x = np.linspace(self.lo, self.hi, self.n)
        x.setflags(write=False)
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: trapezoid on node grids, midpoint on centred grids."""
        w = np.full(self.n, self.spacing)
        if not self.centered:
            w[0] = w[-1] = 0.5 * self.spacing
        w.setflags(write=False)
        return w

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n": self.n, "centered": self.centered}


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class Density:
    """Positive probability density sampled on a node grid.

    Values below ``floor`` are clamped (the count is kept in ``clamped``) and
    the samples are renormalised to unit trapezoid mass.
    """

    def __init__(self, grid: Grid1D, values, floor: float = EPS_POS, normalize: bool = True):
        if grid.centered:
            raise ValueError("densities live on node grids, not cell-centred grids")
        v = np.array(values, dtype=float)
        if v.shape != (grid.n,):
            raise ValueError(f"expected {grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        low = v < floor
        self.clamped = int(low.sum())
        v[low] = floor
        if normalize:
            v /= grid.integrate(v)
        self.grid = grid
        self.floor = floor
        self.values = _frozen(v)

    @classmethod
    def from_function(cls, grid: Grid1D, fn, **kw) -> "Density":
        return cls(grid, fn(grid.nodes), **kw)

    def with_values(self, values, normalize: bool = False) -> "Density":
        return Density(self.grid, values, floor=self.floor, normalize=normalize)

    @cached_property
    def mass(self) -> float:
        return self.grid.integrate(self.values)

    @cached_property
    def mean(self) -> float:
        return self.grid.integrate(self.grid.nodes * self.values)

    def __repr__(self):
        g = self.grid
        return f"Density(n={g.n}, window=[{g.lo}, {g.hi}], mean={self.mean:.6g})"


@dataclass(frozen=True)
class Cdf:
    grid: Grid1D
    values: np.ndarray


@dataclass(frozen=True)
class InverseCdf:
    grid: Grid1D
    values: np.ndarray
    # density evaluated at the quantiles, rho(G(f_j))
    density: np.ndarray


@dataclass(frozen=True)
class TangentVector:
    """Perturbation of a density (side="density") or of a Lorenz curve.

    Lorenz-side vectors hold node values plus ``right`` = eta(1); the anchor
    eta(0) = 0 is implied by the representation.
    """

    side: str
    grid: Grid1D
    values: np.ndarray
    moment_constrained: bool = False
    right: float = 0.0
    subspace: str = "T"
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.side not in ("density", "lorenz"):
            raise ValueError(f"unknown side {self.side!r}")
        object.__setattr__(self, "values", _frozen(self.values))

    def constraint_residuals(self) -> dict:
        g, v = self.grid, self.values
        if self.side == "density":
            out = {"mass": g.integrate(v)}
            if self.moment_constrained:
                out["moment"] = g.integrate(g.nodes * v)
            return out
        fa, ya = _augment(g, v, self.right)
        d1 = np.polyfit(fa[:3], ya[:3], 2)
        d1r = np.polyfit(fa[-3:], ya[-3:], 2)
        out = {
            "eta0": float(np.polyval(d1, 0.0)),
            "deta0": float(np.polyval(np.polyder(d1), 0.0)),
            "deta1": float(np.polyval(np.polyder(d1r), 1.0)),
        }
        if self.subspace == "T0":
            out["eta1"] = float(self.right)
        return out


def _augment(grid: Grid1D, values, right):
    fa = np.concatenate(([0.0], grid.nodes, [1.0]))
    ya = np.concatenate(([0.0], values, [right]))
    return fa, ya


def _stencil_derivatives(fa, ya):
    """Three-point first and second derivatives at the interior points of an
    augmented nonuniform grid; exact for quadratics."""
    h1 = fa[1:-1] - fa[:-2]
    h2 = fa[2:] - fa[1:-1]
    ym, y0, yp = ya[:-2], ya[1:-1], ya[2:]
    d1 = (h1**2 * yp - h2**2 * ym + (h2**2 - h1**2) * y0) / (h1 * h2 * (h1 + h2))
    d2 = 2.0 * ((yp - y0) / h2 - (y0 - ym) / h1) / (h1 + h2)
    return d1, d2


class LorenzCurve:
    """Lorenz curve on a cell-centred cdf grid with anchors L(0)=0, L(1)=total.

    ``lf`` and ``lff`` cache the first and second f-derivatives.  Curves built
    by :func:`lorenz_map` carry the exact G and 1/(rho o G); curves built from
    raw values get three-point stencil derivatives.
    """

    def __init__(self, grid: Grid1D, values, total: float, lf=None, lff=None):
        if not grid.centered or grid.lo != 0.0 or grid.hi != 1.0:
            raise ValueError("Lorenz curves need a cell-centred grid on [0, 1]")
        self.grid = grid
        self.values = _frozen(values)
        self.total = float(total)
        if lf is None or lff is None:
            d1, d2 = _stencil_derivatives(*_augment(grid, self.values, self.total))
            lf = d1 if lf is None else lf
            lff = d2 if lff is None else lff
        self.lf = _frozen(lf)
        self.lff = _frozen(lff)

    def with_values(self, values, total=None) -> "LorenzCurve":
        return LorenzCurve(self.grid, values, self.total if total is None else total)

    def stencil(self) -> "LorenzCurve":
        """Same values, derivatives recomputed by stencil."""
        return LorenzCurve(self.grid, self.values, self.total)

    def augmented(self):
        return _augment(self.grid, self.values, self.total)

    def is_convex(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.lf) >= -tol) and np.all(self.lff > 0))

    def __repr__(self):
        return f"LorenzCurve(n={self.grid.n}, total={self.total:.6g})"


# -- piecewise-linear density model -------------------------------------------

def _cell_slopes(grid: Grid1D, v):
    return np.diff(v) / grid.spacing


def _cumulative(grid: Grid1D, v) -> np.ndarray:
    """Node values of int_lo^x v for piecewise-linear v (cumulative trapezoid)."""
    h = grid.spacing
    return np.concatenate(([0.0], np.cumsum(0.5 * h * (v[:-1] + v[1:]))))


def _cumulative_moment(grid: Grid1D, v) -> np.ndarray:
    """Node values of int_lo^x y v(y) dy for piecewise-linear v."""
    h = grid.spacing
    x = grid.nodes[:-1]
    a = _cell_slopes(grid, v)
    cell = x * v[:-1] * h + (x * a + v[:-1]) * h**2 / 2 + a * h**3 / 3
    return np.concatenate(([0.0], np.cumsum(cell)))


def _partial(grid: Grid1D, v, idx, s):
    """int_{x_i}^{x_i+s} v and int_{x_i}^{x_i+s} y v for the model of v."""
    a = _cell_slopes(grid, v)[idx]
    x = grid.nodes[idx]
    vi = v[idx]
    mass = vi * s + a * s**2 / 2
    moment = x * vi * s + (x * a + vi) * s**2 / 2 + a * s**3 / 3
    return mass, moment


def tail_ratio(rho: Density, band: float = 0.05) -> float:
    """max(rho) over the outer ``band`` of the window on each side, relative to max(rho).

    Below TAU_TAIL the density has decayed and boundary terms are negligible.
    """
    g, x = rho.grid, rho.grid.nodes
    w = band * (g.hi - g.lo)
    outer = (x <= g.lo + w) | (x >= g.hi - w)
    return float(rho.values[outer].max() / rho.values.max())


def cdf(rho: Density) -> Cdf:
    c = _cumulative(rho.grid, rho.values)
    c = np.clip(c / c[-1], 0.0, 1.0)
    return Cdf(rho.grid, _frozen(c))


def _locate(rho: Density, f):
    """Cell index and in-cell offset of G(f), inverting the exact model cdf."""
    grid, v = rho.grid, rho.values
    c = _cumulative(grid, v)
    c = c / c[-1]
    _check_invertible(rho, c, f)
    idx = np.clip(np.searchsorted(c, f, side="right") - 1, 0, grid.n - 2)
    r = np.maximum(f - c[idx], 0.0)
    vi = v[idx]
    a = _cell_slopes(grid, v)[idx]
    root = np.sqrt(np.maximum(vi**2 + 2 * a * r, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(vi + root > 0, 2 * r / (vi + root), 0.0)
    s = np.clip(s, 0.0, grid.spacing)
    return idx, s, vi + a * s


def _check_invertible(rho: Density, c, f):
    flat = np.diff(c) <= 4 * rho.floor * rho.grid.spacing
    if not flat.any():
        return
    # runs of at least two flat cells
    edges = np.diff(np.concatenate(([0], flat.astype(int), [0])))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    for a, b in zip(starts, stops):
        if b - a < 2:
            continue
        lo, hi = c[a], c[b]
        hit = (f >= lo) & (f <= hi)
        if np.any(hit):
            x = rho.grid.nodes
            raise NonInvertibleCdf(
                f"cdf flat on [{x[a]:.4g}, {x[b]:.4g}] at requested f={np.asarray(f)[hit][0]:.6g}"
            )


def inverse_cdf(rho: Density, fgrid: Grid1D) -> InverseCdf:
    f = fgrid.nodes
    idx, s, dens = _locate(rho, f)
    g = rho.grid.nodes[idx] + s
    return InverseCdf(fgrid, _frozen(g), _frozen(dens))


def quantiles(rho: Density, f) -> np.ndarray:
    """G(f) at arbitrary cdf values."""
    f = np.asarray(f, dtype=float)
    idx, s, _ = _locate(rho, f)
    return rho.grid.nodes[idx] + s


def lorenz_map(rho: Density, fgrid: Grid1D) -> LorenzCurve:
    f = fgrid.nodes
    idx, s, dens = _locate(rho, f)
    mom = _cumulative_moment(rho.grid, rho.values) / rho.mass
    _, part = _partial(rho.grid, rho.values / rho.mass, idx, s)
    values = mom[idx] + part
    g = rho.grid.nodes[idx] + s
    return LorenzCurve(fgrid, values, total=mom[-1], lf=g, lff=1.0 / dens)


def density_from_lorenz(L: LorenzCurve, xgrid: Grid1D, eps_curv: float = EPS_CURV) -> Density:
    """Recover rho = 1/L_ff at the support points x = L_f and resample."""
    if np.any(L.lff < eps_curv):
        j = int(np.argmin(L.lff))
        raise DegenerateCurvature(f"L_ff={L.lff[j]:.3g} below {eps_curv:g} at f={L.grid.nodes[j]:.4g}")
    xs = np.asarray(L.lf)
    if np.any(np.diff(xs) <= 0):
        raise DegenerateCurvature("L_f is not strictly increasing; curve is not strictly convex")
    logr = -np.log(L.lff)
    x = xgrid.nodes
    out = np.empty_like(x)
    inside = (x >= xs[0]) & (x <= xs[-1])
    out[inside] = PchipInterpolator(xs, logr)(x[inside])
    for sel, pts in ((x < xs[0], slice(0, 3)), (x > xs[-1], slice(-3, None))):
        if sel.any():
            coef = np.polyfit(xs[pts], logr[pts], 2)
            edge = logr[pts][0] if pts.start == 0 else logr[pts][-1]
            # quadratic in log rho near the data; far out, never above the edge value
            near = np.abs(x[sel] - xs[pts][0 if pts.start == 0 else -1]) <= np.ptp(xs[pts])
            ext = np.polyval(coef, x[sel])
            out[sel] = np.where(near, ext, np.minimum(ext, edge))
    return Density(xgrid, np.exp(out))


def _tangent_integrals(rho: Density, h: TangentVector, fgrid: Grid1D):
    if h.side != "density" or h.grid != rho.grid:
        raise ValueError("expected a density-side tangent on the density's grid")
    idx, s, dens = _locate(rho, fgrid.nodes)
    hv = np.asarray(h.values)
    mass_part, mom_part = _partial(rho.grid, hv, idx, s)
    hcum = _cumulative(rho.grid, hv)[idx] + mass_part
    mcum = _cumulative_moment(rho.grid, hv)[idx] + mom_part
    g = rho.grid.nodes[idx] + s
    return g, dens, hcum, mcum


def dt_inverse_cdf(rho: Density, h: TangentVector, fgrid: Grid1D) -> np.ndarray:
    """First variation of G[rho](f) along h: -(int^G h) / rho(G)."""
    _, dens, hcum, _ = _tangent_integrals(rho, h, fgrid)
    return -hcum / dens


def dt_lorenz(rho: Density, h: TangentVector, fgrid: Grid1D) -> TangentVector:
    """First variation of L[rho](f) along h: int^G y h - G int^G h."""
    g, _, hcum, mcum = _tangent_integrals(rho, h, fgrid)
    hv = np.asarray(h.values)
    right = _cumulative_moment(rho.grid, hv)[-1] - rho.grid.hi * _cumulative(rho.grid, hv)[-1]
    return TangentVector("lorenz", fgrid, mcum - g * hcum, right=float(right))
