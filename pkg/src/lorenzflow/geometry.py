"""Onsager operators of the four gradient structures, on both sides.

Density side: -d/dx(M d/dx .) for W2 and W2M, d2/dx2(D d2/dx2 .) for Crho and
CD.  Lorenz side: the transformed forms acting on Lorenz-side covectors.
Every operator has a matching metric pairing so that <grad F, v> = dF(v)
holds exactly for the discrete objects.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateCurvature, GridMismatch, MomentDrift, SideMismatch
from .functionals import FrechetDerivative, Functional, frechet
from .transforms import EPS_CURV, Density, LorenzCurve, TangentVector, _augment

TAGS = ("W2", "W2M", "Crho", "CD")
MOMENT_TOL = 1e-6


def _tanh(x):
    # coefficient presets must also accept traced jax arrays
    if type(x).__module__.startswith("jax"):
        import jax.numpy as jnp

        return jnp.tanh(x)
    return np.tanh(x)


def _one(r):
    return r * 0.0 + 1.0


MOBILITIES: dict[str, Callable] = {
    "one": _one,
    "rho": lambda r: r,
    "inv1p": lambda r: 1.0 / (1.0 + r),
}

DIFFUSIONS: dict[str, Callable] = {
    "one": lambda x, r: x * 0.0 + r * 0.0 + 1.0,
    "tanh": lambda x, r: 1.0 + 0.5 * _tanh(x) + r * 0.0,
}


@dataclass(frozen=True)
class GradientStructure:
    """Tag plus mobility m(rho) (W2M) or diffusion d(x, rho) (CD).

    M = m(rho) rho and D = d(x, rho) rho; the Lorenz twins substitute
    x -> L_f and rho -> 1/L_ff.
    """

    tag: str
    m: Callable = _one
    d: Callable = DIFFUSIONS["one"]
    name: str = ""

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown structure tag {self.tag!r}")

    @classmethod
    def preset(cls, tag: str, coefficient: str = "one") -> "GradientStructure":
        tag = {t.lower(): t for t in TAGS}.get(tag.lower(), tag)
        if tag == "W2M":
            return cls(tag, m=MOBILITIES[coefficient], name=f"W2M[{coefficient}]")
        if tag == "CD":
            return cls(tag, d=DIFFUSIONS[coefficient], name=f"CD[{coefficient}]")
        return cls(tag, name=tag)

    @property
    def is_transport(self) -> bool:
        return self.tag in ("W2", "W2M")

    def mobility(self, r):
        r = np.asarray(r, dtype=float)
        m = _one(r) if self.tag == "W2" else np.asarray(self.m(r), dtype=float)
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ValueError(f"mobility of {self.name or self.tag} is not positive on this state")
        return m

    def diffusion(self, x, r):
        x = np.asarray(x, dtype=float)
        r = np.asarray(r, dtype=float)
        d = np.ones(np.broadcast(x, r).shape) if self.tag == "Crho" else np.asarray(self.d(x, r), dtype=float)
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise ValueError(f"diffusion of {self.name or self.tag} is not positive on this state")
        return d


def _logmean(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lm = (b - a) / (np.log(b) - np.log(a))
    close = np.abs(b - a) <= 1e-12 * np.maximum(a, b)
    return np.where(close, 0.5 * (a + b), lm)


# -- density side ------------------------------------------------------------------

def face_mobility(S: GradientStructure, rho: Density) -> np.ndarray:
    """M at cell faces, built from the logarithmic mean of neighbouring rho."""
    r = rho.values
    rf = _logmean(r[:-1], r[1:])
    return S.mobility(rf) * rf


def node_diffusion(S: GradientStructure, rho: Density) -> np.ndarray:
    return S.diffusion(rho.grid.nodes, rho.values) * rho.values


def _second_difference(grid, phi):
    """Centred second difference at interior nodes, zero at the two ends."""
    out = np.zeros_like(phi)
    out[1:-1] = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / grid.spacing**2
    return out


def _conservative_divergence(grid, flux):
    """(flux_{i+1/2} - flux_{i-1/2}) / w_i with zero flux through the window ends."""
    full = np.concatenate(([0.0], flux, [0.0]))
    return np.diff(full) / grid.weights


def _covector_values(covector, side, grid):
    if isinstance(covector, FrechetDerivative):
        if covector.side != side:
            raise SideMismatch(f"covector lives on the {covector.side} side, expected {side}")
        if covector.grid != grid:
            raise GridMismatch("covector grid differs from the state grid")
        return covector.values, covector.left, covector.right
    v = np.asarray(covector, dtype=float)
    if v.shape != (grid.n,):
        raise GridMismatch(f"covector has shape {v.shape}, expected ({grid.n},)")
    return v, 0.0, 0.0


def _onsager_density(S, rho: Density, phi) -> TangentVector:
    g = rho.grid
    h = g.spacing
    if S.is_transport:
        flux = face_mobility(S, rho) * np.diff(phi) / h
        vals = -_conservative_divergence(g, flux)
        return TangentVector("density", g, vals, moment_constrained=False)
    w = node_diffusion(S, rho) * _second_difference(g, phi)
    w[0] = w[-1] = 0.0
    vals = _conservative_divergence(g, np.diff(w) / h)
    out = TangentVector("density", g, vals, moment_constrained=True)
    drift = abs(g.integrate(g.nodes * vals))
    scale = max(1.0, float(np.max(np.abs(w))))
    if drift > MOMENT_TOL * scale:
        raise MomentDrift(f"first moment of the gradient is {drift:.3e}; shrink the window")
    return out


# -- Lorenz side --------------------------------------------------------------------

def _interval_rho(L: LorenzCurve) -> np.ndarray:
    """rho = 1/L_ff on each augmented interval, from the mean of the adjacent
    L_ff values; one near-flat node cannot make a whole interval cheap."""
    c = L.lff
    return 1.0 / np.concatenate(([c[0]], 0.5 * (c[:-1] + c[1:]), [c[-1]]))


def lorenz_mobility(S: GradientStructure, L: LorenzCurve) -> np.ndarray:
    return S.mobility(_interval_rho(L))


def lorenz_diffusion(S: GradientStructure, L: LorenzCurve) -> np.ndarray:
    return S.diffusion(L.lf, 1.0 / L.lff)


def _check_curvature(L: LorenzCurve):
    if np.any(L.lff < EPS_CURV):
        j = int(np.argmin(L.lff))
        raise DegenerateCurvature(f"L_ff = {L.lff[j]:.3e} below floor at f = {L.grid.nodes[j]:.4f}")


def _onsager_lorenz(S, L: LorenzCurve, delta, left, right) -> TangentVector:
    g = L.grid
    _check_curvature(L)
    if S.is_transport:
        fa, _ = _augment(g, np.zeros(g.n), 0.0)
        width = np.diff(fa)
        # psi' on each augmented interval: -(left + int_0^f delta), then mobility
        inner = -(left + np.concatenate(([0.0], np.cumsum(g.spacing * delta))))
        slopes = inner * lorenz_mobility(S, L)
        psi = np.cumsum(width * slopes)
        # a compatible covector has inner[-1] == right, i.e. no leftover boundary term
        diag = {"psi_prime_1": float(slopes[-1]), "compat_residual": float(abs(inner[-1] - right))}
        return TangentVector("lorenz", g, psi[:-1], right=float(psi[-1]), subspace="T",
                             diagnostics=diag)
    vals = lorenz_diffusion(S, L) * delta / L.lff**2
    return TangentVector("lorenz", g, vals, right=0.0, subspace="T0",
                         diagnostics={"dropped_right": float(right)})


def onsager_apply(S: GradientStructure, side: str, state, covector) -> TangentVector:
    """Raw Onsager operator of S applied to a covector on the given side."""
    if side == "density":
        if not isinstance(state, Density):
            raise SideMismatch("density side needs a Density state")
        phi, _, _ = _covector_values(covector, side, state.grid)
        return _onsager_density(S, state, phi)
    if side == "lorenz":
        if not isinstance(state, LorenzCurve):
            raise SideMismatch("Lorenz side needs a LorenzCurve state")
        delta, left, right = _covector_values(covector, side, state.grid)
        return _onsager_lorenz(S, state, delta, left, right)
    raise ValueError(f"unknown side {side!r}")


def grad_density(S: GradientStructure, F: Functional, rho: Density) -> TangentVector:
    if F.side != "density":
        raise SideMismatch("grad_density needs a density-side functional")
    return onsager_apply(S, "density", rho, frechet(F, rho))


def grad_lorenz(S: GradientStructure, F: Functional, L: LorenzCurve) -> TangentVector:
    if F.side != "lorenz":
        raise SideMismatch("grad_lorenz needs a Lorenz-side functional")
    return onsager_apply(S, "lorenz", L, frechet(F, L))


# -- metric pairings ---------------------------------------------------------------

def face_cumulative(grid, v) -> np.ndarray:
    """int^x v at the interior faces, node data weighted by quadrature weights."""
    return np.cumsum(grid.weights * v)[:-1]


def double_cumulative(grid, v) -> np.ndarray:
    """Node values of the double cumulative integral of v, zero at the left end."""
    inner = face_cumulative(grid, v)
    return np.concatenate(([0.0], np.cumsum(grid.spacing * inner)))


def metric_pairing(S: GradientStructure, state, a: TangentVector, b: TangentVector) -> float:
    """Riemannian inner product <a, b> of two tangent vectors at ``state``."""
    if a.side != b.side:
        raise SideMismatch("tangent vectors live on different sides")
    if a.side == "density":
        g = state.grid
        if S.is_transport:
            M = face_mobility(S, state)
            return float(np.sum(g.spacing * face_cumulative(g, a.values)
                                * face_cumulative(g, b.values) / M))
        D = node_diffusion(S, state)
        Wa = double_cumulative(g, a.values)[1:-1]
        Wb = double_cumulative(g, b.values)[1:-1]
        return float(np.sum(g.spacing * Wa * Wb / D[1:-1]))
    L = state
    g = L.grid
    if S.is_transport:
        fa, ya = _augment(g, a.values, a.right)
        _, yb = _augment(g, b.values, b.right)
        w = np.diff(fa)
        m = lorenz_mobility(S, L)
        return float(np.sum(np.diff(ya) * np.diff(yb) / (w * m)))
    dt = lorenz_diffusion(S, L)
    return float(np.sum(g.spacing * L.lff**2 * a.values * b.values / dt))


def metric_norm2(S: GradientStructure, state, v: TangentVector) -> float:
    return metric_pairing(S, state, v, v)
