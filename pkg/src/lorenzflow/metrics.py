"""Dynamic (action) form of the global metrics and isometry checks.

A path is K+1 equally spaced snapshots on t in [0, 1].  The discrete action
is sum_k dt * |u_{k+1} - u_k|^2 / dt^2 with the metric frozen at the
midpoint snapshot.  The action kernels are written once against an array
namespace so the same code serves numpy evaluation and jax autodiff.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .errors import ConstraintViolation, NonConvergence, SideMismatch
from .functionals import stencil_coefficients
from .geometry import GradientStructure
from .transforms import EPS_CURV, Density, Grid1D, LorenzCurve, density_from_lorenz, lorenz_map, quantiles

MOMENT_TOL = 1e-6
DECREASE_TOL = 1e-10
DENSITY_CAP = 4.0


@dataclass
class CurvePath:
    side: str
    states: list
    times: np.ndarray = None

    def __post_init__(self):
        if self.side not in ("density", "lorenz"):
            raise ValueError(f"unknown side {self.side!r}")
        if len(self.states) < 2:
            raise ValueError("a path needs at least two snapshots")
        if self.times is None:
            self.times = np.linspace(0.0, 1.0, len(self.states))

    @property
    def K(self) -> int:
        return len(self.states) - 1

    @property
    def grid(self) -> Grid1D:
        return self.states[0].grid

    def reversed(self) -> "CurvePath":
        return CurvePath(self.side, self.states[::-1], self.times.copy())

    def array(self) -> np.ndarray:
        """Snapshot values stacked (K+1, n); Lorenz paths append the top anchor."""
        if self.side == "density":
            return np.stack([s.values for s in self.states])
        return np.stack([np.append(s.values, s.total) for s in self.states])


@dataclass
class ActionReport:
    value: float
    integrand: np.ndarray
    side: str
    tag: str
    history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


# -- closed form -------------------------------------------------------------------

def w2_distance_closed_form(rho0: Density, rho1: Density, panels: int = 512, order: int = 8) -> float:
    """sqrt(int_0^1 (G0 - G1)^2 df) by composite Gauss-Legendre on the exact quantiles."""
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    f = (0.5 * (b - a) * t + 0.5 * (a + b)).ravel()
    wf = (0.5 * (b - a) * w).ravel()
    g0 = quantiles(rho0, f)
    g1 = quantiles(rho1, f)
    return float(np.sqrt(np.sum(wf * (g0 - g1) ** 2)))


# -- action kernels (xp = numpy or jax.numpy) ---------------------------------------------

def _logmean(xp, a, b):
    close = xp.abs(b - a) <= 1e-12 * xp.maximum(a, b)
    den = xp.where(close, 1.0, xp.log(b) - xp.log(a))
    return xp.where(close, 0.5 * (a + b), (b - a) / den)


class _LorenzStencil:
    def __init__(self, grid: Grid1D):
        self.grid = grid
        (self.a1, self.b1, self.c1), (self.a2, self.b2, self.c2) = stencil_coefficients(grid)
        fa = np.concatenate(([0.0], grid.nodes, [1.0]))
        self.width = np.diff(fa)
        self.mid = 0.5 * (fa[1:] + fa[:-1])

    def augment(self, xp, Y):
        """Y holds node values plus the top anchor in its last column."""
        zero = xp.zeros(Y.shape[:-1] + (1,))
        return xp.concatenate((zero, Y), axis=-1)

    def derivatives(self, xp, Y):
        ya = self.augment(xp, Y)
        ym, y0, yp = ya[..., :-2], ya[..., 1:-1], ya[..., 2:]
        d1 = self.a1 * ym + self.b1 * y0 + self.c1 * yp
        d2 = self.a2 * ym + self.b2 * y0 + self.c2 * yp
        return d1, d2


def _lorenz_action_terms(xp, S: GradientStructure, st: _LorenzStencil, Y):
    K = Y.shape[0] - 1
    dt = 1.0 / K
    vel = (Y[1:] - Y[:-1]) / dt
    mid = 0.5 * (Y[1:] + Y[:-1])
    lf, lff = st.derivatives(xp, mid)
    if S.is_transport:
        rho_int = 1.0 / xp.concatenate((lff[:, :1], 0.5 * (lff[:, :-1] + lff[:, 1:]), lff[:, -1:]), axis=1)
        m = rho_int * 0.0 + 1.0 if S.tag == "W2" else S.m(rho_int)
        slopes = xp.diff(st.augment(xp, vel), axis=1)
        return dt * xp.sum(slopes**2 / (st.width * m), axis=1)
    d = lf * 0.0 + 1.0 if S.tag == "Crho" else S.d(lf, 1.0 / lff)
    h = st.grid.spacing
    return dt * xp.sum(h * lff**2 * vel[:, :-1] ** 2 / d, axis=1)


def _density_action_terms(xp, S: GradientStructure, grid: Grid1D, R):
    K = R.shape[0] - 1
    dt = 1.0 / K
    h = grid.spacing
    w = grid.weights
    vel = (R[1:] - R[:-1]) / dt
    mid = 0.5 * (R[1:] + R[:-1])
    F = xp.cumsum(w * vel, axis=1)[:, :-1]
    if S.is_transport:
        rf = _logmean(xp, mid[:, :-1], mid[:, 1:])
        m = rf * 0.0 + 1.0 if S.tag == "W2" else S.m(rf)
        return dt * xp.sum(h * F**2 / (m * rf), axis=1)
    W = xp.cumsum(h * F, axis=1)[:, :-1]
    x = grid.nodes[1:-1]
    inner = mid[:, 1:-1]
    d = inner * 0.0 + 1.0 if S.tag == "Crho" else S.d(x, inner)
    return dt * xp.sum(h * W**2 / (d * inner), axis=1)


def _check_path(S: GradientStructure, path: CurvePath):
    if S.is_transport:
        return
    if path.side == "lorenz":
        tops = np.array([s.total for s in path.states])
        drift = float(np.max(np.abs(tops - tops[0])))
    else:
        means = np.array([s.grid.integrate(s.grid.nodes * s.values) for s in path.states])
        drift = float(np.max(np.abs(means - means[0])))
    if drift > MOMENT_TOL:
        raise ConstraintViolation(f"first moment varies by {drift:.3e} along the path")


def action(side: str, S: GradientStructure, path: CurvePath) -> ActionReport:
    if side != path.side:
        raise SideMismatch(f"path lives on the {path.side} side")
    _check_path(S, path)
    Y = path.array()
    if side == "lorenz":
        terms = _lorenz_action_terms(np, S, _LorenzStencil(path.grid), Y)
    else:
        terms = _density_action_terms(np, S, path.grid, Y)
    return ActionReport(float(np.sum(terms)), np.asarray(terms), side, S.tag)


# -- paths ---------------------------------------------------------------------------

def lorenz_path(Ls, times=None) -> CurvePath:
    return CurvePath("lorenz", list(Ls), times)


def geodesic_w2(rho0: Density, rho1: Density, K: int, fgrid: Grid1D | None = None) -> CurvePath:
    """Displacement interpolation: L_f(t) = (1-t) G0 + t G1, integrated in f."""
    fgrid = fgrid or Grid1D.cdf(max(rho0.grid.n, rho1.grid.n))
    L0 = lorenz_map(rho0, fgrid)
    L1 = lorenz_map(rho1, fgrid)
    states = []
    for t in np.linspace(0.0, 1.0, K + 1):
        states.append(LorenzCurve(fgrid, (1 - t) * L0.values + t * L1.values,
                                  (1 - t) * L0.total + t * L1.total,
                                  lf=(1 - t) * L0.lf + t * L1.lf,
                                  lff=(1 - t) * L0.lff + t * L1.lff))
    return CurvePath("lorenz", states)


def mixture_path(rho0: Density, rho1: Density, K: int) -> CurvePath:
    """Linear-in-mass path (1-t) rho0 + t rho1 on a shared spatial grid."""
    if rho0.grid != rho1.grid:
        raise ValueError("mixture paths need a shared spatial grid")
    states = [rho0.with_values((1 - t) * rho0.values + t * rho1.values)
              for t in np.linspace(0.0, 1.0, K + 1)]
    return CurvePath("density", states)


def to_lorenz(path: CurvePath, fgrid: Grid1D | None = None) -> CurvePath:
    fgrid = fgrid or Grid1D.cdf(path.grid.n)
    return CurvePath("lorenz", [lorenz_map(s, fgrid) for s in path.states], path.times.copy())


def tilt_to_mean(rho: Density, target: float) -> Density:
    """Perturb rho, keeping its mass and end values, so that its mean equals ``target``.

    Fixed end values keep the trapezoid mean and the exact moment of the
    piecewise-linear model (the Lorenz top) in step.
    """
    g, x = rho.grid, rho.grid.nodes
    b = (x - g.lo) * (g.hi - x) / (g.hi - g.lo) ** 2
    for _ in range(3):
        mu = rho.mean
        p0, p1 = rho.values * b, rho.values * b * (x - mu)
        A = np.array([[g.integrate(p0), g.integrate(p1)], [g.integrate(x * p0), g.integrate(x * p1)]])
        c0, c1 = np.linalg.solve(A, [0.0, target - mu])
        rho = rho.with_values(rho.values + c0 * p0 + c1 * p1, normalize=True)
    return rho


def to_density(path: CurvePath, xgrid: Grid1D, match_moment: bool = True) -> CurvePath:
    """Map a Lorenz path to densities; by default each snapshot's mean is set to L(1)."""
    states = [density_from_lorenz(s, xgrid) for s in path.states]
    if match_moment:
        states = [tilt_to_mean(r, s.total) for r, s in zip(states, path.states)]
    return CurvePath("density", states, path.times.copy())


# -- optimizer ------------------------------------------------------------------------

def _convex_project(st: _LorenzStencil, y, fixed_top: bool, floor: float = 0.0):
    """Closest curve with L_ff >= floor in slope space.

    The three-point L_ff is the slope jump over the distance between interval
    midpoints, so the constraint says slope - floor * mid is nondecreasing: an
    isotonic fit of the shifted slopes.  The weighted fit preserves
    sum(width * slope) = L(1), so the top anchor is unchanged.
    """
    ya = np.concatenate(([0.0], y))
    shift = floor * st.mid
    slopes = np.diff(ya) / st.width - shift
    iso = isotonic_regression(slopes, weights=st.width, increasing=True).x + shift
    out = np.cumsum(st.width * iso)
    if fixed_top:
        out[-1] = y[-1]
    return out


def _time_laplacian(K: int) -> np.ndarray:
    T = 2.0 * np.eye(K - 1) - np.eye(K - 1, k=1) - np.eye(K - 1, k=-1)
    return T * K


def _lorenz_preconditioner(S: GradientStructure, st: _LorenzStencil, Y0, K: int):
    """Inverse of the action Hessian with the metric coefficients frozen.

    Transport structures: (time Laplacian) x (slope stiffness on node values and
    top).  Crho/CD: (time Laplacian) x diag(h L_ff^2 / d~) on node values.
    Smoothing by this map keeps the iterates free of grid-scale curvature noise.
    """
    Tinv = np.linalg.inv(_time_laplacian(K))
    n = st.grid.n
    if S.is_transport:
        inv_w = 1.0 / st.width
        A = np.diag(inv_w[:-1] + inv_w[1:]) - np.diag(inv_w[1:-1], 1) - np.diag(inv_w[1:-1], -1)
        A = np.pad(A, ((0, 1), (0, 1)))
        A[n - 1, n - 1] = inv_w[n - 1] + inv_w[n]
        A[n - 1, n] = A[n, n - 1] = -inv_w[n]
        A[n, n] = inv_w[n]
        Ainv = np.linalg.inv(A)
        return lambda G: Tinv @ G @ Ainv
    lf, lff = st.derivatives(np, Y0.mean(axis=0))
    d = np.ones_like(lf) if S.tag == "Crho" else np.asarray(S.d(lf, 1.0 / lff), dtype=float)
    diag = st.grid.spacing * lff**2 / d

    def apply(G):
        out = G.copy()
        out[:, :-1] = Tinv @ (G[:, :-1] / diag)
        return out

    return apply


def _constraint_basis(grid: Grid1D, moment: bool):
    w = grid.weights
    rows = [w] + ([w * grid.nodes] if moment else [])
    B = np.stack(rows)
    return B, np.linalg.pinv(B)


def minimize_action(side: str, S: GradientStructure, endpoints, K: int = 16, iters: int = 50,
                    init: CurvePath | None = None, strict: bool = False,
                    density_cap: float | None = DENSITY_CAP):
    """Projected gradient descent with Armijo backtracking on interior snapshots.

    Lorenz paths start from the quantile geodesic and keep each snapshot convex
    by an isotonic projection of its slopes; with ``density_cap`` the
    projection also enforces 1/L_ff <= density_cap * max(rho0, rho1), so the
    iterates stay resolvable on the spatial grid.  Density paths start from
    the mixture path and keep mass (and, for Crho/CD, the first moment) fixed.
    Returns (path, report); report.history is monotone nonincreasing.
    """
    import jax
    import jax.numpy as jnp
    from jax.experimental import enable_x64

    if K < 2:
        raise ValueError("K must be at least 2")
    rho0, rho1 = endpoints
    if init is None:
        init = geodesic_w2(rho0, rho1, K) if side == "lorenz" else mixture_path(rho0, rho1, K)
    if init.side != side:
        raise SideMismatch("initial path lives on the other side")
    _check_path(S, init)
    Y0 = init.array()
    grid = init.grid
    fixed_top = side == "lorenz" and not S.is_transport
    floor = 0.0
    if density_cap is not None:
        floor = 1.0 / (density_cap * max(float(np.max(rho0.values)), float(np.max(rho1.values))))

    with enable_x64():
        if side == "lorenz":
            st = _LorenzStencil(grid)

            def objective(Y):
                return jnp.sum(_lorenz_action_terms(jnp, S, st, Y))
        else:
            B, Bp = _constraint_basis(grid, moment=not S.is_transport)

            def objective(Y):
                return jnp.sum(_density_action_terms(jnp, S, grid, Y))

        value_and_grad = jax.jit(jax.value_and_grad(objective))

        def evaluate(Y):
            v, g = value_and_grad(jnp.asarray(Y))
            return float(v), np.asarray(g)

        def project(Y):
            out = Y.copy()
            if side == "lorenz":
                for k in range(1, K):
                    out[k] = _convex_project(st, out[k], fixed_top, floor)
            return out

        def admissible(Y):
            if side == "density":
                return bool(np.all(Y > 0))
            _, lff = st.derivatives(np, Y)
            return bool(np.all(lff > max(EPS_CURV, (1.0 - 1e-9) * floor)))

        if side == "lorenz":
            precondition = _lorenz_preconditioner(S, st, Y0, K)

        def direction(g):
            d = -g.copy()
            d[0] = d[-1] = 0.0
            if side == "density":
                d[1:-1] -= (d[1:-1] @ Bp) @ B
                return d
            if fixed_top:
                d[:, -1] = 0.0
            d[1:-1] = precondition(d[1:-1])
            return d

        Y = Y0.copy()
        val, g = evaluate(Y)
        history = [val]
        step = 1.0 / max(1.0, float(np.max(np.abs(g))))
        converged = False
        for _ in range(iters):
            d = direction(g)
            slope = float(np.sum(g * d))
            if slope >= -1e-300:
                converged = True
                break
            accepted = False
            for _ in range(40):
                cand = project(Y + step * d)
                if admissible(cand):
                    cv, cg = evaluate(cand)
                    if np.isfinite(cv) and cv <= val + 1e-4 * float(np.sum(g * (cand - Y))):
                        accepted = True
                        break
                step *= 0.5
            if not accepted or cv > val:
                converged = True
                break
            decrease = val - cv
            Y, val, g = cand, cv, cg
            history.append(val)
            step *= 2.0
            if decrease < DECREASE_TOL * max(1.0, abs(val)):
                converged = True
                break

    if side == "lorenz":
        # every snapshot, endpoints included, uses the same stencil derivatives
        states = [init.states[0].with_values(y[:-1], total=y[-1]) for y in Y]
    else:
        states = [init.states[0]] + [init.states[0].with_values(y) for y in Y[1:-1]] + [init.states[-1]]
    path = CurvePath(side, states, init.times.copy())
    report = action(side, S, path)
    report.history = history
    report.diagnostics = {"converged": converged, "iterations": len(history) - 1,
                          "initial_action": history[0]}
    if strict and not converged:
        raise NonConvergence(f"no convergence within {iters} iterations")
    return path, report


# -- isometry ------------------------------------------------------------------------

def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def isometry_report(S: GradientStructure, rho0: Density, rho1: Density, K: int = 32,
                    iters: int = 20, tol: float = 1e-3, reverse: bool = True) -> dict:
    """Curve-wise transfer checks between the two sides.

    The prescribed path is the mass mixture of the endpoints.  It and the
    density-side minimizer are mapped to the Lorenz side; with ``reverse`` the
    Lorenz-side minimizer is also mapped back to densities.  Each transfer
    compares the two actions.  For W2 the quantile geodesic is also checked
    against the closed-form distance.
    """
    fgrid = Grid1D.cdf(rho0.grid.n)
    out = {"structure": S.name or S.tag, "side_actions": {}, "transfer_errors": {}}
    prescribed = mixture_path(rho0, rho1, K)
    a_x = action("density", S, prescribed).value
    a_l = action("lorenz", S, to_lorenz(prescribed, fgrid)).value
    out["side_actions"]["prescribed"] = {"density": a_x, "lorenz": a_l}
    out["transfer_errors"]["prescribed"] = _rel(a_x, a_l)

    opt_path, opt = minimize_action("density", S, (rho0, rho1), K=K, iters=iters, init=prescribed)
    a_l_opt = action("lorenz", S, to_lorenz(opt_path, fgrid)).value
    out["side_actions"]["density_minimizer"] = {"density": opt.value, "lorenz": a_l_opt,
                                                "history": opt.history}
    out["transfer_errors"]["density_minimizer"] = _rel(opt.value, a_l_opt)

    if reverse:
        _reverse_transfer(out, S, rho0, rho1, K, iters, fgrid, prescribed)

    if S.tag == "W2":
        d2 = w2_distance_closed_form(rho0, rho1) ** 2
        geo = action("lorenz", S, geodesic_w2(rho0, rho1, K, fgrid)).value
        out["side_actions"]["geodesic"] = {"closed_form": d2, "lorenz": geo}
        out["transfer_errors"]["geodesic"] = _rel(d2, geo)
    out["pass"] = bool(all(e <= tol for e in out["transfer_errors"].values()))
    return out


def _reverse_transfer(out, S, rho0, rho1, K, iters, fgrid, prescribed):
    lpath, lopt = minimize_action("lorenz", S, (rho0, rho1), K=K, iters=iters,
                                  init=to_lorenz(prescribed, fgrid))
    a_x_opt = action("density", S, to_density(lpath, rho0.grid)).value
    out["side_actions"]["lorenz_minimizer"] = {"density": a_x_opt, "lorenz": lopt.value,
                                               "history": lopt.history}
    out["transfer_errors"]["lorenz_minimizer"] = _rel(a_x_opt, lopt.value)
