"""Time integration on both sides and cross-side equivalence reports.

Density side: d_t rho = -d_x(Sigma rho) + d_xx(D rho) on a zero-flux window.
Lorenz side:  d_t L = -D~/L_ff + int_0^f Sigma~ dg, with Sigma~, D~ obtained
by substituting x -> L_f and rho -> 1/L_ff.  Gradient flows use the
operators of :mod:`lorenzflow.geometry`.  All stepping is explicit RK4.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    ConvexityLoss,
    LorenzFlowError,
    PositivityLoss,
    SideMismatch,
    StabilityViolation,
    TimedError,
)
from .functionals import Functional, evaluate
from .geometry import GradientStructure, _logmean, grad_density, grad_lorenz
from .transforms import EPS_CURV, Density, LorenzCurve, lorenz_map

RHS_KINDS = ("mvfpe", "lorenz_pde", "gradient_flow")
GROWTH_LIMIT = 1.5
CFL = 0.2


# -- coefficient fields ----------------------------------------------------------

def zero_field(x, r):
    return np.zeros(np.broadcast(x, r).shape)


def unit_field(x, r):
    return np.ones(np.broadcast(x, r).shape)


DRIFTS: dict[str, Callable] = {
    "zero": zero_field,
    "ou": lambda x, r: -np.asarray(x, dtype=float) + 0.0 * r,
}
DIFFUSION_FIELDS: dict[str, Callable] = {
    "one": unit_field,
    "rho": lambda x, r: np.asarray(r, dtype=float) + 0.0 * x,
}


def lorenz_twin(field_fn: Callable) -> Callable:
    """Lorenz-side version of a coefficient c(x, rho): c~(f, L_f, L_ff) = c(L_f, 1/L_ff)."""

    def twin(f, lf, lff):
        return field_fn(lf, 1.0 / lff)

    return twin


# -- specs and trajectories --------------------------------------------------------

@dataclass(frozen=True)
class EvolutionSpec:
    side: str
    rhs_kind: str
    dt: float
    t_end: float
    stride: int = 1
    Sigma: Callable | None = None
    D: Callable | None = None
    structure: GradientStructure | None = None
    functional: Functional | None = None
    direction: str = "descent"
    cfl: float = CFL

    def __post_init__(self):
        if self.side not in ("density", "lorenz"):
            raise ValueError(f"unknown side {self.side!r}")
        if self.rhs_kind not in RHS_KINDS:
            raise ValueError(f"unknown rhs kind {self.rhs_kind!r}")
        if not self.dt > 0 or self.t_end < 0:
            raise ValueError("dt must be positive and t_end nonnegative")
        if self.stride < 1:
            raise ValueError("stride must be a positive integer")
        if abs(self.t_end / self.dt - round(self.t_end / self.dt)) > 1e-9 * max(1.0, self.t_end / self.dt):
            raise ValueError("t_end must be an integer multiple of dt")
        if self.direction not in ("ascent", "descent"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.rhs_kind == "gradient_flow" and (self.structure is None or self.functional is None):
            raise ValueError("gradient_flow needs a structure and a functional")
        if self.rhs_kind == "mvfpe" and self.side != "density":
            raise SideMismatch("mvfpe runs on the density side")
        if self.rhs_kind == "lorenz_pde" and self.side != "lorenz":
            raise SideMismatch("lorenz_pde runs on the Lorenz side")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "ascent" else -1.0


@dataclass
class Trajectory:
    side: str
    times: np.ndarray
    states: list
    diagnostics: list = field(default_factory=list)

    def __len__(self):
        return len(self.states)

    def series(self, key: str) -> np.ndarray:
        return np.array([d[key] for d in self.diagnostics], dtype=float)


# -- density side ---------------------------------------------------------------

def mvfpe_rhs(rho: Density, Sigma: Callable, D: Callable) -> np.ndarray:
    """Conservative exponentially fitted flux J = Sigma rho - d_x(D rho) at faces."""
    g = rho.grid
    x, r = g.nodes, rho.values
    Dn = np.asarray(D(x, r), dtype=float)
    Sn = np.asarray(Sigma(x, r), dtype=float)
    u = Dn * r
    uf = _logmean(u[:-1], u[1:])
    Df = 0.5 * (Dn[:-1] + Dn[1:])
    Sf = 0.5 * (Sn[:-1] + Sn[1:])
    flux = -uf * (np.diff(np.log(u)) / g.spacing - Sf / Df)
    full = np.concatenate(([0.0], flux, [0.0]))
    return -np.diff(full) / g.weights


def _as_density(rho: Density, v) -> Density:
    scale = float(np.max(np.abs(v)))
    if np.min(v) < -1e-8 * scale:
        j = int(np.argmin(v))
        raise PositivityLoss(f"density {v[j]:.3e} at x = {rho.grid.nodes[j]:.4f}")
    return rho.with_values(v)


def _rk4(state, y, rhs, build, dt):
    k1 = rhs(state)
    k2 = rhs(build(y + 0.5 * dt * k1))
    k3 = rhs(build(y + 0.5 * dt * k2))
    k4 = rhs(build(y + dt * k3))
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _check_growth(old, new):
    a = float(np.max(np.abs(old)))
    b = float(np.max(np.abs(new)))
    if a > 0 and b / a > GROWTH_LIMIT:
        raise StabilityViolation(f"growth factor {b / a:.3g} in one step; reduce dt")


def step_density(rho: Density, rhs: Callable, dt: float) -> Density:
    y = rho.values
    y1 = _rk4(rho, y, rhs, lambda v: _as_density(rho, v), dt)
    _check_growth(y, y1)
    return _as_density(rho, y1)


def step_mvfpe(rho: Density, Sigma: Callable, D: Callable, dt: float) -> Density:
    return step_density(rho, lambda s: mvfpe_rhs(s, Sigma, D), dt)


def density_stability_bound(rho: Density, D: Callable, c: float = CFL) -> float:
    dmax = float(np.max(np.abs(D(rho.grid.nodes, rho.values))))
    return np.inf if dmax == 0 else c * rho.grid.spacing**2 / dmax


# -- Lorenz side -------------------------------------------------------------------

def lorenz_pde_rhs(L: LorenzCurve, SigmaTilde: Callable, DTilde: Callable) -> np.ndarray:
    """Node rates followed by the rate of the top anchor L(1)."""
    g = L.grid
    h = g.spacing
    s = np.asarray(SigmaTilde(g.nodes, L.lf, L.lff), dtype=float) * np.ones(g.n)
    d = np.asarray(DTilde(g.nodes, L.lf, L.lff), dtype=float) * np.ones(g.n)
    drift = np.cumsum(h * s) - 0.5 * h * s
    return np.concatenate((-d / L.lff + drift, [h * s.sum()]))


def _as_curve(L: LorenzCurve, y, check=True) -> LorenzCurve:
    out = L.with_values(y[:-1], total=y[-1])
    if check and (np.any(out.lff < EPS_CURV) or np.any(np.diff(out.lf) < 0)):
        j = int(np.argmin(out.lff))
        raise ConvexityLoss(f"curvature {out.lff[j]:.3e} at f = {L.grid.nodes[j]:.4f}")
    return out


def step_lorenz(L: LorenzCurve, rhs: Callable, dt: float) -> LorenzCurve:
    L = L.stencil()
    y = np.concatenate((L.values, [L.total]))
    y1 = _rk4(L, y, rhs, lambda v: _as_curve(L, v), dt)
    _check_growth(y, y1)
    return _as_curve(L, y1)


def step_lorenz_pde(L: LorenzCurve, SigmaTilde: Callable, DTilde: Callable, dt: float) -> LorenzCurve:
    return step_lorenz(L, lambda s: lorenz_pde_rhs(s, SigmaTilde, DTilde), dt)


# -- driver -------------------------------------------------------------------------

def _rhs_for(spec: EvolutionSpec) -> Callable:
    if spec.rhs_kind == "mvfpe":
        return lambda s: mvfpe_rhs(s, spec.Sigma or zero_field, spec.D or unit_field)
    if spec.rhs_kind == "lorenz_pde":
        st = lorenz_twin(spec.Sigma or zero_field)
        dt_ = lorenz_twin(spec.D or unit_field)
        return lambda s: lorenz_pde_rhs(s, st, dt_)
    S, F, sign = spec.structure, spec.functional, spec.sign
    if spec.side == "density":
        return lambda s: sign * grad_density(S, F, s).values

    def rhs(s):
        g = grad_lorenz(S, F, s)
        return sign * np.concatenate((g.values, [g.right]))

    return rhs


def _diagnostics(spec: EvolutionSpec, state) -> dict:
    if isinstance(state, Density):
        out = {"mass": state.mass, "first_moment": state.mean, "clamped": state.clamped}
    else:
        out = {"top": state.total, "min_lff": float(state.lff.min()),
               "convex": state.is_convex()}
    if spec.functional is not None:
        out["functional"] = float(evaluate(spec.functional, state))
    return out


def run(spec: EvolutionSpec, init) -> Trajectory:
    side = "density" if isinstance(init, Density) else "lorenz"
    if side != spec.side:
        raise SideMismatch(f"initial state is on the {side} side, spec wants {spec.side}")
    rhs = _rhs_for(spec)
    step = step_density if side == "density" else step_lorenz
    state = init if side == "density" else init.stencil()
    times, states, diags = [0.0], [state], [_diagnostics(spec, state)]
    for k in range(1, spec.n_steps + 1):
        try:
            state = step(state, rhs, spec.dt)
        except LorenzFlowError as err:
            raise TimedError(k * spec.dt, err) from err
        if k % spec.stride == 0 or k == spec.n_steps:
            times.append(k * spec.dt)
            states.append(state)
            diags.append(_diagnostics(spec, state))
    return Trajectory(side, np.array(times), states, diags)


def equivalence_report(traj_density: Trajectory, traj_lorenz: Trajectory, tol: float = 5e-3) -> dict:
    """Compare L[rho(t)] with L(t) snapshot by snapshot (values and top anchor)."""
    rows = []
    envelope = None
    td, tl = traj_density.times, traj_lorenz.times
    same = len(td) == len(tl) and np.allclose(td, tl, rtol=0, atol=1e-12)
    for k, t in enumerate(tl):
        L = traj_lorenz.states[k]
        try:
            if not same:
                raise ValueError("time samples differ")
            Lr = lorenz_map(traj_density.states[k], L.grid)
            diff = np.concatenate((Lr.values - L.values, [Lr.total - L.total]))
            sup = float(np.max(np.abs(diff)))
            envelope = np.abs(diff) if envelope is None else np.maximum(envelope, np.abs(diff))
            l2 = float(np.sqrt(L.grid.spacing * np.sum(diff[:-1] ** 2)))
        except (LorenzFlowError, ValueError):
            sup = l2 = float("nan")
        rows.append({"time": float(t), "sup": sup, "l2": l2})
    sups = np.array([r["sup"] for r in rows])
    max_sup = float(np.max(sups)) if np.all(np.isfinite(sups)) else float("nan")
    f = traj_lorenz.states[0].grid.nodes
    return {"rows": rows, "max_sup": max_sup, "tol": tol,
            "pass": bool(np.isfinite(max_sup) and max_sup <= tol),
            "profile": {"f": f.tolist(),
                        "error": [] if envelope is None else envelope[:-1].tolist(),
                        "top_error": float("nan") if envelope is None else float(envelope[-1])}}


def refinement_ratio(coarse: dict, fine: dict) -> dict:
    """Error reduction between two equivalence reports at successive refinements.

    ``full`` compares the sup norms over each grid.  ``common`` compares both
    time-envelopes at the coarse nodes (fine envelope interpolated), so the
    extra near-edge points of the fine grid do not enter the comparison.
    """
    fc, ec = np.array(coarse["profile"]["f"]), np.array(coarse["profile"]["error"])
    ff, ef = np.array(fine["profile"]["f"]), np.array(fine["profile"]["error"])
    on_coarse = np.interp(fc, ff, ef)
    common_c = max(ec.max(), coarse["profile"]["top_error"])
    common_f = max(on_coarse.max(), fine["profile"]["top_error"])
    return {"full": coarse["max_sup"] / fine["max_sup"], "common": float(common_c / common_f)}
