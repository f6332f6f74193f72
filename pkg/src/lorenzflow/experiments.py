"""Experiment runners behind the command line.

Each runner takes an :class:`ExperimentConfig` and an optional :class:`Sink`
for artifacts, and returns ``(assertions, metrics)``.  ``run_experiment``
wraps that into a summary document whose ``pass`` field is the conjunction of
all assertions.  Nothing time- or host-dependent enters the summary, so a
fixed config gives byte-identical output.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig, make_density, make_fields, make_functional, make_structure
from .errors import LorenzFlowError, TimedError
from .flows import EvolutionSpec, Trajectory, equivalence_report, refinement_ratio, run
from .functionals import (
    boltzmann_entropy,
    cov_frechet,
    evaluate,
    frechet,
    gauge_project,
    quadratic_interaction,
    quadratic_potential,
)
from .geometry import GradientStructure, metric_pairing, onsager_apply
from .metrics import CurvePath, isometry_report, mixture_path, to_lorenz
from .transforms import (
    TAU_TAIL,
    Density,
    Grid1D,
    TangentVector,
    density_from_lorenz,
    dt_inverse_cdf,
    dt_lorenz,
    lorenz_map,
    quantiles,
    tail_ratio,
)

BULK = (0.05, 0.95)
AUDIT_STRUCTURES = (("W2", "one"), ("W2M", "inv1p"), ("Crho", "one"), ("CD", "tanh"))
EXACT = 1e-10
REF_FACTOR = 16


def check(name: str, value: float, threshold: float, op: str = "le") -> dict:
    value = float(value)
    ok = not np.isnan(value) and (value <= threshold if op == "le" else value >= threshold)
    return {"name": name, "value": value, "threshold": float(threshold), "op": op, "pass": bool(ok)}


@dataclass
class Sink:
    """Artifact writer rooted at a run directory."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def trajectory(self, traj, tag: str):
        """Trajectories, CurvePaths or single states, as ``<side>-<tag>.csv``."""
        if isinstance(traj, CurvePath):
            traj = Trajectory(traj.side, traj.times, traj.states)
        elif not isinstance(traj, Trajectory):
            side = "density" if isinstance(traj, Density) else "lorenz"
            traj = Trajectory(side, np.zeros(1), [traj])
        io.trajectory_to_csv(traj, self.root / f"{traj.side}-{tag}.csv")

    def state(self, state, name: str):
        io.state_to_csv(state, self.root / f"{name}.csv")

    def json(self, obj, name: str):
        io.write_json(obj, self.root / f"{name}.json")


# -- transform-roundtrip ---------------------------------------------------------------

def _bulk(f):
    return (f >= BULK[0]) & (f <= BULK[1])


def derivative_errors(rho: Density, reference: Density) -> dict:
    """Stencil L_f and L_ff of ``rho`` against quantiles and 1/(rho o G) of a
    finer ``reference`` sampling of the same density.

    ``max_*`` are relative sup errors over the bulk, ``rms_*`` the bulk
    root-mean-square errors used for convergence orders.
    """
    fg = Grid1D.cdf(rho.grid.n)
    S = lorenz_map(rho, fg).stencil()
    ref = lorenz_map(reference, fg)
    m = _bulk(fg.nodes)
    e_f = (S.lf - ref.lf)[m] / np.max(np.abs(ref.lf[m]))
    e_ff = (S.lff / ref.lff - 1.0)[m]
    return {"max_lf": float(np.abs(e_f).max()), "max_lff": float(np.abs(e_ff).max()),
            "rms_lf": float(np.sqrt(np.mean(e_f**2))), "rms_lff": float(np.sqrt(np.mean(e_ff**2)))}


def _order(coarse: float, fine: float) -> float:
    if coarse <= EXACT and fine <= EXACT:
        return float("inf")
    return float(np.log2(coarse / max(fine, 1e-300)))


def interior_tangent(rho: Density, rng) -> TangentVector:
    """Zero-mass perturbation supported strictly inside the window."""
    x = rho.grid.nodes
    span = rho.grid.hi - rho.grid.lo
    c = rho.grid.lo + span * rng.uniform(0.3, 0.7)
    w = span * rng.uniform(0.04, 0.12)
    bump = np.where(np.abs(x - c) < w, np.cos(np.pi * (x - c) / (2 * w)) ** 2, 0.0) * rho.values
    h = bump * (rng.normal() * np.sin(np.pi * (x - c) / w) + rng.normal())
    h = h - bump * rho.grid.integrate(h) / rho.grid.integrate(bump)
    return TangentVector("density", rho.grid, h)


def lemma_errors(rho: Density, rng, count: int = 10, eps: float = 1e-4) -> list[float]:
    """dt_inverse_cdf and dt_lorenz against central differences, relative sup error."""
    fg = Grid1D.cdf(rho.grid.n)
    f = fg.nodes
    out = []
    for _ in range(count):
        h = interior_tangent(rho, rng)
        rp = Density(rho.grid, rho.values + eps * h.values, normalize=False)
        rm = Density(rho.grid, rho.values - eps * h.values, normalize=False)
        fd_g = (quantiles(rp, f) - quantiles(rm, f)) / (2 * eps)
        Lp, Lm = lorenz_map(rp, fg), lorenz_map(rm, fg)
        fd_l = np.concatenate(((Lp.values - Lm.values), [Lp.total - Lm.total])) / (2 * eps)
        a_g = dt_inverse_cdf(rho, h, fg)
        a_l = dt_lorenz(rho, h, fg)
        a_l = np.concatenate((a_l.values, [a_l.right]))
        e_g = np.abs(a_g - fd_g).max() / np.abs(fd_g).max()
        e_l = np.abs(a_l - fd_l).max() / np.abs(fd_l).max()
        out.append(float(max(e_g, e_l)))
    return out


def _sampled(cfg: ExperimentConfig, n: int) -> Density:
    g = cfg.x_grid()
    return make_density(Grid1D(g.lo, g.hi, n), cfg.init)


def run_transform_roundtrip(cfg: ExperimentConfig, sink: Sink | None):
    rho = cfg.density()
    n = rho.grid.n
    fg = Grid1D.cdf(n)
    L = lorenz_map(rho, fg)
    back = density_from_lorenz(L, rho.grid)
    q = quantiles(rho, list(BULK))
    mx = (rho.grid.nodes >= q[0]) & (rho.grid.nodes <= q[1])
    roundtrip = float(np.abs(back.values - rho.values)[mx].max() / rho.values.max())
    err = derivative_errors(rho, _sampled(cfg, REF_FACTOR * (n - 1) + 1))
    tol = cfg.tol("derivative")
    checks = [check("lf_rel_error", err["max_lf"], tol), check("lff_rel_error", err["max_lff"], tol),
              check("roundtrip_rel_error", roundtrip, cfg.tol("roundtrip"))]
    metrics = {"derivative": err, "roundtrip": roundtrip}
    if cfg.refine:
        err2 = derivative_errors(_sampled(cfg, 2 * n), _sampled(cfg, REF_FACTOR * (2 * n - 1) + 1))
        orders = {k: _order(err[f"rms_{k}"], err2[f"rms_{k}"]) for k in ("lf", "lff")}
        metrics["refined"] = err2
        metrics["order"] = orders
        checks += [check(f"order_{k}", v, cfg.tol("order"), "ge") for k, v in orders.items()]
    lemma = lemma_errors(rho, np.random.default_rng(cfg.seed))
    metrics["lemma"] = lemma
    checks.append(check("lemma_fd_error", max(lemma), cfg.tol("lemma")))
    if sink is not None:
        sink.trajectory(rho, "initial")
        sink.trajectory(L, "initial")
        sink.state(back, "roundtrip-density")
    return checks, metrics


# -- flows -----------------------------------------------------------------------------

def _flow_pair(cfg: ExperimentConfig, dt: float):
    """Density-side and Lorenz-side specs for one resolution."""
    S = make_structure(cfg.structure)
    common = dict(dt=dt, t_end=cfg.t_end, stride=cfg.stride)
    if cfg.kind == "gini-ascent":
        dens = EvolutionSpec("density", "gradient_flow", structure=S, direction=cfg.direction,
                             functional=make_functional({"kind": "gini_area"}, "density"), **common)
        # CD ascent of the Gini area is d_xx(d rho^2): diffusion field d(x) rho
        lor = EvolutionSpec("lorenz", "lorenz_pde", D=lambda x, r: S.diffusion(x, r) * r, **common)
        return dens, lor, f"{S.tag}-gini"
    if cfg.functional is None:
        Sigma, D = make_fields(cfg.pde)
        dens = EvolutionSpec("density", "mvfpe", Sigma=Sigma, D=D, **common)
        lor = EvolutionSpec("lorenz", "lorenz_pde", Sigma=Sigma, D=D, **common)
        return dens, lor, "pde"
    kind = cfg.functional["kind"]
    dens = EvolutionSpec("density", "gradient_flow", structure=S, direction=cfg.direction,
                         functional=make_functional(cfg.functional, "density"), **common)
    lor = EvolutionSpec("lorenz", "gradient_flow", structure=S, direction=cfg.direction,
                        functional=make_functional(cfg.functional, "lorenz"), **common)
    return dens, lor, f"{S.tag}-{kind}"


def _flows(cfg: ExperimentConfig, n: int, dt: float, stride: int):
    rho = _sampled(cfg, n)
    dens, lor, tag = _flow_pair(cfg, dt)
    if stride != cfg.stride:
        dens, lor = replace(dens, stride=stride), replace(lor, stride=stride)
    td = run(dens, rho)
    tl = run(lor, lorenz_map(rho, Grid1D.cdf(n)))
    return td, tl, tag


def _refined(cfg: ExperimentConfig, coarse: dict):
    """Equivalence report at doubled resolution in space and time."""
    td, tl, _ = _flows(cfg, 2 * cfg.x_grid().n, cfg.dt / 2, 2 * cfg.stride)
    fine = equivalence_report(td, tl, cfg.tol("sup"))
    return fine, refinement_ratio(coarse, fine)


def run_flow_equivalence(cfg: ExperimentConfig, sink: Sink | None):
    td, tl, tag = _flows(cfg, cfg.x_grid().n, cfg.dt, cfg.stride)
    rep = equivalence_report(td, tl, cfg.tol("sup"))
    checks = [check("max_sup_error", rep["max_sup"], cfg.tol("sup"))]
    metrics = {"tag": tag, "max_sup": rep["max_sup"], "rows": rep["rows"]}
    if cfg.refine:
        fine, ratio = _refined(cfg, rep)
        metrics["refined_max_sup"] = fine["max_sup"]
        metrics["ratio"] = ratio
        checks.append(check("refinement_ratio_common", ratio["common"], cfg.tol("ratio"), "ge"))
    if cfg.kind == "gini-ascent":
        checks += _gini_checks(cfg, td, metrics)
    if sink is not None:
        sink.trajectory(td, tag)
        sink.trajectory(tl, tag)
        sink.json({"equivalence": rep, "density": td.diagnostics, "lorenz": tl.diagnostics},
                  f"diagnostics-{tag}")
    return checks, metrics


def _gini_checks(cfg: ExperimentConfig, td, metrics: dict) -> list[dict]:
    gini = td.series("functional")
    steps = np.diff(gini) if cfg.direction == "ascent" else -np.diff(gini)
    worst = float(max(0.0, -steps.min())) if len(steps) else 0.0
    mom = td.series("first_moment")
    rate = float(np.max(np.abs(mom - mom[0])) / cfg.t_end)
    metrics["gini"] = gini.tolist()
    metrics["monotone_violation"] = worst
    metrics["moment_drift_rate"] = rate
    return [check("gini_monotone_violation", worst, cfg.tol("monotone")),
            check("moment_drift_per_time", rate, cfg.tol("moment_rate"))]


# -- isometry --------------------------------------------------------------------------

def run_isometry(cfg: ExperimentConfig, sink: Sink | None):
    S = make_structure(cfg.structure)
    rho0, rho1 = cfg.density(), cfg.target_density()
    rep = isometry_report(S, rho0, rho1, K=cfg.K, iters=cfg.iters, tol=cfg.tol("transfer"),
                          reverse=cfg.reverse)
    checks = [check(f"transfer_{k}", v, cfg.tol("transfer")) for k, v in sorted(rep["transfer_errors"].items())]
    if sink is not None:
        path = mixture_path(rho0, rho1, cfg.K)
        sink.trajectory(path, "prescribed")
        sink.trajectory(to_lorenz(path), "prescribed")
        sink.json(rep, "isometry")
    return checks, {"transfer_errors": rep["transfer_errors"], "side_actions": rep["side_actions"]}


# -- functional-audit ------------------------------------------------------------------

def _density_tangent(rho: Density, rng, moment: bool) -> TangentVector:
    g, x = rho.grid, rho.grid.nodes
    span = g.hi - g.lo
    p = sum(rng.normal() * np.cos(k * np.pi * (x - g.lo) / span + rng.uniform(0, 2 * np.pi)) for k in range(1, 5))
    h = rho.values * p
    basis = [rho.values, rho.values * x] if moment else [rho.values]
    tests = [np.ones_like(x), x] if moment else [np.ones_like(x)]
    A = np.array([[g.integrate(b * t) for b in basis] for t in tests])
    coef = np.linalg.solve(A, [g.integrate(h * t) for t in tests])
    return TangentVector("density", g, h - sum(c * b for c, b in zip(coef, basis)), moment_constrained=moment)


def _lorenz_tangent(fg: Grid1D, rng, fixed_top: bool) -> TangentVector:
    f = fg.nodes
    e = 0.01 * sum(rng.normal() * np.sin(k * np.pi * f) for k in range(1, 5))
    r = 0.0 if fixed_top else 0.01 * rng.normal()
    return TangentVector("lorenz", fg, e + r * f**2 * (3 - 2 * f), right=r,
                         subspace="T0" if fixed_top else "T")


def _directional(F, state, v, eps=1e-5) -> float:
    if v.side == "density":
        up = state.with_values(state.values + eps * v.values)
        dn = state.with_values(state.values - eps * v.values)
    else:
        up = state.with_values(state.values + eps * v.values, state.total + eps * v.right)
        dn = state.with_values(state.values - eps * v.values, state.total - eps * v.right)
    return (evaluate(F, up) - evaluate(F, dn)) / (2 * eps)


def defining_property_errors(rho: Density, rng, count: int = 20) -> dict:
    """Metric pairing of grad F with random tangents against directional derivatives."""
    L = lorenz_map(rho, Grid1D.cdf(rho.grid.n)).stencil()
    makers = {"potential": lambda s: quadratic_potential(side=s),
              "interaction": lambda s: quadratic_interaction(side=s),
              "boltzmann_entropy": boltzmann_entropy}
    out = {}
    for tag, coeff in AUDIT_STRUCTURES:
        S = GradientStructure.preset(tag, coeff)
        constrained = not S.is_transport
        for name, mk in makers.items():
            for side, state in (("density", rho), ("lorenz", L)):
                F = mk(side)
                g = onsager_apply(S, side, state, frechet(F, state))
                errs = []
                for _ in range(count):
                    v = _density_tangent(rho, rng, constrained) if side == "density" \
                        else _lorenz_tangent(L.grid, rng, constrained)
                    a, b = metric_pairing(S, state, g, v), _directional(F, state, v)
                    errs.append(abs(a - b) / max(abs(b), 1e-12))
                out[f"{tag}/{name}/{side}"] = float(max(errs))
    return out


def cov_errors(rho: Density) -> dict:
    """x-form vs f-form of cov_frechet and the twin recovery, on the bulk."""
    fg = Grid1D.cdf(rho.grid.n)
    L = lorenz_map(rho, fg)
    q = quantiles(rho, list(BULK))
    x = rho.grid.nodes
    m = (x >= q[0]) & (x <= q[1])
    out = {}
    for F in (quadratic_potential(side="lorenz"), quadratic_interaction(side="lorenz")):
        d = frechet(F, L)
        a, b, c = (gauge_project(p.values, x, "modulo_constant", mask=m)
                   for p in (cov_frechet(d, rho, "x"), cov_frechet(d, rho, "f"), frechet(F.twin(), rho)))
        scale = np.abs(c[m]).max()
        out[f"{F.kind}/forms"] = float(np.abs(a - b)[m].max() / scale)
        out[f"{F.kind}/twin"] = float(np.abs(a - c)[m].max() / scale)
    return out


def twin_eval_errors(rho: Density) -> dict:
    L = lorenz_map(rho, Grid1D.cdf(rho.grid.n)).stencil()
    out = {}
    for F in (quadratic_potential(side="lorenz"), quadratic_interaction(side="lorenz"),
              boltzmann_entropy("lorenz")):
        a, b = evaluate(F, L), evaluate(F.twin(), rho)
        out[F.kind] = float(abs(a - b) / max(abs(a), abs(b), 1.0))
    return out


def run_functional_audit(cfg: ExperimentConfig, sink: Sink | None):
    rho = cfg.density()
    rng = np.random.default_rng(cfg.seed)
    dp = defining_property_errors(rho, rng)
    cv = cov_errors(rho)
    tw = twin_eval_errors(rho)
    checks = [check("defining_property_max", max(dp.values()), cfg.tol("directional")),
              check("cov_forms_max", max(cv["potential/forms"], cv["interaction/forms"]), cfg.tol("cov")),
              check("cov_potential_twin", cv["potential/twin"], cfg.tol("cov_twin")),
              check("twin_eval_max", max(tw.values()), cfg.tol("twin"))]
    if sink is not None:
        sink.trajectory(rho, "state")
        sink.trajectory(lorenz_map(rho, Grid1D.cdf(rho.grid.n)), "state")
    return checks, {"defining_property": dp, "cov_frechet": cv, "twin_eval": tw}


RUNNERS = {
    "transform-roundtrip": run_transform_roundtrip,
    "flow-equivalence": run_flow_equivalence,
    "gini-ascent": run_flow_equivalence,
    "isometry": run_isometry,
    "functional-audit": run_functional_audit,
}


def run_experiment(cfg: ExperimentConfig, persist: bool = True) -> dict:
    """Run one experiment and return its summary; with ``persist`` write artifacts.

    Module errors are re-raised as :class:`ExperimentError` naming the experiment.
    """
    sink = Sink(cfg.run_dir()) if persist else None
    try:
        checks, metrics = RUNNERS[cfg.kind](cfg, sink)
    except (LorenzFlowError, ValueError) as err:
        raise ExperimentError(cfg.name, err) from err
    ratio = tail_ratio(cfg.density())
    metrics["tail"] = {"ratio": ratio, "decays": ratio <= TAU_TAIL}
    summary = {"name": cfg.name, "kind": cfg.kind, "seed": cfg.seed, "grid": dict(cfg.grid),
               "tolerances": cfg.tolerances, "assertions": checks, "metrics": metrics,
               "pass": all(c["pass"] for c in checks)}
    return summary


class ExperimentError(LorenzFlowError):
    def __init__(self, name: str, cause: Exception):
        if isinstance(cause, TimedError):
            text = f" at t = {cause.time:.6g}: {type(cause.cause).__name__}: {cause.cause}"
        else:
            text = f": {cause}"
        super().__init__(f"experiment {name!r} failed{text}")
        self.name = name
        self.cause = cause
