import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from conftest import bump, gaussian, uniform
from lorenzflow.errors import DegenerateCurvature, NonInvertibleCdf
from lorenzflow.experiments import derivative_errors, interior_tangent, lemma_errors
from lorenzflow.transforms import (
    TAU_TAIL,
    Density,
    Grid1D,
    LorenzCurve,
    TangentVector,
    cdf,
    density_from_lorenz,
    dt_inverse_cdf,
    dt_lorenz,
    inverse_cdf,
    lorenz_map,
    quantiles,
    tail_ratio,
)


# -- grids and densities -----------------------------------------------------------

def test_cdf_grid_is_cell_centred():
    g = Grid1D.cdf(8)
    np.testing.assert_allclose(g.nodes, (np.arange(8) + 0.5) / 8)
    assert g.integrate(np.ones(8)) == pytest.approx(1.0)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid1D(1.0, 0.0, 16)
    with pytest.raises(ValueError):
        Grid1D(0.0, 1.0, 4)


def test_density_normalises_and_counts_clamps():
    g = Grid1D(0, 1, 16)
    v = np.ones(16)
    v[3] = -1.0
    rho = Density(g, v)
    assert rho.clamped == 1
    assert rho.mass == pytest.approx(1.0)
    assert np.all(rho.values > 0)


def test_density_rejects_bad_input():
    with pytest.raises(ValueError):
        Density(Grid1D.cdf(16), np.ones(16))
    with pytest.raises(ValueError):
        Density(Grid1D(0, 1, 16), np.ones(15))
    with pytest.raises(ValueError):
        Density(Grid1D(0, 1, 16), np.full(16, np.nan))


# -- cdf and quantiles ---------------------------------------------------------------

def test_cdf_of_uniform_is_linear():
    rho = uniform(0, 2)
    np.testing.assert_allclose(cdf(rho).values, rho.grid.nodes / 2, atol=1e-14)


def test_cdf_endpoints(rho_gauss):
    c = cdf(rho_gauss).values
    assert c[0] == 0.0 and c[-1] == pytest.approx(1.0)


def test_cdf_of_gaussian_at_zero(rho_gauss):
    c = cdf(rho_gauss)
    assert np.interp(0.0, rho_gauss.grid.nodes, c.values) == pytest.approx(0.5, abs=1e-6)


def test_inverse_cdf_of_uniform():
    rho = uniform(0, 2)
    fg = Grid1D.cdf(64)
    np.testing.assert_allclose(inverse_cdf(rho, fg).values, 2 * fg.nodes, atol=1e-13)


def test_gaussian_median(rho_gauss):
    assert quantiles(rho_gauss, [0.5])[0] == pytest.approx(0.0, abs=1e-4)


def test_quantiles_invert_cdf(rho_gauss):
    x = rho_gauss.grid.nodes
    c = cdf(rho_gauss).values
    inner = slice(20, -20)
    np.testing.assert_allclose(quantiles(rho_gauss, c[inner]), x[inner], atol=2 * rho_gauss.grid.spacing)


def test_flat_cdf_is_not_invertible():
    g = Grid1D(0, 3, 31)
    v = np.where((g.nodes > 1) & (g.nodes < 2), 0.0, 1.0)
    rho = Density(g, v)
    with pytest.raises(NonInvertibleCdf):
        quantiles(rho, [0.5])


# -- Lorenz map --------------------------------------------------------------------

def test_lorenz_of_uniform_0_2_is_f_squared():
    fg = Grid1D.cdf(64)
    L = lorenz_map(uniform(0, 2), fg)
    np.testing.assert_allclose(L.values, fg.nodes**2, atol=1e-13)
    assert L.total == pytest.approx(1.0)


def test_lorenz_of_uniform_0_1_is_half_f_squared():
    fg = Grid1D.cdf(64)
    L = lorenz_map(uniform(0, 1), fg)
    np.testing.assert_allclose(L.values, fg.nodes**2 / 2, atol=1e-13)


def test_lorenz_of_shifted_gaussian():
    rho = gaussian(lo=-5, hi=7, mu=1.0)
    L = lorenz_map(rho, Grid1D.cdf(256))
    assert L.total == pytest.approx(1.0, abs=1e-5)
    assert L.is_convex()
    assert np.all(np.diff(L.lf) > 0)


def test_lorenz_carries_exact_derivatives(rho_gauss):
    fg = Grid1D.cdf(256)
    L = lorenz_map(rho_gauss, fg)
    inv = inverse_cdf(rho_gauss, fg)
    np.testing.assert_array_equal(L.lf, inv.values)
    np.testing.assert_allclose(L.lff * inv.density, 1.0, rtol=1e-12)


def test_stencil_is_exact_on_quadratics():
    fg = Grid1D.cdf(32)
    L = LorenzCurve(fg, 3 * fg.nodes**2 - fg.nodes, total=2.0)
    np.testing.assert_allclose(L.lf, 6 * fg.nodes - 1, atol=1e-12)
    np.testing.assert_allclose(L.lff, 6.0, atol=1e-9)


@pytest.mark.parametrize("rho", [gaussian(), uniform(0, 2)], ids=["gaussian", "uniform"])
def test_stencil_derivatives_match_quantiles(rho):
    err = derivative_errors(rho, gaussian(16 * 255 + 1) if rho.grid.lo == -6 else uniform(0, 2, 4081))
    assert err["max_lf"] <= 1e-3
    assert err["max_lff"] <= 1e-3


def test_stencil_against_analytic_gaussian():
    fg = Grid1D.cdf(256)
    S = lorenz_map(gaussian(), fg).stencil()
    m = (fg.nodes >= 0.05) & (fg.nodes <= 0.95)
    G = norm.ppf(fg.nodes)
    assert np.max(np.abs(S.lf - G)[m]) / np.max(np.abs(G[m])) < 1e-3
    assert np.max(np.abs(S.lff * norm.pdf(G) - 1)[m]) < 1e-3


def test_stencil_converges_at_second_order():
    errs = []
    for n in (256, 512):
        fg = Grid1D.cdf(n)
        S = lorenz_map(gaussian(n), fg).stencil()
        m = (fg.nodes >= 0.05) & (fg.nodes <= 0.95)
        e = (S.lff * norm.pdf(norm.ppf(fg.nodes)) - 1)[m]
        errs.append(np.sqrt(np.mean(e**2)))
    assert np.log2(errs[0] / errs[1]) >= 1.95


def _gauss_legendre_f(panels=512, order=8):
    t, w = leggauss(order)
    a = np.arange(panels) / panels
    return (a[:, None] + (t[None, :] + 1) / (2 * panels)).ravel(), np.tile(w / (2 * panels), panels)


def _model_integral(rho, fn, refine=64):
    # int fn(x) rho(x) dx for the piecewise-linear model of rho
    g = rho.grid
    fine = Grid1D(g.lo, g.hi, refine * (g.n - 1) + 1)
    return fine.integrate(fn(fine.nodes) * np.interp(fine.nodes, g.nodes, rho.values))


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_integral_transform_rule(rho_gauss, degree):
    # int rho Q dx = int Q(G) df, the f-integral by composite Gauss-Legendre on quantiles
    f, wf = _gauss_legendre_f()
    Q = lambda x: x**degree + 0.5
    lhs = _model_integral(rho_gauss, Q)
    rhs = wf @ Q(quantiles(rho_gauss, f))
    assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(lhs))


def test_model_second_moment_bias(rho_gauss):
    # the piecewise-linear model adds h^2/6 to the trapezoid second moment
    h = rho_gauss.grid.spacing
    trap = rho_gauss.grid.integrate(rho_gauss.grid.nodes**2 * rho_gauss.values)
    assert _model_integral(rho_gauss, lambda x: x**2) - trap == pytest.approx(h**2 / 6, rel=0.05)


# -- density from Lorenz -----------------------------------------------------------

def test_density_from_f_squared():
    fg = Grid1D.cdf(128)
    L = LorenzCurve(fg, fg.nodes**2, total=1.0)
    rho = density_from_lorenz(L, Grid1D(0, 2, 65))
    np.testing.assert_allclose(rho.values, 0.5, rtol=1e-9)


def test_density_from_half_f_squared():
    fg = Grid1D.cdf(128)
    L = LorenzCurve(fg, fg.nodes**2 / 2, total=0.5)
    np.testing.assert_allclose(density_from_lorenz(L, Grid1D(0, 1, 33)).values, 1.0, rtol=1e-9)


def test_round_trip(rho_gauss):
    L = lorenz_map(rho_gauss, Grid1D.cdf(256))
    back = density_from_lorenz(L, rho_gauss.grid)
    q = quantiles(rho_gauss, [0.05, 0.95])
    m = (rho_gauss.grid.nodes >= q[0]) & (rho_gauss.grid.nodes <= q[1])
    assert np.max(np.abs(back.values - rho_gauss.values)[m]) / rho_gauss.values.max() <= 1e-3


def test_round_trips_converge_at_second_order():
    # smooth density bounded away from zero
    e_pl, e_lp = [], []
    for n in (128, 256, 512):
        rho = bump(n)
        fg = Grid1D.cdf(n)
        L = lorenz_map(rho, fg)
        back = density_from_lorenz(L, rho.grid)
        e_pl.append(np.max(np.abs(back.values - rho.values)))
        e_lp.append(np.max(np.abs(lorenz_map(back, fg).values - L.values)))
    for e in (e_pl, e_lp):
        assert np.log2(e[0] / e[1]) > 1.9 and np.log2(e[1] / e[2]) > 1.9


def test_degenerate_curvature():
    fg = Grid1D.cdf(32)
    L = LorenzCurve(fg, np.zeros(32), total=0.0)
    with pytest.raises(DegenerateCurvature):
        density_from_lorenz(L, Grid1D(0, 1, 16))


# -- first variations ---------------------------------------------------------------

def test_zero_perturbation(rho_gauss):
    fg = Grid1D.cdf(256)
    h = TangentVector("density", rho_gauss.grid, np.zeros(256))
    assert np.all(dt_inverse_cdf(rho_gauss, h, fg) == 0)
    eta = dt_lorenz(rho_gauss, h, fg)
    assert np.all(eta.values == 0) and eta.right == 0


def test_translation_mode_shifts_quantiles():
    rho = Density.from_function(Grid1D(-8, 8, 512), lambda x: np.exp(-x**2 / 2))
    x = rho.grid.nodes
    h = TangentVector("density", rho.grid, x * rho.values)  # -rho'
    fg = Grid1D.cdf(512)
    dG = dt_inverse_cdf(rho, h, fg)
    m = (fg.nodes >= 0.01) & (fg.nodes <= 0.99)
    np.testing.assert_allclose(dG[m], 1.0, atol=1e-3)


def test_first_variations_match_central_differences(rho_gauss):
    errs = lemma_errors(rho_gauss, np.random.default_rng(11), count=10)
    assert max(errs) <= 1e-3


def test_dt_lorenz_lies_in_tangent_space(rho_gauss, rng):
    fg = Grid1D.cdf(256)
    for _ in range(5):
        eta = dt_lorenz(rho_gauss, interior_tangent(rho_gauss, rng), fg)
        res = eta.constraint_residuals()
        tol = 10 * fg.spacing * max(1.0, np.abs(eta.values).max())
        assert abs(res["eta0"]) <= tol
        assert abs(res["deta0"]) <= tol and abs(res["deta1"]) <= tol


@settings(max_examples=25, deadline=None)
@given(mu=st.floats(-1.0, 1.0), sigma=st.floats(0.6, 1.5))
def test_lorenz_invariants(mu, sigma):
    rho = gaussian(128, lo=-8, hi=8, mu=mu, sigma=sigma)
    L = lorenz_map(rho, Grid1D.cdf(128))
    assert L.is_convex()
    assert L.total == pytest.approx(rho.mean, abs=1e-4)
    # L(f0) = int_0^f0 G, so |L(f0)| <= f0 max|x| and L(0) = 0 is implied
    f0 = L.grid.nodes[0]
    assert abs(L.values[0]) <= f0 * max(abs(rho.grid.lo), abs(rho.grid.hi))
    np.testing.assert_allclose(L.lff * inverse_cdf(rho, L.grid).density, 1.0, rtol=1e-10)


def test_tail_ratio(rho_gauss, rho_bump):
    # outer 5% of [-6, 6] starts at |x| = 5.4, the next node lies within one spacing
    h = rho_gauss.grid.spacing
    assert np.exp(-0.5 * (5.4 + h) ** 2) <= tail_ratio(rho_gauss) <= np.exp(-0.5 * 5.4**2) < TAU_TAIL
    assert tail_ratio(rho_bump) > 0.1
