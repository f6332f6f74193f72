import numpy as np
import pytest

from conftest import bump, gaussian, uniform
from lorenzflow.errors import DegenerateCurvature, GridMismatch, SideMismatch
from lorenzflow.experiments import AUDIT_STRUCTURES, _density_tangent, _lorenz_tangent, defining_property_errors
from lorenzflow.functionals import boltzmann_entropy, frechet, gini_area, quadratic_potential
from lorenzflow.geometry import (
    TAGS,
    GradientStructure,
    grad_density,
    grad_lorenz,
    metric_norm2,
    metric_pairing,
    onsager_apply,
)
from lorenzflow.transforms import Grid1D, LorenzCurve, lorenz_map

W2, CD = GradientStructure.preset("W2"), GradientStructure.preset("CD", "tanh")


def _lorenz(rho):
    return lorenz_map(rho, Grid1D.cdf(rho.grid.n)).stencil()


# -- defining property ---------------------------------------------------------------

@pytest.mark.parametrize("rho", [gaussian(), bump()], ids=["gauss", "bump"])
def test_defining_property(rho):
    errs = defining_property_errors(rho, np.random.default_rng(1), count=5)
    assert len(errs) == 4 * 3 * 2
    assert max(errs.values()) <= 1e-3


# -- closed-form gradients ----------------------------------------------------------

def test_w2_entropy_gradient_is_minus_laplacian(rho_gauss):
    # log-mean fluxes make M d(log rho) the plain difference of rho
    g = grad_density(W2, boltzmann_entropy(), rho_gauss)
    r, h = rho_gauss.values, rho_gauss.grid.spacing
    lap = np.zeros_like(r)
    lap[1:-1] = (r[2:] - 2 * r[1:-1] + r[:-2]) / h**2
    np.testing.assert_allclose(g.values[1:-1], -lap[1:-1], atol=1e-10)


@pytest.mark.parametrize("tag,coeff", [("Crho", "one"), ("CD", "tanh")])
def test_contact_gini_gradient(rho_bump, tag, coeff):
    S = GradientStructure.preset(tag, coeff)
    L = _lorenz(rho_bump)
    g = grad_lorenz(S, gini_area(), L)
    np.testing.assert_allclose(g.values, -S.diffusion(L.lf, 1 / L.lff) / L.lff**2, rtol=1e-12)
    assert g.right == 0.0 and g.subspace == "T0"


def test_w2_potential_gradient_on_uniform():
    # uniform on [0, 2]: L = f^2 and the gradient of int x^2 is 2 L = 2 f^2
    for n, tol in ((256, 1e-5), (512, 2.5e-6)):
        L = _lorenz(uniform(0.0, 2.0, n + 1))
        f = L.grid.nodes
        g = grad_lorenz(W2, quadratic_potential(side="lorenz"), L)
        m = (f > 0.05) & (f < 0.95)
        assert np.abs(g.values - 2 * f**2)[m].max() < tol
        assert g.right == pytest.approx(2.0, abs=1e-12)
        assert g.diagnostics["compat_residual"] < 1e-12


def test_constant_covector_has_zero_gradient(rho_bump):
    for tag, coeff in AUDIT_STRUCTURES:
        g = onsager_apply(GradientStructure.preset(tag, coeff), "density", rho_bump, np.full(rho_bump.grid.n, 3.0))
        np.testing.assert_allclose(g.values, 0.0, atol=1e-12)


def test_affine_covector_is_null_for_contact(rho_bump):
    x = rho_bump.grid.nodes
    for S in (GradientStructure.preset("Crho"), CD):
        g = onsager_apply(S, "density", rho_bump, 2.0 - 0.7 * x)
        # roundoff is amplified by 1/h^4
        np.testing.assert_allclose(g.values, 0.0, atol=1e-7)


# -- conservation --------------------------------------------------------------------

@pytest.mark.parametrize("tag,coeff", AUDIT_STRUCTURES)
def test_density_gradient_conserves(rho_bump, tag, coeff):
    S = GradientStructure.preset(tag, coeff)
    g = grad_density(S, quadratic_potential(), rho_bump)
    grid = rho_bump.grid
    assert abs(grid.integrate(g.values)) < 1e-10
    if not S.is_transport:
        assert abs(grid.integrate(grid.nodes * g.values)) < 1e-8
        assert g.moment_constrained


# -- metric ---------------------------------------------------------------------------

@pytest.mark.parametrize("tag,coeff", AUDIT_STRUCTURES)
def test_metric_symmetric_positive(rho_bump, rng, tag, coeff):
    S = GradientStructure.preset(tag, coeff)
    L = _lorenz(rho_bump)
    moment = not S.is_transport
    a, b = _density_tangent(rho_bump, rng, moment), _density_tangent(rho_bump, rng, moment)
    assert metric_pairing(S, rho_bump, a, b) == pytest.approx(metric_pairing(S, rho_bump, b, a), rel=1e-12)
    assert metric_norm2(S, rho_bump, a) > 0
    u, v = _lorenz_tangent(L.grid, rng, moment), _lorenz_tangent(L.grid, rng, moment)
    assert metric_pairing(S, L, u, v) == pytest.approx(metric_pairing(S, L, v, u), rel=1e-12)
    assert metric_norm2(S, L, u) > 0


def test_gradient_norm_equals_pairing_with_itself(rho_bump):
    # <grad F, grad F> = dF(grad F)
    L = _lorenz(rho_bump)
    F = quadratic_potential(side="lorenz")
    g = grad_lorenz(W2, F, L)
    assert metric_norm2(W2, L, g) == pytest.approx(frechet(F, L).pair(g), rel=1e-10)


# -- structures and errors ----------------------------------------------------------

def test_presets():
    assert {GradientStructure.preset(t).tag for t in TAGS} == set(TAGS)
    assert GradientStructure.preset("cd", "tanh").tag == "CD"
    assert W2.is_transport and not CD.is_transport
    with pytest.raises(ValueError):
        GradientStructure("W3")


def test_nonpositive_mobility_rejected(rho_bump):
    S = GradientStructure("W2M", m=lambda r: r - 10.0)
    with pytest.raises(ValueError, match="mobility"):
        grad_density(S, quadratic_potential(), rho_bump)


def test_side_mismatches(rho_bump):
    L = _lorenz(rho_bump)
    with pytest.raises(SideMismatch):
        grad_density(W2, gini_area(), rho_bump)
    with pytest.raises(SideMismatch):
        grad_lorenz(W2, boltzmann_entropy(), L)
    with pytest.raises(SideMismatch):
        onsager_apply(W2, "lorenz", rho_bump, np.zeros(256))
    with pytest.raises(SideMismatch):
        onsager_apply(W2, "density", rho_bump, frechet(gini_area(), L))


def test_covector_shape_checked(rho_bump):
    with pytest.raises(GridMismatch):
        onsager_apply(W2, "density", rho_bump, np.zeros(10))


def test_flat_curve_rejected():
    fg = Grid1D.cdf(64)
    L = LorenzCurve(fg, fg.nodes * 0.5, 0.5)
    with pytest.raises(DegenerateCurvature):
        grad_lorenz(W2, quadratic_potential(side="lorenz"), L)
