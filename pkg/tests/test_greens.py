import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from tpshock.acceptance import burgers_decompositions, burgers_l_coeffs
from tpshock.errors import EmptyRegion, QuadratureBudgetExceeded
from tpshock.greens import (LCoefficients, TemplateRegion, check_template_bound,
                            column_mass, convolution_check, decompose_green, errfn,
                            fit_l_coefficients, g0_kernel, greens_column, greens_columns,
                            parametrix_recursion, pi_envelope_check, pi_functions,
                            template_bundle, TemplateBundle)
from tpshock.pde_core import GridSpec
from tpshock.profiles import constant_coefficients


def errfn_quad(z):
    # independent oracle: (1/sqrt(pi)) int_{-inf}^z exp(-xi^2) dxi
    return quad(lambda u: np.exp(-u * u), -np.inf, z)[0] / np.sqrt(np.pi)


def test_g0_value():
    assert g0_kernel(0.3, 1.0, 0.3, 0.0) == pytest.approx(np.exp(-1) / np.sqrt(4 * np.pi))
    assert g0_kernel(0.0, 1.0, 0.0, 0.0) == pytest.approx(0.10378, abs=5e-6)
    with pytest.raises(ValueError):
        g0_kernel(0.0, 1.0, 0.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(-5, 5))
def test_g0_mass_and_symmetry(tau, y):
    w = 40.0 * np.sqrt(tau)
    m = quad(lambda x: g0_kernel(x, tau, y, 0.0), y - w, y + w, points=[y], limit=200)[0]
    assert m == pytest.approx(np.exp(-tau), rel=1e-7)
    x = y + 1.7
    assert g0_kernel(x, tau, y, 0.0) == g0_kernel(y, tau, x, 0.0)


def test_errfn_matches_quadrature():
    for z in (-3.0, -0.5, 0.0, 1.2, 4.0):
        assert errfn(z) == pytest.approx(errfn_quad(z), abs=1e-12)


def test_damped_heat_column():
    grid = GridSpec(L=40.0, dx=0.05)
    heat = constant_coefficients(grid, [[0.0]], damping=1.0)
    ts = np.array([0.5, 1.0, 5.0])
    col = greens_column(heat, 1.5, 0.0, ts, grid)
    for m, t in enumerate(ts):
        exact = g0_kernel(grid.x, t, 1.5, 0.0)
        assert np.max(np.abs(col.values[m, :, 0, 0] - exact)) / exact.max() < 1e-3


def test_mollifier_refinement(shock, shock_coeffs):
    grid = shock[1]
    ts = np.array([1.0, 3.0])
    a = greens_column(shock_coeffs, -2.0, 0.0, ts, grid, width=4 * grid.dx)
    b = greens_column(shock_coeffs, -2.0, 0.0, ts, grid, width=2 * grid.dx)
    scale = np.max(np.abs(a.values), axis=(1, 2, 3))
    diff = np.max(np.abs(a.values - b.values), axis=(1, 2, 3))
    assert np.all(diff / scale < 0.01)


def test_mirror_symmetry(shock, shock_coeffs):
    # A(x) = -tanh(x/2) is odd, so G(x, t; y) = G(-x, t; -y)
    grid = shock[1]
    ts = np.array([1.0, 4.0])
    a, b = greens_columns(shock_coeffs, [-3.0, 3.0], 0.0, ts, grid)
    assert np.max(np.abs(a.values - b.values[:, ::-1])) < 1e-6 * np.max(np.abs(a.values))


def test_column_mass_conserved(shock, shock_coeffs):
    grid = shock[1]
    ts = np.linspace(0.5, 10.0, 20)
    col = greens_column(shock_coeffs, -2.0, 0.0, ts, grid)
    m = column_mass(col, grid.dx)[:, 0, 0]
    assert np.max(np.abs(m - 1.0)) < 1e-6


def test_long_time_column_is_translation_mode(shock):
    decomps = burgers_decompositions()
    prof = shock[2]
    d = next(d for d in decomps if d.column.y == -5.0)
    m = int(np.argmin(np.abs(d.column.times - 30.0)))
    g = d.raw[m, :, 0, 0]
    ux = prof.ux[0, :, 0]
    corr = abs(g @ ux) / (np.linalg.norm(g) * np.linalg.norm(ux))
    assert corr > 0.99


def test_decomposition_scalar(shock):
    decomps = burgers_decompositions()
    for d in decomps:
        assert d.l_rows.shape == (1, 2, 1)
        assert d.l_rows[0, 0, 0] == pytest.approx(-0.5, abs=1e-3)
        assert not np.any(d.E2)
        recon = d.reconstruct()
        assert np.max(np.abs(recon - d.raw)) <= 4 * np.finfo(float).eps * np.max(np.abs(d.raw))
        mass = np.trapezoid(d.G_tilde[:, :, 0, 0], dx=shock[1].dx, axis=1)
        assert abs(mass[-1]) < 0.05 * np.max(np.abs(mass[:5]))
    lc = fit_l_coefficients(decomps, 1)
    assert lc.y_minus.tolist() == [-10.0, -5.0, -2.0, 0.0]
    assert lc.y_plus.tolist() == [2.0, 5.0, 10.0]


def test_decomposition_needs_long_column(shock, shock_coeffs):
    col = greens_column(shock_coeffs, 0.0, 0.0, [1.0, 2.0], shock[1])
    with pytest.raises(ValueError):
        decompose_green(col, shock[2], shock[3])


def test_parametrix_constant_coefficient_oracle():
    grid = GridSpec(L=30.0, dx=0.05)
    a, y = 0.6, -1.0
    coeffs = constant_coefficients(grid, [[a]])
    taus = np.array([0.5, 1.0, 2.0])
    tab = parametrix_recursion(coeffs, 1, (y, 0.0), grid, taus)
    x = grid.x
    for m, tau in enumerate(taus):
        g0 = g0_kernel(x, tau, y, 0.0)
        g1 = tau * (g0 + a * (x - y) / (2 * tau) * g0)
        np.testing.assert_allclose(tab.G[0, m, :, 0, 0], g0, atol=1e-12)
        assert np.max(np.abs(tab.G[1, m, :, 0, 0] - g1)) / np.max(np.abs(g1)) < 1e-2


def test_parametrix_starts_at_zero(shock, shock_coeffs):
    grid = shock[1]
    from tpshock.greens import mollifier_age
    eps = mollifier_age(grid)
    tab = parametrix_recursion(shock_coeffs, 2, (-1.0, 0.0), grid, [eps, 0.05, 0.2])
    sup = np.max(np.abs(tab.G), axis=(2, 3, 4))
    # G_1 / G_0 ~ tau^{1/2} and G_2 / G_0 ~ tau as tau -> 0
    r1, r2 = sup[1] / sup[0], sup[2] / sup[0]
    assert r1[0] < r1[1] < r1[2] and r2[0] < r2[1] < r2[2]
    assert r1[0] < 0.1 and r2[0] < r1[0]


def test_parametrix_limits(shock, shock_coeffs):
    grid = shock[1]
    with pytest.raises(ValueError):
        parametrix_recursion(shock_coeffs, 4, (0.0, 0.0), grid, [1.0])
    with pytest.raises(QuadratureBudgetExceeded):
        parametrix_recursion(shock_coeffs, 2, (0.0, 0.0), grid, [1.0], budget=10)


def test_pi_at_source_time(shock):
    cd = shock[3]
    pv = pi_functions(cd, burgers_l_coeffs(), np.linspace(-9, 9, 19), 1.0, 1.0)
    assert not np.any(pv.pi) and not np.any(pv.pi_y)


def test_pi_reference_value(shock):
    cd = shock[3]
    one = LCoefficients.constant([[[1.0], [0.0]]], [[[1.0], [0.0]]])
    got = pi_functions(cd, one, -5.0, 0.0, 25.0).pi[0, 0]
    ref = errfn_quad(20 / np.sqrt(104)) - errfn_quad(-30 / np.sqrt(104))
    assert got == pytest.approx(ref, abs=1e-10)
    assert got == pytest.approx(0.99721, abs=1e-5)


def test_pi_large_time_limit(shock):
    cd = shock[3]
    pv = pi_functions(cd, burgers_l_coeffs(), np.array([-4.0, 3.0]), 0.0, 1e4)
    np.testing.assert_allclose(pv.pi, pv.pi_inf, atol=1e-12)
    np.testing.assert_allclose(pv.pi_inf[:, 0, 0], -0.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(-30, 30), st.floats(0.2, 60.0))
def test_pi_derivatives(y, tau):
    from tpshock.acceptance import burgers_shock
    cd = burgers_shock()[3]
    # spatially varying l to exercise the product rule
    ys = np.linspace(-20, 0, 6)
    rows = np.stack([[[[np.sin(v)], [np.cos(v)]]] for v in ys])
    lc = LCoefficients(ys, rows, -ys[::-1], rows[::-1])
    h = 1e-5
    pv = pi_functions(cd, lc, y, 0.0, tau)
    fdt = (pi_functions(cd, lc, y, 0.0, tau + h).pi - pi_functions(cd, lc, y, 0.0, tau - h).pi) / (2 * h)
    assert np.max(np.abs(fdt - pv.pi_t)) < 1e-6
    if abs(abs(y) - 20) > 2 * h and abs(y) > 2 * h:
        # l is a spline inside [-20, 20] and constant outside
        fdy = (pi_functions(cd, lc, y + h, 0.0, tau).pi - pi_functions(cd, lc, y - h, 0.0, tau).pi) / (2 * h)
        assert np.max(np.abs(fdy - pv.pi_y)) < 1e-6


def test_pi_envelope_finite(shock):
    C, a, M = pi_envelope_check(shock[3], burgers_l_coeffs(), np.linspace(-30, 30, 61),
                                np.linspace(0.1, 40, 50))
    assert np.isfinite(C) and C > 0


def test_scalar_templates_have_empty_sums(shock):
    b = template_bundle(shock[3], 25.0, 0.5)
    X, T = np.meshgrid(np.linspace(-20, 20, 41), np.linspace(0, 30, 7))
    assert not np.any(b.theta_gauss(X, T)) and not np.any(b.theta_inner(X, T))
    assert np.all(b.theta_outer(X, T) > 0)


def test_system_templates(system_shock):
    cd = system_shock[3]
    b = template_bundle(cd, 25.0, 0.5)
    assert b.out_minus.size + b.out_plus.size == 1
    lo, hi = cd[0].speeds[0], cd[1].speeds[-1]
    assert b.chi(0.5 * (lo + hi) * 2.0, 2.0) == 1.0
    assert b.chi(hi * 2.0 + 0.1, 2.0) == 0.0


def test_chi_contains_origin_for_spread_fan():
    # census with a_1^- < 0 < a_N^+ (not realizable by a 2x2 Lax shock, so built directly)
    sm, sp = np.array([-1.0, 2.0]), np.array([-2.0, 1.0])
    b = TemplateBundle(sm, sp, sm[:1], sp[1:], sm[1:], sp[:1], 25.0, 0.5)
    assert b.chi(0.0, 1.0) == 1.0
    assert b.chi(-1.5, 1.0) == 0.0 and b.chi(1.5, 1.0) == 0.0
    assert b.theta_gauss(-1.0, 1.0) > 0 and b.theta_inner(0.0, 1.0) > 0


def test_template_region_errors(shock):
    decomps = burgers_decompositions()
    b = template_bundle(shock[3], 25.0, 0.5)
    with pytest.raises(EmptyRegion):
        check_template_bound(decomps, b, TemplateRegion(200.0, 300.0))
    with pytest.raises(ValueError):
        check_template_bound(decomps, b, TemplateRegion(0.1, 5.0))
    with pytest.raises(ValueError):
        template_bundle(shock[3], -1.0, 0.5)


@pytest.mark.slow
def test_template_constant_grid_refinement():
    from tpshock.acceptance import burgers_shock
    from tpshock.profiles import stationary_coefficients
    region = TemplateRegion(1.0, 20.0)
    ts = np.arange(1.0, 20.25, 0.5)
    C = []
    for dx in (0.05, 0.025):
        _, grid, prof, cd = burgers_shock(dx=dx)
        cols = greens_columns(stationary_coefficients(prof), [-5.0, 0.0, 5.0], 0.0, ts, grid)
        ds = [decompose_green(c, prof, cd) for c in cols]
        C.append(check_template_bound(ds, template_bundle(cd, 25.0, 0.02), region).C_min)
    assert abs(C[1] - C[0]) < 0.15 * C[0]


def test_convolution_checks(shock):
    cd = shock[3]
    b = template_bundle(cd, 25.0, 0.5)
    lc = burgers_l_coeffs()
    r = convolution_check(b, cd, lc, "linear_pi", [1.0, 5.0, 25.0, 100.0])
    # increases towards int |pi_inf| (1+|y|)^{-3/2} dy = 0.5 * 4 = 2
    assert np.all(np.diff(r.lhs) > 0) and np.all(r.lhs <= 2.0)
    assert r.lhs[-1] > 1.7
    r = convolution_check(b, cd, lc, "linear_pi_t", [5.0, 10.0, 25.0, 50.0, 100.0])
    assert r.slope <= -1.2
    zero = LCoefficients.constant(np.zeros((1, 2, 1)), np.zeros((1, 2, 1)))
    for which in ("linear_pi", "linear_pi_diff", "nonlinear2_pi_t"):
        assert convolution_check(b, cd, zero, which, [5.0, 10.0], ny=401, ns=50).ratio_sup == 0.0
    with pytest.raises(QuadratureBudgetExceeded):
        convolution_check(b, cd, lc, "nonlinear_pi_yt", [5.0], budget=100)
    with pytest.raises(ValueError):
        convolution_check(b, cd, lc, "nope", [5.0])
