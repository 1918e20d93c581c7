import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpshock.errors import RHViolation, TailNotResolved
from tpshock.flux_models import burgers
from tpshock.pde_core import GridSpec, evolve_nonlinear
from tpshock.profiles import (PeriodicCoefficientField, constant_coefficients,
                              manufactured_periodic_coefficients, profile_residual,
                              profile_tail_rate, solve_stationary_profile,
                              stationary_coefficients)


def test_burgers_is_tanh(shock):
    _, grid, prof, _ = shock
    exact = -np.tanh(grid.x / 2)
    assert np.max(np.abs(prof.values[0, :, 0] - exact)) < 1e-10
    assert np.max(np.abs(prof.ux[0, :, 0] + 0.5 / np.cosh(grid.x / 2) ** 2)) < 1e-10
    assert prof.values[0, grid.nx // 2, 0] == pytest.approx(0.0, abs=1e-14)
    assert profile_residual(prof) < 1e-8
    assert np.all(np.diff(prof.values[0, :, 0]) <= 0)
    assert np.all(prof.ux[0, :, 0] < 0)


def test_zero_jump_rejected():
    with pytest.raises(RHViolation):
        solve_stationary_profile(burgers(), [1.0], [1.0], GridSpec(L=10.0, dx=0.1))


def test_rankine_hugoniot_violation_rejected():
    with pytest.raises(RHViolation):
        solve_stationary_profile(burgers(), [1.0], [-0.5], GridSpec(L=10.0, dx=0.1))


def test_system_profile_endpoints(system_shock):
    _, _, prof, _ = system_shock
    assert np.max(np.abs(prof.values[0, 0] - prof.u_minus)) < 1e-6
    assert np.max(np.abs(prof.values[0, -1] - prof.u_plus)) < 1e-6
    assert profile_residual(prof) < 1e-8
    mid = 0.5 * (prof.u_minus[0] + prof.u_plus[0])
    assert prof.values[0, prof.grid.nx // 2, 0] == pytest.approx(mid, abs=1e-10)


def test_system_profile_refined_grid(system_shock):
    model, grid, prof, _ = system_shock
    fine = solve_stationary_profile(model, prof.u_minus, prof.u_plus, grid.with_(dx=0.025))
    np.testing.assert_allclose(fine.values[0, ::2], prof.values[0], atol=1e-8)


def test_tail_rate(shock):
    model, grid, prof, _ = shock
    eta = profile_tail_rate(prof)
    assert eta == pytest.approx(1.0, rel=0.05)
    fine = solve_stationary_profile(model, [1.0], [-1.0], grid.with_(dx=0.025))
    assert abs(profile_tail_rate(fine) - eta) < 0.01 * eta


def test_tail_rate_rejects_constant(shock):
    _, grid, prof, _ = shock
    from dataclasses import replace
    flat = replace(prof, deviation=np.zeros_like(prof.deviation))
    with pytest.raises(TailNotResolved):
        profile_tail_rate(flat)


def test_manufactured_eps_zero(shock):
    prof = shock[2]
    coeffs = manufactured_periodic_coefficients(prof, 0.0)
    assert coeffs.stationary
    for t in (0.0, 1.3, 4.0):
        np.testing.assert_array_equal(coeffs.matrix(t), prof.model.f_u(prof.values[0]))


def test_manufactured_modes(shock):
    prof = shock[2]
    w = 2.0
    coeffs = manufactured_periodic_coefficients(prof, 0.1, envelope_width=w)
    x = prof.x
    assert coeffs.K_max == 1
    np.testing.assert_allclose(coeffs.modes[0][:, 0, 0].real, prof.values[0, :, 0], atol=1e-14)
    np.testing.assert_allclose(coeffs.modes[1][:, 0, 0], 0.05 * np.exp(-x**2 / w**2), atol=1e-15)
    f = coeffs.fourier_modes(3)
    np.testing.assert_array_equal(f[3 - 1], np.conj(f[3 + 1]))
    assert not np.any(f[[0, 1, 5, 6]])
    # direct evaluation of the cosine perturbation
    t = 0.7
    direct = prof.values[0, :, 0] + 0.1 * np.exp(-x**2 / w**2) * np.cos(t)
    np.testing.assert_allclose(coeffs.matrix(t)[:, 0, 0], direct, atol=1e-14)
    # limits at the domain ends are the end-state Jacobians
    lo, hi = coeffs.limits()
    np.testing.assert_allclose([lo[0, 0], hi[0, 0]], [1.0, -1.0], atol=1e-15)


def test_manufactured_rejects_negative_eps(shock):
    with pytest.raises(ValueError):
        manufactured_periodic_coefficients(shock[2], -0.1)


def test_stationary_profile_is_discretely_steady(shock):
    model, grid, prof, _ = shock
    traj = evolve_nonlinear(model, prof.values[0], 1.0, grid)
    assert np.max(np.abs(traj.states[-1] - prof.values[0])) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_translate_matches_shifted_tanh(q):
    from tpshock.acceptance import burgers_shock
    prof = burgers_shock()[2]
    np.testing.assert_allclose(prof.translate(q)[:, 0], -np.tanh((prof.x - q) / 2), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10 ** 6))
def test_fourier_sampling_roundtrip(K, seed):
    grid = GridSpec(L=2.0, dx=0.5)
    rng = np.random.default_rng(seed)
    nt = 2 * K + 1
    samples = rng.normal(size=(nt, grid.nx, 2, 2))
    field = PeriodicCoefficientField.from_samples(grid, samples)
    assert field.reconstruction_error < 1e-12


def test_constant_coefficients():
    grid = GridSpec(L=5.0, dx=0.5)
    c = constant_coefficients(grid, [[2.0]], damping=0.5)
    assert c.stationary and c.damping == 0.5
    np.testing.assert_array_equal(c.matrix(1.0)[:, 0, 0], 2.0)
