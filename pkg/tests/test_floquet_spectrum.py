import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from tpshock.acceptance import burgers_shock
from tpshock.errors import MemoryBudgetExceeded, QuadratureUnderResolved
from tpshock.floquet_spectrum import (floquet_exponents, fold_exponents, melnikov_matrix,
                                      monodromy_matrix, spectral_stability_report)
from tpshock.pde_core import GridSpec
from tpshock.profiles import (constant_coefficients, manufactured_periodic_coefficients,
                              stationary_coefficients)


def test_fold_values():
    got = fold_exponents([1.0, np.exp(-np.pi / 2), np.exp(-np.pi), 0.0])
    np.testing.assert_allclose(got[:3], [0.0, -0.25, -0.5], atol=1e-15)
    assert got[3] == -np.inf


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 2.0), st.floats(-np.pi, np.pi))
def test_fold_invariants(r, phase):
    mu = r * np.exp(1j * phase)
    s = fold_exponents(mu)
    np.testing.assert_allclose(fold_exponents(mu * np.exp(2j * np.pi * 0)), s)
    assert -0.5 < s.imag[0] <= 0.5
    np.testing.assert_allclose(np.exp(2 * np.pi * s), mu, rtol=1e-12)
    # squaring the multiplier over a doubled period keeps the real part
    s2 = fold_exponents(mu**2, period=4 * np.pi)
    np.testing.assert_allclose(s2.real, s.real, atol=1e-12)


def test_heat_monodromy():
    grid = GridSpec(L=6.0, dx=0.1)
    M = monodromy_matrix(constant_coefficients(grid, [[0.0]]), grid)
    assert np.max(np.abs(M - M.T)) < 1e-12
    assert np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) > -1e-12
    assert np.max(np.abs(np.linalg.eigvals(M))) < 1.0
    # held boundary values make the domain a Dirichlet interval of length 2L
    s = floquet_exponents(M, count=4).real
    k = np.arange(1, 5) * np.pi / (2 * grid.L)
    np.testing.assert_allclose(s, -k**2, rtol=2e-3)


def test_short_period_is_near_identity():
    errs = []
    for T in (1e-4, 1e-5):
        grid = GridSpec(L=6.0, dx=0.1, dt=T)
        M = monodromy_matrix(constant_coefficients(grid, [[0.0]]), grid, period=T)
        errs.append(np.max(np.abs(M - np.eye(grid.nx))[1:-1, 1:-1]))
    assert errs[1] < 5e-3
    assert errs[0] / errs[1] > 8


def test_memory_budget():
    grid = GridSpec(L=6.0, dx=0.1)
    with pytest.raises(MemoryBudgetExceeded):
        monodromy_matrix(constant_coefficients(grid, [[0.0]]), grid, memory_budget=1e3)


def test_periodic_perturbation_moves_spectrum_continuously():
    _, grid, prof, _ = burgers_shock(L=12.0, dx=0.1)
    sets = []
    for eps in (0.0, 0.05, 0.1):
        M = monodromy_matrix(manufactured_periodic_coefficients(prof, eps), grid)
        mu = np.linalg.eigvals(M)
        sets.append(mu[np.argsort(-np.abs(mu))][:8])
    dist = []
    for mu in sets[1:]:
        d = np.abs(sets[0][:, None] - mu[None, :])
        r, c = linear_sum_assignment(d)
        dist.append(d[r, c].max())
    assert dist[0] < 0.05 and dist[1] < 0.1
    assert dist[0] <= dist[1]


def test_melnikov_burgers(shock):
    prof = shock[2]
    ux = prof.ux[0]
    M = melnikov_matrix(prof, [np.ones_like(ux)], [ux])
    assert M.shape == (1, 1)
    assert M[0, 0] == pytest.approx(-2.0, abs=1e-2)
    # a vanishing u_t mode is dropped, leaving the 1x1 block
    M2 = melnikov_matrix(prof, [np.ones_like(ux), np.ones_like(ux)], [ux, np.zeros_like(ux)])
    assert M2.shape == (1, 1)
    fine = burgers_shock(dx=0.025)[2]
    Mf = melnikov_matrix(fine, [np.ones_like(fine.ux[0])], [fine.ux[0]])
    assert abs(Mf[0, 0] - M[0, 0]) < 5e-3 * abs(M[0, 0])


def test_melnikov_time_derivative_entry(shock):
    prof = shock[2]
    x = prof.x
    nt = 32
    t = 2 * np.pi * np.arange(nt) / nt
    env = np.exp(-x**2)[None, :, None]
    u = env * np.cos(t)[:, None, None]
    ut = -env * np.sin(t)[:, None, None]
    ux = np.broadcast_to(prof.ux[0], u.shape)
    psi1 = np.ones_like(u)
    psi2 = np.broadcast_to(np.exp(-x**2 / 4)[None, :, None], u.shape)
    M = melnikov_matrix(prof, [psi1, psi2 * np.cos(t)[:, None, None]], [ux, ut + 0 * u])
    assert abs(M[0, 1]) < 1e-12
    assert M[0, 0] == pytest.approx(-2.0, abs=1e-2)
    # M[1, 1] = <e^{-x^2/4}, e^{-x^2}> * mean(-sin t cos t) = 0, M[1, 0] = 0 likewise
    assert abs(M[1, 0]) < 1e-12


def test_melnikov_under_resolved(shock):
    prof = shock[2]
    x = prof.x
    wild = np.cos(25 * x)[:, None] * np.exp(-x**2)[:, None]
    with pytest.raises(QuadratureUnderResolved):
        melnikov_matrix(prof, [np.ones_like(wild)], [wild])


@pytest.mark.slow
def test_stability_report_burgers():
    _, grid, prof, cd = burgers_shock(L=25.0, dx=0.05)
    coeffs = stationary_coefficients(prof)
    M = monodromy_matrix(coeffs, grid)
    rep = spectral_stability_report(prof, coeffs, cd, monodromy=M)
    d = rep.to_dict()
    assert d["S1"] and d["S3"] and d["S2"] == 1 and d["S2_expected"] == 1
    assert d["verdict"] == "spectrally stable (stationary, degenerate)"
    assert d["melnikov"][0][0] == pytest.approx(-2.0, abs=1e-2)
    assert rep.adjoint_constant_deviation < 1e-4
    mu = rep.multipliers[rep.cluster]
    assert abs(mu[0] - 1.0) < 1e-3 and rep.correlations[0] > 0.999
    # the unit-cluster eigenvector reproduces itself after one more period
    w, V = np.linalg.eig(M)
    k = int(np.argmin(np.abs(w - 1.0)))
    v = V[:, k]
    Mv = M @ v
    assert np.linalg.norm(Mv / w[k] - v) / np.linalg.norm(v) < 1e-6
    # M~0 M(0) = I
    np.testing.assert_allclose(rep.melnikov_inverse @ rep.melnikov, np.eye(1), atol=1e-8)


def test_dissipative_operator_is_not_a_shock_spectrum():
    _, grid, prof, cd = burgers_shock(L=12.0, dx=0.1)
    coeffs = constant_coefficients(grid, [[0.0]], damping=0.5)
    rep = spectral_stability_report(prof, coeffs, cd)
    assert rep.S1 and rep.S2 == 0
    assert rep.verdict == "not a shock spectrum"
