import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from tpshock.errors import BranchAmbiguity, TruncationBandExceeded
from tpshock.pde_core import GridSpec
from tpshock.profiles import (constant_coefficients, manufactured_periodic_coefficients,
                              stationary_coefficients)
from tpshock.spatial_dynamics import (asymptotic_spatial_spectrum, build_spatial_operator,
                                      circle_sweep, evans_determinant, principal_angles,
                                      small_spatial_eigenvalue, transport_subspace,
                                      winding_number)


@pytest.fixture(scope="module")
def coeffs20(small_shock):
    return stationary_coefficients(small_shock[2])


def test_roots_at_zero(shock):
    minus = shock[3][0]
    roots = asymptotic_spatial_spectrum(minus, 0.0, 0)
    np.testing.assert_allclose(sorted(roots.real), [0.0, 1.0], atol=1e-15)


def test_roots_at_small_sigma(shock):
    roots = asymptotic_spatial_spectrum(shock[3][0], 0.1, 0)
    np.testing.assert_allclose(roots, [(1 + np.sqrt(1.4)) / 2, (1 - np.sqrt(1.4)) / 2])
    np.testing.assert_allclose(roots, [1.09161, -0.09161], atol=1e-5)


@pytest.mark.parametrize("K", [0, 2, 4])
def test_root_count(system_shock, K):
    roots = asymptotic_spatial_spectrum(system_shock[3][1], 0.05 + 0.1j, K)
    assert roots.size == 2 * 2 * (2 * K + 1)


def test_roots_match_dense_eigensolve(system_shock):
    for side in system_shock[3]:
        grid = GridSpec(L=2.0, dx=0.5)
        cc = constant_coefficients(grid, side.R @ np.diag(side.speeds) @ side.Lt)
        sigma = 0.07 - 0.03j
        roots = asymptotic_spatial_spectrum(side, sigma, 4)
        ev = np.linalg.eigvals(build_spatial_operator(cc, sigma, 4, 0.0))
        d = np.abs(roots[:, None] - ev[None, :])
        assert np.max(np.min(d, axis=1)) < 1e-10
        assert np.max(np.min(d, axis=0)) < 1e-10


def test_small_eigenvalue():
    nu, vec = small_spatial_eigenvalue(1.0, 0.0)
    assert nu == 0
    np.testing.assert_array_equal(vec, [1.0, 0.0])
    nu, _ = small_spatial_eigenvalue(1.0, 0.1)
    assert nu == pytest.approx((1 - np.sqrt(1.4)) / 2, abs=1e-14)
    for a in (1.0, -1.0, 2.5):
        h = 1e-6
        d = (small_spatial_eigenvalue(a, h)[0] - small_spatial_eigenvalue(a, -h)[0]) / (2 * h)
        assert abs(d - (-1.0 / a)) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(0.3, 3.0), st.sampled_from([-1.0, 1.0]), st.floats(-1.0, 1.0),
       st.floats(-1.0, 1.0))
def test_small_eigenvalue_expansion(a, sgn, sr, si):
    a = sgn * a
    sigma = 0.05 * a * a * complex(sr, si)
    nu, vec = small_spatial_eigenvalue(a, sigma)
    assert abs(nu * nu - a * nu - sigma) < 1e-12 * max(1.0, a * a)
    assert abs(nu + sigma / a) <= 4.0 * abs(sigma) ** 2 / abs(a) ** 3 + 1e-15
    assert vec[1] == nu


def test_branch_ambiguity():
    with pytest.raises(BranchAmbiguity):
        small_spatial_eigenvalue(1.0, -0.25)
    with pytest.raises(BranchAmbiguity):
        small_spatial_eigenvalue(0.0, 0.01)


def test_stationary_operator_is_block_diagonal(coeffs20):
    K, N = 3, 1
    op = build_spatial_operator(coeffs20, 0.1, K, 0.7)
    m = N * (2 * K + 1)
    for blk in (op[m:, :m], op[m:, m:]):
        assert np.max(np.abs(blk - np.diag(np.diag(blk)))) == 0.0


def test_operator_far_field_is_asymptotic(coeffs20, small_shock):
    cd = small_shock[3]
    for side, x in ((cd[0], -20.0), (cd[1], 20.0)):
        grid = GridSpec(L=2.0, dx=0.5)
        cc = constant_coefficients(grid, np.diag(side.speeds))
        far = build_spatial_operator(coeffs20, 0.1j, 2, x)
        ref = build_spatial_operator(cc, 0.1j, 2, 0.0)
        assert np.max(np.abs(far - ref)) < 1e-7


def test_manufactured_coupling_band(small_shock):
    coeffs = manufactured_periodic_coefficients(small_shock[2], 0.1)
    assert coeffs.coupling_band(tol=1e-14) == 1
    K = 3
    op = build_spatial_operator(coeffs, 0.1, K, 0.7)
    m = 2 * K + 1
    C = op[m:, m:]
    band = {l - k for k in range(m) for l in range(m) if abs(C[k, l]) > 0}
    assert band == {-1, 0, 1}
    with pytest.raises(TruncationBandExceeded):
        build_spatial_operator(coeffs, 0.1, 0, 0.0)


def test_constant_transport_keeps_asymptotic_space():
    grid = GridSpec(L=5.0, dx=0.5)
    cc = constant_coefficients(grid, [[1.0]])
    fr = transport_subspace(cc, 0.2, 2, "minus")
    U0 = fr.bases[0]
    for Q in fr.bases[1:]:
        assert np.max(sla.subspace_angles(U0, Q)) < 1e-8


def test_plus_dimension(coeffs20):
    fr = transport_subspace(coeffs20, 0.2, 2, "plus")
    assert fr.dimension == 1 * (2 * 2 + 1)
    fm = transport_subspace(coeffs20, 0.2, 2, "minus")
    assert fr.dimension + fm.dimension == 2 * 5


def test_transport_step_refinement(coeffs20):
    ref = transport_subspace(coeffs20, 0.2 + 0.1j, 2, "plus", h=0.01).basis_at_zero
    errs = [np.max(sla.subspace_angles(
        transport_subspace(coeffs20, 0.2 + 0.1j, 2, "plus", h=h).basis_at_zero, ref))
        for h in (0.08, 0.04)]
    assert errs[1] < 1e-6
    assert errs[0] / errs[1] > 4.0


def test_determinant_away_from_spectrum(coeffs20):
    d, fp, fm = evans_determinant(coeffs20, 0.3, 2)
    assert abs(d) > 1e-3
    assert fp.orthonormality_defect < 1e-12


def test_conjugate_symmetry(coeffs20):
    s = 0.15 + 0.2j
    d1 = evans_determinant(coeffs20, s, 2)[0]
    d2 = evans_determinant(coeffs20, np.conj(s), 2)[0]
    assert abs(d1 - np.conj(d2)) < 1e-10 * max(1.0, abs(d1))


def test_intersection_at_zero(coeffs20):
    _, fp, fm = evans_determinant(coeffs20, 0.0, 2)
    assert principal_angles(fp, fm)[0] < 1e-4


def test_circle_winding(coeffs20):
    _, dets = circle_sweep(coeffs20, 2, radius=0.1, samples=16)
    assert np.min(np.abs(dets)) > 1e-6
    assert winding_number(dets) == 1


def test_winding_number_helper():
    z = np.exp(2j * np.pi * np.arange(16) / 16)
    assert winding_number(z) == 1
    assert winding_number(z**2) == 2
    assert winding_number(z + 3.0) == 0


def test_truncation_robustness(small_shock):
    coeffs = manufactured_periodic_coefficients(small_shock[2], 0.1)
    sigma = 0.3
    d4 = evans_determinant(coeffs, sigma, 4)[0]
    d8 = evans_determinant(coeffs, sigma, 8)[0]
    assert abs(d8 - d4) < 0.01 * abs(d8)
