"""Spatial dynamics of the Fourier-truncated eigenvalue problem.

Writing ``v(x, t) = sum_k v_k(x) exp(i k t)`` for a Floquet solution with
exponent ``sigma`` turns the linearized equation into the first-order system
``U' = A(x, sigma) U`` for ``U = (v_k, v_k')_{|k| <= K}``.  Subspaces of
solutions decaying at ``+inf`` or ``-inf`` are represented by orthonormal
frames transported toward ``x = 0``; their intersection is measured by a
determinant and principal angles.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (BranchAmbiguity, DimensionMismatch, SplittingCollapse,
                     StiffnessFailure, TruncationBandExceeded)

SPLIT_TOL = 1e-8
RECON_TOL = 1e-8


def _speeds(chardata_side):
    if hasattr(chardata_side, "speeds"):
        return np.asarray(chardata_side.speeds, dtype=float)
    return np.atleast_1d(np.asarray(chardata_side, dtype=float))


def asymptotic_spatial_spectrum(chardata_side, sigma, K):
    """Roots ``a/2 +- sqrt(a^2 + 4(sigma + i k))/2`` for every speed and ``|k| <= K``.

    Returned in the order ``(k, j, +), (k, j, -)`` with ``k`` running from
    ``-K`` to ``K``; the square root is the principal branch.
    """
    if K < 0:
        raise ValueError("K must be nonnegative")
    a = _speeds(chardata_side)
    out = []
    for k in range(-K, K + 1):
        for aj in a:
            r = np.sqrt(complex(aj * aj + 4.0 * (sigma + 1j * k)))
            out.extend([0.5 * aj + 0.5 * r, 0.5 * aj - 0.5 * r])
    return np.array(out)


def small_spatial_eigenvalue(a, sigma, r=None):
    """Root of ``nu^2 - a nu - sigma = 0`` continuing ``nu(0) = 0``.

    Returns ``(nu, vector)`` with ``vector = (1, nu) (x) r``.

    Raises
    ------
    BranchAmbiguity
        If ``|sigma| >= a^2 / 4`` (the branch point of the square root).
    """
    a = float(a)
    if a == 0.0:
        raise BranchAmbiguity("speed must be nonzero")
    if abs(sigma) >= 0.25 * a * a:
        raise BranchAmbiguity(f"|sigma| = {abs(sigma):.3g} reaches the branch point a^2/4")
    nu = 0.5 * a - np.sign(a) * 0.5 * np.sqrt(complex(a * a + 4.0 * sigma))
    r = np.ones(1) if r is None else np.asarray(r)
    return nu, np.concatenate([r, nu * r])


def _operator_stack(modes, modes_x, sigma, K):
    """``A(x, sigma)`` for each point; ``modes`` has shape ``(Kc+1, n, N, N)``."""
    Kc = modes.shape[0] - 1
    npts, N = modes.shape[1], modes.shape[-1]
    m = N * (2 * K + 1)
    C = np.zeros((npts, m, m), dtype=complex)
    B = np.zeros_like(C)
    for k in range(-K, K + 1):
        for l in range(-K, K + 1):
            d = k - l
            if abs(d) > Kc:
                continue
            blk = modes[d] if d >= 0 else np.conj(modes[-d])
            blkx = modes_x[d] if d >= 0 else np.conj(modes_x[-d])
            rs = slice((k + K) * N, (k + K + 1) * N)
            cs = slice((l + K) * N, (l + K + 1) * N)
            C[:, rs, cs] = blk
            B[:, rs, cs] = blkx
    diag = np.repeat(sigma + 1j * np.arange(-K, K + 1), N)
    op = np.zeros((npts, 2 * m, 2 * m), dtype=complex)
    op[:, :m, m:] = np.eye(m)
    op[:, m:, :m] = B + np.diag(diag)
    op[:, m:, m:] = C
    return op


def _check_band(coeffs, K):
    band = coeffs.coupling_band(tol=1e-14)
    if band > K or coeffs.reconstruction_error > RECON_TOL:
        raise TruncationBandExceeded(
            f"coefficient band {band} (reconstruction error {coeffs.reconstruction_error:.2g})"
            f" is not represented at truncation K={K}")


def build_spatial_operator(coeffs, sigma, K, x):
    """Block matrix ``[[0, I], [i k + sigma + B(x), C(x)]]`` of size ``2N(2K+1)``.

    ``C`` convolves with the temporal Fourier modes of ``A = f_u(u)`` and
    ``B`` with those of ``A_x``.
    """
    _check_band(coeffs, K)
    modes, modes_x = coeffs.modes_at(np.atleast_1d(float(x)))
    return _operator_stack(modes, modes_x, complex(sigma), K)[0]


def _phase_fixed_qr(U):
    Q, R = np.linalg.qr(U)
    d = np.diag(R)
    ph = np.where(np.abs(d) > 0, d / np.abs(d), 1.0)
    return Q * ph[None, :], np.conj(ph)[:, None] * R


def _mode_scaling(N, K):
    """Diagonal metric ``(v_k, v_k' (1 + k^2)^(-1/4))`` used for angles and determinants."""
    s = np.repeat((1.0 + np.arange(-K, K + 1) ** 2) ** -0.25, N)
    return np.concatenate([np.ones(N * (2 * K + 1)), s])


@dataclass
class SpatialFrame:
    """Orthonormal frame of ``E^s_+`` (side ``plus``) or ``E^u_-`` (side ``minus``)."""
    sigma: complex
    K: int
    side: str
    kind: str
    x: np.ndarray
    bases: np.ndarray
    asymptotic_eigenvalues: np.ndarray
    selected: np.ndarray
    kappa_s: float
    kappa_u: float
    orthonormality_defect: float = 0.0
    N: int = 1

    @property
    def dimension(self):
        return self.bases.shape[-1]

    @property
    def basis_at_zero(self):
        return self.bases[-1]


def _asymptotic_basis(A_inf, sigma, K, side):
    """Eigenvectors of the constant operator selected for ``E^s_+`` / ``E^u_-``.

    Hyperbolic roots are selected by the sign of their real part; the
    ``k = 0`` small roots (the ones continuing ``nu = 0``) are included only
    for outgoing characteristics.
    """
    a, R = np.linalg.eig(np.atleast_2d(A_inf))
    a, R = a.real, R.real
    N = a.size
    m = N * (2 * K + 1)
    vecs, vals, small = [], [], []
    for k in range(-K, K + 1):
        for j in range(N):
            root = np.sqrt(complex(a[j] ** 2 + 4.0 * (sigma + 1j * k)))
            big = 0.5 * a[j] + np.sign(a[j]) * 0.5 * root
            sm = 0.5 * a[j] - np.sign(a[j]) * 0.5 * root
            for nu, is_small in ((big, False), (sm, k == 0)):
                disc = a[j] ** 2 + 4.0 * sigma
                if is_small and disc.real <= 0 and abs(disc.imag) < SPLIT_TOL:
                    raise BranchAmbiguity(f"sigma={sigma} on the branch cut of the small root")
                e = np.zeros(2 * m, dtype=complex)
                e[(k + K) * N:(k + K + 1) * N] = R[:, j]
                e[m + (k + K) * N:m + (k + K + 1) * N] = nu * R[:, j]
                vecs.append(e)
                vals.append(nu)
                small.append((is_small, a[j]))
    vals = np.array(vals)
    sel = []
    for nu, (is_small, aj) in zip(vals, small):
        if is_small:
            outgoing = aj < 0 if side == "minus" else aj > 0
            sel.append(outgoing)
        else:
            if abs(nu.real) < SPLIT_TOL:
                raise SplittingCollapse(f"spatial eigenvalue {nu} on the imaginary axis")
            sel.append(nu.real > 0 if side == "minus" else nu.real < 0)
    sel = np.array(sel)
    hyper = np.array([not s for s, _ in small])
    stable = vals.real[hyper & (vals.real < 0)]
    unstable = vals.real[hyper & (vals.real > 0)]
    kappa_s = float(np.max(stable)) if stable.size else -np.inf
    kappa_u = float(np.min(unstable)) if unstable.size else np.inf
    return np.array(vecs).T[:, sel], vals, sel, kappa_s, kappa_u


def transport_subspace(coeffs, sigma, K, side, kind=None, x_start=None, h=0.02,
                       keep_every=1):
    """Transport ``E^s_+`` (``side='plus'``) or ``E^u_-`` (``side='minus'``) to ``x = 0``.

    The frame starts as the selected asymptotic eigenspace at
    ``x = +-x_start`` and is advanced with classical RK4 steps of size ``h``
    followed by a QR re-orthonormalization with positive diagonal.

    Raises
    ------
    SplittingCollapse
        A hyperbolic asymptotic root sits on the imaginary axis.
    StiffnessFailure
        ``h`` times the largest spatial eigenvalue leaves the RK4 stability range.
    """
    _check_band(coeffs, K)
    if side not in ("plus", "minus"):
        raise ValueError("side must be 'plus' or 'minus'")
    kind = kind or ("stable" if side == "plus" else "unstable")
    sigma = complex(sigma)
    L = coeffs.grid.L if x_start is None else float(x_start)
    sgn = 1.0 if side == "plus" else -1.0
    A_inf = coeffs.limits()[1 if side == "plus" else 0]
    U0, vals, sel, ks, ku = _asymptotic_basis(A_inf, sigma, K, side)
    if np.max(np.abs(vals)) * h > 2.5:
        raise StiffnessFailure(f"step {h} too large for spatial eigenvalues up to {np.max(np.abs(vals)):.3g}")
    n = int(np.ceil(L / h))
    hh = -sgn * L / n
    xs = sgn * L + hh * np.arange(n + 1)
    xh = np.concatenate([xs, xs[:-1] + 0.5 * hh])
    modes, modes_x = coeffs.modes_at(xh)
    ops = _operator_stack(modes, modes_x, sigma, K)
    op_node, op_mid = ops[:n + 1], ops[n + 1:]
    # Evans gauge: column j starts as exp(nu_j x_start) r_j; only the unimodular
    # part matters after QR, and it removes the O(L) phase drift in sigma
    Q, _ = _phase_fixed_qr(U0 * np.exp(1j * vals[sel].imag * sgn * L)[None, :])
    kept = [Q]
    xkept = [xs[0]]
    defect = 0.0
    for i in range(n):
        A0, Am, A1 = op_node[i], op_mid[i], op_node[i + 1]
        k1 = A0 @ Q
        k2 = Am @ (Q + 0.5 * hh * k1)
        k3 = Am @ (Q + 0.5 * hh * k2)
        k4 = A1 @ (Q + hh * k3)
        Y = Q + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        Q, _ = _phase_fixed_qr(Y)
        if (i + 1) % keep_every == 0 or i == n - 1:
            kept.append(Q)
            xkept.append(xs[i + 1])
    defect = float(np.max(np.abs(Q.conj().T @ Q - np.eye(Q.shape[1]))))
    return SpatialFrame(sigma=sigma, K=K, side=side, kind=kind, x=np.array(xkept),
                        bases=np.array(kept), asymptotic_eigenvalues=vals, selected=sel,
                        kappa_s=ks, kappa_u=ku, orthonormality_defect=defect,
                        N=coeffs.N)


def _scaled_frames(frame_plus, frame_minus):
    if frame_plus.sigma != frame_minus.sigma or frame_plus.K != frame_minus.K:
        raise DimensionMismatch("frames must share sigma and K")
    Qp, Qm = frame_plus.basis_at_zero, frame_minus.basis_at_zero
    if Qp.shape[1] + Qm.shape[1] != Qp.shape[0]:
        raise DimensionMismatch(f"subspace dimensions {Qp.shape[1]} + {Qm.shape[1]} "
                                f"do not add up to {Qp.shape[0]}")
    s = _mode_scaling(frame_plus.N, frame_plus.K)[:, None]
    return _phase_fixed_qr(s * Qp)[0], _phase_fixed_qr(s * Qm)[0]


def principal_angles(frame_plus, frame_minus):
    """Principal angles (ascending) between ``E^s_+(0)`` and ``E^u_-(0)``."""
    Qp, Qm = _scaled_frames(frame_plus, frame_minus)
    return np.sort(sla.subspace_angles(Qp, Qm))


def intersection_determinant(frame_plus, frame_minus):
    """``det[E^s_+(0) | E^u_-(0)]`` with QR-normalized frames.

    Frames are orthonormalized in the metric ``(v_k, v_k' (1+k^2)^(-1/4))``
    with positive-diagonal QR, so the modulus lies in ``[0, 1]`` and the phase
    varies analytically with ``sigma``.
    """
    Qp, Qm = _scaled_frames(frame_plus, frame_minus)
    return complex(np.linalg.det(np.hstack([Qp, Qm])))


def evans_determinant(coeffs, sigma, K, **kw):
    fp = transport_subspace(coeffs, sigma, K, "plus", **kw)
    fm = transport_subspace(coeffs, sigma, K, "minus", **kw)
    return intersection_determinant(fp, fm), fp, fm


def winding_number(values):
    """Winding of closed sampled values around 0 (argument principle)."""
    ph = np.angle(np.asarray(values))
    d = np.diff(np.concatenate([ph, ph[:1]]))
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return int(round(np.sum(d) / (2 * np.pi)))


def circle_sweep(coeffs, K, radius=0.1, samples=16, center=0.0, workers=1, **kw):
    """Determinants on ``center + radius * exp(2 pi i m / samples)``."""
    sig = center + radius * np.exp(2j * np.pi * np.arange(samples) / samples)

    def one(s):
        return evans_determinant(coeffs, s, K, **kw)[0]

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            dets = list(ex.map(one, sig))
    else:
        dets = [one(s) for s in sig]
    return sig, np.array(dets)
