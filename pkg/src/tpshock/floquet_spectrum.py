"""Period map of the linearized equation, Floquet exponents and the
spectral-stability verdict with its Melnikov matrix.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import EigensolverFailure, MemoryBudgetExceeded, QuadratureUnderResolved
from .flux_models import liu_majda_determinant, psi1
from .pde_core import adjoint_evolve, evolve_linearized

DENSE_LIMIT = 1200
MEMORY_BUDGET = 2 * 1024**3
CLUSTER_RADIUS = 5e-3
LOC_TOL = 1e-4
GAP_TOL = -1e-4
DET_TOL = 1e-8


def monodromy_matrix(coeffs, grid, period=None, workers=1, memory_budget=MEMORY_BUDGET):
    """Dense matrix of the linearized solution operator over one period.

    Column ``i * N + c`` is the evolution of the unit vector at node ``i``
    and component ``c``.
    """
    period = coeffs.period if period is None else period
    n = grid.nx * coeffs.N
    need = 8 * n * n * 8
    if need > memory_budget:
        raise MemoryBudgetExceeded(f"monodromy of size {n} needs ~{need / 2**30:.1f} GiB")
    eye = np.eye(n).reshape(grid.nx, coeffs.N, n)
    chunks = np.array_split(np.arange(n), max(1, workers))

    def run(idx):
        return evolve_linearized(coeffs, eye[:, :, idx], 0.0, period, grid)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts, axis=2).reshape(n, n)


def fold_exponents(mu, period=2 * np.pi):
    """``log(mu) / period`` with the imaginary part folded into ``(-w/2, w/2]``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=complex))
    w = 2 * np.pi / period
    zero = mu == 0
    sig = np.log(np.where(zero, 1.0, mu)) / period
    im = -((-sig.imag + w / 2) % w - w / 2)
    return np.where(zero, -np.inf, sig.real) + 1j * np.where(zero, 0.0, im)


def _sorted_eig(M, count=None, left=False):
    n = M.shape[0]
    try:
        if n <= DENSE_LIMIT or count is None:
            if left:
                mu, VL, VR = sla.eig(M, left=True, right=True)
            else:
                mu, VR = np.linalg.eig(M)
                VL = None
        else:
            mu, VR = spla.eigs(M, k=min(count, n - 2), which="LM")
            VL = None
            if left:
                mu_l, VL = spla.eigs(M.T, k=min(count, n - 2), which="LM")
                VL = VL[:, [int(np.argmin(np.abs(mu_l - m))) for m in mu]]
    except (np.linalg.LinAlgError, spla.ArpackError) as err:
        raise EigensolverFailure(str(err)) from err
    if not np.all(np.isfinite(mu)):
        raise EigensolverFailure("non-finite eigenvalues")
    order = np.lexsort((-mu.imag, -np.abs(mu)))
    if count is not None:
        order = order[:count]
    mu = mu[order]
    VR = VR[:, order]
    if VL is not None:
        VL = VL[:, order]
    return mu, VR, VL


def floquet_exponents(monodromy, count=None, period=2 * np.pi):
    """Exponents of the ``count`` largest multipliers, sorted by ``|mu|``."""
    mu, _, _ = _sorted_eig(np.asarray(monodromy), count)
    return fold_exponents(mu, period)


@dataclass
class MonodromyReport:
    multipliers: np.ndarray
    exponents: np.ndarray
    cluster: np.ndarray
    localized: np.ndarray
    correlations: np.ndarray
    S1: bool
    S2: int
    S2_expected: int
    S3: bool
    S4: Optional[bool]
    liu_majda: float
    melnikov: np.ndarray
    melnikov_inverse: np.ndarray
    verdict: str
    thresholds: dict = field(default_factory=dict)
    psi2: Optional[np.ndarray] = None
    adjoint_constant_deviation: float = float("nan")

    def to_dict(self):
        c = lambda z: [[float(v.real), float(v.imag)] for v in np.atleast_1d(z)]
        return {
            "multipliers": c(self.multipliers),
            "exponents": c(self.exponents),
            "unit_cluster": [int(i) for i in np.flatnonzero(self.cluster)],
            "translation_correlations": [float(v) for v in self.correlations],
            "S1": bool(self.S1), "S2": int(self.S2), "S2_expected": int(self.S2_expected),
            "S3": bool(self.S3), "S4": None if self.S4 is None else bool(self.S4),
            "liu_majda_determinant": float(self.liu_majda),
            "melnikov": np.asarray(self.melnikov).real.tolist(),
            "melnikov_inverse": np.asarray(self.melnikov_inverse).real.tolist(),
            "adjoint_constant_deviation": float(self.adjoint_constant_deviation),
            "verdict": self.verdict,
            "thresholds": self.thresholds,
        }


def _is_localized(vec, grid, N, loc_tol):
    v = np.abs(vec.reshape(grid.nx, N))
    far = np.abs(grid.x) > grid.L / 2
    return bool(np.max(v[far]) < loc_tol * np.max(v))


def _correlation(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    return float(abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))


def melnikov_matrix(profile, psi_fields, mode_fields, grid=None, period=None, rtol=5e-3):
    """Pairings ``M_ij = (1/T) int int <psi_i, u_j> dx dt``.

    Each field is an array ``(nt, nx, N)`` sampled uniformly over one period
    (``nt = 1`` for time-independent fields) or ``(nx, N)``.  Mode fields that
    vanish identically (``u_t`` of a stationary profile) are dropped together
    with the matching adjoint field, giving the 1x1 block.

    Raises
    ------
    QuadratureUnderResolved
        If halving the time or space sampling changes an entry by more than
        ``rtol`` relative to the largest entry.
    """
    grid = profile.grid if grid is None else grid

    def as3(f):
        f = np.asarray(f)
        if f.ndim == 2:
            f = f[None]
        return f

    psis = [as3(p) for p in psi_fields]
    modes = [as3(m) for m in mode_fields]
    keep = [j for j, m in enumerate(modes) if np.any(m)]
    psis = [psis[j] for j in keep]
    modes = [modes[j] for j in keep]
    n = len(keep)
    M = np.zeros((n, n), dtype=complex)
    Mt = np.zeros_like(M)
    Mx = np.zeros_like(M)
    for i in range(n):
        for j in range(n):
            a, b = psis[i], modes[j]
            nt = max(a.shape[0], b.shape[0])
            prod = np.sum(np.conj(a) * b, axis=-1)
            prod = np.broadcast_to(prod, (nt, grid.nx))
            space = np.trapezoid(prod, dx=grid.dx, axis=1)
            M[i, j] = np.mean(space)
            Mt[i, j] = np.mean(space[::2]) if nt > 1 else M[i, j]
            Mx[i, j] = np.mean(np.trapezoid(prod[:, ::2], dx=2 * grid.dx, axis=1))
    scale = max(np.max(np.abs(M)), 1e-300)
    if np.max(np.abs(M - Mt)) > rtol * scale or np.max(np.abs(M - Mx)) > rtol * scale:
        raise QuadratureUnderResolved("Melnikov pairings not converged in the sampling")
    if np.allclose(M.imag, 0.0, atol=1e-12 * scale):
        M = M.real
    return M


def _prenormalized_psi1(chardata):
    p = psi1(chardata)
    k = int(np.argmax(np.abs(p)))
    return p / p[k]


def spectral_stability_report(profile, coeffs, chardata, grid=None, count=None,
                              gap_tol=GAP_TOL, cluster_radius=CLUSTER_RADIUS,
                              loc_tol=LOC_TOL, workers=1, monodromy=None):
    """Floquet spectrum and the (S1)-(S4) checks for a shock linearization.

    Parameters
    ----------
    profile : ShockProfile
    coeffs : PeriodicCoefficientField
        Linearized coefficients on ``grid`` (defaults to ``coeffs.grid``).
    chardata : pair of CharacteristicData
    gap_tol : float
        S1 holds when every exponent outside the unit cluster has
        ``Re sigma < gap_tol``.
    cluster_radius, loc_tol : float
        Radius of the multiplier cluster around 1 and the localization
        threshold at ``|x| > L/2``.
    """
    grid = coeffs.grid if grid is None else grid
    N = coeffs.N
    M = monodromy_matrix(coeffs, grid, workers=workers) if monodromy is None else monodromy
    mu, VR, VL = _sorted_eig(M, count, left=True)
    sig = fold_exponents(mu, coeffs.period)
    cluster = np.abs(mu - 1.0) < cluster_radius
    localized = np.array([_is_localized(VR[:, k], grid, N, loc_tol) for k in range(mu.size)])

    ux = profile.at(grid.x, derivative=True) if profile.grid.nx != grid.nx else profile.ux[0]
    correlations = np.array([_correlation(VR[:, k], ux) for k in np.flatnonzero(cluster)])
    outside = ~cluster
    S1 = bool(np.all(sig[outside].real < gap_tol)) if np.any(outside) else True
    S2 = int(np.sum(cluster & localized))
    lm = liu_majda_determinant(chardata, profile.jump)
    S3 = abs(lm) > DET_TOL
    stationary = coeffs.stationary and profile.stationary
    S2_expected = 1 if stationary else 2

    psi_pre = _prenormalized_psi1(chardata)
    # discrete adjoint fixed vectors: left eigenvectors in the unit cluster
    dev = float("nan")
    if np.any(cluster):
        k = np.flatnonzero(cluster)[0]
        left = VL[:, k].reshape(grid.nx, N)
        core = np.abs(grid.x) < grid.L / 2
        ref = np.broadcast_to(psi_pre, left.shape)
        scale = np.vdot(ref[core], left[core]) / np.vdot(ref[core], ref[core])
        dev = float(np.max(np.abs(left[core] - scale * ref[core])) / np.max(np.abs(scale * ref[core])))

    psi2 = None
    if stationary:
        S4 = None
        mel = melnikov_matrix(profile, [np.broadcast_to(psi_pre, ux.shape)],
                              [ux], grid=grid)
    else:
        idx = np.flatnonzero(cluster & localized)
        S4 = False
        mel = np.full((1, 1), np.nan)
        if idx.size >= 2:
            lefts = [VL[:, k].reshape(grid.nx, N) for k in np.flatnonzero(cluster)]
            const = np.broadcast_to(psi_pre, (grid.nx, N))
            nonconst = [l for l in lefts if _correlation(l, const) < 0.99]
            if nonconst:
                nt = 16
                ts = coeffs.period * np.arange(nt) / nt
                w = np.real(nonconst[0])
                # psi2(x, t) over one period by backward adjoint evolution from t = T
                back = adjoint_evolve(coeffs, w, coeffs.period, grid, t_end=coeffs.period,
                                      times=list(coeffs.period - ts[1:][::-1]))
                psi2 = np.concatenate([w[None], back[::-1]], axis=0)
                fwd = [np.real(VR[:, k]).reshape(grid.nx, N) for k in idx[:2]]
                mfields = [np.concatenate([f[None], evolve_linearized(coeffs, f, 0.0, ts[-1], grid,
                                                                      times=list(ts[1:]))])
                           for f in fwd]
                mel = melnikov_matrix(profile, [np.broadcast_to(psi_pre, psi2.shape), psi2],
                                      mfields, grid=grid)
                S4 = bool(mel.shape == (2, 2) and abs(np.linalg.det(mel)) > DET_TOL)
    mel = np.atleast_2d(mel)
    try:
        mel_inv = np.linalg.inv(mel)
    except np.linalg.LinAlgError:
        mel_inv = np.full_like(mel, np.nan)

    if S2 == 0:
        verdict = "not a shock spectrum"
    elif stationary:
        ok = S1 and S3 and S2 == 1 and abs(mel[0, 0]) > DET_TOL
        verdict = "spectrally stable (stationary, degenerate)" if ok else "not spectrally stable"
    else:
        ok = S1 and S3 and S2 == 2 and bool(S4)
        verdict = "spectrally stable" if ok else "not spectrally stable"
    return MonodromyReport(
        multipliers=mu, exponents=sig, cluster=cluster, localized=localized,
        correlations=correlations, S1=S1, S2=S2, S2_expected=S2_expected, S3=S3, S4=S4,
        liu_majda=lm, melnikov=mel, melnikov_inverse=mel_inv, verdict=verdict,
        thresholds={"gap_tol": gap_tol, "cluster_radius": cluster_radius, "loc_tol": loc_tol,
                    "det_tol": DET_TOL},
        psi2=psi2, adjoint_constant_deviation=dev)
