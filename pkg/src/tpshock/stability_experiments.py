"""Nonlinear perturbation experiments, phase tracking and the iteration map.

A perturbed shock ``u = u_bar(x - q(t)) + v`` is tracked through its phase
``q``; stationary profiles have no time phase, so ``tau`` is identically
zero throughout.  The iteration map evaluates the integral equations for
``(v, zeta, zeta_star)`` on a tabulated ``(y, s)`` lattice of Green columns
and projections, and checks them against a direct time-stepping of the
mixed perturbation equation.

The phase-derivative direction is ``D = (u_bar_x, u_bar_t)``: with this
orientation the perturbation equation reads
``v_t - L v = (Q + R)_x + D|zeta* . zeta_dot + S`` and
``int pi_inf D dy`` is the identity.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import savgol_filter

from .errors import (DimensionMismatch, FitLost, InsufficientHorizon,
                     TableCoverageInsufficient)
from .greens import LCoefficients, greens_columns, pi_functions
from .pde_core import (evolve_linearized, evolve_nonlinear, flux_divergence,
                       mass, weighted_sobolev_norm)
from .profiles import stationary_coefficients

FIT_TRUST = 0.5
NOISE_FLOOR = 1e-10
COVERAGE_TOL = 1e-3
ROUNDOFF = 1e-13


def _as_field(v, N):
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        if N != 1:
            raise DimensionMismatch("1-D field given for a system")
        v = v[:, None]
    if v.shape[-1] != N:
        raise DimensionMismatch(f"field has {v.shape[-1]} components, expected {N}")
    return v


def gaussian_perturbation(grid, amplitude, center=0.0, width=1.0, N=1, direction=None):
    """``amplitude * exp(-((x - center)/width)^2) * direction``, shape ``(nx, N)``."""
    r = np.ones(N) if direction is None else np.asarray(direction, dtype=float)
    g = amplitude * np.exp(-((grid.x - center) / width) ** 2)
    return g[:, None] * r[None, :]


# ---------------------------------------------------------------------------
# nonlinear runs

@dataclass
class PerturbationRun:
    """Trajectory of ``u_bar + v0`` with per-snapshot diagnostics of ``u - u_bar``."""
    trajectory: object
    v0: np.ndarray
    mass: np.ndarray
    sup: np.ndarray
    weighted: np.ndarray


def run_perturbation(model, profile, v0, t_final, grid=None, every=1.0, delta=None,
                     weighted=True):
    """Evolve ``u_bar(., 0) + v0`` with the full nonlinear equation.

    Parameters
    ----------
    delta : float, optional
        Upper bound on the weighted ``H^3`` norm of ``v0``; a larger
        perturbation raises ``ValueError``.
    weighted : bool
        Record the weighted ``H^3`` norm of ``u - u_bar`` per snapshot.

    Raises
    ------
    BlowUp
        From the time stepper.
    """
    grid = profile.grid if grid is None else grid
    if grid.nx != profile.x.size:
        raise DimensionMismatch("profile and grid differ")
    v0 = _as_field(v0, model.N)
    if delta is not None:
        n0 = weighted_sobolev_norm(v0, grid)
        if n0 > delta:
            raise ValueError(f"weighted H3 norm {n0:.3g} exceeds delta = {delta:.3g}")
    base = profile.values[0]
    traj = evolve_nonlinear(model, base + v0, t_final, grid, every=every)
    v = traj.states - base[None]
    ms = np.array([mass(w, grid) for w in v])
    sup = np.max(np.abs(v), axis=(1, 2))
    wn = (np.array([weighted_sobolev_norm(w, grid) for w in v]) if weighted
          else np.full(len(v), np.nan))
    return PerturbationRun(traj, v0, ms, sup, wn)


# ---------------------------------------------------------------------------
# phase extraction

@dataclass
class PhaseTrack:
    """Phase of a perturbed stationary shock.

    ``q`` is the total shift of the best-fitting translate at each time,
    so ``q -> q_star``; ``tau`` is zero for stationary profiles.
    """
    times: np.ndarray
    q: np.ndarray
    tau: np.ndarray
    q_star: float
    tau_star: float
    q_dot: np.ndarray
    tau_dot: np.ndarray
    residual: np.ndarray
    b2: Optional[float] = None
    slopes: dict = field(default_factory=dict)

    @property
    def zeta(self):
        return np.stack([self.q - self.q_star, self.tau - self.tau_star], axis=-1)

    @property
    def zeta_star(self):
        return np.array([self.q_star, self.tau_star])

    @property
    def b1(self):
        """``sup (1+t)^{1/2} |zeta| + sup (1+t) |zeta_dot|``."""
        t = self.times
        z = np.linalg.norm(self.zeta, axis=-1)
        zd = np.hypot(self.q_dot, self.tau_dot)
        return float(np.max(np.sqrt(1.0 + t) * z) + np.max((1.0 + t) * zd))


def _fit_shift(u, profile, x, q0, tol=1e-13, maxit=50):
    """Gauss-Newton minimizer of ``||u - u_bar(x - q)||`` over ``x``."""
    q = q0
    for _ in range(maxit):
        r = u - profile.at(x - q)
        J = profile.at(x - q, derivative=True)
        step = np.sum(J * r) / np.sum(J * J)
        q -= step
        if abs(step) < tol:
            break
    r = u - profile.at(x - q)
    return q, r


def _late_window(times, frac=0.1):
    t0 = times[-1] - frac * (times[-1] - times[0])
    return times >= t0


def extract_phase(trajectory, profile, margin=5.0, trust=FIT_TRUST, late_fraction=0.1,
                  smooth=7):
    """Best-fit shift ``q(t)`` of each snapshot.

    ``q`` minimizes the ``L^2`` distance to ``u_bar(x - q)`` over
    ``|x| <= L - margin`` by Gauss-Newton, warm-started from the previous
    snapshot.  ``q_star`` is the mean over the last ``late_fraction`` of the
    time span and ``q_dot`` a Savitzky-Golay derivative (plain differences
    for short or nonuniform series).

    Raises
    ------
    FitLost
        If the relative residual ``||u - u_bar(x - q)|| / ||u_bar_x||``
        exceeds ``trust``.
    """
    if not profile.stationary:
        raise NotImplementedError("phase extraction supports stationary profiles")
    x = trajectory.x
    L = 0.5 * (x[-1] - x[0])
    sel = np.abs(x - 0.5 * (x[-1] + x[0])) <= L - margin
    xs = x[sel]
    ref = np.sqrt(np.sum(profile.at(xs, derivative=True) ** 2))
    times = np.asarray(trajectory.times, dtype=float)
    q = np.empty(times.size)
    res = np.empty(times.size)
    qprev = 0.0
    for m, u in enumerate(trajectory.states):
        qm, r = _fit_shift(u[sel], profile, xs, qprev)
        rel = np.sqrt(np.sum(r * r)) / ref
        if not np.isfinite(qm) or rel > trust:
            raise FitLost(f"relative fit residual {rel:.3g} at t={times[m]:.4g}")
        q[m], res[m] = qm, rel
        qprev = qm
    q_dot = _derivative(times, q, smooth)
    late = _late_window(times, late_fraction)
    zeros = np.zeros_like(q)
    return PhaseTrack(times, q, zeros, float(np.mean(q[late])), 0.0, q_dot, zeros.copy(), res)


def _derivative(t, y, window=7):
    if t.size < 2:
        return np.zeros_like(y)
    dt = np.diff(t)
    if t.size >= window and np.allclose(dt, dt[0], rtol=1e-9):
        return savgol_filter(y, window, 3, deriv=1, delta=dt[0], mode="interp")
    return np.gradient(y, t)


# ---------------------------------------------------------------------------
# decay

def loglog_slope(t, y, window, floor=NOISE_FLOOR, min_points=3):
    """Least-squares slope of ``log y`` against ``log t`` on ``window``.

    Points with ``y <= floor`` are dropped.  Returns ``(slope, used)``.

    Raises
    ------
    InsufficientHorizon
        If fewer than ``min_points`` samples remain.
    """
    t = np.asarray(t, float)
    y = np.abs(np.asarray(y, float))
    m = (t >= window[0]) & (t <= window[1]) & (y > floor)
    if np.count_nonzero(m) < min_points:
        raise InsufficientHorizon(f"only {np.count_nonzero(m)} usable samples in {window}")
    return float(np.polyfit(np.log(t[m]), np.log(y[m]), 1)[0]), int(np.count_nonzero(m))


def _phase_floor(values, times, late_fraction=0.1, factor=10.0):
    late = _late_window(times, late_fraction)
    return max(NOISE_FLOOR, factor * float(np.std(values[late])))


@dataclass
class DecayReport:
    times: np.ndarray
    norms: dict
    slopes: dict
    predicted: dict
    ratios: Optional[np.ndarray]
    ratio_sup: Optional[float]
    q_slope: float
    q_dot_slope: Optional[float]
    window: tuple


def decay_report(trajectory, phase, profile, bundle=None, p_list=(1, 2, np.inf),
                 window=(10.0, 100.0), floor=NOISE_FLOOR):
    """Decay rates of ``v = u - u_bar(x - q(t))`` and of the phase.

    ``L^p`` norms are fitted in log-log on ``window``; the predicted
    exponents ``-(1 - 1/p)/2`` are returned alongside.  Samples below the
    noise floor are excluded from every fit (for the phase, ten times the
    late-time scatter of ``q``).  With a template bundle, pointwise ratios
    ``sup_x |v| / theta_sum(x - q, t)`` are reported and their supremum
    stored as ``phase.b2``.

    Raises
    ------
    InsufficientHorizon
        If the trajectory stops before ``window[1]`` or a fit runs out of
        samples.
    """
    times = np.asarray(trajectory.times, float)
    if times[-1] < window[1] * (1 - 1e-9):
        raise InsufficientHorizon(f"trajectory ends at t={times[-1]:.4g} < {window[1]}")
    x = trajectory.x
    dx = x[1] - x[0]
    v = np.array([u - profile.at(x - qm) for u, qm in zip(trajectory.states, phase.q)])
    mag = np.linalg.norm(v, axis=-1)
    norms, slopes, predicted = {}, {}, {}
    for p in p_list:
        if np.isinf(p):
            n = np.max(mag, axis=1)
        else:
            n = (np.sum(mag ** p, axis=1) * dx) ** (1.0 / p)
        norms[p] = n
        slopes[p] = loglog_slope(times, n, window, floor)[0] if np.any(n > floor) else -np.inf
        predicted[p] = -0.5 * (1.0 - 1.0 / p) if np.isfinite(p) else -0.5
    dq = np.abs(phase.q - phase.q_star)
    qfloor = _phase_floor(phase.q, times)
    qf = max(floor, qfloor)
    q_slope = loglog_slope(times, dq, window, qf)[0] if np.any(dq > qf) else -np.inf
    try:
        qd_slope = loglog_slope(times, phase.q_dot, window, max(floor, qfloor))[0]
    except InsufficientHorizon:
        qd_slope = None
    ratios = ratio_sup = None
    if bundle is not None:
        tpos = np.maximum(times, 0.0)
        th = bundle.theta_sum(x[None, :] - phase.q[:, None], tpos[:, None])
        ratios = np.max(mag / th, axis=1)
        ratio_sup = float(np.max(ratios))
        phase.b2 = ratio_sup
    phase.slopes = dict(slopes)
    return DecayReport(times, norms, slopes, predicted, ratios, ratio_sup, q_slope, qd_slope,
                       tuple(window))


# ---------------------------------------------------------------------------
# nonlinear terms

@dataclass
class NonlinearTerms:
    x: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray


def _zeta_pair(z):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return np.array([z[0], z[1] if z.size > 1 else 0.0])


def nonlinear_terms(profile, zeta, zeta_star, v, zeta_dot=None, x=None):
    """Remainders of the mixed perturbation equation.

    With ``U = u_bar(x - q* - q)`` and ``U* = u_bar(x - q*)``::

        Q = f(U) + f_u(U) v - f(U + v)
        R = (f_u(U*) - f_u(U)) v
        S = (u_bar_x(x - q* - q) - u_bar_x(x - q*)) q_dot

    ``zeta``, ``zeta_star`` and ``zeta_dot`` are ``(q, tau)`` pairs (or a
    bare ``q``); the time components are ignored for stationary profiles.
    """
    model = profile.model
    x = profile.x if x is None else np.asarray(x, float)
    v = _as_field(v, model.N)
    q = _zeta_pair(zeta)[0]
    qs = _zeta_pair(zeta_star)[0]
    qd = 0.0 if zeta_dot is None else _zeta_pair(zeta_dot)[0]
    U = profile.at(x - qs - q)
    Us = profile.at(x - qs)
    J = model.f_u(U)
    Js = model.f_u(Us)
    Q = model.f(U) + np.einsum("xij,xj->xi", J, v) - model.f(U + v)
    R = np.einsum("xij,xj->xi", Js - J, v)
    if qd == 0.0 or q == 0.0:
        S = np.zeros_like(v)
    else:
        S = (profile.at(x - qs - q, derivative=True) - profile.at(x - qs, derivative=True)) * qd
    return NonlinearTerms(x, Q, R, S)


def fit_bound_constants(terms, v, zeta, zeta_dot, eta, vmin=1e-12):
    """Smallest constants in ``|Q| <= c|v|^2``, ``|R| <= c e^{-eta|x|}|zeta||v|``
    and ``|S| <= c e^{-eta|x|}|zeta_dot||zeta|``."""
    v = _as_field(v, terms.Q.shape[-1])
    nv = np.linalg.norm(v, axis=-1)
    z = abs(_zeta_pair(zeta)[0])
    zd = abs(_zeta_pair(zeta_dot)[0])
    w = np.exp(-eta * np.abs(terms.x))
    out = {}
    # |Q| carries round-off of size eps |f|, so tiny |v| would inflate the ratio
    m = nv > max(vmin, 1e-6 * np.max(nv, initial=0.0))
    out["Q"] = float(np.max(np.linalg.norm(terms.Q, axis=-1)[m] / nv[m] ** 2)) if np.any(m) else 0.0
    den = w * z * nv
    m = den > vmin ** 2
    out["R"] = float(np.max(np.linalg.norm(terms.R, axis=-1)[m] / den[m])) if np.any(m) else 0.0
    den = w * z * zd
    m = den > vmin ** 2
    out["S"] = float(np.max(np.linalg.norm(terms.S, axis=-1)[m] / den[m])) if np.any(m) else 0.0
    return out


# ---------------------------------------------------------------------------
# iteration map

@dataclass
class GreenTables:
    """Tabulated ``G~(x, tau; y, 0)`` and projections of a stationary shock.

    ``G_tilde[m]`` has shape ``(nx_out, N, N, ny)`` at ``tau[m + 1]``
    (``tau[0] = 0`` is the identity); the projections ``pi``, ``pi_t`` have
    shape ``(ntau, ny, 2, N)``.  Sources ``y`` and outputs ``x_out`` are grid
    nodes (``y_index``, ``x_index``).
    """
    profile: object
    grid: object
    y: np.ndarray
    y_index: np.ndarray
    tau: np.ndarray
    x_out: np.ndarray
    x_index: np.ndarray
    G_tilde: np.ndarray
    pi: np.ndarray
    pi_t: np.ndarray
    pi_inf: np.ndarray
    D: np.ndarray
    l_coeffs: object

    @property
    def ds(self):
        return float(self.tau[1] - self.tau[0])

    @property
    def dy(self):
        return float(self.y[1] - self.y[0])

    @property
    def t_max(self):
        return float(self.tau[-1])

    @property
    def N(self):
        return self.D.shape[1]


def _lattice_indices(grid, lo, hi, step):
    k = int(round(step / grid.dx))
    if k < 1 or abs(k * grid.dx - step) > 1e-9 * step:
        raise ValueError(f"lattice spacing {step} is not a multiple of dx = {grid.dx}")
    i0 = int(np.ceil((lo + grid.L) / grid.dx - 1e-9))
    i1 = int(np.floor((hi + grid.L) / grid.dx + 1e-9))
    idx = np.arange(i0, i1 + 1, k)
    return idx


def build_green_tables(profile, chardata, y_range=(-14.0, 10.0), dy=0.1, ds=0.1,
                       t_max=10.0, x_range=None, x_stride=2, l_coeffs=None,
                       memory_budget=1e9):
    """Tabulate ``G~ = G - D pi`` and the projections on a ``(y, s)`` lattice.

    Stationary shocks only: ``G(x, t; y, s) = G(x, t - s; y, 0)`` so a single
    batch of columns from ``s = 0`` covers every source time.  Without
    ``l_coeffs`` a scalar shock uses ``l = 1 / (u_+ - u_-)`` (fixed by
    conservation of mass); systems must pass fitted coefficients.
    """
    if not profile.stationary:
        raise NotImplementedError("tables are built for stationary profiles")
    grid = profile.grid
    N = profile.N
    if l_coeffs is None:
        if N != 1:
            raise ValueError("systems need fitted l_coeffs")
        l = 1.0 / float(profile.jump[0])
        row = np.array([[[l], [0.0]]])
        l_coeffs = LCoefficients.constant(row, row)
    yi = _lattice_indices(grid, y_range[0], y_range[1], dy)
    y = grid.x[yi]
    if x_range is None:
        x_range = (y_range[0] - 4.0, y_range[1] + 4.0)
    xi = _lattice_indices(grid, max(x_range[0], -grid.L), min(x_range[1], grid.L),
                          x_stride * grid.dx)
    x_out = grid.x[xi]
    nt = int(round(t_max / ds))
    if abs(nt * ds - t_max) > 1e-9 * t_max or nt < 1:
        raise ValueError("t_max must be a multiple of ds")
    tau = ds * np.arange(nt + 1)
    size = nt * x_out.size * N * N * y.size * 8
    if size > memory_budget:
        raise MemoryError(f"tables need {size / 1e6:.0f} MB > budget")
    coeffs = stationary_coefficients(profile)
    cols = greens_columns(coeffs, y, 0.0, tau[1:], grid)
    G = np.stack([c.values[:, xi] for c in cols], axis=-1)  # (nt, nxo, N, N, ny)
    Y, T = np.meshgrid(y, tau, indexing="xy")
    pv = pi_functions(chardata, l_coeffs, Y, 0.0, T)  # (nt+1, ny, 2, N)
    D = np.zeros((x_out.size, N, 2))
    D[:, :, 0] = profile.ux[0][xi]
    D[:, :, 1] = profile.ut[0][xi]
    # E = sum_j D_j(x) pi_j(y)
    E = np.einsum("xij,tyjk->txiky", D, pv.pi[1:])
    G -= E
    return GreenTables(profile, grid, y, yi, tau, x_out, xi, G, pv.pi, pv.pi_t,
                       pv.pi_inf[0], D, l_coeffs)


@dataclass
class IterationResult:
    """One application of the iteration map.

    ``x`` are the output nodes in the original frame (table nodes shifted
    by the previous asymptotic phase); ``v_new`` and ``v_direct`` have shape
    ``(ntau, nx_out, N)``; ``zeta`` and ``zeta_dot`` ``(ntau, 2)``.
    """
    times: np.ndarray
    x: np.ndarray
    v_new: np.ndarray
    v_direct: np.ndarray
    zeta: np.ndarray
    zeta_dot: np.ndarray
    zeta_star: np.ndarray
    duhamel_residual: float
    fixed_point_distance: float
    tail_estimate: float
    frame_shift: float


def _trap_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    if n == 1:
        w[0] = 0.0
    return w


def _tail_bound(times, I):
    """Bound on ``int_{t_max}^inf |I|`` from a power-law fit of the last third."""
    a = np.abs(I)
    if not np.any(a > 0):
        return 0.0
    m = times >= times[-1] * 2.0 / 3.0
    m &= (a > 0) & (times > 0)
    if np.count_nonzero(m) < 3:
        return float("inf")
    p = np.polyfit(np.log(times[m]), np.log(a[m]), 1)[0]
    if p >= -1.0:
        return float("inf")
    return float(a[-1] * times[-1] / (-p - 1.0))


def _check_coverage(tables, v0, F_hist, tiny=ROUNDOFF):
    """Fraction of the integrands' L1 mass outside the source lattice.

    Entries below ``tiny`` (flux round-off) are not counted.
    """
    grid = tables.grid
    yi = tables.y_index
    inside = np.zeros(grid.nx, bool)
    inside[yi[0]:yi[-1] + 1] = True
    v0 = np.where(np.abs(v0) > tiny, v0, 0.0)
    F_hist = np.where(np.abs(F_hist) > tiny, F_hist, 0.0)
    tot = np.sum(np.abs(v0)) + tables.ds * np.sum(np.abs(F_hist))
    if tot == 0:
        return 0.0
    out = np.sum(np.abs(v0[~inside])) + tables.ds * np.sum(np.abs(F_hist[:, ~inside]))
    return float(out / tot)


def apply_iteration_map(profile, v0, zeta_prev, zeta_star_prev, tables, passes=2,
                        check_until=None, coverage_tol=COVERAGE_TOL):
    """One application of the fixed-point map on the table lattice.

    Parameters
    ----------
    v0 : ndarray
        Initial perturbation of the unshifted profile, ``u0 - u_bar``.  The
        map works with ``u0 - u_bar(x - q*_prev)``.
    zeta_prev : tuple of ndarray or None
        ``(zeta, zeta_dot)`` on the table times, each ``(ntau, 2)``;
        ``None`` means zero.
    zeta_star_prev : array_like
        ``(q*, tau*)``.
    passes : int
        Picard passes for the direct solve (the phase derivative depends on
        the nonlinear history of the solution).
    check_until : float, optional
        Upper time of the Duhamel residual (default: ``t_max``).

    Returns
    -------
    IterationResult

    Raises
    ------
    TableCoverageInsufficient
        If more than ``coverage_tol`` of the integrands' L1 mass lies
        outside the source lattice.
    """
    grid = tables.grid
    model = profile.model
    N = profile.N
    x = grid.x
    times = tables.tau
    nt = times.size
    ds = tables.ds
    yi, xi = tables.y_index, tables.x_index
    wy = _trap_weights(yi.size, tables.dy)
    qs = float(_zeta_pair(zeta_star_prev)[0])
    if zeta_prev is None:
        z_prev = np.zeros((nt, 2))
        zd_prev = np.zeros((nt, 2))
    else:
        z_prev, zd_prev = (np.asarray(a, float) for a in zeta_prev)
        if z_prev.shape != (nt, 2) or zd_prev.shape != (nt, 2):
            raise TableCoverageInsufficient("phase series do not match the table times")
    v0 = _as_field(v0, N)
    # frame xi = x - q*: perturbation of u_bar(xi)
    u0 = profile.values[0] + v0
    v0xi = CubicSpline(x, u0, axis=0)(x + qs) - profile.values[0]
    # profile translates along the previous phase
    q = z_prev[:, 0]
    qd = zd_prev[:, 0]
    Ub = np.stack([profile.at(x - qk) for qk in q])
    S = np.stack([(profile.at(x - qk, derivative=True) - profile.ux[0]) * qdk if qk != 0 and qdk != 0
                  else np.zeros((x.size, N)) for qk, qdk in zip(q, qd)])
    fU = model.f(Ub)
    J0 = model.f_u(profile.values[0])

    def qr(V, k, w):
        U = (1 - w) * Ub[k] + w * Ub[min(k + 1, nt - 1)]
        f0 = (1 - w) * fU[k] + w * fU[min(k + 1, nt - 1)]
        return f0 + np.einsum("xij,xj->xi", J0, V) - model.f(U + V)

    def lattice(t):
        k = min(int(np.floor(t / ds + 1e-12)), nt - 1)
        return k, (t - times[k]) / ds if k < nt - 1 else 0.0

    P, Pt, Pinf = tables.pi, tables.pi_t, tables.pi_inf  # (nt, ny, 2, N), (ny, 2, N)

    def phase_series(F):
        """zeta, zeta_dot on the lattice and the tail integrand."""
        v0y = v0xi[yi]
        Fy = F[:, yi]  # (nt, ny, N)
        a0 = -np.einsum("y,tyjn,yn->tj", wy, P - Pinf[None], v0y)
        ad = -np.einsum("y,tyjn,yn->tj", wy, Pt, v0y)
        proj = np.einsum("y,tyjn,syn->tsj", wy, P - Pinf[None], Fy)  # [m, j] tau index m
        projt = np.einsum("y,tyjn,syn->tsj", wy, Pt, Fy)
        I_inf = np.einsum("y,yjn,syn->sj", wy, Pinf, Fy)
        z = a0.copy()
        zd = ad.copy()
        for k in range(nt):
            if k > 0:
                w = _trap_weights(k + 1, ds)
                j = np.arange(k + 1)
                z[k] -= np.einsum("s,sj->j", w, proj[k - j, j])
                zd[k] -= np.einsum("s,sj->j", w, projt[k - j, j])
            w = _trap_weights(nt - k, ds)
            z[k] += np.einsum("s,sj->j", w, I_inf[k:])
        return z, zd, I_inf

    coeffs = stationary_coefficients(profile)
    F = S.copy()
    for _ in range(max(passes, 1)):
        _, zd_new, _ = phase_series(F)
        spl = CubicSpline(times, zd_new, axis=0) if nt > 3 else None
        Dfield = np.stack([profile.ux[0], profile.ut[0]], axis=-1)  # (nx, N, 2)

        def forcing(t, V):
            k, w = lattice(t)
            zdt = spl(t) if spl is not None else np.interp(t, times, zd_new[:, 0])
            zdt = np.broadcast_to(zdt, (2,))
            Sx = (1 - w) * S[k] + w * S[min(k + 1, nt - 1)]
            src = np.einsum("xnj,j->xn", Dfield, zdt) + Sx
            out = np.empty_like(V)
            for b in range(V.shape[2]):
                out[:, :, b] = flux_divergence(-qr(V[:, :, b], k, w), grid.dx) + src
            return out

        vd = evolve_linearized(coeffs, v0xi, 0.0, times[-1], grid, times=times[1:],
                               forcing=forcing)
        vd = np.concatenate([v0xi[None], np.asarray(vd).reshape(nt - 1, x.size, N)])
        QR = np.stack([qr(vd[k], k, 0.0) for k in range(nt)])
        F = S + np.stack([-flux_divergence(QR[k], grid.dx) for k in range(nt)])
    frac = _check_coverage(tables, v0xi, F)
    if frac > coverage_tol:
        raise TableCoverageInsufficient(f"{frac:.3g} of the integrand mass lies outside the lattice")
    z_new, zd_new, I_inf = phase_series(F)
    # v from the tabulated kernels
    nxo = xi.size
    G = tables.G_tilde.reshape(nt - 1, nxo * N, N * yi.size)
    Fy = np.swapaxes(F[:, yi], 1, 2).reshape(nt, N * yi.size) if N > 1 else F[:, yi, 0]
    W = np.repeat(wy[None, :], N, axis=0).reshape(-1) if N > 1 else wy
    v0y = (v0xi[yi].T.reshape(-1) if N > 1 else v0xi[yi, 0]) * W
    Fw = Fy * W[None, :]
    vn = np.zeros((nt, nxo * N))
    vn[0] = v0xi[xi].reshape(-1)
    vn[1:] = np.einsum("tab,b->ta", G, v0y)
    Fx = F[:, xi].reshape(nt, -1)
    for k in range(1, nt):
        vn[k] += 0.5 * ds * Fx[k]
    # trapezoid in s: the node s_j = t_k (identity kernel) and s_0 carry half weight
    for m in range(1, nt):
        contrib = Fw[: nt - m] @ G[m - 1].T  # (nt-m, nxo*N)
        wts = np.full(nt - m, ds)
        wts[0] = 0.5 * ds
        vn[m:] += wts[:, None] * contrib
    vn = vn.reshape(nt, nxo, N)
    vdo = vd[:, xi]
    upto = times[-1] if check_until is None else check_until
    sel = (times > 0) & (times <= upto + 1e-12)
    num = np.sqrt(np.sum((vn[sel] - vdo[sel]) ** 2))
    den = np.sqrt(np.sum(vdo[sel] ** 2))
    res_a = float(num / den) if den > 0 else float(num)
    zs_new = _zeta_pair(zeta_star_prev) - z_new[0]
    fp = float(max(np.max(np.abs(z_new - z_prev)), abs(z_new[0, 0])))
    tail = _tail_bound(times, I_inf[:, 0])
    return IterationResult(times.copy(), tables.x_out + qs, vn, vdo, z_new, zd_new, zs_new,
                           res_a, fp, tail, qs)


def iterate_map(profile, v0, tables, n=3, zeta_star0=(0.0, 0.0), tol=None, **kw):
    """Apply the map ``n`` times (or until the fixed-point distance drops
    below ``tol``), feeding each output phase back in."""
    zeta = None
    zs = np.asarray(zeta_star0, float)
    out = []
    for _ in range(n):
        r = apply_iteration_map(profile, v0, zeta, zs, tables, **kw)
        out.append(r)
        zeta = (r.zeta, r.zeta_dot)
        zs = r.zeta_star
        if tol is not None and r.fixed_point_distance < tol:
            break
    return out
