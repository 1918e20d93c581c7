"""Green's distribution of the linearized equation: numerics and structure.

The Green's distribution ``G(x, t; y, s)`` solves ``v_t = v_xx - (A v)_x``
with ``v(s) = delta_y``.  This module provides

* the damped heat kernel ``G_0`` and the parametrix corrections ``G_j``,
* numerical columns ``G(., t; y, s)`` from a mollified delta,
* the projection coefficients ``pi_1, pi_2`` built from error functions,
* the splitting ``G = E_1 + E_2 + G~`` and template envelopes bounding ``G~``,
* quadrature checks of the convolution estimates those templates satisfy.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erfc

from .errors import (EmptyRegion, FitIllConditioned,
                     QuadratureBudgetExceeded)
from .pde_core import evolve_linearized

MOLLIFIER_CELLS = 4.0
PARAMETRIX_BUDGET = 2e9
SQRT_PI = np.sqrt(np.pi)


# --- closed-form kernels ---------------------------------------------------------

def g0_kernel(x, t, y, s, damping=1.0):
    """Damped heat kernel ``exp(-(x-y)^2/4(t-s) - c(t-s)) / sqrt(4 pi (t-s))``."""
    tau = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("g0_kernel needs t > s")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return np.exp(-d * d / (4.0 * tau) - damping * tau) / np.sqrt(4.0 * np.pi * tau)


def errfn(z):
    """``(1/sqrt(pi)) int_{-inf}^z exp(-xi^2) d xi``."""
    return 0.5 * erfc(-np.asarray(z, dtype=float))


def mollifier_age(grid, width=None):
    """Heat-kernel age ``eps = w^2/2`` of the unit-mass Gaussian of width ``w``."""
    w = MOLLIFIER_CELLS * grid.dx if width is None else float(width)
    if w < 2.0 * grid.dx - 1e-15:
        raise ValueError("mollifier width must be at least 2 dx")
    return 0.5 * w * w


def _fft_wavenumbers(grid):
    return 2.0 * np.pi * np.fft.fftfreq(grid.nx, grid.dx)


def _frozen_kernel(grid, A, ys, eps, damping=0.0):
    """Frozen-coefficient short-time kernel at age ``eps`` for sources ``ys``.

    Returns shape ``(nx, N, N, len(ys))``: the solution of
    ``v_t = v_xx - A v_x - c v`` started from ``delta_y I``.  ``A`` has
    shape ``(len(ys), N, N)``.
    """
    k = _fft_wavenumbers(grid)
    x0 = grid.x[0]
    lam, R = np.linalg.eig(A)
    Rinv = np.linalg.inv(R)
    # (nk, ny, N): exp(-i k a_j eps)
    ph = np.exp(-1j * k[:, None, None] * lam[None, :, :] * eps)
    prop = np.einsum("yij,kyj,yjl->kyil", R, ph, Rinv)
    shift = np.exp(-1j * k[:, None] * (np.asarray(ys)[None, :] - x0))
    hat = (np.exp(-(k * k + damping) * eps)[:, None] * shift)[:, :, None, None] * prop / grid.dx
    out = np.fft.ifft(hat, axis=0).real
    return np.moveaxis(out, 1, -1)


# --- numerical Green's columns ---------------------------------------------------

@dataclass
class GreenColumn:
    """``values[m, :, i, c] = G_ic(x, times[m]; y, s)`` for one source point."""
    y: float
    s: float
    times: np.ndarray
    x: np.ndarray
    values: np.ndarray
    width: float
    eps: float

    @property
    def tau(self):
        return self.times - self.s

    @property
    def N(self):
        return self.values.shape[-1]


def greens_columns(coeffs, ys, s, t_grid, grid, width=None):
    """Columns for several sources at once; see :func:`greens_column`."""
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    w = MOLLIFIER_CELLS * grid.dx if width is None else float(width)
    eps = mollifier_age(grid, w)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < s + eps - 1e-12) or np.any(np.diff(t_grid) <= 0):
        raise ValueError("output times must increase and exceed s + mollifier age")
    edge = grid.L - 8.0 * w
    if np.any(np.abs(ys) > edge):
        raise ValueError("source points must lie in the interior")
    N = coeffs.N
    idx = np.clip(np.searchsorted(grid.x, ys), 0, grid.nx - 1)
    A = coeffs.matrix(s)[idx]
    U0 = _frozen_kernel(grid, A, ys, eps, coeffs.damping)  # (nx, N, N, ny)
    U0 = U0.reshape(grid.nx, N, N * ys.size)
    states = evolve_linearized(coeffs, U0, s + eps, t_grid[-1], grid, times=t_grid)
    states = np.asarray(states).reshape(t_grid.size, grid.nx, N, N, ys.size)
    return [GreenColumn(float(yv), float(s), t_grid.copy(), grid.x, states[..., j].copy(), w, eps)
            for j, yv in enumerate(ys)]


def greens_column(coeffs, y, s, t_grid, grid, width=None):
    """Evolve a mollified delta at ``(y, s)`` through the times ``t_grid``.

    The delta is replaced by the frozen-coefficient heat kernel of age
    ``eps = w^2/2`` (a unit-mass Gaussian of width ``w``, default ``4 dx``,
    transported by ``A(y, s)``), which is the exact short-time solution for
    locally constant coefficients; evolution then starts at ``s + eps``.

    Returns
    -------
    GreenColumn
    """
    return greens_columns(coeffs, [y], s, t_grid, grid, width)[0]


def column_mass(column, dx):
    """Trapezoid mass of every component, shape ``(nt, N, N)``."""
    return np.trapezoid(column.values, dx=dx, axis=1)


# --- parametrix ------------------------------------------------------------------

@dataclass
class ParametrixTables:
    """``G[j, m]`` is ``G_j(., s + tau[m]; y, s)`` with shape ``(nx, N, N)``."""
    y: float
    s: float
    tau: np.ndarray
    x: np.ndarray
    G: np.ndarray
    nodes: int


def _phi(z):
    """``phi1(z) = (e^z - 1)/z`` and ``phi2(z) = (e^z - 1 - z)/z^2`` (stable)."""
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    e = np.exp(zs)
    p1 = np.where(small, 1.0 + z / 2.0 + z * z / 6.0, (e - 1.0) / zs)
    p2 = np.where(small, 0.5 + z / 6.0 + z * z / 24.0, (e - 1.0 - zs) / (zs * zs))
    return p1, p2


def _time_nodes(tau0, tau_out, dmax, ratio=1.15):
    nodes = [tau0]
    h = tau0 * (ratio - 1.0)
    while nodes[-1] < tau_out[-1] - 1e-14:
        h = min(h * ratio, dmax)
        nxt = nodes[-1] + h
        pending = tau_out[tau_out > nodes[-1] + 1e-12]
        if pending.size and nxt >= pending[0] - 1e-12:
            nxt = pending[0]
        nodes.append(min(nxt, tau_out[-1]))
    return np.array(nodes)


def parametrix_recursion(coeffs, j_max, source, grid, tau_out, dt_max=0.01, width=None,
                         budget=PARAMETRIX_BUDGET):
    """Parametrix corrections ``G_0..G_{j_max}`` for the source ``(y, s)``.

    ``G_0`` is the damped heat kernel and
    ``(d_t - d_xx + 1) G_j = (1 - d_x A) G_{j-1}``, ``G_j(s) = 0``.  The
    Duhamel integrals are advanced with the second-order exponential
    integrator (exact heat propagator in Fourier space, forcing linear in
    time over a step) on a time grid refined geometrically near ``s``.
    Integration starts at the mollifier age ``eps``, where the corrections
    take their frozen-coefficient values ``eps^j/j! (1 - A(y) d_x)^j G_0``.

    Parameters
    ----------
    coeffs : PeriodicCoefficientField
    j_max : int
        At most 3.
    source : tuple
        ``(y, s)``.
    tau_out : array_like
        Output ages ``t - s``.

    Raises
    ------
    QuadratureBudgetExceeded
        If the space-time work estimate exceeds ``budget``.
    """
    if not 0 <= j_max <= 3:
        raise ValueError("j_max must be between 0 and 3")
    y, s = map(float, source)
    tau_out = np.sort(np.asarray(tau_out, dtype=float))
    eps = mollifier_age(grid, width)
    if tau_out[0] < eps:
        raise ValueError("output ages must exceed the mollifier age")
    nodes = _time_nodes(eps, tau_out, dt_max)
    N, nx = coeffs.N, grid.nx
    work = nodes.size * nx * N * N * (j_max + 1) * np.log2(nx)
    if work > budget:
        raise QuadratureBudgetExceeded(f"parametrix needs ~{work:.3g} operations")
    k = _fft_wavenumbers(grid)
    lam = -(k * k + 1.0)
    x = grid.x
    I = np.eye(N)

    def g0_hat(tau):
        return np.fft.fft(g0_kernel(x, tau, y, 0.0)[:, None, None] * I, axis=0)

    def forcing_hat(Ghat, t):
        A = coeffs.matrix(t)
        G = np.fft.ifft(Ghat, axis=0).real
        AG = np.fft.fft(np.einsum("xij,xjc->xic", A, G), axis=0)
        return Ghat - 1j * k[:, None, None] * AG

    idx = np.clip(np.searchsorted(x, y), 0, nx - 1)
    Ay = coeffs.matrix(s)[idx]
    step_op = I[None] - 1j * k[:, None, None] * Ay[None]
    cur = [g0_hat(eps)]
    op = np.broadcast_to(I, (nx, N, N)).copy()
    for j in range(1, j_max + 1):
        op = np.einsum("kij,kjl->kil", op, step_op)
        cur.append(eps ** j / np.prod(np.arange(1, j + 1)) * np.einsum("kij,kjc->kic", op, cur[0]))
    F = [forcing_hat(cur[j], s + eps) for j in range(j_max)]
    out = np.zeros((j_max + 1, tau_out.size, nx, N, N))
    oi = 0

    def record(tau):
        nonlocal oi
        while oi < tau_out.size and abs(tau_out[oi] - tau) < 1e-10:
            for j in range(j_max + 1):
                out[j, oi] = np.fft.ifft(cur[j], axis=0).real
            oi += 1

    record(eps)
    for n in range(nodes.size - 1):
        h = nodes[n + 1] - nodes[n]
        e = np.exp(lam * h)[:, None, None]
        p1, p2 = _phi(lam * h)
        p1, p2 = p1[:, None, None], p2[:, None, None]
        new = [g0_hat(nodes[n + 1])]
        Fn = []
        for j in range(1, j_max + 1):
            F_next = forcing_hat(new[j - 1], s + nodes[n + 1])
            new.append(e * cur[j] + h * p1 * F[j - 1] + h * p2 * (F_next - F[j - 1]))
            Fn.append(F_next)
        cur, F = new, Fn
        record(nodes[n + 1])
    return ParametrixTables(y, s, tau_out, x, out, nodes.size)


def parametrix_scaling(tables, window=(0.5, 4.0), rate=1.0):
    """Log-log slopes of ``sup_x |G_j| exp(rate tau)`` against ``tau``.

    Returns an array of slopes indexed by ``j``.
    """
    tau = tables.tau
    sel = (tau >= window[0] - 1e-12) & (tau <= window[1] + 1e-12)
    if np.count_nonzero(sel) < 3:
        raise ValueError("fewer than three output ages in the fit window")
    slopes = []
    for j in range(tables.G.shape[0]):
        sup = np.max(np.abs(tables.G[j][sel]), axis=(1, 2, 3)) * np.exp(rate * tau[sel])
        slopes.append(np.polyfit(np.log(tau[sel]), np.log(sup), 1)[0])
    return np.array(slopes)


# --- projection coefficients pi ----------------------------------------------------

@dataclass
class LCoefficients:
    """Coefficient rows ``l_{j,in}(y)`` of the projections.

    ``minus`` holds rows for sources ``y <= 0`` with shape
    ``(ny_minus, n_in_minus, 2, N)`` on the nodes ``y_minus``; likewise
    ``plus``.  A single node means a constant coefficient.  Index 1 selects
    ``j = 1, 2``.
    """
    y_minus: np.ndarray
    minus: np.ndarray
    y_plus: np.ndarray
    plus: np.ndarray

    @classmethod
    def constant(cls, minus, plus):
        minus = np.asarray(minus, dtype=float)
        plus = np.asarray(plus, dtype=float)
        return cls(np.zeros(1), minus[None], np.zeros(1), plus[None])

    def _eval(self, nodes, vals, y, derivative):
        if nodes.size == 1:
            v = np.broadcast_to(vals[0], np.shape(y) + vals.shape[1:])
            return np.zeros_like(v) if derivative else v
        sp = CubicSpline(nodes, vals, axis=0, extrapolate=True)
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, nodes[0], nodes[-1])
        if not derivative:
            return sp(yc)
        # held constant beyond the end nodes
        inside = ((y >= nodes[0]) & (y <= nodes[-1])).reshape(y.shape + (1,) * (vals.ndim - 1))
        return np.where(inside, sp(yc, 1), 0.0)

    def evaluate(self, side, y, derivative=False):
        if side == "minus":
            return self._eval(self.y_minus, self.minus, y, derivative)
        return self._eval(self.y_plus, self.plus, y, derivative)


def _incoming(chardata, side):
    cd = chardata[0] if side == "minus" else chardata[1]
    idx = np.flatnonzero(cd.incoming)
    return cd.speeds[idx], cd.Lt[idx]


def _bracket(y, a, tau, order=(0, 0)):
    """``errfn((y + a tau)/D) - errfn((y - a tau)/D)``, ``D = sqrt(4(tau+1))``,
    for the mirrored source ``y <= 0`` and incoming speed ``a > 0``.

    ``order = (1, 0)`` returns the y-derivative, ``(0, 1)`` the tau-derivative,
    ``(1, 1)`` the mixed derivative.
    """
    D = 2.0 * np.sqrt(tau + 1.0)
    z1 = (y + a * tau) / D
    z2 = (y - a * tau) / D
    g1 = np.exp(-z1 * z1) / SQRT_PI
    g2 = np.exp(-z2 * z2) / SQRT_PI
    if order == (0, 0):
        return errfn(z1) - errfn(z2)
    dz1_dt = a / D - 2.0 * z1 / D ** 2
    dz2_dt = -a / D - 2.0 * z2 / D ** 2
    if order == (1, 0):
        return (g1 - g2) / D
    if order == (0, 1):
        return g1 * dz1_dt - g2 * dz2_dt
    # d/dtau [(g1 - g2)/D]
    return (-2.0 * z1 * g1 * dz1_dt + 2.0 * z2 * g2 * dz2_dt) / D - (g1 - g2) * 2.0 / D ** 3


@dataclass
class PiValues:
    """Projections and their derivatives, each of shape ``(..., 2, N)``."""
    pi: np.ndarray
    pi_t: np.ndarray
    pi_y: np.ndarray
    pi_yt: np.ndarray
    pi_inf: np.ndarray
    pi_inf_y: np.ndarray


def pi_functions(chardata, l_coeffs, y, s, t):
    """``pi_j(y, s, t)`` for ``j = 1, 2`` with analytic t- and y-derivatives.

    For ``y <= 0``
    ``pi_j = sum_in [errfn((y + a tau)/D) - errfn((y - a tau)/D)] l_{j,in}(y)^T``
    with ``tau = t - s``, ``D = sqrt(4 (tau + 1))`` and the sum over
    incoming speeds ``a > 0`` at ``u_-``; sources ``y > 0`` use the mirror
    image (incoming speeds ``a < 0`` at ``u_+``, ``y -> -y``).

    Parameters
    ----------
    chardata : tuple of CharacteristicData
        ``(minus, plus)``.
    l_coeffs : LCoefficients
    y, s, t : array_like
        Broadcast together; ``t >= s``.

    Returns
    -------
    PiValues
    """
    y, s, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y, s, t)))
    tau = t - s
    if np.any(tau < 0):
        raise ValueError("pi_functions needs t >= s")
    N = chardata[0].N
    shape = y.shape + (2, N)
    res = {k: np.zeros(shape) for k in ("pi", "pi_t", "pi_y", "pi_yt", "pi_inf", "pi_inf_y")}
    for side, mask, sgn in (("minus", y <= 0, 1.0), ("plus", y > 0, -1.0)):
        if not np.any(mask):
            continue
        speeds, _ = _incoming(chardata, side)
        ym = sgn * y[mask]
        tm = tau[mask]
        l = l_coeffs.evaluate(side, y[mask])
        ly = l_coeffs.evaluate(side, y[mask], derivative=True)
        for i, a in enumerate(speeds):
            am = sgn * a
            b = _bracket(ym, am, tm)[:, None, None]
            by = sgn * _bracket(ym, am, tm, (1, 0))[:, None, None]
            bt = _bracket(ym, am, tm, (0, 1))[:, None, None]
            byt = sgn * _bracket(ym, am, tm, (1, 1))[:, None, None]
            li, lyi = l[:, i], ly[:, i]
            res["pi"][mask] += b * li
            res["pi_t"][mask] += bt * li
            res["pi_y"][mask] += by * li + b * lyi
            res["pi_yt"][mask] += byt * li + bt * lyi
            res["pi_inf"][mask] += li
            res["pi_inf_y"][mask] += lyi
    return PiValues(**res)


def pi_envelope_check(chardata, l_coeffs, ys, taus, speeds=None, Ms=(2.0, 4.0, 8.0)):
    """Smallest ``C`` with ``|pi - pi_inf| <= C errfn((|y| - a tau)/(M sqrt(tau)))``.

    Scans ``a`` over fractions of the slowest incoming speed and ``M`` over
    ``Ms``; returns ``(C_min, a, M)``.
    """
    Y, T = np.meshgrid(np.asarray(ys, float), np.asarray(taus, float), indexing="ij")
    if np.any(T <= 0):
        raise ValueError("envelope check needs tau > 0")
    pv = pi_functions(chardata, l_coeffs, Y, 0.0, T)
    num = np.max(np.abs(pv.pi - pv.pi_inf), axis=(-2, -1))
    if speeds is None:
        a_min = min(np.min(np.abs(_incoming(chardata, side)[0])) for side in ("minus", "plus"))
        speeds = a_min * np.array([0.5, 0.75, 1.0])
    best = (np.inf, None, None)
    for a in speeds:
        for M in Ms:
            env = errfn((np.abs(Y) - a * T) / (M * np.sqrt(T)))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(num > 0, num / env, 0.0)
            C = float(np.max(r))
            if C < best[0]:
                best = (C, float(a), float(M))
    return best


# --- decomposition ---------------------------------------------------------------

@dataclass
class GreenDecomposition:
    """``G = E1 + E2 + G~`` for one source column.

    ``E1[m, :, i, c] = u_x(x, t_m)_i pi_1(y, s, t_m)_c`` and likewise ``E2``
    with ``u_t``; ``G_tilde`` is the residual ``G - E1 - E2``.
    """
    column: GreenColumn
    E1: np.ndarray
    E2: np.ndarray
    G_tilde: np.ndarray
    l_rows: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray
    fit_residual: float
    side: str

    @property
    def raw(self):
        return self.column.values

    def reconstruct(self):
        return self.E1 + self.E2 + self.G_tilde


def _profile_fields(profile, t):
    """``(u_x, u_t)`` on the profile grid at time ``t`` (shape ``(nx, N)``)."""
    nt = profile.ux.shape[0]
    m = int(round((t % profile.period) / profile.period * nt)) % nt
    return profile.ux[m], profile.ut[m]


def decompose_green(column, profile, chardata, window_rel=1e-3, cond_max=1e8):
    """Split a column into the translation parts and the remainder.

    The coefficient rows ``l_{j,in}(y, s)`` are fitted at the final time by
    least squares of ``G(., t_f; y, s)`` against ``u_x`` (and ``u_t`` unless
    it vanishes) on the nodes where ``|u_x| >= window_rel max |u_x|``; the
    fitted row is divided among the incoming modes along their left
    eigenvectors, weighted by the error-function brackets at ``t_f``.

    Raises
    ------
    FitIllConditioned
        If the least-squares or modal systems are nearly singular.
    """
    tf = column.times[-1]
    if tf - column.s < 10.0 - 1e-9:
        raise ValueError("decomposition needs columns computed to t - s >= 10")
    N = column.N
    side = "minus" if column.y <= 0 else "plus"
    ux, ut = _profile_fields(profile, tf)
    mag = np.linalg.norm(ux, axis=1)
    win = mag >= window_rel * mag.max()
    cols = [ux[win].ravel()]
    has_ut = np.max(np.abs(ut)) > 1e-12 * max(np.max(np.abs(ux)), 1.0)
    if has_ut:
        cols.append(ut[win].ravel())
    B = np.stack(cols, axis=1)
    sv = np.linalg.svd(B, compute_uv=False)
    if sv[-1] <= sv[0] / cond_max:
        raise FitIllConditioned("translation modes are nearly parallel on the fit window")
    rhs = column.values[-1][win].reshape(-1, N)
    coef, res, *_ = np.linalg.lstsq(B, rhs, rcond=None)
    fit_residual = float(np.linalg.norm(B @ coef - rhs) / max(np.linalg.norm(rhs), 1e-300))
    speeds, Lt = _incoming(chardata, side)
    sgn = 1.0 if side == "minus" else -1.0
    ym = sgn * column.y
    brackets = np.array([_bracket(ym, sgn * a, tf - column.s) for a in speeds])
    # row_j = sum_in brackets_in * gamma_{j,in} * Lt_in
    Mmat = (brackets[:, None] * Lt).T  # (N, n_in)
    svm = np.linalg.svd(Mmat, compute_uv=False)
    if svm.size == 0 or svm[-1] <= svm[0] / cond_max:
        raise FitIllConditioned("incoming modes cannot be separated at the fit time")
    l_rows = np.zeros((speeds.size, 2, N))
    for j in range(coef.shape[0]):
        gamma = np.linalg.lstsq(Mmat, coef[j], rcond=None)[0]
        l_rows[:, j] = gamma[:, None] * Lt
    if side == "minus":
        lc = LCoefficients(np.zeros(1), l_rows[None], np.zeros(1), np.zeros((1, 0, 2, N)))
    else:
        lc = LCoefficients(np.zeros(1), np.zeros((1, 0, 2, N)), np.zeros(1), l_rows[None])
    pv = pi_functions(chardata, lc, column.y, column.s, column.times)
    pi1, pi2 = pv.pi[:, 0], pv.pi[:, 1]
    nt = column.times.size
    E1 = np.empty_like(column.values)
    E2 = np.zeros_like(column.values)
    for m in range(nt):
        uxm, utm = _profile_fields(profile, column.times[m])
        E1[m] = uxm[:, :, None] * pi1[m][None, None, :]
        if has_ut:
            E2[m] = utm[:, :, None] * pi2[m][None, None, :]
    G_tilde = column.values - E1 - E2
    return GreenDecomposition(column, E1, E2, G_tilde, l_rows, pi1, pi2, fit_residual, side)


def fit_l_coefficients(decomps, N):
    """Collect per-column rows into spline-interpolated :class:`LCoefficients`."""
    def stack(side):
        ds = sorted((d for d in decomps if d.side == side), key=lambda d: d.column.y)
        if not ds:
            return np.zeros(1), np.zeros((1, 0, 2, N))
        ys = np.array([d.column.y for d in ds])
        return ys, np.stack([d.l_rows for d in ds])
    ym, lm = stack("minus")
    yp, lp = stack("plus")
    return LCoefficients(ym, lm, yp, lp)


# --- templates ---------------------------------------------------------------------

def _pos(x):
    return np.maximum(x, 0.0)


@dataclass
class TemplateBundle:
    """Decay envelopes for a Lax shock with the given characteristic census."""
    speeds_minus: np.ndarray
    speeds_plus: np.ndarray
    out_minus: np.ndarray
    out_plus: np.ndarray
    in_minus: np.ndarray
    in_plus: np.ndarray
    M: float
    eta: float

    def theta_gauss(self, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        out = np.zeros(x.shape)
        tt = np.maximum(t, 1e-300)
        for a in np.concatenate([self.out_minus, self.out_plus]):
            out += np.exp(-(x - a * t) ** 2 / (self.M * tt)) / np.sqrt(1.0 + t)
        return out

    def theta_inner(self, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        out = np.zeros(x.shape)
        for a in np.concatenate([self.out_minus, self.out_plus]):
            out += 1.0 / np.sqrt(1.0 + np.abs(x - a * t))
        return out / np.sqrt(1.0 + np.abs(x) + t)

    def theta_outer(self, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        a1, aN = self.speeds_minus[0], self.speeds_plus[-1]
        rt = np.sqrt(t)
        return ((1.0 + np.abs(x - a1 * t) + rt) ** -1.5
                + (1.0 + np.abs(x - aN * t) + rt) ** -1.5)

    def chi(self, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        lo, hi = self.speeds_minus[0] * t, self.speeds_plus[-1] * t
        return ((x >= lo) & (x <= hi)).astype(float)

    def theta_sum(self, x, t):
        return self.theta_gauss(x, t) + self.theta_inner(x, t) + self.theta_outer(x, t)

    def pointwise(self, x, t):
        """``theta_gauss + chi theta_inner + (1 - chi) theta_outer``."""
        c = self.chi(x, t)
        return self.theta_gauss(x, t) + c * self.theta_inner(x, t) + (1.0 - c) * self.theta_outer(x, t)

    def Theta(self, y, s):
        s = np.asarray(s, float)
        th = self.theta_sum(y, s)
        with np.errstate(divide="ignore"):
            w = np.sqrt(1.0 + s) / np.sqrt(s)
        return w * th * th + th / (1.0 + s)

    def Phi1(self, y, s):
        return np.exp(-self.eta * np.abs(y)) * self.theta_sum(y, s) / np.sqrt(1.0 + np.asarray(s, float))

    def Phi2(self, y, s):
        return np.exp(-self.eta * np.abs(y)) * (1.0 + np.asarray(s, float)) ** -1.5

    def remainder_bound(self, x, tau, y, derivative=False):
        """Envelope of ``|d_y^alpha G~(x, s + tau; y, s)|`` with unit constant.

        ``y <= 0`` uses the formula below; ``y > 0`` its mirror image
        ``x -> -x``, ``y -> -y``, ``a^-_j <-> -a^+_{N+1-j}``.
        """
        x, tau, y = np.broadcast_arrays(*(np.asarray(v, float) for v in (x, tau, y)))
        out = np.empty(x.shape)
        neg = y <= 0
        out[neg] = self._bound_left(x[neg], tau[neg], y[neg], self.speeds_minus, self.out_minus,
                                    self.in_minus, self.out_plus, derivative)
        pos = ~neg
        if np.any(pos):
            out[pos] = self._bound_left(-x[pos], tau[pos], -y[pos], -self.speeds_plus[::-1],
                                        -self.out_plus, -self.in_plus, -self.out_minus, derivative)
        return out

    def _bound_left(self, x, tau, y, sp_minus, out_minus, in_minus, out_plus, derivative):
        M, eta = self.M, self.eta
        rt = np.sqrt(tau)
        out = np.exp(-eta * (np.abs(x - y) + tau))
        lead = rt ** -1 if not derivative else rt ** -1 * (1.0 / rt + np.exp(-eta * np.abs(y)))
        acc = np.zeros_like(x)
        for a in sp_minus:
            acc += np.exp(-(x - y - a * tau) ** 2 / (M * tau)) * np.exp(-eta * _pos(x))
        for ao in out_minus:
            for ai in in_minus:
                on = np.abs(ao * tau) >= np.abs(y)
                arg = x - ai * (tau - np.abs(y / ao))
                acc += on * np.exp(-arg ** 2 / (M * tau)) * np.exp(-eta * _pos(x))
        for ai in in_minus:
            for ao in out_plus:
                on = np.abs(ai * tau) >= np.abs(y)
                arg = x - ao * (tau - np.abs(y / ai))
                acc += on * np.exp(-arg ** 2 / (M * tau)) * np.exp(-eta * _pos(-x))
        return out + lead * acc


def template_bundle(chardata, M, eta):
    """Templates for the census of ``chardata = (minus, plus)``."""
    mi, pl = chardata
    if M <= 0 or eta <= 0:
        raise ValueError("M and eta must be positive")
    return TemplateBundle(mi.speeds.copy(), pl.speeds.copy(),
                          mi.speeds[mi.outgoing], pl.speeds[pl.outgoing],
                          mi.speeds[mi.incoming], pl.speeds[pl.incoming], float(M), float(eta))


@dataclass
class TemplateRegion:
    """Sample window for template fits: ages ``tau`` and positions ``x``."""
    tau_min: float = 1.0
    tau_max: float = 25.0
    x_max: Optional[float] = None
    noise_floor: float = 1e-9


@dataclass
class TemplateCheck:
    C_min: float
    violation_count: int
    points: int
    M: float
    eta: float
    worst: tuple = field(default_factory=tuple)


def check_template_bound(decomps, bundle, region, ceiling=None):
    """``C_min = sup |G~| / bound`` over the region, plus ceiling violations.

    Entries with ``|G~|`` below ``noise_floor * max |G|`` (round-off level)
    are skipped.

    Raises
    ------
    EmptyRegion
        If no table entry falls inside the region.
    """
    if isinstance(decomps, GreenDecomposition):
        decomps = [decomps]
    if region.tau_min < 0.5:
        raise ValueError("region must exclude tau < 0.5 (mollifier transient)")
    C, viol, pts, worst = 0.0, 0, 0, ()
    ratios = []
    for d in decomps:
        col = d.column
        tau = col.tau
        tsel = (tau >= region.tau_min - 1e-12) & (tau <= region.tau_max + 1e-12)
        xmax = region.x_max if region.x_max is not None else col.x[-1] - 5.0
        xsel = np.abs(col.x) <= xmax
        if not np.any(tsel) or not np.any(xsel):
            continue
        Gt = np.max(np.abs(d.G_tilde[tsel][:, xsel]), axis=(-2, -1))
        scale = np.max(np.abs(d.raw[tsel][:, xsel]))
        T, X = np.meshgrid(tau[tsel], col.x[xsel], indexing="ij")
        bnd = bundle.remainder_bound(X, T, np.full_like(X, col.y))
        keep = Gt > region.noise_floor * scale
        pts += int(np.count_nonzero(keep))
        with np.errstate(divide="ignore", over="ignore"):
            r = np.where(keep, Gt / bnd, 0.0)
        ratios.append(r)
        i = np.unravel_index(np.argmax(r), r.shape)
        if r[i] > C:
            C = float(r[i])
            worst = (col.y, float(T[i]), float(X[i]))
    if pts == 0:
        raise EmptyRegion("no table entries inside the template region")
    if ceiling is not None:
        viol = int(sum(np.count_nonzero(r > ceiling) for r in ratios))
    return TemplateCheck(C, viol, pts, bundle.M, bundle.eta, worst)


def fit_template_constants(decomps, chardata, region, Ms=(25.0, 50.0, 100.0, 200.0),
                           etas=None):
    """Joint scan over ``M`` and ``eta`` minimizing ``C_min``."""
    if etas is None:
        etas = np.geomspace(0.02, 1.0, 9)
    best = None
    for M in Ms:
        for eta in etas:
            chk = check_template_bound(decomps, template_bundle(chardata, M, eta), region)
            if best is None or chk.C_min < best.C_min:
                best = chk
    return best


# --- convolution estimates ---------------------------------------------------------

CONVOLUTION_CHECKS = {
    # name: (integrand, predicted exponent of (1+t))
    "linear_pi": 0.0,
    "linear_pi_t": -1.5,
    "linear_pi_diff": -0.5,
    "nonlinear_pi_yt": -1.0,
    "nonlinear_pi_y_diff": -0.5,
    "nonlinear2_pi_t": -1.5,
    "nonlinear2_pi_diff": -1.5,
}


@dataclass
class ConvolutionReport:
    which: str
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    ratio_sup: float
    slope: float
    predicted: float


def _y_quadrature(y_max, n):
    # nodes concentrated near y = 0 where the weights vary fastest
    u = np.linspace(-1.0, 1.0, n)
    return y_max * np.sinh(4.0 * u) / np.sinh(4.0)


def convolution_check(bundle, chardata, l_coeffs, which, times, y_max=None, ny=4001,
                      ns=400, budget=5e7):
    """Quadrature of the convolution integrals of the projection terms.

    ``which`` is one of :data:`CONVOLUTION_CHECKS`.  The single integrals
    (``linear_*``) are

    * ``int |pi(y,0,t)| (1+|y|)^{-3/2} dy``            (bounded),
    * ``int |pi_t(y,0,t)| (1+|y|)^{-3/2} dy``          (``(1+t)^{-3/2}``),
    * ``int |pi(y,0,t) - pi(y,0,inf)| (1+|y|)^{-3/2} dy`` (``(1+t)^{-1/2}``;
      the algebraic tail beyond ``y_max`` is added in closed form),

    and the double integrals over ``0 < s < t`` use the weights ``Theta``
    (``nonlinear_*``) or ``Phi_2`` (``nonlinear2_*``).  Returns the values,
    the sup of LHS/RHS with ``RHS = (1+t)^p`` and the fitted log-log slope.

    Raises
    ------
    QuadratureBudgetExceeded
        If the quadrature would need more than ``budget`` integrand samples.
    """
    if which not in CONVOLUTION_CHECKS:
        raise ValueError(f"unknown check {which!r}")
    times = np.asarray(times, dtype=float)
    p = CONVOLUTION_CHECKS[which]
    if y_max is None:
        amax = max(np.max(np.abs(bundle.speeds_minus)), np.max(np.abs(bundle.speeds_plus)))
        y_max = 2.0 * amax * times.max() + 50.0
    y = _y_quadrature(y_max, ny)
    double = not which.startswith("linear")
    cost = ny * times.size * (ns if double else 1)
    if cost > budget:
        raise QuadratureBudgetExceeded(f"{cost:.3g} samples exceed the budget {budget:.3g}")
    lhs = np.zeros(times.size)
    w_lin = (1.0 + np.abs(y)) ** -1.5

    def mag(a):
        return np.max(np.abs(a), axis=(-2, -1))

    for i, t in enumerate(times):
        if not double:
            pv = pi_functions(chardata, l_coeffs, y, 0.0, t)
            f = {"linear_pi": mag(pv.pi), "linear_pi_t": mag(pv.pi_t),
                 "linear_pi_diff": mag(pv.pi - pv.pi_inf)}[which]
            lhs[i] = np.trapezoid(f * w_lin, y)
            if which == "linear_pi_diff":
                # beyond |y| = y_max the bracket vanishes and |pi - pi_inf| = |pi_inf|
                tail = sum(mag(pi_functions(chardata, l_coeffs, v, 0.0, t).pi_inf)
                           for v in (-y_max, y_max))
                lhs[i] += 2.0 * tail * (1.0 + y_max) ** -0.5
            continue
        # graded s-nodes resolving both endpoints
        u = np.linspace(0.0, 1.0, ns)
        s = t * (3 * u ** 2 - 2 * u ** 3)
        S, Y = np.meshgrid(s, y, indexing="ij")
        pv = pi_functions(chardata, l_coeffs, Y, S, t)
        if which.startswith("nonlinear2"):
            wgt = bundle.Phi2(Y, S)
        else:
            wgt = bundle.Theta(Y, np.maximum(S, 1e-12))
        f = {"nonlinear_pi_yt": mag(pv.pi_yt),
             "nonlinear_pi_y_diff": mag(pv.pi_y - pv.pi_inf_y),
             "nonlinear2_pi_t": mag(pv.pi_t),
             "nonlinear2_pi_diff": mag(pv.pi - pv.pi_inf)}[which]
        inner = np.trapezoid(f * wgt, y, axis=1)
        lhs[i] = np.trapezoid(inner, s)
    rhs = (1.0 + times) ** p
    ratio = lhs / rhs
    pos = lhs > 0
    slope = float(np.polyfit(np.log1p(times[pos]), np.log(lhs[pos]), 1)[0]) if np.count_nonzero(pos) >= 2 else 0.0
    return ConvolutionReport(which, times, lhs, rhs, float(np.max(ratio)) if ratio.size else 0.0,
                             slope, p)
