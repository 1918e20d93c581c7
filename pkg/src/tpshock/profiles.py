"""Standing viscous shock profiles and time-periodic coefficient fields.

A standing profile solves ``u' = f(u) - f(u_-)``.  It is integrated in
deviation variables (``u - u_-`` on the left, ``u - u_+`` on the right) so
that the exponentially small tails keep full relative precision; this is
what makes tail-rate fits meaningful on large domains.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (DimensionMismatch, NoConnection, RHViolation,
                     TailNotResolved)
from .flux_models import characteristic_data

TWO_PI = 2.0 * np.pi
_RTOL = 1e-13


@dataclass
class ShockProfile:
    """Sampled standing shock ``u(x, t)`` over one period.

    ``values``, ``ux`` and ``ut`` have shape ``(nt, nx, N)``; a stationary
    profile has ``nt = 1`` and ``ut`` identically zero.  ``deviation`` holds
    ``u - u_-`` for ``x < 0`` and ``u - u_+`` for ``x >= 0`` at full relative
    precision.
    """
    model: object
    grid: object
    values: np.ndarray
    ux: np.ndarray
    ut: np.ndarray
    deviation: np.ndarray
    u_minus: np.ndarray
    u_plus: np.ndarray
    period: float = TWO_PI
    speed: float = 0.0
    eta: float = float("nan")
    residual: float = float("nan")
    evaluator: Optional[Callable] = field(default=None, repr=False)

    @property
    def x(self):
        return self.grid.x

    @property
    def N(self):
        return self.values.shape[-1]

    @property
    def stationary(self):
        return self.values.shape[0] == 1

    @property
    def jump(self):
        return self.u_plus - self.u_minus

    def at(self, x, derivative=False):
        """Profile (or ``u_x``) at arbitrary points ``x`` (stationary profiles)."""
        x = np.asarray(x, dtype=float)
        if self.evaluator is not None:
            return self.evaluator(x, derivative)
        src = self.ux[0] if derivative else self.values[0]
        return CubicSpline(self.x, src, axis=0)(x)

    def translate(self, q):
        """Values of ``u(x - q)`` on the grid."""
        return self.at(self.x - q)


def _connect_direction(model, state, sign):
    """Unit eigenvector of the one-dimensional unstable (sign=+1) or stable
    (sign=-1) manifold of ``u' = f(u) - f(state)`` at ``state``."""
    a, R = np.linalg.eig(model.f_u(state))
    a = a.real
    sel = np.flatnonzero(sign * a > 0)
    if sel.size != 1:
        return None, None
    j = sel[0]
    return a[j], R[:, j].real / np.linalg.norm(R[:, j].real)


def _half_solution(model, base, start_dev, x_end, x_eval):
    """Integrate ``d' = f(base + d) - f(base)`` from x=0 to ``x_end``."""
    def rhs(x, d):
        return model.flux_increment(base, d)

    sol = solve_ivp(rhs, (0.0, x_end), start_dev, method="DOP853", rtol=_RTOL,
                    atol=1e-300, dense_output=True)
    if not sol.success:
        raise NoConnection(f"profile integration failed: {sol.message}")
    return sol


def solve_stationary_profile(model, u_minus, u_plus, grid, margin=10.0):
    """Standing viscous profile connecting ``u_minus`` to ``u_plus``.

    The connection is one-dimensional for the supported configurations:
    scalar laws, and systems where either the unstable manifold of ``u_-``
    (``p = 1``) or the stable manifold of ``u_+`` (``p = N``) is a curve.
    That curve is shot from the end state in deviation variables up to the
    point where the first component reaches its midpoint, which becomes
    ``x = 0``; the other half is integrated from there toward the
    attracting end state.

    Raises
    ------
    RHViolation
        Zero jump or ``f(u_+) != f(u_-)``.
    NoConnection
        The trajectory does not reach the other end state within the domain.
    """
    um = np.atleast_1d(np.asarray(u_minus, dtype=float))
    up = np.atleast_1d(np.asarray(u_plus, dtype=float))
    N = model.N
    if um.shape != (N,) or up.shape != (N,):
        raise DimensionMismatch("end states must have length N")
    if np.allclose(um, up, rtol=0, atol=1e-14):
        raise RHViolation("zero jump: end states coincide")
    rh = np.max(np.abs(model.f(up) - model.f(um)))
    if rh > 1e-10 * max(1.0, np.max(np.abs(model.f(um)))):
        raise RHViolation(f"Rankine-Hugoniot defect {rh:.3g} for a standing shock")
    chardata = characteristic_data(model, um, up)
    p = chardata[0].p
    L = grid.L + margin
    mid1 = 0.5 * (um[0] + up[0])

    if N == 1:
        mid = np.array([mid1])
        left = _half_solution(model, um, mid - um, -L, None).sol
        right = _half_solution(model, up, mid - up, L, None).sol
    elif p == 1 or p == N:
        forward = p == 1
        base, other = (um, up) if forward else (up, um)
        lam, r = _connect_direction(model, base, 1 if forward else -1)
        if lam is None:
            raise NoConnection("connecting manifold is not one-dimensional")
        delta = 1e-6
        reached = None
        for s in (1.0, -1.0):
            def event(x, d, base=base):
                return base[0] + d[0] - mid1
            event.terminal = True
            span = 20.0 * L if forward else -20.0 * L
            sol = solve_ivp(lambda x, d: model.flux_increment(base, d), (0.0, span),
                            s * delta * r, method="DOP853", rtol=_RTOL, atol=1e-300,
                            events=event)
            if sol.status == 1 and sol.t_events[0].size:
                reached = (s, sol.t_events[0][0], sol.y_events[0][0])
                break
        if reached is None:
            raise NoConnection("shooting along the one-dimensional manifold missed the midpoint")
        s, x_mid, d_mid = reached
        mid = base + d_mid
        # shooting half, re-parametrized so that x = 0 is the midpoint
        shoot = solve_ivp(lambda x, d: model.flux_increment(base, d), (0.0, x_mid),
                          s * delta * r, method="DOP853", rtol=_RTOL, atol=1e-300,
                          dense_output=True)
        attract = _half_solution(model, other, mid - other, L if forward else -L, None).sol

        class _Shifted:
            def __init__(self, sol, shift, lam, v):
                self.sol, self.shift, self.lam, self.v = sol, shift, lam, v

            def __call__(self, x):
                xi = np.atleast_1d(x) + self.shift
                out = np.empty((self.v.size, xi.size))
                inside = xi * np.sign(self.shift) >= 0
                out[:, inside] = self.sol(xi[inside])
                # before the shooting start the tail is linear to O(delta^2)
                out[:, ~inside] = self.v[:, None] * np.exp(self.lam * xi[~inside])[None, :]
                return out

        shifted = _Shifted(shoot.sol, x_mid, lam, s * delta * r)
        if forward:
            left, right = shifted, attract
        else:
            left, right = attract, shifted
    else:
        raise NoConnection("profile connection is not one-dimensional for this shock")

    def half_eval(obj, x):
        if x.size == 0:
            return np.empty((0, N))
        return obj(x).T

    def evaluator(x, derivative=False):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty(x.shape + (N,))
        neg = x < 0
        dl = half_eval(left, x[neg])
        dr = half_eval(right, x[~neg])
        if derivative:
            out[neg] = model.flux_increment(um, dl)
            out[~neg] = model.flux_increment(up, dr)
        else:
            out[neg] = um + dl
            out[~neg] = up + dr
        return out

    def deviation(x):
        x = np.atleast_1d(x)
        out = np.empty(x.shape + (N,))
        neg = x < 0
        out[neg] = half_eval(left, x[neg])
        out[~neg] = half_eval(right, x[~neg])
        return out

    xg = grid.x
    values = evaluator(xg)
    ux = evaluator(xg, derivative=True)
    dev = deviation(xg)
    end_err = max(np.max(np.abs(values[0] - um)), np.max(np.abs(values[-1] - up)))
    if not np.all(np.isfinite(values)) or end_err > 1e-3:
        raise NoConnection(f"profile misses the end states by {end_err:.3g} within L")
    prof = ShockProfile(model=model, grid=grid, values=values[None], ux=ux[None],
                        ut=np.zeros((1,) + values.shape), deviation=dev[None],
                        u_minus=um, u_plus=up, evaluator=evaluator)
    prof.residual = profile_residual(prof)
    prof.eta = profile_tail_rate(prof)
    return prof


def profile_residual(profile, nodes=3):
    """Integral-form residual of ``u' = f(u) - f(u_-)`` per grid cell.

    Returns ``max_i |u_{i+1} - u_i - int_{x_i}^{x_{i+1}} (f(u) - f(u_-)) dx| / dx``
    with Gauss-Legendre quadrature of the continuous profile.
    """
    x = profile.x
    g, w = np.polynomial.legendre.leggauss(nodes)
    a, b = x[:-1], x[1:]
    pts = 0.5 * (b - a)[:, None] * g[None, :] + 0.5 * (a + b)[:, None]
    rhs = profile.at(pts.ravel(), derivative=True).reshape(pts.shape + (profile.N,))
    integral = 0.5 * (b - a)[:, None] * np.einsum("ckn,k->cn", rhs, w)
    dev = profile.deviation[0]
    diff = np.diff(profile.values[0], axis=0)
    # use deviations where both nodes are on the same side for precision
    same = (a >= 0) | (b < 0)
    diff[same] = np.diff(dev, axis=0)[same]
    return float(np.max(np.abs(diff - integral)) / profile.grid.dx)


def profile_tail_rate(profile):
    """Smaller of the two exponential tail rates.

    Least-squares slope of ``log |u - u_pm|`` on the outer quarter of each
    half-domain.

    Raises
    ------
    TailNotResolved
        If the deviation underflows or the log-linear fit is poor.
    """
    x = profile.x
    L = profile.grid.L
    dev = np.linalg.norm(profile.deviation[0], axis=-1)
    rates = []
    for mask, sgn in ((x >= 0.75 * L, -1.0), (x <= -0.75 * L, 1.0)):
        d = dev[mask]
        if d.size < 3 or np.any(d <= 1e-290) or not np.all(np.isfinite(d)):
            raise TailNotResolved("tail deviation at or below the floating-point floor")
        xs = x[mask]
        coef, res, *_ = np.polyfit(xs, np.log(d), 1, full=True)
        fit = np.polyval(coef, xs)
        rms = np.sqrt(np.mean((np.log(d) - fit) ** 2))
        rate = sgn * coef[0]
        if rate <= 0 or rms > 0.05 * max(1.0, rate * 0.25 * L):
            raise TailNotResolved(f"tail fit is not exponential (rate {rate:.3g}, rms {rms:.3g})")
        rates.append(rate)
    return float(min(rates))


# ---------------------------------------------------------------------------
# coefficient fields

@dataclass
class PeriodicCoefficientField:
    """Time-periodic matrix field ``A(x, t)`` stored by temporal Fourier modes.

    ``modes[k]`` (``k = 0..K_max``) has shape ``(nx, N, N)`` and
    ``A(x, t) = Re(modes[0] + 2 sum_k modes[k] exp(i k w t))`` with
    ``w = 2 pi / period``.  ``modes_x`` holds the x-derivatives, needed by the
    spatial-dynamics formulation.  ``mode_function(x)``, when given, returns
    ``(modes, modes_x)`` at arbitrary points.  ``damping`` adds ``-c v`` to
    the linearized equation (used for damped-heat checks).
    """
    grid: object
    modes: np.ndarray
    modes_x: np.ndarray
    period: float = TWO_PI
    damping: float = 0.0
    mode_function: Optional[Callable] = field(default=None, repr=False)
    reconstruction_error: float = 0.0

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=complex)
        self.modes_x = np.asarray(self.modes_x, dtype=complex)
        if self.modes.ndim != 4 or self.modes.shape[1] != self.grid.nx:
            raise DimensionMismatch("modes must have shape (K+1, nx, N, N)")
        if np.max(np.abs(self.modes[0].imag), initial=0.0) > 1e-12:
            raise DimensionMismatch("the mean mode of a real field must be real")
        self._static = self.modes[0].real.copy()
        self._static_x = self.modes_x[0].real.copy()

    @property
    def N(self):
        return self.modes.shape[-1]

    @property
    def nx(self):
        return self.modes.shape[1]

    @property
    def K_max(self):
        return self.modes.shape[0] - 1

    @property
    def stationary(self):
        return self.K_max == 0 or not np.any(self.modes[1:])

    def _eval(self, modes, static, t):
        if self.stationary:
            return static
        w = TWO_PI / self.period
        ph = np.exp(1j * w * t * np.arange(1, self.K_max + 1))
        return static + 2.0 * np.einsum("k,kxij->xij", ph, modes[1:]).real

    def matrix(self, t):
        return self._eval(self.modes, self._static, t)

    def matrix_x(self, t):
        return self._eval(self.modes_x, self._static_x, t)

    def samples(self, nt):
        ts = self.period * np.arange(nt) / nt
        return ts, np.stack([self.matrix(t) for t in ts])

    def fourier_modes(self, K):
        """Modes ``f_k`` for ``k = -K..K`` as array ``(2K+1, nx, N, N)``."""
        out = np.zeros((2 * K + 1,) + self.modes.shape[1:], dtype=complex)
        for k in range(-K, K + 1):
            if abs(k) <= self.K_max:
                out[k + K] = self.modes[k] if k >= 0 else np.conj(self.modes[-k])
        return out

    def coupling_band(self, tol=0.0):
        nz = [k for k in range(self.K_max + 1) if np.max(np.abs(self.modes[k])) > tol]
        return max(nz) if nz else 0

    def modes_at(self, x):
        """``(modes, modes_x)`` at points ``x`` (shape ``(K+1, len(x), N, N)``)."""
        if self.mode_function is not None:
            return self.mode_function(np.atleast_1d(x))
        xs = self.grid.x
        m = CubicSpline(xs, self.modes, axis=1)(x)
        mx = CubicSpline(xs, self.modes_x, axis=1)(x)
        return m, mx

    def limits(self):
        """Constant matrices ``A(-L)`` and ``A(+L)`` (time averages)."""
        return self._static[0], self._static[-1]

    def max_speed(self):
        ts = self.period * np.arange(8) / 8 if not self.stationary else [0.0]
        return max(float(np.max(np.linalg.norm(self.matrix(t), ord=2, axis=(1, 2)))) for t in ts)

    @classmethod
    def from_samples(cls, grid, samples, period=TWO_PI, K_max=None, samples_x=None, damping=0.0):
        """Build from ``samples[m] = A(x, t_m)``, ``t_m = m T / nt``."""
        samples = np.asarray(samples, dtype=float)
        nt = samples.shape[0]
        if K_max is None:
            K_max = (nt - 1) // 2
        if samples_x is None:
            samples_x = np.gradient(samples, grid.dx, axis=1, edge_order=2)
        c = np.fft.fft(samples, axis=0) / nt
        cx = np.fft.fft(np.asarray(samples_x, dtype=float), axis=0) / nt
        modes = c[:K_max + 1]
        field_ = cls(grid, modes, cx[:K_max + 1], period=period, damping=damping)
        ts = period * np.arange(nt) / nt
        recon = np.stack([field_.matrix(t) for t in ts])
        field_.reconstruction_error = float(np.max(np.abs(recon - samples)))
        return field_


def constant_coefficients(grid, A, damping=0.0, period=TWO_PI):
    """Spatially and temporally constant ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    N = A.shape[0]
    modes = np.broadcast_to(A, (1, grid.nx, N, N)).copy()

    def mode_function(x):
        n = np.size(x)
        return (np.broadcast_to(A, (1, n, N, N)).astype(complex),
                np.zeros((1, n, N, N), dtype=complex))

    return PeriodicCoefficientField(grid, modes, np.zeros_like(modes), period=period,
                                    damping=damping, mode_function=mode_function)


def _jacobian_x(model, u, ux):
    """``d/dx f_u(u(x)) = f_uu(u)[u_x, .]`` as a matrix field."""
    N = model.N
    cols = [model.f_uu_action(u, ux, np.broadcast_to(np.eye(N)[j], u.shape)) for j in range(N)]
    return np.stack(cols, axis=-1)


def stationary_coefficients(profile):
    """Linearization ``A(x) = f_u(u(x))`` of a stationary profile."""
    return manufactured_periodic_coefficients(profile, 0.0)


def manufactured_periodic_coefficients(base, eps, envelope_width=2.0, period=TWO_PI, B=None):
    """``A(x,t) = f_u(u(x)) + eps exp(-x^2/w^2) cos(2 pi t / period) B``.

    Parameters
    ----------
    base : ShockProfile
        Stationary profile.
    eps : float
        Perturbation amplitude (``eps = 0`` gives the plain linearization).
    envelope_width : float
        Gaussian width ``w``.
    B : array_like, optional
        Fixed matrix of unit spectral norm; the default is ``[[1]]`` for
        scalar laws and the exchange matrix for systems.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    model = base.model
    N = model.N
    if B is None:
        B = np.eye(1) if N == 1 else np.fliplr(np.eye(N))
    B = np.asarray(B, dtype=float)
    B = B / np.linalg.norm(B, 2)
    w = float(envelope_width)

    def mode_function(x):
        x = np.atleast_1d(x)
        u = base.at(x)
        ux = base.at(x, derivative=True)
        K = 1 if eps > 0 else 0
        m = np.zeros((K + 1, x.size, N, N), dtype=complex)
        mx = np.zeros_like(m)
        m[0] = model.f_u(u)
        mx[0] = _jacobian_x(model, u, ux)
        if eps > 0:
            env = np.exp(-x**2 / w**2)
            m[1] = 0.5 * eps * env[:, None, None] * B
            mx[1] = 0.5 * eps * (-2.0 * x / w**2 * env)[:, None, None] * B
        return m, mx

    m, mx = mode_function(base.x)
    return PeriodicCoefficientField(base.grid, m, mx, period=period, mode_function=mode_function)
