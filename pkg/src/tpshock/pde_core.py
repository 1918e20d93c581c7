"""Finite-difference evolution of the viscous conservation law and its
linearization about a shock profile.

Space: uniform nodes on ``[-L, L]``, fourth-order conservative interface
fluxes in the interior (lower order on the two outermost interfaces).
Boundaries are characteristic: at ``x = +-L`` the fields whose
characteristics enter the domain are held at their end-state value and the
outgoing fields are extrapolated to second order.
Time: the two-stage IMEX Runge-Kutta scheme ARS(2,2,2), implicit in the
diffusion (and an optional damping term), explicit in the flux.  The
implicit stage matrix is banded and factorized once per step size.

Fields are arrays of shape ``(nx, N)``.  Internally a trailing batch axis
is carried so that many initial conditions can be evolved together.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import BlowUp, CFLViolation, DimensionMismatch

GAMMA = 1.0 - 1.0 / np.sqrt(2.0)
DELTA = 1.0 - 1.0 / (2.0 * GAMMA)
BLOWUP_THRESHOLD = 1e8
CFL_LIMIT = 1.5


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on ``[-L, L]`` with time step ``dt`` (default ``0.4 dx``)."""
    L: float = 40.0
    dx: float = 0.05
    dt: float = None
    boundary: str = "extrapolate"

    def __post_init__(self):
        n = 2.0 * self.L / self.dx
        if abs(n - round(n)) > 1e-9 * n or int(round(n)) % 2:
            raise DimensionMismatch("2L/dx must be an even integer so that x=0 is a node")
        if self.dt is None:
            object.__setattr__(self, "dt", 0.4 * self.dx)
        if self.dt <= 0:
            raise DimensionMismatch("dt must be positive")

    @property
    def nx(self):
        return int(round(2.0 * self.L / self.dx)) + 1

    @property
    def x(self):
        return np.linspace(-self.L, self.L, self.nx)

    def with_(self, **kw):
        d = dict(L=self.L, dx=self.dx, dt=self.dt, boundary=self.boundary)
        if "dx" in kw and "dt" not in kw:
            d["dt"] = None
        d.update(kw)
        return GridSpec(**d)


# ---------------------------------------------------------------------------
# spatial operators

def _interface_average(h):
    """Fourth-order interface values ``h_{i+1/2}`` of nodal values (axis 0)."""
    H = np.empty((h.shape[0] - 1,) + h.shape[1:])
    H[1:-1] = (-h[3:] + 7.0 * h[2:-1] + 7.0 * h[1:-2] - h[:-3]) / 12.0
    H[0] = 0.5 * (h[0] + h[1])
    H[-1] = 0.5 * (h[-2] + h[-1])
    return H


def flux_divergence(h, dx):
    """``-(d/dx) h`` in conservative form; zero on the boundary nodes."""
    H = _interface_average(h)
    out = np.zeros_like(h)
    out[1:-1] = -(H[1:] - H[:-1]) / dx
    return out


def centered_derivative(w, dx):
    """Fourth-order centered first derivative; second order next to the
    boundary, zero on the boundary nodes."""
    out = np.zeros_like(w)
    out[2:-2] = (-w[4:] + 8.0 * w[3:-1] - 8.0 * w[1:-3] + w[:-4]) / (12.0 * dx)
    out[1] = (w[2] - w[0]) / (2.0 * dx)
    out[-2] = (w[-1] - w[-3]) / (2.0 * dx)
    return out


def laplacian_matrix(nx, dx):
    """Conservative fourth-order Laplacian with zero boundary rows."""
    rows, cols, vals = [], [], []

    def put(i, js, cs):
        for j, c in zip(js, cs):
            rows.append(i)
            cols.append(j)
            vals.append(c / dx**2)

    for i in range(1, nx - 1):
        if 2 <= i <= nx - 3:
            put(i, range(i - 2, i + 3), (-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12))
    # node 1: interface 1/2 uses the one-sided derivative (-v2 + 14 v1 - 13 v0)/12,
    # which keeps the operator symmetric once v0 is eliminated by a Dirichlet row
    put(1, range(0, 4), (14 / 12, -29 / 12, 16 / 12, -1 / 12))
    put(nx - 2, range(nx - 4, nx)[::-1], (14 / 12, -29 / 12, 16 / 12, -1 / 12))
    return sp.csr_matrix((vals, (rows, cols)), shape=(nx, nx))


@dataclass(frozen=True)
class BoundarySpec:
    """Linear boundary rows ``Cd (v_b - value) + Ce (v_b - 2 v_1 + v_2) = 0``.

    ``Cd`` selects the held (Dirichlet) characteristic fields and ``Ce`` the
    extrapolated ones; together their rows span ``R^N``.
    """
    left_D: np.ndarray
    left_E: np.ndarray
    right_D: np.ndarray
    right_E: np.ndarray
    left_value: np.ndarray
    right_value: np.ndarray

    @classmethod
    def characteristic(cls, A_left, A_right, left_value=None, right_value=None, adjoint=False):
        """Hold incoming fields, extrapolate outgoing ones.

        A zero speed counts as incoming.  For the adjoint equation pass the
        transposed matrices; the in/out roles are then reversed because the
        adjoint transports with velocity ``-a``.
        """
        rows = []
        for A, side in ((A_left, -1), (A_right, 1)):
            A = np.atleast_2d(np.asarray(A, dtype=float))
            a, R = np.linalg.eig(A)
            a, R = a.real, R.real
            Lt = np.linalg.inv(R)
            incoming = side * a <= 0
            if adjoint:
                incoming = ~incoming
            rows.append((Lt * incoming[:, None], Lt * (~incoming)[:, None]))
        N = rows[0][0].shape[0]
        lv = np.zeros(N) if left_value is None else np.asarray(left_value, float)
        rv = np.zeros(N) if right_value is None else np.asarray(right_value, float)
        return cls(rows[0][0], rows[0][1], rows[1][0], rows[1][1], lv, rv)

    @classmethod
    def extrapolate(cls, N):
        z, I = np.zeros((N, N)), np.eye(N)
        return cls(z, I, z, I, np.zeros(N), np.zeros(N))


class IMEXStepper:
    """ARS(2,2,2) integrator for ``U_t = D U + F(U, t)``.

    ``D`` is the diffusion matrix (minus ``damping``) acting on axis 0 and
    ``F`` an explicit operator.  Boundary nodes satisfy the rows of ``bc``
    at every stage.
    """

    def __init__(self, grid, N, explicit, bc, damping=0.0):
        self.grid = grid
        self.N = N
        self.explicit = explicit
        self.bc = bc
        nx = grid.nx
        D = laplacian_matrix(nx, grid.dx)
        if damping:
            interior = np.ones(nx)
            interior[[0, -1]] = 0.0
            D = D - damping * sp.diags(interior)
        self.D = D.tocsr()
        self._lu = {}
        self._bl = (bc.left_D @ bc.left_value)[:, None]
        self._br = (bc.right_D @ bc.right_value)[:, None]

    def _factor(self, dt):
        key = round(dt, 14)
        lu = self._lu.get(key)
        if lu is None:
            nx, N = self.grid.nx, self.N
            M = sp.kron(sp.identity(nx) - GAMMA * dt * self.D, sp.identity(N)).tolil()
            bc = self.bc
            for node, nb, Cd, Ce in ((0, (1, 2), bc.left_D, bc.left_E),
                                     (nx - 1, (nx - 2, nx - 3), bc.right_D, bc.right_E)):
                for r in range(N):
                    row = node * N + r
                    M.rows[row] = []
                    M.data[row] = []
                    for c in range(N):
                        M[row, node * N + c] = Cd[r, c] + Ce[r, c]
                        M[row, nb[0] * N + c] = -2.0 * Ce[r, c]
                        M[row, nb[1] * N + c] = Ce[r, c]
            lu = splu(M.tocsc())
            if len(self._lu) > 8:
                self._lu.clear()
            self._lu[key] = lu
        return lu

    def _solve(self, lu, rhs):
        rhs[0] = self._bl
        rhs[-1] = self._br
        shape = rhs.shape
        return lu.solve(rhs.reshape(shape[0] * shape[1], -1)).reshape(shape)

    def _apply_D(self, U):
        shape = U.shape
        return (self.D @ U.reshape(shape[0], -1)).reshape(shape)

    def step(self, U, t, dt):
        lu = self._factor(dt)
        K1 = self.explicit(U, t)
        U2 = self._solve(lu, U + GAMMA * dt * K1)
        K2 = self.explicit(U2, t + GAMMA * dt)
        rhs = U + dt * (DELTA * K1 + (1.0 - DELTA) * K2) + dt * (1.0 - GAMMA) * self._apply_D(U2)
        return self._solve(lu, rhs)

    def run(self, U, t0, times, callback=None):
        """Advance from ``t0`` through the increasing ``times``; returns the
        list of states at those times."""
        dt0 = self.grid.dt
        out = []
        t = t0
        for k, target in enumerate(times):
            if target < t - 1e-12:
                raise ValueError("output times must be increasing and >= the start time")
            n = int(np.ceil((target - t) / dt0 - 1e-9))
            if n > 0:
                h = (target - t) / n
                for i in range(n):
                    U = self.step(U, t, h)
                    t = t + h
                    if i % 16 == 0 or i == n - 1:
                        m = np.max(np.abs(U))
                        if not np.isfinite(m) or m > BLOWUP_THRESHOLD:
                            raise BlowUp(f"sup norm {m:.3g} at t={t:.4g}")
                    if callback is not None:
                        callback(t, U)
            t = target
            out.append(U.copy())
        return out


def _as_batch(v, N):
    """``(nx,)``, ``(nx, N)`` or ``(nx, N, B)`` -> ``(nx, N, B)`` plus restorer."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        if N != 1:
            raise DimensionMismatch("1-D field given for a system")
        return v[:, None, None], lambda U: U[:, 0, 0]
    if v.ndim == 2:
        if v.shape[1] != N:
            raise DimensionMismatch(f"field has {v.shape[1]} components, expected {N}")
        return v[:, :, None], lambda U: U[:, :, 0]
    if v.shape[1] != N:
        raise DimensionMismatch(f"field has {v.shape[1]} components, expected {N}")
    return v, lambda U: U


def _check_cfl(grid, speed):
    c = grid.dt * speed / grid.dx
    if c > CFL_LIMIT:
        raise CFLViolation(f"advective Courant number {c:.3g} exceeds {CFL_LIMIT}")


def _apply_matrix(A, U):
    if A.shape[1] == 1:
        return A[:, 0, 0][:, None, None] * U
    return np.einsum("xij,xjb->xib", A, U)


def _times(t0, t_final, every):
    if every is None:
        return [t_final]
    n = max(int(round((t_final - t0) / every)), 1)
    return list(t0 + (t_final - t0) * np.arange(1, n + 1) / n)


@dataclass
class Trajectory:
    """Snapshots ``states[m]`` (shape ``(nx, N)``) at ``times[m]``."""
    x: np.ndarray
    times: np.ndarray
    states: np.ndarray


def evolve_nonlinear(model, u0, t_final, grid, every=None, include_initial=True):
    """Solve ``u_t + f(u)_x = u_xx`` on ``grid``.

    Parameters
    ----------
    model : FluxModel
    u0 : ndarray
        Initial data, shape ``(nx,)`` (scalar) or ``(nx, N)``.
    t_final : float
    grid : GridSpec
    every : float, optional
        Snapshot cadence; by default only the final state is stored.

    Returns
    -------
    Trajectory
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    U, restore = _as_batch(u0, model.N)
    if U.shape[0] != grid.nx:
        raise DimensionMismatch("initial data does not match the grid")
    if not np.all(np.isfinite(U)):
        raise BlowUp("non-finite initial data")
    speed = np.max(np.abs(np.linalg.eigvals(model.f_u(U[:, :, 0]))))
    _check_cfl(grid, speed)

    def explicit(V, t):
        return flux_divergence(model.f(V[:, :, 0])[:, :, None], grid.dx)

    ub0, ub1 = U[0, :, 0], U[-1, :, 0]
    bc = BoundarySpec.characteristic(model.f_u(ub0), model.f_u(ub1), ub0, ub1)
    stepper = IMEXStepper(grid, model.N, explicit, bc)
    times = _times(0.0, t_final, every)
    states = stepper.run(U.copy(), 0.0, times)
    if include_initial:
        times = [0.0] + times
        states = [U.copy()] + states
    return Trajectory(grid.x, np.asarray(times), np.asarray([S[:, :, 0] for S in states]))


def _check_coeffs(coeffs, grid):
    if coeffs.nx != grid.nx:
        raise DimensionMismatch(f"coefficients live on {coeffs.nx} nodes, grid has {grid.nx}")


def linearized_stepper(coeffs, grid, forcing=None):
    """IMEX stepper for ``v_t = v_xx - (A v)_x - c v + forcing(t, v)``."""
    _check_coeffs(coeffs, grid)
    _check_cfl(grid, coeffs.max_speed())

    def explicit(V, t):
        out = flux_divergence(_apply_matrix(coeffs.matrix(t), V), grid.dx)
        if forcing is not None:
            out = out + forcing(t, V)
        return out

    bc = BoundarySpec.characteristic(*coeffs.limits())
    return IMEXStepper(grid, coeffs.N, explicit, bc, damping=coeffs.damping)


def evolve_linearized(coeffs, v0, s, t, grid, times=None, forcing=None):
    """Solve the linearized equation ``v_t = v_xx - (A(x,t) v)_x`` from time ``s``.

    Parameters
    ----------
    coeffs : PeriodicCoefficientField
        Supplies ``A(x, t)`` through ``coeffs.matrix(t)``; a nonzero
        ``coeffs.damping`` adds ``-c v``.
    v0 : ndarray
        Shape ``(nx,)``, ``(nx, N)`` or batched ``(nx, N, B)``.
    s, t : float
        Initial and final time.
    times : sequence of float, optional
        If given, return the states at these times (``s <= times``) instead
        of only the final state.
    forcing : callable, optional
        ``forcing(t, V)`` returning an explicit source with the shape of ``V``.
    """
    if t < s:
        raise ValueError("t must be >= s")
    U, restore = _as_batch(v0, coeffs.N)
    stepper = linearized_stepper(coeffs, grid, forcing)
    if times is None:
        if t == s:
            return restore(U.copy())
        return restore(stepper.run(U.copy(), s, [t])[0])
    return np.asarray([restore(V) for V in stepper.run(U.copy(), s, list(times))])


def adjoint_evolve(coeffs, w0, duration, grid, t_end=0.0, times=None):
    """Evolve the formal adjoint ``w_tau = w_xx + A^T w_x`` for ``duration``.

    The adjoint runs backwards through the coefficients: at adjoint time
    ``tau`` the matrix ``A(x, t_end - tau)`` is used, so that
    ``psi(x, t_end - tau) = w(x, tau)`` solves the backward adjoint problem
    and ``<psi(t), v(t)>`` is conserved for any forward solution ``v``.
    With ``t_end = 0`` this is ``psi(x, t) = w(x, -t)``.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    _check_coeffs(coeffs, grid)
    _check_cfl(grid, coeffs.max_speed())
    W, restore = _as_batch(w0, coeffs.N)

    def explicit(V, tau):
        At = np.swapaxes(coeffs.matrix(t_end - tau), 1, 2)
        return _apply_matrix(At, centered_derivative(V, grid.dx))

    AL, AR = coeffs.limits()
    bc = BoundarySpec.characteristic(AL.T, AR.T, adjoint=True)
    stepper = IMEXStepper(grid, coeffs.N, explicit, bc, damping=coeffs.damping)
    if times is None:
        return restore(stepper.run(W.copy(), 0.0, [duration])[0])
    return np.asarray([restore(V) for V in stepper.run(W.copy(), 0.0, list(times))])


def mass(v, grid):
    """Trapezoid integral of each component."""
    v = np.asarray(v, dtype=float)
    return np.trapezoid(v, dx=grid.dx, axis=0)


def weighted_sobolev_norm(v, grid, order=3, weight_power=0.75):
    """Discrete ``||(1+x^2)^{weight_power} v||_{H^order}`` (``order <= 3``).

    Derivatives use fourth-order centered differences; the three nodes next
    to each boundary, where the widest stencil does not fit, are omitted.
    """
    if order > 3:
        raise ValueError("order must be <= 3")
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    dx = grid.dx
    w = (1.0 + grid.x**2)[:, None] ** weight_power * v
    c = slice(3, -3)
    derivs = [w[c]]
    if order >= 1:
        derivs.append((-w[5:-1] + 8 * w[4:-2] - 8 * w[2:-4] + w[1:-5]) / (12 * dx))
    if order >= 2:
        derivs.append((-w[5:-1] + 16 * w[4:-2] - 30 * w[3:-3] + 16 * w[2:-4] - w[1:-5]) / (12 * dx**2))
    if order >= 3:
        derivs.append((-w[6:] + 8 * w[5:-1] - 13 * w[4:-2] + 13 * w[2:-4] - 8 * w[1:-5] + w[:-6])
                      / (8 * dx**3))
    total = sum(np.trapezoid(np.sum(d**2, axis=1), dx=dx) for d in derivs)
    return float(np.sqrt(total))
