"""Flux models and the algebra of characteristic speeds at the end states.

States are arrays whose last axis has length ``N``; all model callables
broadcast over leading axes so that whole grids can be evaluated at once.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (ComplexSpeeds, DegenerateSpeeds, DimensionMismatch,
                     NotLax, RankDeficiency, ZeroSpeed)

SPEED_RTOL = 1e-8


@dataclass(frozen=True)
class FluxModel:
    """Flux ``f`` of an ``N``-component conservation law.

    Parameters
    ----------
    N : int
        Number of components.
    f : callable
        ``f(u)`` with ``u`` of shape ``(..., N)``.
    f_u : callable
        Jacobian, returns shape ``(..., N, N)``.
    f_uu_action : callable
        ``f_uu_action(u, w, v)`` is the bilinear Hessian action
        ``f_uu(u)[w, v]``, shape ``(..., N)``.
    increment : callable, optional
        ``increment(u, d) = f(u + d) - f(u)`` evaluated without cancellation.
        Used for profile tails, where ``d`` is far below the size of ``u``.
    """
    N: int
    f: Callable
    f_u: Callable
    f_uu_action: Callable
    name: str = "custom"
    increment: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def flux_increment(self, u, d):
        if self.increment is not None:
            return self.increment(u, d)
        u = np.asarray(u, dtype=float)
        return self.f(u + d) - self.f(u)


def quadratic_flux(A, Q, name="quadratic"):
    """Flux ``f_i(u) = (A u)_i + u^T Q_i u / 2``.

    ``Q`` has shape ``(N, N, N)`` with ``Q[i]`` the matrix of component ``i``.
    Only the symmetric part of each ``Q[i]`` matters.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.asarray(Q, dtype=float)
    N = A.shape[0]
    if A.shape != (N, N) or Q.shape != (N, N, N):
        raise DimensionMismatch(f"A must be {N}x{N} and Q {N}x{N}x{N}")
    Qs = 0.5 * (Q + np.swapaxes(Q, 1, 2))

    def f(u):
        u = np.asarray(u, dtype=float)
        return u @ A.T + 0.5 * np.einsum("...j,ijk,...k->...i", u, Qs, u)

    def f_u(u):
        u = np.asarray(u, dtype=float)
        return A + np.einsum("ijk,...k->...ij", Qs, u)

    def f_uu_action(u, w, v):
        w = np.asarray(w)
        v = np.asarray(v)
        return np.einsum("...j,ijk,...k->...i", w, Qs, v)

    def increment(u, d):
        u = np.asarray(u, dtype=float)
        d = np.asarray(d, dtype=float)
        return (d @ A.T + np.einsum("...j,ijk,...k->...i", u, Qs, d)
                + 0.5 * np.einsum("...j,ijk,...k->...i", d, Qs, d))

    return FluxModel(N=N, f=f, f_u=f_u, f_uu_action=f_uu_action, name=name,
                     increment=increment,
                     params={"A": A.tolist(), "Q": Qs.tolist()})


def burgers():
    """Scalar Burgers flux ``f(u) = u^2/2``."""
    return quadratic_flux([[0.0]], [[[1.0]]], name="burgers")


def quadratic2(A, Q1, Q2):
    """Two-component flux ``f(u) = A u + (u^T Q1 u, u^T Q2 u) / 2``."""
    model = quadratic_flux(A, np.stack([np.asarray(Q1, float), np.asarray(Q2, float)]),
                           name="quadratic2")
    return model


# Default two-component configuration: a Burgers field coupled into a
# left-moving transported field.  u_- = (1, 1), u_+ = (-1, 0.6) is a standing
# Lax 1-shock with one outgoing characteristic on the left.
QUADRATIC2_DEFAULT = {
    "A": [[0.0, 0.0], [0.0, -2.0]],
    "Q1": [[1.0, 0.0], [0.0, 0.0]],
    "Q2": [[0.0, 0.5], [0.5, 0.0]],
    "u_minus": [1.0, 1.0],
    "u_plus": [-1.0, 0.6],
}


def linear_flux(A):
    """Linear flux ``f(u) = A u`` (constant Jacobian)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    N = A.shape[0]
    return quadratic_flux(A, np.zeros((N, N, N)), name="linear")


def build_model(cfg):
    """Construct a model from a ``{"name": ..., ...}`` mapping."""
    name = cfg["name"]
    if name == "burgers":
        return burgers()
    if name == "quadratic2":
        p = {**QUADRATIC2_DEFAULT, **cfg}
        return quadratic2(p["A"], p["Q1"], p["Q2"])
    raise DimensionMismatch(f"unknown model {name!r}")


@dataclass(frozen=True)
class CharacteristicData:
    """Eigenstructure of ``f_u`` at one end state.

    ``speeds`` are sorted ascending, ``R[:, j]`` is the right eigenvector of
    ``speeds[j]`` and ``Lt[j]`` the matching left eigenvector, normalized so
    that ``Lt @ R`` is the identity.
    """
    side: str
    state: np.ndarray
    speeds: np.ndarray
    R: np.ndarray
    Lt: np.ndarray
    incoming: np.ndarray
    p: int

    @property
    def outgoing(self):
        return ~self.incoming

    @property
    def N(self):
        return self.speeds.size


def _eigenstructure(J, label):
    a, R = np.linalg.eig(J)
    scale = max(np.max(np.abs(a)), 1.0)
    tol = SPEED_RTOL * scale
    if np.any(np.abs(a.imag) > tol):
        raise ComplexSpeeds(f"non-real characteristic speed at {label}: {a}")
    a = a.real
    R = R.real
    order = np.argsort(a)
    a, R = a[order], R[:, order]
    if np.any(np.abs(a) < tol):
        raise ZeroSpeed(f"zero characteristic speed at {label}: {a}")
    if a.size > 1 and np.min(np.diff(a)) < tol:
        raise DegenerateSpeeds(f"repeated characteristic speed at {label}: {a}")
    # unit right vectors, sign fixed by the largest entry
    R = R / np.linalg.norm(R, axis=0)
    idx = np.argmax(np.abs(R), axis=0)
    R = R * np.sign(R[idx, np.arange(R.shape[1])])
    Lt = np.linalg.inv(R)
    return a, R, Lt


def characteristic_data(model, u_minus, u_plus):
    """Speeds, eigenvectors, in/out labels and Lax index at both end states.

    Returns
    -------
    (CharacteristicData, CharacteristicData)
        Data at ``u_minus`` and at ``u_plus``.

    Raises
    ------
    ComplexSpeeds, DegenerateSpeeds, ZeroSpeed
        If hyperbolicity fails in the strict sense required here.
    NotLax
        If no index ``p`` satisfies the Lax inequalities.
    """
    um = np.atleast_1d(np.asarray(u_minus, dtype=float))
    up = np.atleast_1d(np.asarray(u_plus, dtype=float))
    if um.shape != (model.N,) or up.shape != (model.N,):
        raise DimensionMismatch("end states must have length N")
    if not (np.all(np.isfinite(um)) and np.all(np.isfinite(up))):
        raise DimensionMismatch("end states must be finite")
    am, Rm, Lm = _eigenstructure(model.f_u(um), "u_minus")
    ap, Rp, Lp = _eigenstructure(model.f_u(up), "u_plus")
    N = model.N
    # a^-_{N-p} < 0 < a^-_{N-p+1} means exactly p positive speeds on the left;
    # a^+_{N-p+1} < 0 < a^+_{N-p+2} means exactly p-1 positive speeds on the right.
    p = int(np.sum(am > 0))
    if p < 1 or int(np.sum(ap > 0)) != p - 1:
        raise NotLax(f"speeds {am} | {ap} do not form a Lax shock")
    minus = CharacteristicData("minus", um, am, Rm, Lm, am > 0, p)
    plus = CharacteristicData("plus", up, ap, Rp, Lp, ap < 0, p)
    assert minus.incoming.sum() + plus.incoming.sum() == N + 1
    return minus, plus


def outgoing_vectors(chardata):
    minus, plus = chardata
    return np.hstack([minus.R[:, minus.outgoing], plus.R[:, plus.outgoing]])


def liu_majda_determinant(chardata, jump):
    """``det(r^-_out, ..., [u], r^+_out, ...)`` with the outgoing left vectors first."""
    minus, plus = chardata
    jump = np.atleast_1d(np.asarray(jump, dtype=float))
    if jump.shape != (minus.N,):
        raise DimensionMismatch(f"jump has shape {jump.shape}, expected ({minus.N},)")
    cols = [minus.R[:, minus.outgoing], jump[:, None], plus.R[:, plus.outgoing]]
    mat = np.hstack(cols)
    if mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"Liu-Majda matrix has shape {mat.shape}")
    return float(np.linalg.det(mat))


def psi1(chardata):
    """Left vector orthogonal to every outgoing eigenvector, with ``<psi1, [u]> = 1``."""
    minus, plus = chardata
    N = minus.N
    jump = plus.state - minus.state
    out = outgoing_vectors(chardata)
    if out.shape[1] == 0:
        psi = np.ones(N)
    else:
        u, s, vh = np.linalg.svd(out.T)
        rank = int(np.sum(s > 1e-10 * s[0]))
        if rank != N - 1 or out.shape[1] != N - 1:
            raise RankDeficiency("outgoing eigenvectors do not span N-1 dimensions")
        psi = vh[-1]
    pairing = psi @ jump
    if abs(pairing) < 1e-12 * np.linalg.norm(psi) * max(np.linalg.norm(jump), 1e-300):
        raise RankDeficiency("psi1 is orthogonal to the jump")
    return psi / pairing
