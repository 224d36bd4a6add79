"""Terminal constraint sets for the horizon end state.

Two constructions are provided. The prediction-based set stacks the box
constraints along the closed-loop trajectory under the terminal law until
the maximal output admissible set is finitely determined. The
Lyapunov-based set is a level set of ``(x - xbar)' Psi (x - xbar)`` sized so
that the terminal law respects every bound inside it.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, NumericalError, OmegaCapError
from .numerics import LpProblem, lp_solve, spectral_radius
from .plant import BoxSet, DiscreteLti, SteadyTarget

OMEGA_CAP = 100
LP_TOL = 1e-9
MEMBER_TOL = 1e-9


@dataclass(frozen=True)
class TerminalSet:
    """Either ``H x <= h`` (polyhedral) or ``||x - xbar||²_Psi <= gamma``.

    For the quadratic variant ``Gamma`` keeps one level per bound (upper
    states, lower states, upper inputs, lower inputs; ``inf`` where the
    bound is infinite) and ``gamma`` is their minimum.
    """

    variant: str
    H: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    omega_star: Optional[int] = None
    Psi: Optional[np.ndarray] = None
    Gamma: Optional[np.ndarray] = None
    xbar: Optional[np.ndarray] = None
    gamma: Optional[float] = None

    @property
    def rows(self):
        if self.variant == "polyhedral":
            return self.H.shape[0]
        return int(np.isfinite(self.gamma))


def terminal_law(K, target: SteadyTarget, x):
    """``kappa(x) = ubar + K (x - xbar)``."""
    return target.ubar + K @ (np.asarray(x, dtype=float) - target.xbar)


def _base_rows(K, target, X, U):
    """Finite box rows in deviation coordinates ``xi = x - xbar``.

    Returns ``(C0, m0)`` such that the constraints at a state ``x`` under
    the terminal law read ``C0 (x - xbar) <= m0``.
    """
    n = target.xbar.size
    eye = np.eye(n)
    rows, marg = [], []
    for i in range(n):
        if np.isfinite(X.upper[i]):
            rows.append(eye[i])
            marg.append(X.upper[i] - target.xbar[i])
    for i in range(n):
        if np.isfinite(X.lower[i]):
            rows.append(-eye[i])
            marg.append(target.xbar[i] - X.lower[i])
    for i in range(K.shape[0]):
        if np.isfinite(U.upper[i]):
            rows.append(K[i])
            marg.append(U.upper[i] - target.ubar[i])
    for i in range(K.shape[0]):
        if np.isfinite(U.lower[i]):
            rows.append(-K[i])
            marg.append(target.ubar[i] - U.lower[i])
    return np.array(rows).reshape(-1, n), np.array(marg)


def compute_omega_star(model: DiscreteLti, K, target: SteadyTarget, X: BoxSet, U: BoxSet):
    """Finite determination index and the polyhedral terminal set.

    In deviation coordinates the closed loop is ``xi+ = (A + BK) xi`` because
    the target is an equilibrium of the affine terminal law. For increasing
    ``phi`` one LP per constraint row checks whether the rows of steps
    ``0..phi`` already imply the row at step ``phi+1``.

    Returns
    -------
    (int, TerminalSet)
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Acl = model.A + model.B @ K
    if spectral_radius(Acl) >= 1.0:
        raise NumericalError("terminal closed loop is not Schur stable")
    n = model.n
    C0, m0 = _base_rows(K, target, X, U)
    if np.any(m0 <= 0):
        raise ConfigurationError("target lies on or outside a constraint boundary")
    if C0.shape[0] == 0:
        T = TerminalSet("polyhedral", H=np.zeros((0, n)), h=np.zeros(0), omega_star=0)
        return 0, T

    blocks = [C0]  # C0 Acl^q for q = 0..phi
    for phi in range(OMEGA_CAP + 1):
        G = np.vstack(blocks)
        hrhs = np.tile(m0, len(blocks))
        nxt = blocks[-1] @ Acl
        done = True
        for i in range(C0.shape[0]):
            res = lp_solve(LpProblem(nxt[i], G, hrhs))
            if res.status == "unbounded":
                done = False
                break
            if res.status != "optimal":
                raise NumericalError("terminal set LP unexpectedly infeasible")
            if res.optimum - m0[i] > LP_TOL:
                done = False
                break
        if done:
            H = G
            h = hrhs + H @ target.xbar
            return phi, TerminalSet("polyhedral", H=H, h=h, omega_star=phi)
        blocks.append(nxt)
    raise OmegaCapError()


def lyapunov_terminal_set(model: DiscreteLti, K, Psi, target: SteadyTarget, X: BoxSet, U: BoxSet):
    """Ellipsoidal terminal set from a closed-loop Lyapunov matrix.

    The level for each finite bound is the largest ``Gamma_i`` such that
    the ellipsoid ``||x - xbar||²_Psi <= Gamma_i`` keeps that bound under the
    terminal law: ``(bound gap)² / (c' Psi^{-1} c)`` with ``c`` the bound's
    row (a unit vector for states, a row of ``K`` for inputs).
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Psi = np.asarray(Psi, dtype=float)
    Pinv = np.linalg.inv(Psi)
    n, p = model.n, model.p
    xb, ub = target.xbar, target.ubar

    def level(gap, c):
        if not np.isfinite(gap):
            return np.inf
        w = float(c @ Pinv @ c)
        if w <= 0.0:
            return np.inf
        return gap * gap / w

    eye = np.eye(n)
    gaps = []
    gaps += [(X.upper[i] - xb[i], eye[i]) for i in range(n)]
    gaps += [(xb[i] - X.lower[i], eye[i]) for i in range(n)]
    gaps += [(U.upper[i] - ub[i], K[i]) for i in range(p)]
    gaps += [(ub[i] - U.lower[i], K[i]) for i in range(p)]
    for gap, _ in gaps:
        if np.isfinite(gap) and gap <= 0:
            raise ConfigurationError("target lies on or outside a constraint boundary")
    Gamma = np.array([level(g, c) for g, c in gaps])
    return TerminalSet(
        "quadratic", Psi=0.5 * (Psi + Psi.T), Gamma=Gamma, xbar=xb.copy(),
        gamma=float(np.min(Gamma)),
    )


def terminal_membership(T: TerminalSet, x):
    """Membership test with its residual vector (``<= 0`` means satisfied).

    Polyhedral residuals are ``H x - h``; quadratic residuals are
    ``||x - xbar||²_Psi - Gamma_i``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if T.variant == "polyhedral":
        res = T.H @ x - T.h
        return bool(np.all(res <= MEMBER_TOL)), res
    d = x - T.xbar
    v = float(d @ T.Psi @ d)
    res = v - T.Gamma
    return bool(v <= T.gamma * (1.0 + 1e-12)), res
