"""Condensed MPC quadratic program and the modified log barrier.

The stacked input ``u = [u(0); ...; u(N-1)]`` is the only decision variable.
Constraints are kept as ``g_i(u) <= 0`` with every linear row scaled to a
unit-norm gradient, so a value ``g_i = -d`` means the point is a Euclidean
distance ``d`` (in ``u`` space) from that facet. Rows whose gradient is zero
do not depend on ``u``; they are evaluated once and stored as
``fixed_violation``.

The optional quadratic row is the ellipsoidal terminal constraint divided by
its level, ``(||x(N) - xbar||²_Psi - gamma) / gamma``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BarrierDomainError, ConfigurationError
from .plant import BoxSet, DiscreteLti, SteadyTarget
from .terminal import TerminalSet

ZERO_ROW_TOL = 1e-13


@dataclass(frozen=True)
class Prediction:
    """Stacked states ``x_stack = Sx x(k) + Su u`` for ``s = 0..N``."""

    Sx: np.ndarray
    Su: np.ndarray
    N: int
    n: int
    p: int

    def block(self, s):
        """Rows of stage ``s`` as ``(Sx_s, Su_s)``."""
        r = slice(s * self.n, (s + 1) * self.n)
        return self.Sx[r], self.Su[r]


def build_prediction(model: DiscreteLti, N: int) -> Prediction:
    if N < 1:
        raise ConfigurationError(f"horizon must be at least 1, got {N}")
    n, p = model.n, model.p
    Sx = np.zeros(((N + 1) * n, n))
    Su = np.zeros(((N + 1) * n, N * p))
    Apow = [np.eye(n)]
    for _ in range(N):
        Apow.append(model.A @ Apow[-1])
    for s in range(N + 1):
        Sx[s * n:(s + 1) * n] = Apow[s]
        for j in range(s):
            Su[s * n:(s + 1) * n, j * p:(j + 1) * p] = Apow[s - 1 - j] @ model.B
    return Prediction(Sx, Su, N, n, p)


@dataclass(frozen=True)
class QuadRow:
    """``g(u) = u'Pu + q'u + r``."""

    P: np.ndarray
    q: np.ndarray
    r: float

    def value(self, u):
        return float(u @ self.P @ u + self.q @ u + self.r)

    def grad(self, u):
        return 2.0 * self.P @ u + self.q


@dataclass(frozen=True)
class QpProblem:
    """``min J(u) = ½ u'Hq u + fq'u + c0`` s.t. ``G u - b <= 0`` and an
    optional quadratic row.

    MPC-built problems also carry the residual form of the cost, which is
    used for cost evaluation because it avoids cancellation near the target,
    plus the data needed by the warm start.
    """

    Hq: np.ndarray
    fq: np.ndarray
    c0: float
    G: np.ndarray
    b: np.ndarray
    quad: Optional[QuadRow] = None
    row_keys: tuple = ()
    fixed_violation: float = -np.inf
    N: int = 0
    n: int = 0
    p: int = 0
    # residual form of the cost (MPC problems only)
    Su: Optional[np.ndarray] = None
    e0: Optional[np.ndarray] = None
    Qbar: Optional[np.ndarray] = None
    Rbar: Optional[np.ndarray] = None
    Ubar: Optional[np.ndarray] = None
    # warm-start data
    x_now: Optional[np.ndarray] = None
    pred: Optional[Prediction] = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, Hq, fq, G, b, c0=0.0, quad=None, normalize=True):
        """Generic problem; linear rows are rescaled to unit gradients."""
        Hq = np.atleast_2d(np.asarray(Hq, dtype=float))
        fq = np.asarray(fq, dtype=float).ravel()
        G = np.asarray(G, dtype=float).reshape(-1, fq.size)
        b = np.asarray(b, dtype=float).ravel()
        fixed = -np.inf
        if normalize:
            G, b, fixed, _ = _normalize_rows(G, b)
        keys = tuple(("row", i) for i in range(G.shape[0]))
        return cls(Hq, fq, float(c0), G, b, quad=quad, row_keys=keys,
                   fixed_violation=fixed, N=1, p=fq.size)

    @property
    def n_vars(self):
        return self.fq.size

    @property
    def n_rows(self):
        return self.G.shape[0] + (self.quad is not None)

    def cost(self, u):
        """Quadratic cost ``J(u)``."""
        u = np.asarray(u, dtype=float)
        if self.Su is not None:
            rx = self.e0 + self.Su @ u
            ru = u - self.Ubar
            return float(rx @ self.Qbar @ rx + ru @ self.Rbar @ ru)
        return float(0.5 * u @ self.Hq @ u + self.fq @ u + self.c0)

    def terminal_state(self, u):
        Sx, Su = self.pred.block(self.N)
        return Sx @ self.x_now + Su @ u

    def first_input(self, u):
        return np.asarray(u)[: self.p].copy()


def _normalize_rows(G, b):
    """Scale rows to unit norm; split off rows with a zero gradient."""
    norms = np.linalg.norm(G, axis=1)
    scale = max(1.0, float(np.max(np.abs(G)))) if G.size else 1.0
    live = norms > ZERO_ROW_TOL * scale
    fixed = float(np.max(-b[~live])) if np.any(~live) else -np.inf
    return G[live] / norms[live, None], b[live] / norms[live], fixed, live


def constraint_values(qp: QpProblem, u):
    u = np.asarray(u, dtype=float)
    g = qp.G @ u - qp.b
    if qp.quad is not None:
        g = np.append(g, qp.quad.value(u))
    return g


def constraint_jacobian(qp: QpProblem, u):
    u = np.asarray(u, dtype=float)
    if qp.quad is None:
        return qp.G
    return np.vstack([qp.G, qp.quad.grad(u)])


def _barrier_args(qp, u, lam, sigma, shift):
    lam = np.asarray(lam, dtype=float)
    if lam.size != qp.n_rows:
        raise ConfigurationError(f"expected {qp.n_rows} multipliers, got {lam.size}")
    if np.any(lam < 0):
        raise ConfigurationError("multipliers must be nonnegative")
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive")
    g = constraint_values(qp, u) + shift
    e = 1.0 - sigma * g
    if np.any(e <= 0):
        raise BarrierDomainError()
    return lam, g, e


def barrier_value(qp: QpProblem, u, lam, sigma, shift=0.0):
    """Modified log barrier ``J(u) - (1/sigma) Σ lam_i ln(1 - sigma (g_i(u) + shift))``.

    ``shift`` tightens every row uniformly; it is zero for the plain barrier.
    """
    lam, g, e = _barrier_args(qp, u, lam, sigma, shift)
    return qp.cost(u) - float(lam @ np.log(e)) / sigma


def barrier_gradients(qp: QpProblem, u, lam, sigma, shift=0.0):
    """Return ``(grad_u, grad_lam)`` of :func:`barrier_value`."""
    u = np.asarray(u, dtype=float)
    lam, g, e = _barrier_args(qp, u, lam, sigma, shift)
    J = constraint_jacobian(qp, u)
    grad_u = qp.Hq @ u + qp.fq + J.T @ (lam / e)
    grad_lam = -np.log(e) / sigma
    return grad_u, grad_lam


def _box_rows(lo, hi, tight):
    """Yield ``(coordinate, sign, bound, side)`` for finite bounds, upper first."""
    for i in np.flatnonzero(np.isfinite(hi)):
        yield i, 1.0, hi[i] - tight, "u"
    for i in np.flatnonzero(np.isfinite(lo)):
        yield i, -1.0, -(lo[i] + tight), "l"


def build_qp(model: DiscreteLti, pred: Prediction, weights, target: SteadyTarget,
             X: BoxSet, U: BoxSet, T: TerminalSet, x_now, tightening=0.0) -> QpProblem:
    """Condense the finite-horizon tracking problem at state ``x_now``.

    Parameters
    ----------
    weights : tuple
        ``(Qx, Qu, Qn)`` stage state, stage input and terminal weights.
    tightening : float
        Uniform margin subtracted from every finite bound (and from the
        normalized quadratic terminal row).
    """
    Qx, Qu, Qn = (np.atleast_2d(np.asarray(W, dtype=float)) for W in weights)
    n, p, N = model.n, model.p, pred.N
    x_now = np.asarray(x_now, dtype=float).ravel()
    Np = N * p

    Qbar = np.zeros(((N + 1) * n, (N + 1) * n))
    for s in range(N):
        Qbar[s * n:(s + 1) * n, s * n:(s + 1) * n] = Qx
    Qbar[N * n:, N * n:] = Qn
    Rbar = np.kron(np.eye(N), Qu)
    Ubar = np.tile(target.ubar, N)
    e0 = pred.Sx @ x_now - np.tile(target.xbar, N + 1)
    Su = pred.Su
    Hq = 2.0 * (Su.T @ Qbar @ Su + Rbar)
    Hq = 0.5 * (Hq + Hq.T)
    fq = 2.0 * (Su.T @ Qbar @ e0 - Rbar @ Ubar)
    c0 = float(e0 @ Qbar @ e0 + Ubar @ Rbar @ Ubar)

    rows, rhs, keys = [], [], []
    for s in range(N):
        Sxs, Sus = pred.block(s)
        free = Sxs @ x_now
        for i, sgn, bnd, side in _box_rows(X.lower, X.upper, tightening):
            rows.append(sgn * Sus[i])
            rhs.append(bnd - sgn * free[i])
            keys.append(("x", s, int(i), side))
        for i, sgn, bnd, side in _box_rows(U.lower, U.upper, tightening):
            a = np.zeros(Np)
            a[s * p + i] = sgn
            rows.append(a)
            rhs.append(bnd)
            keys.append(("u", s, int(i), side))
    SxN, SuN = pred.block(N)
    xN_free = SxN @ x_now
    quad = None
    if T.variant == "polyhedral":
        for j in range(T.H.shape[0]):
            rows.append(T.H[j] @ SuN)
            rhs.append(T.h[j] - tightening - T.H[j] @ xN_free)
            keys.append(("T", j))
    elif np.isfinite(T.gamma):
        d0 = xN_free - T.xbar
        P = SuN.T @ T.Psi @ SuN / T.gamma
        q = 2.0 * SuN.T @ T.Psi @ d0 / T.gamma
        r = float(d0 @ T.Psi @ d0) / T.gamma - 1.0 + tightening
        quad = QuadRow(0.5 * (P + P.T), q, r)

    G = np.array(rows).reshape(-1, Np)
    b = np.array(rhs, dtype=float)
    G, b, fixed, live = _normalize_rows(G, b)
    keys = tuple(k for k, ok in zip(keys, live) if ok)
    if quad is not None:
        keys = keys + (("Tq",),)
    return QpProblem(
        Hq=Hq, fq=fq, c0=c0, G=G, b=b, quad=quad, row_keys=keys,
        fixed_violation=fixed, N=N, n=n, p=p, Su=Su, e0=e0, Qbar=Qbar,
        Rbar=Rbar, Ubar=Ubar, x_now=x_now.copy(), pred=pred,
    )
