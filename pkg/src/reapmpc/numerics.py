"""Dense linear-algebra kernels: ZOH discretization, rank tests, Riccati and
Lyapunov solves, and a small two-phase simplex LP solver.

All routines are pure functions of their arguments.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, NumericalError

EPS = np.finfo(float).eps


def as_matrix(M, name="matrix"):
    """Return ``M`` as a 2-D float array; scalars and vectors become 1×k."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ConfigurationError(f"{name} must be two-dimensional")
    return M


# ---------------------------------------------------------------------------
# discretization


def zoh_matrices(Ac, Bc, dt):
    """Zero-order-hold discretization of ``x' = Ac x + Bc u``.

    The block matrix ``[[Ac, Bc], [0, 0]]·dt`` is exponentiated once; the
    top-left block is ``e^{Ac dt}`` and the top-right block is the
    input integral. ``scipy.linalg.expm`` uses scaling and squaring.
    """
    Ac = as_matrix(Ac, "Ac")
    Bc = as_matrix(Bc, "Bc")
    n = Ac.shape[0]
    if Ac.shape != (n, n):
        raise ConfigurationError(f"Ac must be square, got {Ac.shape}")
    if Bc.shape[0] != n:
        raise ConfigurationError(f"Bc must have {n} rows, got {Bc.shape[0]}")
    if not dt > 0:
        raise ConfigurationError(f"sampling period must be positive, got {dt}")
    p = Bc.shape[1]
    M = np.zeros((n + p, n + p))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = scipy.linalg.expm(M * dt)
    return E[:n, :n].copy(), E[:n, n:].copy()


def zoh_discretize(cont, dt):
    """Discretize a :class:`~reapmpc.plant.ContinuousLti` with period ``dt``."""
    from .plant import DiscreteLti

    A, B = zoh_matrices(cont.Ac, cont.Bc, dt)
    return DiscreteLti(A, B, cont.Cc, cont.Dc, dt)


# ---------------------------------------------------------------------------
# rank tests


def numerical_rank(M, n=None):
    """Rank via column-pivoted QR with tolerance ``n·eps·max column norm``."""
    M = as_matrix(M)
    if n is None:
        n = max(M.shape)
    colmax = np.max(np.linalg.norm(M, axis=0)) if M.size else 0.0
    if colmax == 0.0:
        return 0
    R = scipy.linalg.qr(M, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    return int(np.sum(d > n * EPS * colmax))


def controllability_matrix(A, B):
    A = as_matrix(A)
    B = as_matrix(B)
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(C, A):
    A = as_matrix(A)
    C = as_matrix(C)
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def is_controllable(A, B):
    """True iff ``[B, AB, ..., A^{n-1}B]`` has full row rank."""
    n = as_matrix(A).shape[0]
    return numerical_rank(controllability_matrix(A, B), n) == n


def is_observable(C, A):
    """True iff ``[C; CA; ...; CA^{n-1}]`` has full column rank."""
    n = as_matrix(A).shape[0]
    return numerical_rank(observability_matrix(C, A), n) == n


def spectral_radius(M):
    return float(np.max(np.abs(np.linalg.eigvals(as_matrix(M)))))


# ---------------------------------------------------------------------------
# Riccati and Lyapunov


def _check_weights(Qx, Qu, n, p):
    if Qx.shape != (n, n):
        raise ConfigurationError(f"Qx must be {n}x{n}, got {Qx.shape}")
    if Qu.shape != (p, p):
        raise ConfigurationError(f"Qu must be {p}x{p}, got {Qu.shape}")
    if not np.allclose(Qx, Qx.T, atol=1e-12 * (1 + np.abs(Qx).max())):
        raise ConfigurationError("Qx must be symmetric")
    if not np.allclose(Qu, Qu.T, atol=1e-12 * (1 + np.abs(Qu).max())):
        raise ConfigurationError("Qu must be symmetric")
    if np.min(np.linalg.eigvalsh(Qx)) < -1e-12 * (1 + np.abs(Qx).max()):
        raise ConfigurationError("Qx must be positive semidefinite")
    try:
        np.linalg.cholesky(Qu)
    except np.linalg.LinAlgError:
        raise ConfigurationError("Qu must be positive definite") from None


def dare_residual(A, B, Qx, Qu, Q):
    """Frobenius norm of the Riccati equation residual at ``Q``."""
    AtQB = A.T @ Q @ B
    rhs = A.T @ Q @ A - AtQB @ np.linalg.solve(Qu + B.T @ Q @ B, AtQB.T) + Qx
    return float(np.linalg.norm(rhs - Q))


def solve_dare(A, B, Qx, Qu, max_iter=100_000, rtol=1e-9):
    """Solve the discrete algebraic Riccati equation by value iteration.

    Starts at ``Q = Qx`` and iterates the Riccati map until the residual
    drops below ``rtol·(1 + ||Q||_F)``.

    Returns
    -------
    ndarray
        Symmetric terminal weight ``Q_N``.
    """
    A, B = as_matrix(A, "A"), as_matrix(B, "B")
    Qx, Qu = as_matrix(Qx, "Qx"), as_matrix(Qu, "Qu")
    n, p = B.shape
    _check_weights(Qx, Qu, n, p)
    Q = Qx.copy()
    res = np.inf
    for _ in range(max_iter):
        AtQB = A.T @ Q @ B
        S = Qu + B.T @ Q @ B
        Qn = A.T @ Q @ A - AtQB @ np.linalg.solve(S, AtQB.T) + Qx
        Qn = 0.5 * (Qn + Qn.T)
        # Q^{j+1} - Q^j is the residual of Q^j, so keep Q^j when it is small;
        # the map is not monotone in norm and Q^{j+1} may be slightly worse
        res = np.linalg.norm(Qn - Q)
        if res <= rtol * (1.0 + np.linalg.norm(Q)):
            break
        Q = Qn
    res = dare_residual(A, B, Qx, Qu, Q)
    if res > rtol * (1.0 + np.linalg.norm(Q)):
        raise NumericalError(
            f"Riccati iteration did not converge in {max_iter} iterations "
            f"(residual {res:.3e})"
        )
    return Q


def terminal_gain(A, B, Qu, Qn):
    """LQR gain ``K = -(Qu + B'QnB)^{-1} B'QnA`` with a stability check."""
    A, B = as_matrix(A), as_matrix(B)
    Qu, Qn = as_matrix(Qu), as_matrix(Qn)
    K = -np.linalg.solve(Qu + B.T @ Qn @ B, B.T @ Qn @ A)
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0 - 1e-9:
        raise NumericalError(
            f"terminal gain does not stabilize the model (spectral radius {rho:.6g})"
        )
    return K


def solve_discrete_lyapunov(Acl):
    """Solve ``Acl' Psi Acl - Psi = -I`` through its Kronecker form."""
    Acl = as_matrix(Acl, "Acl")
    n = Acl.shape[0]
    M = np.kron(Acl.T, Acl.T) - np.eye(n * n)
    if spectral_radius(Acl) >= 1.0:
        raise NumericalError("Lyapunov equation requires a Schur matrix")
    try:
        v = np.linalg.solve(M, -np.eye(n).reshape(-1, order="F"))
    except np.linalg.LinAlgError:
        raise NumericalError("Lyapunov system is singular") from None
    Psi = v.reshape((n, n), order="F")
    return 0.5 * (Psi + Psi.T)


# ---------------------------------------------------------------------------
# linear programming


@dataclass(frozen=True)
class LpProblem:
    """``maximize c·z  subject to  G z <= h`` with ``z`` free."""

    objective: np.ndarray
    ineq_lhs: np.ndarray
    ineq_rhs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        G = np.asarray(self.ineq_lhs, dtype=float).reshape(-1, c.size)
        h = np.asarray(self.ineq_rhs, dtype=float).ravel()
        if h.size != G.shape[0]:
            raise ConfigurationError("LP right-hand side length mismatch")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "ineq_lhs", G)
        object.__setattr__(self, "ineq_rhs", h)


@dataclass(frozen=True)
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    optimum: Optional[float] = None
    argmax: Optional[np.ndarray] = None


def _pivot(T, r, c):
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_simplex(T, basis, allowed, tol, counter, max_pivots):
    """Iterate on tableau ``T`` (objective in the last row) until optimal.

    Returns ``"optimal"`` or ``"unbounded"``. Dantzig pricing is used until
    50 consecutive degenerate pivots, then Bland's rule for the remainder.
    """
    m = T.shape[0] - 1
    bland = False
    degenerate = 0
    while True:
        d = T[m, :-1]
        cand = np.flatnonzero((d > tol) & allowed)
        if cand.size == 0:
            return "optimal"
        j = cand[0] if bland else cand[np.argmax(d[cand])]
        colj = T[:m, j]
        rows = np.flatnonzero(colj > tol)
        if rows.size == 0:
            return "unbounded"
        ratios = np.maximum(T[rows, -1], 0.0) / colj[rows]
        rmin = ratios.min()
        ties = rows[ratios <= rmin + tol * (1.0 + abs(rmin))]
        if bland:
            r = ties[np.argmin(basis[ties])]
        else:
            r = ties[np.argmax(colj[ties])]
        if rmin <= tol:
            degenerate += 1
            if degenerate >= 50:
                bland = True
        else:
            degenerate = 0
        _pivot(T, r, j)
        basis[r] = j
        counter[0] += 1
        if counter[0] > max_pivots:
            raise NumericalError(f"simplex exceeded {max_pivots} pivots")


def lp_solve(p: LpProblem, tol=1e-9, max_pivots=1_000_000) -> LpResult:
    """Dense two-phase simplex for ``max c·z s.t. G z <= h``.

    The free vector is split as ``z = z+ - z-`` and every row gets a slack.
    Rows are equilibrated by their infinity norm first; all-zero rows are
    either dropped or declare infeasibility.
    """
    c = p.objective
    G = p.ineq_lhs.copy()
    h = p.ineq_rhs.copy()
    nz = c.size

    scale = np.max(np.abs(G), axis=1) if G.size else np.zeros(0)
    zero = scale == 0.0
    if np.any(h[zero] < -tol):
        return LpResult("infeasible")
    G, h, scale = G[~zero], h[~zero], scale[~zero]
    G /= scale[:, None]
    h /= scale
    m = G.shape[0]
    if m == 0:
        if np.any(c != 0.0):
            return LpResult("unbounded")
        z = np.zeros(nz)
        return LpResult("optimal", 0.0, z)

    neg = h < 0
    n_art = int(neg.sum())
    nstruct = 2 * nz + m
    ncol = nstruct + n_art
    T = np.zeros((m + 1, ncol + 1))
    sign = np.where(neg, -1.0, 1.0)
    T[:m, :nz] = G * sign[:, None]
    T[:m, nz:2 * nz] = -G * sign[:, None]
    T[:m, 2 * nz:nstruct] = np.diag(sign)
    T[:m, -1] = h * sign
    basis = np.arange(2 * nz, nstruct).copy()
    art_rows = np.flatnonzero(neg)
    for k, i in enumerate(art_rows):
        T[i, nstruct + k] = 1.0
        basis[i] = nstruct + k
    counter = [0]

    if n_art:
        # phase 1: maximize -sum(artificials), expressed in reduced form
        T[m, :] = 0.0
        T[m, :nstruct] = T[art_rows, :nstruct].sum(axis=0)
        T[m, -1] = T[art_rows, -1].sum()
        allowed = np.ones(ncol, dtype=bool)
        _run_simplex(T, basis, allowed, tol, counter, max_pivots)
        if T[m, -1] > tol * (1.0 + np.max(np.abs(h))):
            return LpResult("infeasible")
        # drive remaining artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= nstruct:
                cols = np.flatnonzero(np.abs(T[i, :nstruct]) > tol)
                if cols.size:
                    j = cols[np.argmax(np.abs(T[i, cols]))]
                    _pivot(T, i, j)
                    basis[i] = j
                else:
                    keep[i] = False
        rows = np.append(np.flatnonzero(keep), m)
        T = np.hstack([T[rows][:, :nstruct], T[rows][:, -1:]])
        basis = basis[keep]
        m = basis.size

    cfull = np.zeros(nstruct)
    cfull[:nz] = c
    cfull[nz:2 * nz] = -c
    T[m, :nstruct] = cfull - cfull[basis] @ T[:m, :nstruct]
    T[m, -1] = -cfull[basis] @ T[:m, -1]
    allowed = np.ones(nstruct, dtype=bool)
    status = _run_simplex(T, basis, allowed, tol, counter, max_pivots)
    if status == "unbounded":
        return LpResult("unbounded")
    x = np.zeros(nstruct)
    x[basis] = T[:m, -1]
    z = x[:nz] - x[nz:2 * nz]
    return LpResult("optimal", float(c @ z), z)
