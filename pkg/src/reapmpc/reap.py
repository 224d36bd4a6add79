"""Anytime solver: the discretized primal-dual flow on the modified barrier.

Every iterate of the flow is strictly feasible for the condensed problem, so
the solve can be cut off after any number of iterations. Around the flow sit
the k = 0 initialization (a phase-1 LP), the shifted warm start, and the
acceptance/rejection rule that keeps the quadratic cost from increasing.

Tightening
----------
The barrier is applied to the shifted rows ``g_i + shift`` with
``shift = 1 / ((1 - eta)·sigma_max)``. At ``sigma = sigma_max`` the barrier's
singular surface ``sigma·(g_i + shift) = 1`` then lies at ``g_i = -eta·shift``,
strictly inside the feasible set, and the flow converges to the optimum of
the problem tightened by ``shift`` (in normalized row units, see
``qpform``). Without this shift the dual ascent cannot raise a multiplier
while the primal stays feasible.
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from . import _kernel
from .errors import NumericalError, RegionOfAttractionError
from .numerics import LpProblem, lp_solve
from .qpform import QpProblem, constraint_values
from .terminal import terminal_law


@dataclass(frozen=True)
class SolverSettings:
    dtau: float = 1e-3
    sigma_max: float = 1e3
    sigma_min: float = 1e-3
    eta: float = 0.1
    # deadline mode checks the clock after this many iterations
    chunk: int = 16

    @property
    def shift(self):
        return 1.0 / ((1.0 - self.eta) * self.sigma_max)


DEFAULT_SETTINGS = SolverSettings()


@dataclass(frozen=True)
class ReapIterate:
    u_hat: np.ndarray
    lam_hat: np.ndarray
    sigma: float
    tau: int = 0
    dtau: float = DEFAULT_SETTINGS.dtau


@dataclass(frozen=True)
class StepOutcome:
    accepted: bool
    iterations_run: int
    cost_before: float
    cost_after: float
    applied_u: np.ndarray
    final: ReapIterate
    stalls: int = 0


class _Args:
    """Arrays handed to the compiled kernel, prepared once per problem."""

    def __init__(self, qp: QpProblem):
        Hq = qp.Hq
        c = float(np.max(np.linalg.eigvalsh(Hq))) if Hq.size else 0.0
        self.scale = c if c > 0 else 1.0
        self.H = np.ascontiguousarray(Hq / self.scale)
        self.f = np.ascontiguousarray(qp.fq / self.scale)
        self.Hnorm = c / self.scale
        nv = qp.n_vars
        self.G = np.ascontiguousarray(qp.G, dtype=float).reshape(-1, nv)
        self.b = np.ascontiguousarray(qp.b, dtype=float)
        self.gram = np.ascontiguousarray(self.G @ self.G.T)
        if qp.quad is not None:
            self.has_quad = True
            self.P = np.ascontiguousarray(qp.quad.P)
            self.q = np.ascontiguousarray(qp.quad.q)
            self.r = float(qp.quad.r)
            self.Pnorm = float(np.max(np.abs(np.linalg.eigvalsh(self.P)), initial=0.0))
        else:
            self.has_quad = False
            self.P = np.zeros((nv, nv))
            self.q = np.zeros(nv)
            self.r = 0.0
            self.Pnorm = 0.0

    def run(self, u, lam, iters, s: SolverSettings):
        # multipliers live in the scaled-cost units inside the kernel
        lam_s = np.ascontiguousarray(lam / self.scale)
        u, lam_s, sigma, stalls = _kernel.flow_kernel(
            self.H, self.f, self.G, self.b, self.gram, self.has_quad, self.P, self.q,
            self.r, self.Pnorm, self.Hnorm, np.ascontiguousarray(u, dtype=float),
            lam_s, int(iters), s.dtau, s.sigma_max, s.sigma_min, s.eta, s.shift,
        )
        return u, lam_s * self.scale, sigma, stalls


def _law(qp, u, s: SolverSettings):
    g = constraint_values(qp, u)
    lin = g[: qp.G.shape[0]]
    gq = float(g[-1]) if qp.quad is not None else 0.0
    return float(_kernel.sigma_law(np.ascontiguousarray(lin), gq, qp.quad is not None,
                                   s.shift, s.sigma_max, s.sigma_min, s.eta))


def sigma_update(it: ReapIterate, qp: QpProblem, settings=DEFAULT_SETTINGS) -> float:
    """Largest ``sigma_max·2^-j`` (floored at ``sigma_min``) such that
    ``sigma·(g_i(u) + shift) <= 1 - eta`` for every row."""
    return _law(qp, it.u_hat, settings)


def flow_step(it: ReapIterate, qp: QpProblem, settings=DEFAULT_SETTINGS) -> ReapIterate:
    """One explicit Euler step of the flow."""
    s = replace(settings, dtau=it.dtau)
    u, lam, sigma, _ = _Args(qp).run(it.u_hat, it.lam_hat, 1, s)
    return ReapIterate(u, lam, sigma, it.tau + 1, it.dtau)


def is_strictly_feasible(qp: QpProblem, u):
    if qp.fixed_violation > 0:
        return False
    g = constraint_values(qp, u)
    return bool(g.size == 0 or np.max(g) < 0)


# ---------------------------------------------------------------------------
# initialization


def _quad_cut(quad, u):
    """Tangent cut ``gq(u) + dq·(v - u) <= -s`` as ``(row, rhs)``."""
    gq = quad.value(u)
    dq = quad.grad(u)
    return dq, dq @ u - gq


def phase_one(qp: QpProblem, include_quad=True, s_cap=1.0, max_cuts=200, u_ref=None,
              keep=1e-2):
    """Strictly feasible point for the rows of ``qp``.

    Stage 1 maximizes the common slack ``s`` (capped at ``s_cap``) of all
    rows, ``g_i(u) <= -s``. Stage 2 then returns the point closest in the
    1-norm to ``u_ref`` (default: the unconstrained minimizer of the cost)
    among those keeping a slack of ``min(s/2, keep)``, so the start is
    interior yet close to the optimum. The quadratic row, when included, is handled by
    tangent cutting planes in both stages.

    Returns ``(u, s)`` with ``s = -max_i g_i(u) > 0``, or ``(None, s_lp)``
    with ``s_lp <= 0`` when no strictly feasible point exists.
    """
    nv = qp.n_vars
    quad = qp.quad if include_quad else None
    cut_rows, cut_rhs = [], []

    def true_margin(u):
        g = qp.G @ u - qp.b
        s = -np.max(g, initial=-s_cap)
        if quad is not None:
            s = min(s, -quad.value(u))
        return s

    # stage 1: variables (u, s)
    best_u, best_s = None, -np.inf
    s_lp = -np.inf
    for _ in range(max_cuts + 1):
        rows = np.vstack([qp.G] + cut_rows) if cut_rows else qp.G
        rhs = np.concatenate([qp.b, cut_rhs]) if cut_rows else qp.b
        cap = np.zeros(nv + 1)
        cap[-1] = 1.0
        G = np.vstack([np.hstack([rows, np.ones((rows.shape[0], 1))]), cap])
        h = np.append(rhs, s_cap)
        res = lp_solve(LpProblem(cap, G, h))
        if res.status != "optimal":
            raise NumericalError(f"phase-1 LP returned {res.status}")
        u, s_lp = res.argmax[:nv], res.argmax[nv]
        if s_lp <= 0:
            return None, s_lp
        s_true = true_margin(u)
        if s_true > best_s:
            best_u, best_s = u, s_true
        if quad is None or s_true >= 0.5 * s_lp:
            break
        r, c = _quad_cut(quad, u)
        cut_rows.append(r[None, :])
        cut_rhs.append(c)
    if best_s <= 0:
        return None, best_s

    # stage 2: variables (u, t), minimize sum(t) with |u - u_ref| <= t
    if u_ref is None:
        try:
            u_ref = np.linalg.solve(qp.Hq, -qp.fq)
        except np.linalg.LinAlgError:
            u_ref = np.linalg.lstsq(qp.Hq, -qp.fq, rcond=None)[0]
    target = min(0.5 * s_lp, keep)
    eye = np.eye(nv)
    for _ in range(max_cuts + 1):
        rows = np.vstack([qp.G] + cut_rows) if cut_rows else qp.G
        rhs = np.concatenate([qp.b, cut_rhs]) if cut_rows else qp.b
        G = np.vstack([
            np.hstack([rows, np.zeros((rows.shape[0], nv))]),
            np.hstack([eye, -eye]),
            np.hstack([-eye, -eye]),
        ])
        h = np.concatenate([rhs - target, u_ref, -u_ref])
        c = np.concatenate([np.zeros(nv), -np.ones(nv)])
        res = lp_solve(LpProblem(c, G, h))
        if res.status != "optimal":
            break
        u = res.argmax[:nv]
        s_true = true_margin(u)
        if quad is None or -quad.value(u) >= 0.5 * target:
            if s_true > 0:
                return u, s_true
            break
        r, c2 = _quad_cut(quad, u)
        cut_rows.append(r[None, :])
        cut_rhs.append(c2)
    return best_u, best_s


def initialize_at_k0(qp: QpProblem, settings=DEFAULT_SETTINGS, candidate=None,
                     error=RegionOfAttractionError):
    """Strictly feasible starting iterate with unit multipliers.

    ``candidate`` (for example the terminal-law rollout) is used as is when
    it is strictly feasible; otherwise the phase-1 LP supplies the point.
    """
    if qp.fixed_violation > 0:
        raise error()
    if candidate is not None and is_strictly_feasible(qp, candidate):
        u = np.asarray(candidate, dtype=float).copy()
    else:
        u, s = phase_one(qp)
        if u is None or s <= 0:
            raise error()
    lam = np.ones(qp.n_rows)
    return ReapIterate(u, lam, _law(qp, u, settings), 0, settings.dtau)


def terminal_rollout(qp: QpProblem, model, K, target):
    """Input sequence obtained by applying the terminal law from ``x_now``."""
    x = qp.x_now.copy()
    us = []
    for _ in range(qp.N):
        u = terminal_law(K, target, x)
        us.append(u)
        x = model.A @ x + model.B @ u
    return np.concatenate(us)


# ---------------------------------------------------------------------------
# warm start


def _shift_key(key):
    if key[0] in ("x", "u"):
        kind, s, i, side = key
        return (kind, s + 1, i, side)
    return None


def warm_start(prev: ReapIterate, prev_qp: QpProblem, model, K, target,
               qp_next: QpProblem, settings=DEFAULT_SETTINGS):
    """Shift the retained sequence by one stage and append the terminal law.

    Multipliers follow their rows: stage ``s`` rows of the new problem take
    the values of stage ``s+1`` rows of the old one; rows without a
    predecessor (terminal rows, the new last stage) start at 1. Returns
    ``None`` when the shifted sequence is not strictly feasible for
    ``qp_next``.
    """
    p = prev_qp.p
    xN = prev_qp.terminal_state(prev.u_hat)
    u = np.concatenate([prev.u_hat[p:], terminal_law(K, target, xN)])
    if not is_strictly_feasible(qp_next, u):
        return None
    old = dict(zip(prev_qp.row_keys, prev.lam_hat))
    lam = np.array([old.get(_shift_key(k), 1.0) for k in qp_next.row_keys])
    return ReapIterate(u, lam, _law(qp_next, u, settings), 0, prev.dtau)


# ---------------------------------------------------------------------------
# budgeted solve


def run_budgeted(it0: ReapIterate, qp: QpProblem, budget=None,
                 settings=DEFAULT_SETTINGS, deadline_ms=None, callback=None) -> StepOutcome:
    """Run the flow for ``budget`` iterations (or until ``deadline_ms``)
    and apply the acceptance rule.

    The result is accepted only if the quadratic cost is strictly lower
    than at the starting point; otherwise the starting sequence is kept.
    ``callback(iterate)`` is invoked after every single iteration when
    given (used by tests to inspect each iterate).
    """
    s = replace(settings, dtau=it0.dtau)
    args = _Args(qp)
    u, lam, sigma = it0.u_hat, it0.lam_hat, it0.sigma
    done = 0
    stalls = 0
    if deadline_ms is not None:
        t_end = time.perf_counter() + deadline_ms / 1000.0
        while time.perf_counter() < t_end:
            u, lam, sigma, st = args.run(u, lam, s.chunk, s)
            done += s.chunk
            stalls += st
    else:
        budget = int(budget)
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        if callback is None:
            if budget:
                u, lam, sigma, stalls = args.run(u, lam, budget, s)
            done = budget
        else:
            for _ in range(budget):
                u, lam, sigma, st = args.run(u, lam, 1, s)
                done += 1
                stalls += st
                callback(ReapIterate(u, lam, sigma, it0.tau + done, it0.dtau))
    final = ReapIterate(u, lam, sigma, it0.tau + done, it0.dtau)
    j0 = qp.cost(it0.u_hat)
    j1 = qp.cost(u)
    accepted = j1 < j0
    applied = u if accepted else it0.u_hat
    kept = final if accepted else replace(final, u_hat=it0.u_hat.copy())
    return StepOutcome(accepted, done, j0, j1, applied.copy(), kept, stalls)
