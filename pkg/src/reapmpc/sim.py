"""Controller context and closed-loop simulation under a one-step delay.

The input applied at instant ``k+1`` is computed during instant ``k`` from the
measured ``x(k)`` and the already known ``u(k)``: the solver is posed at the
one-step prediction ``A x(k) + B u(k)``. The input applied at ``k = 0`` comes
from the offline initialization at ``x(0)``.
"""

import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import reap
from .errors import FeasibilityBreach
from .numerics import solve_dare, solve_discrete_lyapunov, terminal_gain
from .plant import BoxSet, DiscreteLti, SteadyTarget, contains
from .qpform import Prediction, QpProblem, build_prediction, build_qp
from .terminal import TerminalSet, compute_omega_star, lyapunov_terminal_set

FMT = "%.17g"


@dataclass(frozen=True)
class ControllerContext:
    """Everything needed to pose and solve the problem at any state."""

    model: DiscreteLti
    X: BoxSet
    U: BoxSet
    Qx: np.ndarray
    Qu: np.ndarray
    Qn: np.ndarray
    K: np.ndarray
    target: SteadyTarget
    terminal: TerminalSet
    pred: Prediction
    settings: reap.SolverSettings = reap.DEFAULT_SETTINGS
    tightening: float = 0.0

    @property
    def N(self):
        return self.pred.N

    def qp(self, x) -> QpProblem:
        return build_qp(self.model, self.pred, (self.Qx, self.Qu, self.Qn),
                        self.target, self.X, self.U, self.terminal, x,
                        self.tightening)

    def rollout(self, qp):
        return reap.terminal_rollout(qp, self.model, self.K, self.target)

    def initialize(self, qp, error=reap.RegionOfAttractionError):
        return reap.initialize_at_k0(qp, self.settings, self.rollout(qp), error)


def design_terminal(model, X, U, Qx, Qu, target, method):
    """Terminal weight, gain and set for the given method.

    Returns ``(Qn, K, TerminalSet)``.
    """
    Qn = solve_dare(model.A, model.B, Qx, Qu)
    K = terminal_gain(model.A, model.B, Qu, Qn)
    if method == "prediction":
        _, T = compute_omega_star(model, K, target, X, U)
    elif method == "lyapunov":
        Psi = solve_discrete_lyapunov(model.A + model.B @ K)
        T = lyapunov_terminal_set(model, K, Psi, target, X, U)
    else:
        raise ValueError(f"unknown terminal method {method!r}")
    return Qn, K, T


def build_controller(model, X, U, Qx, Qu, N, target, method,
                     settings=reap.DEFAULT_SETTINGS, tightening=0.0):
    Qx = np.atleast_2d(np.asarray(Qx, dtype=float))
    Qu = np.atleast_2d(np.asarray(Qu, dtype=float))
    Qn, K, T = design_terminal(model, X, U, Qx, Qu, target, method)
    return ControllerContext(model, X, U, Qx, Qu, Qn, K, target, T,
                             build_prediction(model, N), settings, tightening)


@dataclass(frozen=True)
class SimConfig:
    steps: int
    x0: np.ndarray
    budget: Optional[int] = 50
    deadline_ms: Optional[float] = None
    terminal_method: str = "prediction"
    init_iterations: int = 1000
    realtime: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.deadline_ms is None and (self.budget is None or self.budget < 0):
            raise ValueError("budget must be a nonnegative iteration count")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())


@dataclass
class SimTrace:
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    iterations: np.ndarray
    accepted: np.ndarray
    cost: np.ndarray
    fallbacks: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def steps(self):
        return self.x.shape[0]

    def header(self):
        n, p, m = self.x.shape[1], self.u.shape[1], self.y.shape[1]
        cols = ["k"]
        cols += [f"x_{i + 1}" for i in range(n)]
        cols += [f"u_{i + 1}" for i in range(p)]
        cols += [f"y_{i + 1}" for i in range(m)]
        cols += ["sigma", "iterations", "accepted", "cost"]
        return ",".join(cols)

    def csv_text(self):
        out = io.StringIO()
        out.write(self.header() + "\n")
        for k in range(self.steps):
            vals = [str(k)]
            vals += [FMT % v for v in self.x[k]]
            vals += [FMT % v for v in self.u[k]]
            vals += [FMT % v for v in self.y[k]]
            vals += [FMT % self.sigma[k], str(int(self.iterations[k])),
                     str(int(self.accepted[k])), FMT % self.cost[k]]
            out.write(",".join(vals) + "\n")
        return out.getvalue()


def _check_sample(k, x, u, X, U):
    for name, v, S in (("x", x, X), ("u", u, U)):
        if contains(S, v):
            continue
        with np.errstate(invalid="ignore"):
            bad = np.flatnonzero((v > S.upper) | (v < S.lower))
        i = int(bad[0])
        raise FeasibilityBreach(
            f"constraint violated at k={k}: {name}{i + 1} = {float(v[i])!r} outside "
            f"[{S.lower[i]}, {S.upper[i]}]"
        )


def run_closed_loop(ctx: ControllerContext, cfg: SimConfig,
                    perturb: Optional[Callable[[int, np.ndarray], np.ndarray]] = None,
                    ) -> SimTrace:
    """Simulate the nominal plant with the anytime controller.

    ``perturb(k, x)``, if given, may replace the measured state at instant
    ``k`` before it is recorded and used (a test hook for the delay logic).
    """
    model, s = ctx.model, ctx.settings
    n, p, m, steps = model.n, model.p, model.m, cfg.steps
    X = np.zeros((steps, n))
    Uu = np.zeros((steps, p))
    Y = np.zeros((steps, m))
    sig = np.zeros(steps)
    iters = np.zeros(steps, dtype=int)
    acc = np.zeros(steps, dtype=int)
    cost = np.zeros(steps)
    fallbacks = 0

    x = cfg.x0.copy()
    qp = ctx.qp(x)
    it = ctx.initialize(qp)
    if cfg.init_iterations:
        it = reap.run_budgeted(it, qp, cfg.init_iterations, s).final
    prev, prev_qp = it, qp
    u = qp.first_input(it.u_hat)

    t_start = time.perf_counter()
    for k in range(steps):
        if perturb is not None:
            x = np.asarray(perturb(k, x.copy()), dtype=float)
        _check_sample(k, x, u, ctx.X, ctx.U)
        X[k], Uu[k], Y[k] = x, u, model.output(x, u)

        # solve for the input applied at k+1
        x_next = model.step(x, u)
        qp = ctx.qp(x_next)
        ws = reap.warm_start(prev, prev_qp, model, ctx.K, ctx.target, qp, s)
        if ws is None:
            fallbacks += 1
            ws = ctx.initialize(qp)
        out = reap.run_budgeted(ws, qp, cfg.budget, s, deadline_ms=cfg.deadline_ms)
        sig[k] = out.final.sigma
        iters[k] = out.iterations_run
        acc[k] = int(out.accepted)
        cost[k] = qp.cost(out.applied_u)
        prev, prev_qp = out.final, qp

        x, u = x_next, qp.first_input(out.applied_u)
        if cfg.realtime:
            wait = t_start + (k + 1) * model.dt - time.perf_counter()
            if wait > 0:
                time.sleep(wait)

    return SimTrace(X, Uu, Y, sig, iters, acc, cost, fallbacks)


# ---------------------------------------------------------------------------
# reporting


def _series(path, header, k, cols):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["k"] + header) + "\n")
        for i in range(len(k)):
            fh.write(",".join([str(k[i])] + [FMT % v for v in cols[i]]) + "\n")


def render_report(trace: SimTrace, X: BoxSet, U: BoxSet, out_dir=None) -> str:
    """Text summary of a run; with ``out_dir`` also writes the data files
    ``trace.csv``, ``sigma.csv``, ``states.csv``, ``inputs.csv``,
    ``outputs.csv`` and ``report.txt``."""
    lines = [f"steps: {trace.steps}"]
    for label, data, S in (("x", trace.x, X), ("u", trace.u, U)):
        for i in range(data.shape[1]):
            col = data[:, i]
            lines.append(
                f"{label}{i + 1}: min {FMT % col.min()} max {FMT % col.max()} "
                f"final {FMT % col[-1]}"
            )
    for i in range(trace.y.shape[1]):
        col = trace.y[:, i]
        lines.append(f"y{i + 1}: min {FMT % col.min()} max {FMT % col.max()} "
                     f"final {FMT % col[-1]}")
    lines.append("constraint margin minima:")
    for label, data, S in (("x", trace.x, X), ("u", trace.u, U)):
        for i in range(data.shape[1]):
            if np.isfinite(S.upper[i]):
                lines.append(f"  {label}{i + 1} <= {S.upper[i]:g}: "
                             f"{FMT % np.min(S.upper[i] - data[:, i])}")
            if np.isfinite(S.lower[i]):
                lines.append(f"  {label}{i + 1} >= {S.lower[i]:g}: "
                             f"{FMT % np.min(data[:, i] - S.lower[i])}")
    lines.append(f"accepted steps: {int(trace.accepted.sum())} of {trace.steps}")
    lines.append(f"total iterations: {int(trace.iterations.sum())}")
    lines.append(f"warm-start fallbacks: {trace.fallbacks}")
    lines.append(f"final cost: {FMT % trace.cost[-1]}")
    text = "\n".join(lines) + "\n"

    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "trace.csv").write_text(trace.csv_text())
        (d / "report.txt").write_text(text)
        k = np.arange(trace.steps)
        _series(d / "sigma.csv", ["sigma"], k, trace.sigma[:, None])
        _series(d / "states.csv", [f"x_{i + 1}" for i in range(trace.x.shape[1])], k, trace.x)
        _series(d / "inputs.csv", [f"u_{i + 1}" for i in range(trace.u.shape[1])], k, trace.u)
        _series(d / "outputs.csv", [f"y_{i + 1}" for i in range(trace.y.shape[1])], k, trace.y)
    return text
