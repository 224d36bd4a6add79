"""Command line front end: ``check``, ``run`` and ``sweep``.

Exit codes
----------
0   success
2   (A, B) not controllable
3   target not admissible
4   (C, A) not observable in prediction mode
5   horizon too short for the Lyapunov-based terminal set
6   initial condition outside the region of attraction
7   numerical failure (including the omega* cap)
64  usage or configuration error
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, reap
from .config import TERMINAL_METHODS, RunConfig, load_config
from .errors import (ConfigurationError, HorizonError, ObservabilityError,
                     ReapError, RegionOfAttractionError)
from .numerics import is_observable
from .plant import (admit_model, list_constraints, resolve_target_from_equilibrium,
                    resolve_target_from_reference)
from .sim import (ControllerContext, SimConfig, build_controller, render_report,
                  run_closed_loop)

EXIT_USAGE = 64


@dataclass(frozen=True)
class Validation:
    """Outcome of the validation pipeline; ``ctx`` is ready to simulate."""

    cfg: RunConfig
    ctx: ControllerContext
    method: str
    method_defaulted: bool


def _region_check(ctx: ControllerContext, x0, method):
    """Phase-1 feasibility at ``x0``.

    In Lyapunov mode an infeasible problem that becomes feasible once the
    terminal row is dropped means the horizon is too short.
    """
    qp = ctx.qp(x0)
    if qp.fixed_violation <= 0:
        u, s = reap.phase_one(qp)
        if u is not None and s > 0:
            return
        if method == "lyapunov":
            u, s = reap.phase_one(qp, include_quad=False)
            if u is not None and s > 0:
                raise HorizonError()
    raise RegionOfAttractionError()


def validate(cfg: RunConfig, method=None) -> Validation:
    """Run every check in workflow order; raise the first failure."""
    model = admit_model(cfg.model())
    if cfg.target_kind == "reference":
        target = resolve_target_from_reference(model, cfg.X, cfg.U, cfg.target_value)
    else:
        target = resolve_target_from_equilibrium(model, cfg.X, cfg.U, cfg.target_value)

    method = method or cfg.terminal_method
    defaulted = method is None
    observable = is_observable(model.C, model.A)
    if defaulted:
        method = "prediction" if observable else "lyapunov"
    elif method == "prediction" and not observable:
        raise ObservabilityError()

    ctx = build_controller(model, cfg.X, cfg.U, cfg.Qx, cfg.Qu, cfg.N, target, method)
    _region_check(ctx, cfg.x0, method)
    return Validation(cfg, ctx, method, defaulted)


def _fmt_vec(v):
    return "[" + ", ".join(f"{x:.6g}" for x in v) + "]"


def check_report(v: Validation) -> str:
    ctx, T = v.ctx, v.ctx.terminal
    lines = [list_constraints(v.cfg.X, v.cfg.U)]
    if v.cfg.user_supplied:
        lines.append("note: system matrices are placeholders; supply the real model")
    lines.append(f"Target: xbar = {_fmt_vec(ctx.target.xbar)}, "
                 f"ubar = {_fmt_vec(ctx.target.ubar)}")
    tag = " (default)" if v.method_defaulted else ""
    lines.append(f"Terminal method: {v.method}{tag}")
    if T.variant == "polyhedral":
        lines.append(f"omega* = {T.omega_star}")
    else:
        lines.append(f"gamma = {T.gamma:.10g}")
    lines.append(f"Terminal set rows: {T.rows}")
    lines.append(f"Horizon: {ctx.N}, decision variables: {ctx.N * ctx.model.p}")
    lines.append("Initial condition: inside the region of attraction")
    return "\n".join(lines)


def _sim_config(cfg: RunConfig, method, budget=None, deadline_ms=None, steps=None,
                realtime=False):
    if deadline_ms is not None:
        budget = None
    elif budget is None:
        budget, deadline_ms = cfg.budget, cfg.deadline_ms
    return SimConfig(steps or cfg.steps, cfg.x0, budget, deadline_ms, method,
                     cfg.init_iterations, realtime)


def _simulate(v: Validation, sc: SimConfig, out_dir):
    trace = run_closed_loop(v.ctx, sc)
    text = render_report(trace, v.cfg.X, v.cfg.U, out_dir)
    return trace, text


# ---------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _budget_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid budget list {text!r}") from None
    if not vals or any(b < 0 for b in vals):
        raise argparse.ArgumentTypeError("budgets must be nonnegative integers")
    return vals


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _pos_int(text):
    v = _nonneg_int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _pos_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser():
    ap = _Parser(prog="reapmpc", description="Anytime-feasible MPC toolbox.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("check", help="validate a configuration and describe the controller")
    c.add_argument("config")
    c.add_argument("--terminal", choices=TERMINAL_METHODS)

    r = sub.add_parser("run", help="closed-loop simulation")
    r.add_argument("config")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--budget", type=_nonneg_int, help="iterations per sampling instant")
    g.add_argument("--deadline-ms", type=_pos_float, help="wall-clock time per instant")
    r.add_argument("--terminal", choices=TERMINAL_METHODS)
    r.add_argument("--steps", type=_pos_int)
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--realtime", action="store_true", help="pace the loop to the sampling period")

    s = sub.add_parser("sweep", help="compare several iteration budgets")
    s.add_argument("config")
    s.add_argument("--budgets", type=_budget_list, required=True, help="e.g. 1,5,50")
    s.add_argument("--terminal", choices=TERMINAL_METHODS)
    s.add_argument("--steps", type=_pos_int)
    s.add_argument("--out", default="sweep", help="output directory (default: sweep)")
    s.add_argument("--jobs", type=_pos_int, default=None, help="parallel simulations")
    return ap


def _cmd_check(args):
    v = validate(load_config(args.config), args.terminal)
    print(check_report(v))
    return 0


def _cmd_run(args):
    v = validate(load_config(args.config), args.terminal)
    sc = _sim_config(v.cfg, v.method, args.budget, args.deadline_ms, args.steps,
                     args.realtime)
    _, text = _simulate(v, sc, args.out)
    print(text, end="")
    print(f"wrote {Path(args.out) / 'trace.csv'}")
    return 0


def _cmd_sweep(args):
    v = validate(load_config(args.config), args.terminal)
    root = Path(args.out)
    jobs = args.jobs or min(len(args.budgets), 4)

    def one(b):
        sc = _sim_config(v.cfg, v.method, budget=b, steps=args.steps)
        trace, _ = _simulate(v, sc, root / f"budget_{b}")
        return b, trace

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(one, args.budgets))

    r = v.ctx.target.r
    print("budget  final_output_error  accepted  iterations")
    for b, tr in results:
        err = float(np.max(np.abs(tr.y[-1] - r)))
        print(f"{b:6d}  {err:18.6g}  {int(tr.accepted.sum()):8d}  {int(tr.iterations.sum()):10d}")
    print(f"wrote {len(results)} runs under {root}")
    return 0


COMMANDS = {"check": _cmd_check, "run": _cmd_run, "sweep": _cmd_sweep}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ReapError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # dataclass invariants on user-provided values
        print(str(exc), file=sys.stderr)
        return ConfigurationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
