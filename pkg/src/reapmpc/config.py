"""JSON run configuration: loading, schema checks and model assembly.

A configuration file has one object per workflow box::

    {
      "system":      {"domain": "discrete", "A": ..., "B": ..., "C": ...,
                      "D": ... (optional), "dt": 0.1},
      "constraints": {"x_upper": [...], "x_lower": [...],
                      "u_upper": [...], "u_lower": [...]},
      "weights":     {"Qx": [[...]] or {"diag": [...]}, "Qu": ...},
      "horizon":     10,
      "target":      {"kind": "reference" | "equilibrium", "value": [...]},
      "terminal":    {"method": "prediction" | "lyapunov"}   (optional),
      "simulation":  {"steps": 300, "budget": 50, "x0": [...]}
    }

Bounds may be given as the strings ``"Inf"`` / ``"-Inf"`` (any case).
Every error names the offending field.
"""

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .numerics import zoh_discretize
from .plant import BoxSet, ContinuousLti, DiscreteLti

TERMINAL_METHODS = ("prediction", "lyapunov")
TARGET_KINDS = ("reference", "equilibrium")


@dataclass(frozen=True)
class RunConfig:
    domain: str
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float
    X: BoxSet
    U: BoxSet
    Qx: np.ndarray
    Qu: np.ndarray
    N: int
    target_kind: str
    target_value: np.ndarray
    terminal_method: Optional[str]
    steps: int
    budget: Optional[int]
    deadline_ms: Optional[float]
    x0: np.ndarray
    init_iterations: int = 1000
    user_supplied: bool = False
    source: str = "<memory>"

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    def model(self) -> DiscreteLti:
        """Discrete model, discretized with a zero-order hold if needed."""
        if self.domain == "continuous":
            return zoh_discretize(ContinuousLti(self.A, self.B, self.C, self.D), self.dt)
        return DiscreteLti(self.A, self.B, self.C, self.D, self.dt)

    def override(self, **kw):
        """Copy with the non-``None`` keyword values replaced."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# ---------------------------------------------------------------------------
# field readers


def _get(obj, key, path, default=...):
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{path}: expected an object")
    if key not in obj:
        if default is ...:
            raise ConfigurationError(f"{path}.{key}: missing required field")
        return default
    return obj[key]


def _number(v, path, allow_inf=False):
    if isinstance(v, bool):
        raise ConfigurationError(f"{path}: expected a number, got {v!r}")
    if isinstance(v, str) and allow_inf:
        s = v.strip().lower()
        if s in ("inf", "+inf"):
            return np.inf
        if s == "-inf":
            return -np.inf
    if isinstance(v, (int, float)):
        x = float(v)
        if np.isnan(x) or (np.isinf(x) and not allow_inf):
            raise ConfigurationError(f"{path}: value must be finite")
        return x
    raise ConfigurationError(f"{path}: expected a number, got {v!r}")


def _vector(v, path, size=None, allow_inf=False):
    if isinstance(v, (int, float, str)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigurationError(f"{path}: expected a non-empty list of numbers")
    out = np.array([_number(x, f"{path}[{i}]", allow_inf) for i, x in enumerate(v)])
    if size is not None and out.size != size:
        raise ConfigurationError(f"{path}: expected {size} entries, got {out.size}")
    return out


def _matrix(v, path, shape=None):
    """Nested list, scalar, or ``{"diag": [...]}``."""
    if isinstance(v, dict):
        d = _vector(_get(v, "diag", path), f"{path}.diag")
        M = np.diag(d)
    elif isinstance(v, (int, float)) and not isinstance(v, bool):
        M = np.array([[_number(v, path)]])
    elif isinstance(v, list) and v and all(isinstance(r, list) for r in v):
        width = len(v[0])
        if width == 0:
            raise ConfigurationError(f"{path}: rows must not be empty")
        for i, r in enumerate(v):
            if len(r) != width:
                raise ConfigurationError(
                    f"{path}[{i}]: row has {len(r)} entries, expected {width}"
                )
        M = np.array([[_number(x, f"{path}[{i}][{j}]") for j, x in enumerate(r)]
                      for i, r in enumerate(v)])
    elif isinstance(v, list) and v:
        # a flat list is a single row
        M = _vector(v, path)[None, :]
    else:
        raise ConfigurationError(f"{path}: expected a matrix")
    if shape is not None and M.shape != shape:
        raise ConfigurationError(
            f"{path}: expected shape {shape[0]}x{shape[1]}, got {M.shape[0]}x{M.shape[1]}"
        )
    return M


def _count(v, path, minimum):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise ConfigurationError(f"{path}: expected an integer, got {v!r}")
    if v < minimum:
        raise ConfigurationError(f"{path}: must be at least {minimum}, got {int(v)}")
    return int(v)


def _choice(v, path, options):
    if not isinstance(v, str) or v.lower() not in options:
        raise ConfigurationError(f"{path}: expected one of {', '.join(options)}, got {v!r}")
    return v.lower()


# ---------------------------------------------------------------------------


def parse_config(data: dict, source="<memory>") -> RunConfig:
    """Validate a decoded JSON document and build a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be an object")

    sysd = _get(data, "system", "$")
    domain = _choice(_get(sysd, "domain", "system", "discrete"), "system.domain",
                     ("discrete", "continuous"))
    A = _matrix(_get(sysd, "A", "system"), "system.A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigurationError(f"system.A: must be square, got {A.shape[0]}x{A.shape[1]}")
    B = _matrix(_get(sysd, "B", "system"), "system.B")
    if B.shape[0] != n:
        # a flat list for a single-input system reads naturally as a column
        if B.shape == (1, n):
            B = B.T
        else:
            raise ConfigurationError(f"system.B: expected {n} rows, got {B.shape[0]}")
    p = B.shape[1]
    C = _matrix(_get(sysd, "C", "system"), "system.C")
    if C.shape[1] != n:
        raise ConfigurationError(f"system.C: expected {n} columns, got {C.shape[1]}")
    m = C.shape[0]
    D_raw = _get(sysd, "D", "system", None)
    D = np.zeros((m, p)) if D_raw is None else _matrix(D_raw, "system.D", (m, p))
    dt = _number(_get(sysd, "dt", "system", 1.0), "system.dt")
    if dt <= 0:
        raise ConfigurationError("system.dt: must be positive")
    user_supplied = bool(_get(sysd, "user_supplied", "system", False))

    cons = _get(data, "constraints", "$")

    def bound(key, size, fill):
        v = _get(cons, key, "constraints", None)
        if v is None:
            return np.full(size, fill)
        return _vector(v, f"constraints.{key}", size, allow_inf=True)

    try:
        X = BoxSet(bound("x_lower", n, -np.inf), bound("x_upper", n, np.inf))
        U = BoxSet(bound("u_lower", p, -np.inf), bound("u_upper", p, np.inf))
    except ConfigurationError as exc:
        if str(exc).startswith("constraints."):
            raise
        raise ConfigurationError(f"constraints: {exc}") from None

    w = _get(data, "weights", "$")
    Qx = _matrix(_get(w, "Qx", "weights"), "weights.Qx", (n, n))
    Qu = _matrix(_get(w, "Qu", "weights"), "weights.Qu", (p, p))

    N = _count(_get(data, "horizon", "$"), "horizon", 1)

    tgt = _get(data, "target", "$")
    kind = _choice(_get(tgt, "kind", "target"), "target.kind", TARGET_KINDS)
    size = m if kind == "reference" else n
    value = _vector(_get(tgt, "value", "target"), "target.value", size)

    term = _get(data, "terminal", "$", {})
    method = _get(term, "method", "terminal", None)
    if method is not None:
        method = _choice(method, "terminal.method", TERMINAL_METHODS)

    sim = _get(data, "simulation", "$")
    steps = _count(_get(sim, "steps", "simulation"), "simulation.steps", 1)
    budget = _get(sim, "budget", "simulation", 50)
    budget = None if budget is None else _count(budget, "simulation.budget", 0)
    deadline = _get(sim, "deadline_ms", "simulation", None)
    if deadline is not None:
        deadline = _number(deadline, "simulation.deadline_ms")
        if deadline <= 0:
            raise ConfigurationError("simulation.deadline_ms: must be positive")
    if budget is None and deadline is None:
        raise ConfigurationError("simulation.budget: missing required field")
    x0 = _vector(_get(sim, "x0", "simulation"), "simulation.x0", n)
    init_it = _count(_get(sim, "init_iterations", "simulation", 1000),
                     "simulation.init_iterations", 0)

    return RunConfig(domain, A, B, C, D, dt, X, U, Qx, Qu, N, kind, value, method,
                     steps, budget, deadline, x0, init_it, user_supplied, str(source))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})"
        ) from None
    return parse_config(data, path)
