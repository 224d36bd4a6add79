"""LTI models, box constraints, and steady-state target resolution."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ControllabilityError, TargetError
from .numerics import as_matrix, is_controllable

EQUILIBRIUM_TOL = 1e-8
INTERIOR_RTOL = 1e-6


def _check_dims(A, B, C, D):
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigurationError(f"A must be square, got {A.shape}")
    if B.shape[0] != n:
        raise ConfigurationError(f"B must have {n} rows, got {B.shape[0]}")
    p = B.shape[1]
    if C.shape[1] != n:
        raise ConfigurationError(f"C must have {n} columns, got {C.shape[1]}")
    m = C.shape[0]
    if D.shape != (m, p):
        raise ConfigurationError(f"D must be {m}x{p}, got {D.shape}")


@dataclass(frozen=True)
class ContinuousLti:
    """``x' = Ac x + Bc u``, ``y = Cc x + Dc u``."""

    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray
    Dc: np.ndarray

    def __post_init__(self):
        for k in ("Ac", "Bc", "Cc", "Dc"):
            object.__setattr__(self, k, as_matrix(getattr(self, k), k))
        _check_dims(self.Ac, self.Bc, self.Cc, self.Dc)


@dataclass(frozen=True)
class DiscreteLti:
    """``x(k+1) = A x(k) + B u(k)``, ``y(k) = C x(k) + D u(k)``.

    Construction only checks dimensions; :func:`admit_model` additionally
    enforces controllability.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        for k in ("A", "B", "C", "D"):
            object.__setattr__(self, k, as_matrix(getattr(self, k), k))
        _check_dims(self.A, self.B, self.C, self.D)
        if not self.dt > 0:
            raise ConfigurationError(f"sampling period must be positive, got {self.dt}")
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def m(self):
        return self.C.shape[0]

    def step(self, x, u):
        return self.A @ x + self.B @ u

    def output(self, x, u):
        return self.C @ x + self.D @ u


def admit_model(model: DiscreteLti) -> DiscreteLti:
    """Return ``model`` unchanged if ``(A, B)`` is controllable, else raise."""
    if not is_controllable(model.A, model.B):
        raise ControllabilityError()
    return model


@dataclass(frozen=True)
class BoxSet:
    """Elementwise bounds ``lower <= v <= upper``; entries may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.size != hi.size:
            raise ConfigurationError(
                f"bound length mismatch: {lo.size} lower vs {hi.size} upper"
            )
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ConfigurationError("bounds must not be NaN")
        if np.any(lo >= hi):
            i = int(np.flatnonzero(lo >= hi)[0])
            raise ConfigurationError(
                f"lower bound must be below upper bound (index {i + 1})"
            )
        if np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise ConfigurationError("bounds point the wrong way")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, size):
        return cls(np.full(size, -np.inf), np.full(size, np.inf))

    @property
    def size(self):
        return self.lower.size

    def interior_margin(self, rtol=INTERIOR_RTOL):
        """Per-coordinate interiority margin: ``rtol·width``, or ``rtol``
        when a side is unbounded."""
        w = self.upper - self.lower
        return np.where(np.isfinite(w), rtol * w, rtol)


def contains(S: BoxSet, v, margin=0.0):
    """True iff ``lower + margin <= v <= upper - margin`` elementwise."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != S.size:
        raise ConfigurationError(f"vector length {v.size} does not match box size {S.size}")
    margin = np.broadcast_to(np.asarray(margin, dtype=float), v.shape)
    with np.errstate(invalid="ignore"):
        ok_lo = np.isneginf(S.lower) | (S.lower + margin <= v)
        ok_hi = np.isposinf(S.upper) | (v <= S.upper - margin)
    return bool(np.all(ok_lo & ok_hi))


@dataclass(frozen=True)
class SteadyTarget:
    xbar: np.ndarray
    ubar: np.ndarray
    r: np.ndarray


def _check_interior(X, U, xbar, ubar):
    if not contains(X, xbar, X.interior_margin()):
        raise TargetError("target too close to constraint boundary (state)")
    if not contains(U, ubar, U.interior_margin()):
        raise TargetError("target too close to constraint boundary (input)")


def resolve_target_from_reference(model: DiscreteLti, X: BoxSet, U: BoxSet, r):
    """Steady state ``(xbar, ubar)`` with output ``r``.

    Solves ``[A-I, B; C, D]·[x; u] = [0; r]``. If the solution is not unique
    the minimum-norm one is returned.
    """
    r = np.asarray(r, dtype=float).ravel()
    n, p, m = model.n, model.p, model.m
    if r.size != m:
        raise ConfigurationError(f"reference must have {m} entries, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ConfigurationError("reference must be finite")
    M = np.block([[model.A - np.eye(n), model.B], [model.C, model.D]])
    rhs = np.concatenate([np.zeros(n), r])
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    if np.max(np.abs(M @ sol - rhs)) > EQUILIBRIUM_TOL:
        raise TargetError("reference not steady-state admissible")
    xbar, ubar = sol[:n], sol[n:]
    _check_interior(X, U, xbar, ubar)
    return SteadyTarget(xbar, ubar, r)


def resolve_target_from_equilibrium(model: DiscreteLti, X: BoxSet, U: BoxSet, xbar):
    """Steady input for a given equilibrium state; the output follows."""
    xbar = np.asarray(xbar, dtype=float).ravel()
    n = model.n
    if xbar.size != n:
        raise ConfigurationError(f"equilibrium must have {n} entries, got {xbar.size}")
    rhs = -(model.A - np.eye(n)) @ xbar
    ubar = np.linalg.lstsq(model.B, rhs, rcond=None)[0]
    if np.max(np.abs(model.B @ ubar - rhs), initial=0.0) > EQUILIBRIUM_TOL:
        raise TargetError("x̄_r is not an equilibrium of the model")
    _check_interior(X, U, xbar, ubar)
    return SteadyTarget(xbar, ubar, model.output(xbar, ubar))


def _fmt(v):
    if np.isposinf(v):
        return "Inf"
    if np.isneginf(v):
        return "-Inf"
    return f"{v:g}"


def list_constraints(X: BoxSet, U: BoxSet) -> str:
    """Human-readable enumeration of the state and input bounds."""
    lines = ["State Constraints:"]
    k = 1
    for i, v in enumerate(X.upper):
        lines.append(f"State Constraint {k}: x{i + 1} <= {_fmt(v)}")
        k += 1
    for i, v in enumerate(X.lower):
        lines.append(f"State Constraint {k}: x{i + 1} >= {_fmt(v)}")
        k += 1
    lines.append("Input Constraints:")
    k = 1
    for i, v in enumerate(U.upper):
        lines.append(f"Input Constraint {k}: u{i + 1} <= {_fmt(v)}")
        k += 1
    for i, v in enumerate(U.lower):
        lines.append(f"Input Constraint {k}: u{i + 1} >= {_fmt(v)}")
        k += 1
    return "\n".join(lines)
