import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import di_boxes, double_integrator, enum_qp, random_instance
from reapmpc import reap
from reapmpc.errors import BarrierDomainError, ConfigurationError
from reapmpc.plant import BoxSet, DiscreteLti, SteadyTarget, resolve_target_from_reference
from reapmpc.qpform import (QpProblem, QuadRow, barrier_gradients, barrier_value,
                            build_prediction, build_qp, constraint_values)
from reapmpc.sim import build_controller
from reapmpc.terminal import TerminalSet

seeds = st.integers(0, 2**32 - 1)
NO_TERMINAL = TerminalSet("polyhedral", H=np.zeros((0, 1)), h=np.zeros(0), omega_star=0)


def test_prediction_n1():
    m = double_integrator()
    P = build_prediction(m, 1)
    assert np.array_equal(P.Sx, np.vstack([np.eye(2), m.A]))
    assert np.array_equal(P.Su, np.vstack([np.zeros((2, 1)), m.B]))


def test_prediction_scalar_toeplitz():
    P = build_prediction(DiscreteLti([[2.0]], [[1.0]], [[1.0]], [[0.0]]), 3)
    assert np.array_equal(P.Su[-1], [4, 2, 1])
    assert np.array_equal(P.Sx[:, 0], [1, 2, 4, 8])
    with pytest.raises(ConfigurationError):
        build_prediction(double_integrator(), 0)


def test_free_response():
    m = double_integrator()
    P = build_prediction(m, 4)
    x = np.array([0.3, -0.2])
    xs = [x]
    for _ in range(4):
        xs.append(m.A @ xs[-1])
    assert np.allclose(P.Sx @ x + P.Su @ np.zeros(4), np.concatenate(xs))


def _di_qp(x, N=5, method="prediction", r=1.0):
    m = double_integrator()
    X, U = di_boxes()
    t = resolve_target_from_reference(m, X, U, [r])
    ctx = build_controller(m, X, U, np.diag([1, 0.1]), [[0.1]], N, t, method)
    return ctx, ctx.qp(x)


def test_cost_zero_at_equilibrium():
    for method in ("prediction", "lyapunov"):
        ctx, qp = _di_qp(np.array([1.0, 0.0]), method=method)
        assert qp.cost(np.tile(ctx.target.ubar, qp.N)) == 0.0


def test_cost_matches_rollout():
    ctx, qp = _di_qp(np.array([0.2, 0.1]))
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = rng.normal(size=qp.n_vars)
        x = qp.x_now.copy()
        J = 0.0
        for s in range(qp.N):
            J += (x - ctx.target.xbar) @ ctx.Qx @ (x - ctx.target.xbar)
            us = u[s * qp.p:(s + 1) * qp.p]
            J += (us - ctx.target.ubar) @ ctx.Qu @ (us - ctx.target.ubar)
            x = ctx.model.step(x, us)
        J += (x - ctx.target.xbar) @ ctx.Qn @ (x - ctx.target.xbar)
        assert qp.cost(u) == pytest.approx(J, rel=1e-12)
        assert 0.5 * u @ qp.Hq @ u + qp.fq @ u + qp.c0 == pytest.approx(J, rel=1e-9)


def test_scalar_n1_expansion():
    # J(u) = qx (x - xb)^2 + qu (u - ub)^2 + qn (a x + b u - xb)^2
    a, b, qx, qu, qn, x, xb, ub = 0.7, 0.4, 2.0, 0.5, 3.0, 0.9, 0.25, 0.1
    m = DiscreteLti([[a]], [[b]], [[1.0]], [[0.0]])
    t = SteadyTarget(np.array([xb]), np.array([ub]), np.array([xb]))
    qp = build_qp(m, build_prediction(m, 1), ([[qx]], [[qu]], [[qn]]), t,
                  BoxSet.unbounded(1), BoxSet.unbounded(1), NO_TERMINAL, [x])
    assert qp.Hq[0, 0] == pytest.approx(2 * (qu + qn * b * b))
    assert qp.fq[0] == pytest.approx(2 * (qn * b * (a * x - xb) - qu * ub))
    assert qp.c0 == pytest.approx(qx * (x - xb) ** 2 + qn * (a * x - xb) ** 2 + qu * ub ** 2)
    assert qp.G.shape[0] == 0 and qp.quad is None


def test_row_layout_and_normalization():
    ctx, qp = _di_qp(np.array([0.0, 0.0]), N=3)
    assert np.allclose(np.linalg.norm(qp.G, axis=1), 1.0)
    # stage-0 state rows do not depend on u and are folded into fixed_violation
    assert not any(k[0] == "x" and k[1] == 0 for k in qp.row_keys)
    assert qp.fixed_violation < 0
    n_u = sum(k[0] == "u" for k in qp.row_keys)
    n_x = sum(k[0] == "x" for k in qp.row_keys)
    n_t = sum(k[0] == "T" for k in qp.row_keys)
    assert n_u == 2 * 3 and n_x == 4 * 2 and n_t == ctx.terminal.rows
    assert len(qp.row_keys) == qp.n_rows


def test_fixed_violation_outside_box():
    _, qp = _di_qp(np.array([2.5, 0.0]))
    assert qp.fixed_violation > 0


def test_quadratic_row_value():
    ctx, qp = _di_qp(np.array([0.5, 0.0]), N=8, method="lyapunov")
    assert qp.row_keys[-1] == ("Tq",)
    T = ctx.terminal
    rng = np.random.default_rng(1)
    for _ in range(10):
        u = rng.normal(size=qp.n_vars) * 0.1
        d = qp.terminal_state(u) - T.xbar
        assert qp.quad.value(u) == pytest.approx((d @ T.Psi @ d - T.gamma) / T.gamma, abs=1e-12)


def test_barrier_examples():
    qp = QpProblem.from_arrays([[2.0]], [0.0], [[1.0]], [1.0], c0=0.0)
    J0 = qp.cost([0.0])
    assert barrier_value(qp, [0.0], [1.0], 0.5) == pytest.approx(J0 - 2 * np.log(1.5))
    assert barrier_value(qp, [0.3], [0.0], 0.5) == pytest.approx(qp.cost([0.3]))
    # g = 0 at u = 1
    assert barrier_value(qp, [1.0], [3.0], 0.5) == pytest.approx(qp.cost([1.0]))
    gu, gl = barrier_gradients(qp, [0.3], [0.0], 0.5)
    assert gu[0] == pytest.approx(qp.Hq[0, 0] * 0.3)
    with pytest.raises(BarrierDomainError):
        barrier_value(qp, [3.5], [1.0], 0.5)
    with pytest.raises(ConfigurationError):
        barrier_value(qp, [0.0], [-1.0], 0.5)


def test_barrier_stationary_at_kkt():
    # 2 variables, 3 rows; KKT multipliers from the enumerated active set
    H = np.array([[2.0, 0.3], [0.3, 1.0]])
    f = np.array([-4.0, -3.0])
    A = np.array([[1.0, 1.0], [1.0, -0.5], [-1.0, 0.0]])
    b = np.array([1.0, 0.8, 0.5])
    qp = QpProblem.from_arrays(H, f, A, b, normalize=False)
    _, u = enum_qp(H, f, A, b)
    g = A @ u - b
    act = np.abs(g) < 1e-9
    mu = np.zeros(3)
    mu[act] = np.linalg.lstsq(A[act].T, -(H @ u + f), rcond=None)[0]
    for sigma in (1.0, 1e3, 1e6):
        gu, _ = barrier_gradients(qp, u, mu, sigma)
        assert np.linalg.norm(gu) < 1e-9


def _fd_check(qp, u, lam, sigma, shift=0.0):
    gu, gl = barrier_gradients(qp, u, lam, sigma, shift)
    hs = 1e-6 * (1 + np.linalg.norm(u))
    num_u = np.zeros_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = hs
        num_u[i] = (barrier_value(qp, u + e, lam, sigma, shift)
                    - barrier_value(qp, u - e, lam, sigma, shift)) / (2 * hs)
    num_l = np.zeros_like(lam)
    hl = 1e-6 * (1 + np.linalg.norm(lam))
    for i in range(lam.size):
        e = np.zeros_like(lam)
        e[i] = hl
        num_l[i] = (barrier_value(qp, u, lam + e, sigma, shift)
                    - barrier_value(qp, u, np.maximum(lam - e, 0), sigma, shift)) / (
                        hl + min(hl, lam[i]))
    def rel(a, b):
        return np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b))
    return rel(gu, num_u), rel(gl, num_l)


def interior_points(qp, rng, count):
    """Strictly feasible points between a phase-1 point and random directions."""
    u0, _ = reap.phase_one(qp)
    out = []
    while len(out) < count:
        d = rng.normal(size=qp.n_vars)
        t = 1.0
        while np.max(constraint_values(qp, u0 + t * d), initial=-1) >= 0 and t > 1e-8:
            t *= 0.5
        out.append(u0 + rng.uniform(0, 1) * t * d)
    return out


@pytest.mark.parametrize("method", ["prediction", "lyapunov"])
def test_gradients_finite_differences(method):
    rng = np.random.default_rng(5 if method == "prediction" else 6)
    ctx, x0 = random_instance(rng, method=method)
    qp = ctx.qp(x0)
    for u in interior_points(qp, rng, 100):
        lam = rng.uniform(0, 2, qp.n_rows)
        sigma = 10.0 ** rng.uniform(-1, 3)
        eu, el = _fd_check(qp, u, lam, sigma)
        assert eu <= 1e-5 and el <= 1e-5


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_barrier_convex_in_u(seed):
    rng = np.random.default_rng(seed)
    ctx, x0 = random_instance(rng)
    qp = ctx.qp(x0)
    for u in interior_points(qp, rng, 5):
        lam = rng.uniform(0, 2, qp.n_rows)
        sigma = 10.0 ** rng.uniform(-1, 3)
        d = rng.normal(size=qp.n_vars)
        h = 1e-4 / (1 + np.linalg.norm(d))
        try:
            vals = [barrier_value(qp, u + s * h * d, lam, sigma) for s in (-1, 0, 1)]
        except BarrierDomainError:
            continue
        assert (vals[0] - 2 * vals[1] + vals[2]) / h**2 >= -1e-8 * (1 + abs(vals[1]))


def test_quad_row_gradient():
    rng = np.random.default_rng(7)
    M = rng.normal(size=(3, 3))
    q = QuadRow(M @ M.T, rng.normal(size=3), -1.0)
    u = rng.normal(size=3)
    h = 1e-6
    num = [(q.value(u + h * e) - q.value(u - h * e)) / (2 * h) for e in np.eye(3)]
    assert np.allclose(q.grad(u), num, atol=1e-7)
