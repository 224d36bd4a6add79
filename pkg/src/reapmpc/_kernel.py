"""Compiled inner loop of the primal-dual flow.

Only plain arrays cross this boundary; the Python wrapper in ``reap``
prepares them from a :class:`~reapmpc.qpform.QpProblem`.
"""

import numpy as np
from numba import njit

# candidates must clear every row by this much (normalized units) so that
# independent re-evaluation with a different summation order still sees
# g <= 0
FEAS_GUARD = 1e-12


@njit(cache=True, nogil=True)
def sigma_law(g, gq, has_quad, shift, sigma_max, sigma_min, eta):
    """Largest grid value ``sigma_max·2^-j`` with ``sigma·(g_i + shift) <= 1 - eta``."""
    worst = -np.inf
    for i in range(g.size):
        if g[i] > worst:
            worst = g[i]
    if has_quad and gq > worst:
        worst = gq
    worst += shift
    sigma = sigma_max
    for _ in range(41):
        if sigma < sigma_min:
            break
        if sigma * worst <= 1.0 - eta:
            return sigma
        sigma *= 0.5
    return sigma_min


@njit(cache=True, nogil=True)
def _quad_value(P, q, r, u):
    return u @ (P @ u) + q @ u + r


@njit(cache=True, nogil=True)
def _admissible(G, b, has_quad, P, q, r, u, sigma, shift, eta):
    # strictly feasible and inside the margin region of the current sigma,
    # so the sigma law does not fall back at the next iterate
    g = G @ u - b
    lim = 1.0 - eta
    for i in range(g.size):
        if g[i] > -FEAS_GUARD or sigma * (g[i] + shift) > lim:
            return False
    if has_quad:
        gq = _quad_value(P, q, r, u)
        if gq > -FEAS_GUARD or sigma * (gq + shift) > lim:
            return False
    return True


@njit(cache=True, nogil=True)
def _curvature_bound(w, gram):
    """Upper bound on the largest eigenvalue of ``sum_i w_i a_i a_i'``.

    Rows carrying a tiny share of the weight are bounded by their sum
    (``||a_i|| = 1``); the rest by Gershgorin on ``W^½ A A' W^½``.
    """
    m = w.size
    if m == 0:
        return 0.0
    wmax = 0.0
    for i in range(m):
        if w[i] > wmax:
            wmax = w[i]
    thr = 1e-4 * wmax
    idx = np.empty(m, dtype=np.int64)
    k = 0
    rest = 0.0
    for i in range(m):
        if w[i] >= thr:
            idx[k] = i
            k += 1
        else:
            rest += w[i]
    best = 0.0
    for a in range(k):
        i = idx[a]
        acc = 0.0
        for c in range(k):
            j = idx[c]
            acc += np.sqrt(w[i] * w[j]) * abs(gram[i, j])
        if acc > best:
            best = acc
    return best + rest


@njit(cache=True, nogil=True)
def flow_kernel(H, f, G, b, gram, has_quad, P, q, r, Pnorm, Hnorm, u0, lam0,
                iters, dtau, sigma_max, sigma_min, eta, shift):
    """Run ``iters`` explicit Euler steps of the primal-dual flow.

    The barrier acts on the shifted rows ``g_i + shift``. Each step
    selects sigma by the grid law, takes a projected dual ascent step of
    length ``sigma·dtau`` and a primal descent step. The primal step length
    is capped at ``2(1 - eta)/ell`` with ``ell`` an upper bound on the
    barrier Hessian, so every linearized mode contracts by a factor of at
    most ``1 - 2 eta``; the step is then halved (at most 30 times) until the
    candidate is strictly feasible and keeps the sigma-law margin.

    Returns
    -------
    u, lam, sigma, stalls
    """
    u = u0.copy()
    lam = lam0.copy()
    m = G.shape[0]
    sigma = sigma_max
    stalls = 0
    gq = 0.0
    for _ in range(iters):
        g = G @ u - b
        if has_quad:
            gq = _quad_value(P, q, r, u)
        sigma = sigma_law(g, gq, has_quad, shift, sigma_max, sigma_min, eta)

        e = 1.0 - sigma * (g + shift)
        grad = H @ u + f + G.T @ (lam[:m] / e)
        ell = Hnorm + _curvature_bound(sigma * lam[:m] / (e * e), gram)
        if has_quad:
            eq = 1.0 - sigma * (gq + shift)
            dq = 2.0 * (P @ u) + q
            grad += (lam[m] / eq) * dq
            ell += lam[m] * (sigma * (dq @ dq) / (eq * eq) + 2.0 * Pnorm / eq)

        # projected dual ascent; sigma·dtau·(-ln(e)/sigma) = -dtau·ln(e)
        for i in range(m):
            v = lam[i] - dtau * np.log(e[i])
            lam[i] = v if v > 0.0 else 0.0
        if has_quad:
            v = lam[m] - dtau * np.log(eq)
            lam[m] = v if v > 0.0 else 0.0

        dt = dtau
        cap = 2.0 * (1.0 - eta) / (sigma * ell)
        if cap < dt:
            dt = cap
        h = sigma * dt
        moved = False
        for _k in range(31):
            cand = u - h * grad
            if _admissible(G, b, has_quad, P, q, r, cand, sigma, shift, eta):
                u = cand
                moved = True
                break
            h *= 0.5
        if not moved:
            stalls += 1
    return u, lam, sigma, stalls
