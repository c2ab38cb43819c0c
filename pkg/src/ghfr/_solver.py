"""Numba kernels for the coupled patch-weight solver.

The per-patch subproblem ``min w'Aw + g'w  s.t. sum(w)=1, w>=0`` is solved
with a primal active-set method on the ridged (strictly convex) matrix;
the field solver runs raster-order block-coordinate sweeps over all
patches. Kernels are deterministic: fixed iteration order, first-hit
tie-breaking, no threading.
"""

import numpy as np
from numba import njit

RIDGE = 1e-10       # tie-breaking regularization toward the min-norm optimum
DUAL_TOL = 1e-9     # dual feasibility slack (KKT residual target 1e-8)
DUST = 1e-9         # support-polish threshold for float dust weights


@njit(cache=True)
def _eqp_solve(Ar, g, s_idx):
    """Equality-constrained subproblem on a support: returns w restricted to it."""
    s = s_idx.size
    kkt = np.zeros((s + 1, s + 1))
    rhs = np.zeros(s + 1)
    for a in range(s):
        ia = s_idx[a]
        for b in range(s):
            kkt[a, b] = 2.0 * Ar[ia, s_idx[b]]
        kkt[a, s] = 1.0
        kkt[s, a] = 1.0
        rhs[a] = -g[ia]
    rhs[s] = 1.0
    sol = np.linalg.solve(kkt, rhs)
    return sol[:s]


@njit(cache=True)
def _quad(Ar, g, w):
    K = w.size
    acc = 0.0
    for r in range(K):
        row = 0.0
        for c in range(K):
            row += Ar[r, c] * w[c]
        acc += w[r] * (row + g[r])
    return acc


@njit(cache=True)
def qp_simplex(Ar, g, w_start):
    """Active-set minimization of w'Ar w + g'w over the probability simplex.

    ``Ar`` must already carry the ridge. ``w_start`` is any feasible point
    (used to warm-start the support). Non-support weights are exactly zero
    in the result.
    """
    K = Ar.shape[0]
    w = np.empty(K)
    if K == 1:
        w[0] = 1.0
        return w

    total = 0.0
    for k in range(K):
        w[k] = w_start[k] if w_start[k] > 0.0 else 0.0
        total += w[k]
    if total <= 0.0:
        for k in range(K):
            w[k] = 1.0 / K
    else:
        for k in range(K):
            w[k] /= total

    active = np.empty(K, dtype=np.bool_)
    n_active = 0
    for k in range(K):
        active[k] = w[k] > 0.0
        if active[k]:
            n_active += 1
    if n_active == 0:
        for k in range(K):
            active[k] = True

    max_iter = 6 * K + 30
    for _ in range(max_iter):
        s_idx = np.where(active)[0]
        ws = _eqp_solve(Ar, g, s_idx)

        has_neg = False
        for a in range(s_idx.size):
            if ws[a] < 0.0:
                has_neg = True
                break

        if has_neg:
            # step toward the EQP solution until the first weight hits zero
            alpha = 1.0
            blocker = -1
            for a in range(s_idx.size):
                if ws[a] < 0.0:
                    cur = w[s_idx[a]]
                    denom = cur - ws[a]
                    if denom > 0.0:
                        r = cur / denom
                        if r < alpha:
                            alpha = r
                            blocker = s_idx[a]
            for a in range(s_idx.size):
                i = s_idx[a]
                nv = w[i] + alpha * (ws[a] - w[i])
                w[i] = nv if nv > 0.0 else 0.0
            if blocker < 0:
                # fully blocked without an identifiable pivot: drop the most
                # negative coordinate to guarantee progress
                worst = s_idx[0]
                val = ws[0]
                for a in range(s_idx.size):
                    if ws[a] < val:
                        val = ws[a]
                        worst = s_idx[a]
                blocker = worst
            w[blocker] = 0.0
            active[blocker] = False
            continue

        for a in range(s_idx.size):
            w[s_idx[a]] = ws[a]
        for k in range(K):
            if not active[k]:
                w[k] = 0.0

        # dual feasibility: gradient must be >= the support multiplier
        grad = np.empty(K)
        for r in range(K):
            acc = g[r]
            for c in range(K):
                acc += 2.0 * Ar[r, c] * w[c]
            grad[r] = acc
        mu = 0.0
        for a in range(s_idx.size):
            mu += grad[s_idx[a]]
        mu /= s_idx.size
        worst = -1
        worst_v = -DUAL_TOL
        for k in range(K):
            if not active[k]:
                v = grad[k] - mu
                if v < worst_v:
                    worst_v = v
                    worst = k
        if worst < 0:
            break
        active[worst] = True

    # polish: drop float-dust weights when that does not hurt the objective,
    # so clean vertex optima come out exact
    has_dust = False
    n_keep = 0
    for k in range(K):
        if active[k] and w[k] > 0.0 and w[k] < DUST:
            has_dust = True
        elif active[k] and w[k] >= DUST:
            n_keep += 1
    if has_dust and n_keep >= 1:
        keep = np.where(w >= DUST)[0]
        ws = _eqp_solve(Ar, g, keep)
        ok = True
        for a in range(keep.size):
            if ws[a] < 0.0:
                ok = False
                break
        if ok:
            w2 = np.zeros(K)
            for a in range(keep.size):
                w2[keep[a]] = ws[a]
            q_old = _quad(Ar, g, w)
            if _quad(Ar, g, w2) <= q_old + 1e-12 * (1.0 + abs(q_old)):
                w = w2

    # a single-support weight is forced to exactly 1 by the sum constraint
    n_pos = 0
    last = -1
    for k in range(K):
        if w[k] > 0.0:
            n_pos += 1
            last = k
    if n_pos == 1:
        w[last] = 1.0
    return w


@njit(cache=True)
def _field_objective(Ar, G0, F2, edge_a, edge_b, C, alpha, W):
    """Exact coupled objective from the precomputed blocks (ridge removed)."""
    N, K = W.shape
    obj = 0.0
    for i in range(N):
        row = 0.0
        norm2 = 0.0
        for r in range(K):
            acc = 0.0
            for c in range(K):
                acc += Ar[i, r, c] * W[i, c]
            row += W[i, r] * (acc + G0[i, r])
            norm2 += W[i, r] * W[i, r]
        obj += row - RIDGE * norm2 + F2[i]
    if alpha != 0.0:
        for e in range(edge_a.size):
            a = edge_a[e]
            b = edge_b[e]
            cross = 0.0
            for r in range(K):
                acc = 0.0
                for c in range(K):
                    acc += C[e, r, c] * W[b, c]
                cross += W[a, r] * acc
            obj -= 2.0 * alpha * cross
    return obj


@njit(cache=True)
def field_solve(Ar, G0, F2, edge_a, edge_b, C,
                nbr_ptr, nbr_edge, nbr_dir, nbr_other,
                alpha, tol, max_sweeps, W):
    """Raster-order block-coordinate descent over all patch subproblems.

    ``W`` is updated in place; returns the per-sweep objective history
    (entry 0 is the starting objective). A block update is kept only if it
    does not increase the unridged subproblem objective, which makes the
    reported objective exactly monotone.
    """
    N, K = W.shape
    hist = np.empty(max_sweeps + 1)
    hist[0] = _field_objective(Ar, G0, F2, edge_a, edge_b, C, alpha, W)
    n_sweeps = 0
    g = np.empty(K)
    for sweep in range(max_sweeps):
        for i in range(N):
            for k in range(K):
                g[k] = G0[i, k]
            if alpha != 0.0:
                for t in range(nbr_ptr[i], nbr_ptr[i + 1]):
                    e = nbr_edge[t]
                    j = nbr_other[t]
                    if nbr_dir[t] == 0:
                        for r in range(K):
                            acc = 0.0
                            for c in range(K):
                                acc += C[e, r, c] * W[j, c]
                            g[r] -= 2.0 * alpha * acc
                    else:
                        for r in range(K):
                            acc = 0.0
                            for c in range(K):
                                acc += C[e, c, r] * W[j, c]
                            g[r] -= 2.0 * alpha * acc
            w_new = qp_simplex(Ar[i], g, W[i])
            # compare true (unridged) block objectives; keep the better one
            q_old = _quad(Ar[i], g, W[i])
            n_old = 0.0
            q_new = _quad(Ar[i], g, w_new)
            n_new = 0.0
            for k in range(K):
                n_old += W[i, k] * W[i, k]
                n_new += w_new[k] * w_new[k]
            if q_new - RIDGE * n_new <= q_old - RIDGE * n_old:
                for k in range(K):
                    W[i, k] = w_new[k]
        obj = _field_objective(Ar, G0, F2, edge_a, edge_b, C, alpha, W)
        n_sweeps = sweep + 1
        hist[n_sweeps] = obj
        prev = hist[n_sweeps - 1]
        dec = prev - obj
        bound = abs(prev)
        if bound < 1e-300:
            bound = 1e-300
        if dec < tol * bound:
            break
    return hist[:n_sweeps + 1]
