"""Independent brute-force oracles shared by the unit and acceptance suites."""

import numpy as np


def simplex_grid(k: int, step: float = 1e-3) -> np.ndarray:
    """All points of the K-simplex on a regular grid (rows sum to 1)."""
    n = int(round(1.0 / step))
    if k == 1:
        return np.ones((1, 1))
    if k == 2:
        t = np.arange(n + 1) / n
        return np.column_stack([1.0 - t, t])
    if k == 3:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = (i + j) <= n
        a = i[keep] / n
        b = j[keep] / n
        return np.column_stack([a, b, 1.0 - a - b])
    raise ValueError("grid oracle supports K <= 3 only")


def qp_grid_min(A: np.ndarray, g: np.ndarray, step: float = 1e-3) -> float:
    """Minimum of w'Aw + g'w over the simplex grid."""
    W = simplex_grid(A.shape[0], step)
    vals = np.einsum("pk,kl,pl->p", W, A, W) + W @ g
    return float(vals.min())


def qp_objective(A: np.ndarray, g: np.ndarray, w: np.ndarray) -> float:
    return float(w @ A @ w + g @ w)


def chain2_grid_min(f1, F1, f2, F2, o1, o2, alpha, step: float = 1e-3) -> float:
    """Exhaustive grid minimum for a 2-patch chain with K=2 scalar operands.

    ``F1``/``F2`` are length-2 candidate feature rows, ``o1``/``o2`` the
    scalar overlap rows; the weight of each patch is (1-t, t).
    """
    n = int(round(1.0 / step))
    t = np.arange(n + 1) / n
    rec1 = (f1 - (F1[0] * (1 - t) + F1[1] * t)) ** 2
    rec2 = (f2 - (F2[0] * (1 - t) + F2[1] * t)) ** 2
    ov1 = o1[0] * (1 - t) + o1[1] * t
    ov2 = o2[0] * (1 - t) + o2[1] * t
    total = rec1[:, None] + rec2[None, :] + alpha * (ov1[:, None] - ov2[None, :]) ** 2
    return float(total.min())


def random_psd(rng: np.random.Generator, k: int) -> tuple[np.ndarray, np.ndarray]:
    """A random PSD matrix (possibly rank-deficient) and linear term."""
    r = rng.integers(1, k + 1)
    B = rng.standard_normal((r, k))
    A = B.T @ B
    g = rng.standard_normal(k) * 2.0
    return A, g
