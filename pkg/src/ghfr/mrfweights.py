"""Coupled patch-weight solver: the graphical representation of one image.

Each patch is reconstructed in feature space as a simplex-weighted
combination of its K candidate patches; adjacent patches are coupled
through the intensities of their shared overlap regions. The joint
objective

    alpha * sum_{(i,j) adjacent} ||O_i^j w_i - O_j^i w_j||^2
        + sum_i ||f_i - F_i w_i||^2

is minimized over per-patch probability simplices by raster-order
block-coordinate descent, each block being an exact simplex-QP solve.
The solved weights are then re-indexed onto the M representation images
as sparse vectors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._solver import RIDGE, field_solve, qp_simplex
from .descriptors import DescriptorKind, describe_image_array
from .imgcore import AdjacencyPair, GrayImage
from .repset import RepresentationSet, search_all

_MAGIC = b"GHRW"
_VERSION = 1


@dataclass(frozen=True)
class SolverParams:
    K: int = 15
    alpha: float = 0.025
    max_sweeps: int = 30
    tol: float = 1e-6
    region: int = 16

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


@dataclass(frozen=True)
class PatchProblem:
    """Operands of one patch subproblem.

    ``features`` is the (dim, K) candidate matrix, ``overlaps`` maps each
    adjacent patch index j to the (overlap_dim, K) candidate-overlap matrix,
    and ``sources`` records each column's representation-image index.
    """

    index: int
    query: np.ndarray
    features: np.ndarray
    overlaps: dict[int, np.ndarray]
    sources: np.ndarray

    @property
    def k(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class WeightField:
    """Solved per-patch simplex weights with candidate provenance."""

    weights: np.ndarray        # (N, K)
    sources: np.ndarray        # (N, K) representation-image indices
    per_patch: np.ndarray      # (N,) objective contributions
    objective: float
    history: np.ndarray        # objective after each sweep (entry 0 = start)

    @property
    def n_patches(self) -> int:
        return self.weights.shape[0]

    @property
    def sweeps(self) -> int:
        return len(self.history) - 1


class SparseRepresentation:
    """Per-patch weights re-indexed onto the M representation images.

    Weights are stored as float32 (the persisted precision) so that a
    save/load round trip reproduces downstream scores bit-exactly.
    """

    def __init__(self, m: int, indices: list[np.ndarray], weights: list[np.ndarray]):
        if len(indices) != len(weights):
            raise ValueError("indices/weights length mismatch")
        self.m = int(m)
        self.indices = [np.asarray(ix, dtype=np.int32) for ix in indices]
        self.weights = [np.asarray(w, dtype=np.float32) for w in weights]
        for ix, w in zip(self.indices, self.weights):
            if ix.size != w.size:
                raise ValueError("ragged patch entry")
            if ix.size and (ix.min() < 0 or ix.max() >= self.m):
                raise ValueError(f"source index out of range [0, {self.m})")
            if ix.size > 1 and np.any(np.diff(ix) <= 0):
                raise ValueError("indices must be strictly increasing")

    @property
    def n_patches(self) -> int:
        return len(self.indices)

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros((self.n_patches, self.m), dtype=dtype)
        for i, (ix, w) in enumerate(zip(self.indices, self.weights)):
            out[i, ix] = w.astype(dtype)
        return out

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<HII", _VERSION, self.n_patches, self.m))
            for ix, w in zip(self.indices, self.weights):
                f.write(_write_varint(ix.size))
                for z, wz in zip(ix, w):
                    f.write(struct.pack("<If", int(z), float(wz)))

    @classmethod
    def load(cls, path) -> "SparseRepresentation":
        with open(path, "rb") as f:
            data = f.read()
        if data[:4] != _MAGIC:
            raise ValueError(f"{path} is not a sparse-representation file")
        version, n, m = struct.unpack("<HII", data[4:14])
        if version != _VERSION:
            raise ValueError(f"unsupported representation version {version}")
        off = 14
        indices, weights = [], []
        for _ in range(n):
            count, off = _read_varint(data, off)
            ix = np.empty(count, dtype=np.int32)
            w = np.empty(count, dtype=np.float32)
            for t in range(count):
                z, wz = struct.unpack_from("<If", data, off)
                ix[t] = z
                w[t] = wz
                off += 8
            indices.append(ix)
            weights.append(w)
        return cls(m, indices, weights)


def _write_varint(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _read_varint(data: bytes, off: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        byte = data[off]
        off += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, off
        shift += 7


def _overlap_flat_index(bounds, patch_size: int) -> np.ndarray:
    r0, r1, c0, c1 = bounds
    rows = np.arange(r0, r1)
    cols = np.arange(c0, c1)
    return (rows[:, None] * patch_size + cols[None, :]).ravel()


def build_problems(img: GrayImage, rs: RepresentationSet, modality: str,
                   kind: DescriptorKind, params: SolverParams) -> list[PatchProblem]:
    """Assemble every patch subproblem for one normalized image."""
    grid = rs.grid
    if (img.width, img.height) != (grid.image_width, grid.image_height):
        raise ValueError("image must be normalized to the grid geometry first")
    queries = describe_image_array(img, grid, kind)
    src, _, pos = search_all(rs, modality, queries, kind, params.K, params.region)
    feats, _ = rs.dense_features(modality, kind)

    n, K = src.shape
    ps = grid.patch_size
    f_all = feats[src, pos]                      # (N, K, dim)
    windows = np.empty((n, K, ps * ps))
    for z in range(rs.m):
        mask = src == z
        if not mask.any():
            continue
        view = sliding_window_view(
            rs.image_stack(modality)[z].astype(np.float64), (ps, ps)).reshape(-1, ps * ps)
        windows[mask] = view[pos[mask]]

    overlap_maps: list[dict[int, np.ndarray]] = [dict() for _ in range(n)]
    for pair in grid.adjacent_pairs():
        idx_i = _overlap_flat_index(pair.bounds_i, ps)
        idx_j = _overlap_flat_index(pair.bounds_j, ps)
        overlap_maps[pair.i][pair.j] = np.ascontiguousarray(windows[pair.i][:, idx_i].T)
        overlap_maps[pair.j][pair.i] = np.ascontiguousarray(windows[pair.j][:, idx_j].T)

    return [PatchProblem(i, queries[i], np.ascontiguousarray(f_all[i].T),
                         overlap_maps[i], src[i]) for i in range(n)]


def truncate_problems(problems: list[PatchProblem], K: int) -> list[PatchProblem]:
    """First-K-columns view of problems built at a larger K (nested searches)."""
    if K > problems[0].k:
        raise ValueError(f"cannot truncate to K={K} from K={problems[0].k}")
    return [PatchProblem(p.index, p.query, p.features[:, :K],
                         {j: o[:, :K] for j, o in p.overlaps.items()},
                         p.sources[:K]) for p in problems]


def solve_patch_qp(A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Minimize w'Aw + g'w over the probability simplex.

    A must be symmetric PSD. Degenerate flat directions are resolved toward
    the minimum-norm optimum via a 1e-10 ridge.
    """
    A = np.asarray(A, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or g.shape != (A.shape[0],):
        raise ValueError("A must be square and g of matching length")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(g))):
        raise ValueError("non-finite entries in QP input")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.T).max() > 1e-8 * scale:
        raise ValueError("A must be symmetric")
    k = A.shape[0]
    Ar = np.ascontiguousarray(A + RIDGE * np.eye(k))
    return qp_simplex(Ar, np.ascontiguousarray(g), np.full(k, 1.0 / k))


def _assemble_blocks(problems: list[PatchProblem], pairs: tuple[AdjacencyPair, ...],
                     alpha: float):
    n = len(problems)
    K = problems[0].k
    dim = problems[0].features.shape[0]
    for p in problems:
        if p.k != K or p.features.shape[0] != dim:
            raise ValueError("all problems must share one K and feature dimension")
        if not np.all(np.isfinite(p.features)) or not np.all(np.isfinite(p.query)):
            raise ValueError("non-finite problem operands")

    F = np.stack([p.features for p in problems])    # (N, dim, K)
    fq = np.stack([p.query for p in problems])      # (N, dim)
    A = np.matmul(F.transpose(0, 2, 1), F)
    A += RIDGE * np.eye(K)[None, :, :]
    G0 = -2.0 * np.einsum("ndk,nd->nk", F, fq)
    F2 = np.einsum("nd,nd->n", fq, fq)

    n_edges = len(pairs)
    edge_a = np.empty(n_edges, dtype=np.int64)
    edge_b = np.empty(n_edges, dtype=np.int64)
    C = np.zeros((n_edges, K, K))
    if n_edges:
        O_a = np.stack([problems[p.i].overlaps[p.j] for p in pairs])  # (E, ovl, K)
        O_b = np.stack([problems[p.j].overlaps[p.i] for p in pairs])
        for e, p in enumerate(pairs):
            edge_a[e] = p.i
            edge_b[e] = p.j
        if alpha != 0.0:
            oto_a = np.matmul(O_a.transpose(0, 2, 1), O_a)
            oto_b = np.matmul(O_b.transpose(0, 2, 1), O_b)
            for e in range(n_edges):
                A[edge_a[e]] += alpha * oto_a[e]
                A[edge_b[e]] += alpha * oto_b[e]
        C = np.matmul(O_a.transpose(0, 2, 1), O_b)

    # CSR adjacency: per patch, (edge id, direction, other endpoint)
    counts = np.zeros(n + 1, dtype=np.int64)
    for p in pairs:
        counts[p.i + 1] += 1
        counts[p.j + 1] += 1
    nbr_ptr = np.cumsum(counts)
    nbr_edge = np.zeros(nbr_ptr[-1], dtype=np.int64)
    nbr_dir = np.zeros(nbr_ptr[-1], dtype=np.int64)
    nbr_other = np.zeros(nbr_ptr[-1], dtype=np.int64)
    cursor = nbr_ptr[:-1].copy()
    for e, p in enumerate(pairs):
        t = cursor[p.i]
        nbr_edge[t], nbr_dir[t], nbr_other[t] = e, 0, p.j
        cursor[p.i] += 1
        t = cursor[p.j]
        nbr_edge[t], nbr_dir[t], nbr_other[t] = e, 1, p.i
        cursor[p.j] += 1

    return (np.ascontiguousarray(A), np.ascontiguousarray(G0), F2,
            edge_a, edge_b, np.ascontiguousarray(C),
            nbr_ptr, nbr_edge, nbr_dir, nbr_other)


def solve_weight_field(problems: list[PatchProblem], pairs: tuple[AdjacencyPair, ...],
                       params: SolverParams) -> WeightField:
    """Solve the coupled objective by block-coordinate descent.

    Starts from uniform weights, sweeps patches in raster order until the
    relative objective decrease falls below ``params.tol`` or
    ``params.max_sweeps`` is reached. The objective never increases between
    sweeps.
    """
    if not problems:
        raise ValueError("no problems to solve")
    blocks = _assemble_blocks(problems, pairs, params.alpha)
    A, G0, F2, edge_a, edge_b, C, nbr_ptr, nbr_edge, nbr_dir, nbr_other = blocks
    n, K = G0.shape
    W = np.full((n, K), 1.0 / K)
    hist = field_solve(A, G0, F2, edge_a, edge_b, C,
                       nbr_ptr, nbr_edge, nbr_dir, nbr_other,
                       float(params.alpha), float(params.tol),
                       int(params.max_sweeps), W)

    per_patch = _per_patch_contributions(W, problems, pairs, params.alpha)
    sources = np.stack([p.sources for p in problems]).astype(np.int32)
    return WeightField(W, sources, per_patch, float(hist[-1]), np.asarray(hist))


def _per_patch_contributions(W, problems, pairs, alpha) -> np.ndarray:
    n = len(problems)
    out = np.empty(n)
    for i, p in enumerate(problems):
        r = p.query - p.features @ W[i]
        out[i] = r @ r
    if alpha != 0.0:
        for p in pairs:
            d = problems[p.i].overlaps[p.j] @ W[p.i] - problems[p.j].overlaps[p.i] @ W[p.j]
            half = 0.5 * alpha * (d @ d)
            out[p.i] += half
            out[p.j] += half
    return out


def objective_value(weights, problems: list[PatchProblem],
                    pairs: tuple[AdjacencyPair, ...], alpha: float) -> float:
    """Exact coupled objective at the given feasible weights.

    Evaluated directly from the problem operands (independently of the
    solver's block decomposition); rejects weights off the simplex by more
    than 1e-6.
    """
    W = weights.weights if isinstance(weights, WeightField) else np.asarray(weights, dtype=np.float64)
    if W.shape[0] != len(problems):
        raise ValueError("weights do not match problems")
    sums = W.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6 or W.min() < -1e-6 or W.max() > 1.0 + 1e-6:
        raise ValueError("weights violate the simplex constraints beyond tolerance")
    total = 0.0
    for i, p in enumerate(problems):
        r = p.query - p.features @ W[i]
        total += r @ r
    if alpha != 0.0:
        for p in pairs:
            d = problems[p.i].overlaps[p.j] @ W[p.i] - problems[p.j].overlaps[p.i] @ W[p.j]
            total += alpha * (d @ d)
    return float(total)


def to_sparse(wf: WeightField, m: int) -> SparseRepresentation:
    """Scatter each patch's weights to its source indices over [0, M)."""
    if wf.sources.min() < 0 or wf.sources.max() >= m:
        raise ValueError(f"source index out of range [0, {m})")
    indices, weights = [], []
    for i in range(wf.n_patches):
        order = np.argsort(wf.sources[i], kind="stable")
        z = wf.sources[i][order]
        w = wf.weights[i][order]
        keep = w > 0.0
        indices.append(z[keep])
        weights.append(w[keep])
    return SparseRepresentation(m, indices, weights)
