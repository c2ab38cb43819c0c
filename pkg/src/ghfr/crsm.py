"""Coupled representation similarity: shared-support weight sums.

Two patches are compared by summing, over the representation images that
carry positive weight on *both* sides, half of the two weights. The
per-patch scores form a similarity map on the patch grid whose mean is the
image-pair score; stacking scores across (descriptor kind, K) combinations
yields the vector that fusion consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptors import DescriptorKind
from .imgcore import GrayImage, PatchGrid
from .mrfweights import SparseRepresentation

# strict positivity for "both weights > 0", with room for float dust
POSITIVE_EPS = 1e-12


@dataclass(frozen=True)
class SimilarityMap:
    """Per-patch scores laid out on the patch grid."""

    scores: np.ndarray
    cols: int
    rows: int

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.shape != (self.cols * self.rows,):
            raise ValueError("scores must have one entry per grid patch")
        if s.min() < 0.0 or s.max() > 1.0:
            raise ValueError("similarity scores must lie in [0, 1]")
        object.__setattr__(self, "scores", s)

    @property
    def image_score(self) -> float:
        return float(self.scores.mean())


@dataclass(frozen=True)
class ScoreVector:
    """Image-pair scores across (kind, K) combinations in canonical order."""

    values: np.ndarray
    combos: tuple[tuple[DescriptorKind, int], ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.combos),):
            raise ValueError("one value per combination required")
        object.__setattr__(self, "values", v)


def combo_order(kinds, k_list) -> tuple[tuple[DescriptorKind, int], ...]:
    """Canonical combination order: kind-major, ascending K."""
    return tuple((kind, int(k)) for kind in kinds for k in sorted(k_list))


def _as_sparse_pair(v) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(v, dict):
        if not v:
            return np.empty(0, dtype=np.int64), np.empty(0)
        idx = np.fromiter(v.keys(), dtype=np.int64)
        w = np.fromiter(v.values(), dtype=np.float64)
        order = np.argsort(idx)
        return idx[order], w[order]
    idx, w = v
    return np.asarray(idx, dtype=np.int64), np.asarray(w, dtype=np.float64)


def patch_similarity(wy, wx) -> float:
    """Half-sum of both weights over the shared positive support.

    Accepts ``{index: weight}`` dicts or (indices, weights) pairs with
    strictly increasing indices.
    """
    iy, wy_ = _as_sparse_pair(wy)
    ix, wx_ = _as_sparse_pair(wx)
    py = wy_ > POSITIVE_EPS
    px = wx_ > POSITIVE_EPS
    shared, ia, ib = np.intersect1d(iy[py], ix[px], assume_unique=True,
                                    return_indices=True)
    if shared.size == 0:
        return 0.0
    s = 0.5 * (wy_[py][ia].sum() + wx_[px][ib].sum())
    return float(min(max(s, 0.0), 1.0))


def similarity_map(ry: SparseRepresentation, rx: SparseRepresentation) -> SimilarityMap:
    """Per-patch shared-support scores between two representations."""
    if ry.n_patches != rx.n_patches:
        raise ValueError("representations cover different patch counts")
    if ry.m != rx.m:
        raise ValueError(f"mismatched representation sizes M: {ry.m} != {rx.m}")
    y = ry.to_dense()
    x = rx.to_dense()
    scores = dense_pair_scores(y, x)
    cols, rows = _infer_grid_shape(ry.n_patches)
    return SimilarityMap(scores, cols, rows)


def dense_pair_scores(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-patch scores from dense (N, M) weight matrices."""
    mask = (y > POSITIVE_EPS) & (x > POSITIVE_EPS)
    s = 0.5 * (np.where(mask, y, 0.0).sum(axis=1) + np.where(mask, x, 0.0).sum(axis=1))
    return np.clip(s, 0.0, 1.0)


def image_scores_batch(y: np.ndarray, x_stack: np.ndarray) -> np.ndarray:
    """Image-level scores of one probe against a stack of gallery matrices.

    ``y`` is (N, M); ``x_stack`` is (G, N, M). Returns (G,) mean patch scores.
    """
    mask = (y[None, :, :] > POSITIVE_EPS) & (x_stack > POSITIVE_EPS)
    s = 0.5 * ((np.where(mask, y[None, :, :], 0.0)).sum(axis=2)
               + (np.where(mask, x_stack, 0.0)).sum(axis=2))
    return np.clip(s, 0.0, 1.0).mean(axis=1)


def _infer_grid_shape(n: int) -> tuple[int, int]:
    # fallback square-ish layout when no grid is attached
    cols = int(np.sqrt(n))
    while cols > 1 and n % cols:
        cols -= 1
    return (cols, n // cols) if cols >= 1 else (n, 1)


def similarity_map_on_grid(ry: SparseRepresentation, rx: SparseRepresentation,
                           grid: PatchGrid) -> SimilarityMap:
    """Like :func:`similarity_map` but laid out on an explicit grid."""
    if grid.n_patches != ry.n_patches:
        raise ValueError("grid does not match representation")
    m = similarity_map(ry, rx)
    return SimilarityMap(m.scores, grid.cols, grid.rows)


def binarize_map(smap: SimilarityMap, threshold: float = 0.5) -> np.ndarray:
    """Per-patch ``score > threshold`` booleans as a (rows, cols) grid."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return (smap.scores > threshold).reshape(smap.rows, smap.cols)


def render_map(smap: SimilarityMap, grid: PatchGrid,
               binary_threshold: float | None = None) -> GrayImage:
    """Render a similarity map at image size, one flat cell per patch.

    Overlapping cell regions are overwritten in raster order (no blending).
    With ``binary_threshold`` set, bright cells mark scores above it.
    """
    if grid.n_patches != smap.scores.size:
        raise ValueError("grid does not match map")
    values = smap.scores
    if binary_threshold is not None:
        values = (values > binary_threshold).astype(np.float64)
    out = np.zeros((grid.image_height, grid.image_width))
    ps = grid.patch_size
    for ref in grid.refs():
        out[ref.y0:ref.y0 + ps, ref.x0:ref.x0 + ps] = values[ref.index]
    return GrayImage(out)


def score_vector(probe_reps, gallery_reps, combos) -> ScoreVector:
    """One image-level score per (kind, K) combination, canonical order.

    Both ``probe_reps`` and ``gallery_reps`` map (kind, K) to a
    :class:`SparseRepresentation`; a missing combination is an error.
    """
    values = np.empty(len(combos))
    for t, combo in enumerate(combos):
        if combo not in probe_reps or combo not in gallery_reps:
            kind, k = combo
            raise ValueError(f"missing representation for combination ({kind.name}, K={k})")
        values[t] = similarity_map(probe_reps[combo], gallery_reps[combo]).image_score
    return ScoreVector(values, tuple(combos))


def write_score_matrix(path, probe_ids, gallery_ids, scores: np.ndarray, combos) -> None:
    """TSV score matrix: probe_id, gallery_id, then one column per combination."""
    p, g, d = scores.shape
    if p != len(probe_ids) or g != len(gallery_ids) or d != len(combos):
        raise ValueError("score tensor does not match ids/combos")
    with open(path, "w") as f:
        header = "\t".join(f"{kind.value}:K{k}" for kind, k in combos)
        f.write(f"probe_id\tgallery_id\t{header}\n")
        for i, pid in enumerate(probe_ids):
            for j, gid in enumerate(gallery_ids):
                row = "\t".join(repr(float(v)) for v in scores[i, j])
                f.write(f"{pid}\t{gid}\t{row}\n")


def read_score_matrix(path):
    """Inverse of :func:`write_score_matrix`.

    Returns (probe_ids, gallery_ids, scores (P, G, D), combo_names).
    """
    with open(path) as f:
        header = f.readline().rstrip("\n").split("\t")
        if header[:2] != ["probe_id", "gallery_id"]:
            raise ValueError(f"{path}: not a score matrix file")
        combo_names = tuple(header[2:])
        probe_ids: list[str] = []
        gallery_ids: list[str] = []
        rows = []
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 + len(combo_names):
                raise ValueError(f"{path}: ragged score row")
            pid, gid = parts[0], parts[1]
            if pid not in probe_ids:
                probe_ids.append(pid)
            if gid not in gallery_ids:
                gallery_ids.append(gid)
            rows.append((pid, gid, np.array([float(v) for v in parts[2:]])))
    scores = np.zeros((len(probe_ids), len(gallery_ids), len(combo_names)))
    pix = {pid: i for i, pid in enumerate(probe_ids)}
    gix = {gid: j for j, gid in enumerate(gallery_ids)}
    for pid, gid, vec in rows:
        scores[pix[pid], gix[gid]] = vec
    return probe_ids, gallery_ids, scores, combo_names
