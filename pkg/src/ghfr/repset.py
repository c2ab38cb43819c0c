"""Representation dataset: M heterogeneous image pairs and candidate search.

For each patch location of a query image, the search returns the K nearest
same-modality patches from the representation set, scanning a stride-2
offset lattice inside the configured search region and keeping at most one
candidate (its best in-region window) per representation image. That
per-image bijection is what lets patch weights be re-indexed onto the
M-dimensional space later.

Dense window features for every valid window position are precomputed per
(modality, kind) and cached; image intensities are quantized to float32 at
build time so that saving and reloading a set reproduces bit-identical
results.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import descriptors
from .descriptors import DescriptorKind
from .imgcore import AdjacencyPair, GrayImage, PatchGrid, build_grid, normalize_geometry, overlap_vector

MODALITIES = ("A", "B")

_MAGIC = b"GHFR"
_VERSION = 1


def region_offsets(region: int) -> np.ndarray:
    """Stride-2 offset lattice for an even search region (0 degenerates to {0})."""
    if region < 0 or region % 2 != 0:
        raise ValueError(f"search region must be even and nonnegative, got {region}")
    if region == 0:
        return np.zeros(1, dtype=np.intp)
    return np.arange(-(region // 2), region // 2, 2, dtype=np.intp)


@dataclass(frozen=True)
class Candidate:
    """One representation patch: source image, offset, feature, intensities."""

    z: int
    dx: int
    dy: int
    feature: np.ndarray
    patch: np.ndarray
    distance: float


@dataclass(frozen=True)
class CandidateSet:
    """K candidates for one patch location, ascending distance, one per image."""

    patch_index: int
    modality: str
    kind: DescriptorKind
    candidates: tuple[Candidate, ...]

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def sources(self) -> list[int]:
        return [c.z for c in self.candidates]


class RepresentationSet:
    """M normalized image pairs on one shared grid, with dense feature caches."""

    def __init__(self, grid: PatchGrid, images_a: np.ndarray, images_b: np.ndarray):
        if images_a.shape != images_b.shape or images_a.ndim != 3:
            raise ValueError("modalities must hold equally many images of one geometry")
        if images_a.shape[0] == 0:
            raise ValueError("representation set must contain at least one pair")
        if images_a.shape[1:] != (grid.image_height, grid.image_width):
            raise ValueError("images do not match the grid geometry")
        self.grid = grid
        self._images = {"A": np.ascontiguousarray(images_a, dtype=np.float32),
                        "B": np.ascontiguousarray(images_b, dtype=np.float32)}
        self._features: dict[tuple[str, DescriptorKind], tuple[np.ndarray, np.ndarray]] = {}
        self._positions: dict[int, np.ndarray] = {}

    @property
    def m(self) -> int:
        return self._images["A"].shape[0]

    @property
    def n_x(self) -> int:
        return self.grid.image_width - self.grid.patch_size + 1

    @property
    def n_y(self) -> int:
        return self.grid.image_height - self.grid.patch_size + 1

    def _check_modality(self, modality: str) -> str:
        if modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {modality!r}")
        return modality

    def image(self, modality: str, z: int) -> GrayImage:
        stack = self._images[self._check_modality(modality)]
        if not 0 <= z < self.m:
            raise ValueError(f"image index {z} out of range [0, {self.m})")
        return GrayImage(stack[z].astype(np.float64))

    def image_stack(self, modality: str) -> np.ndarray:
        return self._images[self._check_modality(modality)]

    def ensure_features(self, modality: str, kind: DescriptorKind) -> None:
        self.dense_features(modality, kind)

    def drop_features(self, modality: str | None = None, kind: DescriptorKind | None = None) -> None:
        keys = [k for k in self._features
                if (modality is None or k[0] == modality) and (kind is None or k[1] == kind)]
        for k in keys:
            del self._features[k]

    def dense_features(self, modality: str, kind: DescriptorKind) -> tuple[np.ndarray, np.ndarray]:
        """(features, squared_norms) over all valid window positions.

        ``features`` has shape (M, n_y * n_x, dim); position p encodes the
        window top-left (y, x) = divmod(p, n_x).
        """
        key = (self._check_modality(modality), kind)
        if key not in self._features:
            ps = self.grid.patch_size
            stacks = []
            for z in range(self.m):
                px = self._images[key[0]][z].astype(np.float64)
                wins = sliding_window_view(px, (ps, ps)).reshape(-1, ps, ps)
                stacks.append(descriptors.compute_batch(wins, ps, kind))
            feats = np.stack(stacks)
            norms2 = np.einsum("mpd,mpd->mp", feats, feats)
            self._features[key] = (feats, norms2)
        return self._features[key]

    def candidate_positions(self, region: int) -> np.ndarray:
        """(N, n_offsets**2) flat window positions per patch, clipped to bounds."""
        if region not in self._positions:
            offs = region_offsets(region)
            grid = self.grid
            xs0 = np.array([ref.x0 for ref in grid.refs()], dtype=np.intp)
            ys0 = np.array([ref.y0 for ref in grid.refs()], dtype=np.intp)
            cx = np.clip(xs0[:, None] + offs[None, :], 0, self.n_x - 1)
            cy = np.clip(ys0[:, None] + offs[None, :], 0, self.n_y - 1)
            pos = cy[:, :, None] * self.n_x + cx[:, None, :]
            self._positions[region] = pos.reshape(grid.n_patches, -1)
        return self._positions[region]

    def window(self, modality: str, z: int, pos: int) -> np.ndarray:
        """Row-major intensities of the window at flat position ``pos``."""
        ps = self.grid.patch_size
        y, x = divmod(int(pos), self.n_x)
        px = self._images[self._check_modality(modality)][z]
        return px[y:y + ps, x:x + ps].astype(np.float64).flatten()


def build_repset(pairs, grid: PatchGrid,
                 kinds: tuple[DescriptorKind, ...] = ()) -> RepresentationSet:
    """Normalize image pairs onto the grid and precompute dense features.

    ``pairs`` is a sequence of (modality A image, modality B image). Passing
    ``kinds`` precomputes those descriptor caches eagerly; others are filled
    on first use.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("representation set must contain at least one pair")
    w, h = grid.image_width, grid.image_height
    arr_a = np.stack([normalize_geometry(a, w, h).pixels.astype(np.float32) for a, _ in pairs])
    arr_b = np.stack([normalize_geometry(b, w, h).pixels.astype(np.float32) for _, b in pairs])
    rs = RepresentationSet(grid, arr_a, arr_b)
    for kind in kinds:
        for modality in MODALITIES:
            rs.ensure_features(modality, kind)
    return rs


def search_all(rs: RepresentationSet, modality: str, queries: np.ndarray,
               kind: DescriptorKind, K: int, region: int,
               chunk: int = 48) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Candidate search for every patch of an image at once.

    ``queries`` is the (N, dim) matrix of grid-aligned query features.
    Returns (sources, distances, positions): each (N, K), ascending distance
    per row with ties broken toward the lower source index; positions are
    flat window indices of each candidate's best in-region window.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > rs.m:
        raise ValueError(f"K={K} exceeds representation size M={rs.m}")
    feats, norms2 = rs.dense_features(modality, kind)
    pos = rs.candidate_positions(region)
    n = queries.shape[0]
    if n != rs.grid.n_patches:
        raise ValueError("queries must cover every grid patch")

    src = np.empty((n, K), dtype=np.int32)
    dist = np.empty((n, K))
    best_pos = np.empty((n, K), dtype=np.int32)
    q2 = np.einsum("nd,nd->n", queries, queries)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        p = pos[lo:hi]                                   # (c, O)
        f = feats[:, p, :]                               # (M, c, O, dim)
        d2 = norms2[:, p] - 2.0 * np.einsum("mcod,cd->mco", f, queries[lo:hi])
        d2 += q2[lo:hi][None, :, None]
        off = np.argmin(d2, axis=2)                      # (M, c) first-hit ties
        bd2 = np.take_along_axis(d2, off[:, :, None], axis=2)[:, :, 0]
        order = np.argsort(bd2, axis=0, kind="stable")[:K]   # ties: lower z first
        cols = np.arange(hi - lo)
        src[lo:hi] = order.T
        dist[lo:hi] = np.sqrt(np.maximum(bd2[order, cols[None, :]], 0.0)).T
        best_pos[lo:hi] = p[cols[None, :], off[order, cols[None, :]]].T
    return src, dist, best_pos


def search_candidates(rs: RepresentationSet, modality: str, i: int,
                      query, K: int, region: int = 16) -> CandidateSet:
    """K nearest representation patches around patch location ``i``."""
    if not 0 <= i < rs.grid.n_patches:
        raise ValueError(f"patch index {i} out of range [0, {rs.grid.n_patches})")
    if isinstance(query, descriptors.FeatureVector):
        kind, qv = query.kind, query.values
    else:
        raise ValueError("query must be a FeatureVector")
    if K < 1 or K > rs.m:
        raise ValueError(f"K must satisfy 1 <= K <= M={rs.m}, got {K}")

    feats, norms2 = rs.dense_features(modality, kind)
    p = rs.candidate_positions(region)[i]                # (O,)
    f = feats[:, p, :]                                   # (M, O, dim)
    d2 = norms2[:, p] - 2.0 * (f @ qv) + qv @ qv
    off = np.argmin(d2, axis=1)
    bd2 = d2[np.arange(rs.m), off]
    order = np.argsort(bd2, axis=0, kind="stable")[:K]

    ref = rs.grid.patch_ref(i)
    cands = []
    for z in order:
        z = int(z)
        pz = int(p[off[z]])
        y, x = divmod(pz, rs.n_x)
        cands.append(Candidate(
            z=z, dx=x - ref.x0, dy=y - ref.y0,
            feature=feats[z, pz].copy(),
            patch=rs.window(modality, z, pz),
            distance=float(np.sqrt(max(bd2[z], 0.0))),
        ))
    return CandidateSet(i, modality, kind, tuple(cands))


def candidate_overlap(c: Candidate, pair: AdjacencyPair, side: int,
                      patch_size: int) -> np.ndarray:
    """Overlap restriction of a candidate's patch, in probe-grid geometry."""
    return overlap_vector(c.patch, pair, side, patch_size)


def save_repset(rs: RepresentationSet, path) -> None:
    """Versioned binary: magic, version, dimensions, little-endian float32 images.

    Feature caches are derived data recomputed on load.
    """
    g = rs.grid
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<HIHHHH", _VERSION, rs.m, g.image_width,
                            g.image_height, g.patch_size, g.step))
        for modality in MODALITIES:
            f.write(rs.image_stack(modality).astype("<f4").tobytes())


def load_repset(path, kinds: tuple[DescriptorKind, ...] = ()) -> RepresentationSet:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a repset file (bad magic {magic!r})")
        version, m, w, h, patch, step = struct.unpack("<HIHHHH", f.read(14))
        if version != _VERSION:
            raise ValueError(f"unsupported repset version {version}")
        grid = build_grid(w, h, patch, step)
        count = m * h * w
        arr_a = np.frombuffer(f.read(count * 4), dtype="<f4").reshape(m, h, w)
        arr_b = np.frombuffer(f.read(count * 4), dtype="<f4").reshape(m, h, w)
    rs = RepresentationSet(grid, arr_a.copy(), arr_b.copy())
    for kind in kinds:
        for modality in MODALITIES:
            rs.ensure_features(modality, kind)
    return rs
