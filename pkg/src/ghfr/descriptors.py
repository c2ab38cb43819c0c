"""Patch-level feature extraction.

Three descriptor kinds are supported:

* ``HOG`` -- unsigned gradient-orientation histograms over 5x5 cells with a
  single L2-normalized block (36 dims on the default 10x10 patch).
* ``DENSE_GRAD`` -- a SIFT-style signed-orientation histogram on a 2x2 cell
  layout with Gaussian spatial weighting and 0.2 clamping (32 dims).
* ``RAW`` -- mean-subtracted, L2-normalized raw intensities.

All descriptors operate on [0, 1] intensity patches and are deterministic.
The internal ``*_batch`` entry points evaluate many windows at once; the
public per-patch operations are thin wrappers around them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .imgcore import GrayImage, PatchGrid, extract_patch

HOG_CELL = 5            # pixels per cell side
HOG_BINS = 9            # unsigned orientation bins over [0, 180)
HOG_EPS = 1e-6          # block-normalization epsilon
DG_BINS = 8             # signed orientation bins over [0, 360)
DG_CLAMP = 0.2          # SIFT-style entry clamp


class DescriptorKind(enum.Enum):
    HOG = "hog"
    DENSE_GRAD = "sift"
    RAW = "raw"

    @classmethod
    def from_name(cls, name: str) -> "DescriptorKind":
        for kind in cls:
            if name.lower() in (kind.value, kind.name.lower()):
                return kind
        raise ValueError(f"unknown descriptor kind {name!r} "
                         f"(expected one of hog, sift, raw)")


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    kind: DescriptorKind

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("feature values must be a finite 1-D vector")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size


def descriptor_dim(kind: DescriptorKind, patch_size: int) -> int:
    if kind is DescriptorKind.HOG:
        return (patch_size // HOG_CELL) ** 2 * HOG_BINS
    if kind is DescriptorKind.DENSE_GRAD:
        return 4 * DG_BINS
    return patch_size * patch_size


def _central_gradients(windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with replicated borders, per window.

    ``windows`` has shape (B, ps, ps); returns (gx, gy) of the same shape.
    """
    gx = np.empty_like(windows)
    gy = np.empty_like(windows)
    gx[:, :, 1:-1] = 0.5 * (windows[:, :, 2:] - windows[:, :, :-2])
    gx[:, :, 0] = 0.5 * (windows[:, :, 1] - windows[:, :, 0])
    gx[:, :, -1] = 0.5 * (windows[:, :, -1] - windows[:, :, -2])
    gy[:, 1:-1, :] = 0.5 * (windows[:, 2:, :] - windows[:, :-2, :])
    gy[:, 0, :] = 0.5 * (windows[:, 1, :] - windows[:, 0, :])
    gy[:, -1, :] = 0.5 * (windows[:, -1, :] - windows[:, -2, :])
    return gx, gy


def _orientation_votes(mag, ang, n_bins, period):
    """Circular bilinear vote split; bin centers sit at k * period / n_bins."""
    pos = ang * (n_bins / period)
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.intp) % n_bins
    hi = (lo + 1) % n_bins
    return lo, hi, mag * (1.0 - frac), mag * frac


def _scatter_hist(B, cell_id, n_cells, lo, hi, w_lo, w_hi, n_bins):
    """Accumulate per-pixel votes into (B, n_cells, n_bins) histograms."""
    size = B * n_cells * n_bins
    base = (np.arange(B)[:, None] * n_cells + cell_id[None, :]) * n_bins
    hist = np.bincount((base + lo).ravel(), weights=w_lo.ravel(), minlength=size)
    hist += np.bincount((base + hi).ravel(), weights=w_hi.ravel(), minlength=size)
    return hist.reshape(B, n_cells * n_bins)


def hog_batch(windows: np.ndarray, patch_size: int) -> np.ndarray:
    """HOG descriptors for a (B, ps, ps) stack of windows."""
    if patch_size < 2 * HOG_CELL:
        raise ValueError(f"patch_size {patch_size} too small for {HOG_CELL}x{HOG_CELL} cells")
    gx, gy = _central_gradients(windows)
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0

    n_side = patch_size // HOG_CELL
    rr, cc = np.meshgrid(np.arange(patch_size), np.arange(patch_size), indexing="ij")
    cell_r = rr // HOG_CELL
    cell_c = cc // HOG_CELL
    in_cells = (cell_r < n_side) & (cell_c < n_side)
    cell_id = (cell_r * n_side + cell_c).ravel()[in_cells.ravel()]

    B = windows.shape[0]
    keep = in_cells.ravel()
    mag2 = mag.reshape(B, -1)[:, keep]
    ang2 = ang.reshape(B, -1)[:, keep]
    lo, hi, w_lo, w_hi = _orientation_votes(mag2, ang2, HOG_BINS, 180.0)
    hist = _scatter_hist(B, cell_id, n_side * n_side, lo, hi, w_lo, w_hi, HOG_BINS)
    norm = np.sqrt(np.einsum("bd,bd->b", hist, hist) + HOG_EPS ** 2)
    return hist / norm[:, None]


def _gaussian_weight(patch_size: int) -> np.ndarray:
    sigma = patch_size / 2.0
    c = (patch_size - 1) / 2.0
    ax = np.arange(patch_size) - c
    d2 = ax[:, None] ** 2 + ax[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def dense_grad_batch(windows: np.ndarray, patch_size: int) -> np.ndarray:
    """SIFT-style descriptors for a (B, ps, ps) stack of windows."""
    if patch_size < 2 * HOG_CELL:
        raise ValueError(f"patch_size {patch_size} too small for a 2x2 cell layout")
    gx, gy = _central_gradients(windows)
    mag = np.hypot(gx, gy) * _gaussian_weight(patch_size)[None, :, :]
    ang = np.degrees(np.arctan2(gy, gx)) % 360.0

    half = patch_size // 2
    rr, cc = np.meshgrid(np.arange(patch_size), np.arange(patch_size), indexing="ij")
    cell_r = np.minimum(rr // half, 1)
    cell_c = np.minimum(cc // half, 1)
    in_cells = (rr < 2 * half) & (cc < 2 * half)
    cell_id = (cell_r * 2 + cell_c).ravel()[in_cells.ravel()]

    B = windows.shape[0]
    keep = in_cells.ravel()
    mag2 = mag.reshape(B, -1)[:, keep]
    ang2 = ang.reshape(B, -1)[:, keep]
    lo, hi, w_lo, w_hi = _orientation_votes(mag2, ang2, DG_BINS, 360.0)
    hist = _scatter_hist(B, cell_id, 4, lo, hi, w_lo, w_hi, DG_BINS)

    norm = np.sqrt(np.einsum("bd,bd->b", hist, hist))
    hist = hist / np.where(norm > 0.0, norm, 1.0)[:, None]
    hist = np.minimum(hist, DG_CLAMP)
    norm = np.sqrt(np.einsum("bd,bd->b", hist, hist))
    return hist / np.where(norm > 0.0, norm, 1.0)[:, None]


def raw_batch(windows: np.ndarray) -> np.ndarray:
    """Mean-subtracted, L2-normalized intensities for a window stack."""
    v = windows.reshape(windows.shape[0], -1).astype(np.float64, copy=True)
    d = v.shape[1]
    scale = np.max(np.abs(v), axis=1)
    v -= v.mean(axis=1)[:, None]
    norm = np.sqrt(np.einsum("bd,bd->b", v, v))
    # rounding dust from the mean subtraction of a constant patch must not
    # get normalized up to unit length
    zero = norm <= 1e-12 * np.sqrt(d) * (1.0 + scale)
    v[zero] = 0.0
    return v / np.where(zero, 1.0, norm)[:, None]


def compute_batch(windows: np.ndarray, patch_size: int, kind: DescriptorKind) -> np.ndarray:
    if kind is DescriptorKind.HOG:
        return hog_batch(windows, patch_size)
    if kind is DescriptorKind.DENSE_GRAD:
        return dense_grad_batch(windows, patch_size)
    return raw_batch(windows)


def _as_windows(patch: np.ndarray, patch_size: int) -> np.ndarray:
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (patch_size * patch_size,):
        raise ValueError(f"patch length {patch.size} != {patch_size}**2")
    return patch.reshape(1, patch_size, patch_size)


def hog(patch: np.ndarray, patch_size: int) -> FeatureVector:
    """HOG descriptor of one patch intensity vector."""
    return FeatureVector(hog_batch(_as_windows(patch, patch_size), patch_size)[0],
                         DescriptorKind.HOG)


def dense_grad(patch: np.ndarray, patch_size: int) -> FeatureVector:
    """SIFT-style gradient-orientation descriptor of one patch."""
    return FeatureVector(dense_grad_batch(_as_windows(patch, patch_size), patch_size)[0],
                         DescriptorKind.DENSE_GRAD)


def raw(patch: np.ndarray) -> FeatureVector:
    """Mean-subtracted, L2-normalized raw intensities."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.size == 0:
        raise ValueError("empty patch")
    return FeatureVector(raw_batch(patch.reshape(1, -1))[0], DescriptorKind.RAW)


def describe_patches(windows: np.ndarray, patch_size: int, kind: DescriptorKind) -> np.ndarray:
    """Descriptor matrix (B, dim) for a stack of windows; internal fast path."""
    return compute_batch(windows, patch_size, kind)


def describe_image(img: GrayImage, grid: PatchGrid, kind: DescriptorKind) -> list[FeatureVector]:
    """One feature per grid patch, in grid index order."""
    ps = grid.patch_size
    windows = np.stack([extract_patch(img, ref, grid).reshape(ps, ps) for ref in grid.refs()])
    feats = compute_batch(windows, ps, kind)
    return [FeatureVector(f, kind) for f in feats]


def describe_image_array(img: GrayImage, grid: PatchGrid, kind: DescriptorKind) -> np.ndarray:
    """(N, dim) feature matrix for an image; same values as describe_image."""
    ps = grid.patch_size
    windows = np.stack([extract_patch(img, ref, grid).reshape(ps, ps) for ref in grid.refs()])
    return compute_batch(windows, ps, kind)
