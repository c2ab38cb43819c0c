"""Image loading, geometric normalization, and overlapping patch grids.

Images are grayscale float arrays in [0, 1]. A :class:`PatchGrid` describes
the deterministic decomposition of an image into overlapping square patches
together with the 4-neighbor adjacency structure and the per-pair overlap
rectangles that the weight solver couples through.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

# ITU-R 601 luma weights for RGB -> gray conversion, as exact integer
# thousandths so that pure white maps to exactly 1.0.
_LUMA = (299.0, 587.0, 114.0)


@dataclass(frozen=True)
class GrayImage:
    """A grayscale image with row-major intensities in [0, 1]."""

    pixels: np.ndarray  # (height, width) float64

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"expected non-empty 2-D pixel array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image intensities must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def load_image(path) -> GrayImage:
    """Load an 8-bit grayscale/RGB PNG or binary PGM (P5) file.

    Color inputs are reduced with the ITU-R 601 luma weighting; intensities
    are scaled to [0, 1].
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode == "L":
                arr = np.asarray(im, dtype=np.float64) / 255.0
            elif mode == "RGB":
                rgb = np.asarray(im, dtype=np.float64)
                arr = (_LUMA[0] * rgb[..., 0] + _LUMA[1] * rgb[..., 1]
                       + _LUMA[2] * rgb[..., 2]) / 255000.0
            else:
                raise ValueError(f"unsupported image mode {mode!r} in {path} "
                                 "(expected 8-bit grayscale or RGB)")
    except UnidentifiedImageError as exc:
        raise ValueError(f"unsupported or corrupt image format: {path}") from exc
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"zero-dimension image: {path}")
    return GrayImage(np.clip(arr, 0.0, 1.0))


def normalize_geometry(img: GrayImage, target_w: int, target_h: int) -> GrayImage:
    """Center-crop to the target aspect ratio, then bilinearly resample.

    A same-size input is returned pixel-identical, which also makes the
    operation idempotent.
    """
    if target_w <= 0 or target_h <= 0:
        raise ValueError("target dimensions must be positive")
    px = img.pixels
    h, w = px.shape

    # Largest centered crop with the target aspect ratio.
    if w * target_h > h * target_w:  # too wide
        crop_w = max(1, int(round(h * target_w / target_h)))
        crop_h = h
    else:  # too tall (or exact)
        crop_w = w
        crop_h = max(1, int(round(w * target_h / target_w)))
    crop_w = min(crop_w, w)
    crop_h = min(crop_h, h)
    x0 = (w - crop_w) // 2
    y0 = (h - crop_h) // 2
    cropped = px[y0:y0 + crop_h, x0:x0 + crop_w]

    if crop_w == target_w and crop_h == target_h:
        return GrayImage(cropped)
    return GrayImage(_bilinear_resize(cropped, target_w, target_h))


def _bilinear_resize(src: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resampling."""
    h, w = src.shape
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    top = src[y0[:, None], x0[None, :]] * (1.0 - fx) + src[y0[:, None], x1[None, :]] * fx
    bot = src[y1[:, None], x0[None, :]] * (1.0 - fx) + src[y1[:, None], x1[None, :]] * fx
    out = top * (1.0 - fy)[:, None] + bot * fy[:, None]
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class PatchRef:
    """One patch position: linear index, grid coordinates, pixel offset."""

    index: int
    col: int
    row: int
    x0: int
    y0: int


@dataclass(frozen=True)
class AdjacencyPair:
    """A 4-neighbor patch pair (i < j) and its shared overlap rectangle.

    Bounds are (row_start, row_stop, col_start, col_stop) in each patch's
    local frame; both sides enumerate the shared pixels in the same
    row-major order.
    """

    i: int
    j: int
    bounds_i: tuple[int, int, int, int]
    bounds_j: tuple[int, int, int, int]

    def bounds_for(self, side: int) -> tuple[int, int, int, int]:
        if side == self.i:
            return self.bounds_i
        if side == self.j:
            return self.bounds_j
        raise ValueError(f"patch {side} is not a member of pair ({self.i}, {self.j})")


@dataclass(frozen=True)
class PatchGrid:
    """Overlapping patch decomposition of a fixed image geometry."""

    image_width: int
    image_height: int
    patch_size: int
    step: int
    cols: int
    rows: int
    n_patches: int
    _pairs: tuple = field(default=(), repr=False, compare=False)

    @property
    def overlap(self) -> int:
        return self.patch_size - self.step

    def patch_ref(self, index: int) -> PatchRef:
        if not 0 <= index < self.n_patches:
            raise ValueError(f"patch index {index} out of range [0, {self.n_patches})")
        row, col = divmod(index, self.cols)
        return PatchRef(index, col, row, col * self.step, row * self.step)

    def index_of(self, col: int, row: int) -> int:
        if not (0 <= col < self.cols and 0 <= row < self.rows):
            raise ValueError(f"grid coordinates ({col}, {row}) out of range")
        return row * self.cols + col

    def refs(self) -> list[PatchRef]:
        return [self.patch_ref(i) for i in range(self.n_patches)]

    def adjacent_pairs(self) -> tuple[AdjacencyPair, ...]:
        return self._pairs


def build_grid(w: int, h: int, patch_size: int = 10, step: int = 5) -> PatchGrid:
    """Construct the patch grid for a w x h image.

    Residual border pixels (when the image does not tile exactly) are
    excluded. Adjacency is 4-connected; each pair records the overlap
    rectangle of ``patch_size * (patch_size - step)`` pixels.
    """
    if patch_size <= 0:
        raise ValueError("patch_size must be positive")
    if patch_size > min(w, h):
        raise ValueError(f"patch_size {patch_size} exceeds image dimensions {w}x{h}")
    if step <= 0 or step > patch_size:
        raise ValueError(f"step must satisfy 0 < step <= patch_size, got {step}")
    cols = (w - patch_size) // step + 1
    rows = (h - patch_size) // step + 1
    n = cols * rows
    ps, ov = patch_size, patch_size - step

    pairs = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:  # horizontal neighbor
                pairs.append(AdjacencyPair(
                    i, i + 1,
                    bounds_i=(0, ps, step, ps),
                    bounds_j=(0, ps, 0, ov),
                ))
            if r + 1 < rows:  # vertical neighbor
                pairs.append(AdjacencyPair(
                    i, i + cols,
                    bounds_i=(step, ps, 0, ps),
                    bounds_j=(0, ov, 0, ps),
                ))
    return PatchGrid(w, h, patch_size, step, cols, rows, n, tuple(pairs))


def extract_patch(img: GrayImage, p: PatchRef, grid: PatchGrid) -> np.ndarray:
    """Row-major copy of the patch window (length patch_size**2)."""
    if (img.width, img.height) != (grid.image_width, grid.image_height):
        raise ValueError("grid geometry does not match image dimensions")
    if not 0 <= p.index < grid.n_patches:
        raise ValueError(f"patch index {p.index} out of range")
    ps = grid.patch_size
    return img.pixels[p.y0:p.y0 + ps, p.x0:p.x0 + ps].flatten()


def overlap_vector(patch: np.ndarray, pair: AdjacencyPair, side: int,
                   patch_size: int) -> np.ndarray:
    """Restrict a patch intensity vector to the pair's overlap rectangle.

    Two adjacent patches cut from the same image yield identical vectors
    (same underlying pixels, same row-major order).
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (patch_size * patch_size,):
        raise ValueError(f"patch vector length {patch.size} != {patch_size}**2")
    r0, r1, c0, c1 = pair.bounds_for(side)
    return patch.reshape(patch_size, patch_size)[r0:r1, c0:c1].flatten()
