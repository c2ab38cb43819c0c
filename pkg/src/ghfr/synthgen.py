"""Deterministic synthetic heterogeneous image pairs.

Generates procedural face-like images (modality A) and a band-pass
"sketch" stylization of a perturbed variant (modality B), so the matcher
can be exercised end to end without any external dataset. Everything is
seeded: the same config reproduces byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .imgcore import GrayImage


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    identities: int = 100
    width: int = 100
    height: int = 125
    dog_sigma1: float = 1.0
    dog_sigma2: float = 2.5
    edge_envelope: float = 1.5
    invert: bool = True
    max_shift: int = 2
    noise_sigma: float = 0.02

    def __post_init__(self):
        if not (0.0 < self.dog_sigma1 < self.dog_sigma2):
            raise ValueError("require 0 < dog_sigma1 < dog_sigma2")
        if self.max_shift < 0 or self.noise_sigma < 0:
            raise ValueError("perturbations must be nonnegative")
        if self.identities <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("identities and image size must be positive")


def _rng_for(cfg: SynthConfig, ident: int, stream: int) -> np.random.Generator:
    return np.random.default_rng((cfg.seed, stream, ident))


def generate_identity(cfg: SynthConfig, ident: int) -> GrayImage:
    """Procedural modality-A image for one identity (deterministic)."""
    if not 0 <= ident < cfg.identities:
        raise ValueError(f"identity {ident} out of range [0, {cfg.identities})")
    rng = _rng_for(cfg, ident, 1)
    w, h = cfg.width, cfg.height
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    # background with a per-identity gradient
    bg = 0.80 + 0.10 * rng.random()
    gdir = rng.random(2) - 0.5
    img = bg + 0.06 * (gdir[0] * (xx / w - 0.5) + gdir[1] * (yy / h - 0.5))

    # head ellipse
    cx = w * 0.5 + rng.uniform(-3, 3)
    cy = h * 0.52 + rng.uniform(-4, 4)
    ax = w * rng.uniform(0.30, 0.38)
    ay = h * rng.uniform(0.33, 0.41)
    ell = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2
    face = 1.0 / (1.0 + np.exp(-(1.0 - ell) * 10.0))
    skin = 0.45 + 0.18 * rng.random()
    img = img * (1.0 - face) + skin * face

    # hair cap with a wavy boundary
    hair_tone = 0.10 + 0.20 * rng.random()
    hair_line = cy - ay * rng.uniform(0.30, 0.50)
    wob = 3.0 * np.sin(xx[0] * rng.uniform(0.05, 0.15) + rng.uniform(0, 6.28))
    hair = ((yy < hair_line + wob[None, :]) & (ell < 1.0)).astype(np.float64)
    hair = gaussian_filter(hair, 1.2)
    img = img * (1.0 - hair) + hair_tone * hair

    # eyes and brows
    ex = ax * rng.uniform(0.35, 0.48)
    ey = ay * rng.uniform(0.18, 0.30)
    eye_sig = rng.uniform(1.8, 3.2)
    eye_depth = rng.uniform(0.25, 0.40)
    for side in (-1.0, 1.0):
        exc = cx + side * ex + rng.uniform(-1, 1)
        eyc = cy - ey + rng.uniform(-1, 1)
        d2 = (xx - exc) ** 2 + (yy - eyc) ** 2
        img -= eye_depth * np.exp(-d2 / (2 * eye_sig ** 2))
        brow = np.exp(-((yy - (eyc - rng.uniform(4, 7))) ** 2) / (2 * 1.2 ** 2))
        brow *= np.exp(-((xx - exc) / (2.5 * eye_sig)) ** 4)
        img -= rng.uniform(0.10, 0.25) * brow

    # nose ridge: bright crest with a darker flank
    nx = cx + rng.uniform(-1.5, 1.5)
    ny0, ny1 = cy - ay * 0.05, cy + ay * rng.uniform(0.18, 0.30)
    seg = np.clip((yy - ny0) / max(ny1 - ny0, 1e-9), 0, 1)
    in_seg = ((yy >= ny0) & (yy <= ny1)).astype(np.float64)
    img += 0.10 * in_seg * np.exp(-((xx - nx) ** 2) / (2 * 1.4 ** 2)) * seg
    img -= 0.08 * in_seg * np.exp(-((xx - nx - 2.8) ** 2) / (2 * 1.6 ** 2)) * seg

    # mouth bar with per-identity curvature
    mx = cx + rng.uniform(-2, 2)
    my = cy + ay * rng.uniform(0.42, 0.55)
    half_w = rng.uniform(7, 13)
    half_h = rng.uniform(1.2, 2.4)
    curve = rng.uniform(-2.0, 2.0) * ((xx - mx) / half_w) ** 2
    bar = np.exp(-((yy - my - curve) ** 2) / (2 * half_h ** 2))
    bar *= np.exp(-((xx - mx) / half_w) ** 8)
    img -= rng.uniform(0.20, 0.35) * bar

    # a few moles / marks inside the face
    for _ in range(rng.integers(2, 5)):
        px_ = cx + rng.uniform(-0.7, 0.7) * ax
        py_ = cy + rng.uniform(-0.5, 0.7) * ay
        d2 = (xx - px_) ** 2 + (yy - py_) ** 2
        img -= rng.uniform(0.05, 0.15) * np.exp(-d2 / (2 * rng.uniform(0.8, 1.6) ** 2))

    # per-identity texture everywhere (keeps every patch identity-specific)
    t_coarse = gaussian_filter(rng.standard_normal((h, w)), 2.0)
    t_fine = gaussian_filter(rng.standard_normal((h, w)), 0.8)
    img += 0.045 * t_coarse / max(t_coarse.std(), 1e-12)
    img += 0.015 * t_fine / max(t_fine.std(), 1e-12)

    return GrayImage(np.clip(img, 0.0, 1.0))


def to_modality_b(img: GrayImage, cfg: SynthConfig) -> GrayImage:
    """Band-pass sketch stylization.

    Rectified difference-of-Gaussians energy (with a light envelope
    smoothing so strokes cover the edge centerline), rescaled to [0, 1]
    and optionally inverted. A constant input maps to a constant output.
    """
    px = img.pixels
    d = gaussian_filter(px, cfg.dog_sigma1) - gaussian_filter(px, cfg.dog_sigma2)
    m = np.abs(d)
    if cfg.edge_envelope > 0:
        m = gaussian_filter(m, cfg.edge_envelope)
    peak = m.max()
    # blur rounding noise on a constant input must not normalize up to 1
    m = m / peak if peak > 1e-12 else np.zeros_like(m)
    if cfg.invert:
        m = 1.0 - m
    return GrayImage(m)


def perturb(img: GrayImage, rng: np.random.Generator, cfg: SynthConfig) -> GrayImage:
    """Intra-identity variation: small integer shift plus Gaussian noise."""
    px = img.pixels
    s = cfg.max_shift
    if s > 0:
        dx = int(rng.integers(-s, s + 1))
        dy = int(rng.integers(-s, s + 1))
        padded = np.pad(px, s, mode="edge")
        h, w = px.shape
        px = padded[s + dy:s + dy + h, s + dx:s + dx + w]
    if cfg.noise_sigma > 0:
        px = px + rng.normal(0.0, cfg.noise_sigma, px.shape)
    return GrayImage(np.clip(px, 0.0, 1.0))


def generate_pair(cfg: SynthConfig, ident: int) -> tuple[GrayImage, GrayImage]:
    """The (modality A, modality B) image pair for one identity."""
    a = generate_identity(cfg, ident)
    b = to_modality_b(perturb(a, _rng_for(cfg, ident, 2), cfg), cfg)
    return a, b


def write_pgm(path, img: GrayImage) -> None:
    """Binary 8-bit PGM (P5), deterministic bytes."""
    arr = np.round(img.pixels * 255.0).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(arr.tobytes())


def generate_dataset(cfg: SynthConfig, out_dir,
                     splits: tuple[int, int, int]) -> tuple[str, str]:
    """Write the image corpus, manifest, and split file.

    ``splits`` gives the (representation, train, test) sizes; the split
    assignment is a seeded permutation. Returns (manifest_path, splits_path).
    Manifest lines are ``id<TAB>pathA<TAB>pathB`` with paths relative to the
    manifest location.
    """
    n_rep, n_train, n_test = splits
    if n_rep + n_train + n_test > cfg.identities:
        raise ValueError(f"splits {splits} exceed {cfg.identities} identities")
    os.makedirs(out_dir, exist_ok=True)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)

    perm = np.random.default_rng((cfg.seed, 0)).permutation(cfg.identities)
    assignment = {}
    for pos, ident in enumerate(perm):
        if pos < n_rep:
            assignment[int(ident)] = "representation"
        elif pos < n_rep + n_train:
            assignment[int(ident)] = "train"
        elif pos < n_rep + n_train + n_test:
            assignment[int(ident)] = "test"
        else:
            assignment[int(ident)] = "unused"

    manifest_path = os.path.join(out_dir, "manifest.tsv")
    splits_path = os.path.join(out_dir, "splits.tsv")
    with open(manifest_path, "w") as mf, open(splits_path, "w") as sf:
        for ident in range(cfg.identities):
            a, b = generate_pair(cfg, ident)
            rel_a = os.path.join("images", f"id{ident:05d}_a.pgm")
            rel_b = os.path.join("images", f"id{ident:05d}_b.pgm")
            write_pgm(os.path.join(out_dir, rel_a), a)
            write_pgm(os.path.join(out_dir, rel_b), b)
            mf.write(f"{ident}\t{rel_a}\t{rel_b}\n")
            sf.write(f"{ident}\t{assignment[ident]}\n")
    return manifest_path, splits_path


def read_manifest(manifest_path) -> list[tuple[str, str, str]]:
    """Parse ``id<TAB>pathA<TAB>pathB`` lines; paths resolved relative to the file."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    rows = []
    with open(manifest_path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{manifest_path}:{line_no}: expected 3 tab-separated fields")
            ident, pa, pb = parts
            rows.append((ident,
                         pa if os.path.isabs(pa) else os.path.join(base, pa),
                         pb if os.path.isabs(pb) else os.path.join(base, pb)))
    return rows


def read_splits(splits_path) -> dict[str, str]:
    out = {}
    with open(splits_path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            ident, split = line.split("\t")
            out[ident] = split
    return out
