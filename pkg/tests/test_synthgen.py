import dataclasses
import filecmp

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from ghfr.imgcore import GrayImage, load_image
from ghfr.synthgen import (
    SynthConfig,
    generate_dataset,
    generate_identity,
    generate_pair,
    read_manifest,
    read_splits,
    to_modality_b,
    write_pgm,
)

CFG = SynthConfig(seed=7, identities=100)


class TestGenerateIdentity:
    def test_deterministic(self):
        a = generate_identity(CFG, 3)
        b = generate_identity(CFG, 3)
        assert np.array_equal(a.pixels, b.pixels)

    def test_ids_differ(self):
        # every pair among a sample of identities differs in >= 1% of pixels
        imgs = [generate_identity(CFG, i).pixels for i in range(0, 100, 10)]
        for i in range(len(imgs)):
            for j in range(i + 1, len(imgs)):
                frac = np.mean(np.abs(imgs[i] - imgs[j]) > 1e-6)
                assert frac >= 0.01

    def test_size_matches_config(self):
        img = generate_identity(CFG, 0)
        assert (img.width, img.height) == (CFG.width, CFG.height)
        small = dataclasses.replace(CFG, width=50, height=60)
        img = generate_identity(small, 0)
        assert (img.width, img.height) == (50, 60)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            generate_identity(CFG, 100)


class TestToModalityB:
    def test_constant_maps_to_constant(self):
        img = GrayImage(np.full((20, 30), 0.5))
        cfg = dataclasses.replace(CFG, invert=False)
        out = to_modality_b(img, cfg)
        assert np.all(out.pixels == 0.0)
        out_inv = to_modality_b(img, CFG)
        assert np.all(out_inv.pixels == 1.0)

    def test_not_idempotent(self):
        img = generate_identity(CFG, 1)
        once = to_modality_b(img, CFG)
        twice = to_modality_b(once, CFG)
        assert not np.allclose(once.pixels, twice.pixels, atol=1e-3)

    def test_edge_rich_correlates_with_gradient_magnitude(self):
        # frozen fixture: smoothed random rectangles; expected correlation
        # computed with the numpy gradient oracle below
        rng = np.random.default_rng(0)
        img = np.zeros((125, 100))
        for _ in range(40):
            y0, x0 = rng.integers(0, 100), rng.integers(0, 80)
            hh, ww = rng.integers(8, 30), rng.integers(8, 30)
            img[y0:y0 + hh, x0:x0 + ww] = rng.random()
        g = GrayImage(np.clip(gaussian_filter(img, 1.0), 0, 1))
        cfg = dataclasses.replace(CFG, invert=False)
        b = to_modality_b(g, cfg)
        gy, gx = np.gradient(g.pixels)
        gm = np.hypot(gx, gy)
        corr = np.corrcoef(b.pixels.ravel(), gm.ravel())[0, 1]
        assert corr > 0.5

    def test_deterministic(self):
        img = generate_identity(CFG, 2)
        assert np.array_equal(to_modality_b(img, CFG).pixels,
                              to_modality_b(img, CFG).pixels)


def test_modality_gap():
    gaps = []
    for ident in range(10):
        a, b = generate_pair(CFG, ident)
        gaps.append(np.mean(np.abs(a.pixels - b.pixels)))
    assert np.mean(gaps) > 0.1


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(dog_sigma1=2.0, dog_sigma2=1.0)
    with pytest.raises(ValueError):
        SynthConfig(max_shift=-1)
    with pytest.raises(ValueError):
        SynthConfig(identities=0)


class TestGenerateDataset:
    def test_splits_disjoint_exhaustive(self, tmp_path):
        cfg = dataclasses.replace(CFG, identities=20, width=40, height=50)
        manifest, splits = generate_dataset(cfg, tmp_path / "d", (6, 6, 8))
        assign = read_splits(splits)
        assert len(assign) == 20
        counts = {}
        for v in assign.values():
            counts[v] = counts.get(v, 0) + 1
        assert counts == {"representation": 6, "train": 6, "test": 8}

    def test_manifest_row_count_and_loadable(self, tmp_path):
        cfg = dataclasses.replace(CFG, identities=5, width=40, height=50)
        manifest, _ = generate_dataset(cfg, tmp_path / "d", (2, 1, 2))
        rows = read_manifest(manifest)
        assert len(rows) == 5
        img = load_image(rows[0][1])
        assert (img.width, img.height) == (40, 50)

    def test_byte_identical_reruns(self, tmp_path):
        cfg = dataclasses.replace(CFG, identities=4, width=40, height=50)
        generate_dataset(cfg, tmp_path / "a", (2, 1, 1))
        generate_dataset(cfg, tmp_path / "b", (2, 1, 1))
        cmp = filecmp.dircmp(tmp_path / "a" / "images", tmp_path / "b" / "images")
        assert not cmp.diff_files
        assert (tmp_path / "a" / "manifest.tsv").read_bytes() == \
               (tmp_path / "b" / "manifest.tsv").read_bytes()

    def test_rejects_oversized_splits(self, tmp_path):
        cfg = dataclasses.replace(CFG, identities=4)
        with pytest.raises(ValueError):
            generate_dataset(cfg, tmp_path / "d", (2, 2, 2))


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    px = np.round(rng.random((12, 17)) * 255) / 255.0
    p = tmp_path / "x.pgm"
    write_pgm(p, GrayImage(px))
    back = load_image(p)
    assert np.array_equal(back.pixels, px)
