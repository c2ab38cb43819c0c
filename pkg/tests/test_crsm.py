import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghfr.crsm import (
    ScoreVector,
    SimilarityMap,
    binarize_map,
    combo_order,
    dense_pair_scores,
    image_scores_batch,
    patch_similarity,
    read_score_matrix,
    render_map,
    score_vector,
    similarity_map,
    similarity_map_on_grid,
    write_score_matrix,
)
from ghfr.descriptors import DescriptorKind
from ghfr.imgcore import build_grid
from ghfr.mrfweights import SparseRepresentation


def _sparse(n, m, entries):
    """entries: list (per patch) of dicts {z: w}."""
    idx = [np.array(sorted(e.keys()), dtype=np.int32) for e in entries]
    w = [np.array([e[z] for z in sorted(e.keys())], dtype=np.float32) for e in entries]
    assert len(entries) == n
    return SparseRepresentation(m, idx, w)


class TestPatchSimilarity:
    def test_identical_full_mass(self):
        assert patch_similarity({2: 1.0}, {2: 1.0}) == 1.0

    def test_disjoint_supports(self):
        assert patch_similarity({0: 0.5, 1: 0.5}, {2: 0.5, 3: 0.5}) == 0.0

    def test_partial_overlap_exact(self):
        got = patch_similarity({1: 0.6, 2: 0.4}, {1: 0.3, 3: 0.7})
        assert got == 0.5 * (0.6 + 0.3)

    def test_identical_supports_summing_to_one(self):
        wy = {0: 0.25, 1: 0.75}
        assert patch_similarity(wy, {0: 0.1, 1: 0.9}) == 1.0

    def test_array_pair_input(self):
        got = patch_similarity((np.array([1, 2]), np.array([0.6, 0.4])),
                               (np.array([1, 3]), np.array([0.3, 0.7])))
        assert got == 0.5 * (0.6 + 0.3)

    @settings(max_examples=50)
    @given(st.integers(0, 100_000))
    def test_symmetry_and_bounds(self, seed):
        rng = np.random.default_rng(seed)
        m = 12

        def rand_vec():
            k = int(rng.integers(1, 6))
            idx = sorted(rng.choice(m, size=k, replace=False).tolist())
            w = rng.random(k)
            w /= w.sum()
            return dict(zip(idx, w))

        a, b = rand_vec(), rand_vec()
        s_ab = patch_similarity(a, b)
        assert s_ab == patch_similarity(b, a)
        assert 0.0 <= s_ab <= 1.0
        shared = set(a) & set(b)
        full_mass_shared = (abs(sum(a[z] for z in shared) - 1) < 1e-12
                            and abs(sum(b[z] for z in shared) - 1) < 1e-12)
        assert (s_ab >= 1.0 - 1e-9) == full_mass_shared

    @settings(max_examples=30)
    @given(st.integers(0, 100_000))
    def test_shared_mass_monotonicity(self, seed):
        # moving mass from a non-shared index to a shared one never lowers s
        rng = np.random.default_rng(seed)
        wy = {0: 0.4, 1: 0.3, 2: 0.3}   # 0,1 shared with wx; 2 not
        wx = {0: 0.5, 1: 0.5}
        eps = float(rng.random() * 0.3)
        moved = {0: 0.4 + eps, 1: 0.3, 2: 0.3 - eps}
        assert patch_similarity(moved, wx) >= patch_similarity(wy, wx) - 1e-12

    @settings(max_examples=30)
    @given(st.integers(0, 100_000))
    def test_relabeling_invariance(self, seed):
        rng = np.random.default_rng(seed)
        m = 10
        perm = rng.permutation(m)
        wy = {0: 0.6, 3: 0.4}
        wx = {0: 0.2, 7: 0.8}
        s1 = patch_similarity(wy, wx)
        s2 = patch_similarity({int(perm[z]): w for z, w in wy.items()},
                              {int(perm[z]): w for z, w in wx.items()})
        assert s1 == s2

    def test_dust_below_threshold_not_support(self):
        assert patch_similarity({0: 1e-13, 1: 1.0}, {0: 1.0}) == 0.0


class TestSimilarityMap:
    def test_self_comparison_all_ones(self):
        sp = _sparse(4, 6, [{0: 1.0}, {1: 0.5, 2: 0.5}, {3: 1.0}, {4: 0.25, 5: 0.75}])
        m = similarity_map(sp, sp)
        assert np.all(m.scores == 1.0)
        assert m.image_score == 1.0

    def test_disjoint_zero(self):
        a = _sparse(2, 6, [{0: 1.0}, {1: 1.0}])
        b = _sparse(2, 6, [{2: 1.0}, {3: 1.0}])
        assert similarity_map(a, b).image_score == 0.0

    def test_mean_aggregation(self):
        a = _sparse(2, 4, [{0: 1.0}, {1: 0.5, 2: 0.5}])
        b = _sparse(2, 4, [{0: 1.0}, {1: 0.5, 3: 0.5}])
        m = similarity_map(a, b)
        np.testing.assert_allclose(m.scores, [1.0, 0.5], atol=1e-12)
        assert m.image_score == 0.75

    def test_mismatched_m(self):
        a = _sparse(1, 4, [{0: 1.0}])
        b = _sparse(1, 5, [{0: 1.0}])
        with pytest.raises(ValueError):
            similarity_map(a, b)

    def test_matches_patch_similarity(self):
        rng = np.random.default_rng(1)
        entries_a, entries_b = [], []
        for _ in range(6):
            for store in (entries_a, entries_b):
                k = int(rng.integers(1, 4))
                idx = sorted(rng.choice(8, size=k, replace=False).tolist())
                w = rng.random(k)
                w /= w.sum()
                store.append(dict(zip(idx, map(float, w))))
        a = _sparse(6, 8, entries_a)
        b = _sparse(6, 8, entries_b)
        m = similarity_map(a, b)
        for i in range(6):
            ai = dict(zip(a.indices[i].tolist(), a.weights[i].astype(np.float64)))
            bi = dict(zip(b.indices[i].tolist(), b.weights[i].astype(np.float64)))
            assert abs(m.scores[i] - patch_similarity(ai, bi)) <= 1e-12

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        y = rng.random((5, 7)) * (rng.random((5, 7)) > 0.5)
        xs = rng.random((3, 5, 7)) * (rng.random((3, 5, 7)) > 0.5)
        got = image_scores_batch(y, xs)
        for g in range(3):
            assert abs(got[g] - dense_pair_scores(y, xs[g]).mean()) <= 1e-12


class TestBinarizeAndRender:
    def test_all_bright(self):
        m = SimilarityMap(np.ones(6), 3, 2)
        assert binarize_map(m, 0.5).all()

    def test_threshold_one_all_dark(self):
        m = SimilarityMap(np.ones(6), 3, 2)
        assert not binarize_map(m, 1.0).any()

    def test_mixed(self):
        m = SimilarityMap(np.array([0.4, 0.6]), 2, 1)
        assert binarize_map(m, 0.5).tolist() == [[False, True]]

    def test_render_shapes(self):
        grid = build_grid(20, 20, 10, 5)
        m = SimilarityMap(np.linspace(0, 1, grid.n_patches), grid.cols, grid.rows)
        img = render_map(m, grid)
        assert (img.width, img.height) == (20, 20)
        img_bin = render_map(m, grid, binary_threshold=0.5)
        assert set(np.unique(img_bin.pixels)) <= {0.0, 1.0}

    def test_bad_threshold(self):
        m = SimilarityMap(np.ones(4), 2, 2)
        with pytest.raises(ValueError):
            binarize_map(m, 1.5)


class TestScoreVector:
    def _reps(self, combos, n=3, m=5, seed=0):
        # dyadic weights sum to exactly 1.0 in binary floating point
        rng = np.random.default_rng(seed)
        out = {}
        for combo in combos:
            entries = []
            for _ in range(n):
                k = int(rng.integers(1, 4))
                idx = sorted(rng.choice(m, size=k, replace=False).tolist())
                parts = rng.multinomial(16, [1.0 / k] * k)
                entry = {z: p / 16.0 for z, p in zip(idx, parts) if p > 0}
                entries.append(entry)
            out[combo] = _sparse(n, m, entries)
        return out

    def test_full_combo_grid_has_18(self):
        combos = combo_order(list(DescriptorKind), [15, 20, 25, 30, 35, 40])
        assert len(combos) == 18
        probe = self._reps(combos, seed=1)
        gallery = self._reps(combos, seed=2)
        sv = score_vector(probe, gallery, combos)
        assert sv.values.shape == (18,)
        assert np.all((sv.values >= 0) & (sv.values <= 1))

    def test_single_combo(self):
        combos = combo_order([DescriptorKind.RAW], [3])
        sv = score_vector(self._reps(combos, seed=3), self._reps(combos, seed=4), combos)
        assert sv.values.shape == (1,)

    def test_self_pair_all_ones(self):
        combos = combo_order([DescriptorKind.HOG], [2, 3])
        reps = self._reps(combos, seed=5)
        sv = score_vector(reps, reps, combos)
        assert np.all(sv.values == 1.0)

    def test_missing_combo(self):
        combos = combo_order([DescriptorKind.HOG], [2])
        reps = self._reps(combos, seed=6)
        with pytest.raises(ValueError):
            score_vector(reps, {}, combos)

    def test_kind_major_order(self):
        combos = combo_order([DescriptorKind.HOG, DescriptorKind.RAW], [20, 15])
        assert combos == ((DescriptorKind.HOG, 15), (DescriptorKind.HOG, 20),
                          (DescriptorKind.RAW, 15), (DescriptorKind.RAW, 20))


def test_score_matrix_round_trip(tmp_path):
    combos = combo_order([DescriptorKind.RAW], [2, 3])
    rng = np.random.default_rng(8)
    scores = rng.random((2, 3, 2))
    p = tmp_path / "scores.tsv"
    write_score_matrix(p, ["p0", "p1"], ["g0", "g1", "g2"], scores, combos)
    pids, gids, back, names = read_score_matrix(p)
    assert pids == ["p0", "p1"] and gids == ["g0", "g1", "g2"]
    assert names == ("raw:K2", "raw:K3")
    assert np.array_equal(back, scores)
