import numpy as np
import pytest

from deepspectral.affinity import feature_affinity, knn_color_affinity, normalize_features
from deepspectral.matting import (build_fullres_affinity, composite, soft_matte,
                                  _sample_pairs)
from deepspectral.spectral import EigenDecomposition
from deepspectral.tensor_io import FeatureMap, bilinear_resize


def positive_feature_map(rng, channels, h, w, patch=8):
    # Strictly positive vectors keep every Gram entry above the drop threshold.
    data = np.abs(rng.standard_normal((channels, h, w))) + 0.2
    return FeatureMap(data.astype(np.float32), patch)


class TestBuildFullresAffinity:
    def test_sample_rate_one_equals_dense_construction(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        fm = positive_feature_map(rng, 3, 2, 2)
        got = build_fullres_affinity(img, fm, lambda_knn=2.0, knn_k=3, sample_rate=1.0)

        up = normalize_features(FeatureMap(
            bilinear_resize(fm.data.astype(np.float64), 4, 4).astype(np.float32), 8))
        expected = feature_affinity(up).matrix.to_dense() \
            + 2.0 * knn_color_affinity(img, 3).matrix.to_dense()
        assert np.allclose(got.matrix.to_dense(), expected)

    def test_lambda_scaling_doubles_knn_part(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (6, 6, 3), dtype=np.uint8)
        fm = positive_feature_map(rng, 4, 3, 3)
        w0 = build_fullres_affinity(img, fm, 0.0, sample_rate=0.3, seed=5).matrix.to_dense()
        w1 = build_fullres_affinity(img, fm, 1.0, sample_rate=0.3, seed=5).matrix.to_dense()
        w2 = build_fullres_affinity(img, fm, 2.0, sample_rate=0.3, seed=5).matrix.to_dense()
        assert np.allclose(w2 - w1, w1 - w0)
        assert np.abs(w1 - w0).max() > 0

    def test_bit_identical_for_seed(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        fm = positive_feature_map(rng, 4, 8, 8)
        a = build_fullres_affinity(img, fm, 1.5, sample_rate=0.1, seed=3).matrix
        b = build_fullres_affinity(img, fm, 1.5, sample_rate=0.1, seed=3).matrix
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.col_idx, b.col_idx)
        assert np.array_equal(a.row_ptr, b.row_ptr)

    def test_sampled_entries_match_gram_oracle(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        fm = positive_feature_map(rng, 4, 8, 8)
        aff = build_fullres_affinity(img, fm, 0.0, sample_rate=0.2, seed=7)
        up = normalize_features(fm)
        vecs = up.data.astype(np.float64).reshape(4, -1).T
        gram = vecs @ vecs.T
        dense = aff.matrix.to_dense()
        stored = dense != 0
        assert np.allclose(dense[stored], gram[stored])
        assert np.array_equal(stored, stored.T)
        assert stored.diagonal().all()

    def test_sample_count_is_binomial(self):
        n = 16 * 16
        total = n * (n - 1) // 2
        rate = 1 / 16**2
        counts = [
            _sample_pairs(n, rate, np.random.default_rng(seed))[0].size
            for seed in range(100)
        ]
        sd = np.sqrt(total * rate * (1 - rate))
        assert abs(np.mean(counts) - total * rate) <= 3 * sd / np.sqrt(100)

    def test_out_of_range_rate(self):
        img = np.zeros((4, 4, 3), np.uint8)
        fm = positive_feature_map(np.random.default_rng(0), 2, 2, 2)
        with pytest.raises(ValueError):
            build_fullres_affinity(img, fm, 1.0, sample_rate=0.0)

    def test_node_guard(self):
        img = np.zeros((40, 40, 3), np.uint8)
        fm = positive_feature_map(np.random.default_rng(0), 2, 5, 5)
        with pytest.raises(ValueError, match="guard"):
            build_fullres_affinity(img, fm, 1.0, max_nodes=100)


class TestMattePipeline:
    def test_neighbor_count_clamped_to_small_images(self):
        from deepspectral.pipeline import PipelineConfig, matte_image
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)  # 64 px < default k budget
        fm = positive_feature_map(rng, 3, 1, 1)
        cfg = PipelineConfig(lambda_knn=2.0, knn_k=500, sample_rate=1.0)
        alpha = matte_image(img, fm, cfg, index=1)
        assert alpha.shape == (8, 8)
        assert alpha.min() >= 0.0 and alpha.max() <= 1.0


def eig_with_vector(vec, grid):
    vecs = np.stack([np.full(len(vec), 1 / np.sqrt(len(vec))), np.asarray(vec, float)])
    return EigenDecomposition(np.array([0.0, 0.5]), vecs, grid=grid)


class TestSoftMatte:
    def test_affine_rescale(self):
        vec = np.array([-0.2, 0.3, 0.05, 0.0])
        matte = soft_matte(eig_with_vector(vec, (2, 2)), 1)
        assert np.isclose(matte[1, 0], 0.5)  # 0.05 maps to the midpoint
        assert matte.min() == 0.0 and matte.max() == 1.0

    def test_binary_eigenvector(self):
        matte = soft_matte(eig_with_vector([0.5, -0.5, 0.5, -0.5], (2, 2)), 1)
        assert set(np.unique(matte).tolist()) == {0.0, 1.0}

    def test_monotone(self):
        rng = np.random.default_rng(0)
        vec = rng.standard_normal(12)
        matte = soft_matte(eig_with_vector(vec, (3, 4)), 1).ravel()
        assert np.array_equal(np.argsort(matte), np.argsort(vec))

    def test_negation_complements(self):
        vec = np.random.default_rng(1).standard_normal(6)
        a = soft_matte(eig_with_vector(vec, (2, 3)), 1)
        b = soft_matte(eig_with_vector(-vec, (2, 3)), 1)
        assert np.allclose(a, 1.0 - b)

    def test_constant_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            soft_matte(eig_with_vector([0.5, 0.5, 0.5, 0.5], (2, 2)), 1)

    def test_index_zero_rejected(self):
        with pytest.raises(ValueError):
            soft_matte(eig_with_vector([1.0, -1.0, 0, 0], (2, 2)), 0)

    def test_index_beyond_spectrum_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            soft_matte(eig_with_vector([1.0, -1.0, 0, 0], (2, 2)), 5)


class TestComposite:
    def test_alpha_one_is_foreground(self):
        rng = np.random.default_rng(0)
        fg = rng.integers(0, 256, (3, 3, 3), dtype=np.uint8)
        bg = rng.integers(0, 256, (3, 3, 3), dtype=np.uint8)
        assert np.array_equal(composite(fg, np.ones((3, 3)), bg), fg)

    def test_alpha_zero_is_background(self):
        rng = np.random.default_rng(1)
        fg = rng.integers(0, 256, (3, 3, 3), dtype=np.uint8)
        bg = rng.integers(0, 256, (3, 3, 3), dtype=np.uint8)
        assert np.array_equal(composite(fg, np.zeros((3, 3)), bg), bg)

    def test_midpoint_blend(self):
        fg = np.full((2, 2, 3), 200, np.uint8)
        bg = np.full((2, 2, 3), 100, np.uint8)
        assert np.array_equal(composite(fg, np.full((2, 2), 0.5), bg),
                              np.full((2, 2, 3), 150))

    def test_monotone_in_alpha(self):
        fg = np.full((1, 1, 3), 255, np.uint8)
        bg = np.zeros((1, 1, 3), np.uint8)
        outs = [composite(fg, np.full((1, 1), a), bg)[0, 0, 0]
                for a in np.linspace(0, 1, 11)]
        assert all(x <= y for x, y in zip(outs, outs[1:]))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            composite(np.zeros((2, 2, 3), np.uint8), np.zeros((3, 3)),
                      np.zeros((2, 2, 3), np.uint8))
