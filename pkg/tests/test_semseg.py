import json

import numpy as np
import pytest

from deepspectral.semseg import (SegmentDescriptor, SegmentMap, apply_semantic_labels,
                                 cluster_dataset, evaluate_semseg, hungarian, kmeans,
                                 per_image_segments, segment_descriptor)
from deepspectral.spectral import (EigenDecomposition, build_normalized_laplacian,
                                   dense_eigen_oracle)
from deepspectral.tensor_io import FeatureMap, write_feature_map

from _oracles import brute_force_assignment, brute_force_two_partition_inertia
from _synth import planted_affinity_from_labels, planted_two_block_affinity


class TestKmeans:
    def test_separated_pairs(self):
        pts = np.array([[0.0, 0.0], [0.2, 0.0], [10.0, 10.0], [10.2, 10.0]])
        model = kmeans(pts, 2, seed=0)
        got = sorted(model.centroids.tolist())
        assert np.allclose(got, [[0.1, 0.0], [10.1, 10.0]])

    def test_k_equals_n(self):
        pts = np.random.default_rng(0).standard_normal((5, 3))
        model = kmeans(pts, 5, seed=1)
        assert model.inertia == 0.0

    def test_matches_brute_force_on_8_points(self):
        for seed in range(20):
            pts = np.random.default_rng(seed).uniform(-1, 1, (8, 2))
            model = kmeans(pts, 2, seed=seed)
            assert np.isclose(model.inertia, brute_force_two_partition_inertia(pts),
                              atol=1e-9)

    def test_k_larger_than_points(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 2)), 4, seed=0)

    def test_deterministic(self):
        pts = np.random.default_rng(2).standard_normal((40, 4))
        a = kmeans(pts, 5, seed=7)
        b = kmeans(pts, 5, seed=7)
        assert np.array_equal(a.centroids, b.centroids)
        assert np.array_equal(a.labels, b.labels)

    def test_inertia_nonincreasing_in_iterations(self):
        pts = np.random.default_rng(3).standard_normal((60, 3))
        inertias = [kmeans(pts, 4, seed=5, n_restarts=1, max_iter=i).inertia
                    for i in range(1, 8)]
        assert all(a >= b - 1e-12 for a, b in zip(inertias, inertias[1:]))

    def test_no_empty_clusters(self):
        # Duplicated points force empty-cluster reseeding.
        pts = np.array([[0.0, 0.0]] * 6 + [[5.0, 5.0]] * 2)
        model = kmeans(pts, 3, seed=0)
        assert model.labels.max() <= 2


def planted_eig(rows, cols, rect, seed=0):
    aff, mask, _ = planted_two_block_affinity(rows, cols, rect,
                                              np.random.default_rng(seed))
    eig = dense_eigen_oracle(build_normalized_laplacian(aff))
    eig.grid = (rows, cols)
    return eig, mask


class TestPerImageSegments:
    def test_planted_three_regions_recovered(self):
        # Three planted regions leave two indicator eigenvectors; embedding
        # with exactly those separates the regions at k=3.
        truth = np.zeros((6, 6), dtype=np.int64)
        truth[1:3, 1:4] = 1
        truth[4:6, 4:6] = 2
        aff = planted_affinity_from_labels(truth, np.random.default_rng(0))
        eig = dense_eigen_oracle(build_normalized_laplacian(aff))
        eig.grid = (6, 6)
        segmap = per_image_segments(eig, n_eig=2, k=3, seed=0)
        for v in (0, 1, 2):
            region = segmap.labels[truth == v]
            assert len(set(region.tolist())) == 1
        assert segmap.background_label == segmap.labels[truth == 0][0]

    def test_planted_two_blocks_recovered(self):
        eig, mask = planted_eig(6, 6, (1, 1, 3, 4))
        segmap = per_image_segments(eig, n_eig=1, k=2, seed=0)
        inside = segmap.labels[mask]
        outside = segmap.labels[~mask]
        assert len(set(inside.tolist())) == 1
        assert len(set(outside.tolist())) == 1
        assert inside[0] != outside[0]
        assert segmap.background_label == outside[0]  # larger region

    def test_k1_single_background_segment(self):
        eig, _ = planted_eig(4, 4, (0, 0, 2, 2))
        segmap = per_image_segments(eig, n_eig=2, k=1, seed=0)
        assert np.array_equal(segmap.labels, np.zeros((4, 4), dtype=np.int32))
        assert segmap.background_label == 0

    def test_k_exceeding_cells_rejected(self):
        eig, _ = planted_eig(2, 2, (0, 0, 1, 1))
        with pytest.raises(ValueError):
            per_image_segments(eig, n_eig=2, k=15, seed=0)

    def test_labels_contiguous_and_deterministic(self):
        eig, _ = planted_eig(6, 6, (1, 1, 3, 4), seed=3)
        a = per_image_segments(eig, n_eig=4, k=4, seed=9)
        b = per_image_segments(eig, n_eig=4, k=4, seed=9)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(np.unique(a.labels), np.arange(a.labels.max() + 1))
        # first appearances are in increasing label order
        firsts = [int(np.argmax(a.labels.ravel() == v)) for v in range(a.labels.max() + 1)]
        assert firsts == sorted(firsts)

    def test_degenerate_spectrum_rejected(self):
        eig = EigenDecomposition(np.zeros(3), np.eye(3), grid=(1, 3))
        with pytest.raises(ValueError):
            per_image_segments(eig, k=2)


class TestSegmentDescriptor:
    def test_single_cell_segment(self):
        labels = np.array([[1, 0], [0, 0]], dtype=np.int32)
        segmap = SegmentMap(labels, background_label=0)
        data = np.zeros((3, 2, 2), np.float32)
        data[:, 0, 0] = [3.0, 0.0, 4.0]
        data[:, labels == 0] = np.array([[1.0], [0.0], [0.0]])
        descs = segment_descriptor(segmap, FeatureMap(data, 8), image_id="x")
        assert len(descs) == 1
        assert descs[0].segment_label == 1
        assert descs[0].pixel_count == 1
        assert np.allclose(descs[0].vector, [0.6, 0.0, 0.8])

    def test_identical_vectors_give_shared_vector(self):
        labels = np.array([[1, 1], [0, 0]], dtype=np.int32)
        data = np.tile(np.array([0.0, 1.0], np.float32)[:, None, None], (1, 2, 2))
        descs = segment_descriptor(SegmentMap(labels, 0), FeatureMap(data, 8))
        assert np.allclose(descs[0].vector, [0.0, 1.0])

    def test_mean_matches_direct_summation(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 3, (5, 6)).astype(np.int32)
        labels[0, 0] = 0
        data = rng.standard_normal((4, 5, 6)).astype(np.float32)
        segmap = SegmentMap(labels, background_label=0)
        descs = segment_descriptor(segmap, FeatureMap(data, 8))
        unit = data.astype(np.float64)
        unit /= np.linalg.norm(unit, axis=0, keepdims=True)
        for d in descs:
            cells = np.argwhere(labels == d.segment_label)
            manual = np.mean([unit[:, y, x] for y, x in cells], axis=0)
            assert np.allclose(d.vector, manual)
            assert d.pixel_count == len(cells)

    def test_external_mode_roundtrip(self, tmp_path):
        vectors = np.random.default_rng(1).standard_normal((2, 5)).astype(np.float32)
        dsft = tmp_path / "img.desc.dsft"
        write_feature_map(FeatureMap(vectors[:, :, None], 16), dsft)
        index = tmp_path / "img.desc.json"
        index.write_text(json.dumps([
            {"image_id": "img", "segment_label": 1, "row": 0},
            {"image_id": "img", "segment_label": 2, "row": 1},
        ]))
        labels = np.array([[0, 1], [2, 2]], dtype=np.int32)
        descs = segment_descriptor(SegmentMap(labels, 0), mode="external",
                                   image_id="img", sidecar=(dsft, index))
        assert len(descs) == 2
        assert np.allclose(descs[0].vector, vectors[0])
        assert np.allclose(descs[1].vector, vectors[1])

    def test_external_mode_missing_sidecar(self):
        labels = np.array([[0, 1]], dtype=np.int32)
        with pytest.raises(ValueError):
            segment_descriptor(SegmentMap(labels, 0), mode="external")


def make_descs(vectors):
    return [SegmentDescriptor("img", i + 1, np.asarray(v, float), 1)
            for i, v in enumerate(vectors)]


class TestClusterDataset:
    def test_tight_blobs_partitioned(self):
        rng = np.random.default_rng(0)
        blobs = [rng.normal(c * 10, 0.01, (5, 3)) for c in range(3)]
        descs = make_descs(np.vstack(blobs))
        ids = cluster_dataset(descs, k=3, seed=0)
        groups = [set(ids[i * 5:(i + 1) * 5].tolist()) for i in range(3)]
        assert all(len(g) == 1 for g in groups)
        assert len(set().union(*groups)) == 3
        assert ids.min() >= 1

    def test_k1_single_class(self):
        descs = make_descs(np.random.default_rng(1).standard_normal((4, 2)))
        assert np.array_equal(cluster_dataset(descs, k=1, seed=0), [1, 1, 1, 1])

    def test_matches_brute_force_inertia(self):
        for seed in range(10):
            pts = np.random.default_rng(seed).uniform(-1, 1, (8, 2))
            ids = cluster_dataset(make_descs(pts), k=2, seed=seed)
            inertia = 0.0
            for c in np.unique(ids):
                members = pts[ids == c]
                inertia += ((members - members.mean(axis=0)) ** 2).sum()
            assert np.isclose(inertia, brute_force_two_partition_inertia(pts), atol=1e-9)

    def test_too_few_descriptors(self):
        with pytest.raises(ValueError):
            cluster_dataset(make_descs(np.zeros((2, 2))), k=3, seed=0)


class TestApplySemanticLabels:
    def test_background_zero_and_merge(self):
        labels = np.array([[0, 1, 2], [0, 1, 2]], dtype=np.int32)
        segmap = SegmentMap(labels, background_label=0)
        out = apply_semantic_labels(segmap, {1: 4, 2: 4})
        assert np.array_equal(out, [[0, 4, 4], [0, 4, 4]])


class TestHungarian:
    def test_identity_favoring(self):
        assert hungarian(np.array([[0.0, 1.0], [1.0, 0.0]])) == [(0, 0), (1, 1)]

    def test_tie_broken_lexicographically(self):
        assert hungarian(np.array([[1.0, 2.0], [2.0, 1.0]])) == [(0, 0), (1, 1)]
        # fully symmetric costs: everything optimal, smallest assignment wins
        assert hungarian(np.ones((3, 3))) == [(0, 0), (1, 1), (2, 2)]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for trial in range(40):
            k = int(rng.integers(2, 8))
            cost = rng.uniform(-5, 5, (k, k))
            got = hungarian(cost)
            want, want_total = brute_force_assignment(cost)
            got_total = sum(cost[r, c] for r, c in got)
            assert np.isclose(got_total, want_total, atol=1e-9)
            assert got == want

    def test_never_worse_than_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            cost = rng.uniform(0, 10, (5, 5))
            total = sum(cost[r, c] for r, c in hungarian(cost))
            assert total <= np.trace(cost) + 1e-9

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            hungarian(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            hungarian(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestEvaluateSemseg:
    def test_label_permutation_recovered(self):
        rng = np.random.default_rng(0)
        gts = [rng.integers(0, 4, (8, 8)) for _ in range(3)]
        perm = np.array([0, 3, 1, 2])  # background stays put
        preds = [perm[g] for g in gts]
        assert evaluate_semseg(preds, gts, num_classes=4) == 1.0

    def test_all_background_prediction(self):
        gts = [np.array([[0, 1], [2, 0]])]
        preds = [np.zeros((2, 2), dtype=np.int64)]
        score = evaluate_semseg(preds, gts, num_classes=3)
        # background IoU is 2/4; both object classes score 0
        assert np.isclose(score, (0.5 + 0.0 + 0.0) / 3)

    def test_invariant_under_prediction_relabeling(self):
        rng = np.random.default_rng(7)
        gts = [rng.integers(0, 4, (10, 10)) for _ in range(3)]
        preds = [rng.integers(0, 4, (10, 10)) for _ in range(3)]
        base = evaluate_semseg(preds, gts, num_classes=4)
        for _ in range(5):
            perm = np.concatenate([[0], 1 + rng.permutation(3)])
            relabeled = [perm[p] for p in preds]
            assert np.isclose(evaluate_semseg(relabeled, gts, num_classes=4), base)

    def test_overclustering_trend(self):
        rng = np.random.default_rng(2)
        gts = [rng.integers(0, 4, (12, 12)) for _ in range(4)]
        exact = [g.copy() for g in gts]
        split = []
        for g in gts:
            s = g.copy()
            odd = (np.indices(g.shape).sum(axis=0) % 2) == 1
            for c in (1, 2, 3):
                s[(g == c) & odd] = c + 3  # split each class into two ids
            split.append(s)
        base = evaluate_semseg(exact, gts, num_classes=4)
        over = evaluate_semseg(split, gts, num_classes=4, num_pred_ids=7)
        assert over >= base - 0.02

    def test_mismatched_lists(self):
        with pytest.raises(ValueError):
            evaluate_semseg([np.zeros((2, 2))], [], num_classes=2)
