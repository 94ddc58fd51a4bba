import numpy as np
import pytest

from deformfit import geometry
from deformfit.benchmarks import PRIMITIVES, box_cloud, sphere_cloud
from deformfit.retrieval import (
    EmbeddingBatch,
    EmptyDatabaseError,
    TemplateDatabase,
    encode,
    init_encoder,
    knn_retrieve,
    lifted_loss,
    load_database,
    pairwise_distances,
    save_database,
    shape_descriptor,
    train_encoder,
    triplet_margin_violations,
)


def normalized_primitive(kind, n=512, seed=0):
    pc = PRIMITIVES[kind](n, seed=seed)
    out, _ = geometry.normalize_for_eval(pc)
    return out


class TestShapeDescriptor:
    def test_deterministic(self):
        pc = normalized_primitive("sphere")
        np.testing.assert_array_equal(shape_descriptor(pc), shape_descriptor(pc))

    def test_rotation_invariant_histogram(self):
        pc = normalized_primitive("box", n=2048, seed=1)
        theta = 0.73
        rot = np.array([
            [np.cos(theta), 0, np.sin(theta)],
            [0, 1, 0],
            [-np.sin(theta), 0, np.cos(theta)],
        ])
        d1 = shape_descriptor(pc, bins=64)
        d2 = shape_descriptor(pc @ rot.T, bins=64)
        # same seeded pairs, distances preserved: histograms agree up to
        # rounding at bin edges
        assert np.abs(d1[:64] - d2[:64]).sum() <= 3 * np.sqrt(2.0 / 4096)

    def test_distinct_shapes_far_apart(self):
        sphere = normalized_primitive("sphere", n=1024, seed=2)
        rng = np.random.default_rng(3)
        t = rng.random((1024, 1))
        segment = np.hstack([t * 2 - 1, np.zeros((1024, 2))])
        segment, _ = geometry.normalize_for_eval(segment)
        dist = np.linalg.norm(shape_descriptor(sphere) - shape_descriptor(segment))
        assert dist > 0.1

    def test_degenerate_cloud_rejected(self):
        with pytest.raises(ValueError):
            shape_descriptor(np.zeros((5, 3)))

    def test_dimension(self):
        assert shape_descriptor(normalized_primitive("sphere"), bins=32).shape == (40,)


class TestPairwiseDistances:
    def test_identical_vectors(self):
        batch = EmbeddingBatch(features=np.ones((4, 3)), labels=np.zeros(4))
        assert np.abs(pairwise_distances(batch)).max() == 0.0

    def test_unit_basis(self):
        batch = EmbeddingBatch(features=np.eye(2), labels=np.array([0, 1]))
        d = pairwise_distances(batch)
        assert d[0, 1] == pytest.approx(np.sqrt(2))

    def test_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(4)
        batch = EmbeddingBatch(features=rng.normal(size=(6, 5)), labels=np.arange(6))
        d = pairwise_distances(batch)
        np.testing.assert_allclose(d, d.T, atol=1e-12)
        assert np.abs(np.diag(d)).max() == 0.0


class TestLiftedLoss:
    def test_hinge_clips_easy_batch(self):
        # positive pair at d=0, one negative at d=2 from both endpoints:
        # inner term log(2 e^{-1}) < 0, so the loss is zero
        features = np.array([[0.0], [0.0], [2.0]])
        labels = np.array([0, 0, 1])
        loss, grads = lifted_loss(EmbeddingBatch(features=features, labels=labels), margin=1.0)
        assert loss == 0.0
        assert np.abs(grads).max() == 0.0

    def test_margin_distance_negatives(self):
        # negatives exactly at d=margin: inner term log 2, J = (log 2)^2 / 2
        features = np.array([[0.0], [0.0], [1.0]])
        labels = np.array([0, 0, 1])
        loss, _ = lifted_loss(EmbeddingBatch(features=features, labels=labels), margin=1.0)
        assert loss == pytest.approx(0.5 * np.log(2.0) ** 2)

    def test_no_positive_pair_rejected(self):
        batch = EmbeddingBatch(features=np.eye(3), labels=np.array([0, 1, 2]))
        with pytest.raises(ValueError, match="positive"):
            lifted_loss(batch, margin=1.0)

    def test_no_negatives_rejected(self):
        batch = EmbeddingBatch(features=np.eye(2), labels=np.array([0, 0]))
        with pytest.raises(ValueError, match="negative"):
            lifted_loss(batch, margin=1.0)

    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(5)
        h = 1e-6
        checked = 0
        for _ in range(15):
            features = rng.normal(size=(8, 4))
            labels = rng.integers(0, 3, size=8)
            if len(np.unique(labels)) < 2 or not _has_positive(labels):
                continue
            batch = EmbeddingBatch(features=features, labels=labels)
            loss, grads = lifted_loss(batch, margin=1.0)
            if loss == 0.0:
                continue
            for a in range(8):
                for d in range(4):
                    fp = features.copy()
                    fp[a, d] += h
                    fm = features.copy()
                    fm[a, d] -= h
                    lp, _ = lifted_loss(EmbeddingBatch(features=fp, labels=labels), 1.0)
                    lm, _ = lifted_loss(EmbeddingBatch(features=fm, labels=labels), 1.0)
                    fd = (lp - lm) / (2 * h)
                    assert grads[a, d] == pytest.approx(fd, rel=1e-5, abs=1e-8)
                    checked += 1
        assert checked >= 100

    def test_rotation_invariance(self):
        rng = np.random.default_rng(6)
        features = rng.normal(size=(6, 3))
        labels = np.array([0, 0, 1, 1, 2, 2])
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        l1, _ = lifted_loss(EmbeddingBatch(features=features, labels=labels), 1.0)
        l2, _ = lifted_loss(EmbeddingBatch(features=features @ q, labels=labels), 1.0)
        assert l2 == pytest.approx(l1, rel=1e-9)


def _has_positive(labels):
    _, counts = np.unique(labels, return_counts=True)
    return (counts >= 2).any()


class TestMarginViolations:
    def test_separated_classes_no_violations(self):
        features = np.vstack([np.zeros((3, 2)), np.full((3, 2), 100.0)])
        labels = np.array([0, 0, 0, 1, 1, 1])
        count, _ = triplet_margin_violations(EmbeddingBatch(features=features, labels=labels), 1.0)
        assert count == 0

    def test_identical_points_all_violate(self):
        features = np.zeros((4, 2))
        labels = np.array([0, 0, 1, 1])
        count, triples = triplet_margin_violations(EmbeddingBatch(features=features, labels=labels), 1.0)
        # each i has 1 same-label partner and 2 different-label items
        assert count == 4 * 1 * 2
        assert len(triples) == count

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(7)
        features = rng.normal(size=(9, 3))
        labels = rng.integers(0, 3, size=9)
        batch = EmbeddingBatch(features=features, labels=labels)
        count, _ = triplet_margin_violations(batch, margin=0.5)
        d = pairwise_distances(batch)
        expected = 0
        for i in range(9):
            for j in range(9):
                for k in range(9):
                    if j != i and labels[j] == labels[i] and labels[k] != labels[i]:
                        if not d[i, j] + 0.5 < d[i, k]:
                            expected += 1
        assert count == expected


def primitive_descriptor_set(reps, seed0=0):
    descs, labels = [], []
    for ci, kind in enumerate(["sphere", "cylinder", "box"]):
        for rep in range(reps):
            pc = normalized_primitive(kind, n=512, seed=seed0 + rep * 10 + ci)
            descs.append(shape_descriptor(pc))
            labels.append(ci)
    return np.stack(descs), np.array(labels)


class TestTrainEncoder:
    def test_separated_classes_untouched(self):
        descs = np.vstack([np.zeros((2, 5)), np.full((2, 5), 50.0)])
        labels = np.array([0, 0, 1, 1])
        params = init_encoder(5, dim_out=4, seed=0)
        trained, trace = train_encoder([(descs, labels)], params, margin=1.0, epochs=3)
        if trace[0] == 0.0:
            np.testing.assert_array_equal(trained.weight, params.weight)

    def test_overlapping_classes_improve(self):
        rng = np.random.default_rng(8)
        descs = np.vstack([rng.normal(0.0, 1.0, size=(6, 5)), rng.normal(0.7, 1.0, size=(6, 5))])
        labels = np.repeat([0, 1], 6)
        params = init_encoder(5, dim_out=4, seed=1)
        _, trace = train_encoder([(descs, labels)], params, margin=1.0, epochs=50, lr=0.05)
        assert trace[-1] < trace[0]

    def test_reproducible(self):
        descs, labels = primitive_descriptor_set(3)
        params = init_encoder(descs.shape[1], seed=2)
        t1, _ = train_encoder([(descs, labels)], params, epochs=10)
        t2, _ = train_encoder([(descs, labels)], params, epochs=10)
        np.testing.assert_array_equal(t1.weight, t2.weight)
        np.testing.assert_array_equal(t1.bias, t2.bias)

    def test_reaches_zero_violations(self):
        descs, labels = primitive_descriptor_set(6)
        params = init_encoder(descs.shape[1], dim_out=32, seed=0)
        trained, _ = train_encoder([(descs, labels)], params, margin=1.0, epochs=200)
        batch = EmbeddingBatch(features=encode(trained, descs), labels=labels)
        count, _ = triplet_margin_violations(batch, margin=1.0)
        assert count == 0


class TestKnnRetrieve:
    def build_db(self, tmp_path=None):
        db = TemplateDatabase()
        for ci, kind in enumerate(["sphere", "cylinder", "box"]):
            for rep in range(3):
                pc = normalized_primitive(kind, seed=100 + rep * 7 + ci)
                db.add(f"{kind}-{rep}", shape_descriptor(pc), f"{kind}-{rep}.xyz")
        return db

    def test_exact_match_ranks_first(self):
        db = self.build_db()
        hits = knn_retrieve(db.descriptors[4], db, None, k=3)
        assert hits[0][0] == db.ids[4]
        assert hits[0][1] == pytest.approx(0.0)

    def test_k_equal_db_size_sorted(self):
        db = self.build_db()
        hits = knn_retrieve(db.descriptors[0], db, None, k=len(db))
        dists = [d for _, d in hits]
        assert dists == sorted(dists)
        assert len(hits) == len(db)

    def test_matches_linear_scan_oracle(self):
        db = self.build_db()
        rng = np.random.default_rng(9)
        query = db.descriptors[2] + rng.normal(scale=0.01, size=db.descriptors[2].shape)
        hits = knn_retrieve(query, db, None, k=4)
        dists = [(float(np.linalg.norm(d - query)), i) for d, i in zip(db.descriptors, db.ids)]
        expected = [i for _, i in sorted(dists)][:4]
        assert [i for i, _ in hits] == expected

    def test_empty_db(self):
        with pytest.raises(EmptyDatabaseError):
            knn_retrieve(np.zeros(3), TemplateDatabase(), None, k=1)

    def test_k_too_large(self):
        db = self.build_db()
        with pytest.raises(ValueError):
            knn_retrieve(db.descriptors[0], db, None, k=len(db) + 1)

    def test_persistence_round_trip(self, tmp_path):
        db = self.build_db()
        save_database(db, tmp_path / "db")
        back = load_database(tmp_path / "db")
        assert back.ids == db.ids
        for a, b in zip(back.descriptors, db.descriptors):
            np.testing.assert_allclose(a, b, rtol=1e-8)

    def test_duplicate_id_rejected(self):
        db = TemplateDatabase()
        db.add("a", np.zeros(3), "a.xyz")
        with pytest.raises(ValueError):
            db.add("a", np.ones(3), "b.xyz")
