"""Shape template retrieval: rotation-robust descriptors, a linear embedding
trained with the batch-smoothed (lifted) triplet loss, and exact K-NN lookup."""

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import as_points

D2_PAIRS = 4096
D2_BINS = 64
D2_RANGE = (0.0, 2.0)  # normalized clouds fit the unit hemisphere


def shape_descriptor(pc, bins=D2_BINS, pairs=D2_PAIRS, seed=0):
    """Global descriptor of a normalized cloud: a D2 histogram of seeded random
    pairwise distances plus 8 second-order moment statistics."""
    pts = as_points(pc)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if len(pts) < 2 or not (pts.max(axis=0) > pts.min(axis=0)).any():
        raise ValueError("degenerate cloud: descriptor undefined")
    rng = np.random.default_rng(seed)
    ii = rng.integers(0, len(pts), size=pairs)
    jj = rng.integers(0, len(pts), size=pairs)
    dists = np.linalg.norm(pts[ii] - pts[jj], axis=1)
    hist, _ = np.histogram(dists, bins=bins, range=D2_RANGE)
    hist = hist / pairs

    centered = pts - pts.mean(axis=0)
    second = np.array([
        np.mean(centered[:, 0] ** 2),
        np.mean(centered[:, 1] ** 2),
        np.mean(centered[:, 2] ** 2),
        np.mean(centered[:, 0] * centered[:, 1]),
        np.mean(centered[:, 0] * centered[:, 2]),
        np.mean(centered[:, 1] * centered[:, 2]),
        np.mean(np.square(pts).sum(axis=1)),   # squared radius about origin
        np.mean(pts[:, 1] ** 2),               # squared height above ground plane
    ])
    return np.concatenate([hist, second])


@dataclass(frozen=True)
class EmbeddingBatch:
    features: np.ndarray  # (B, D)
    labels: np.ndarray    # (B,)

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        lab = np.asarray(self.labels)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", lab)
        if f.ndim != 2 or len(f) < 2:
            raise ValueError("batch needs at least two feature vectors")
        if len(lab) != len(f):
            raise ValueError("labels must match features")


def pairwise_distances(batch: EmbeddingBatch):
    """Symmetric Euclidean distance matrix with an exactly zero diagonal."""
    d = cdist(batch.features, batch.features)
    np.fill_diagonal(d, 0.0)
    return d


def lifted_loss(batch: EmbeddingBatch, margin):
    """Batch-smoothed triplet loss and its gradients on the feature vectors.

    For each same-label pair (i, j), all different-label items of both
    endpoints enter a log-sum-exp of (margin - distance); the hinged sum with
    d_ij is squared and averaged with a 1/2 factor over positive pairs.
    """
    f = batch.features
    labels = batch.labels
    b = len(f)
    dist = pairwise_distances(batch)

    pos_pairs = [(i, j) for i in range(b) for j in range(i + 1, b) if labels[i] == labels[j]]
    if not pos_pairs:
        raise ValueError("batch contains no positive pair")

    loss = 0.0
    ddist = np.zeros((b, b))  # d loss / d dist, one orientation per contribution
    for i, j in pos_pairs:
        neg_i = np.flatnonzero(labels != labels[i])
        neg_j = np.flatnonzero(labels != labels[j])
        if len(neg_i) == 0 and len(neg_j) == 0:
            raise ValueError(f"positive pair ({i}, {j}) has no negatives")
        exp_i = np.exp(margin - dist[i, neg_i])
        exp_j = np.exp(margin - dist[j, neg_j])
        denom = exp_i.sum() + exp_j.sum()
        inner = np.log(denom) + dist[i, j]
        if inner <= 0:
            continue
        loss += inner ** 2
        # d/d dist of inner**2 is 2*inner*d(inner); 1/(2|P|) applied below
        ddist[i, j] += 2.0 * inner
        ddist[i, neg_i] += 2.0 * inner * (-exp_i / denom)
        ddist[j, neg_j] += 2.0 * inner * (-exp_j / denom)

    scale = 1.0 / (2.0 * len(pos_pairs))
    loss *= scale
    ddist *= scale

    grads = np.zeros_like(f)
    sym = ddist + ddist.T
    for a in range(b):
        for c in range(a + 1, b):
            if sym[a, c] == 0.0 or dist[a, c] == 0.0:
                continue
            direction = (f[a] - f[c]) / dist[a, c]
            grads[a] += sym[a, c] * direction
            grads[c] -= sym[a, c] * direction
    return float(loss), grads


def triplet_margin_violations(batch: EmbeddingBatch, margin):
    """Count ordered triples (i, j, k) with labels(i)=labels(j)!=labels(k) that
    fail d_ij + margin < d_ik; returns (count, list of triples)."""
    dist = pairwise_distances(batch)
    labels = batch.labels
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    violations = []
    for i in range(len(labels)):
        pos = np.flatnonzero(same[i])
        neg = np.flatnonzero(labels != labels[i])
        if len(pos) == 0 or len(neg) == 0:
            continue
        bad = dist[i, pos][:, None] + margin >= dist[i, neg][None, :]
        for a, c in zip(*np.nonzero(bad)):
            violations.append((i, int(pos[a]), int(neg[c])))
    return len(violations), violations


@dataclass(frozen=True)
class EncoderParams:
    weight: np.ndarray  # (D, D_in)
    bias: np.ndarray    # (D,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        bvec = np.asarray(self.bias, dtype=float)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", bvec)
        if w.ndim != 2 or w.shape[0] < 2:
            raise ValueError("weight must be (D, D_in) with D >= 2")
        if bvec.shape != (w.shape[0],):
            raise ValueError("bias must match output dimension")
        if not (np.isfinite(w).all() and np.isfinite(bvec).all()):
            raise ValueError("encoder parameters must be finite")


def init_encoder(dim_in, dim_out=32, seed=0):
    rng = np.random.default_rng(seed)
    weight = rng.normal(scale=1.0 / np.sqrt(dim_in), size=(dim_out, dim_in))
    return EncoderParams(weight=weight, bias=np.zeros(dim_out))


def encode(params: EncoderParams, descriptors):
    d = np.atleast_2d(np.asarray(descriptors, dtype=float))
    return d @ params.weight.T + params.bias


def train_encoder(batches, params: EncoderParams, margin=1.0, epochs=200, lr=1.0, seed=0):
    """Gradient descent on the lifted loss through the linear encoder.

    `batches` is a sequence of (descriptors, labels). Returns the updated
    params and the per-epoch mean loss trace. Deterministic: batches are
    visited in order; seed is kept for interface symmetry with samplers.
    """
    del seed  # deterministic pass order; no randomness consumed
    weight = params.weight.copy()
    bias = params.bias.copy()
    trace = []
    for _ in range(epochs):
        epoch_losses = []
        for descriptors, labels in batches:
            descriptors = np.asarray(descriptors, dtype=float)
            feats = descriptors @ weight.T + bias
            loss, grads = lifted_loss(EmbeddingBatch(features=feats, labels=np.asarray(labels)), margin)
            epoch_losses.append(loss)
            if loss > 0:
                weight -= lr * grads.T @ descriptors
                bias -= lr * grads.sum(axis=0)
        trace.append(float(np.mean(epoch_losses)))
    return EncoderParams(weight=weight, bias=bias), trace


@dataclass
class TemplateDatabase:
    """Shape entries: (id, descriptor, cloud file path)."""

    ids: list = field(default_factory=list)
    descriptors: list = field(default_factory=list)
    cloud_paths: list = field(default_factory=list)

    def add(self, shape_id, descriptor, cloud_path):
        if shape_id in self.ids:
            raise ValueError(f"duplicate shape id: {shape_id}")
        self.ids.append(shape_id)
        self.descriptors.append(np.asarray(descriptor, dtype=float))
        self.cloud_paths.append(cloud_path)

    def __len__(self):
        return len(self.ids)

    def cloud_path(self, shape_id):
        return self.cloud_paths[self.ids.index(shape_id)]


class EmptyDatabaseError(ValueError):
    pass


def knn_retrieve(query_descriptor, db: TemplateDatabase, params, k):
    """Exact K-nearest template ids by embedding distance, ties by shape id.

    With params=None the raw descriptors are compared directly."""
    if len(db) == 0:
        raise EmptyDatabaseError("template database is empty")
    if not 1 <= k <= len(db):
        raise ValueError(f"k must be in [1, {len(db)}]")
    descs = np.stack(db.descriptors)
    q = np.asarray(query_descriptor, dtype=float)
    if params is None:
        emb, qe = descs, q
    else:
        emb, qe = encode(params, descs), encode(params, q)[0]
    dists = np.linalg.norm(emb - qe, axis=1)
    order = sorted(range(len(db)), key=lambda i: (dists[i], db.ids[i]))
    return [(db.ids[i], float(dists[i])) for i in order[:k]]


def save_database(db: TemplateDatabase, directory):
    """Persist as index.txt ('id descriptor-file cloud-file') plus per-shape
    whitespace-float descriptor files."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "index.txt"), "w") as fh:
        for shape_id, desc, cloud in zip(db.ids, db.descriptors, db.cloud_paths):
            desc_name = f"{shape_id}.desc"
            with open(os.path.join(directory, desc_name), "w") as dfh:
                dfh.write(" ".join(format(v, ".9g") for v in desc) + "\n")
            fh.write(f"{shape_id} {desc_name} {cloud}\n")


def load_database(directory):
    index = os.path.join(directory, "index.txt")
    if not os.path.exists(index):
        raise FileNotFoundError(f"no such file: {index}")
    db = TemplateDatabase()
    with open(index) as fh:
        for raw in fh:
            if not raw.strip():
                continue
            shape_id, desc_name, cloud = raw.split(maxsplit=2)
            with open(os.path.join(directory, desc_name)) as dfh:
                desc = np.array([float(t) for t in dfh.read().split()])
            db.add(shape_id, desc, cloud.strip())
    return db
