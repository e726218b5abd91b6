"""Concept discovery: k-means over trained product embeddings.

Every cluster centroid is a concept vector; the assignment of a product to
its nearest centroid is what downstream basket generation uses to eliminate
substitutes.  The implementation is deliberately self-contained so that
seeding, tie-breaking and empty-cluster repair stay fully reproducible.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ValidationError
from .validation import check_int, check_matrix


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe


def _squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # direct differences, not the expanded |x|^2 - 2xc + |c|^2 form, so that
    # equidistant points tie exactly and argmin's first-hit rule is reliable
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


class ConceptKMeans(BaseEstimator):
    """Plain Lloyd k-means with kmeans++ seeding, deterministic under seed.

    Ties in assignment go to the lowest cluster id.  Clusters that come up
    empty are reseeded to the point farthest from its current centroid,
    which keeps the inertia sequence nonincreasing.
    """

    def __init__(self, n_clusters: int = 5, seed: int = 0, max_iters: int = 100,
                 normalize: bool = False):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iters = max_iters
        self.normalize = normalize

    def _seed_centroids(self, x: np.ndarray, rng) -> np.ndarray:
        n = x.shape[0]
        k = self.n_clusters
        centroids = np.empty((k, x.shape[1]), dtype=np.float64)
        centroids[0] = x[int(rng.integers(0, n))]
        for c in range(1, k):
            d2 = _squared_distances(x, centroids[:c]).min(axis=1)
            total = d2.sum()
            if total > 0.0:
                probs = d2 / total
                centroids[c] = x[int(rng.choice(n, p=probs))]
            else:
                centroids[c] = x[int(rng.integers(0, n))]
        return centroids

    def fit(self, X, y=None):
        x = check_matrix(X, "embeddings")
        k = check_int(self.n_clusters, "n_clusters", minimum=1)
        check_int(self.max_iters, "max_iters", minimum=1)
        check_int(self.seed, "seed", minimum=0)
        if k > x.shape[0]:
            raise ValidationError(
                f"n_clusters={k} exceeds the {x.shape[0]} available points")
        if self.normalize:
            x = _normalize_rows(x)
        rng = np.random.default_rng(self.seed)
        centroids = self._seed_centroids(x, rng)
        d2 = _squared_distances(x, centroids)
        labels = d2.argmin(axis=1)
        history = [float(d2[np.arange(x.shape[0]), labels].sum())]
        n_iter = 0
        for n_iter in range(1, self.max_iters + 1):
            centroids = self._update_centroids(x, labels, centroids, k)
            d2 = _squared_distances(x, centroids)
            new_labels = d2.argmin(axis=1)
            history.append(float(d2[np.arange(x.shape[0]), new_labels].sum()))
            converged = bool((new_labels == labels).all())
            labels = new_labels
            if converged:
                break
        self.centroids_ = centroids
        self.labels_ = labels.astype(np.int64)
        self.inertia_ = history[-1]
        self.inertia_history_ = history
        self.n_iter_ = n_iter
        return self

    def _update_centroids(self, x, labels, old_centroids, k):
        centroids = old_centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c] > 0:
                centroids[c] = x[labels == c].mean(axis=0)
        empties = np.nonzero(counts == 0)[0]
        if empties.size:
            # distance of each point to its own (pre-update) centroid
            gap = ((x - old_centroids[labels]) ** 2).sum(axis=1)
            for c in empties:
                far = int(gap.argmax())
                gap[far] = -1.0
                centroids[c] = x[far]
        return centroids

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "centroids_"):
            raise ValidationError("model has no centroids; call fit or from_centroids first")
        x = check_matrix(X, "vectors")
        if x.shape[1] != self.centroids_.shape[1]:
            raise ValidationError(
                f"expected {self.centroids_.shape[1]}-dimensional vectors, got {x.shape[1]}")
        if self.normalize:
            x = _normalize_rows(x)
        return _squared_distances(x, self.centroids_).argmin(axis=1).astype(np.int64)

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X).labels_

    def assign(self, vector) -> int:
        """Concept id of a single vector."""
        v = np.asarray(vector, dtype=np.float64).reshape(1, -1)
        return int(self.predict(v)[0])

    @classmethod
    def from_centroids(cls, centroids, normalize: bool = False) -> "ConceptKMeans":
        """Fitted model from known concept vectors, skipping training."""
        centroids = check_matrix(centroids, "centroids")
        model = cls(n_clusters=centroids.shape[0], normalize=normalize)
        model.centroids_ = centroids.copy()
        return model
