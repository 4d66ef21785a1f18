"""K-means clusters over POI coordinates."""

import logging
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, model_validator

from .config import config
from .dataset import Business
from .errors import InvalidInputError
from .geo import GeoPoint

logger = logging.getLogger(__name__)


class ClusterAssignment(BaseModel):
    k: int
    centroids: list[GeoPoint]
    labels: dict[str, int]
    objective_history: list[float] = []
    iterations: int = 0

    @model_validator(mode="after")
    def _check_labels(self) -> "ClusterAssignment":
        if not 1 <= self.k <= len(self.labels):
            raise ValueError(f"k={self.k} outside 1..{len(self.labels)}")
        if len(self.centroids) != self.k:
            raise ValueError("one centroid per cluster")
        if any(not 0 <= label < self.k for label in self.labels.values()):
            raise ValueError("label outside [0, k)")
        return self

    def members(self, cluster: int) -> list[str]:
        return [business_id for business_id, label in self.labels.items() if label == cluster]


def cluster_count(n: int) -> int:
    return max(1, n // config.CLUSTER_DIVISOR)


def _unique(items: Sequence[Business]) -> list[Business]:
    seen: set[str] = set()
    unique = []
    for item in items:
        if item.id not in seen:
            seen.add(item.id)
            unique.append(item)
    return unique


def _plus_plus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            index = int(rng.integers(n))
        else:
            index = int(rng.choice(n, p=d2 / total))
        chosen.append(index)
        d2 = np.minimum(d2, ((X - X[index]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _update_centroids(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    k = len(centroids)
    updated = centroids.copy()
    empty = []
    for j in range(k):
        mask = labels == j
        if mask.any():
            updated[j] = X[mask].mean(axis=0)
        else:
            empty.append(j)
    if empty:
        # Reseed each empty cluster with the point farthest from its centroid
        dist = ((X - updated[labels]) ** 2).sum(axis=1)
        for j in empty:
            far = int(np.argmax(dist))
            updated[j] = X[far]
            dist[far] = -1.0
            logger.debug(f"Reseeded empty cluster {j} at point {far}")
    return updated


def kmeans_clusters(
    items: Sequence[Business],
    seed: int = 0,
    max_iter: int = config.KMEANS_MAX_ITER,
    k: Optional[int] = None,
) -> ClusterAssignment:
    """Lloyd iterations on raw (lat, lon) pairs from a k-means++ start."""
    items = _unique(items)
    if not items:
        raise InvalidInputError("Cannot cluster zero items")

    X = np.array([[b.location.lat, b.location.lon] for b in items], dtype=float)
    k = cluster_count(len(items)) if k is None else max(1, min(k, len(items)))
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(X, k, rng)

    history: list[float] = []
    labels: Optional[np.ndarray] = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(X)), new_labels].sum()))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        centroids = _update_centroids(X, labels, centroids)
    else:
        logger.warning(f"k-means stopped at {max_iter} iterations without reaching a fixpoint")
    labels = new_labels

    return ClusterAssignment(
        k=k,
        centroids=[GeoPoint(lat=float(c[0]), lon=float(c[1])) for c in centroids],
        labels={item.id: int(label) for item, label in zip(items, labels)},
        objective_history=history,
        iterations=iterations,
    )


def cluster_summary_text(a: ClusterAssignment, items: Sequence[Business]) -> str:
    """One "Cluster i: name, name" line per cluster."""
    names: dict[int, list[str]] = {cluster: [] for cluster in range(a.k)}
    for item in _unique(items):
        if item.id not in a.labels:
            raise InvalidInputError(f"No cluster label for {item.id}")
        names[a.labels[item.id]].append(item.name)
    return "\n".join(
        f"Cluster {cluster}: {', '.join(sorted(members))}" for cluster, members in names.items()
    )
