"""Nearest-centroid classifier on flattened fingerprints (cosine geometry)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class CentroidModel:
    class_ids: np.ndarray      # (k,) device ids, ascending
    centroids: np.ndarray      # (k, d) unit-norm mean vectors

    def similarities(self, x: np.ndarray) -> np.ndarray:
        x = _flatten(x)
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValidationError("cannot score a zero vector")
        return (x / norms) @ self.centroids.T


def _flatten(x) -> np.ndarray:
    if isinstance(x, (list, tuple)) and x and hasattr(x[0], "vector"):
        return np.stack([t.vector() for t in x])
    if hasattr(x, "vector"):
        return x.vector()[None]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        x = x.reshape(1, -1)
    return x.reshape(len(x), int(np.prod(x.shape[1:])))


def nearest_centroid_fit(tensors, labels) -> CentroidModel:
    """Per-class mean vector, normalised to unit length."""
    x = _flatten(tensors)
    labels = np.asarray(labels).ravel()
    if len(x) == 0 or len(x) != len(labels):
        raise ValidationError("need one label per tensor and at least one tensor")
    ids = np.unique(labels)
    cents = np.empty((ids.size, x.shape[1]))
    for i, c in enumerate(ids):
        m = x[labels == c].mean(axis=0)
        n = np.linalg.norm(m)
        if n == 0:
            raise ValidationError(f"class {c} has a zero mean vector")
        cents[i] = m / n
    return CentroidModel(ids, cents)


def nearest_centroid_predict(model: CentroidModel, eps) -> tuple[int, float]:
    """Device id with the most similar centroid and that cosine similarity."""
    if not hasattr(eps, "vector"):
        eps = np.asarray(eps, dtype=np.float64).reshape(1, -1)
    s = model.similarities(eps)[0]
    k = int(np.argmax(s))
    return int(model.class_ids[k]), float(s[k])


def nearest_centroid_predict_batch(model: CentroidModel, x) -> tuple[np.ndarray, np.ndarray]:
    s = model.similarities(x)
    k = np.argmax(s, axis=1)
    return model.class_ids[k], s[np.arange(len(k)), k]
