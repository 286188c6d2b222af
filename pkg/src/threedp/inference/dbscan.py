"""Density clustering of unexplained points."""

from __future__ import annotations

import numpy as np
from sklearn.cluster import DBSCAN


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Return (clusters, noise) as index arrays.

    Clusters are numbered in the order their first core point appears in the
    input, so the result is deterministic for a given point order.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return [], np.zeros(0, dtype=np.int64)
    labels = DBSCAN(eps=eps, min_samples=min_pts).fit_predict(points)
    clusters = [np.flatnonzero(labels == k) for k in range(labels.max() + 1)]
    return clusters, np.flatnonzero(labels == -1)
