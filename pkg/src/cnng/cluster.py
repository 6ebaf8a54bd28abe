"""K-Means (k-means++ seeding, Lloyd iterations) used to split error cases."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansModel:
    centroids: np.ndarray  # (k, dim)
    inertia: float
    seed: int
    iterations_run: int
    inertia_history: list[float] = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) matrix of squared Euclidean distances, computed by explicit differences."""
    out = np.empty((points.shape[0], centroids.shape[0]))
    for j, c in enumerate(centroids):
        diff = points - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _check_points(points) -> np.ndarray:
    try:
        pts = np.asarray(points, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("all points must have the same dimension") from exc
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError("all points must have the same dimension")
    return pts


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = squared_distances(points, points[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, squared_distances(points, points[[idx]])[:, 0])
    return points[chosen].copy()


def _lloyd(points: np.ndarray, k: int, seed: int, max_iter: int, tol: float) -> tuple[KMeansModel, np.ndarray]:
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(points, k, rng)
    history = []
    assign = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = squared_distances(points, centroids)
        new_assign = np.argmin(d2, axis=1)
        rows = np.arange(points.shape[0])
        history.append(float(d2[rows, new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign

        new_centroids = centroids.copy()
        counts = np.bincount(assign, minlength=k)
        for j in range(k):
            if counts[j]:
                new_centroids[j] = points[assign == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            # reseed at the point currently worst served by its own centroid
            own = squared_distances(points, new_centroids)[rows, assign]
            far = int(np.argmax(own))
            new_centroids[j] = points[far]
            assign[far] = j
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift <= tol:
            break

    d2 = squared_distances(points, centroids)
    assign = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(points.shape[0]), assign].sum())
    if not history or inertia != history[-1]:
        history.append(inertia)
    model = KMeansModel(centroids, inertia, seed, iterations, history)
    return model, assign


def kmeans_fit(points, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6,
               restarts: int = 1) -> tuple[KMeansModel, np.ndarray]:
    """Fit k centroids; returns the model and each point's cluster id.

    With ``restarts > 1`` the run is repeated with seeds ``seed, seed + 1, ...``
    and the lowest-inertia result is kept (earliest run wins ties).
    """
    pts = _check_points(points)
    if k < 1:
        raise ValueError("k must be >= 1")
    if pts.shape[0] < k:
        raise ValueError(f"need at least k={k} points, got {pts.shape[0]}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    best = None
    for r in range(restarts):
        model, assign = _lloyd(pts, k, (seed + r) % 2**64, max_iter, tol)
        if best is None or model.inertia < best[0].inertia:
            best = (model, assign)
    return best


def kmeans_assign(model: KMeansModel, x) -> int | np.ndarray:
    """Nearest centroid id for a vector, or an array of ids for a 2-D batch."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.ndim != 2 or batch.shape[1] != model.dim:
        raise ValueError(f"expected vectors of dimension {model.dim}, got shape {arr.shape}")
    ids = np.argmin(squared_distances(batch, model.centroids), axis=1)
    return int(ids[0]) if single else ids
