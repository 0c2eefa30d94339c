"""Lloyd k-means over feature rows.

Centroids are fit on raw (unnormalized) vectors; cosine scoring normalizes
at use time. Assignment breaks distance ties toward the lowest centroid
index, empty clusters are re-seeded with the point currently farthest from
its assigned centroid, and all randomness comes from a caller-controlled
Philox stream, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataWarning, ValidationError
from .rng import stream


@dataclass(frozen=True)
class KMeansConfig:
    """Cluster count plus convergence and initialization policy."""

    k: int
    max_iters: int = 100
    tol: float = 1e-4  # relative inertia improvement that counts as converged
    init: str = "plus_plus"  # or "random_points"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise ValidationError(f"tol must be >= 0, got {self.tol}")
        if self.init not in ("plus_plus", "random_points"):
            raise ValidationError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class Clustering:
    """Result of one k-means run.

    ``inertia_history`` holds the inertia observed at every assignment
    step; Lloyd guarantees it is non-increasing and :func:`kmeans` asserts
    that at every step.
    """

    centroids: np.ndarray  # (k, d) float64
    assignments: np.ndarray  # (n,) int64, nearest-centroid index
    inertia: float
    counts: np.ndarray  # (k,) int64 cluster sizes
    inertia_history: tuple[float, ...] = field(repr=False, default=())


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        (points * points).sum(axis=1)[:, None]
        - 2.0 * (points @ centroids.T)
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)  # guard tiny negative cancellation
    return d2


def _init_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _squared_distances(points, points[chosen[-1:]])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:  # all remaining points coincide with a centroid
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        chosen.append(idx)
        np.minimum(closest, _squared_distances(points, points[idx : idx + 1])[:, 0], out=closest)
    return points[chosen].copy()


def _init_random_points(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    idx = rng.choice(points.shape[0], size=k, replace=False)
    return points[idx].copy()


def kmeans(
    points: np.ndarray,
    config: KMeansConfig,
    *,
    rng: np.random.Generator | None = None,
) -> Clustering:
    """Cluster ``points`` (n, d) into ``min(config.k, n)`` groups.

    Runs assign/update rounds until the relative inertia improvement drops
    below ``config.tol``, the assignment stops changing, or ``max_iters``
    assignment passes have happened. A ``rng`` override replaces the stream
    derived from ``config.seed`` (used for per-class substreams).
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValidationError(f"points must be a non-empty (n, d) matrix, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValidationError("points contain non-finite values")

    n = pts.shape[0]
    k = config.k
    if k > n:
        warnings.warn(f"k={k} exceeds n={n}; clamping to {n}", DataWarning, stacklevel=2)
        k = n
    if rng is None:
        rng = stream(config.seed)

    if config.init == "plus_plus":
        centroids = _init_plus_plus(pts, k, rng)
    else:
        centroids = _init_random_points(pts, k, rng)

    history: list[float] = []
    assignments = np.full(n, -1, dtype=np.int64)
    inertia = np.inf
    for _ in range(config.max_iters):
        d2 = _squared_distances(pts, centroids)
        new_assignments = d2.argmin(axis=1)  # argmin takes the lowest index on ties
        inertia = float(d2[np.arange(n), new_assignments].sum())
        if history:
            assert inertia <= history[-1] * (1.0 + 1e-12) + 1e-9, (
                f"inertia increased: {history[-1]} -> {inertia}"
            )
        prev = history[-1] if history else None
        history.append(inertia)

        stable = np.array_equal(new_assignments, assignments)
        assignments = new_assignments
        if stable:
            break
        if prev is not None and (prev - inertia) < config.tol * prev:
            break

        # update step: means of assigned points, empty clusters re-seeded
        counts = np.bincount(assignments, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, pts)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            dist_to_own = d2[np.arange(n), assignments].copy()
            for cluster in np.flatnonzero(~nonempty):
                farthest = int(dist_to_own.argmax())
                centroids[cluster] = pts[farthest]
                dist_to_own[farthest] = -1.0  # each empty cluster steals a distinct point
    else:
        # max_iters ended on an update; sync assignments to the final centroids
        d2 = _squared_distances(pts, centroids)
        assignments = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), assignments].sum())
        assert inertia <= history[-1] * (1.0 + 1e-12) + 1e-9
        history.append(inertia)

    counts = np.bincount(assignments, minlength=k)
    return Clustering(
        centroids=centroids,
        assignments=assignments,
        inertia=inertia,
        counts=counts.astype(np.int64),
        inertia_history=tuple(history),
    )
