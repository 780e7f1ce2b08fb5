"""Global-view embedding of frames and barycentric pattern layout of grids."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import InvalidInputError
from .ingest import FeatureMatrix, TimeBinning

DAYPARTS = ("dawn", "morning", "afternoon", "night")
DEFAULT_DAYPART_BOUNDS = {"dawn": (0, 6), "morning": (6, 12), "afternoon": (12, 18), "night": (18, 24)}


@dataclass
class OverviewPoint:
    t: int
    x: float
    y: float
    size: float  # total trips in the bin
    daypart: str


@dataclass
class BarycentricLayout:
    anchors: np.ndarray  # K x 2 points on the unit circle
    points: np.ndarray  # N x 2, convex combinations of the anchors


def vectorize_frame(X: FeatureMatrix | np.ndarray) -> np.ndarray:
    """Grid-major flattening: grid 0's 2N features, then grid 1's, and so on."""
    data = X.data if isinstance(X, FeatureMatrix) else X
    return np.asarray(data, dtype=np.float64).flatten(order="F")


def pca_embed(vectors: list[np.ndarray] | np.ndarray, dims: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Mean-centered PCA projection onto the top principal axes.

    Axis signs follow the convention that the largest-magnitude loading is
    positive, so results are reproducible across runs. Returns (coords,
    explained-variance ratios); degenerate all-identical input collapses to
    the origin with zero explained variance.
    """
    data = np.asarray(vectors, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InvalidInputError("need at least 2 vectors to embed")
    centered = data - data.mean(axis=0)
    U, S, Vt = np.linalg.svd(centered, full_matrices=False)
    take = min(dims, len(S))
    coords = np.zeros((data.shape[0], dims))
    explained = np.zeros(dims)
    total_var = float((S**2).sum())
    for axis in range(take):
        loading = Vt[axis]
        pivot = np.argmax(np.abs(loading))
        sign = 1.0 if loading[pivot] >= 0 else -1.0
        coords[:, axis] = sign * U[:, axis] * S[axis]
        explained[axis] = (S[axis] ** 2) / total_var if total_var > 0 else 0.0
    return coords, explained


def daypart(t: int, binning: TimeBinning, bounds: dict[str, tuple[int, int]] | None = None) -> str:
    """Part of day for bin t, from the bin's starting hour (UTC)."""
    bounds = bounds or DEFAULT_DAYPART_BOUNDS
    start = binning.bin_start(t)
    hour = datetime.fromtimestamp(start, tz=timezone.utc).hour
    for name, (lo, hi) in bounds.items():
        if lo <= hour < hi:
            return name
    return "night"


def overview_points(
    Xs: list[FeatureMatrix],
    binning: TimeBinning,
    bounds: dict[str, tuple[int, int]] | None = None,
) -> list[OverviewPoint]:
    """One embedded point per frame; size is the frame's usable-trip count."""
    vectors = np.array([vectorize_frame(X) for X in Xs])
    coords, _ = pca_embed(vectors, dims=2)
    points = []
    for X, (x, y) in zip(Xs, coords):
        outgoing_total = float(np.asarray(X.data)[: X.n_grids].sum())
        points.append(
            OverviewPoint(
                t=X.t, x=float(x), y=float(y), size=outgoing_total,
                daypart=daypart(X.t, binning, bounds),
            )
        )
    return points


def barycentric_layout(H: np.ndarray) -> BarycentricLayout:
    """Place each grid inside a K-anchor circle by its normalized pattern row.

    Anchor j sits at angle 2*pi*j/K on the unit circle; a grid's point is the
    H-row-weighted average of the anchors. Rows are normalized to sum to one
    (zero rows sit at the center), so points stay inside the circle.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] < 2:
        raise InvalidInputError("barycentric layout needs K >= 2")
    k = H.shape[1]
    angles = 2.0 * np.pi * np.arange(k) / k
    anchors = np.column_stack([np.cos(angles), np.sin(angles)])
    sums = H.sum(axis=1, keepdims=True)
    weights = np.divide(H, sums, out=np.zeros_like(H), where=sums > 0)
    return BarycentricLayout(anchors=anchors, points=weights @ anchors)
