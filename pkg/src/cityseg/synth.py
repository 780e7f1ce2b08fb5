"""Synthetic cities with planted segmentations, for tests and demos.

Generators come in two flavors: direct feature-matrix series with planted
region layouts (solver-level experiments), and trip-record streams written as
CSV (full-pipeline experiments). All are deterministic for a given seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .ingest import FeatureMatrix, GridSpec, TimeBinning


@dataclass
class PlantedFrame:
    """One synthetic frame: counts plus the layout that generated them."""

    X: FeatureMatrix
    labels: np.ndarray  # planted region label per grid


def strip_layout(nx: int, ny: int, n_strips: int) -> np.ndarray:
    """Vertical strips of roughly equal width, labeled 0..n_strips-1."""
    labels = np.zeros(nx * ny, dtype=int)
    for iy in range(ny):
        for ix in range(nx):
            labels[iy * nx + ix] = min(ix * n_strips // nx, n_strips - 1)
    return labels


def quadrant_layout(nx: int, ny: int) -> np.ndarray:
    labels = np.zeros(nx * ny, dtype=int)
    for iy in range(ny):
        for ix in range(nx):
            labels[iy * nx + ix] = (1 if ix >= nx // 2 else 0) + (2 if iy >= ny // 2 else 0)
    return labels


def halves_layout(nx: int, ny: int, axis: str = "x") -> np.ndarray:
    labels = np.zeros(nx * ny, dtype=int)
    for iy in range(ny):
        for ix in range(nx):
            if axis == "x":
                labels[iy * nx + ix] = 1 if ix >= nx // 2 else 0
            else:
                labels[iy * nx + ix] = 1 if iy >= ny // 2 else 0
    return labels


def od_signatures(labels: np.ndarray, hub_share: float = 0.15) -> dict[int, np.ndarray]:
    """Per-region OD signature: a 2N distribution over (destinations, sources).

    Region traffic is mostly internal with Zipf-skewed destination popularity
    (cities have attractors, and the skew keeps per-cell counts well above the
    Poisson noise floor). A hub_share slice flows to and from region 0's grids
    so distinct patterns stay correlated, which is the regime the
    orthogonality penalty has to untangle.
    """
    n = len(labels)
    regions = np.unique(labels)
    hub = labels == regions[0]
    hub_weights = _zipf_weights(n, hub)
    signatures = {}
    for r in regions:
        member = labels == r
        out = (1.0 - hub_share) * _zipf_weights(n, member)
        out = out + hub_share * hub_weights
        sig = np.concatenate([out, out])
        signatures[int(r)] = sig / sig.sum()
    return signatures


def _zipf_weights(n: int, member: np.ndarray) -> np.ndarray:
    """Zipf-distributed destination weights over a member set, summing to one."""
    weights = np.zeros(n)
    ranks = np.flatnonzero(member)
    weights[ranks] = 1.0 / (1.0 + np.arange(len(ranks)))
    return weights / weights.sum()


def planted_matrix(
    labels: np.ndarray,
    t: int,
    rng: np.random.Generator,
    column_total: float = 150.0,
    hub_share: float = 0.15,
    corrupt: dict[int, int] | None = None,
    corrupt_strength: float = 0.6,
) -> PlantedFrame:
    """Poisson counts whose grid columns follow their region's OD signature.

    column_total is the expected count mass per grid column (out + in blocks
    together). corrupt maps grid index -> wrong region whose signature is
    mixed in at corrupt_strength, flipping the grid's dominant pattern when
    the strength exceeds one half.
    """
    n = len(labels)
    signatures = od_signatures(labels, hub_share)
    X = np.zeros((2 * n, n))
    for i in range(n):
        sig = signatures[int(labels[i])]
        if corrupt and i in corrupt:
            wrong = signatures[corrupt[i]]
            sig = (1.0 - corrupt_strength) * sig + corrupt_strength * wrong
        X[:, i] = rng.poisson(column_total * sig)
    return PlantedFrame(X=FeatureMatrix(t=t, data=X.astype(np.int64)), labels=labels.copy())


def temporal_ablation_series(
    seed: int = 7,
    nx: int = 6,
    ny: int = 6,
    n_frames: int = 8,
    noisy_frame: int = 4,
    n_corrupt: int = 12,
) -> tuple[list[PlantedFrame], GridSpec]:
    """Stable 3-strip city with one heavily corrupted frame in the middle."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(0.0, 0.0, 0.005, 0.005, nx, ny)
    labels = strip_layout(nx, ny, 3)
    frames = []
    for t in range(n_frames):
        corrupt = None
        if t == noisy_frame:
            grids = rng.choice(nx * ny, size=n_corrupt, replace=False)
            corrupt = {int(g): int((labels[g] + 1) % 3) for g in grids}
        frames.append(planted_matrix(labels, t, rng, corrupt=corrupt))
    return frames, grid


def spatial_ablation_frame(
    seed: int = 11, nx: int = 10, ny: int = 10, n_noisy: int = 3,
    column_total: float = 400.0, corrupt_strength: float = 0.7,
) -> tuple[PlantedFrame, GridSpec, list[int]]:
    """Homogeneous block with a few interior grids pushed toward a fake pattern.

    The fake pattern comes from a phantom two-strip layout; the planted truth
    is still a single region covering the whole block.
    """
    rng = np.random.default_rng(seed)
    grid = GridSpec(0.0, 0.0, 0.005, 0.005, nx, ny)
    interior = [iy * nx + ix for iy in range(2, ny - 2) for ix in range(2, nx - 2)]
    noisy: list[int] = []
    for g in rng.permutation(interior):
        if all(abs(g % nx - h % nx) + abs(g // nx - h // nx) > 2 for h in noisy):
            noisy.append(int(g))
        if len(noisy) == n_noisy:
            break
    noisy.sort()
    n = nx * ny
    sigs = od_signatures(strip_layout(nx, ny, 2))
    X = np.zeros((2 * n, n))
    for i in range(n):
        sig = sigs[0]
        if i in noisy:
            sig = (1.0 - corrupt_strength) * sigs[0] + corrupt_strength * sigs[1]
        X[:, i] = rng.poisson(column_total * sig)
    planted = PlantedFrame(
        X=FeatureMatrix(t=0, data=X.astype(np.int64)), labels=np.zeros(n, dtype=int)
    )
    return planted, grid, noisy


def clustered_columns(
    n_clusters: int, seed: int, n_cols: int = 48, dim: int = 96, noise: float = 0.02
) -> np.ndarray:
    """Nonnegative matrix whose columns form well-separated clusters."""
    rng = np.random.default_rng(seed)
    prototypes = rng.random((n_clusters, dim)) ** 2
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    X = np.zeros((dim, n_cols))
    for j in range(n_cols):
        c = j % n_clusters
        scale = rng.uniform(5.0, 50.0)
        column = prototypes[c] + noise * rng.random(dim)
        X[:, j] = scale * np.maximum(column, 0.0)
    return X


DAYPART_REGIMES = ("dawn", "morning", "afternoon", "night")


def daypart_city_layouts(nx: int, ny: int) -> dict[str, np.ndarray]:
    """Three distinct layouts across the four dayparts (dawn/night share one)."""
    return {
        "dawn": halves_layout(nx, ny, axis="x"),
        "morning": quadrant_layout(nx, ny),
        "afternoon": halves_layout(nx, ny, axis="y"),
        "night": halves_layout(nx, ny, axis="x"),
    }


DAYPART_VOLUMES = {"dawn": 150.0, "morning": 400.0, "afternoon": 340.0, "night": 240.0}


def generate_city_trips(
    path: str,
    seed: int = 3,
    nx: int = 12,
    ny: int = 12,
    start: str = "2014-07-09T00:00:00",
    interval_hours: float = 2.0,
) -> tuple[GridSpec, TimeBinning, dict[int, np.ndarray]]:
    """Write a 12-frame synthetic trip CSV with daypart-dependent OD regimes.

    Returns the grid, binning, and the planted per-frame region labels.
    """
    from .ingest import parse_timestamp
    from .overview import daypart as daypart_of

    rng = np.random.default_rng(seed)
    grid = GridSpec(-74.02, 40.70, 0.005, 0.005, nx, ny)
    start_ts = parse_timestamp(start)
    bins = TimeBinning(start=start_ts, interval_len=interval_hours * 3600.0, n_bins=12)
    layouts = daypart_city_layouts(nx, ny)
    n = grid.n_cells
    planted: dict[int, np.ndarray] = {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "pickup_datetime",
                "dropoff_datetime",
                "pickup_longitude",
                "pickup_latitude",
                "dropoff_longitude",
                "dropoff_latitude",
            ]
        )
        for t in range(bins.n_bins):
            part = daypart_of(t, bins)
            labels = layouts[part]
            planted[t] = labels
            signatures = od_signatures(labels)
            volume = DAYPART_VOLUMES[part]
            bin_start = bins.bin_start(t)
            for r in np.unique(labels):
                member = labels == r
                # Pickups follow the same Zipf popularity as destinations, so
                # every grid's in/out balance matches and columns of one
                # region stay directionally identical in expectation.
                pickup_probs = _zipf_weights(n, member)
                sig = signatures[int(r)]
                dest_probs = sig[:n] / sig[:n].sum()
                n_trips = rng.poisson(volume * int(member.sum()))
                sources = rng.choice(n, size=n_trips, p=pickup_probs)
                destinations = rng.choice(n, size=n_trips, p=dest_probs)
                offsets = np.sort(rng.uniform(0, bins.interval_len, size=n_trips))
                for src, dst, offset in zip(sources, destinations, offsets):
                    pickup = bin_start + float(offset)
                    dropoff = pickup + 300.0
                    plon, plat = _jittered_center(grid, int(src), rng)
                    dlon, dlat = _jittered_center(grid, int(dst), rng)
                    writer.writerow(
                        [f"{pickup:.3f}", f"{dropoff:.3f}", f"{plon:.6f}", f"{plat:.6f}", f"{dlon:.6f}", f"{dlat:.6f}"]
                    )
    return grid, bins, planted


def _jittered_center(grid: GridSpec, index: int, rng: np.random.Generator) -> tuple[float, float]:
    lon, lat = grid.cell_center(index)
    return (
        lon + (rng.random() - 0.5) * grid.cell_lon * 0.9,
        lat + (rng.random() - 0.5) * grid.cell_lat * 0.9,
    )
