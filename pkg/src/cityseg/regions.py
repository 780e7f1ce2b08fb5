"""Per-frame segmentation: primary patterns, connected latent regions, stats.

A grid's primary pattern is the argmax of its H row (analyst overrides win);
latent regions are 4-connected components of equal-primary grids. The solver's
Mean-Shift clustering only picks K; regionization is purely this argmax rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .ingest import FeatureMatrix, GridSpec


@dataclass
class LatentRegion:
    id: int
    pattern: int
    grids: list[int]
    inflow: float
    outflow: float
    color: int | None = None  # persistent label, assigned by evolution tracking


@dataclass
class SegmentationFrame:
    t: int
    primary: np.ndarray  # per-grid pattern index
    regions: list[LatentRegion]
    overrides: dict[int, int] = field(default_factory=dict)
    n_grids: int = 0

    def region_of(self) -> np.ndarray:
        """Per-grid region id (inverse of the region membership lists)."""
        out = np.full(self.n_grids, -1, dtype=int)
        for region in self.regions:
            out[region.grids] = region.id
        return out


@dataclass
class RegionPatternCard:
    region_id: int
    feature: np.ndarray  # the region's 2N pattern column of W
    inout_delta: np.ndarray  # per-grid incoming minus outgoing probability


def segment(
    H: np.ndarray,
    X: FeatureMatrix,
    grid: GridSpec,
    overrides: dict[int, int] | None = None,
) -> SegmentationFrame:
    """Label every grid with its primary pattern and group into latent regions.

    Ties in the argmax go to the lowest pattern index. Regions are numbered in
    order of their smallest grid index, so output is deterministic.
    """
    H = np.asarray(H, dtype=np.float64)
    n = grid.n_cells
    if H.shape[0] != n:
        raise InvalidInputError(f"H has {H.shape[0]} rows for {n} grids")
    k = H.shape[1]
    overrides = dict(overrides or {})
    for g, p in overrides.items():
        if not (0 <= g < n):
            raise InvalidInputError(f"override grid {g} out of range")
        if not (0 <= p < k):
            raise InvalidInputError(f"override pattern {p} out of range for K={k}")

    primary = np.argmax(H, axis=1)
    for g, p in overrides.items():
        primary[g] = p

    xdata = np.asarray(X.data, dtype=np.float64)
    outflow_per_grid = xdata[:n].sum(axis=0)
    inflow_per_grid = xdata[n:].sum(axis=0)

    regions: list[LatentRegion] = []
    assigned = np.full(n, -1, dtype=int)
    for start in range(n):
        if assigned[start] >= 0:
            continue
        label = primary[start]
        member_set = {start}
        stack = [start]
        while stack:
            g = stack.pop()
            ix, iy = grid.cell_coords(g)
            for jx, jy in ((ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)):
                nb = grid.cell_index(jx, jy)
                if nb is not None and nb not in member_set and assigned[nb] < 0 and primary[nb] == label:
                    member_set.add(nb)
                    stack.append(nb)
        members = sorted(member_set)
        rid = len(regions)
        assigned[members] = rid
        regions.append(
            LatentRegion(
                id=rid,
                pattern=int(label),
                grids=members,
                inflow=float(inflow_per_grid[members].sum()),
                outflow=float(outflow_per_grid[members].sum()),
            )
        )
    return SegmentationFrame(
        t=X.t, primary=primary, regions=regions, overrides=overrides, n_grids=n
    )


def region_pattern_card(
    region: LatentRegion, W: np.ndarray, X: FeatureMatrix
) -> RegionPatternCard:
    """The region's pattern column plus the net-entering signal per grid.

    inout_delta[p] > 0 means flow into the region's pattern from grid p exceeds
    flow out toward it (rendered green downstream; negative renders red).
    """
    W = np.asarray(W, dtype=np.float64)
    if not (0 <= region.pattern < W.shape[1]):
        raise InvalidInputError(f"pattern {region.pattern} out of range")
    n = X.n_grids
    feature = W[:, region.pattern].copy()
    inout_delta = feature[n:] - feature[:n]
    return RegionPatternCard(region_id=region.id, feature=feature, inout_delta=inout_delta)


def grid_detail(grid_index: int, X: FeatureMatrix) -> dict:
    """Raw 2N feature column of one grid plus its inflow/outflow totals."""
    n = X.n_grids
    if not (0 <= grid_index < n):
        raise InvalidInputError(f"grid index {grid_index} out of range")
    column = np.asarray(X.data, dtype=np.float64)[:, grid_index]
    return {
        "grid": grid_index,
        "feature": column,
        "outflow": float(column[:n].sum()),
        "inflow": float(column[n:].sum()),
    }


def refine_h_with_pins(
    H: np.ndarray, pins: dict[int, int]
) -> np.ndarray:
    """Replace pinned rows with one-hot distributions (optional override mode)."""
    H = np.asarray(H, dtype=np.float64).copy()
    k = H.shape[1]
    for g, p in pins.items():
        if not (0 <= p < k):
            raise InvalidInputError(f"pinned pattern {p} out of range")
        H[g] = 0.0
        H[g, p] = 1.0
    return H
