"""Turn raw OD trip records into per-interval feature matrices and flow summaries.

A trip contributes one count to the feature matrix of the time bin its pickup
falls in: column = source grid in the outgoing block (rows 0..N-1, indexed by
destination), column = destination grid in the incoming block (rows N..2N-1,
indexed by source). Counts are raw; any scaling is the solver's concern.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from typing import Iterable, Iterator

import numpy as np

from .errors import EmptyDatasetError, InvalidInputError

N_DIRECTION_BINS = 72  # 5 degrees per bin
DEGREES_PER_BIN = 360.0 / N_DIRECTION_BINS

REQUIRED_CSV_COLUMNS = (
    "pickup_datetime",
    "dropoff_datetime",
    "pickup_longitude",
    "pickup_latitude",
    "dropoff_longitude",
    "dropoff_latitude",
)


@dataclass(frozen=True)
class TripRecord:
    """One trip; times are UTC epoch seconds, coordinates in degrees."""

    pickup_time: float
    dropoff_time: float
    pickup_lon: float
    pickup_lat: float
    dropoff_lon: float
    dropoff_lat: float


@dataclass(frozen=True)
class GridSpec:
    """Regular lon/lat grid with an optional mask of in-study cells.

    Cell (ix, iy) covers [origin_lon + ix*cell_lon, ...) x [origin_lat + iy*cell_lat, ...).
    Raw cell id is iy * nx + ix; masked cells are numbered 0..N-1 in raw-id order.
    """

    origin_lon: float
    origin_lat: float
    cell_lon: float
    cell_lat: float
    nx: int
    ny: int
    mask: tuple[bool, ...] | None = None

    def __post_init__(self):
        if self.cell_lon <= 0 or self.cell_lat <= 0:
            raise InvalidInputError("cell_lon and cell_lat must be positive")
        if self.nx < 1 or self.ny < 1:
            raise InvalidInputError("nx and ny must be at least 1")
        if self.mask is not None and len(self.mask) != self.nx * self.ny:
            raise InvalidInputError(
                f"mask length {len(self.mask)} != nx*ny = {self.nx * self.ny}"
            )

    @property
    def n_cells(self) -> int:
        """Number of masked-in grid cells (the N of the feature matrices)."""
        if self.mask is None:
            return self.nx * self.ny
        return sum(self.mask)

    @cached_property
    def _masked_raw_ids(self) -> tuple[int, ...]:
        if self.mask is None:
            return tuple(range(self.nx * self.ny))
        return tuple(raw for raw, keep in enumerate(self.mask) if keep)

    @cached_property
    def _raw_to_index(self) -> dict[int, int]:
        return {raw: idx for idx, raw in enumerate(self._masked_raw_ids)}

    def cell_index(self, ix: int, iy: int) -> int | None:
        """Masked-cell index for integer cell coords, or None if outside/masked out."""
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            return None
        return self._raw_to_index.get(iy * self.nx + ix)

    def cell_coords(self, index: int) -> tuple[int, int]:
        """Inverse of cell_index for masked cells: index -> (ix, iy)."""
        if not (0 <= index < len(self._masked_raw_ids)):
            raise InvalidInputError(f"grid index {index} out of range")
        raw = self._masked_raw_ids[index]
        return raw % self.nx, raw // self.nx

    def cell_center(self, index: int) -> tuple[float, float]:
        ix, iy = self.cell_coords(index)
        return (
            self.origin_lon + (ix + 0.5) * self.cell_lon,
            self.origin_lat + (iy + 0.5) * self.cell_lat,
        )


@dataclass(frozen=True)
class TimeBinning:
    """Uniform time bins: bin t covers [start + t*interval_len, start + (t+1)*interval_len)."""

    start: float
    interval_len: float
    n_bins: int

    def __post_init__(self):
        if self.interval_len <= 0:
            raise InvalidInputError("interval_len must be positive")
        if self.n_bins < 1:
            raise InvalidInputError("n_bins must be at least 1")

    def bin_of(self, timestamp: float) -> int | None:
        offset = timestamp - self.start
        if offset < 0:
            return None
        t = int(math.floor(offset / self.interval_len))
        return t if t < self.n_bins else None

    def bin_start(self, t: int) -> float:
        return self.start + t * self.interval_len


@dataclass
class FeatureMatrix:
    """2N x N trip-count matrix for one time bin.

    Rows 0..N-1: outgoing block (row p, column i = trips grid i -> grid p).
    Rows N..2N-1: incoming block (row N+i, column j = trips grid i -> grid j).
    """

    t: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] != 2 * data.shape[1]:
            raise InvalidInputError(f"feature matrix must be 2N x N, got {data.shape}")
        if np.any(data < 0):
            raise InvalidInputError("feature matrix entries must be nonnegative")
        self.data = data

    @property
    def n_grids(self) -> int:
        return self.data.shape[1]

    def outgoing(self) -> np.ndarray:
        return self.data[: self.n_grids]

    def incoming(self) -> np.ndarray:
        return self.data[self.n_grids:]


@dataclass(frozen=True)
class AdjacencyGraph:
    """Symmetric 4-connectivity adjacency between masked grid cells."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        for i, j in self.edges:
            if i == j:
                raise InvalidInputError("self-loops are not allowed")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise InvalidInputError("edge endpoint out of range")
            if i > j:
                raise InvalidInputError("edges must be stored as (low, high) pairs")

    def to_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n)
        for i, j in self.edges:
            d[i] += 1.0
            d[j] += 1.0
        return d


@dataclass
class FlowHistogram:
    """Directional traffic summary for one grid in one bin.

    out_bins/in_bins hold 72 five-degree direction counts (north = 0, clockwise);
    intra counts same-cell trips, which have no direction. total covers all three.
    """

    grid: int
    t: int
    out_bins: np.ndarray
    in_bins: np.ndarray
    intra: int = 0

    @property
    def total(self) -> int:
        return int(self.out_bins.sum() + self.in_bins.sum() + self.intra)


@dataclass
class IngestReport:
    """Row accounting for one ingest pass."""

    rows_read: int = 0
    trips_used: int = 0
    skipped: dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str):
        self.skipped[reason] = self.skipped.get(reason, 0) + 1

    @property
    def rows_skipped(self) -> int:
        return sum(self.skipped.values())


def assign_grid(lon: float, lat: float, grid: GridSpec) -> int | None:
    """Masked-cell index containing (lon, lat), or None when out of area.

    Lower edges are inclusive: a point exactly on the origin lands in cell (0, 0).
    """
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise InvalidInputError(f"non-finite coordinates ({lon}, {lat})")
    ix = math.floor((lon - grid.origin_lon) / grid.cell_lon)
    iy = math.floor((lat - grid.origin_lat) / grid.cell_lat)
    return grid.cell_index(ix, iy)


def _usable_trips(
    trips: Iterable[TripRecord],
    grid: GridSpec,
    bins: TimeBinning,
    report: IngestReport,
) -> Iterator[tuple[int, int, int]]:
    """Yield (bin, pickup grid, dropoff grid) for every countable trip."""
    for trip in trips:
        report.rows_read += 1
        coords = (trip.pickup_lon, trip.pickup_lat, trip.dropoff_lon, trip.dropoff_lat)
        if not all(math.isfinite(c) for c in coords):
            report.skip("non_finite_coordinates")
            continue
        if trip.pickup_time > trip.dropoff_time:
            report.skip("negative_duration")
            continue
        t = bins.bin_of(trip.pickup_time)
        if t is None:
            report.skip("outside_time_bins")
            continue
        src = assign_grid(trip.pickup_lon, trip.pickup_lat, grid)
        dst = assign_grid(trip.dropoff_lon, trip.dropoff_lat, grid)
        if src is None or dst is None:
            report.skip("out_of_area")
            continue
        report.trips_used += 1
        yield t, src, dst


def build_feature_series(
    trips: Iterable[TripRecord], grid: GridSpec, bins: TimeBinning
) -> tuple[list[FeatureMatrix], IngestReport]:
    """Count trips into one 2N x N matrix per bin; empty bins stay zero.

    Raises EmptyDatasetError when no trip is usable.
    """
    n = grid.n_cells
    report = IngestReport()
    counts = [np.zeros((2 * n, n), dtype=np.int64) for _ in range(bins.n_bins)]
    for t, src, dst in _usable_trips(trips, grid, bins, report):
        counts[t][dst, src] += 1  # outgoing block: column = source grid
        counts[t][n + src, dst] += 1  # incoming block: column = destination grid
    if report.trips_used == 0:
        raise EmptyDatasetError("no usable trips after filtering")
    return [FeatureMatrix(t=t, data=c) for t, c in enumerate(counts)], report


def build_adjacency(grid: GridSpec) -> AdjacencyGraph:
    """4-connectivity edges between masked cells sharing a side."""
    edges = set()
    for iy in range(grid.ny):
        for ix in range(grid.nx):
            here = grid.cell_index(ix, iy)
            if here is None:
                continue
            for jx, jy in ((ix + 1, iy), (ix, iy + 1)):
                there = grid.cell_index(jx, jy)
                if there is not None:
                    edges.add((min(here, there), max(here, there)))
    return AdjacencyGraph(n=grid.n_cells, edges=frozenset(edges))


def bearing_degrees(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Bearing from point 1 to point 2: north = 0, clockwise, in [0, 360).

    Uses a local equirectangular approximation (delta-lon scaled by cos of the
    mean latitude), adequate at city scale.
    """
    mean_lat = math.radians((lat1 + lat2) / 2.0)
    dx = (lon2 - lon1) * math.cos(mean_lat)
    dy = lat2 - lat1
    return math.degrees(math.atan2(dx, dy)) % 360.0


def build_flow_histograms(
    trips: Iterable[TripRecord], grid: GridSpec, bins: TimeBinning
) -> tuple[list[list[FlowHistogram]], IngestReport]:
    """Per-bin, per-grid 72-direction histograms of cell-center bearings.

    A trip increments the pickup grid's out_bins and the dropoff grid's in_bins
    at bin floor(bearing / 5) mod 72; same-cell trips only increment intra.
    """
    n = grid.n_cells
    report = IngestReport()
    out = np.zeros((bins.n_bins, n, N_DIRECTION_BINS), dtype=np.int64)
    inc = np.zeros((bins.n_bins, n, N_DIRECTION_BINS), dtype=np.int64)
    intra = np.zeros((bins.n_bins, n), dtype=np.int64)
    centers = [grid.cell_center(i) for i in range(n)]
    for t, src, dst in _usable_trips(trips, grid, bins, report):
        if src == dst:
            intra[t, src] += 1
            continue
        bearing = bearing_degrees(*centers[src], *centers[dst])
        b = int(math.floor(bearing / DEGREES_PER_BIN)) % N_DIRECTION_BINS
        out[t, src, b] += 1
        # Direction is kept from the mover's perspective at both endpoints.
        inc[t, dst, b] += 1
    return [
        [
            FlowHistogram(grid=g, t=t, out_bins=out[t, g], in_bins=inc[t, g], intra=int(intra[t, g]))
            for g in range(n)
        ]
        for t in range(bins.n_bins)
    ], report


def parse_timestamp(raw: str) -> float:
    """Parse an ISO-8601 datetime or epoch seconds into UTC epoch seconds."""
    text = raw.strip()
    if not text:
        raise InvalidInputError("empty timestamp")
    try:
        return float(text)
    except ValueError:
        pass
    normalized = text.replace("Z", "+00:00")
    if " " in normalized and "T" not in normalized:
        normalized = normalized.replace(" ", "T", 1)
    try:
        dt = datetime.fromisoformat(normalized)
    except ValueError as exc:
        raise InvalidInputError(f"unparsable timestamp {raw!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def read_trips_csv(path: str) -> Iterator[TripRecord | str]:
    """Stream TripRecords from a CSV file; malformed rows yield a reason string.

    The header must contain the six canonical columns; a missing column is a
    hard error naming it.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in REQUIRED_CSV_COLUMNS:
            if column not in header:
                raise InvalidInputError(f"missing required column {column!r}")
        for row in reader:
            try:
                yield TripRecord(
                    pickup_time=parse_timestamp(row["pickup_datetime"]),
                    dropoff_time=parse_timestamp(row["dropoff_datetime"]),
                    pickup_lon=float(row["pickup_longitude"]),
                    pickup_lat=float(row["pickup_latitude"]),
                    dropoff_lon=float(row["dropoff_longitude"]),
                    dropoff_lat=float(row["dropoff_latitude"]),
                )
            except (InvalidInputError, ValueError, TypeError):
                yield "malformed_row"


def split_trip_stream(
    parsed: Iterable[TripRecord | str], report: IngestReport
) -> Iterator[TripRecord]:
    """Pass through TripRecords, folding reason strings into the report."""
    for item in parsed:
        if isinstance(item, str):
            report.rows_read += 1
            report.skip(item)
        else:
            yield item
