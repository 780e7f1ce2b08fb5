"""Track latent regions across frames and build the Sankey evolution graph.

Color labels persist through a maximum-weight bipartite matching on shared
grid counts between consecutive frames (Kuhn-Munkres). Sankey links carry
every positive overlap; the matching controls only which labels are inherited.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .regions import SegmentationFrame


@dataclass
class OverlapGraph:
    t: int  # bin index of the right (current) frame
    left: list[int]
    right: list[int]
    weights: dict[tuple[int, int], int]


@dataclass
class ColorAssignment:
    labels: dict[int, int]  # region id -> persistent color label
    next_label: int  # watermark so retired labels are never reused


@dataclass
class EvolutionGraph:
    nodes: list[dict]  # {t, id, label, size}
    links: list[dict]  # {t (left frame), src, dst, width}

    def to_json_obj(self) -> dict:
        return {"nodes": self.nodes, "links": self.links}


def overlap(prev: SegmentationFrame, cur: SegmentationFrame) -> OverlapGraph:
    """Shared-grid counts between every region pair of two consecutive frames."""
    if prev.n_grids != cur.n_grids:
        raise InvalidInputError(
            f"grid count mismatch: {prev.n_grids} vs {cur.n_grids}"
        )
    prev_of = prev.region_of()
    cur_of = cur.region_of()
    weights: dict[tuple[int, int], int] = {}
    for g in range(prev.n_grids):
        key = (int(prev_of[g]), int(cur_of[g]))
        weights[key] = weights.get(key, 0) + 1
    return OverlapGraph(
        t=cur.t,
        left=[r.id for r in prev.regions],
        right=[r.id for r in cur.regions],
        weights=weights,
    )


def max_weight_assignment(weights: np.ndarray) -> list[tuple[int, int]]:
    """Optimal one-to-one assignment maximizing total weight (Kuhn-Munkres).

    The matrix is padded with zeros to square, so rectangular instances are
    fine; pairs involving padding are dropped from the result. Among equally
    optimal matchings the one preferring lower (row, column) ids wins, enforced
    by a lexicographic perturbation too small to change the optimal total.
    """
    weights = np.asarray(weights, dtype=np.float64)
    nl, nr = weights.shape
    n = max(nl, nr)
    # Tie-break: subtract eps*(row-major rank); eps small enough that even the
    # worst-case perturbation sum cannot flip a strictly better total.
    gap = 1.0  # grid-count weights are integers
    eps = gap / (2.0 * max(n * n * n, 1))
    cost = np.zeros((n, n))
    cost[:nl, :nr] = -(weights - eps * (np.arange(nl)[:, None] * nr + np.arange(nr)[None, :]))

    # Shortest augmenting path with potentials (O(n^3) Hungarian, min cost).
    INF = float("inf")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    way = np.zeros(n + 1, dtype=int)
    match_col = np.zeros(n + 1, dtype=int)  # column -> row (1-based, 0 = free)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1

    pairs = []
    for j in range(1, n + 1):
        i = match_col[j]
        if 1 <= i <= nl and 1 <= j <= nr:
            pairs.append((int(i - 1), int(j - 1)))
    pairs.sort()
    return pairs


def match_colors(g: OverlapGraph, prev_colors: ColorAssignment) -> ColorAssignment:
    """Propagate labels through the max-weight matching on overlap counts.

    Matched right regions inherit the left label when the matched overlap is
    positive; everything else gets a fresh label above the running watermark.
    """
    for rid in g.left:
        if rid not in prev_colors.labels:
            raise InvalidInputError(f"previous colors missing region {rid}")
    labels: dict[int, int] = {}
    next_label = prev_colors.next_label
    if g.left and g.right:
        wmat = np.zeros((len(g.left), len(g.right)))
        left_pos = {rid: i for i, rid in enumerate(g.left)}
        right_pos = {rid: j for j, rid in enumerate(g.right)}
        for (l, r), w in g.weights.items():
            if l in left_pos and r in right_pos and w > 0:
                wmat[left_pos[l], right_pos[r]] = w
        for i, j in max_weight_assignment(wmat):
            if wmat[i, j] > 0:
                labels[g.right[j]] = prev_colors.labels[g.left[i]]
    for rid in g.right:
        if rid not in labels:
            labels[rid] = next_label
            next_label += 1
    return ColorAssignment(labels=labels, next_label=next_label)


def seed_colors(
    frame: SegmentationFrame, seed_labels: dict[int, int] | None = None
) -> ColorAssignment:
    """First-frame labels: region-id order, or an externally supplied map."""
    if seed_labels is not None:
        labels = {r.id: seed_labels[r.id] for r in frame.regions}
    else:
        labels = {r.id: r.id for r in frame.regions}
    next_label = max(labels.values(), default=-1) + 1
    return ColorAssignment(labels=labels, next_label=next_label)


def build_evolution(
    frames: list[SegmentationFrame],
    seed_labels: dict[int, int] | None = None,
) -> EvolutionGraph:
    """Nodes with persistent colors per frame; links for all positive overlaps."""
    if not frames:
        raise InvalidInputError("no segmentation frames")
    colors = seed_colors(frames[0], seed_labels)
    assignments = [colors]
    links: list[dict] = []
    for prev, cur in zip(frames, frames[1:]):
        g = overlap(prev, cur)
        colors = match_colors(g, colors)
        assignments.append(colors)
        for (l, r), w in sorted(g.weights.items()):
            if w > 0:
                links.append({"t": prev.t, "src": l, "dst": r, "width": w})
    nodes = []
    for frame, assignment in zip(frames, assignments):
        for region in frame.regions:
            region.color = assignment.labels[region.id]
            nodes.append(
                {
                    "t": frame.t,
                    "id": region.id,
                    "label": assignment.labels[region.id],
                    "size": len(region.grids),
                }
            )
    return EvolutionGraph(nodes=nodes, links=links)
