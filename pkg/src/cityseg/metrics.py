"""Cross-frame pattern alignment and stability metrics for solver output."""

from __future__ import annotations

import numpy as np

from .evolution import max_weight_assignment


def primary_labels(H: np.ndarray) -> np.ndarray:
    """Argmax pattern per grid, lowest index on ties."""
    return np.argmax(np.asarray(H, dtype=np.float64), axis=1)


def align_labels(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Relabel cur's pattern ids to best match prev's by shared-grid counts.

    Patterns with no counterpart keep fresh ids above both ranges, so churn
    counts them as changed grids.
    """
    prev = np.asarray(prev)
    cur = np.asarray(cur)
    nl = int(prev.max()) + 1 if prev.size else 0
    nr = int(cur.max()) + 1 if cur.size else 0
    if nl == 0 or nr == 0:
        return cur.copy()
    confusion = np.zeros((nl, nr))
    for a, b in zip(prev, cur):
        confusion[a, b] += 1
    mapping = {}
    for i, j in max_weight_assignment(confusion):
        if confusion[i, j] > 0:
            mapping[j] = i
    fresh = max(nl, nr)
    out = np.empty_like(cur)
    for idx, b in enumerate(cur):
        if b in mapping:
            out[idx] = mapping[b]
        else:
            out[idx] = fresh + b
    return out


def label_churn(primaries: list[np.ndarray]) -> int:
    """Total grids whose matched primary pattern changes between frames."""
    if len(primaries) < 2:
        return 0
    churn = 0
    aligned_prev = np.asarray(primaries[0])
    for cur in primaries[1:]:
        aligned_cur = align_labels(aligned_prev, np.asarray(cur))
        churn += int(np.sum(aligned_cur != aligned_prev))
        aligned_prev = aligned_cur
    return churn


def isolated_region_count(primary: np.ndarray, grid) -> int:
    """Number of single-grid latent regions in a primary labeling."""
    from .ingest import FeatureMatrix
    from .regions import segment

    primary = np.asarray(primary, dtype=int)
    n = len(primary)
    one_hot = np.eye(int(primary.max()) + 1)[primary]
    placeholder = FeatureMatrix(t=0, data=np.zeros((2 * n, n)))
    seg = segment(one_hot, placeholder, grid)
    return sum(1 for region in seg.regions if len(region.grids) == 1)
