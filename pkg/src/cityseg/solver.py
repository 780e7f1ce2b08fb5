"""Temporally and spatially smoothed orthogonal NMF over a feature-matrix series.

Each frame minimizes

    ||X_t - W_t H_t'||_F^2
      + alpha ||W_{t-1} - W_t M_t'||_F^2
      + beta  ||H_{t-1} - H_t M_t'||_F^2
      + lam   sum_{(i,j) in E} ||h_i - h_j||^2        (each edge counted once)

over W_t >= 0 (near-orthonormal columns), H_t >= 0, M_t >= 0, by cyclic
W -> H -> M block updates. H uses a graph-regularized multiplicative update and
M an exact nonnegative least-squares solve, so neither can increase the
objective. W uses a multiplicative update carrying an orthogonality penalty
mu ||W'W - I||_F^2; a damping exponent on the update ratio is halved until the
penalized objective does not increase, and a whole cycle that fails to improve
the reported objective is rolled back, which makes the reported trace
non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import InvalidInputError, NumericalFailureError
from .ingest import AdjacencyGraph, FeatureMatrix

_EPS = 1e-12
_DAMPING_FLOOR = 1.0 / 1024.0


@dataclass(frozen=True)
class HyperParams:
    """Solver knobs. alpha/beta couple consecutive frames, lam smooths space.

    ortho_weight scales the orthogonality penalty on W (0 disables both the
    penalty and the final projection). Values are taken literally; use
    auto_hyperparams to derive scale-matched defaults from a dataset.
    """

    alpha: float = 0.0
    beta: float = 0.0
    lam: float = 0.0
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0
    ortho_weight: float = 0.0
    ortho_tol: float = 0.05
    k_max: int = 12
    scale_x: bool = False
    record_blocks: bool = False

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lam, self.ortho_weight) < 0:
            raise InvalidInputError("alpha, beta, lam, ortho_weight must be >= 0")
        if self.tol <= 0:
            raise InvalidInputError("tol must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be at least 1")


@dataclass
class FactorizationFrame:
    """Factors and diagnostics for one time bin."""

    t: int
    K: int
    W: np.ndarray
    H: np.ndarray
    M: np.ndarray | None
    objective_trace: list[float] = field(default_factory=list)
    term_values: dict[str, float] = field(default_factory=dict)
    ortho_residual: float = float("nan")
    diagnostics: dict = field(default_factory=dict)


@dataclass
class LaplacianCache:
    """Dense adjacency/degree/Laplacian arrays for the spatial term."""

    graph: AdjacencyGraph
    A: np.ndarray
    degree: np.ndarray
    L: np.ndarray

    @classmethod
    def from_graph(cls, graph: AdjacencyGraph) -> "LaplacianCache":
        A = graph.to_matrix()
        degree = graph.degrees()
        return cls(graph=graph, A=A, degree=degree, L=np.diag(degree) - A)

    def edge_sum(self, H: np.ndarray) -> float:
        """sum over unordered edges of ||h_i - h_j||^2 == trace(H' L H)."""
        total = 0.0
        for i, j in self.graph.edges:
            diff = H[i] - H[j]
            total += float(diff @ diff)
        return total


def _as_array(X: FeatureMatrix | np.ndarray) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return np.asarray(X.data, dtype=np.float64)
    return np.asarray(X, dtype=np.float64)


def preprocess_features(X: np.ndarray) -> np.ndarray:
    """Optional log1p + column normalization for heavy-tailed counts."""
    Xs = np.log1p(X)
    norms = np.linalg.norm(Xs, axis=0)
    norms[norms == 0] = 1.0
    return Xs / norms


def objective(
    X: FeatureMatrix | np.ndarray,
    frame: FactorizationFrame,
    prev: FactorizationFrame | None,
    A: AdjacencyGraph | LaplacianCache,
    hp: HyperParams,
) -> float:
    """The four-term objective; temporal terms are zero without a prev frame."""
    terms = objective_terms(X, frame, prev, A, hp)
    return sum(terms.values())


def objective_terms(
    X: FeatureMatrix | np.ndarray,
    frame: FactorizationFrame,
    prev: FactorizationFrame | None,
    A: AdjacencyGraph | LaplacianCache,
    hp: HyperParams,
) -> dict[str, float]:
    Xa = _as_array(X)
    W, H, M = frame.W, frame.H, frame.M
    n2, n = Xa.shape
    if W.shape[0] != n2 or H.shape[0] != n or W.shape[1] != H.shape[1]:
        raise InvalidInputError(
            f"dimension mismatch: X {Xa.shape}, W {W.shape}, H {H.shape}"
        )
    if (prev is None) != (M is None) and hp.alpha + hp.beta > 0:
        raise InvalidInputError("transition matrix must be present iff prev is")
    lap = A if isinstance(A, LaplacianCache) else LaplacianCache.from_graph(A)
    recon = float(np.linalg.norm(Xa - W @ H.T) ** 2)
    temporal_w = 0.0
    temporal_h = 0.0
    if prev is not None and M is not None:
        if M.shape != (prev.K, frame.K):
            raise InvalidInputError(
                f"transition matrix must be {prev.K}x{frame.K}, got {M.shape}"
            )
        temporal_w = hp.alpha * float(np.linalg.norm(prev.W - W @ M.T) ** 2)
        temporal_h = hp.beta * float(np.linalg.norm(prev.H - H @ M.T) ** 2)
    spatial = hp.lam * float(np.trace(H.T @ lap.L @ H)) if hp.lam > 0 else 0.0
    return {
        "reconstruction": recon,
        "temporal_w": temporal_w,
        "temporal_h": temporal_h,
        "spatial": spatial,
    }


def _ortho_penalty(W: np.ndarray, mu: float) -> float:
    if mu == 0:
        return 0.0
    gram = W.T @ W
    return mu * float(np.linalg.norm(gram - np.eye(W.shape[1])) ** 2)


def ortho_residual(W: np.ndarray) -> float:
    """max |W'W - I|, the reported orthogonality defect."""
    gram = W.T @ W
    return float(np.max(np.abs(gram - np.eye(W.shape[1]))))


def _nndsvd(X: np.ndarray, K: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Nonnegative double-SVD seeding; zero entries get small seeded jitter."""
    n2, n = X.shape
    U, S, Vt = np.linalg.svd(X, full_matrices=False)
    W = np.zeros((n2, K))
    H = np.zeros((n, K))
    W[:, 0] = np.sqrt(S[0]) * np.abs(U[:, 0])
    H[:, 0] = np.sqrt(S[0]) * np.abs(Vt[0])
    for k in range(1, min(K, len(S))):
        u, v = U[:, k], Vt[k]
        up, un = np.maximum(u, 0), np.maximum(-u, 0)
        vp, vn = np.maximum(v, 0), np.maximum(-v, 0)
        pos = np.linalg.norm(up) * np.linalg.norm(vp)
        neg = np.linalg.norm(un) * np.linalg.norm(vn)
        if pos >= neg:
            cu, cv, sigma = up, vp, pos
        else:
            cu, cv, sigma = un, vn, neg
        if sigma > 0:
            scale = np.sqrt(S[k] * sigma)
            W[:, k] = scale * cu / np.linalg.norm(cu)
            H[:, k] = scale * cv / np.linalg.norm(cv)
    jitter = X[X > 0].mean() / 100.0 if np.any(X > 0) else 1e-4
    W[W <= 0] = jitter * rng.random(np.count_nonzero(W <= 0))
    H[H <= 0] = jitter * rng.random(np.count_nonzero(H <= 0))
    return W, H


def _normalize_columns(W: np.ndarray, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale W's columns to unit norm, folding the scales into H (WH' unchanged)."""
    norms = np.linalg.norm(W, axis=0)
    norms[norms == 0] = 1.0
    return W / norms, H * norms


def init_frame(X: FeatureMatrix | np.ndarray, K: int, seed: int) -> FactorizationFrame:
    """Deterministic nonnegative seeding of (W, H) from X's top-K singular pairs."""
    Xa = _as_array(X)
    n2, n = Xa.shape
    if not (1 <= K <= min(n2, n)):
        raise InvalidInputError(f"K={K} outside [1, {min(n2, n)}]")
    rng = np.random.default_rng(seed)
    W, H = _nndsvd(Xa, K, rng)
    W, H = _normalize_columns(W, H)
    t = X.t if isinstance(X, FeatureMatrix) else 0
    return FactorizationFrame(t=t, K=K, W=W, H=H, M=None)


def _update_h(
    X: np.ndarray,
    W: np.ndarray,
    H: np.ndarray,
    M: np.ndarray | None,
    H_prev: np.ndarray | None,
    lap: LaplacianCache,
    hp: HyperParams,
) -> np.ndarray:
    """Graph-regularized multiplicative update; never increases the objective."""
    numer = X.T @ W
    denom = H @ (W.T @ W)
    if hp.beta > 0 and M is not None and H_prev is not None:
        numer = numer + hp.beta * (H_prev @ M)
        denom = denom + hp.beta * (H @ (M.T @ M))
    if hp.lam > 0:
        numer = numer + hp.lam * (lap.A @ H)
        denom = denom + hp.lam * (lap.degree[:, None] * H)
    return H * (numer / np.maximum(denom, _EPS))


def _update_m(
    W: np.ndarray,
    H: np.ndarray,
    W_prev: np.ndarray,
    H_prev: np.ndarray,
    hp: HyperParams,
) -> np.ndarray:
    """Exact NNLS minimizer of the two temporal terms over M (K_prev x K)."""
    k_prev = W_prev.shape[1]
    k = W.shape[1]
    sa, sb = np.sqrt(hp.alpha), np.sqrt(hp.beta)
    design = np.vstack([sa * W, sb * H])
    targets = np.vstack([sa * W_prev, sb * H_prev])
    G = np.zeros((k, k_prev))
    for j in range(k_prev):
        G[:, j], _ = nnls(design, targets[:, j])
    return G.T


def _update_w(
    X: np.ndarray,
    W: np.ndarray,
    H: np.ndarray,
    M: np.ndarray | None,
    W_prev: np.ndarray | None,
    hp: HyperParams,
    mu: float,
    penalized_obj: Callable[[np.ndarray], float],
) -> np.ndarray:
    """Multiplicative W step with orthogonality penalty, damped until monotone."""
    numer = X @ H
    denom = W @ (H.T @ H)
    if hp.alpha > 0 and M is not None and W_prev is not None:
        numer = numer + hp.alpha * (W_prev @ M)
        denom = denom + hp.alpha * (W @ (M.T @ M))
    if mu > 0:
        numer = numer + 4.0 * mu * W
        denom = denom + 4.0 * mu * (W @ (W.T @ W))
    ratio = numer / np.maximum(denom, _EPS)
    before = penalized_obj(W)
    gamma = 1.0
    while gamma >= _DAMPING_FLOOR:
        candidate = W * np.power(ratio, gamma)
        if penalized_obj(candidate) <= before + 1e-12 * max(1.0, before):
            return candidate
        gamma /= 2.0
    return W


def solve_frame(
    X: FeatureMatrix | np.ndarray,
    prev: FactorizationFrame | None,
    A: AdjacencyGraph | LaplacianCache,
    K: int,
    hp: HyperParams,
) -> FactorizationFrame:
    """Block coordinate descent on one frame until the objective stalls.

    The returned trace holds the reported (four-term) objective after each
    W/H/M cycle and is non-increasing; a cycle that would raise it is rolled
    back and iteration stops. With ortho_weight > 0 the converged W is
    projected to near-orthonormal nonnegative columns afterwards; the residual
    and the post-projection objective are recorded in diagnostics rather than
    the trace.
    """
    Xa = _as_array(X)
    if hp.scale_x:
        Xa = preprocess_features(Xa)
    if np.any(Xa < 0):
        raise InvalidInputError("feature matrix must be nonnegative")
    lap = A if isinstance(A, LaplacianCache) else LaplacianCache.from_graph(A)
    if lap.A.shape[0] != Xa.shape[1]:
        raise InvalidInputError(
            f"adjacency size {lap.A.shape[0]} != grid count {Xa.shape[1]}"
        )
    t = X.t if isinstance(X, FeatureMatrix) else (prev.t + 1 if prev else 0)

    frame = init_frame(Xa, K, hp.seed)
    W, H = frame.W, frame.H
    W_prev = prev.W if prev is not None else None
    H_prev = prev.H if prev is not None else None
    M = None
    if prev is not None:
        M = _update_m(W, H, W_prev, H_prev, hp) if hp.alpha + hp.beta > 0 else np.eye(prev.K, K)

    mu = hp.ortho_weight * float(np.linalg.norm(Xa) ** 2) / max(K, 1)

    def reported(Wc, Hc, Mc) -> float:
        probe = FactorizationFrame(t=t, K=K, W=Wc, H=Hc, M=Mc)
        return objective(Xa, probe, prev, lap, hp)

    def penalized(Wc: np.ndarray) -> float:
        recon = float(np.linalg.norm(Xa - Wc @ H.T) ** 2)
        temporal = 0.0
        if prev is not None and hp.alpha > 0:
            temporal = hp.alpha * float(np.linalg.norm(W_prev - Wc @ M.T) ** 2)
        return recon + temporal + _ortho_penalty(Wc, mu)

    trace: list[float] = []
    block_trace: list[tuple[str, float]] = []
    current = reported(W, H, M)
    initial = current
    for iteration in range(hp.max_iters):
        W_old, H_old, M_old = W, H, M
        W = _update_w(Xa, W, H, M, W_prev, hp, mu, penalized)
        if hp.record_blocks:
            block_trace.append(("W", reported(W, H, M)))
        H = _update_h(Xa, W, H, M, H_prev, lap, hp)
        if hp.record_blocks:
            block_trace.append(("H", reported(W, H, M)))
        if prev is not None and hp.alpha + hp.beta > 0:
            M = _update_m(W, H, W_prev, H_prev, hp)
            if hp.record_blocks:
                block_trace.append(("M", reported(W, H, M)))
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(H))):
            raise NumericalFailureError(
                f"non-finite factor values at iteration {iteration}", iteration
            )
        value = reported(W, H, M)
        if value > current * (1.0 + 1e-9) + 1e-12:
            # The orthogonality penalty can no longer progress without hurting
            # the reported objective; keep the previous iterate and stop.
            W, H, M = W_old, H_old, M_old
            value = current
            trace.append(value)
            break
        trace.append(value)
        done = abs(current - value) <= hp.tol * max(initial, _EPS)
        current = value
        if done:
            break

    W, H = _normalize_columns(W, H)
    diagnostics: dict = {"initial_objective": initial, "iterations": len(trace)}
    if hp.record_blocks:
        diagnostics["block_trace"] = block_trace
    resid = ortho_residual(W)
    if mu > 0:
        diagnostics["ortho_residual_pre_projection"] = resid
        W = project_orthonormal(W, hp.ortho_tol)
        H = _update_h(Xa, W, H, M, H_prev, lap, hp)
        if prev is not None and hp.alpha + hp.beta > 0:
            M = _update_m(W, H, W_prev, H_prev, hp)
        resid = ortho_residual(W)

    zero_grids = np.flatnonzero(~Xa.any(axis=0))
    if zero_grids.size:
        H = H.copy()
        H[zero_grids] = 1.0 / K
        diagnostics["zero_traffic_grids"] = zero_grids.tolist()

    frame = FactorizationFrame(
        t=t, K=K, W=W, H=H, M=M, objective_trace=trace, ortho_residual=resid,
        diagnostics=diagnostics,
    )
    frame.term_values = objective_terms(Xa, frame, prev, lap, hp)
    if mu > 0:
        diagnostics["post_projection_objective"] = sum(frame.term_values.values())
    return frame


def project_orthonormal(W: np.ndarray, tol: float, max_rounds: int = 12) -> np.ndarray:
    """Alternate polar projection and clipping toward nonneg orthonormal columns.

    The polar factor W (W'W)^(-1/2) is the nearest orthonormal-column matrix;
    clipping restores nonnegativity and column rescaling restores unit norms.
    Stops once max |W'W - I| <= tol.
    """
    Wp = W
    for _ in range(max_rounds):
        if ortho_residual(Wp) <= tol:
            break
        gram = Wp.T @ Wp
        vals, vecs = np.linalg.eigh(gram)
        vals = np.maximum(vals, _EPS)
        inv_sqrt = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
        Wp = np.maximum(Wp @ inv_sqrt, 0.0)
        norms = np.linalg.norm(Wp, axis=0)
        norms[norms == 0] = 1.0
        Wp = Wp / norms
    return Wp


def _flat_mean_shift(points: np.ndarray, bandwidth: float, max_iters: int = 300,
                     tol_factor: float = 1e-3) -> np.ndarray:
    """Flat-kernel mean shift; returns the converged position of every point."""
    shifted = points.copy()
    if bandwidth <= 0:
        return shifted
    tol = tol_factor * bandwidth
    for _ in range(max_iters):
        dists = np.linalg.norm(shifted[:, None, :] - points[None, :, :], axis=2)
        within = dists <= bandwidth
        counts = within.sum(axis=1)
        means = (within.astype(float) @ points) / counts[:, None]
        move = np.linalg.norm(means - shifted, axis=1).max()
        shifted = means
        if move < tol:
            break
    return shifted


def _merge_modes(shifted: np.ndarray, radius: float) -> int:
    """Count distinct converged positions, merging any within radius."""
    modes: list[np.ndarray] = []
    for p in shifted:
        if not any(np.linalg.norm(p - m) <= radius for m in modes):
            modes.append(p)
    return len(modes)


def default_bandwidth(points: np.ndarray, quantile: float = 0.1,
                      headroom: float = 1.5, max_sample: int = 256) -> float:
    """Scaled low quantile of pairwise distances over a deterministic subsample.

    A low quantile lands inside the within-cluster distance distribution for
    balanced planted clusters (the median would straddle the separation and
    collapse distinct modes); the headroom factor lifts it clear of the
    distance concentration band so every point actually sees its neighbors.
    """
    n = len(points)
    if n < 2:
        return 0.0
    stride = max(1, n // max_sample)
    sample = points[::stride]
    diffs = sample[:, None, :] - sample[None, :, :]
    dists = np.linalg.norm(diffs, axis=2)
    upper = dists[np.triu_indices(len(sample), k=1)]
    return headroom * float(np.quantile(upper, quantile))


def choose_k(
    X: FeatureMatrix | np.ndarray,
    bandwidth: float | None = None,
    k_max: int = 12,
) -> int:
    """Mean-shift mode count over the L2-normalized grid feature columns."""
    Xa = _as_array(X)
    norms = np.linalg.norm(Xa, axis=0)
    nonzero = norms > 0
    if not np.any(nonzero):
        return 1
    points = (Xa[:, nonzero] / norms[nonzero]).T
    if bandwidth is None:
        bandwidth = default_bandwidth(points)
    if bandwidth <= 0:
        # All sampled distances zero: modes are the distinct columns.
        k = len(np.unique(np.round(points, 12), axis=0))
        return int(np.clip(k, 1, k_max))
    shifted = _flat_mean_shift(points, bandwidth)
    k = _merge_modes(shifted, bandwidth / 2.0)
    return int(np.clip(k, 1, k_max))


def one_h_update(
    X: FeatureMatrix | np.ndarray,
    W: np.ndarray,
    H: np.ndarray,
    A: AdjacencyGraph | LaplacianCache,
    hp: HyperParams,
    M: np.ndarray | None = None,
    H_prev: np.ndarray | None = None,
) -> np.ndarray:
    """One monotone H refresh against fixed W (used by override re-solve)."""
    lap = A if isinstance(A, LaplacianCache) else LaplacianCache.from_graph(A)
    return _update_h(_as_array(X), W, np.asarray(H, dtype=np.float64), M, H_prev, lap, hp)


def solve_series(
    Xs: Sequence[FeatureMatrix | np.ndarray],
    A: AdjacencyGraph | LaplacianCache,
    hp: HyperParams,
    K_override: Sequence[int] | None = None,
) -> list[FactorizationFrame]:
    """Solve frames in time order, feeding each result to the next as prev."""
    if len(Xs) == 0:
        raise InvalidInputError("empty feature-matrix series")
    if K_override is not None and len(K_override) != len(Xs):
        raise InvalidInputError("K_override length must match the series")
    lap = A if isinstance(A, LaplacianCache) else LaplacianCache.from_graph(A)
    frames: list[FactorizationFrame] = []
    prev: FactorizationFrame | None = None
    for t, X in enumerate(Xs):
        K = K_override[t] if K_override is not None else choose_k(X, k_max=hp.k_max)
        try:
            frame = solve_frame(X, prev, lap, K, hp)
        except NumericalFailureError as exc:
            raise NumericalFailureError(f"frame {t}: {exc}", exc.iteration) from exc
        frame.t = X.t if isinstance(X, FeatureMatrix) else t
        frames.append(frame)
        prev = frame
    return frames


def pattern_correlation(W: np.ndarray) -> np.ndarray:
    """Cosine similarity between pattern columns; zero columns yield zero rows."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] < 1:
        raise InvalidInputError("W must be a 2-D matrix with at least one column")
    norms = np.linalg.norm(W, axis=0)
    safe = np.where(norms == 0, 1.0, norms)
    C = (W / safe).T @ (W / safe)
    zero = norms == 0
    C[zero, :] = 0.0
    C[:, zero] = 0.0
    return C


def auto_hyperparams(
    Xs: Sequence[FeatureMatrix | np.ndarray],
    A: AdjacencyGraph,
    alpha_scale: float = 0.1,
    beta_scale: float = 0.1,
    lam_scale: float = 0.001,
    ortho_weight: float = 0.01,
    k_ref: int | None = None,
    **kwargs,
) -> HyperParams:
    """Scale-match the coupling weights to the dataset's reconstruction term.

    With unit-norm W columns the W-distance is O(K) while the H-distance and
    the Laplacian quadratic both carry the data's squared Frobenius mass, so
    alpha is scaled by mass/K, beta is taken as a dimensionless fraction, and
    lam by mass per adjacency edge. Resolved values land in the run manifest.
    """
    mass = float(np.mean([np.linalg.norm(_as_array(X)) ** 2 for X in Xs]))
    if k_ref is None:
        k_ref = max(1, int(np.median([choose_k(X) for X in Xs])))
    n_edges = max(len(A.edges), 1)
    return HyperParams(
        alpha=alpha_scale * mass / k_ref,
        beta=beta_scale,
        lam=lam_scale * mass / n_edges,
        ortho_weight=ortho_weight,
        **kwargs,
    )
