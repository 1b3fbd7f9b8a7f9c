"""Condition-level evaluation of the learned vocabulary.

Token distributions are compared with base-2 Jensen-Shannon divergence
(1.0 means fully disjoint support), latent geometry with silhouette and
centroid-outlier measures, and queenless structure with k-means sub-states
over the full 128-dim latents plus a PCA projection for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import streams
from .errors import ParameterError, ShapeError

ACTIVITY_THRESHOLD = 0.001  # usage fraction for an "active" token
SILHOUETTE_SAMPLE = 5000
KMEANS_RESTARTS = 10
KMEANS_TOL = 1e-6
KMEANS_MAX_ITER = 100
JSD_STABLE_BELOW = 0.2
JSD_SHIFTED_ABOVE = 0.3


@dataclass(frozen=True)
class TokenDistribution:
    """Per-condition token usage frequencies plus the active-token set."""

    label: str
    probabilities: np.ndarray
    active: tuple
    total_frames: int

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1:
            raise ShapeError("probabilities must be a vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ParameterError("probabilities must be non-negative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @property
    def n_tokens(self) -> int:
        return int(self.probabilities.shape[0])

    @property
    def entropy_bits(self) -> float:
        return shannon_entropy(self)

    @property
    def top_token(self) -> int:
        return int(np.argmax(self.probabilities))

    @property
    def top_token_fraction(self) -> float:
        return float(self.probabilities.max())


def token_distribution(
    label: str,
    token_sequences,
    n_tokens: int,
    activity_threshold: float = ACTIVITY_THRESHOLD,
) -> TokenDistribution:
    """Aggregate usage over recordings of one condition."""
    counts = np.zeros(n_tokens, dtype=np.int64)
    for seq in token_sequences:
        tokens = np.asarray(seq.tokens if hasattr(seq, "tokens") else seq, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= n_tokens):
            raise ParameterError(f"token id out of range for space of {n_tokens}")
        counts += np.bincount(tokens, minlength=n_tokens)
    total = int(counts.sum())
    if total == 0:
        raise ParameterError(f"condition {label!r} has no frames")
    p = counts / total
    active = tuple(int(i) for i in np.flatnonzero(p >= activity_threshold))
    return TokenDistribution(label=label, probabilities=p, active=active, total_frames=total)


def _dist_array(d) -> np.ndarray:
    if isinstance(d, TokenDistribution):
        return d.probabilities
    return np.asarray(d, dtype=np.float64)


def jsd(p, q) -> float:
    """Base-2 Jensen-Shannon divergence; 0 identical, 1 fully disjoint."""
    pa, qa = _dist_array(p), _dist_array(q)
    if pa.shape != qa.shape:
        raise ShapeError(f"distributions disagree on token space: {pa.shape} vs {qa.shape}")
    m = 0.5 * (pa + qa)

    def kl(a):
        nz = a > 0
        return float((a[nz] * np.log2(a[nz] / m[nz])).sum())

    return 0.5 * kl(pa) + 0.5 * kl(qa)


def shannon_entropy(p) -> float:
    """Entropy of a token distribution, in bits."""
    pa = _dist_array(p)
    nz = pa[pa > 0]
    return float(-(nz * np.log2(nz)).sum())


def silhouette_two_conditions(latents_a, latents_b, sample_size: int = SILHOUETTE_SAMPLE, seed: int = 0) -> float:
    """Silhouette score with the two conditions as clusters.

    Euclidean distance over a seed-fixed subsample of up to ``sample_size``
    points per condition.
    """
    a = np.asarray(latents_a, dtype=np.float64)
    b = np.asarray(latents_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("latents must be 2-D with a common dimension")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ParameterError("each condition needs at least 2 points")
    rng = streams.stream(seed, streams.SILHOUETTE)
    if a.shape[0] > sample_size:
        a = a[np.sort(rng.choice(a.shape[0], size=sample_size, replace=False))]
    if b.shape[0] > sample_size:
        b = b[np.sort(rng.choice(b.shape[0], size=sample_size, replace=False))]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ParameterError("subsample left a condition with fewer than 2 points")

    def dist_sums(points, others, chunk=512):
        out = np.empty(points.shape[0])
        for start in range(0, points.shape[0], chunk):
            stop = min(start + chunk, points.shape[0])
            diff = points[start:stop, None, :] - others[None, :, :]
            out[start:stop] = np.sqrt((diff * diff).sum(axis=2)).sum(axis=1)
        return out

    scores = []
    for own, other in ((a, b), (b, a)):
        a_i = dist_sums(own, own) / (own.shape[0] - 1)  # self-distance is zero
        b_i = dist_sums(own, other) / other.shape[0]
        denom = np.maximum(a_i, b_i)
        s = np.where(denom > 0, (b_i - a_i) / np.where(denom > 0, denom, 1.0), 0.0)
        scores.append(s)
    return float(np.concatenate(scores).mean())


def outlier_fraction(latents_qnl, centroid_qr, centroid_qnl) -> float:
    """Fraction of queenless latents strictly closer to the queenright centroid."""
    x = np.asarray(latents_qnl, dtype=np.float64)
    cq = np.asarray(centroid_qr, dtype=np.float64)
    cn = np.asarray(centroid_qnl, dtype=np.float64)
    if not (np.all(np.isfinite(cq)) and np.all(np.isfinite(cn))):
        raise ParameterError("centroids must be finite")
    d_qr = ((x - cq) ** 2).sum(axis=1)
    d_qnl = ((x - cn) ** 2).sum(axis=1)
    return float((d_qr < d_qnl).mean())


@dataclass(frozen=True)
class KmeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator) -> KmeansResult:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = int(rng.choice(n, p=probs))
        else:
            idx = int(np.argmin(d2))  # all points identical: deterministic pick
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))

    prev_inertia = np.inf
    assignments = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        diff = x[:, None, :] - centroids[None, :, :]
        dists = (diff * diff).sum(axis=2)
        assignments = dists.argmin(axis=1)
        inertia = float(dists[np.arange(n), assignments].sum())
        # Lloyd steps never increase the objective
        assert inertia <= prev_inertia * (1.0 + 1e-12) + 1e-12
        if inertia == 0.0:
            break
        for j in range(k):
            members = assignments == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
            else:
                # adopt the point farthest from its centroid
                worst = int(np.argmax(dists[np.arange(n), assignments]))
                centroids[j] = x[worst]
        if prev_inertia - inertia <= KMEANS_TOL:
            break
        prev_inertia = inertia
    diff = x[:, None, :] - centroids[None, :, :]
    dists = (diff * diff).sum(axis=2)
    assignments = dists.argmin(axis=1)
    inertia = float(dists[np.arange(n), assignments].sum())
    return KmeansResult(assignments=assignments, centroids=centroids, inertia=inertia)


def kmeans(latents, k: int, seed: int = 0, restarts: int = KMEANS_RESTARTS) -> KmeansResult:
    """k-means++ with Lloyd iterations; best of ``restarts`` by inertia."""
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("latents must be 2-D")
    if k < 1:
        raise ParameterError("k must be positive")
    if x.shape[0] < k:
        raise ParameterError(f"need at least k={k} points, got {x.shape[0]}")
    best = None
    for r in range(restarts):
        rng = streams.stream(seed, streams.KMEANS, epoch=r)
        result = _kmeans_once(x, k, rng)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


@dataclass(frozen=True)
class SubStateCluster:
    size_fraction: float
    size_pct: float
    dominant_token: int
    purity: float
    purity_pct: float
    token_mix: dict


@dataclass(frozen=True)
class SubStateReport:
    """Clusters ordered by descending size; fractions sum to one."""

    clusters: tuple
    assignments: np.ndarray


def substate_report(assignments, tokens) -> SubStateReport:
    """Characterize each cluster by size, dominant token, and purity."""
    assignments = np.asarray(assignments, dtype=np.int64)
    token_arr = np.asarray(tokens.tokens if hasattr(tokens, "tokens") else tokens, dtype=np.int64)
    if assignments.shape != token_arr.shape:
        raise ShapeError(f"assignments {assignments.shape} vs tokens {token_arr.shape}")
    if assignments.size == 0:
        raise ParameterError("empty assignment")
    total = assignments.size
    cluster_ids = np.unique(assignments)
    order = sorted(
        cluster_ids.tolist(),
        key=lambda c: (-(assignments == c).sum(), c),
    )
    clusters = []
    for c in order:
        members = token_arr[assignments == c]
        n = members.size
        counts = np.bincount(members)
        dominant = int(np.argmax(counts))
        mix = {int(t): int(counts[t]) / n for t in np.flatnonzero(counts)}
        clusters.append(
            SubStateCluster(
                size_fraction=n / total,
                size_pct=n * 100.0 / total,
                dominant_token=dominant,
                purity=int(counts[dominant]) / n,
                purity_pct=int(counts[dominant]) * 100.0 / n,
                token_mix=mix,
            )
        )
    return SubStateReport(clusters=tuple(clusters), assignments=assignments)


def pca_project(latents, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean-centered PCA via symmetric eigendecomposition of the covariance.

    Components are ordered by descending eigenvalue with signs fixed so the
    largest-magnitude coordinate of each component is positive.  Zero
    variance yields an all-zero projection with zero explained fractions.
    """
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("latents must be 2-D")
    n, d = x.shape
    if n < 2:
        raise ParameterError("PCA needs at least 2 points")
    if not 1 <= n_components <= d:
        raise ParameterError(f"n_components must lie in [1, {d}], got {n_components}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals[::-1], 0.0)
    eigvecs = eigvecs[:, ::-1]
    total = eigvals.sum()
    if total == 0.0:
        return np.zeros((n, n_components)), np.zeros(n_components)
    comps = eigvecs[:, :n_components].copy()
    for j in range(n_components):
        pivot = int(np.argmax(np.abs(comps[:, j])))
        if comps[pivot, j] < 0:
            comps[:, j] = -comps[:, j]
    projection = xc @ comps
    explained = eigvals[:n_components] / total
    return projection, explained


def feature_deviation_profile(frames_by_substate: dict) -> dict:
    """Per-substate deviation of the mean frame from the pooled mean."""
    if not frames_by_substate:
        raise ParameterError("no substates given")
    sums = {}
    counts = {}
    for label, frames in frames_by_substate.items():
        arr = np.asarray(frames, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ParameterError(f"substate {label!r} is empty")
        sums[label] = arr.sum(axis=0)
        counts[label] = arr.shape[0]
    overall = sum(sums.values()) / sum(counts.values())
    return {label: sums[label] / counts[label] - overall for label in frames_by_substate}


@dataclass(frozen=True)
class GeneralizationResult:
    jaccard: float
    jsd: float
    verdict: str


def generalization_metrics(train_dist: TokenDistribution, test_dist: TokenDistribution) -> GeneralizationResult:
    """Active-set Jaccard overlap plus distribution shift with a verdict.

    JSD below 0.2 reads as stable generalization, above 0.3 as a
    significant shift, anything between as intermediate.
    """
    if train_dist.n_tokens != test_dist.n_tokens:
        raise ShapeError("distributions disagree on token space")
    a, b = set(train_dist.active), set(test_dist.active)
    union = a | b
    jac = len(a & b) / len(union) if union else 1.0
    div = jsd(train_dist, test_dist)
    if div < JSD_STABLE_BELOW:
        verdict = "stable"
    elif div > JSD_SHIFTED_ABOVE:
        verdict = "shifted"
    else:
        verdict = "intermediate"
    return GeneralizationResult(jaccard=jac, jsd=div, verdict=verdict)
