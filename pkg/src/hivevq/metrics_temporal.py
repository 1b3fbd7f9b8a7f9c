"""Sequence-level evaluation: transition structure and chi-squared tests.

Transition counts accumulate over consecutive pairs within each recording
and never across recording boundaries.  The p-value routine evaluates the
regularized upper incomplete gamma function Q(df/2, x/2) with the classic
series / continued-fraction split, accurate to well under 1e-10 absolute
for the degrees of freedom used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError, ShapeError

ALPHA_PRIMARY = 0.05
ALPHA_STRICT = 0.001
LOW_COUNT_MULTIPLIER = 5  # flag rows with fewer than 5 observations per cell


@dataclass(frozen=True)
class TransitionModel:
    """First-order counts and row-normalized conditional probabilities."""

    counts: np.ndarray
    probs: np.ndarray
    active: tuple  # token ids with outgoing transitions
    self_transition_fraction: float

    @property
    def n_tokens(self) -> int:
        return int(self.counts.shape[0])


def build_transitions(sequences, n_tokens: int) -> TransitionModel:
    """Accumulate consecutive-pair counts within each recording."""
    if n_tokens < 1:
        raise ParameterError("n_tokens must be positive")
    counts = np.zeros((n_tokens, n_tokens), dtype=np.int64)
    for seq in sequences:
        tokens = np.asarray(seq.tokens if hasattr(seq, "tokens") else seq, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= n_tokens):
            raise DataError(f"token id outside [0, {n_tokens})")
        if tokens.size < 2:
            continue
        flat = tokens[:-1] * n_tokens + tokens[1:]
        counts += np.bincount(flat, minlength=n_tokens * n_tokens).reshape(n_tokens, n_tokens)
    total = int(counts.sum())
    row_sums = counts.sum(axis=1)
    probs = np.zeros((n_tokens, n_tokens), dtype=np.float64)
    nz = row_sums > 0
    probs[nz] = counts[nz] / row_sums[nz, None]
    active = tuple(int(i) for i in np.flatnonzero(nz))
    self_frac = float(np.trace(counts) / total) if total > 0 else 0.0
    return TransitionModel(
        counts=counts,
        probs=probs,
        active=active,
        self_transition_fraction=self_frac,
    )


@dataclass(frozen=True)
class TransitionEntropy:
    per_token: dict  # token id -> outgoing entropy in bits
    mean: float
    std: float
    h_max: float
    ratio: float


def transition_entropy(model: TransitionModel) -> TransitionEntropy:
    """Outgoing Shannon entropy per active token, normalized by log2 K_active."""
    if not model.active:
        raise ParameterError("no active tokens")
    per = {}
    for i in model.active:
        row = model.probs[i]
        nz = row[row > 0]
        per[i] = float(-(nz * np.log2(nz)).sum())
    values = np.array(list(per.values()))
    h_max = math.log2(len(model.active)) if len(model.active) > 1 else 0.0
    mean = float(values.mean())
    ratio = mean / h_max if h_max > 0 else 0.0
    return TransitionEntropy(
        per_token=per,
        mean=mean,
        std=float(values.std()),
        h_max=h_max,
        ratio=ratio,
    )


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    degrees_of_freedom: int
    p_value: float
    reject_05: bool
    reject_001: bool
    low_count: bool = False


def _result(stat: float, df: int, low_count: bool = False) -> ChiSquareResult:
    p = chi2_pvalue(stat, df)
    return ChiSquareResult(
        statistic=float(stat),
        degrees_of_freedom=int(df),
        p_value=p,
        reject_05=bool(p < ALPHA_PRIMARY),
        reject_001=bool(p < ALPHA_STRICT),
        low_count=bool(low_count),
    )


def chi2_goodness_of_fit(row_counts) -> ChiSquareResult:
    """Test one token's successor counts against a uniform baseline.

    ``row_counts`` is the row restricted to the active successor space;
    its length sets the degrees of freedom.
    """
    counts = np.asarray(row_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size < 2:
        raise ParameterError("need counts over at least 2 successors")
    if np.any(counts < 0):
        raise ParameterError("counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ParameterError("zero total count")
    k = counts.size
    expected = total / k
    stat = float(((counts - expected) ** 2 / expected).sum())
    return _result(stat, k - 1, low_count=total < LOW_COUNT_MULTIPLIER * k)


def chi2_independence(counts) -> ChiSquareResult:
    """Test whether the joint pair distribution is a product of marginals.

    Tokens whose row and column totals are both zero are dropped first.
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError("independence test needs a square count matrix")
    if np.any(c < 0):
        raise ParameterError("counts must be non-negative")
    keep = (c.sum(axis=1) + c.sum(axis=0)) > 0
    c = c[np.ix_(keep, keep)]
    n = c.shape[0]
    if n < 2:
        raise ParameterError("fewer than 2 tokens carry any transitions")
    total = c.sum()
    if total <= 0:
        raise ParameterError("zero grand total")
    expected = np.outer(c.sum(axis=1), c.sum(axis=0)) / total
    nz = expected > 0
    stat = float(((c[nz] - expected[nz]) ** 2 / expected[nz]).sum())
    df = (n - 1) ** 2
    return _result(stat, df, low_count=bool((expected[nz] < 5).any()))


def chi2_pvalue(statistic: float, df: int) -> float:
    """Upper-tail probability Q(df/2, statistic/2) of the chi-squared law."""
    if statistic < 0:
        raise ParameterError("statistic must be non-negative")
    if df < 1:
        raise ParameterError("degrees of freedom must be at least 1")
    if statistic == 0.0:
        return 1.0
    return _igamc(df / 2.0, statistic / 2.0)


_MACHEP = 1.1102230246251565e-16
_MAXLOG = 709.78


def _igamc(a: float, x: float) -> float:
    """Complemented regularized incomplete gamma Q(a, x)."""
    if x <= 0 or a <= 0:
        return 1.0
    if x < 1.0 or x < a:
        return 1.0 - _igam(a, x)
    ax = a * math.log(x) - x - math.lgamma(a)
    if ax < -_MAXLOG:
        return 0.0
    ax = math.exp(ax)
    # continued fraction (modified Lentz)
    big = 4.503599627370496e15
    biginv = 2.22044604925031308085e-16
    y = 1.0 - a
    z = x + y + 1.0
    c = 0.0
    pkm2, qkm2 = 1.0, x
    pkm1, qkm1 = x + 1.0, z * x
    ans = pkm1 / qkm1
    while True:
        c += 1.0
        y += 1.0
        z += 2.0
        yc = y * c
        pk = pkm1 * z - pkm2 * yc
        qk = qkm1 * z - qkm2 * yc
        if qk != 0.0:
            r = pk / qk
            t = abs((ans - r) / r)
            ans = r
        else:
            t = 1.0
        pkm2, pkm1 = pkm1, pk
        qkm2, qkm1 = qkm1, qk
        if abs(pk) > big:
            pkm2 *= biginv
            pkm1 *= biginv
            qkm2 *= biginv
            qkm1 *= biginv
        if t <= _MACHEP:
            break
    return ans * ax


def _igam(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by power series."""
    if x <= 0 or a <= 0:
        return 0.0
    if x > 1.0 and x > a:
        return 1.0 - _igamc(a, x)
    ax = a * math.log(x) - x - math.lgamma(a)
    if ax < -_MAXLOG:
        return 0.0
    ax = math.exp(ax)
    r = a
    c = 1.0
    ans = 1.0
    while True:
        r += 1.0
        c *= x / r
        ans += c
        if c / ans <= _MACHEP:
            break
    return ans * ax / a
