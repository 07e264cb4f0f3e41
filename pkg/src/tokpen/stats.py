"""One-sided hypothesis tests over correct/incorrect penalty samples,
plus decile accuracy analysis and tokenizer fertility.

The alternative is always "incorrect instances carry larger penalties".
The t-test uses the pooled-variance Student statistic (a Welch switch is
available); its p-value comes from the regularized incomplete beta
function, evaluated by continued fractions. The Mann-Whitney U test uses
exact rank enumeration for small tie-free samples and a tie-corrected
normal approximation with continuity correction otherwise.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AssetError

EXACT_MWU_LIMIT = 8  # per-sample cap for exact enumeration (<= 12870 subsets)


@dataclass(frozen=True)
class SampleSplit:
    correct: tuple[float, ...]
    incorrect: tuple[float, ...]

    def __post_init__(self):
        for v in itertools.chain(self.correct, self.incorrect):
            if not math.isfinite(v):
                raise AssetError(f"non-finite penalty value {v} in sample split")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str  # "t_test" | "t_test_welch" | "mwu_exact" | "mwu_asymptotic"
    n_correct: int
    n_incorrect: int

    @property
    def significant_05(self) -> bool:
        return self.p_value < 0.05

    @property
    def significant_10(self) -> bool:
        return self.p_value < 0.10


# ---------------------------------------------------------------------------
# Special functions

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified
    Lentz), converged to 1e-14."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            return h
    raise AssetError("incomplete beta continued fraction failed to converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b)."""
    if x < 0.0 or x > 1.0:
        raise AssetError(f"incomplete beta argument x={x} outside [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Upper-tail probability P(T >= t) for Student's t."""
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def normal_sf(z: float) -> float:
    """Upper-tail probability of the standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# Tests

def t_test_one_sided(split: SampleSplit, welch: bool = False) -> TestResult:
    """Two-sample t-test, alternative mean(incorrect) > mean(correct)."""
    inc, cor = split.incorrect, split.correct
    n_i, n_c = len(inc), len(cor)
    if n_i < 2 or n_c < 2:
        raise AssetError(f"t-test needs >= 2 samples per group, got {n_i}/{n_c}")
    mean_i = sum(inc) / n_i
    mean_c = sum(cor) / n_c
    var_i = sum((v - mean_i) ** 2 for v in inc) / (n_i - 1)
    var_c = sum((v - mean_c) ** 2 for v in cor) / (n_c - 1)
    if welch:
        se2 = var_i / n_i + var_c / n_c
        if se2 == 0.0:
            raise AssetError("t-test is degenerate: both samples have zero variance")
        df = se2 ** 2 / (
            (var_i / n_i) ** 2 / (n_i - 1) + (var_c / n_c) ** 2 / (n_c - 1)
        )
        t = (mean_i - mean_c) / math.sqrt(se2)
        method = "t_test_welch"
    else:
        pooled = ((n_i - 1) * var_i + (n_c - 1) * var_c) / (n_i + n_c - 2)
        if pooled == 0.0:
            raise AssetError("t-test is degenerate: pooled variance is zero")
        df = n_i + n_c - 2
        t = (mean_i - mean_c) / math.sqrt(pooled * (1.0 / n_i + 1.0 / n_c))
        method = "t_test"
    return TestResult(
        statistic=t, p_value=student_t_sf(t, df), method=method,
        n_correct=n_c, n_incorrect=n_i,
    )


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _mwu_statistic(split: SampleSplit) -> tuple[float, np.ndarray]:
    inc = np.asarray(split.incorrect, dtype=np.float64)
    cor = np.asarray(split.correct, dtype=np.float64)
    combined = np.concatenate([inc, cor])
    ranks = _midranks(combined)
    r_i = ranks[:len(inc)].sum()
    u = r_i - len(inc) * (len(inc) + 1) / 2.0
    return u, ranks


def _mwu_exact_p(u_obs: float, n_i: int, n_c: int) -> float:
    """P(U >= u_obs) by full enumeration of rank assignments (no ties)."""
    n = n_i + n_c
    offset = n_i * (n_i + 1) / 2.0
    hits = 0
    total = 0
    for combo in itertools.combinations(range(1, n + 1), n_i):
        total += 1
        if sum(combo) - offset >= u_obs:
            hits += 1
    return hits / total


def mwu_one_sided(split: SampleSplit) -> TestResult:
    """Mann-Whitney U, alternative "incorrect tends larger"."""
    n_i, n_c = len(split.incorrect), len(split.correct)
    if n_i < 1 or n_c < 1:
        raise AssetError(f"MWU needs >= 1 sample per group, got {n_i}/{n_c}")
    u, ranks = _mwu_statistic(split)
    n = n_i + n_c
    combined = np.concatenate([split.incorrect, split.correct])
    _, tie_counts = np.unique(combined, return_counts=True)
    has_ties = bool((tie_counts > 1).any())

    if n_i <= EXACT_MWU_LIMIT and n_c <= EXACT_MWU_LIMIT and not has_ties:
        p = _mwu_exact_p(u, n_i, n_c)
        method = "mwu_exact"
    else:
        tie_term = float(((tie_counts ** 3) - tie_counts).sum())
        if n < 2 or tie_term == float(n ** 3 - n):
            raise AssetError("MWU is degenerate: all values identical")
        sigma2 = (n_i * n_c / 12.0) * ((n + 1) - tie_term / (n * (n - 1)))
        if sigma2 <= 0.0:
            raise AssetError("MWU is degenerate: zero variance")
        z = (u - n_i * n_c / 2.0 - 0.5) / math.sqrt(sigma2)
        p = normal_sf(z)
        method = "mwu_asymptotic"
    return TestResult(
        statistic=u, p_value=min(1.0, max(0.0, p)), method=method,
        n_correct=n_c, n_incorrect=n_i,
    )


# ---------------------------------------------------------------------------
# Descriptive analyses

def decile_analysis(
    instances: Sequence[tuple[float, bool]],
) -> tuple[float, float, float]:
    """Accuracy in the highest- and lowest-penalty deciles.

    Stable sort by penalty descending (ties keep input order); decile size
    is floor(n / 10). Returns (acc_top, acc_bottom, acc_bottom - acc_top).
    """
    n = len(instances)
    if n < 10:
        raise AssetError(f"decile analysis needs >= 10 instances, got {n}")
    size = max(1, n // 10)
    ordered = sorted(instances, key=lambda item: item[0], reverse=True)
    top = ordered[:size]
    bottom = ordered[-size:]
    acc_top = sum(1 for _, ok in top if ok) / size
    acc_bottom = sum(1 for _, ok in bottom if ok) / size
    return acc_top, acc_bottom, acc_bottom - acc_top


def fertility(terms: Iterable[tuple[int, int]]) -> float:
    """Average tokens per natural word over (token-count, word-count)
    pairs, one pair per instance."""
    tokens = 0
    words = 0
    for t, w in terms:
        tokens += t
        words += w
    if words == 0:
        raise AssetError("fertility is undefined with zero natural words")
    return tokens / words
