"""One-way ANOVA, pairwise Welch t-tests and a PCA class-separability summary.

Test statistics are computed here from their defining sums; only the
distribution tails come from ``scipy.special`` (regularized incomplete
beta), which is accurate to well below 1e-6 absolute.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special


@dataclass(frozen=True)
class AnovaResult:
    f: float
    p: float
    df_between: int
    df_within: int
    flag: str = ""


def f_sf(f: float, d1: float, d2: float) -> float:
    """Upper tail of the F distribution."""
    if math.isinf(f):
        return 0.0
    if f <= 0:
        return 1.0
    return float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


def t_two_sided(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def anova_oneway(groups: Sequence[Sequence[float]]) -> AnovaResult:
    if len(groups) < 2:
        raise ValueError("ANOVA needs at least two groups")
    arrs = [np.asarray(g, dtype=np.float64) for g in groups]
    if any(a.size < 2 for a in arrs):
        raise ValueError("every group needs at least two observations")
    n = sum(a.size for a in arrs)
    k = len(arrs)
    grand = sum(a.sum() for a in arrs) / n
    ssb = sum(a.size * (a.mean() - grand) ** 2 for a in arrs)
    ssw = sum(((a - a.mean()) ** 2).sum() for a in arrs)
    dfb, dfw = k - 1, n - k
    if ssw == 0:
        if ssb == 0:
            return AnovaResult(0.0, 1.0, dfb, dfw, "all values identical")
        return AnovaResult(math.inf, 0.0, dfb, dfw, "zero within-group variance")
    f = (ssb / dfb) / (ssw / dfw)
    return AnovaResult(float(f), f_sf(f, dfb, dfw), dfb, dfw)


@dataclass(frozen=True)
class PairwiseTest:
    a: str
    b: str
    t: float
    df: float
    p: float
    p_adjusted: float
    mean_difference: float
    flag: str = ""


@dataclass
class StatReport:
    anova: AnovaResult
    pairs: list[PairwiseTest] = field(default_factory=list)
    test: str = "welch"
    adjustment: str = "bonferroni"


def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, str]:
    """(t, Welch-Satterthwaite df, flag) for mean(a) - mean(b)."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.size < 2 or y.size < 2:
        raise ValueError("each group needs at least two observations")
    va, vb = x.var(ddof=1) / x.size, y.var(ddof=1) / y.size
    diff = x.mean() - y.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return 0.0, float(x.size + y.size - 2), "zero variance, equal means"
        return math.copysign(math.inf, diff), float(x.size + y.size - 2), "zero variance"
    df = se2 ** 2 / (va ** 2 / (x.size - 1) + vb ** 2 / (y.size - 1))
    return float(diff / math.sqrt(se2)), float(df), ""


def pairwise_ttests(groups: dict[str, Sequence[float]] | Sequence[Sequence[float]],
                    adjustment: str = "bonferroni") -> StatReport:
    if not isinstance(groups, dict):
        groups = {f"g{i}": g for i, g in enumerate(groups)}
    if adjustment not in ("bonferroni", "none"):
        raise ValueError(f"unknown adjustment {adjustment!r}")
    names = list(groups)
    combos = list(itertools.combinations(names, 2))
    m = len(combos)
    pairs = []
    for a, b in combos:
        t, df, flag = welch_t(groups[a], groups[b])
        p = 1.0 if t == 0 else t_two_sided(t, df)
        p_adj = min(1.0, p * m) if adjustment == "bonferroni" else p
        diff = float(np.mean(groups[a]) - np.mean(groups[b]))
        pairs.append(PairwiseTest(a, b, t, df, p, p_adj, diff, flag))
    return StatReport(anova_oneway([groups[n] for n in names]), pairs, "welch", adjustment)


@dataclass(frozen=True)
class Projection:
    coords: np.ndarray
    explained_variance: np.ndarray
    explained_ratio: np.ndarray
    separability: float


def pca_separability(features: np.ndarray, labels: Sequence[int], n_components: int = 2,
                     eig_floor: float = 1e-12) -> Projection:
    """2-D PCA projection and a class-separability score.

    The score is the distance between the two projected class means divided
    by the pooled within-class standard deviation of the projection
    (averaged over components).
    """
    x = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError(f"expected two classes, got {classes.size}")
    if any(np.sum(y == c) < 2 for c in classes):
        raise ValueError("each class needs at least two samples")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (len(x) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    evals = np.maximum(evals[order], eig_floor)
    evecs = evecs[:, order]
    # fix the sign so projections are deterministic across runs
    signs = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), range(evecs.shape[1])])
    evecs = evecs * np.where(signs == 0, 1, signs)
    z = xc @ evecs
    total = max(float(np.trace(cov)), eig_floor)
    a, b = (z[y == c] for c in classes)
    dist = float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))
    pooled = ((len(a) - 1) * a.var(axis=0, ddof=1) + (len(b) - 1) * b.var(axis=0, ddof=1)) / (len(a) + len(b) - 2)
    pooled_std = math.sqrt(max(float(pooled.mean()), eig_floor))
    return Projection(z, evals, evals / total, dist / pooled_std)
