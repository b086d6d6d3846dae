"""Agreement and significance statistics: Krippendorff's alpha (nominal),
bootstrap confidence intervals, and the exact McNemar test."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np


@dataclass
class AgreementResult:
    alpha: float
    n_items: int
    n_labels: int
    ci_low: float | None = None
    ci_high: float | None = None
    degenerate: bool = False  # all labels in one category


@dataclass
class SignificanceResult:
    p_value: float
    b: int  # items only A got right
    c: int  # items only B got right


def krippendorff_alpha(
    items: Sequence[Sequence[Hashable]],
    bootstrap: int = 0,
    seed: int = 0,
) -> AgreementResult:
    """Nominal-distance Krippendorff's alpha via the coincidence matrix.

    `items` holds one label list per item (one entry per annotator who labeled
    it, in any order). Items with fewer than two labels are dropped. With
    `bootstrap` > 0, a percentile CI over item resamples is attached.
    """
    usable = [list(labels) for labels in items if len(labels) >= 2]
    if not usable:
        raise ValueError("need at least one item with two or more labels")

    alpha, degenerate = _alpha_value(usable)
    result = AgreementResult(
        alpha=alpha,
        n_items=len(usable),
        n_labels=sum(len(ls) for ls in usable),
        degenerate=degenerate,
    )
    if bootstrap > 0:
        rng = np.random.default_rng(seed)
        n = len(usable)
        reps = []
        for _ in range(bootstrap):
            sample = [usable[i] for i in rng.integers(0, n, size=n)]
            reps.append(_alpha_value(sample)[0])
        result.ci_low = float(np.percentile(reps, 2.5))
        result.ci_high = float(np.percentile(reps, 97.5))
    return result


def _alpha_value(items: list[list[Hashable]]) -> tuple[float, bool]:
    categories = sorted({label for labels in items for label in labels}, key=repr)
    if len(categories) < 2:
        return 1.0, True  # zero expected disagreement; perfect by convention
    index = {c: i for i, c in enumerate(categories)}
    q = len(categories)
    coincidence = np.zeros((q, q))
    for labels in items:
        m = len(labels)
        for a in range(m):
            for b in range(m):
                if a != b:
                    coincidence[index[labels[a]], index[labels[b]]] += 1.0 / (m - 1)
    n_c = coincidence.sum(axis=1)
    n_total = n_c.sum()
    observed = n_total - np.trace(coincidence)
    expected = (n_total * n_total - (n_c * n_c).sum()) / (n_total - 1)
    if expected == 0:
        return 1.0, True
    return float(1.0 - observed / expected), False


def bootstrap_ci(
    statistic: Callable[[Sequence], float],
    sample: Sequence,
    replicates: int = 10000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile 2.5/97.5 bootstrap interval; deterministic for a fixed seed."""
    if len(sample) == 0:
        raise ValueError("sample must be non-empty")
    sample = list(sample)
    n = len(sample)
    rng = np.random.default_rng(seed)
    reps = np.empty(replicates)
    for r in range(replicates):
        idx = rng.integers(0, n, size=n)
        reps[r] = statistic([sample[i] for i in idx])
    return float(np.percentile(reps, 2.5)), float(np.percentile(reps, 97.5))


def mcnemar_exact(correct_a: Sequence[bool], correct_b: Sequence[bool]) -> SignificanceResult:
    """Exact two-sided McNemar test on paired correctness indicators.

    p = min(1, 2 * P(X <= min(b, c))) with X ~ Binomial(b + c, 1/2).
    """
    if len(correct_a) != len(correct_b):
        raise ValueError(f"paired samples differ in length: {len(correct_a)} vs {len(correct_b)}")
    b = sum(1 for x, y in zip(correct_a, correct_b) if x and not y)
    c = sum(1 for x, y in zip(correct_a, correct_b) if y and not x)
    n = b + c
    if n == 0:
        return SignificanceResult(p_value=1.0, b=b, c=c)
    m = min(b, c)
    tail = sum(math.comb(n, i) for i in range(m + 1)) * 0.5**n
    return SignificanceResult(p_value=min(1.0, 2.0 * tail), b=b, c=c)
