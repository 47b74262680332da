"""One-sided significance checks for Monte Carlo trend claims.

A *strict* trend needs every consecutive step to move in the claimed
direction with one-sided significance.  A *non-strict* (monotone) trend
needs no step to move significantly against the claim, and the first-to-last
change to be significant in its favour.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

ALPHA = 0.05


def _clean(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    return x[np.isfinite(x)]


def contrast_pvalue(groups: Sequence[Sequence[float]], coefs: Sequence[float], alternative: str = "greater") -> float:
    """p-value for ``sum(c_i * mean_i) > 0`` (or ``< 0``) over independent groups.

    Uses a Welch-Satterthwaite t reference; with two groups and coefficients
    (1, -1) this is Welch's t-test.
    """
    if alternative not in ("greater", "less"):
        raise ValueError("alternative must be 'greater' or 'less'")
    groups = [_clean(g) for g in groups]
    if any(len(g) < 2 for g in groups):
        return float("nan")
    coefs = np.asarray(coefs, dtype=float)
    means = np.array([g.mean() for g in groups])
    parts = np.array([c**2 * g.var(ddof=1) / len(g) for c, g in zip(coefs, groups)])
    se = np.sqrt(parts.sum())
    est = float(coefs @ means)
    if se == 0:
        return 0.0 if (est > 0) == (alternative == "greater") and est != 0 else 1.0
    dof = parts.sum() ** 2 / np.sum(parts**2 / np.array([len(g) - 1 for g in groups]))
    t = est / se
    return float(stats.t.sf(t, dof) if alternative == "greater" else stats.t.cdf(t, dof))


def less_pvalue(a, b, paired: bool = False) -> float:
    """p-value for mean(a) < mean(b); paired samples drop pairs with a NaN."""
    if paired:
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        ok = np.isfinite(a) & np.isfinite(b)
        if ok.sum() < 2:
            return float("nan")
        diff = a[ok] - b[ok]
        if np.all(diff == diff[0]):
            return 0.0 if diff[0] < 0 else 1.0
        return float(stats.ttest_rel(a[ok], b[ok], alternative="less").pvalue)
    return contrast_pvalue([a, b], [1.0, -1.0], alternative="less")


@dataclass(frozen=True)
class TrendCheck:
    claim: str
    means: tuple[float, ...]
    step_pvalues: tuple[float, ...]
    overall_pvalue: float
    passed: bool

    def line(self) -> str:
        steps = ", ".join(f"{p:.3g}" for p in self.step_pvalues)
        means = ", ".join(f"{m:.4g}" for m in self.means)
        return f"{'PASS' if self.passed else 'FAIL'} {self.claim}: means [{means}], step p [{steps}], overall p {self.overall_pvalue:.3g}"


def check_trend(
    samples: Sequence[Sequence[float]],
    direction: str,
    strict: bool,
    paired: bool = False,
    alpha: float = ALPHA,
    claim: str = "",
) -> TrendCheck:
    """Test that group means move in ``direction`` ('increasing' or 'decreasing')."""
    if direction not in ("increasing", "decreasing"):
        raise ValueError("direction must be 'increasing' or 'decreasing'")
    if len(samples) < 2:
        raise ValueError("a trend needs at least two groups")
    means = tuple(float(np.mean(_clean(s))) if len(_clean(s)) else float("nan") for s in samples)

    def towards(a, b):  # p-value that b moved in the claimed direction from a
        return less_pvalue(a, b, paired) if direction == "increasing" else less_pvalue(b, a, paired)

    def against(a, b):
        return less_pvalue(b, a, paired) if direction == "increasing" else less_pvalue(a, b, paired)

    pairs = list(zip(samples, samples[1:]))
    overall = towards(samples[0], samples[-1])
    if strict:
        steps = tuple(towards(a, b) for a, b in pairs)
        passed = all(p < alpha for p in steps)
    else:
        steps = tuple(against(a, b) for a, b in pairs)
        passed = all(p >= alpha for p in steps) and overall < alpha
    return TrendCheck(claim or f"{'strictly ' if strict else ''}{direction}", means, steps, overall, bool(passed))
