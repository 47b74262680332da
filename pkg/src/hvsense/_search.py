"""Null-space discriminant evaluation and the 1-D heading search."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NoConsistentOrientationError
from .geometry import TWO_PI, angle_diff, wrap_angle

RANK_RTOL = 1e-9
ZERO_RTOL = 1e-7
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def left_null_space(a: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of null(a.T), by relative singular-value thresholding."""
    u, s, _ = np.linalg.svd(a, full_matrices=True)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return u[:, rank:]


def null_residuals(a: np.ndarray, b: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """``||N(w)^T b(w)||`` for a stack of systems ``a`` (G, m, n), ``b`` (G, m).

    N(w) spans the left null space of a(w), so the value is the norm of b
    minus its projection on range(a).  Slices that are close to losing rank
    are redone with an SVD so the rank threshold is applied exactly.
    """
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diagonal(r, axis1=1, axis2=2))
    resid = b - np.einsum("gmk,gk->gm", q, np.einsum("gmk,gm->gk", q, b))
    out = np.sqrt(np.sum(resid**2, axis=1))
    # QR diagonals only bracket the singular values; use a wide safety margin
    shaky = np.nonzero(diag.min(axis=1) <= 1e3 * rtol * np.maximum(diag.max(axis=1), 1e-300))[0]
    if shaky.size:
        u, s, _ = np.linalg.svd(a[shaky], full_matrices=False)
        keep = s > rtol * s[:, :1]
        coef = np.einsum("gmk,gm->gk", u, b[shaky]) * keep
        resid = b[shaky] - np.einsum("gmk,gk->gm", u, coef)
        out[shaky] = np.sqrt(np.sum(resid**2, axis=1))
    return out


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on [lo, hi] to an absolute bracket width ``tol``."""
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = f(x2)
    x = 0.5 * (lo + hi)
    return x, f(x)


@dataclass(frozen=True)
class OrientationSearch:
    omega: float
    residual: float
    ambiguous: bool
    #: distinct refined minima as (residual, heading), best first
    candidates: tuple[tuple[float, float], ...]


def search(
    residual_batch: Callable[[np.ndarray], np.ndarray],
    grid_step: float,
    refine_tol: float,
    b_norm: float,
    ambiguity_ratio: float = 10.0,
    max_relative_residual: float = 0.5,
    n_candidates: int = 6,
    plausible: Callable[[float], bool] | None = None,
) -> OrientationSearch:
    """Coarse grid over [0, 2*pi) followed by golden-section refinement.

    ``residual_batch`` maps an array of headings to discriminant values.  The
    best few grid-local minima are refined and the smallest wins; a second
    distinct minimum within ``ambiguity_ratio`` of the winner sets the
    ambiguity flag.  When ``plausible`` is given, minima within that ratio
    are screened with it and the best plausible one wins; the flag is then
    raised only if another plausible minimum competes.
    """
    n_grid = max(8, int(round(TWO_PI / grid_step)))
    step = TWO_PI / n_grid
    grid = np.arange(n_grid) * step
    values = residual_batch(grid)
    left, right = np.roll(values, 1), np.roll(values, -1)
    minima = np.flatnonzero((values <= left) & (values <= right))
    if minima.size == 0:
        minima = np.array([int(np.argmin(values))])
    minima = minima[np.argsort(values[minima], kind="stable")][:n_candidates]

    def scalar(w: float) -> float:
        return float(residual_batch(np.array([w]))[0])

    # each half of a bracket is refined separately: two exact zeros can share one grid cell
    refined = []
    for i in minima:
        for lo, hi in ((grid[i] - step, grid[i]), (grid[i], grid[i] + step)):
            w, r = golden_section(scalar, lo, hi, refine_tol)
            probe = 10 * refine_tol
            if scalar(w - probe) >= r and scalar(w + probe) >= r:
                refined.append((r, wrap_angle(w)))
    if not refined:
        i = int(np.argmin(values))
        refined.append((float(values[i]), float(grid[i])))
    refined.sort()

    merge = max(100 * refine_tol, 1e-6)
    distinct: list[tuple[float, float]] = []
    for r, w in refined:
        if all(abs(angle_diff(w, v)) > merge for _, v in distinct):
            distinct.append((r, w))
    best_r = distinct[0][0]
    # residuals below zero_floor are numerically indistinguishable from an exact fit
    zero_floor = ZERO_RTOL * b_norm
    contenders = [rw for rw in distinct if rw[0] <= max(ambiguity_ratio * best_r, zero_floor)]
    if plausible is not None and len(contenders) > 1:
        screened = [rw for rw in contenders if plausible(rw[1])]
        if screened:
            contenders = screened
    best_r, best_w = contenders[0]
    ambiguous = len(contenders) > 1

    if b_norm > 0 and best_r > max_relative_residual * b_norm:
        raise NoConsistentOrientationError(
            f"smallest discriminant {best_r:.3g} exceeds {max_relative_residual} * ||B|| = "
            f"{max_relative_residual * b_norm:.3g}; observations are not geometrically consistent"
        )
    return OrientationSearch(best_w, best_r, bool(ambiguous), tuple(distinct))
