"""Vertices, shape and heading of a hidden vehicle with a rectangular 4-cluster array.

Paths are labelled by the cluster that emitted them.  The endpoint recovered
from path p must equal the reference path's endpoint plus the difference of
the two clusters' rectangle offsets, which is linear in (L, W) for a fixed
heading.  The distance system of :mod:`hvsense.single` therefore gains two
columns:

    [A(omega) | L(omega) | W(omega)] (nu_1..nu_P, d_1, L, W) = B(omega)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _search
from .errors import (
    DegenerateConfigurationError,
    EmptyNullSpaceError,
    InfeasibleError,
    InsufficientPathsError,
    UnobservableDimensionError,
)
from .geometry import PathObservation, SPEED_OF_LIGHT, tdoa_distances, vertex_offset
from .single import (
    DEFAULT_CONFIG,
    SolverConfig,
    _sanity,
    assemble_batch,
    check_distinct,
    least_squares,
    origins_from,
)

MIN_PATHS = 6

# which rectangle sides separate cluster k from cluster 1
_ALONG_LENGTH = {1: 0.0, 2: 1.0, 3: 1.0, 4: 0.0}
_ALONG_WIDTH = {1: 0.0, 2: 0.0, 3: 1.0, 4: 1.0}


def offsets(omega: float, length: float, width: float, cluster_k: int) -> tuple[float, float]:
    """Global offset (eta, zeta) of cluster ``k`` from cluster 1."""
    return vertex_offset(omega, length, width, cluster_k)


@dataclass(frozen=True)
class MultiLinearSystem:
    A_hat: np.ndarray
    B: np.ndarray
    omega: float
    partition: tuple[int, int, int, int]
    #: input indices in row order (anchor cluster first, then by cluster label)
    order: tuple[int, ...]
    anchor: int


@dataclass(frozen=True)
class MultiEstimate:
    omega_star: float
    vertices: np.ndarray
    centroid: np.ndarray
    L_star: float
    W_star: float
    z_hat: np.ndarray
    residual: float
    ambiguous: bool = False
    valid: bool = True
    warnings: tuple[str, ...] = field(default=())


def _order(obs: Sequence[PathObservation]) -> tuple[list[int], int]:
    labels = [o.cluster for o in obs]
    bad = sorted(set(labels) - {1, 2, 3, 4})
    if bad:
        raise ValueError(f"multi-cluster observations need labels in 1..4, got {bad}")
    anchor = 1 if 1 in labels else min(labels)
    idx = sorted(range(len(obs)), key=lambda i: (labels[i] != anchor, labels[i]))
    return idx, anchor


def _shape_columns(labels: np.ndarray, anchor: int, omegas: np.ndarray):
    """L and W columns (G, 2(P-1)) relative to the anchor cluster."""
    dl = np.array([_ALONG_LENGTH[k] for k in labels[1:]]) - _ALONG_LENGTH[anchor]
    dw = np.array([_ALONG_WIDTH[k] for k in labels[1:]]) - _ALONG_WIDTH[anchor]
    c, s = np.cos(omegas)[:, None], np.sin(omegas)[:, None]
    col_l = np.concatenate([dl * c, dl * s], axis=1)
    col_w = np.concatenate([-dw * s, dw * c], axis=1)
    return col_l, col_w


def _prepared(obs: Sequence[PathObservation], c: float):
    if len(obs) < 2:
        raise InsufficientPathsError(f"need at least 2 paths to assemble, got {len(obs)}")
    order, anchor = _order(obs)
    ordered = [obs[i] for i in order]
    theta = np.array([o.theta for o in ordered])
    phi = np.array([o.phi for o in ordered])
    labels = np.array([o.cluster for o in ordered])
    return ordered, order, anchor, theta, phi, labels, tdoa_distances(ordered, c)


def _batch(theta, phi, labels, anchor, crho, omegas, known=None):
    A, B = assemble_batch(theta, phi, crho, omegas)
    col_l, col_w = _shape_columns(labels, anchor, omegas)
    if known is not None:
        return A, B - known[0] * col_l - known[1] * col_w
    return np.concatenate([A, col_l[:, :, None], col_w[:, :, None]], axis=2), B


def assemble_multi(
    obs: Sequence[PathObservation], omega: float, c: float = SPEED_OF_LIGHT
) -> MultiLinearSystem:
    """Augmented system for candidate heading ``omega``.

    Rows are reordered so that the reference path comes from cluster 1; if
    cluster 1 is silent the lowest populated cluster becomes the anchor and
    the shape columns are expressed relative to it.
    """
    ordered, order, anchor, theta, phi, labels, crho = _prepared(obs, c)
    A, B = _batch(theta, phi, labels, anchor, crho, np.array([float(omega)]))
    partition = tuple(int(np.sum(labels == k)) for k in (1, 2, 3, 4))
    return MultiLinearSystem(A[0], B[0], float(omega), partition, tuple(order), anchor)


def check_observable(obs: Sequence[PathObservation]) -> None:
    """Structural test: L (W) is observable only if the populated clusters do
    not all sit on the same side of the length (width) edge."""
    present = {o.cluster for o in obs}
    if len({_ALONG_LENGTH[k] for k in present}) < 2:
        raise UnobservableDimensionError(
            f"length unobservable: populated clusters {sorted(present)} need one of {{2,3}} and one of {{1,4}}"
        )
    if len({_ALONG_WIDTH[k] for k in present}) < 2:
        raise UnobservableDimensionError(
            f"width unobservable: populated clusters {sorted(present)} need one of {{3,4}} and one of {{1,2}}"
        )


def _require_feasible(obs, known) -> None:
    need = MIN_PATHS if known is None else 4
    if len(obs) < need:
        raise InfeasibleError(
            f"infeasible: P<{need}; a rectangular 4-cluster array needs at least "
            f"{'six' if known is None else 'four'} paths, got {len(obs)}"
        )
    if known is None:
        check_observable(obs)


def orientation_residual_multi(
    obs: Sequence[PathObservation], omega: float, config: SolverConfig = DEFAULT_CONFIG, known=None
) -> float:
    _require_feasible(obs, known)
    _, _, anchor, theta, phi, labels, crho = _prepared(obs, config.c)
    A, B = _batch(theta, phi, labels, anchor, crho, np.array([float(omega)]), known)
    null = _search.left_null_space(A[0], config.rank_rtol)
    if null.shape[1] == 0:
        raise EmptyNullSpaceError("left null space of the augmented system is empty")
    return float(np.linalg.norm(null.T @ B[0]))


def _search_detail(obs, config: SolverConfig, known):
    _require_feasible(obs, known)
    check_distinct(obs)
    ordered, _, anchor, theta, phi, labels, crho = _prepared(obs, config.c)

    def residuals(omegas):
        return _search.null_residuals(*_batch(theta, phi, labels, anchor, crho, omegas, known), config.rank_rtol)

    def plausible(omega):
        A, B = _batch(theta, phi, labels, anchor, crho, np.array([omega]), known)
        try:
            z = least_squares(A[0], B[0], config.rank_rtol)
        except DegenerateConfigurationError:
            return False
        n = len(ordered)
        if known is None and not all(0 < x <= config.max_dimension for x in z[n + 1 : n + 3]):
            return False
        return not _sanity(ordered, z[:n], z[n], config.c)

    b_norm = float(np.linalg.norm(crho))
    return _search.search(
        residuals,
        config.grid_step,
        config.refine_tol,
        b_norm,
        ambiguity_ratio=config.ambiguity_ratio,
        max_relative_residual=config.max_relative_residual,
        plausible=plausible,
    )


def search_orientation_multi(
    obs: Sequence[PathObservation],
    grid_step: float | None = None,
    refine_tol: float | None = None,
    config: SolverConfig = DEFAULT_CONFIG,
    known_dims: Optional[tuple[float, float]] = None,
) -> float:
    if grid_step is not None or refine_tol is not None:
        config = replace(config, grid_step=grid_step or config.grid_step, refine_tol=refine_tol or config.refine_tol)
    return _search_detail(obs, config, known_dims).omega


def sense_multi(
    obs: Sequence[PathObservation],
    config: SolverConfig = DEFAULT_CONFIG,
    known_dims: Optional[tuple[float, float]] = None,
) -> MultiEstimate:
    """Estimate the four cluster positions, L, W and heading.

    ``known_dims=(L, W)`` fixes the rectangle instead of solving for it, which
    lowers the path requirement to four.  ``z_hat`` lists the nu_p in the
    caller's order, then d_1 (of the reference path), L and W.
    """
    obs = list(obs)
    found = _search_detail(obs, config, known_dims)
    omega = found.omega
    ordered, order, anchor, theta, phi, labels, crho = _prepared(obs, config.c)
    A, B = _batch(theta, phi, labels, anchor, crho, np.array([omega]), known_dims)
    z = least_squares(A[0], B[0], config.rank_rtol)
    n = len(ordered)
    if known_dims is None:
        length, width = float(z[n + 1]), float(z[n + 2])
    else:
        length, width = map(float, known_dims)

    ends = origins_from(ordered, z[: n + 1], omega, config.c)
    shift = np.array([offsets(omega, length, width, k) for k in labels])
    first = (ends - shift).mean(axis=0)
    vertices = np.array([first + np.array(offsets(omega, length, width, k)) for k in (1, 2, 3, 4)])

    notes = list(_sanity(ordered, z[:n], z[n], config.c))
    if length < 0 or width < 0:
        notes.append("negative L or W: reflected layout, cluster labels may not match geometry")
    if known_dims is None and max(length, width) > config.max_dimension:
        notes.append(f"L or W exceeds {config.max_dimension:g} m: not a vehicle-sized layout")
    valid = not notes
    if found.ambiguous:
        notes.append("second heading minimum within the ambiguity ratio")

    nu = np.empty(n)
    nu[np.array(order)] = z[:n]
    z_hat = np.concatenate([nu, [z[n], length, width]])
    return MultiEstimate(
        omega_star=omega,
        vertices=vertices,
        centroid=vertices.mean(axis=0),
        L_star=length,
        W_star=width,
        z_hat=z_hat,
        residual=found.residual,
        ambiguous=found.ambiguous,
        valid=valid,
        warnings=tuple(notes),
    )
