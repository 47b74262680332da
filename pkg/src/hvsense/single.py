"""Position and heading of a hidden vehicle with a colocated (1-cluster) array.

Every path p must leave from the same point, so its HV-side endpoint

    nu_p u(theta_p) - (d_p - nu_p) u(phi_p + omega)

equals that of the reference path.  With ``d_p = d_1 + c rho_p`` the
unknowns reduce to ``z = (nu_1, ..., nu_P, d_1)`` and the constraints are
linear in ``z`` once the heading ``omega`` is fixed:

    A(omega) z = B(omega)

``B`` is consistent only at the true heading, which is found by a 1-D
search on the projection of ``B`` onto the left null space of ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _search
from .errors import (
    DegenerateConfigurationError,
    EmptyNullSpaceError,
    InfeasibleError,
    InsufficientPathsError,
)
from .geometry import SPEED_OF_LIGHT, PathObservation, path_origin, tdoa_distances

MIN_PATHS = 4


@dataclass(frozen=True)
class SolverConfig:
    grid_step: float = math.radians(0.5)
    refine_tol: float = 1e-8
    rank_rtol: float = 1e-9
    ambiguity_ratio: float = 10.0
    max_relative_residual: float = 0.5
    #: upper bound on a solved cluster-array side (m); longer rectangles are
    #: flagged implausible since no road vehicle is that large (multi only)
    max_dimension: float = 25.0
    c: float = SPEED_OF_LIGHT


DEFAULT_CONFIG = SolverConfig()


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    omega: float


@dataclass(frozen=True)
class SingleEstimate:
    omega_star: float
    position: np.ndarray
    z: np.ndarray
    residual: float
    per_path_origins: np.ndarray
    ambiguous: bool = False
    valid: bool = True
    warnings: tuple[str, ...] = field(default=())

    @property
    def nu(self) -> np.ndarray:
        return self.z[:-1]

    @property
    def d1(self) -> float:
        return float(self.z[-1])


def _arrays(obs: Sequence[PathObservation], c: float):
    theta = np.array([o.theta for o in obs])
    phi = np.array([o.phi for o in obs])
    return theta, phi, tdoa_distances(obs, c)


def check_distinct(obs: Sequence[PathObservation]) -> None:
    seen = set()
    for i, o in enumerate(obs):
        key = (o.theta, o.phi, o.toa_ticks, o.cluster)
        if key in seen:
            raise DegenerateConfigurationError(f"path {i} duplicates an earlier observation")
        seen.add(key)


def assemble_batch(theta: np.ndarray, phi: np.ndarray, crho: np.ndarray, omegas: np.ndarray):
    """Stack of A(omega) (G, 2(P-1), P+1) and B(omega) (G, 2(P-1))."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    n = theta.size
    m = n - 1
    dep = phi[None, :] + omegas[:, None]
    cd, sd = np.cos(dep), np.sin(dep)
    a_cos = np.cos(theta)[None, :] + cd
    a_sin = np.sin(theta)[None, :] + sd

    A = np.zeros((omegas.size, 2 * m, n + 1))
    rows = np.arange(m)
    for block, a, trig in ((0, a_cos, cd), (m, a_sin, sd)):
        A[:, block + rows, 0] = a[:, :1]
        A[:, block + rows, rows + 1] = -a[:, 1:]
        A[:, block + rows, n] = trig[:, 1:] - trig[:, :1]
    B = np.concatenate([-crho[None, 1:] * cd[:, 1:], -crho[None, 1:] * sd[:, 1:]], axis=1)
    return A, B


def assemble(obs: Sequence[PathObservation], omega: float, c: float = SPEED_OF_LIGHT) -> LinearSystem:
    """Linear system for candidate heading ``omega``; ``obs[0]`` is the reference path.

    Row blocks are [cos rows p=2..P; sin rows p=2..P], columns (nu_1..nu_P, d_1).
    """
    if len(obs) < 2:
        raise InsufficientPathsError(f"need at least 2 paths to assemble, got {len(obs)}")
    A, B = assemble_batch(*_arrays(obs, c), np.array([omega]))
    return LinearSystem(A[0], B[0], float(omega))


def _require_feasible(obs: Sequence[PathObservation]) -> None:
    if len(obs) < MIN_PATHS:
        raise InfeasibleError(
            f"infeasible: P<{MIN_PATHS}; a colocated array needs at least four NLoS paths, got {len(obs)}"
        )


def orientation_residual(
    obs: Sequence[PathObservation], omega: float, config: SolverConfig = DEFAULT_CONFIG
) -> float:
    """Norm of the projection of B(omega) onto the left null space of A(omega)."""
    _require_feasible(obs)
    system = assemble(obs, omega, config.c)
    null = _search.left_null_space(system.A, config.rank_rtol)
    if null.shape[1] == 0:
        raise EmptyNullSpaceError("left null space of A is empty")
    return float(np.linalg.norm(null.T @ system.B))


def search_orientation_detail(obs: Sequence[PathObservation], config: SolverConfig = DEFAULT_CONFIG):
    _require_feasible(obs)
    check_distinct(obs)
    theta, phi, crho = _arrays(obs, config.c)
    b_norm = float(np.linalg.norm(crho))

    def residuals(omegas):
        return _search.null_residuals(*assemble_batch(theta, phi, crho, omegas), config.rank_rtol)

    def plausible(omega):
        A, B = assemble_batch(theta, phi, crho, np.array([omega]))
        try:
            z = least_squares(A[0], B[0], config.rank_rtol)
        except DegenerateConfigurationError:
            return False
        return not _sanity(obs, z[:-1], z[-1], config.c)

    return _search.search(
        residuals,
        config.grid_step,
        config.refine_tol,
        b_norm,
        ambiguity_ratio=config.ambiguity_ratio,
        max_relative_residual=config.max_relative_residual,
        plausible=plausible,
    )


def search_orientation(
    obs: Sequence[PathObservation],
    grid_step: float | None = None,
    refine_tol: float | None = None,
    config: SolverConfig = DEFAULT_CONFIG,
) -> float:
    """Heading minimising the null-space discriminant over [0, 2*pi)."""
    if grid_step is not None or refine_tol is not None:
        config = replace(config, grid_step=grid_step or config.grid_step, refine_tol=refine_tol or config.refine_tol)
    return search_orientation_detail(obs, config).omega


def least_squares(A: np.ndarray, B: np.ndarray, rtol: float = _search.RANK_RTOL) -> np.ndarray:
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[-1] <= rtol * s[0]:
        raise DegenerateConfigurationError(
            "distance system is rank deficient at the chosen heading (collinear or repeated geometry)"
        )
    return np.linalg.lstsq(A, B, rcond=None)[0]


def solve_distances(
    obs: Sequence[PathObservation], omega_star: float, config: SolverConfig = DEFAULT_CONFIG
) -> np.ndarray:
    """Least-squares ``z = (nu_1..nu_P, d_1)`` at the given heading."""
    check_distinct(obs)
    system = assemble(obs, omega_star, config.c)
    return least_squares(system.A, system.B, config.rank_rtol)


def origins_from(obs: Sequence[PathObservation], z: np.ndarray, omega: float, c: float) -> np.ndarray:
    d = z[-1] + tdoa_distances(obs, c)
    return np.array([path_origin(o, nu, dp, omega) for o, nu, dp in zip(obs, z[: len(obs)], d)])


def _sanity(obs, nu: np.ndarray, d1: float, c: float) -> tuple[str, ...]:
    notes = []
    d = d1 + tdoa_distances(obs, c)
    if d1 <= 0:
        notes.append("d_1 is not positive")
    if np.any(nu <= 0):
        notes.append("some nu_p are not positive")
    if np.any(nu >= d):
        notes.append("some nu_p exceed their path length")
    return tuple(notes)


def sense(
    obs: Sequence[PathObservation], config: SolverConfig = DEFAULT_CONFIG, reference: int = 0
) -> SingleEstimate:
    """Estimate HV position and heading from at least four path observations."""
    obs = list(obs)
    if reference:
        obs.insert(0, obs.pop(reference))
    found = search_orientation_detail(obs, config)
    z = solve_distances(obs, found.omega, config)
    origins = origins_from(obs, z, found.omega, config.c)
    notes = _sanity(obs, z[:-1], z[-1], config.c)
    valid = not notes
    if found.ambiguous:
        notes += ("second heading minimum within the ambiguity ratio",)
    return SingleEstimate(
        omega_star=found.omega,
        position=origins.mean(axis=0),
        z=z,
        residual=found.residual,
        per_path_origins=origins,
        ambiguous=found.ambiguous,
        valid=valid,
        warnings=notes,
    )
