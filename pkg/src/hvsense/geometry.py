"""Scene representation and the exact single-bounce forward model.

Coordinates: the sensing vehicle (SV) array sits at the origin with its
heading along +X.  Angles are azimuths measured counterclockwise from the
heading of the vehicle that measures them and are wrapped to [0, 2*pi).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
TWO_PI = 2.0 * math.pi

#: ToA timestamps are integer multiples of one attosecond.
TICKS_PER_SECOND = 10**18

#: Cluster label used for a colocated (1-cluster) array.
SINGLE = 0

_DEGENERATE_TOL = 1e-9


class GeometryError(ValueError):
    """Raised when a scene cannot produce a well-defined single-bounce path."""


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to [0, 2*pi)."""
    wrapped = np.mod(angle, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    wrapped = np.where(wrapped >= TWO_PI, 0.0, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def angle_diff(a, b):
    """Signed difference a - b mapped to [-pi, pi)."""
    return np.mod(np.asarray(a) - np.asarray(b) + math.pi, TWO_PI) - math.pi


def unit(angle) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    heading: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        if not np.all(np.isfinite(pos)):
            raise ValueError("pose position must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))


@dataclass(frozen=True)
class ClusterLayout:
    """Rectangular 4-cluster array.

    Cluster 1 is the reference vertex.  In the hidden vehicle's own frame the
    clusters sit at (0, 0), (L, 0), (L, W) and (0, W) for k = 1..4.
    """

    length: float
    width: float

    def __post_init__(self):
        if not (self.length >= 0 and self.width >= 0):
            raise ValueError("layout dimensions must be nonnegative")

    def offset(self, k: int, omega: float) -> np.ndarray:
        """Global offset of cluster ``k`` from cluster 1 for heading ``omega``."""
        return np.array(vertex_offset(omega, self.length, self.width, k))

    def vertices(self, pose: Pose) -> np.ndarray:
        return np.array([pose.position + self.offset(k, pose.heading) for k in range(1, 5)])


def vertex_offset(omega: float, length: float, width: float, k: int) -> tuple[float, float]:
    """Global (x, y) offset of rectangle vertex ``k`` relative to vertex 1."""
    c, s = math.cos(omega), math.sin(omega)
    if k == 1:
        return 0.0, 0.0
    if k == 2:
        return length * c, length * s
    if k == 3:
        return length * c - width * s, length * s + width * c
    if k == 4:
        return -width * s, width * c
    raise ValueError(f"cluster index must be in 1..4, got {k}")


def to_ticks(seconds: float) -> int:
    return int(round(float(seconds) * TICKS_PER_SECOND))


@dataclass(frozen=True)
class PathObservation:
    """Measured (AoA, AoD, ToA) of one path plus the label of its cluster.

    The ToA is kept as an integer count of :data:`TICKS_PER_SECOND` ticks so
    that a common clock offset cancels exactly in every TDoA.  ``toa`` is the
    same value in seconds.  Pass ``toa_ticks`` to build from ticks directly.
    """

    theta: float
    phi: float
    toa: float = 0.0
    cluster: int = SINGLE
    toa_ticks: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "phi", wrap_angle(float(self.phi)))
        ticks = to_ticks(self.toa) if self.toa_ticks is None else int(self.toa_ticks)
        object.__setattr__(self, "toa_ticks", ticks)
        object.__setattr__(self, "toa", ticks / TICKS_PER_SECOND)
        object.__setattr__(self, "cluster", int(self.cluster))

    def shifted(self, delta_seconds: float) -> "PathObservation":
        """Same path with the ToA moved by a clock offset."""
        return self.shifted_ticks(to_ticks(delta_seconds))

    def shifted_ticks(self, delta_ticks: int) -> "PathObservation":
        return PathObservation(self.theta, self.phi, cluster=self.cluster, toa_ticks=self.toa_ticks + int(delta_ticks))


@dataclass(frozen=True)
class PathGeometry:
    nu: float
    d: float
    origin: np.ndarray

    def __post_init__(self):
        if not (0.0 < self.nu < self.d):
            raise GeometryError(f"path geometry requires 0 < nu < d (nu={self.nu}, d={self.d})")
        origin = np.asarray(self.origin, dtype=float).reshape(2)
        origin.setflags(write=False)
        object.__setattr__(self, "origin", origin)


@dataclass(frozen=True)
class Scene:
    """Ground truth for one SV/HV configuration.

    ``layout`` is ``None`` for a colocated array; then every scatterer must be
    labelled :data:`SINGLE`.  Otherwise labels are cluster indices 1..4.
    """

    hv_pose: Pose
    scatterers: np.ndarray
    clusters: tuple[int, ...]
    layout: Optional[ClusterLayout] = None
    gamma: float = 0.0
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        pts = np.asarray(self.scatterers, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "scatterers", pts)
        labels = tuple(int(k) for k in self.clusters)
        if len(labels) != len(pts):
            raise ValueError("one cluster label per scatterer required")
        allowed = {SINGLE} if self.layout is None else {1, 2, 3, 4}
        bad = set(labels) - allowed
        if bad:
            raise ValueError(f"invalid cluster labels {sorted(bad)} for this layout")
        object.__setattr__(self, "clusters", labels)
        if self.c <= 0:
            raise ValueError("propagation speed must be positive")

    @property
    def n_paths(self) -> int:
        return len(self.clusters)

    def cluster_position(self, k: int) -> np.ndarray:
        if self.layout is None:
            return np.array(self.hv_pose.position)
        return self.hv_pose.position + self.layout.offset(k, self.hv_pose.heading)

    def cluster_positions(self) -> np.ndarray:
        """Positions of the transmit clusters (one row for SINGLE, four otherwise)."""
        if self.layout is None:
            return np.array([self.hv_pose.position])
        return self.layout.vertices(self.hv_pose)

    def with_gamma(self, gamma: float) -> "Scene":
        return Scene(self.hv_pose, self.scatterers, self.clusters, self.layout, gamma, self.c)

    def subset(self, indices: Sequence[int]) -> "Scene":
        idx = list(indices)
        return Scene(
            self.hv_pose,
            self.scatterers[idx],
            tuple(self.clusters[i] for i in idx),
            self.layout,
            self.gamma,
            self.c,
        )

    # -- structured-text fixtures ---------------------------------------

    def to_dict(self) -> dict:
        return {
            "hv_pose": {
                "position": [float(v) for v in self.hv_pose.position],
                "heading": self.hv_pose.heading,
            },
            "layout": None
            if self.layout is None
            else {"length": self.layout.length, "width": self.layout.width},
            "scatterers": [
                {"position": [float(x), float(y)], "cluster": k}
                for (x, y), k in zip(self.scatterers, self.clusters)
            ],
            "gamma": self.gamma,
            "c": self.c,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        layout = data.get("layout")
        scat = data.get("scatterers", [])
        return cls(
            hv_pose=Pose(data["hv_pose"]["position"], data["hv_pose"].get("heading", 0.0)),
            scatterers=np.array([s["position"] for s in scat], dtype=float).reshape(-1, 2),
            clusters=tuple(s.get("cluster", SINGLE) for s in scat),
            layout=None if layout is None else ClusterLayout(layout["length"], layout["width"]),
            gamma=float(data.get("gamma", 0.0)),
            c=float(data.get("c", SPEED_OF_LIGHT)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward_observe(scene: Scene) -> list[tuple[PathObservation, PathGeometry]]:
    """Noiseless (AoA, AoD, ToA) of every single-bounce path in ``scene``.

    Raises
    ------
    GeometryError
        If a scatterer coincides with the SV origin or with its emitting
        cluster, in which case AoA or AoD is undefined.
    """
    omega = scene.hv_pose.heading
    out = []
    for s, k in zip(scene.scatterers, scene.clusters):
        q = scene.cluster_position(k)
        nu = float(np.hypot(*s))
        leg = s - q
        leg_len = float(np.hypot(*leg))
        scale = max(1.0, nu, leg_len)
        if nu <= _DEGENERATE_TOL * scale or leg_len <= _DEGENERATE_TOL * scale:
            raise GeometryError(f"scatterer {s.tolist()} coincides with the SV or cluster {k}")
        d = nu + leg_len
        obs = PathObservation(
            theta=math.atan2(s[1], s[0]),
            phi=math.atan2(leg[1], leg[0]) - omega,
            cluster=k,
            toa_ticks=to_ticks(d / scene.c) + to_ticks(scene.gamma),
        )
        out.append((obs, PathGeometry(nu=nu, d=d, origin=q)))
    return out


def observe(scene: Scene) -> list[PathObservation]:
    return [obs for obs, _ in forward_observe(scene)]


def tdoa(toas: Sequence[float]) -> np.ndarray:
    """Time differences of arrival (seconds) against the first entry."""
    toas = np.asarray(toas, dtype=float)
    if toas.size == 0:
        raise ValueError("at least one ToA is required")
    return toas - toas[0]


def tdoa_distances(observations: Sequence[PathObservation], c: float = SPEED_OF_LIGHT) -> np.ndarray:
    """Range differences c * (lambda_p - lambda_1), computed from exact ticks."""
    if not observations:
        raise ValueError("at least one observation is required")
    ref = observations[0].toa_ticks
    return np.array([(o.toa_ticks - ref) for o in observations], dtype=float) * (c / TICKS_PER_SECOND)


def shift_toas(observations: Sequence[PathObservation], delta_seconds: float) -> list[PathObservation]:
    """Apply one clock offset to every observation (exact in ticks)."""
    ticks = to_ticks(delta_seconds)
    return [o.shifted_ticks(ticks) for o in observations]


def path_origin(obs: PathObservation, nu: float, d: float, omega: float) -> np.ndarray:
    """HV-side endpoint of a path: walk ``nu`` out along the AoA, then back
    ``d - nu`` against the global departure direction."""
    depart = obs.phi + omega
    return np.array(
        [
            nu * math.cos(obs.theta) - (d - nu) * math.cos(depart),
            nu * math.sin(obs.theta) - (d - nu) * math.sin(depart),
        ]
    )


def rotate_scene(scene: Scene, psi: float) -> Scene:
    """Rotate scatterers and the HV pose about the origin by ``psi``."""
    c, s = math.cos(psi), math.sin(psi)
    rot = np.array([[c, -s], [s, c]])
    pose = Pose(rot @ scene.hv_pose.position, scene.hv_pose.heading + psi)
    return Scene(pose, scene.scatterers @ rot.T, scene.clusters, scene.layout, scene.gamma, scene.c)


def perturb(
    observations: Sequence[PathObservation],
    angle_sigma: float,
    toa_sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> list[PathObservation]:
    """Add independent zero-mean Gaussian errors to AoA, AoD (radians) and ToA (seconds)."""
    rng = np.random.default_rng() if rng is None else rng
    out = []
    for o in observations:
        dt = to_ticks(rng.normal(0.0, toa_sigma)) if toa_sigma else 0
        out.append(
            PathObservation(
                o.theta + rng.normal(0.0, angle_sigma),
                o.phi + rng.normal(0.0, angle_sigma),
                cluster=o.cluster,
                toa_ticks=o.toa_ticks + dt,
            )
        )
    return out
