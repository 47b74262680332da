"""Waveform-level front end: orthogonal transmissions, array responses, the
received multipath signal, and per-path (AoA, AoD, ToA) estimation.

Sampling is at the Nyquist rate ``2 * bandwidth``.  Waveforms have unit
energy, so a path of complex gain ``g`` produces the matched-filter output
``g * b(theta) a(phi)^T`` at its lag.  SNR figures in this module are
per receive antenna and per sample: ``|g|^2 * M_t / (N * noise_power)``.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigurationError
from .geometry import SPEED_OF_LIGHT, TWO_PI, PathObservation, wrap_angle

log = logging.getLogger(__name__)

DEFAULT_BANDWIDTH = 100e6
DEFAULT_CARRIER = 5.9e9
DEFAULT_GRID = math.radians(0.1)


class OrthogonalityError(ValueError):
    """Requested more orthogonal waveforms than the sequence length allows."""


@dataclass(frozen=True)
class WaveformSet:
    waveforms: np.ndarray  # (M_t, N) complex, orthonormal rows
    bandwidth: float = DEFAULT_BANDWIDTH
    cluster_id: int = 0

    @property
    def sample_rate(self) -> float:
        return 2.0 * self.bandwidth

    @property
    def n_tx(self) -> int:
        return self.waveforms.shape[0]

    @property
    def length(self) -> int:
        return self.waveforms.shape[1]

    def gram(self) -> np.ndarray:
        return self.waveforms @ self.waveforms.conj().T


def _orthonormal_rows(count: int, length: int, rng: np.random.Generator) -> np.ndarray:
    basis = rng.standard_normal((length, count)) + 1j * rng.standard_normal((length, count))
    q, _ = np.linalg.qr(basis)
    return q.T.copy()


def generate_waveforms(
    n_tx: int, length: int, seed=None, bandwidth: float = DEFAULT_BANDWIDTH, cluster_id: int = 0
) -> WaveformSet:
    """``n_tx`` unit-energy sequences, exactly orthogonal at lag 0."""
    if length < n_tx:
        raise OrthogonalityError(f"cannot fit {n_tx} orthogonal waveforms in {length} samples")
    rows = _orthonormal_rows(n_tx, length, np.random.default_rng(seed))
    return WaveformSet(rows, bandwidth, cluster_id)


def generate_waveform_sets(
    clusters: Sequence[int], n_tx: int, length: int, seed=None, bandwidth: float = DEFAULT_BANDWIDTH
) -> dict[int, WaveformSet]:
    """One set per cluster label, all waveforms mutually orthogonal."""
    total = n_tx * len(clusters)
    if length < total:
        raise OrthogonalityError(f"cannot fit {total} orthogonal waveforms in {length} samples")
    rows = _orthonormal_rows(total, length, np.random.default_rng(seed))
    return {
        k: WaveformSet(rows[i * n_tx : (i + 1) * n_tx], bandwidth, k) for i, k in enumerate(clusters)
    }


@dataclass(frozen=True)
class ArrayManifold:
    """Planar array in its vehicle's frame (x along the heading)."""

    positions: np.ndarray  # (M, 2) meters
    carrier: float = DEFAULT_CARRIER
    c: float = SPEED_OF_LIGHT

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def wavelength(self) -> float:
        return self.c / self.carrier

    @classmethod
    def ula(cls, n: int, carrier: float = DEFAULT_CARRIER, spacing: Optional[float] = None, c: float = SPEED_OF_LIGHT):
        """Uniform linear array along the vehicle axis, half-wavelength spaced by default."""
        d = c / carrier / 2 if spacing is None else spacing
        pos = np.column_stack([np.arange(n) * d, np.zeros(n)])
        return cls(pos, carrier, c)

    @classmethod
    def uca(cls, n: int, carrier: float = DEFAULT_CARRIER, spacing: Optional[float] = None, c: float = SPEED_OF_LIGHT):
        """Uniform circular array with neighbouring elements ``spacing`` apart
        (half a wavelength by default).  Unambiguous over the full circle."""
        d = c / carrier / 2 if spacing is None else spacing
        radius = d / (2 * math.sin(math.pi / n))
        ang = TWO_PI * np.arange(n) / n
        pos = radius * np.column_stack([np.cos(ang), np.sin(ang)])
        return cls(pos, carrier, c)

    def delays(self, angles) -> np.ndarray:
        """Propagation-time lead of each element over element 1, shape (len(angles), M)."""
        angles = np.atleast_1d(np.asarray(angles, dtype=float))
        rel = self.positions - self.positions[0]
        dirs = np.column_stack([np.cos(angles), np.sin(angles)])
        return dirs @ rel.T / self.c

    def responses(self, angles) -> np.ndarray:
        return np.exp(2j * math.pi * self.carrier * self.delays(angles))

    def response(self, angle: float) -> np.ndarray:
        return self.responses([angle])[0]

    def phase_derivative(self, angle: float) -> np.ndarray:
        """d/d(angle) of each element's phase."""
        rel = self.positions - self.positions[0]
        tangent = np.array([-math.sin(angle), math.cos(angle)])
        return 2 * math.pi * self.carrier * (rel @ tangent) / self.c


def response(manifold: ArrayManifold, angle: float) -> np.ndarray:
    return manifold.response(angle)


@dataclass(frozen=True)
class PathSpec:
    """One propagation path for synthesis."""

    theta: float
    phi: float
    toa: float
    gain: complex = 1.0
    cluster: int = 0


@dataclass(frozen=True)
class ReceivedSignal:
    samples: np.ndarray  # (M_r, N) complex
    sample_rate: float
    noise_power: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("received samples must be finite")


@dataclass(frozen=True)
class MatchedFilterBank:
    y: np.ndarray  # (n_lags, M_r, M_t) complex
    sample_rate: float
    cluster_id: int = 0

    @property
    def lag_resolution(self) -> float:
        return 1.0 / self.sample_rate

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.y) ** 2, axis=(1, 2)))


def _delayed(wave: np.ndarray, delay: float, n_out: int, fractional: str) -> np.ndarray:
    """Place ``wave`` (M_t, N) at ``delay`` samples inside an ``n_out`` window."""
    m, n = wave.shape
    out = np.zeros((m, n_out), dtype=complex)
    if fractional == "nearest":
        start = int(round(delay))
        lo, hi = max(start, 0), min(start + n, n_out)
        if hi > lo:
            out[:, lo:hi] = wave[:, lo - start : hi - start]
        return out
    if fractional == "sinc":
        nfft = 1 << int(math.ceil(math.log2(n_out + n)))
        spec = np.fft.fft(wave, nfft, axis=1)
        freqs = np.fft.fftfreq(nfft)
        shifted = np.fft.ifft(spec * np.exp(-2j * math.pi * freqs * delay), axis=1)
        return shifted[:, :n_out]
    raise ConfigurationError(f"unknown fractional delay mode {fractional!r}")


def synthesize_rx(
    paths: Sequence[PathSpec],
    waveform_sets: Mapping[int, WaveformSet],
    tx_manifold: ArrayManifold,
    rx_manifold: ArrayManifold,
    noise_power: float = 0.0,
    seed=None,
    n_samples: Optional[int] = None,
    fractional: str = "nearest",
) -> ReceivedSignal:
    """Sum of ``g b(theta) a(phi)^T s(t - toa)`` over paths plus complex white noise."""
    if not waveform_sets:
        raise ValueError("at least one waveform set is required")
    any_set = next(iter(waveform_sets.values()))
    fs, n_wave = any_set.sample_rate, any_set.length
    if n_samples is None:
        latest = max((p.toa for p in paths), default=0.0)
        n_samples = n_wave + int(math.ceil(latest * fs)) + 16
    rx = np.zeros((rx_manifold.size, n_samples), dtype=complex)
    for p in paths:
        wset = waveform_sets[p.cluster]
        if p.toa < 0 or p.toa * fs > n_samples:
            raise ValueError(f"path delay {p.toa} s falls outside the simulated window")
        steer = p.gain * np.outer(rx_manifold.response(p.theta), tx_manifold.response(p.phi))
        rx += steer @ _delayed(wset.waveforms, p.toa * fs, n_samples, fractional)
    if noise_power > 0:
        rng = np.random.default_rng(seed)
        scale = math.sqrt(noise_power / 2)
        rx += scale * (rng.standard_normal(rx.shape) + 1j * rng.standard_normal(rx.shape))
    return ReceivedSignal(rx, fs, noise_power)


def matched_filter(rx: ReceivedSignal, waveforms: WaveformSet) -> MatchedFilterBank:
    """``y[z] = sum_n r[n] s^H[n - z]`` for every lag z in the receive window."""
    if not math.isclose(rx.sample_rate, waveforms.sample_rate):
        raise ValueError("received signal and waveforms use different sample rates")
    n_rx = rx.samples.shape[1]
    nfft = 1 << int(math.ceil(math.log2(n_rx + waveforms.length)))
    r = np.fft.fft(rx.samples, nfft, axis=1)
    s = np.fft.fft(waveforms.waveforms, nfft, axis=1)
    corr = np.fft.ifft(r[:, None, :] * s.conj()[None, :, :], axis=2)[:, :, :n_rx]
    return MatchedFilterBank(np.moveaxis(corr, 2, 0), rx.sample_rate, waveforms.cluster_id)


@dataclass(frozen=True)
class Detection:
    lag: int
    toa: float
    norm: float


def detection_threshold(power: np.ndarray, pfa: float, iterations: int = 30) -> float:
    """Adaptive threshold on ``||y[z]||_F^2``.

    The off-peak floor (noise plus waveform cross-correlation leakage) is
    modelled as Gamma distributed with moments fitted to the lags that stay
    below the current threshold; the threshold is its ``1 - pfa / n_lags``
    quantile.  The first fit excludes lags above ten times the median, so a
    few strong peaks cannot inflate it.
    """
    keep = power <= 10 * np.median(power)
    thr = np.inf
    for _ in range(iterations):
        sample = power[keep]
        mean, var = float(sample.mean()), float(sample.var())
        if mean <= 0:
            return 0.0
        shape = mean**2 / var if var > 0 else 1e6
        thr = float(stats.gamma.isf(pfa / power.size, shape, scale=mean / shape))
        new_keep = power < thr
        if np.array_equal(new_keep, keep) or new_keep.sum() < 8:
            break
        keep = new_keep
    return thr


def detect_toas_detail(bank: MatchedFilterBank, pfa: float = 1e-3) -> list[Detection]:
    power = np.sum(np.abs(bank.y) ** 2, axis=(1, 2))
    if not np.any(power > 0):
        return []
    thr = detection_threshold(power, pfa)
    left = np.r_[-np.inf, power[:-1]]
    right = np.r_[power[1:], -np.inf]
    peaks = np.flatnonzero((power > thr) & (power >= left) & (power > right))
    return [Detection(int(z), z / bank.sample_rate, float(math.sqrt(power[z]))) for z in peaks]


def detect_toas(bank: MatchedFilterBank, pfa: float = 1e-3) -> list[float]:
    """ToA estimates (seconds) at local maxima of the matched-filter norm.

    ``pfa`` is the probability that a noise-only bank yields any detection.
    Two paths closer than about one lag bin merge into one peak.
    """
    return [d.toa for d in detect_toas_detail(bank, pfa)]


def _grid(step: float) -> np.ndarray:
    n = int(round(TWO_PI / step))
    return np.arange(n) * (TWO_PI / n)


def _best_angles(manifold: ArrayManifold, subspace: np.ndarray, grid: np.ndarray, count: int) -> np.ndarray:
    """``count`` highest peaks of the normalised subspace-projection spectrum."""
    resp = manifold.responses(grid)
    spec = np.sum(np.abs(resp.conj() @ subspace) ** 2, axis=1) / manifold.size
    if count == 1:
        return grid[[int(np.argmax(spec))]]
    left, right = np.roll(spec, 1), np.roll(spec, -1)
    peaks = np.flatnonzero((spec >= left) & (spec > right))
    return grid[peaks[np.argsort(spec[peaks])[::-1][:count]]]


def estimate_angles(
    y: np.ndarray,
    rx_manifold: ArrayManifold,
    tx_manifold: ArrayManifold,
    grid_step: float = DEFAULT_GRID,
    tolerance: Optional[float] = None,
    multipath_ratio: float = 0.3,
    max_paths: int = 3,
) -> list[tuple[float, float]]:
    """(AoA, AoD) pairs from one matched-filter matrix ``y`` (M_r, M_t).

    A single dominant path is read off the principal singular pair.  When the
    second singular value exceeds ``multipath_ratio`` times the first, AoAs
    and AoDs are searched separately on the left and right signal subspaces
    (noise-subspace spectra) and paired on the bilinear match
    ``|b(theta)^H y conj(a(phi))|``.
    """
    if tolerance is not None and grid_step / 2 > tolerance:
        raise ConfigurationError(
            f"angle grid step {math.degrees(grid_step):.3g} deg cannot meet tolerance {math.degrees(tolerance):.3g} deg"
        )
    grid = _grid(grid_step)
    u, s, vh = np.linalg.svd(y)
    if s[0] == 0:
        return []
    rank = 1 + int(np.sum(s[1:max_paths] > multipath_ratio * s[0]))
    left = u[:, :rank]
    right = vh[:rank].T  # y ~ b a^T, so rows of vh span the a(phi)
    thetas = _best_angles(rx_manifold, left, grid, rank)
    phis = _best_angles(tx_manifold, right, grid, rank)
    if rank == 1:
        return [(float(thetas[0]), float(phis[0]))]

    b = rx_manifold.responses(thetas)
    a = tx_manifold.responses(phis)
    match = np.abs(b.conj() @ y @ a.T.conj())
    pairs = []
    used_t, used_p = set(), set()
    for flat in np.argsort(match, axis=None)[::-1]:
        i, j = np.unravel_index(flat, match.shape)
        if i in used_t or j in used_p:
            continue
        used_t.add(i)
        used_p.add(j)
        pairs.append((float(thetas[i]), float(phis[j])))
    return pairs


def extract_observations(
    rx: ReceivedSignal,
    waveform_sets: Mapping[int, WaveformSet],
    rx_manifold: ArrayManifold,
    tx_manifold: ArrayManifold,
    grid_step: float = DEFAULT_GRID,
    pfa: float = 1e-3,
    multipath_ratio: float = 0.3,
) -> list[PathObservation]:
    """Cluster-labelled observations, ordered by lag then cluster."""
    return [
        obs
        for obs, _ in extract_observations_detail(
            rx, waveform_sets, rx_manifold, tx_manifold, grid_step, pfa, multipath_ratio
        )
    ]


def extract_observations_detail(
    rx: ReceivedSignal,
    waveform_sets: Mapping[int, WaveformSet],
    rx_manifold: ArrayManifold,
    tx_manifold: ArrayManifold,
    grid_step: float = DEFAULT_GRID,
    pfa: float = 1e-3,
    multipath_ratio: float = 0.3,
) -> list[tuple[PathObservation, float]]:
    """As :func:`extract_observations`, each paired with its peak norm."""
    found = []
    for k in sorted(waveform_sets):
        bank = matched_filter(rx, waveform_sets[k])
        detections = detect_toas_detail(bank, pfa)
        if not detections:
            log.info("cluster %s: no path above the detection threshold", k)
        for det in detections:
            for theta, phi in estimate_angles(
                bank.y[det.lag], rx_manifold, tx_manifold, grid_step, multipath_ratio=multipath_ratio
            ):
                found.append((det.lag, k, PathObservation(theta, phi, det.toa, cluster=k), det.norm))
    found.sort(key=lambda t: (t[0], t[1]))
    if len(found) < 6:
        log.info("only %d paths detected; the solvers may be infeasible", len(found))
    return [(obs, norm) for _, _, obs, norm in found]


# -- binary dumps ----------------------------------------------------------
#
# header: 4-byte magic, then little-endian uint32 version, uint32 M_r,
# uint32 M_t, uint64 N (samples or lags), float64 sample rate, float64
# noise power (received dumps) or cluster id (filter banks).  Payload:
# little-endian float64 (re, im) pairs, C order.

_HEADER = struct.Struct("<4sIIIQdd")
_VERSION = 1


def _write(path, magic: bytes, m_r: int, m_t: int, n: int, rate: float, extra: float, data: np.ndarray):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, _VERSION, m_r, m_t, n, rate, extra))
        fh.write(np.ascontiguousarray(data, dtype="<c16").tobytes())


def _read(path, magic: bytes):
    raw = Path(path).read_bytes()
    tag, version, m_r, m_t, n, rate, extra = _HEADER.unpack_from(raw)
    if tag != magic or version != _VERSION:
        raise ValueError(f"{path}: not a version-{_VERSION} {magic.decode()} dump")
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    return m_r, m_t, n, rate, extra, data


def save_received(rx: ReceivedSignal, path, n_tx: int = 0) -> None:
    m_r, n = rx.samples.shape
    _write(path, b"HVRX", m_r, n_tx, n, rx.sample_rate, rx.noise_power, rx.samples)


def load_received(path) -> ReceivedSignal:
    m_r, _, n, rate, noise, data = _read(path, b"HVRX")
    return ReceivedSignal(data.reshape(m_r, n).astype(complex), rate, noise)


def save_bank(bank: MatchedFilterBank, path) -> None:
    n, m_r, m_t = bank.y.shape
    _write(path, b"HVMF", m_r, m_t, n, bank.sample_rate, float(bank.cluster_id), bank.y)


def load_bank(path) -> MatchedFilterBank:
    m_r, m_t, n, rate, cluster, data = _read(path, b"HVMF")
    return MatchedFilterBank(data.reshape(n, m_r, m_t).astype(complex), rate, int(cluster))
