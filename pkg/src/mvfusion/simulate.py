"""Measurement simulation for the multistatic network.

A frame stacks the receive samples of all pilot symbols into one vector of
length ``n = pilot_length * n_rx`` (index ``l * n_rx + antenna``).  Extended
targets are represented by Monte-Carlo scatterer clouds whose reflectivities
are redrawn independently every frame, so the sample covariance of the frames
estimates the model covariance exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, Scene, aod, aoa, path_loss, steering_matrix, visibility

_MAGIC = b"MVFC"
_VERSION = 1

# substream tags so every random draw has a deterministic, order-independent seed
STREAM_CLOUD = 1
STREAM_FRAMES = 2
STREAM_PILOT = 3
STREAM_PHASE1 = 4


def derived_rng(seed: int, *key) -> np.random.Generator:
    """Independent generator for a named substream of a master seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def noise_variance_from_psd(psd_dbm_per_hz: float, bandwidth_hz: float) -> float:
    """Noise power in watts over a bandwidth from a one-sided PSD in dBm/Hz."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return dbm_to_watts(psd_dbm_per_hz + 10.0 * math.log10(bandwidth_hz))


@dataclass(frozen=True)
class NoiseModel:
    variance: float

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("noise variance must be positive")


# ---------------------------------------------------------------------------
# pilots
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pilot:
    """Transmit pilot block, shape (n_tx, length), per-antenna power ``power``."""

    matrix: np.ndarray
    power: float
    kind: str

    @property
    def n_tx(self) -> int:
        return self.matrix.shape[0]

    @property
    def length(self) -> int:
        return self.matrix.shape[1]

    def is_orthogonal(self, tol: float = 1e-10) -> bool:
        g = self.matrix @ self.matrix.conj().T
        target = self.length * self.power * np.eye(self.n_tx)
        return bool(np.max(np.abs(g - target)) <= tol * self.length * self.power)


def make_pilot(kind: str, n_tx: int, length: int, power: float,
               rng: np.random.Generator | None = None) -> Pilot:
    """Build a pilot block.

    ``orthogonal`` uses scaled discrete-Fourier rows (requires
    ``length >= n_tx``); ``random-sphere`` draws each row uniformly on the
    complex sphere of radius ``sqrt(length * power)``.
    """
    if power <= 0:
        raise ValueError("pilot power must be positive")
    if kind == "orthogonal":
        if length < n_tx:
            raise ValueError("orthogonal pilot needs length >= n_tx")
        n = np.arange(n_tx)[:, None]
        l = np.arange(length)[None, :]
        x = math.sqrt(power) * np.exp(-2j * math.pi * n * l / length)
        return Pilot(x, power, kind)
    if kind == "random-sphere":
        if rng is None:
            raise ValueError("random-sphere pilot needs a generator")
        z = rng.standard_normal((n_tx, length)) + 1j * rng.standard_normal((n_tx, length))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        x = z / norms * math.sqrt(length * power)
        return Pilot(x, power, kind)
    raise ValueError(f"unknown pilot kind {kind!r}")


# ---------------------------------------------------------------------------
# scatterer clouds
# ---------------------------------------------------------------------------

@dataclass
class ScattererCloud:
    """Monte-Carlo point cloud over the target region.

    ``weights`` are the mean reflection intensities and sum to one;
    ``alpha[k]`` flags visibility of each point to receiver k.
    """

    points: np.ndarray
    weights: np.ndarray
    alpha: np.ndarray

    @property
    def size(self) -> int:
        return self.points.shape[0]


def sample_cloud(scene: Scene, density: float, rng: np.random.Generator) -> ScattererCloud:
    """Uniform points over the union of targets, count ``round(density * area)``."""
    area = scene.target_area()
    if area <= 0:
        raise GeometryError("cannot sample a cloud from an empty target region")
    n = max(1, int(round(density * area)))
    pts = np.empty((0, 2))
    roi = scene.roi
    attempts = 0
    while pts.shape[0] < n:
        batch = max(4 * n, 256)
        cand = np.column_stack([
            rng.uniform(roi.x1, roi.x2, batch),
            rng.uniform(roi.y1, roi.y2, batch),
        ])
        keep = scene.in_targets(cand)
        pts = np.vstack([pts, cand[keep]])
        attempts += 1
        if attempts > 200:
            raise GeometryError("target region too small to sample (acceptance ~ 0)")
    pts = pts[:n]
    weights = np.full(n, 1.0 / n)
    alpha = np.stack([visibility(scene, k, pts) for k in range(scene.num_receivers)])
    return ScattererCloud(pts, weights, alpha)


# ---------------------------------------------------------------------------
# model response columns
# ---------------------------------------------------------------------------

def response_columns(pilot: Pilot, tx_pos, rx_pos, n_rx: int, points: np.ndarray) -> np.ndarray:
    """Stacked response vectors for scatterers at ``points``.

    Column q is ``kron(X^T a(phi_q), b(theta_q))`` with a/b transmit and
    receive steering vectors; shape (length * n_rx, Q).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    phis = aod(tx_pos, pts)
    thetas = aoa(rx_pos, pts)
    a = steering_matrix(phis, pilot.n_tx)          # (n_tx, Q)
    b = steering_matrix(thetas, n_rx)              # (n_rx, Q)
    abar = pilot.matrix.T @ a                      # (length, Q)
    cols = abar[:, None, :] * b[None, :, :]        # (length, n_rx, Q)
    return cols.reshape(pilot.length * n_rx, -1)


def scatter_covariance(cloud: ScattererCloud, pilot: Pilot, scene: Scene, k: int) -> np.ndarray:
    """Noise-free receive covariance contributed by the cloud at receiver k."""
    rx = scene.rxs[k]
    vis = cloud.alpha[k]
    n = pilot.length * rx.num_antennas
    if not vis.any():
        return np.zeros((n, n), dtype=complex)
    pts = cloud.points[vis]
    v = response_columns(pilot, scene.tx.position, rx.position, rx.num_antennas, pts)
    gb = path_loss(scene.tx.position, rx.position, pts, scene.beta0_sq)
    w = cloud.weights[vis] * gb
    sig = (v * w) @ v.conj().T
    return 0.5 * (sig + sig.conj().T)


def true_covariance(cloud: ScattererCloud, pilot: Pilot, scene: Scene, k: int,
                    noise: NoiseModel) -> np.ndarray:
    """Model covariance of one stacked frame at receiver k (cloud + noise)."""
    rx = scene.rxs[k]
    n = pilot.length * rx.num_antennas
    return scatter_covariance(cloud, pilot, scene, k) + noise.variance * np.eye(n)


# ---------------------------------------------------------------------------
# frame simulation and sample covariance
# ---------------------------------------------------------------------------

@dataclass
class SampleCovariance:
    """Sample covariance of M stacked frames at one receiver."""

    matrix: np.ndarray
    num_frames: int
    receiver: int = 0
    seed: int = -1

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _complex_gaussian(rng: np.random.Generator, var, shape) -> np.ndarray:
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_frames(cloud: ScattererCloud, pilot: Pilot, scene: Scene, k: int,
                    noise: NoiseModel, num_frames: int, seed: int) -> SampleCovariance:
    """Draw ``num_frames`` frames with per-frame reflectivities and noise.

    Every (receiver, frame) pair reads from its own derived substream, so
    results do not depend on scheduling order across receivers.
    """
    rx = scene.rxs[k]
    n_rx = rx.num_antennas
    n = pilot.length * n_rx
    vis = cloud.alpha[k]
    pts = cloud.points[vis]
    if pts.shape[0] > 0:
        phis = aod(scene.tx.position, pts)
        thetas = aoa(rx.position, pts)
        a = steering_matrix(phis, pilot.n_tx)
        b = steering_matrix(thetas, n_rx)
        gb = path_loss(scene.tx.position, rx.position, pts, scene.beta0_sq)
        var_c = cloud.weights[vis] * gb
    frames = np.empty((n, num_frames), dtype=complex)
    for m in range(num_frames):
        rng = derived_rng(seed, STREAM_FRAMES, k, m)
        if pts.shape[0] > 0:
            c = _complex_gaussian(rng, var_c, pts.shape[0])
            h = (b * c) @ a.T                       # (n_rx, n_tx) channel
            y = h @ pilot.matrix                    # (n_rx, length)
        else:
            y = np.zeros((n_rx, pilot.length), dtype=complex)
        z = _complex_gaussian(rng, noise.variance, (n_rx, pilot.length))
        frames[:, m] = (y + z).ravel(order="F")
    s = frames @ frames.conj().T / num_frames
    s = 0.5 * (s + s.conj().T)
    return SampleCovariance(s, num_frames, k, seed)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_covariance(path, sc: SampleCovariance) -> None:
    """Binary container: magic, version, dims, frame count, receiver, seed,
    then the matrix as little-endian complex128 (interleaved re/im), row-major."""
    mat = np.ascontiguousarray(sc.matrix.astype("<c16"))
    header = struct.pack("<4sIIIiq", _MAGIC, _VERSION, mat.shape[0], sc.num_frames,
                         sc.receiver, sc.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(mat.tobytes())


def load_covariance(path) -> SampleCovariance:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIIIiq"))
        magic, version, n, m, receiver, seed = struct.unpack("<4sIIIiq", header)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a covariance container")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != n * n:
        raise ValueError(f"{path}: truncated covariance payload")
    return SampleCovariance(data.reshape(n, n).astype(complex), m, receiver, seed)


def export_covariance_csv(path, sc: SampleCovariance) -> None:
    """Plain-text export: one matrix row per line, alternating re,im columns."""
    mat = sc.matrix
    with open(path, "w") as fh:
        fh.write(f"# n={mat.shape[0]} frames={sc.num_frames} receiver={sc.receiver} seed={sc.seed}\n")
        for row in mat:
            cells = []
            for z in row:
                cells.append(f"{z.real:.17g}")
                cells.append(f"{z.imag:.17g}")
            fh.write(",".join(cells) + "\n")
