"""Shared builders and independent oracles for the test suite.

Everything here is deliberately written from first principles (dense linear
algebra, direct summation) so the tests do not reuse the code paths they are
checking.
"""

import math

import numpy as np

from mvfusion.geometry import (
    Array2D,
    Disc,
    FieldOfView,
    RegionOfInterest,
    Scene,
    path_loss,
    visibility,
)
from mvfusion.simulate import Pilot, ScattererCloud, make_pilot

TX_POS = np.array([-3.0, 7.5])
RX_POSITIONS = (
    np.array([18.0, 7.5]),
    np.array([7.5, 18.0]),
    np.array([7.5, -3.0]),
)
BETA0_SQ = (10.0 ** (-35.0 / 10.0)) ** 2


def benchmark_scene(n_tx=4, n_rx=4, receivers=(0,), targets=None, fovs=()):
    """Standard station layout with a configurable target set."""
    roi = RegionOfInterest(0.0, 15.0, 0.0, 15.0)
    if targets is None:
        targets = (Disc(np.array([7.5, 7.5]), 2.0),)
    tx = Array2D(TX_POS.copy(), n_tx, "tx")
    rxs = tuple(Array2D(RX_POSITIONS[i].copy(), n_rx, "rx") for i in receivers)
    return Scene(roi, tx, rxs, targets, fovs, BETA0_SQ)


def orthogonal_pilot(n_tx, length=None, power=1.0):
    return make_pilot("orthogonal", n_tx, length or n_tx, power)


def cloud_in_targets(scene, n, rng):
    """Exactly n uniform points inside the target union, weights 1/n."""
    roi = scene.roi
    pts = np.empty((0, 2))
    while pts.shape[0] < n:
        cand = np.column_stack([
            rng.uniform(roi.x1, roi.x2, 8 * n),
            rng.uniform(roi.y1, roi.y2, 8 * n),
        ])
        pts = np.vstack([pts, cand[scene.in_targets(cand)]])
    pts = pts[:n]
    alpha = np.stack([visibility(scene, k, pts) for k in range(scene.num_receivers)])
    return ScattererCloud(pts, np.full(n, 1.0 / n), alpha)


def dense_response_column(pilot: Pilot, tx_pos, rx_pos, n_rx, point):
    """kron(X^T a, b) built step by step, independent of the library helper."""
    p = np.asarray(point, dtype=float)
    t = np.asarray(tx_pos, dtype=float)
    r = np.asarray(rx_pos, dtype=float)
    sin_phi = (t[1] - p[1]) / np.hypot(t[0] - p[0], t[1] - p[1])
    sin_theta = (r[1] - p[1]) / np.hypot(r[0] - p[0], r[1] - p[1])
    a = np.exp(-1j * math.pi * np.arange(pilot.n_tx) * sin_phi)
    b = np.exp(-1j * math.pi * np.arange(n_rx) * sin_theta)
    return np.kron(pilot.matrix.T @ a, b)


def dense_ml_cost(sigma, s_hat):
    """ln|Sigma| + tr(Sigma^-1 S) via LAPACK, no maintained state."""
    sign, logdet = np.linalg.slogdet(sigma)
    assert sign.real > 0
    return float(logdet.real + np.real(np.trace(np.linalg.solve(sigma, s_hat))))


def random_hermitian_psd(rng, n, scale=1.0, jitter=0.05):
    """Well conditioned random Hermitian positive definite matrix."""
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    m = a @ a.conj().T / n + jitter * np.eye(n)
    return scale * 0.5 * (m + m.conj().T)


def random_spd(rng, n, jitter=0.1):
    a = rng.standard_normal((n, n))
    return a @ a.T / n + jitter * np.eye(n)
