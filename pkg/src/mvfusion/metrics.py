"""Scoring and diagnostics: sidelobe ratio, support overlap, dictionary
coherence, discretization error split, and a matched-filter comparison image."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import RegionOfInterest, Scene
from .interp import RegularRaster, raster_centers
from .simulate import Pilot, SampleCovariance, ScattererCloud, scatter_covariance, response_columns
from .single_view import GridModel, threshold_support


# ---------------------------------------------------------------------------
# image scores
# ---------------------------------------------------------------------------

def p_islr_points(values: np.ndarray, centers: np.ndarray, scene: Scene) -> float:
    """Integrated sidelobe ratio in dB: energy outside the true targets over
    energy inside.  All-inside gives -inf, all-outside +inf."""
    v = np.asarray(values, dtype=float).reshape(-1)
    inside = scene.in_targets(centers)
    main = float(v[inside].sum())
    side = float(v[~inside].sum())
    if main <= 0.0:
        return math.inf
    if side <= 0.0:
        return -math.inf
    return 10.0 * math.log10(side / main)


def p_islr(image: RegularRaster, scene: Scene) -> float:
    return p_islr_points(image.values.ravel(), image.cell_centers(), scene)


def iou_points(values: np.ndarray, centers: np.ndarray, scene: Scene,
               fraction: float = 0.95) -> float:
    """Intersection over union between the thresholded support (cells holding
    ``fraction`` of the mass) and the true target cells."""
    mask = threshold_support(values, fraction)
    truth = scene.in_targets(centers)
    union = int(np.sum(mask | truth))
    if union == 0:
        return 0.0
    return float(np.sum(mask & truth)) / union


def iou(image: RegularRaster, scene: Scene, fraction: float = 0.95) -> float:
    return iou_points(image.values.ravel(), image.cell_centers(), scene, fraction)


def grid_scores(grid: GridModel, scene: Scene, fraction: float = 0.95) -> dict:
    """Point-set scores of a single-view grid at its current positions."""
    return {
        "p_islr_db": p_islr_points(grid.gamma_r, grid.positions, scene),
        "iou": iou_points(grid.gamma_r, grid.positions, scene, fraction),
    }


# ---------------------------------------------------------------------------
# dictionary coherence
# ---------------------------------------------------------------------------

def coherence(columns: np.ndarray, block: int = 256) -> float:
    """Largest normalized off-diagonal column correlation, in [0, 1]."""
    v = np.asarray(columns)
    norms = np.linalg.norm(v, axis=0)
    if np.any(norms == 0):
        raise ValueError("coherence undefined for a zero column")
    vn = v / norms
    q = vn.shape[1]
    if q < 2:
        return 0.0
    best = 0.0
    for start in range(0, q, block):
        stop = min(start + block, q)
        g = np.abs(vn[:, start:stop].conj().T @ vn)
        for i in range(stop - start):
            g[i, start + i] = 0.0
        best = max(best, float(g.max()))
    return min(best, 1.0)


# ---------------------------------------------------------------------------
# discretization split
# ---------------------------------------------------------------------------

@dataclass
class DiscretizationDiag:
    model_gap: float          # || on-grid model - cloud model ||_F, noise-free
    projected_gap: float      # part reachable inside the active column span
    orthogonal_energy: float  # cloud energy outside the span
    bound_holds: bool

    def bound_rhs(self) -> float:
        return self.projected_gap**2 + 2.0 * self.orthogonal_energy**2


def discretization_diag(grid: GridModel, columns: np.ndarray, cloud: ScattererCloud,
                        pilot: Pilot, scene: Scene, k: int) -> DiscretizationDiag:
    """Split the covariance modeling error into in-span and out-of-span parts.

    The squared total gap is bounded by the squared in-span gap plus twice the
    squared out-of-span energy.
    """
    w = grid.intensity_products()
    psi = (columns * w) @ columns.conj().T
    psi0 = scatter_covariance(cloud, pilot, scene, k)
    active = w > 0
    if active.any():
        qbasis, _ = np.linalg.qr(columns[:, active])
        psi0_in = qbasis @ (qbasis.conj().T @ psi0 @ qbasis) @ qbasis.conj().T
        orth = math.sqrt(max(
            np.linalg.norm(psi0, "fro") ** 2
            - np.linalg.norm(qbasis.conj().T @ psi0, "fro") ** 2, 0.0))
    else:
        psi0_in = np.zeros_like(psi0)
        orth = float(np.linalg.norm(psi0, "fro"))
    model_gap = float(np.linalg.norm(psi - psi0, "fro"))
    projected_gap = float(np.linalg.norm(psi - psi0_in, "fro"))
    diag = DiscretizationDiag(model_gap, projected_gap, orth, True)
    diag.bound_holds = model_gap**2 <= diag.bound_rhs() + 1e-9 * max(1.0, diag.bound_rhs())
    return diag


# ---------------------------------------------------------------------------
# matched-filter comparison image
# ---------------------------------------------------------------------------

def matched_filter_baseline(sample_cov: SampleCovariance | np.ndarray, pilot: Pilot,
                            scene: Scene, k: int, grid_shape: tuple[int, int],
                            normalize: bool = True) -> RegularRaster:
    """Per-cell matched-filter energy v^H S v / ||v||^4 on a regular raster.

    This is a deliberately simple comparison imager, not part of the
    reconstruction pipeline.
    """
    s = sample_cov.matrix if isinstance(sample_cov, SampleCovariance) else np.asarray(sample_cov)
    centers = raster_centers(scene.roi, grid_shape)
    rx = scene.rxs[k]
    v = response_columns(pilot, scene.tx.position, rx.position, rx.num_antennas, centers)
    sv = s @ v
    energy = np.real(np.einsum("ij,ij->j", v.conj(), sv))
    norms = np.real(np.einsum("ij,ij->j", v.conj(), v))
    img = energy / norms**2
    img = np.maximum(img, 0.0)
    if normalize and img.max() > 0:
        img = img / img.max()
    ny, nx = grid_shape
    return RegularRaster(scene.roi, img.reshape(ny, nx))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _jsonable_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


@dataclass
class MetricsReport:
    """Scores of one run; serializes infinities as strings for JSON."""

    fused: dict
    single_view: list
    baseline: dict | None = None
    runtime_s: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(obj):
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [clean(v) for v in obj]
            if isinstance(obj, (float, np.floating)):
                return _jsonable_float(float(obj))
            if isinstance(obj, (int, np.integer)):
                return int(obj)
            if isinstance(obj, (bool, np.bool_)):
                return bool(obj)
            return obj

        return clean({
            "fused": self.fused,
            "single_view": self.single_view,
            "baseline": self.baseline,
            "runtime_s": self.runtime_s,
            "config": self.config,
        })
