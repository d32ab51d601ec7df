"""Multi-view fusion of interpolated single-view images.

Weighted least squares with a per-cell visibility selector: cells a receiver
cannot see should not pull the fused image toward that view's (zero) value.
The selector and the fused image are alternated; for fixed selectors the
image solve is an ADMM with an elementwise sparsity penalty and an isotropic
total-variation penalty through forward differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RegionOfInterest
from .interp import RegularRaster
from .numerics import cg_solve


class FusionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# difference operator
# ---------------------------------------------------------------------------

class TVOperator:
    """Forward differences along x and y with replicate boundary.

    ``apply`` maps a flat image of ny*nx cells to the stacked pair of
    difference images (2*ny*nx values, x-differences first).
    """

    def __init__(self, shape: tuple[int, int]):
        self.shape = tuple(shape)

    @property
    def n(self) -> int:
        ny, nx = self.shape
        return ny * nx

    def apply(self, flat: np.ndarray) -> np.ndarray:
        ny, nx = self.shape
        v = np.asarray(flat, dtype=float).reshape(ny, nx)
        gx = np.zeros_like(v)
        gy = np.zeros_like(v)
        gx[:, :-1] = v[:, 1:] - v[:, :-1]
        gy[:-1, :] = v[1:, :] - v[:-1, :]
        return np.concatenate([gx.ravel(), gy.ravel()])

    def apply_t(self, z: np.ndarray) -> np.ndarray:
        ny, nx = self.shape
        z = np.asarray(z, dtype=float)
        gx = z[: self.n].reshape(ny, nx)
        gy = z[self.n:].reshape(ny, nx)
        out = np.zeros((ny, nx))
        out[:, :-1] -= gx[:, :-1]
        out[:, 1:] += gx[:, :-1]
        out[:-1, :] -= gy[:-1, :]
        out[1:, :] += gy[:-1, :]
        return out.ravel()

    def dense(self) -> np.ndarray:
        eye = np.eye(self.n)
        return np.column_stack([self.apply(eye[:, i]) for i in range(self.n)])


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


# ---------------------------------------------------------------------------
# configuration and state
# ---------------------------------------------------------------------------

@dataclass
class FusionInputs:
    """Single-view images and per-view path losses on the common raster."""

    roi: RegionOfInterest
    images: np.ndarray        # (K, ny, nx), single-view intensities
    path_losses: np.ndarray   # (K, ny, nx), positive

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.path_losses = np.asarray(self.path_losses, dtype=float)
        if self.images.ndim != 3 or self.images.shape != self.path_losses.shape:
            raise FusionError("fusion inputs need matching (K, ny, nx) stacks")
        if np.any(self.path_losses <= 0):
            raise FusionError("path losses must be positive")

    @property
    def k(self) -> int:
        return self.images.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.images.shape[1:]

    def flat_images(self) -> np.ndarray:
        return self.images.reshape(self.k, -1)

    def flat_losses(self) -> np.ndarray:
        return self.path_losses.reshape(self.k, -1)


@dataclass
class FusionConfig:
    """None for mu/eta selects the data-scaled defaults."""

    mu: float | None = None
    eta: float | None = None
    rho: float = 1.0
    iter_max: int = 30
    iter1: int = 10
    eps1: float = 1e-8
    eps2: float = 1e-8
    cg_tol: float = 1e-8
    cg_max_iter: int = 200
    freeze_lambda: bool = False


@dataclass
class FusionState:
    gamma: np.ndarray          # (Q',) fused image
    selectors: np.ndarray      # (K, Q') in {0, 1}
    z: np.ndarray              # (2Q',) split variable on the differences
    u: np.ndarray              # (2Q',) scaled dual


@dataclass
class FusionResult:
    raster: RegularRaster
    state: FusionState
    trace: list
    iterations: int
    converged: bool
    mu: float
    eta: float


# ---------------------------------------------------------------------------
# update steps
# ---------------------------------------------------------------------------

def wls_cost(gamma: np.ndarray, selectors: np.ndarray, inputs: FusionInputs) -> float:
    """Visibility-selected data fit: selected cells match the view, unselected
    cells pay for the view's own energy instead."""
    g = np.asarray(gamma, dtype=float).reshape(-1)
    lam = np.asarray(selectors, dtype=float).reshape(inputs.k, -1)
    imgs = inputs.flat_images()
    beta = inputs.flat_losses()
    fit = lam * beta * (imgs - g[None, :]) ** 2
    off = (1.0 - lam) * beta * imgs**2
    return float(np.sum(fit + off))


def lambda_update(gamma: np.ndarray, inputs: FusionInputs) -> np.ndarray:
    """Per-cell, per-view selector minimizing the WLS cost at fixed image.

    Selecting view k at cell q costs (image_k - gamma)^2 versus image_k^2;
    the tie goes to selecting.
    """
    g = np.asarray(gamma, dtype=float).reshape(-1)
    imgs = inputs.flat_images()
    drop = g[None, :] ** 2 - 2.0 * g[None, :] * imgs > 0.0
    return (~drop).astype(float)


def gamma_update(state: FusionState, inputs: FusionInputs, op: TVOperator,
                 mu: float, rho: float, cg_tol: float, cg_max_iter: int):
    """Quadratic image solve (matrix-free CG) followed by clamping to [0, 1]."""
    beta = inputs.flat_losses()
    lam = state.selectors
    diag = 2.0 * np.sum(beta * lam, axis=0)
    rhs = 2.0 * np.sum(beta * lam * inputs.flat_images(), axis=0)
    rhs += rho * op.apply_t(state.z + state.u) - mu

    def apply_a(x):
        return diag * x + rho * op.apply_t(op.apply(x))

    res = cg_solve(apply_a, rhs, tol=cg_tol, max_iter=cg_max_iter, x0=state.gamma)
    gamma = np.clip(res.x, 0.0, 1.0)
    return gamma, res


def z_update(gamma: np.ndarray, u: np.ndarray, op: TVOperator, eta: float, rho: float) -> np.ndarray:
    return soft_threshold(op.apply(gamma) - u, eta / rho)


def u_update(u: np.ndarray, z: np.ndarray, gamma: np.ndarray, op: TVOperator) -> np.ndarray:
    return u + z - op.apply(gamma)


def fusion_objective(gamma: np.ndarray, selectors: np.ndarray, inputs: FusionInputs,
                     op: TVOperator, mu: float, eta: float) -> dict:
    parts = {
        "wls": wls_cost(gamma, selectors, inputs),
        "sparsity": mu * float(np.sum(np.abs(gamma))),
        "tv": eta * float(np.sum(np.abs(op.apply(gamma)))),
    }
    parts["total"] = parts["wls"] + parts["sparsity"] + parts["tv"]
    return parts


def default_penalties(inputs: FusionInputs) -> tuple[float, float]:
    """Sparsity weight 1% of the brightest view value; TV weight a tenth of that."""
    peak = float(inputs.images.max())
    mu = 0.01 * peak
    return mu, 0.1 * mu


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_fusion(inputs: FusionInputs, cfg: FusionConfig | None = None) -> FusionResult:
    """Alternate visibility selectors with ADMM image updates until both the
    image and the selectors stop changing (relative squared change; 0/0 counts
    as converged)."""
    cfg = cfg or FusionConfig()
    mu, eta = cfg.mu, cfg.eta
    auto_mu, auto_eta = default_penalties(inputs)
    if mu is None:
        mu = auto_mu
    if eta is None:
        eta = auto_eta
    if cfg.rho <= 0:
        raise FusionError("the ADMM penalty rho must be positive")
    if cfg.iter1 < 1:
        raise FusionError("need at least one inner update per round")

    op = TVOperator(inputs.grid_shape)
    nq = op.n
    gamma = np.clip(inputs.flat_images().sum(axis=0), 0.0, 1.0)
    selectors = np.ones((inputs.k, nq))
    state = FusionState(gamma, selectors, op.apply(gamma), np.zeros(2 * nq))

    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.iter_max + 1):
        gamma_prev = state.gamma.copy()
        sel_prev = state.selectors.copy()
        if not cfg.freeze_lambda:
            state.selectors = lambda_update(state.gamma, inputs)
        for _ in range(cfg.iter1):
            state.gamma, cg_res = gamma_update(state, inputs, op, mu, cfg.rho,
                                               cg_tol=cfg.cg_tol, cg_max_iter=cfg.cg_max_iter)
            state.z = z_update(state.gamma, state.u, op, eta, cfg.rho)
            state.u = u_update(state.u, state.z, state.gamma, op)
        obj = fusion_objective(state.gamma, state.selectors, inputs, op, mu, eta)
        obj["primal_residual"] = float(np.linalg.norm(state.z - op.apply(state.gamma)))
        obj["cg_iterations"] = cg_res.iterations
        obj["cg_converged"] = cg_res.converged
        trace.append(obj)

        dg = state.gamma - gamma_prev
        ds = state.selectors - sel_prev
        rel_g = _rel_change(dg, gamma_prev)
        rel_s = _rel_change(ds, sel_prev)
        if rel_g <= cfg.eps1 and rel_s <= cfg.eps2:
            converged = True
            break

    ny, nx = inputs.grid_shape
    raster = RegularRaster(inputs.roi, state.gamma.reshape(ny, nx))
    return FusionResult(raster, state, trace, it, converged, mu, eta)


def _rel_change(diff: np.ndarray, prev: np.ndarray) -> float:
    num = float(np.sum(diff * diff))
    den = float(np.sum(prev * prev))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den
