"""Single-view covariance imaging on a dynamic grid.

The estimator fits a grid-parameterized covariance model to the sample
covariance of one receiver by alternating

* exact 1-D coordinate updates of the grid intensities (each solves a cubic
  stationarity condition in closed form and keeps a rank-1 maintained inverse
  of the model covariance), and
* projected-gradient steps on the grid point positions with an Armijo
  backtracking line search, constrained to the imaging rectangle and to a
  disc of radius ``d_max`` around each point's initial location.

Intensities live in [0, 1]; a clustering penalty couples 4-neighborhoods of
the initial grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .geometry import RegionOfInterest, Scene, path_loss
from .numerics import HermitianInverse, cubic_real_roots
from .simulate import (
    Pilot,
    SampleCovariance,
    derived_rng,
    response_columns,
    STREAM_PHASE1,
)


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# grid model and dictionary
# ---------------------------------------------------------------------------

@dataclass
class GridModel:
    """Grid positions, intensities and fixed per-point path losses."""

    roi: RegionOfInterest
    positions: np.ndarray          # (Q, 2), current
    init_positions: np.ndarray     # (Q, 2), anchors for the move constraint
    gamma_r: np.ndarray            # (Q,), in [0, 1]
    gamma_beta: np.ndarray         # (Q,), positive
    neighbor_lists: tuple          # per-point index arrays (4-neighborhood)
    pairs: np.ndarray              # (n_pairs, 2) unique undirected edges
    d_max: float

    def __post_init__(self):
        q = self.positions.shape[0]
        if not (self.init_positions.shape[0] == q == self.gamma_r.size == self.gamma_beta.size):
            raise ModelError("grid model field sizes disagree")
        if np.any(self.gamma_r < 0) or np.any(self.gamma_r > 1):
            raise ModelError("grid intensities must lie in [0, 1]")
        if np.any(self.gamma_beta <= 0):
            raise ModelError("grid path losses must be positive")
        if self.d_max <= 0:
            raise ModelError("maximum move radius must be positive")

    @property
    def q(self) -> int:
        return self.positions.shape[0]

    def intensity_products(self) -> np.ndarray:
        return self.gamma_r * self.gamma_beta


def uniform_grid_positions(roi: RegionOfInterest, q: int) -> tuple[np.ndarray, int]:
    side = math.isqrt(q)
    if side * side != q:
        raise ModelError(f"grid size {q} is not a perfect square")
    dx = roi.width / side
    dy = roi.height / side
    ix = np.arange(side)
    xs = roi.x1 + (ix + 0.5) * dx
    ys = roi.y1 + (ix + 0.5) * dy
    gx, gy = np.meshgrid(xs, ys)              # row-major, x fastest
    pos = np.column_stack([gx.ravel(), gy.ravel()])
    return pos, side


def grid_adjacency(side: int) -> tuple[tuple, np.ndarray]:
    """4-neighborhood of a side x side lattice in row-major order."""
    q = side * side
    idx = np.arange(q).reshape(side, side)
    pairs = []
    pairs.extend(zip(idx[:, :-1].ravel(), idx[:, 1:].ravel()))
    pairs.extend(zip(idx[:-1, :].ravel(), idx[1:, :].ravel()))
    pairs = np.array(pairs, dtype=int)
    lists = [[] for _ in range(q)]
    for i, j in pairs:
        lists[i].append(j)
        lists[j].append(i)
    neighbor_lists = tuple(np.array(sorted(l), dtype=int) for l in lists)
    return neighbor_lists, pairs


def make_uniform_grid(scene: Scene, k: int, q: int, d_max: float | None = None) -> GridModel:
    """Uniform sqrt(Q) x sqrt(Q) grid over the scene's imaging rectangle.

    Path losses are evaluated here, at the initial positions, and held fixed
    for the rest of the run (position moves are at most a grid-cell fraction).
    """
    pos, side = uniform_grid_positions(scene.roi, q)
    spacing = scene.roi.width / side
    if d_max is None:
        d_max = 0.6 * spacing
    neighbor_lists, pairs = grid_adjacency(side)
    gb = path_loss(scene.tx.position, scene.rxs[k].position, pos, scene.beta0_sq)
    return GridModel(
        roi=scene.roi,
        positions=pos.copy(),
        init_positions=pos.copy(),
        gamma_r=np.zeros(q),
        gamma_beta=np.asarray(gb, dtype=float),
        neighbor_lists=neighbor_lists,
        pairs=pairs,
        d_max=float(d_max),
    )


class Dictionary:
    """Response columns for the current grid positions of one receiver."""

    def __init__(self, pilot: Pilot, tx_pos, rx_pos, n_rx: int, positions: np.ndarray):
        self.pilot = pilot
        self.tx_pos = np.asarray(tx_pos, dtype=float).reshape(2)
        self.rx_pos = np.asarray(rx_pos, dtype=float).reshape(2)
        self.n_rx = int(n_rx)
        self.columns = response_columns(pilot, tx_pos, rx_pos, n_rx, positions)

    @classmethod
    def for_receiver(cls, pilot: Pilot, scene: Scene, k: int, positions: np.ndarray):
        rx = scene.rxs[k]
        return cls(pilot, scene.tx.position, rx.position, rx.num_antennas, positions)

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def q(self) -> int:
        return self.columns.shape[1]

    def rebuild(self, indices: np.ndarray, positions: np.ndarray) -> None:
        """Recompute the columns of the listed grid points after a move."""
        self.columns[:, indices] = response_columns(
            self.pilot, self.tx_pos, self.rx_pos, self.n_rx, positions
        )

    def column_position_derivatives(self, position: np.ndarray):
        """Derivative of one response column w.r.t. the point's x and y."""
        p = np.asarray(position, dtype=float).reshape(2)
        tx, rx = self.tx_pos, self.rx_pos
        dt = math.hypot(tx[0] - p[0], tx[1] - p[1])
        dr = math.hypot(rx[0] - p[0], rx[1] - p[1])
        ax = (tx[0] - p[0]) * (tx[1] - p[1]) / dt**3
        ay = -((tx[0] - p[0]) ** 2) / dt**3
        bx = (rx[0] - p[0]) * (rx[1] - p[1]) / dr**3
        by = -((rx[0] - p[0]) ** 2) / dr**3
        sin_phi = (tx[1] - p[1]) / dt
        sin_theta = (rx[1] - p[1]) / dr
        n_tx = self.pilot.n_tx
        a = np.exp(-1j * math.pi * np.arange(n_tx) * sin_phi)
        b = np.exp(-1j * math.pi * np.arange(self.n_rx) * sin_theta)
        lam_a = (-1j * math.pi * np.arange(n_tx)) * a
        lam_b = (-1j * math.pi * np.arange(self.n_rx)) * b
        xt = self.pilot.matrix.T
        t1 = np.kron(xt @ lam_a, b)
        t2 = np.kron(xt @ a, lam_b)
        return ax * t1 + bx * t2, ay * t1 + by * t2


# ---------------------------------------------------------------------------
# costs
# ---------------------------------------------------------------------------

def cluster_penalty(grid: GridModel) -> float:
    """Half the squared intensity-product differences over grid edges."""
    g = grid.intensity_products()
    diffs = g[grid.pairs[:, 0]] - g[grid.pairs[:, 1]]
    return 0.5 * float(diffs @ diffs)


def model_covariance(grid: GridModel, dic: Dictionary, noise_var: float) -> np.ndarray:
    w = grid.intensity_products()
    sigma = (dic.columns * w) @ dic.columns.conj().T
    sigma += noise_var * np.eye(dic.n)
    return 0.5 * (sigma + sigma.conj().T)


def model_covariance_inverse(grid: GridModel, dic: Dictionary, noise_var: float,
                             refresh_every: int = 500) -> HermitianInverse:
    """Maintained inverse built by one rank-1 update per occupied grid point."""
    if noise_var <= 0:
        raise ModelError("noise variance must be positive")
    hinv = HermitianInverse.from_scaled_identity(dic.n, noise_var, refresh_every)
    w = grid.intensity_products()
    for qi in np.nonzero(w > 0)[0]:
        hinv.rank1_update(dic.columns[:, qi], float(w[qi]))
    return hinv


def _ml_cost_sigma(sigma: np.ndarray, s_hat: np.ndarray) -> float:
    c, low = cho_factor(sigma, lower=True, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(c)))))
    tr = float(np.real(np.trace(cho_solve((c, low), s_hat, check_finite=False))))
    return logdet + tr


def penalized_ml_cost(grid: GridModel, dic: Dictionary, s_hat: np.ndarray,
                      noise_var: float, eta: float) -> float:
    """Gaussian log-likelihood fit term plus the weighted clustering penalty."""
    sigma = model_covariance(grid, dic, noise_var)
    return _ml_cost_sigma(sigma, s_hat) + eta * cluster_penalty(grid)


def _cost_from_inverse(hinv: HermitianInverse, s_hat: np.ndarray,
                       grid: GridModel, eta: float) -> float:
    tr = float(np.real(np.einsum("ij,ji->", hinv.inv, s_hat)))
    return hinv.logdet + tr + eta * cluster_penalty(grid)


# ---------------------------------------------------------------------------
# coordinate updates
# ---------------------------------------------------------------------------

def coordinate_step(grid: GridModel, dic: Dictionary, hinv: HermitianInverse,
                    s_hat: np.ndarray, qi: int, eta: float) -> float:
    """Exact minimization of the cost along one intensity coordinate.

    Returns the applied increment d; grid and maintained inverse are updated
    in place.  The feasible interval keeps the intensity in [0, 1] and the
    model covariance positive definite.
    """
    v = dic.columns[:, qi]
    gb = float(grid.gamma_beta[qi])
    gr = float(grid.gamma_r[qi])
    u = hinv.inv @ v
    a = gb * float(np.real(np.vdot(v, u)))
    w = s_hat @ u
    b = gb * float(np.real(np.vdot(u, w)))
    neigh = grid.neighbor_lists[qi]
    g = grid.intensity_products()
    diffsum = float(np.sum(g[qi] - g[neigh]))
    c = eta * len(neigh) * gb * gb
    e = eta * gb * diffsum

    d0 = -1.0 / a if a > 0 else -np.inf
    lo = -gr
    if d0 > lo:
        lo = d0 + 1e-10
    hi = 1.0 - gr
    if hi < lo:
        hi = lo

    c3 = a * a * c
    c2 = 2.0 * a * c + a * a * e
    c1 = a * a + c + 2.0 * a * e
    c0 = a - b + e
    roots = cubic_real_roots(c3, c2, c1, c0)
    candidates = [lo, hi, 0.0]
    if roots:
        candidates.extend(r for r in roots if lo < r < hi)

    def f(d):
        t = 1.0 + d * a
        if t <= 1e-12:
            return np.inf
        return math.log(t) - d * b / t + 0.5 * c * d * d + e * d

    best_d, best_f = 0.0, f(0.0)
    for d in candidates:
        fd = f(d)
        if fd < best_f - 0.0:
            best_f, best_d = fd, d
    d = best_d
    if 1.0 + d * a <= 1e-12:
        d = d0 + 1e-10
    if d != 0.0:
        hinv.rank1_update(v, d * gb)
        grid.gamma_r[qi] = min(1.0, max(0.0, gr + d))
    return d


def intensity_sweep(grid: GridModel, dic: Dictionary, hinv: HermitianInverse,
                    s_hat: np.ndarray, eta: float, rng: np.random.Generator,
                    subset_size: int | None = None) -> None:
    """One full pass over a random permutation of the grid intensities."""
    order = rng.permutation(grid.q)
    if subset_size is not None:
        order = order[:subset_size]
    for qi in order:
        coordinate_step(grid, dic, hinv, s_hat, int(qi), eta)


def threshold_support(values: np.ndarray, fraction: float = 0.95) -> np.ndarray:
    """Smallest descending-sorted prefix holding ``fraction`` of the total mass.

    Ties sort by lower index; an all-zero input yields an empty mask.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    total = v.sum()
    mask = np.zeros(v.size, dtype=bool)
    if total <= 0:
        return mask
    order = np.argsort(-v, kind="stable")
    csum = np.cumsum(v[order])
    cut = int(np.searchsorted(csum, fraction * total, side="left"))
    mask[order[: cut + 1]] = True
    return mask


# ---------------------------------------------------------------------------
# position updates
# ---------------------------------------------------------------------------

def project_positions(pos: np.ndarray, anchors: np.ndarray, roi: RegionOfInterest,
                      d_max: float, rounds: int = 10) -> np.ndarray:
    """Alternate rectangle clamping with pulling into the per-point move disc."""
    p = np.array(pos, dtype=float, copy=True)
    for _ in range(rounds):
        p = roi.clamp(p)
        delta = p - anchors
        r = np.linalg.norm(delta, axis=-1)
        far = r > d_max
        if not far.any():
            if np.all((p[..., 0] >= roi.x1) & (p[..., 0] <= roi.x2)
                      & (p[..., 1] >= roi.y1) & (p[..., 1] <= roi.y2)):
                break
            continue
        scale = np.ones_like(r)
        scale[far] = d_max / r[far]
        p = anchors + delta * scale[..., None]
    return roi.clamp(p)


def position_gradient(grid: GridModel, dic: Dictionary, hinv: HermitianInverse,
                      s_hat: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Gradient of the likelihood fit term w.r.t. the active grid positions.

    Index 2i / 2i+1 hold the x / y derivative of active point i.  Each point's
    own rank-1 term is removed from the maintained inverse analytically, so
    the computation is three matrix-vector products per point.
    """
    inv = hinv.inv
    grad = np.empty(2 * active.size)
    for i, qi in enumerate(active):
        v = dic.columns[:, qi]
        gq = float(grid.gamma_r[qi] * grid.gamma_beta[qi])
        u_full = inv @ v
        t_full = float(np.real(np.vdot(v, u_full)))
        denom_down = 1.0 - gq * t_full
        if denom_down <= 0:
            raise ModelError("maintained inverse inconsistent with grid intensities")
        u = u_full / denom_down           # inverse without point qi, applied to v
        w = s_hat @ u
        iw = inv @ w
        viw = np.vdot(v, iw)
        s = float(np.real(np.vdot(u, w)))
        denom1 = 1.0 / denom_down         # 1 + gq * v^H inv_without @ v
        vx, vy = dic.column_position_derivatives(grid.positions[qi])
        for j, vd in ((0, vx), (1, vy)):
            m1 = np.vdot(vd, u)
            # vd^H inv_without w, via the same rank-1 correction
            m2 = np.vdot(vd, iw) + gq * viw / denom_down * np.vdot(vd, u_full)
            grad[2 * i + j] = (
                2.0 * gq * float(np.real(m1 - m2)) / denom1
                + 2.0 * gq * gq * s * float(np.real(m1)) / denom1**2
            )
    return grad


@dataclass
class Phase1Config:
    """Knobs of the single-view optimization; None means data-derived default."""

    eta: float | None = None
    eps1: float = 1e-4
    eps2: float = 1e-3
    iter_max: int = 15
    iter1: int = 2
    iter2: int = 4
    armijo_step: float = 0.1
    armijo_shrink: float = 0.5
    armijo_decrease: float = 1e-4
    armijo_max_backtracks: int = 20
    subset_size: int | None = None
    d_max: float | None = None
    optimize_positions: bool = True
    active_tol: float = 1e-6
    refresh_every: int = 500
    projection_rounds: int = 10


@dataclass
class Phase1Result:
    grid: GridModel
    dictionary: Dictionary
    cost_trace: list          # (label, value) pairs, monotone non-increasing
    iterations: int
    converged: bool
    grad_norm: float
    eta: float


def position_sweep(grid: GridModel, dic: Dictionary, hinv: HermitianInverse,
                   s_hat: np.ndarray, noise_var: float, eta: float,
                   cfg: Phase1Config, cost_trace: list) -> float:
    """Projected-gradient position refinement; returns the last gradient norm.

    The maintained inverse is rebuilt from the exact model covariance at entry
    and after every accepted move, so line-search comparisons are drift-free.
    """
    active = np.nonzero(grid.gamma_r > cfg.active_tol)[0]
    if active.size == 0:
        return 0.0

    sigma = model_covariance(grid, dic, noise_var)
    fresh = HermitianInverse.from_matrix(sigma, cfg.refresh_every)
    hinv.sigma, hinv.inv, hinv.logdet = fresh.sigma, fresh.inv, fresh.logdet
    hinv.updates_since_refresh = 0
    f_cur = _ml_cost_sigma(sigma, s_hat)
    pen = eta * cluster_penalty(grid)
    grad_norm = 0.0

    for _ in range(cfg.iter2):
        g = position_gradient(grid, dic, hinv, s_hat, active)
        grad_norm = float(np.linalg.norm(g))
        if grad_norm <= cfg.eps2:
            break
        step = cfg.armijo_step
        cur = grid.positions[active]
        accepted = False
        for _bt in range(cfg.armijo_max_backtracks):
            trial = cur - step * g.reshape(-1, 2)
            trial = project_positions(trial, grid.init_positions[active], grid.roi,
                                      grid.d_max, cfg.projection_rounds)
            decrease = float(np.sum(g.reshape(-1, 2) * (cur - trial)))
            if decrease > 0:
                trial_cols = response_columns(dic.pilot, dic.tx_pos, dic.rx_pos,
                                              dic.n_rx, trial)
                saved = dic.columns[:, active].copy()
                dic.columns[:, active] = trial_cols
                sigma_t = model_covariance(grid, dic, noise_var)
                f_trial = _ml_cost_sigma(sigma_t, s_hat)
                if f_trial <= f_cur - cfg.armijo_decrease * decrease:
                    grid.positions[active] = trial
                    fresh = HermitianInverse.from_matrix(sigma_t, cfg.refresh_every)
                    hinv.sigma, hinv.inv, hinv.logdet = fresh.sigma, fresh.inv, fresh.logdet
                    hinv.updates_since_refresh = 0
                    f_cur = f_trial
                    cost_trace.append(("move", f_cur + pen))
                    accepted = True
                else:
                    dic.columns[:, active] = saved
            step *= cfg.armijo_shrink
            if accepted:
                break
        if not accepted:
            break
    return grad_norm


def default_eta(gamma_beta: np.ndarray) -> float:
    """Scale-matched clustering weight: 1e3 over the squared mean path loss."""
    mean_gb = float(np.mean(gamma_beta))
    return 1e3 / (mean_gb * mean_gb)


def run_phase1(sample_cov: SampleCovariance | np.ndarray, pilot: Pilot, scene: Scene,
               k: int, q: int, noise_var: float, cfg: Phase1Config | None = None,
               seed: int = 0) -> Phase1Result:
    """Full single-view reconstruction for receiver k.

    Alternates intensity sweeps and (optionally) position sweeps until the
    relative intensity change and the position gradient norm fall under the
    configured tolerances, or the iteration cap is reached.
    """
    cfg = cfg or Phase1Config()
    s_hat = sample_cov.matrix if isinstance(sample_cov, SampleCovariance) else np.asarray(sample_cov)
    grid = make_uniform_grid(scene, k, q, cfg.d_max)
    dic = Dictionary.for_receiver(pilot, scene, k, grid.positions)
    if dic.n != s_hat.shape[0]:
        raise ModelError(
            f"sample covariance dimension {s_hat.shape[0]} does not match "
            f"pilot length x receive antennas = {dic.n}"
        )
    eta = cfg.eta if cfg.eta is not None else default_eta(grid.gamma_beta)
    hinv = model_covariance_inverse(grid, dic, noise_var, cfg.refresh_every)
    rng = derived_rng(seed, STREAM_PHASE1, k)

    cost_trace = [("init", _cost_from_inverse(hinv, s_hat, grid, eta))]
    grad_norm = math.inf
    converged = False
    it = 0
    for it in range(1, cfg.iter_max + 1):
        gamma_prev = grid.gamma_r.copy()
        for _ in range(cfg.iter1):
            intensity_sweep(grid, dic, hinv, s_hat, eta, rng, cfg.subset_size)
            cost_trace.append(("sweep", _cost_from_inverse(hinv, s_hat, grid, eta)))
        if cfg.optimize_positions:
            grad_norm = position_sweep(grid, dic, hinv, s_hat, noise_var, eta, cfg, cost_trace)
        prev_norm_sq = float(gamma_prev @ gamma_prev)
        diff = grid.gamma_r - gamma_prev
        diff_sq = float(diff @ diff)
        if prev_norm_sq == 0.0:
            rel = 0.0 if diff_sq == 0.0 else math.inf
        else:
            rel = diff_sq / prev_norm_sq
        grad_ok = (not cfg.optimize_positions) or grad_norm <= cfg.eps2
        if rel <= cfg.eps1 and grad_ok:
            converged = True
            break
    hinv.refresh()
    return Phase1Result(grid, dic, cost_trace, it, converged,
                        0.0 if grad_norm is math.inf else grad_norm, eta)
