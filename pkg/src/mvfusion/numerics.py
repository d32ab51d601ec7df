"""Dense numeric kernels shared by the imaging stages.

The kernels are deliberately small and exactly testable: a rank-1 maintained
Hermitian inverse with a running log-determinant, a closed-form real cubic
root solver, a matrix-free conjugate-gradient solver and a closed-form
symmetric 2x2 eigendecomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class NumericsError(RuntimeError):
    pass


class SingularUpdateError(NumericsError):
    """Rank-1 update would make the maintained matrix lose positive definiteness."""


# ---------------------------------------------------------------------------
# maintained Hermitian inverse
# ---------------------------------------------------------------------------

class HermitianInverse:
    """Inverse and log-determinant of a Hermitian positive definite matrix,
    maintained under rank-1 updates ``sigma += s * v v^H``.

    The update uses the standard rank-1 inverse identity; the accumulated
    matrix itself is kept as well so the inverse can be refreshed by direct
    factorization every ``refresh_every`` updates to bound drift.
    """

    __slots__ = ("sigma", "inv", "logdet", "refresh_every", "updates_since_refresh")

    def __init__(self, sigma, inv, logdet, refresh_every=500, updates_since_refresh=0):
        self.sigma = sigma
        self.inv = inv
        self.logdet = float(logdet)
        self.refresh_every = int(refresh_every)
        self.updates_since_refresh = int(updates_since_refresh)

    @classmethod
    def from_scaled_identity(cls, n: int, scale: float, refresh_every: int = 500):
        """Start from ``scale * I`` (scale > 0)."""
        if scale <= 0:
            raise NumericsError("scaled identity needs a positive scale")
        sigma = np.eye(n, dtype=complex) * scale
        inv = np.eye(n, dtype=complex) / scale
        return cls(sigma, inv, n * math.log(scale), refresh_every)

    @classmethod
    def from_matrix(cls, sigma: np.ndarray, refresh_every: int = 500):
        """Direct factorization of a Hermitian positive definite matrix."""
        sigma = np.asarray(sigma, dtype=complex)
        sigma = 0.5 * (sigma + sigma.conj().T)
        try:
            c, low = cho_factor(sigma, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericsError("matrix is not positive definite") from exc
        logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(c)))))
        inv = cho_solve((c, low), np.eye(sigma.shape[0], dtype=complex), check_finite=False)
        inv = 0.5 * (inv + inv.conj().T)
        return cls(sigma.copy(), inv, logdet, refresh_every)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    def copy(self) -> "HermitianInverse":
        return HermitianInverse(
            self.sigma.copy(), self.inv.copy(), self.logdet,
            self.refresh_every, self.updates_since_refresh,
        )

    def rank1_update(self, v: np.ndarray, s: float) -> None:
        """Apply ``sigma += s * v v^H`` in place; s may be negative (downdate)."""
        if s == 0.0:
            return
        v = np.asarray(v, dtype=complex).reshape(-1)
        u = self.inv @ v
        quad = float(np.real(np.vdot(v, u)))
        denom = 1.0 + s * quad
        if denom <= 0.0:
            raise SingularUpdateError(
                f"rank-1 update with s={s:g} makes matrix singular (denominator {denom:g})"
            )
        self.inv -= (s / denom) * np.outer(u, u.conj())
        self.sigma += s * np.outer(v, v.conj())
        self.logdet += math.log(denom)
        self.updates_since_refresh += 1
        if self.refresh_every > 0 and self.updates_since_refresh >= self.refresh_every:
            self.refresh()

    def refresh(self) -> None:
        """Re-factorize the accumulated matrix, resetting accumulated drift."""
        fresh = HermitianInverse.from_matrix(self.sigma, self.refresh_every)
        self.inv = fresh.inv
        self.logdet = fresh.logdet
        self.updates_since_refresh = 0


def rank1_update(h: HermitianInverse, v: np.ndarray, s: float) -> HermitianInverse:
    """Functional wrapper: mutates ``h`` and returns it."""
    h.rank1_update(v, s)
    return h


# ---------------------------------------------------------------------------
# real cubic roots
# ---------------------------------------------------------------------------

def _newton_polish(x: float, c3: float, c2: float, c1: float, c0: float) -> float:
    for _ in range(2):
        f = ((c3 * x + c2) * x + c1) * x + c0
        df = (3.0 * c3 * x + 2.0 * c2) * x + c1
        if df == 0.0 or not math.isfinite(f):
            break
        step = f / df
        if not math.isfinite(step):
            break
        x -= step
    return x


def cubic_real_roots(c3: float, c2: float, c1: float, c0: float):
    """Real roots of ``c3 x^3 + c2 x^2 + c1 x + c0``.

    Returns ``None`` when all coefficients are zero (every x is a root),
    otherwise a sorted list of distinct real roots (multiplicity collapsed).
    Leading coefficients smaller than ``1e-12 * max|c|`` degrade the degree.
    """
    coeffs = (float(c3), float(c2), float(c1), float(c0))
    scale = max(abs(c) for c in coeffs)
    if scale == 0.0:
        return None
    tol = 1e-12 * scale
    c3, c2, c1, c0 = coeffs

    if abs(c3) <= tol:
        if abs(c2) <= tol:
            if abs(c1) <= tol:
                return []
            return [-c0 / c1]
        disc = c1 * c1 - 4.0 * c2 * c0
        if disc < 0.0:
            return []
        sd = math.sqrt(disc)
        q = -0.5 * (c1 + sd) if c1 >= 0.0 else -0.5 * (c1 - sd)
        roots = []
        if q != 0.0:
            roots.append(q / c2)
            roots.append(c0 / q)
        else:
            roots.append(0.0)
        if any(not _residual_ok(r, coeffs, scale) for r in roots):
            # discriminant under/overflowed; a rootless quadratic comes back
            # from the companion solver as a conjugate pair and yields []
            rr = np.roots([c2, c1, c0])
            roots = [_newton_polish(float(z.real), c3, c2, c1, c0)
                     for z in rr if z.imag == 0.0]
        return _dedupe(roots)

    a = c2 / c3
    b = c1 / c3
    c = c0 / c3
    # depressed cubic t^3 + p t + q via x = t - a/3
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    shift = -a / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3

    if disc > 0.0:
        sq = math.sqrt(disc)
        u = math.copysign(abs(-q / 2.0 + sq) ** (1.0 / 3.0), -q / 2.0 + sq)
        w = math.copysign(abs(-q / 2.0 - sq) ** (1.0 / 3.0), -q / 2.0 - sq)
        roots = [u + w + shift]
    elif disc == 0.0:
        if p == 0.0:
            roots = [shift]
        else:
            roots = [3.0 * q / p + shift, -1.5 * q / p + shift]
    else:
        # three distinct real roots, trigonometric branch
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        arg = min(1.0, max(-1.0, arg))
        theta = math.acos(arg)
        roots = [m * math.cos((theta - TWO_PI_K) / 3.0) + shift
                 for TWO_PI_K in (0.0, 2.0 * math.pi, 4.0 * math.pi)]

    c3r, c2r, c1r, c0r = coeffs
    roots = [_newton_polish(r, c3r, c2r, c1r, c0r) for r in roots]
    # Cardano arithmetic can under/overflow when coefficient ratios span
    # hundreds of orders of magnitude; a residual check catches that, and the
    # companion-matrix solver handles the offending scales.
    if any(not _residual_ok(r, coeffs, scale) for r in roots):
        rr = np.roots([c3r, c2r, c1r, c0r])
        real = [float(z.real) for z in rr if z.imag == 0.0]
        if not real:
            real = [float(rr[int(np.argmin(np.abs(rr.imag)))].real)]
        roots = [_newton_polish(r, c3r, c2r, c1r, c0r) for r in real]
    return _dedupe(roots)


def _residual_ok(r: float, coeffs, scale: float) -> bool:
    c3, c2, c1, c0 = coeffs
    res = abs(((c3 * r + c2) * r + c1) * r + c0)
    ar = abs(r)
    return res <= 1e-9 * max(1.0, scale * ar * ar * ar)


def _dedupe(roots):
    roots = sorted(roots)
    out = []
    for r in roots:
        if out and abs(r - out[-1]) <= 1e-8 * max(1.0, abs(r)):
            continue
        out.append(r)
    return out


# ---------------------------------------------------------------------------
# conjugate gradient
# ---------------------------------------------------------------------------

@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


def cg_solve(apply_a, b, tol: float = 1e-8, max_iter: int | None = None, x0=None) -> CGResult:
    """Conjugate gradient for symmetric positive (semi)definite operators.

    ``apply_a`` maps a vector to ``A @ vector``; stops when the residual norm
    drops to ``tol * ||b||`` or after ``max_iter`` iterations.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    n = b.size
    if max_iter is None:
        max_iter = n
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        x = np.zeros(n) if x0 is None else np.zeros_like(b)
        return CGResult(x, 0, 0.0, True)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1).copy()
    r = b - np.asarray(apply_a(x), dtype=float).reshape(-1)
    p = r.copy()
    rs = float(r @ r)
    if not math.isfinite(rs):
        raise NumericsError("conjugate gradient produced a non-finite residual")
    target = tol * bnorm
    it = 0
    while math.sqrt(rs) > target and it < max_iter:
        ap = np.asarray(apply_a(p), dtype=float).reshape(-1)
        pap = float(p @ ap)
        if not math.isfinite(pap):
            raise NumericsError("conjugate gradient produced a non-finite curvature")
        if pap <= 0.0:
            break  # operator only PSD along p; best iterate stands
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    res = math.sqrt(rs)
    return CGResult(x, it, res, res <= target)


# ---------------------------------------------------------------------------
# symmetric 2x2 eigendecomposition
# ---------------------------------------------------------------------------

def svd2(j: np.ndarray):
    """Eigenvalues and orthonormal eigenvectors of a symmetric 2x2 matrix.

    Returns ``(l1, l2, f1, f2)`` with ``l1 >= l2``; the zero matrix yields the
    canonical axes.
    """
    j = np.asarray(j, dtype=float)
    a, b, c = j[0, 0], 0.5 * (j[0, 1] + j[1, 0]), j[1, 1]
    mean = 0.5 * (a + c)
    rad = math.hypot(0.5 * (a - c), b)
    l1 = mean + rad
    l2 = mean - rad
    if b != 0.0:
        # two row formulas for the top eigenvector; the one carrying the
        # larger diagonal gap avoids cancellation when l1 is close to a or c
        if abs(l1 - a) >= abs(l1 - c):
            f1 = np.array([b, l1 - a])
        else:
            f1 = np.array([l1 - c, b])
        f1 = f1 / math.hypot(f1[0], f1[1])
    elif a >= c:
        f1 = np.array([1.0, 0.0])
    else:
        f1 = np.array([0.0, 1.0])
    f2 = np.array([-f1[1], f1[0]])
    return float(l1), float(l2), f1, f2
