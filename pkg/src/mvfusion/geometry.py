"""Scene geometry: arrays, extended targets, blind sectors, angles and path loss.

Conventions used throughout the package:

* positions are 2-vectors ``[x, y]`` in metres,
* angles are radians internally (config files use degrees),
* departure/arrival angles are measured at the array, wrapped to
  ``(-pi/2, 3*pi/2]`` so the sine is continuous across the vertical,
* array elements are half-wavelength spaced, so a steering vector is
  ``exp(-1j * pi * n * sin(angle))`` for element index ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    """Degenerate geometric query (coincident points, malformed shape)."""


# ---------------------------------------------------------------------------
# basic types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Array2D:
    """Antenna array collapsed to a point location.

    Parameters
    ----------
    position : array_like, shape (2,)
        Location in the plane.
    num_antennas : int
        Number of elements, >= 1.
    role : str
        Either ``"tx"`` or ``"rx"``.
    """

    position: np.ndarray
    num_antennas: int
    role: str

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        object.__setattr__(self, "position", pos)
        if self.num_antennas < 1:
            raise GeometryError("array needs at least one antenna")
        if self.role not in ("tx", "rx"):
            raise GeometryError(f"unknown array role {self.role!r}")


@dataclass(frozen=True)
class RegionOfInterest:
    """Axis-aligned imaging rectangle."""

    x1: float
    x2: float
    y1: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise GeometryError("region of interest must have positive extent")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ok = (
            (p[:, 0] >= self.x1)
            & (p[:, 0] <= self.x2)
            & (p[:, 1] >= self.y1)
            & (p[:, 1] <= self.y2)
        )
        return ok if np.asarray(points).ndim > 1 else bool(ok[0])

    def clamp(self, points: np.ndarray) -> np.ndarray:
        """Project points onto the rectangle (componentwise clip)."""
        p = np.array(points, dtype=float, copy=True)
        p[..., 0] = np.clip(p[..., 0], self.x1, self.x2)
        p[..., 1] = np.clip(p[..., 1], self.y1, self.y2)
        return p


@dataclass(frozen=True)
class FieldOfView:
    """Blind angular sector of one receiver.

    ``center`` is the bearing (radians) of the sector axis as seen from the
    receiver, ``width`` the full angular width.  Width 0 disables the sector;
    width 2*pi blocks everything.
    """

    receiver: int
    center: float
    width: float

    def __post_init__(self):
        if not (0.0 <= self.width <= TWO_PI):
            raise GeometryError("blind sector width must lie in [0, 2*pi]")


# ---------------------------------------------------------------------------
# target shapes
# ---------------------------------------------------------------------------

def _cross2(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection test for open segments (shared endpoints ignored)."""
    d1 = _cross2(p4 - p3, p1 - p3)
    d2 = _cross2(p4 - p3, p2 - p3)
    d3 = _cross2(p2 - p1, p3 - p1)
    d4 = _cross2(p2 - p1, p4 - p1)
    return bool(((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)))


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by its vertices (either orientation)."""

    vertices: np.ndarray
    kind: str = field(default="polygon", init=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise GeometryError("polygon needs at least three 2-D vertices")
        object.__setattr__(self, "vertices", v)
        n = v.shape[0]
        for i in range(n):
            a1, a2 = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                b1, b2 = v[j], v[(j + 1) % n]
                if _segments_intersect(a1, a2, b1, b2):
                    raise GeometryError("polygon is self-intersecting")
        if abs(self.area) <= 0.0:
            raise GeometryError("polygon has zero area")

    @property
    def area(self) -> float:
        v = self.vertices
        x, y = v[:, 0], v[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def bounds(self):
        v = self.vertices
        return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        x, y = p[:, 0], p[:, 1]
        v = self.vertices
        n = v.shape[0]
        inside = np.zeros(x.shape, dtype=bool)
        j = n - 1
        for i in range(n):
            xi, yi = v[i]
            xj, yj = v[j]
            cond = (yi > y) != (yj > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xcross = (xj - xi) * (y - yi) / (yj - yi) + xi
            inside ^= cond & (x < xcross)
            j = i
        return inside


@dataclass(frozen=True)
class Disc:
    center: np.ndarray
    radius: float
    kind: str = field(default="disc", init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        if self.radius <= 0:
            raise GeometryError("disc radius must be positive")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    def bounds(self):
        cx, cy = self.center
        r = self.radius
        return cx - r, cx + r, cy - r, cy + r

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d2 = (p[:, 0] - self.center[0]) ** 2 + (p[:, 1] - self.center[1]) ** 2
        return d2 <= self.radius**2


@dataclass(frozen=True)
class Annulus:
    center: np.ndarray
    inner_radius: float
    outer_radius: float
    kind: str = field(default="annulus", init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        if not (0 <= self.inner_radius < self.outer_radius):
            raise GeometryError("annulus needs 0 <= inner < outer radius")

    @property
    def area(self) -> float:
        return math.pi * (self.outer_radius**2 - self.inner_radius**2)

    def bounds(self):
        cx, cy = self.center
        r = self.outer_radius
        return cx - r, cx + r, cy - r, cy + r

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d2 = (p[:, 0] - self.center[0]) ** 2 + (p[:, 1] - self.center[1]) ** 2
        return (d2 >= self.inner_radius**2) & (d2 <= self.outer_radius**2)


@dataclass(frozen=True)
class RasterMask:
    """Boolean occupancy grid; row 0 is the bottom row (smallest y)."""

    origin: np.ndarray
    cell_size: float
    mask: np.ndarray
    kind: str = field(default="mask", init=False)

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(2))
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2 or not m.any():
            raise GeometryError("raster mask must be 2-D and non-empty")
        object.__setattr__(self, "mask", m)
        if self.cell_size <= 0:
            raise GeometryError("raster mask cell size must be positive")

    @property
    def area(self) -> float:
        return float(self.mask.sum()) * self.cell_size**2

    def bounds(self):
        ny, nx = self.mask.shape
        x0, y0 = self.origin
        return x0, x0 + nx * self.cell_size, y0, y0 + ny * self.cell_size

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ix = np.floor((p[:, 0] - self.origin[0]) / self.cell_size).astype(int)
        iy = np.floor((p[:, 1] - self.origin[1]) / self.cell_size).astype(int)
        ny, nx = self.mask.shape
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        out = np.zeros(p.shape[0], dtype=bool)
        out[ok] = self.mask[iy[ok], ix[ok]]
        return out


TargetShape = Polygon | Disc | Annulus | RasterMask


def contains(shape, points) -> np.ndarray | bool:
    """Membership of point(s) in a target shape (boundary counts as inside)."""
    res = shape.contains_points(points)
    return res if np.asarray(points).ndim > 1 else bool(res[0])


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------

@dataclass
class Scene:
    """One transmitter, K receivers, extended targets and optional blind sectors."""

    roi: RegionOfInterest
    tx: Array2D
    rxs: tuple
    targets: tuple
    fovs: tuple = ()
    beta0_sq: float = 1.0

    def __post_init__(self):
        self.rxs = tuple(self.rxs)
        self.targets = tuple(self.targets)
        self.fovs = tuple(self.fovs)
        if self.tx.role != "tx":
            raise GeometryError("scene transmitter must have role 'tx'")
        if len(self.rxs) < 1:
            raise GeometryError("scene needs at least one receiver")
        for rx in self.rxs:
            if rx.role != "rx":
                raise GeometryError("scene receivers must have role 'rx'")
        if self.beta0_sq <= 0:
            raise GeometryError("reference path gain must be positive")
        for fov in self.fovs:
            if not (0 <= fov.receiver < len(self.rxs)):
                raise GeometryError("blind sector references unknown receiver")
        for t in self.targets:
            bx1, bx2, by1, by2 = t.bounds()
            if bx1 < self.roi.x1 or bx2 > self.roi.x2 or by1 < self.roi.y1 or by2 > self.roi.y2:
                raise GeometryError("target extends outside the region of interest")

    @property
    def num_receivers(self) -> int:
        return len(self.rxs)

    def blind_sector(self, k: int) -> FieldOfView | None:
        for fov in self.fovs:
            if fov.receiver == k:
                return fov
        return None

    def in_targets(self, points: np.ndarray) -> np.ndarray:
        """Union membership over all targets, vectorized over points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(p.shape[0], dtype=bool)
        for t in self.targets:
            out |= t.contains_points(p)
        return out

    def target_area(self) -> float:
        return float(sum(t.area for t in self.targets))


# ---------------------------------------------------------------------------
# angles, steering, path loss, visibility
# ---------------------------------------------------------------------------

def _station_angle(station: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Angle of the line from a point toward a station, in (-pi/2, 3*pi/2]."""
    st = np.asarray(station, dtype=float).reshape(2)
    p = np.atleast_2d(np.asarray(points, dtype=float))
    dx = st[0] - p[:, 0]
    dy = st[1] - p[:, 1]
    if np.any((dx == 0) & (dy == 0)):
        raise GeometryError("point coincides with the array position")
    ang = np.arctan2(dy, dx)
    ang = np.where(ang <= -0.5 * math.pi, ang + TWO_PI, ang)
    return ang


def aod(tx_pos, points):
    """Angle of departure seen at the transmit array for point(s)."""
    ang = _station_angle(tx_pos, points)
    return ang if np.asarray(points).ndim > 1 else float(ang[0])


def aoa(rx_pos, points):
    """Angle of arrival seen at a receive array for point(s)."""
    ang = _station_angle(rx_pos, points)
    return ang if np.asarray(points).ndim > 1 else float(ang[0])


def steer(angle: float, n: int) -> np.ndarray:
    """Steering vector of an n-element half-wavelength array."""
    return np.exp(-1j * math.pi * np.arange(n) * math.sin(angle))


def steering_matrix(angles: np.ndarray, n: int) -> np.ndarray:
    """Column-stacked steering vectors, shape (n, len(angles))."""
    a = np.asarray(angles, dtype=float).reshape(-1)
    return np.exp(-1j * math.pi * np.outer(np.arange(n), np.sin(a)))


def path_loss(tx_pos, rx_pos, points, beta0_sq: float):
    """Two-hop power gain beta0^2 / (d_tx^2 * d_rx^2)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    t = np.asarray(tx_pos, dtype=float).reshape(2)
    r = np.asarray(rx_pos, dtype=float).reshape(2)
    d2t = np.sum((p - t) ** 2, axis=1)
    d2r = np.sum((p - r) ** 2, axis=1)
    if np.any(d2t == 0) or np.any(d2r == 0):
        raise GeometryError("path loss undefined at an array position")
    g = beta0_sq / (d2t * d2r)
    return g if np.asarray(points).ndim > 1 else float(g[0])


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(a, dtype=float) + math.pi, TWO_PI) - math.pi


def visibility(scene: Scene, k: int, points) -> np.ndarray | bool:
    """True where a point is outside receiver k's blind sector."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    fov = scene.blind_sector(k)
    if fov is None or fov.width == 0.0:
        vis = np.ones(p.shape[0], dtype=bool)
        return vis if np.asarray(points).ndim > 1 else True
    rx = scene.rxs[k].position
    bearing = np.arctan2(p[:, 1] - rx[1], p[:, 0] - rx[0])
    if fov.width >= TWO_PI:
        blind = np.ones(p.shape[0], dtype=bool)
    else:
        delta = wrap_angle(bearing - fov.center)
        blind = np.abs(delta) <= 0.5 * fov.width
    vis = ~blind
    return vis if np.asarray(points).ndim > 1 else bool(vis[0])
