"""Scene and run configuration files (INI key-value format).

Scene files describe geometry only: region, station positions, targets,
blind sectors (degrees) and the reference path gain (dB).  Run files hold
everything else: array sizes, pilot resources, grid sizes, stage knobs.
Angles and gains are converted to radians / linear scale on load.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .fusion import FusionConfig
from .geometry import (
    Annulus,
    Array2D,
    Disc,
    FieldOfView,
    Polygon,
    RasterMask,
    RegionOfInterest,
    Scene,
)
from .interp import EPConfig
from .single_view import Phase1Config

ALL_STAGES = ("simulate", "phase1", "interp", "fuse", "score", "baseline")


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _pair(text: str) -> tuple[float, float]:
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"expected two numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

def scene_to_ini(scene: Scene, path) -> None:
    cp = configparser.ConfigParser()
    cp["roi"] = {
        "x1": _fmt(scene.roi.x1), "x2": _fmt(scene.roi.x2),
        "y1": _fmt(scene.roi.y1), "y2": _fmt(scene.roi.y2),
    }
    cp["transmitter"] = {"position": f"{_fmt(scene.tx.position[0])} {_fmt(scene.tx.position[1])}"}
    cp["pathloss"] = {"beta0_db": _fmt(10.0 * math.log10(math.sqrt(scene.beta0_sq)))}
    for i, rx in enumerate(scene.rxs):
        sec = f"receiver.{i + 1}"
        cp[sec] = {"position": f"{_fmt(rx.position[0])} {_fmt(rx.position[1])}"}
        fov = scene.blind_sector(i)
        if fov is not None and fov.width > 0:
            cp[sec]["blind_center_deg"] = _fmt(math.degrees(fov.center))
            cp[sec]["blind_width_deg"] = _fmt(math.degrees(fov.width))
    for i, t in enumerate(scene.targets):
        sec = f"target.{i + 1}"
        if isinstance(t, Polygon):
            verts = ", ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in t.vertices)
            cp[sec] = {"kind": "polygon", "vertices": verts}
        elif isinstance(t, Disc):
            cp[sec] = {"kind": "disc",
                       "center": f"{_fmt(t.center[0])} {_fmt(t.center[1])}",
                       "radius": _fmt(t.radius)}
        elif isinstance(t, Annulus):
            cp[sec] = {"kind": "annulus",
                       "center": f"{_fmt(t.center[0])} {_fmt(t.center[1])}",
                       "inner_radius": _fmt(t.inner_radius),
                       "outer_radius": _fmt(t.outer_radius)}
        elif isinstance(t, RasterMask):
            rows = ",".join("".join("1" if c else "0" for c in row) for row in t.mask[::-1])
            cp[sec] = {"kind": "mask",
                       "origin": f"{_fmt(t.origin[0])} {_fmt(t.origin[1])}",
                       "cell_size": _fmt(t.cell_size),
                       "rows": rows}
        else:
            raise ConfigError(f"cannot serialize target kind {type(t).__name__}")
    with open(path, "w") as fh:
        cp.write(fh)


def scene_from_ini(path, n_tx: int = 1, n_rx: int = 1) -> Scene:
    """Load geometry; antenna counts come from the run config, not the file."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read scene file {path}")
    try:
        roi = RegionOfInterest(
            float(cp["roi"]["x1"]), float(cp["roi"]["x2"]),
            float(cp["roi"]["y1"]), float(cp["roi"]["y2"]),
        )
        tx = Array2D(_pair(cp["transmitter"]["position"]), n_tx, "tx")
        beta0_db = float(cp["pathloss"]["beta0_db"])
        beta0_sq = (10.0 ** (beta0_db / 10.0)) ** 2

        rxs, fovs = [], []
        i = 1
        while cp.has_section(f"receiver.{i}"):
            sec = cp[f"receiver.{i}"]
            rxs.append(Array2D(_pair(sec["position"]), n_rx, "rx"))
            if "blind_width_deg" in sec:
                center = math.radians(float(sec.get("blind_center_deg", "0")))
                width = math.radians(float(sec["blind_width_deg"]))
                if width > 0:
                    fovs.append(FieldOfView(i - 1, center, width))
            i += 1

        targets = []
        i = 1
        while cp.has_section(f"target.{i}"):
            sec = cp[f"target.{i}"]
            kind = sec["kind"].strip()
            if kind == "polygon":
                verts = [list(_pair(v)) for v in sec["vertices"].split(",")]
                targets.append(Polygon(np.array(verts)))
            elif kind == "disc":
                targets.append(Disc(np.array(_pair(sec["center"])), float(sec["radius"])))
            elif kind == "annulus":
                targets.append(Annulus(np.array(_pair(sec["center"])),
                                       float(sec["inner_radius"]), float(sec["outer_radius"])))
            elif kind == "mask":
                rows = [r.strip() for r in sec["rows"].split(",") if r.strip()]
                mask = np.array([[c == "1" for c in r] for r in rows])[::-1]
                targets.append(RasterMask(np.array(_pair(sec["origin"])),
                                          float(sec["cell_size"]), mask))
            else:
                raise ConfigError(f"unknown target kind {kind!r}")
            i += 1
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed scene file {path}: {exc}") from exc
    try:
        return Scene(roi, tx, tuple(rxs), tuple(targets), tuple(fovs), beta0_sq)
    except ValueError as exc:
        raise ConfigError(f"invalid scene in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# run files
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything a full pipeline run needs besides the scene geometry."""

    scene_path: str
    seed: int = 0
    out_dir: str = "out"
    stages: tuple = ALL_STAGES
    workers: int = 0              # 0: one process per receiver when useful

    n_tx: int = 8
    n_rx: int = 8
    pilot_length: int = 8
    pilot_kind: str = "orthogonal"
    frames: int = 20
    power_dbm: float = 10.0
    noise_psd_dbm_hz: float = -169.0
    bandwidth_hz: float = 1e6
    cloud_density: float = 200.0

    q: int = 400
    q1: int = 60
    q2: int = 60

    phase1: Phase1Config = field(default_factory=Phase1Config)
    ep: EPConfig = field(default_factory=EPConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def validate(self) -> None:
        if self.n_tx < 1 or self.n_rx < 1 or self.pilot_length < 1:
            raise ConfigError("array sizes and pilot length must be positive")
        if self.pilot_kind == "orthogonal" and self.pilot_length < self.n_tx:
            raise ConfigError("orthogonal pilot needs pilot_length >= n_tx")
        if self.frames < 1:
            raise ConfigError("need at least one frame")
        side = math.isqrt(self.q)
        if side * side != self.q:
            raise ConfigError(f"grid size q={self.q} must be a perfect square")
        if self.q1 < 2 or self.q2 < 2:
            raise ConfigError("output raster needs at least 2x2 cells")
        if self.cloud_density <= 0:
            raise ConfigError("cloud density must be positive")
        unknown = set(self.stages) - set(ALL_STAGES)
        if unknown:
            raise ConfigError(f"unknown stages {sorted(unknown)}; valid: {ALL_STAGES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = list(self.stages)
        return d


def _get(cp, sec, key, conv, default):
    if not cp.has_section(sec) or key not in cp[sec]:
        return default
    raw = cp[sec][key].strip()
    if raw.lower() in ("auto", "none", "all"):
        return None
    if conv is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{sec}] {key}: cannot parse boolean {raw!r}")
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key}: {exc}") from exc


def run_config_from_ini(path) -> RunConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read run config {path}")
    if not cp.has_section("run") or "scene" not in cp["run"]:
        raise ConfigError(f"{path}: [run] section with a scene path is required")
    scene_rel = cp["run"]["scene"].strip()
    scene_path = str((Path(path).parent / scene_rel).resolve())

    stages_raw = _get(cp, "run", "stages", str, None)
    stages = tuple(stages_raw.split()) if stages_raw else ALL_STAGES

    cfg = RunConfig(
        scene_path=scene_path,
        seed=_get(cp, "run", "seed", int, 0),
        out_dir=_get(cp, "run", "out", str, "out"),
        stages=stages,
        workers=_get(cp, "run", "workers", int, 0),
        n_tx=_get(cp, "signal", "n_tx", int, 8),
        n_rx=_get(cp, "signal", "n_rx", int, 8),
        pilot_length=_get(cp, "signal", "pilot_length", int, 8),
        pilot_kind=_get(cp, "signal", "pilot_kind", str, "orthogonal"),
        frames=_get(cp, "signal", "frames", int, 20),
        power_dbm=_get(cp, "signal", "power_dbm", float, 10.0),
        noise_psd_dbm_hz=_get(cp, "signal", "noise_psd_dbm_hz", float, -169.0),
        bandwidth_hz=_get(cp, "signal", "bandwidth_hz", float, 1e6),
        cloud_density=_get(cp, "signal", "cloud_density", float, 200.0),
        q=_get(cp, "phase1", "q", int, 400),
        q1=_get(cp, "interp", "q1", int, 60),
        q2=_get(cp, "interp", "q2", int, 60),
        phase1=Phase1Config(
            eta=_get(cp, "phase1", "eta", float, None),
            eps1=_get(cp, "phase1", "eps1", float, 1e-4),
            eps2=_get(cp, "phase1", "eps2", float, 1e-3),
            iter_max=_get(cp, "phase1", "iter_max", int, 15),
            iter1=_get(cp, "phase1", "iter1", int, 2),
            iter2=_get(cp, "phase1", "iter2", int, 4),
            armijo_step=_get(cp, "phase1", "armijo_step", float, 0.1),
            armijo_shrink=_get(cp, "phase1", "armijo_shrink", float, 0.5),
            armijo_decrease=_get(cp, "phase1", "armijo_decrease", float, 1e-4),
            armijo_max_backtracks=_get(cp, "phase1", "armijo_max_backtracks", int, 20),
            subset_size=_get(cp, "phase1", "subset", int, None),
            d_max=_get(cp, "phase1", "d_max", float, None),
            optimize_positions=_get(cp, "phase1", "optimize_positions", bool, True),
            active_tol=_get(cp, "phase1", "active_tol", float, 1e-6),
            refresh_every=_get(cp, "phase1", "refresh_every", int, 500),
        ),
        ep=EPConfig(
            plane_fit_neighbors=_get(cp, "interp", "plane_fit_neighbors", int, 8),
            sigma_ep_sq=_get(cp, "interp", "sigma_ep_sq", float, None),
            raster_resolution=_get(cp, "interp", "raster_resolution", int, None),
            edge_preserving=_get(cp, "interp", "edge_preserving", bool, True),
        ),
        fusion=FusionConfig(
            mu=_get(cp, "fusion", "mu", float, None),
            eta=_get(cp, "fusion", "eta", float, None),
            rho=_get(cp, "fusion", "rho", float, 1.0),
            iter_max=_get(cp, "fusion", "iter_max", int, 30),
            iter1=_get(cp, "fusion", "iter1", int, 10),
            eps1=_get(cp, "fusion", "eps1", float, 1e-8),
            eps2=_get(cp, "fusion", "eps2", float, 1e-8),
            cg_tol=_get(cp, "fusion", "cg_tol", float, 1e-8),
            cg_max_iter=_get(cp, "fusion", "cg_max_iter", int, 200),
            freeze_lambda=_get(cp, "fusion", "freeze_lambda", bool, False),
        ),
    )
    cfg.validate()
    return cfg


def run_config_to_ini(cfg: RunConfig, path, scene_rel: str | None = None) -> None:
    cp = configparser.ConfigParser()
    cp["run"] = {
        "scene": scene_rel if scene_rel is not None else cfg.scene_path,
        "seed": str(cfg.seed),
        "out": cfg.out_dir,
        "stages": " ".join(cfg.stages),
        "workers": str(cfg.workers),
    }
    cp["signal"] = {
        "n_tx": str(cfg.n_tx), "n_rx": str(cfg.n_rx),
        "pilot_length": str(cfg.pilot_length), "pilot_kind": cfg.pilot_kind,
        "frames": str(cfg.frames), "power_dbm": _fmt(cfg.power_dbm),
        "noise_psd_dbm_hz": _fmt(cfg.noise_psd_dbm_hz),
        "bandwidth_hz": _fmt(cfg.bandwidth_hz),
        "cloud_density": _fmt(cfg.cloud_density),
    }
    p = cfg.phase1
    cp["phase1"] = {
        "q": str(cfg.q),
        "eta": "auto" if p.eta is None else _fmt(p.eta),
        "eps1": _fmt(p.eps1), "eps2": _fmt(p.eps2),
        "iter_max": str(p.iter_max), "iter1": str(p.iter1), "iter2": str(p.iter2),
        "armijo_step": _fmt(p.armijo_step), "armijo_shrink": _fmt(p.armijo_shrink),
        "armijo_decrease": _fmt(p.armijo_decrease),
        "armijo_max_backtracks": str(p.armijo_max_backtracks),
        "subset": "all" if p.subset_size is None else str(p.subset_size),
        "d_max": "auto" if p.d_max is None else _fmt(p.d_max),
        "optimize_positions": str(p.optimize_positions).lower(),
        "active_tol": _fmt(p.active_tol),
        "refresh_every": str(p.refresh_every),
    }
    e = cfg.ep
    cp["interp"] = {
        "q1": str(cfg.q1), "q2": str(cfg.q2),
        "plane_fit_neighbors": str(e.plane_fit_neighbors),
        "sigma_ep_sq": "auto" if e.sigma_ep_sq is None else _fmt(e.sigma_ep_sq),
        "raster_resolution": "auto" if e.raster_resolution is None else str(e.raster_resolution),
        "edge_preserving": str(e.edge_preserving).lower(),
    }
    f = cfg.fusion
    cp["fusion"] = {
        "mu": "auto" if f.mu is None else _fmt(f.mu),
        "eta": "auto" if f.eta is None else _fmt(f.eta),
        "rho": _fmt(f.rho),
        "iter_max": str(f.iter_max), "iter1": str(f.iter1),
        "eps1": _fmt(f.eps1), "eps2": _fmt(f.eps2),
        "cg_tol": _fmt(f.cg_tol), "cg_max_iter": str(f.cg_max_iter),
        "freeze_lambda": str(f.freeze_lambda).lower(),
    }
    with open(path, "w") as fh:
        cp.write(fh)
