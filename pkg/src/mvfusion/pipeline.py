"""End-to-end pipeline: simulate, image per receiver, interpolate, fuse, score.

Each stage is a file-to-file transform under one output directory, so a stage
can be rerun in isolation as long as its upstream artifacts exist.  All
randomness derives from the run seed through named substreams, which makes
reruns bit-identical and receiver workers order-independent.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .configio import ALL_STAGES, ConfigError, RunConfig, run_config_to_ini, scene_from_ini, scene_to_ini
from .fusion import FusionInputs, run_fusion
from .geometry import (
    Annulus,
    Array2D,
    Disc,
    FieldOfView,
    Polygon,
    RasterMask,
    RegionOfInterest,
    Scene,
    path_loss,
)
from .interp import RegularRaster, interpolate, raster_centers
from .simulate import (
    NoiseModel,
    Pilot,
    STREAM_CLOUD,
    STREAM_PILOT,
    derived_rng,
    load_covariance,
    make_pilot,
    noise_variance_from_psd,
    sample_cloud,
    save_covariance,
    simulate_frames,
)
from .single_view import Dictionary, Phase1Result, run_phase1


class StageError(RuntimeError):
    """A pipeline stage could not run (usually missing upstream artifacts)."""


# ---------------------------------------------------------------------------
# artifact files
# ---------------------------------------------------------------------------

def _cov_path(out: Path, k: int) -> Path:
    return out / f"covariance_rx{k + 1}.bin"


def _grid_paths(out: Path, k: int) -> tuple[Path, Path, Path]:
    stem = f"phase1_rx{k + 1}"
    return (out / f"{stem}_positions.csv", out / f"{stem}_intensities.csv",
            out / f"{stem}_meta.json")


def _raster_path(out: Path, k: int) -> Path:
    return out / f"raster_rx{k + 1}.csv"


def write_matrix_csv(path: Path, values: np.ndarray, header: str = "") -> None:
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for row in np.atleast_2d(values):
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def read_matrix_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(x) for x in line.split(",")])
    return np.array(rows)


def write_pgm(path: Path, values: np.ndarray) -> None:
    """8-bit binary PGM, min-max normalized; top image row is the largest y."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        scaled = np.round((v - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(v)
    img = scaled.astype(np.uint8)[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def build_pilot(cfg: RunConfig) -> Pilot:
    """The pilot is derived from the seed, so any stage can rebuild it."""
    power_w = 10.0 ** ((cfg.power_dbm - 30.0) / 10.0)
    rng = derived_rng(cfg.seed, STREAM_PILOT)
    return make_pilot(cfg.pilot_kind, cfg.n_tx, cfg.pilot_length, power_w, rng)


def build_noise(cfg: RunConfig) -> NoiseModel:
    return NoiseModel(noise_variance_from_psd(cfg.noise_psd_dbm_hz, cfg.bandwidth_hz))


def load_scene(cfg: RunConfig) -> Scene:
    return scene_from_ini(cfg.scene_path, cfg.n_tx, cfg.n_rx)


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise StageError(f"missing artifact {path.name}; run the '{produced_by}' stage first")
    return path


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_simulate(cfg: RunConfig, scene: Scene, out: Path) -> list[Path]:
    pilot = build_pilot(cfg)
    noise = build_noise(cfg)
    cloud = sample_cloud(scene, cfg.cloud_density, derived_rng(cfg.seed, STREAM_CLOUD))
    artifacts = []
    for k in range(scene.num_receivers):
        sc = simulate_frames(cloud, pilot, scene, k, noise, cfg.frames, cfg.seed)
        path = _cov_path(out, k)
        save_covariance(path, sc)
        artifacts.append(path)
    return artifacts


def _phase1_worker(args):
    cov_bytes_path, cfg, scene_path, k = args
    scene = scene_from_ini(scene_path, cfg.n_tx, cfg.n_rx)
    sc = load_covariance(cov_bytes_path)
    pilot = build_pilot(cfg)
    noise = build_noise(cfg)
    res = run_phase1(sc, pilot, scene, k, cfg.q, noise.variance, cfg.phase1, cfg.seed)
    return k, res


def _write_phase1(out: Path, k: int, cfg: RunConfig, res: Phase1Result) -> list[Path]:
    pos_p, int_p, meta_p = _grid_paths(out, k)
    write_matrix_csv(pos_p, res.grid.positions, header="x,y")
    write_matrix_csv(int_p, res.grid.gamma_r.reshape(-1, 1), header="gamma_r")
    meta = {
        "receiver": k,
        "q": cfg.q,
        "seed": cfg.seed,
        "eta": res.eta,
        "d_max": res.grid.d_max,
        "iterations": res.iterations,
        "converged": bool(res.converged),
        "grad_norm": res.grad_norm,
        "cost_first": res.cost_trace[0][1],
        "cost_last": res.cost_trace[-1][1],
    }
    with open(meta_p, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return [pos_p, int_p, meta_p]


def stage_phase1(cfg: RunConfig, scene: Scene, out: Path) -> list[Path]:
    ks = list(range(scene.num_receivers))
    for k in ks:
        _require(_cov_path(out, k), "simulate")
    artifacts = []
    if cfg.workers and cfg.workers > 1 and len(ks) > 1:
        jobs = [(_cov_path(out, k), cfg, cfg.scene_path, k) for k in ks]
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(ks))) as pool:
            for k, res in pool.map(_phase1_worker, jobs):
                artifacts.extend(_write_phase1(out, k, cfg, res))
    else:
        pilot = build_pilot(cfg)
        noise = build_noise(cfg)
        for k in ks:
            sc = load_covariance(_cov_path(out, k))
            res = run_phase1(sc, pilot, scene, k, cfg.q, noise.variance, cfg.phase1, cfg.seed)
            artifacts.extend(_write_phase1(out, k, cfg, res))
    return artifacts


def stage_interp(cfg: RunConfig, scene: Scene, out: Path) -> list[Path]:
    artifacts = []
    for k in range(scene.num_receivers):
        pos_p, int_p, _ = _grid_paths(out, k)
        _require(pos_p, "phase1")
        _require(int_p, "phase1")
        positions = read_matrix_csv(pos_p)
        values = read_matrix_csv(int_p).ravel()
        raster = interpolate(positions, values, scene.roi, (cfg.q2, cfg.q1), cfg.ep)
        rp = _raster_path(out, k)
        write_matrix_csv(rp, raster.values, header=f"raster {cfg.q2}x{cfg.q1} rx{k + 1}")
        write_pgm(rp.with_suffix(".pgm"), raster.values)
        artifacts.extend([rp, rp.with_suffix(".pgm")])
    return artifacts


def _path_loss_rasters(cfg: RunConfig, scene: Scene) -> np.ndarray:
    """Per-view channel-confidence weights at the common cell centers.

    Normalized by the global maximum: the weighted-least-squares minimizer
    only sees relative weights, and the default sparsity/TV penalty scales
    (fractions of the image peak) assume O(1) weights.  Raw physical path
    losses (~1e-11) would let any positive penalty zero the fused image.
    """
    centers = raster_centers(scene.roi, (cfg.q2, cfg.q1))
    stacks = []
    for k in range(scene.num_receivers):
        gb = path_loss(scene.tx.position, scene.rxs[k].position, centers, scene.beta0_sq)
        stacks.append(np.asarray(gb).reshape(cfg.q2, cfg.q1))
    losses = np.stack(stacks)
    return losses / losses.max()


def stage_fuse(cfg: RunConfig, scene: Scene, out: Path) -> list[Path]:
    images = []
    for k in range(scene.num_receivers):
        rp = _require(_raster_path(out, k), "interp")
        images.append(read_matrix_csv(rp))
    inputs = FusionInputs(scene.roi, np.stack(images), _path_loss_rasters(cfg, scene))
    result = run_fusion(inputs, cfg.fusion)
    artifacts = []
    fused_p = out / "fused.csv"
    write_matrix_csv(fused_p, result.raster.values, header=f"fused {cfg.q2}x{cfg.q1}")
    write_pgm(out / "fused.pgm", result.raster.values)
    artifacts.extend([fused_p, out / "fused.pgm"])
    for k in range(scene.num_receivers):
        sp = out / f"selectors_rx{k + 1}.csv"
        write_matrix_csv(sp, result.state.selectors[k].reshape(cfg.q2, cfg.q1),
                         header=f"visibility selector rx{k + 1}")
        artifacts.append(sp)
    trace_p = out / "fusion_trace.csv"
    with open(trace_p, "w") as fh:
        fh.write("# iteration,wls,sparsity,tv,total,primal_residual,cg_iterations,cg_converged\n")
        for i, row in enumerate(result.trace):
            fh.write(
                f"{i + 1},{row['wls']:.17g},{row['sparsity']:.17g},{row['tv']:.17g},"
                f"{row['total']:.17g},{row['primal_residual']:.17g},"
                f"{row['cg_iterations']},{int(row['cg_converged'])}\n"
            )
    artifacts.append(trace_p)
    meta = {"iterations": result.iterations, "converged": bool(result.converged),
            "mu": result.mu, "eta": result.eta}
    with open(out / "fusion_meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    artifacts.append(out / "fusion_meta.json")
    return artifacts


def stage_baseline(cfg: RunConfig, scene: Scene, out: Path) -> list[Path]:
    pilot = build_pilot(cfg)
    artifacts = []
    combined = np.zeros((cfg.q2, cfg.q1))
    for k in range(scene.num_receivers):
        sc = load_covariance(_require(_cov_path(out, k), "simulate"))
        raster = metrics_mod.matched_filter_baseline(sc, pilot, scene, k,
                                                     (cfg.q2, cfg.q1), normalize=False)
        combined += raster.values
        bp = out / f"baseline_rx{k + 1}.csv"
        write_matrix_csv(bp, raster.values, header=f"matched filter rx{k + 1}")
        artifacts.append(bp)
    if combined.max() > 0:
        combined = combined / combined.max()
    cp = out / "baseline_combined.csv"
    write_matrix_csv(cp, combined, header="matched filter, all receivers")
    write_pgm(out / "baseline_combined.pgm", combined)
    artifacts.extend([cp, out / "baseline_combined.pgm"])
    return artifacts


def stage_score(cfg: RunConfig, scene: Scene, out: Path, runtime_s: float = 0.0) -> list[Path]:
    fused_p = _require(out / "fused.csv", "fuse")
    fused = RegularRaster(scene.roi, read_matrix_csv(fused_p))
    pilot = build_pilot(cfg)

    single = []
    for k in range(scene.num_receivers):
        pos_p, int_p, _ = _grid_paths(out, k)
        _require(pos_p, "phase1")
        positions = read_matrix_csv(pos_p)
        values = read_matrix_csv(int_p).ravel()
        cols = Dictionary.for_receiver(pilot, scene, k, positions).columns
        entry = {
            "receiver": k + 1,
            "grid_p_islr_db": metrics_mod.p_islr_points(values, positions, scene),
            "grid_iou": metrics_mod.iou_points(values, positions, scene),
            "coherence": metrics_mod.coherence(cols),
        }
        rp = _raster_path(out, k)
        if rp.exists():
            raster = RegularRaster(scene.roi, read_matrix_csv(rp))
            entry["raster_p_islr_db"] = metrics_mod.p_islr(raster, scene)
            entry["raster_iou"] = metrics_mod.iou(raster, scene)
        single.append(entry)

    baseline = None
    bp = out / "baseline_combined.csv"
    if bp.exists():
        braster = RegularRaster(scene.roi, read_matrix_csv(bp))
        baseline = {
            "p_islr_db": metrics_mod.p_islr(braster, scene),
            "iou": metrics_mod.iou(braster, scene),
        }

    report = metrics_mod.MetricsReport(
        fused={
            "p_islr_db": metrics_mod.p_islr(fused, scene),
            "iou": metrics_mod.iou(fused, scene),
        },
        single_view=single,
        baseline=baseline,
        runtime_s=runtime_s,
        config=cfg.to_dict(),
    )
    mp = out / "metrics.json"
    with open(mp, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return [mp]


_STAGE_ORDER = ("simulate", "phase1", "interp", "fuse", "baseline", "score")


def run(cfg: RunConfig, scene: Scene | None = None, stages: tuple | None = None) -> dict:
    """Run the selected stages in dependency order and write a manifest."""
    if scene is None:
        scene = load_scene(cfg)
    selected = stages if stages is not None else cfg.stages
    unknown = set(selected) - set(ALL_STAGES)
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = {"config": cfg.to_dict(), "stages": {}}
    total = 0.0
    for name in _STAGE_ORDER:
        if name not in selected:
            continue
        t0 = time.perf_counter()
        if name == "simulate":
            arts = stage_simulate(cfg, scene, out)
        elif name == "phase1":
            arts = stage_phase1(cfg, scene, out)
        elif name == "interp":
            arts = stage_interp(cfg, scene, out)
        elif name == "fuse":
            arts = stage_fuse(cfg, scene, out)
        elif name == "baseline":
            arts = stage_baseline(cfg, scene, out)
        else:
            arts = stage_score(cfg, scene, out, runtime_s=total)
        dt = time.perf_counter() - t0
        total += dt
        manifest["stages"][name] = {
            "seconds": dt,
            "artifacts": [p.name for p in arts],
        }
    manifest["total_seconds"] = total
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _letter_mask(rows: list[str]) -> np.ndarray:
    return np.array([[c == "1" for c in r] for r in rows])[::-1]


# Block glyphs; stroke width 1.6 m keeps the letters near the bistatic
# resolution limit of the 12-antenna benchmark geometry.
_LETTER_I = ["111", "010", "010", "111"]
_LETTER_S = ["111", "110", "011", "111"]
_LETTER_A = ["010", "101", "111", "101"]
_LETTER_C = ["111", "100", "100", "111"]


def _base_roi() -> RegionOfInterest:
    return RegionOfInterest(0.0, 15.0, 0.0, 15.0)


def _stations(n_tx: int, n_rx: int, receivers: tuple[int, ...]):
    tx = Array2D(np.array([-3.0, 7.5]), n_tx, "tx")
    all_rx = [np.array([18.0, 7.5]), np.array([7.5, 18.0]), np.array([7.5, -3.0])]
    rxs = tuple(Array2D(all_rx[i], n_rx, "rx") for i in receivers)
    return tx, rxs


def _bearing(src: np.ndarray, dst: np.ndarray) -> float:
    return math.atan2(dst[1] - src[1], dst[0] - src[0])


def preset(name: str) -> tuple[RunConfig, Scene]:
    """Named benchmark configurations; the run config's scene path is filled
    in when the files are materialized."""
    roi = _base_roi()
    beta0_sq = (10.0 ** (-35.0 / 10.0)) ** 2
    if name == "fig2":
        tx, rxs = _stations(16, 16, (0,))
        targets = (
            Polygon(np.array([[2.2, 2.2], [6.8, 2.2], [4.5, 6.5]])),
            Disc(np.array([10.0, 10.5]), 2.2),
        )
        scene = Scene(roi, tx, rxs, targets, (), beta0_sq)
        cfg = RunConfig(scene_path="", n_tx=16, n_rx=16, pilot_length=16,
                        frames=20, power_dbm=10.0, q=400, q1=60, q2=60)
    elif name == "fig4":
        tx, rxs = _stations(8, 8, (1,))
        targets = (Annulus(np.array([7.5, 7.5]), 2.0, 3.5),)
        scene = Scene(roi, tx, rxs, targets, (), beta0_sq)
        cfg = RunConfig(scene_path="", n_tx=8, n_rx=8, pilot_length=8,
                        frames=20, power_dbm=10.0, q=900, q1=60, q2=60)
    elif name == "fig5":
        tx, rxs = _stations(8, 8, (0, 1, 2))
        targets = (Annulus(np.array([7.5, 7.5]), 2.0, 3.5),)
        center = np.array([7.5, 7.5])
        fovs = tuple(
            FieldOfView(k, _bearing(rx.position, center), math.pi / 8.0)
            for k, rx in enumerate(rxs)
        )
        scene = Scene(roi, tx, rxs, targets, fovs, beta0_sq)
        cfg = RunConfig(scene_path="", n_tx=8, n_rx=8, pilot_length=8,
                        frames=20, power_dbm=0.0, q=900, q1=60, q2=60)
    elif name == "table1_col2":
        tx, rxs = _stations(12, 12, (0, 1, 2))
        cell = 1.6
        targets = (
            RasterMask(np.array([1.6, 8.1]), cell, _letter_mask(_LETTER_I)),
            RasterMask(np.array([8.6, 8.1]), cell, _letter_mask(_LETTER_S)),
            RasterMask(np.array([1.6, 0.6]), cell, _letter_mask(_LETTER_A)),
            RasterMask(np.array([8.6, 0.6]), cell, _letter_mask(_LETTER_C)),
        )
        fovs = tuple(
            FieldOfView(k, _bearing(rx.position, tx.position), math.pi / 5.0)
            for k, rx in enumerate(rxs)
        )
        scene = Scene(roi, tx, rxs, targets, fovs, beta0_sq)
        cfg = RunConfig(scene_path="", n_tx=12, n_rx=12, pilot_length=12,
                        frames=20, power_dbm=10.0, q=900, q1=60, q2=60)
    else:
        raise ConfigError(
            f"unknown preset {name!r}; available: fig2, fig4, fig5, table1_col2"
        )
    return cfg, scene


def materialize_preset(name: str, out_dir) -> tuple[Path, Path]:
    """Write the preset's scene and run files into a directory."""
    cfg, scene = preset(name)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene_p = out / f"{name}_scene.ini"
    run_p = out / f"{name}_run.ini"
    scene_to_ini(scene, scene_p)
    cfg.scene_path = str(scene_p.resolve())
    cfg.out_dir = str(out / f"{name}_out")
    run_config_to_ini(cfg, run_p, scene_rel=scene_p.name)
    return run_p, scene_p
