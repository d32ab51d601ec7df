"""Pilots, scatterer clouds, frame simulation and covariance persistence."""

import math
import struct

import numpy as np
import pytest

from mvfusion.geometry import Disc, FieldOfView, GeometryError
from mvfusion.simulate import (
    NoiseModel,
    Pilot,
    ScattererCloud,
    derived_rng,
    dbm_to_watts,
    export_covariance_csv,
    load_covariance,
    make_pilot,
    noise_variance_from_psd,
    response_columns,
    sample_cloud,
    save_covariance,
    scatter_covariance,
    simulate_frames,
    true_covariance,
)

from helpers import benchmark_scene, cloud_in_targets, dense_response_column


# ---------------------------------------------------------------------------
# pilots
# ---------------------------------------------------------------------------

def test_orthogonal_pilot_gram_16x16():
    """16 antennas, 16 symbols at 10 dBm: X X^H must be 0.16 * identity."""
    p = make_pilot("orthogonal", 16, 16, dbm_to_watts(10.0))
    gram = p.matrix @ p.matrix.conj().T
    assert np.max(np.abs(gram - 0.16 * np.eye(16))) < 1e-12
    assert p.is_orthogonal()


def test_orthogonal_pilot_row_power():
    p = make_pilot("orthogonal", 4, 8, 2.5)
    norms = np.linalg.norm(p.matrix, axis=1) ** 2
    assert norms == pytest.approx(np.full(4, 8 * 2.5), rel=1e-12)
    assert p.n_tx == 4 and p.length == 8
    assert p.is_orthogonal()


def test_random_sphere_pilot(rng):
    p = make_pilot("random-sphere", 3, 7, 0.4, rng)
    norms = np.linalg.norm(p.matrix, axis=1) ** 2
    assert norms == pytest.approx(np.full(3, 7 * 0.4), rel=1e-12)
    assert p.kind == "random-sphere"


def test_pilot_validation(rng):
    with pytest.raises(ValueError):
        make_pilot("orthogonal", 8, 4, 1.0)  # too short for orthogonal rows
    with pytest.raises(ValueError):
        make_pilot("random-sphere", 4, 8, 1.0)  # generator required
    with pytest.raises(ValueError):
        make_pilot("orthogonal", 4, 8, 0.0)
    with pytest.raises(ValueError):
        make_pilot("hadamard", 4, 8, 1.0, rng)


def test_is_orthogonal_rejects_correlated_rows():
    mat = np.ones((2, 4), dtype=complex)
    assert not Pilot(mat, 1.0, "manual").is_orthogonal()


# ---------------------------------------------------------------------------
# powers and noise
# ---------------------------------------------------------------------------

def test_dbm_conversion():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3)
    assert dbm_to_watts(10.0) == pytest.approx(0.01)


def test_noise_variance_from_psd_values():
    # -169 dBm/Hz over 1 MHz -> -109 dBm -> 1.2589e-14 W
    assert noise_variance_from_psd(-169.0, 1e6) == pytest.approx(1.2589254e-14, rel=1e-6)
    assert noise_variance_from_psd(0.0, 1.0) == pytest.approx(1e-3)
    assert noise_variance_from_psd(-169.0, 1.0) == pytest.approx(10 ** -19.9)
    with pytest.raises(ValueError):
        noise_variance_from_psd(-169.0, 0.0)


def test_noise_model_validation():
    NoiseModel(1e-30)
    with pytest.raises(ValueError):
        NoiseModel(0.0)
    with pytest.raises(ValueError):
        NoiseModel(-1.0)


def test_derived_rng_streams():
    a = derived_rng(7, 2, 0, 3).standard_normal(5)
    b = derived_rng(7, 2, 0, 3).standard_normal(5)
    c = derived_rng(7, 2, 0, 4).standard_normal(5)
    d = derived_rng(8, 2, 0, 3).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


# ---------------------------------------------------------------------------
# scatterer clouds
# ---------------------------------------------------------------------------

def test_sample_cloud_count_and_weights(rng):
    scene = benchmark_scene()  # one disc of radius 2
    cloud = sample_cloud(scene, 10.0, rng)
    assert cloud.size == round(10.0 * math.pi * 4.0)
    assert np.all(scene.in_targets(cloud.points))
    assert cloud.weights == pytest.approx(np.full(cloud.size, 1.0 / cloud.size))
    assert cloud.alpha.shape == (1, cloud.size)
    assert cloud.alpha.all()  # no blind sectors configured


def test_sample_cloud_blind_sector(rng):
    # sector from the first receiver wide enough to swallow the whole disc
    fov = FieldOfView(0, math.pi, math.pi / 2)
    scene = benchmark_scene(receivers=(0, 1), fovs=(fov,))
    cloud = sample_cloud(scene, 5.0, rng)
    assert not cloud.alpha[0].any()
    assert cloud.alpha[1].all()


def test_sample_cloud_two_target_split(rng):
    targets = (Disc(np.array([4.0, 4.0]), 1.5), Disc(np.array([11.0, 11.0]), 1.5))
    scene = benchmark_scene(targets=targets)
    cloud = sample_cloud(scene, 20.0, rng)
    n = cloud.size
    left = int(np.sum(cloud.points[:, 0] < 7.5))
    # equal areas: binomial(n, 1/2) within 3 sigma
    assert abs(left - n / 2) <= 3.0 * math.sqrt(n * 0.25)


def test_sample_cloud_empty_region(rng):
    scene = benchmark_scene(targets=())
    with pytest.raises(GeometryError):
        sample_cloud(scene, 10.0, rng)


# ---------------------------------------------------------------------------
# response columns and model covariance
# ---------------------------------------------------------------------------

def test_response_columns_match_dense_construction(rng):
    scene = benchmark_scene()
    pilot = make_pilot("random-sphere", 3, 5, 0.7, rng)
    pts = rng.uniform(3.0, 12.0, (6, 2))
    rx = scene.rxs[0]
    v = response_columns(pilot, scene.tx.position, rx.position, 4, pts)
    assert v.shape == (5 * 4, 6)
    for q in range(6):
        ref = dense_response_column(pilot, scene.tx.position, rx.position, 4, pts[q])
        assert np.max(np.abs(v[:, q] - ref)) < 1e-12 * np.max(np.abs(ref))


def test_scatter_covariance_rank_one():
    from mvfusion.geometry import path_loss

    scene = benchmark_scene()
    pilot = make_pilot("orthogonal", 4, 4, 1.0)
    pt = np.array([[7.5, 8.0]])
    cloud = ScattererCloud(pt, np.array([1.0]), np.ones((1, 1), dtype=bool))
    sig = scatter_covariance(cloud, pilot, scene, 0)
    v = dense_response_column(pilot, scene.tx.position, scene.rxs[0].position, 4, pt[0])
    gb = path_loss(scene.tx.position, scene.rxs[0].position, pt, scene.beta0_sq)[0]
    expect = gb * np.outer(v, v.conj())
    assert np.max(np.abs(sig - expect)) < 1e-12 * np.max(np.abs(expect))


def test_scatter_covariance_linear_in_weights():
    scene = benchmark_scene()
    pilot = make_pilot("orthogonal", 4, 4, 1.0)
    pts = np.array([[7.0, 7.5], [8.0, 8.0]])
    alpha = np.ones((1, 2), dtype=bool)
    base = scatter_covariance(ScattererCloud(pts, np.array([0.3, 0.7]), alpha),
                              pilot, scene, 0)
    doubled = scatter_covariance(ScattererCloud(pts, np.array([0.6, 1.4]), alpha),
                                 pilot, scene, 0)
    assert np.max(np.abs(doubled - 2.0 * base)) < 1e-12 * np.max(np.abs(base))


def test_scatter_covariance_invisible_cloud():
    scene = benchmark_scene()
    pilot = make_pilot("orthogonal", 4, 4, 1.0)
    pts = np.array([[7.0, 7.5]])
    cloud = ScattererCloud(pts, np.array([1.0]), np.zeros((1, 1), dtype=bool))
    sig = scatter_covariance(cloud, pilot, scene, 0)
    assert sig.shape == (16, 16)
    assert np.all(sig == 0)


def test_true_covariance_noise_only():
    scene = benchmark_scene()
    pilot = make_pilot("orthogonal", 4, 4, 1.0)
    cloud = ScattererCloud(np.array([[7.0, 7.5]]), np.array([1.0]),
                           np.zeros((1, 1), dtype=bool))
    sig = true_covariance(cloud, pilot, scene, 0, NoiseModel(3e-13))
    assert np.max(np.abs(sig - 3e-13 * np.eye(16))) == 0.0


def test_true_covariance_trace_identity(rng):
    """trace = L*P*n_tx*n_rx * sum(w*gb) + n*sigma^2 for an orthogonal pilot."""
    from mvfusion.geometry import path_loss

    scene = benchmark_scene()
    pilot = make_pilot("orthogonal", 4, 6, 0.8)
    cloud = cloud_in_targets(scene, 12, rng)
    noise = NoiseModel(1e-12)
    sig = true_covariance(cloud, pilot, scene, 0, noise)
    gb = path_loss(scene.tx.position, scene.rxs[0].position, cloud.points, scene.beta0_sq)
    expect = 6 * 0.8 * 4 * 4 * float(np.sum(cloud.weights * gb)) + 24 * 1e-12
    assert np.trace(sig).real == pytest.approx(expect, rel=1e-10)


# ---------------------------------------------------------------------------
# frame simulation
# ---------------------------------------------------------------------------

def test_simulate_frames_deterministic(rng):
    scene = benchmark_scene()
    pilot = make_pilot("orthogonal", 4, 4, 1.0)
    cloud = cloud_in_targets(scene, 10, rng)
    noise = NoiseModel(1e-12)
    a = simulate_frames(cloud, pilot, scene, 0, noise, 5, seed=3)
    b = simulate_frames(cloud, pilot, scene, 0, noise, 5, seed=3)
    c = simulate_frames(cloud, pilot, scene, 0, noise, 5, seed=4)
    assert np.array_equal(a.matrix, b.matrix)
    assert not np.array_equal(a.matrix, c.matrix)
    assert a.num_frames == 5 and a.receiver == 0 and a.seed == 3


def test_simulate_frames_hermitian_psd(rng):
    scene = benchmark_scene()
    pilot = make_pilot("orthogonal", 4, 4, 1.0)
    cloud = cloud_in_targets(scene, 20, rng)
    sc = simulate_frames(cloud, pilot, scene, 0, NoiseModel(1e-12), 6, seed=1)
    assert np.array_equal(sc.matrix, sc.matrix.conj().T)
    ev = np.linalg.eigvalsh(sc.matrix)
    assert ev.min() >= -1e-12 * max(ev.max(), 1e-300)


def test_simulate_frames_no_signal():
    scene = benchmark_scene()
    pilot = make_pilot("orthogonal", 4, 4, 1.0)
    cloud = ScattererCloud(np.array([[7.5, 7.5]]), np.array([1.0]),
                           np.zeros((1, 1), dtype=bool))
    sc = simulate_frames(cloud, pilot, scene, 0, NoiseModel(1e-30), 8, seed=0)
    assert np.max(np.abs(sc.matrix)) < 1e-29


def test_sample_covariance_mean_converges(rng):
    """Averaging many independent sample covariances recovers the model one."""
    scene = benchmark_scene(n_tx=2, n_rx=2)
    pilot = make_pilot("orthogonal", 2, 2, 1.0)
    cloud = cloud_in_targets(scene, 3, rng)
    noise = NoiseModel(5e-12)
    target = true_covariance(cloud, pilot, scene, 0, noise)
    acc = np.zeros_like(target)
    runs = 200
    for s in range(runs):
        acc += simulate_frames(cloud, pilot, scene, 0, noise, 50, seed=s).matrix
    acc /= runs
    rel = np.linalg.norm(acc - target) / np.linalg.norm(target)
    assert rel < 0.05


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_save_load_roundtrip(tmp_path, rng):
    scene = benchmark_scene()
    pilot = make_pilot("orthogonal", 4, 4, 1.0)
    cloud = cloud_in_targets(scene, 5, rng)
    sc = simulate_frames(cloud, pilot, scene, 0, NoiseModel(1e-12), 4, seed=9)
    path = tmp_path / "cov.bin"
    save_covariance(path, sc)
    back = load_covariance(path)
    assert np.array_equal(back.matrix, sc.matrix)
    assert (back.num_frames, back.receiver, back.seed) == (4, 0, 9)


def test_load_covariance_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNKJUNK")
    with pytest.raises(ValueError, match="not a covariance"):
        load_covariance(bad)

    wrong_version = tmp_path / "ver.bin"
    wrong_version.write_bytes(struct.pack("<4sIIIiq", b"MVFC", 99, 1, 1, 0, 0) + b"\0" * 16)
    with pytest.raises(ValueError, match="version"):
        load_covariance(wrong_version)

    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(struct.pack("<4sIIIiq", b"MVFC", 1, 4, 1, 0, 0) + b"\0" * 16)
    with pytest.raises(ValueError, match="truncated"):
        load_covariance(truncated)


def test_export_covariance_csv(tmp_path, rng):
    scene = benchmark_scene(n_tx=2, n_rx=2)
    pilot = make_pilot("orthogonal", 2, 2, 1.0)
    cloud = cloud_in_targets(scene, 3, rng)
    sc = simulate_frames(cloud, pilot, scene, 0, NoiseModel(1e-12), 4, seed=2)
    path = tmp_path / "cov.csv"
    export_covariance_csv(path, sc)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "# n=4 frames=4 receiver=0 seed=2"
    assert len(lines) == 1 + 4
    row0 = [float(x) for x in lines[1].split(",")]
    assert len(row0) == 8
    rebuilt = np.array(row0[0::2]) + 1j * np.array(row0[1::2])
    assert np.array_equal(rebuilt, sc.matrix[0])  # %.17g round-trips doubles
