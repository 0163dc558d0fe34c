import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from flowsplat.metrics import (EvalReport, boundary_violation_rate, frame_metrics, mean_abs_divergence,
                               psnr, replace_outside, ssim, streamline_crossing_fraction, velocity_l1)
from flowsplat.synthlab import ConstantField, CylinderFlow, GeometricRegion


def test_psnr_examples(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert psnr(a, a) == 99.0
    img = rng.integers(0, 200, size=(16, 16)).astype(float)
    val = psnr(img, img + 16, peak=255.0)
    assert val == pytest.approx(20 * np.log10(255 / 16), abs=1e-12)
    assert val == pytest.approx(24.03, abs=0.02)
    b = a + 0.1
    c = a + 0.1 / np.sqrt(2)
    assert psnr(a, c) - psnr(a, b) == pytest.approx(10 * np.log10(2), abs=1e-9)
    with pytest.raises(ValueError):
        psnr(a, a[:-1])


def test_psnr_scale_consistent(rng):
    a, b = rng.uniform(size=(2, 8, 8))
    assert psnr(a, b) == pytest.approx(psnr(255 * a, 255 * b, peak=255.0), abs=1e-9)


def test_ssim_examples(rng):
    a = rng.uniform(size=(32, 32))
    assert ssim(a, a) == pytest.approx(1.0)
    c = np.full((20, 20), 0.4)
    assert ssim(c, c) == pytest.approx(1.0)
    assert ssim(a, 1.0 - a) < 0
    with pytest.raises(ValueError):
        ssim(a, a[:, :-1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(11, 30), st.booleans())
def test_ssim_matches_skimage(seed, n, color):
    rng = np.random.default_rng(seed)
    shape = (n, n + 3, 3) if color else (n, n + 3)
    a = rng.uniform(size=shape)
    b = np.clip(a + rng.normal(0, 0.2, size=shape), 0, 1)
    ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, channel_axis=2 if color else None)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-10)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)
    assert -1 <= ssim(a, b) <= 1


def test_replace_outside(rng):
    a, b = rng.uniform(size=(2, 6, 6, 3))
    m = np.zeros((6, 6), bool)
    m[:3] = True
    r = replace_outside(a, b, m)
    assert np.array_equal(r[:3], a[:3]) and np.array_equal(r[3:], b[3:])


def test_velocity_l1_conventions():
    pts = np.zeros((5, 3))
    zero = velocity_l1(ConstantField((1, 2, 3)), ConstantField((1, 2, 3)), pts, 0.0)
    assert zero.l1_component == zero.l1_vector == zero.epe == 0.0
    e = velocity_l1(ConstantField((0.01, 0.01, 0.01)), ConstantField((0, 0, 0)), pts, 0.0)
    assert e.l1_vector == pytest.approx(0.03)
    assert e.l1_component == pytest.approx(0.01)
    assert e.epe == pytest.approx(0.01 * np.sqrt(3))
    with pytest.raises(ValueError):
        velocity_l1(ConstantField(), ConstantField(), np.zeros((0, 3)), 0.0)


def test_mean_abs_divergence_of_oracle(rng):
    p = np.c_[rng.uniform(-4, 4, (500, 2)), np.zeros(500)]
    p = p[np.hypot(p[:, 0], p[:, 1]) > 1.0]
    assert mean_abs_divergence(CylinderFlow(1.0, 1.0), p, 0.0) < 1e-12


def _grid_seeds(region, n=40):
    x, y = np.meshgrid(np.linspace(-6, -2, n), np.linspace(-4.5, 4.5, n))
    p = np.c_[x.ravel(), y.ravel(), np.zeros(x.size)]
    return p[region.inside(p)]


def test_violation_rate_oracle_and_uniform():
    region = GeometricRegion(5.0, 0.0, ((0.0, 0.0, 1.2),))
    seeds = _grid_seeds(region)
    oracle = CylinderFlow(1.0, 1.2)
    assert boundary_violation_rate(oracle, region, seeds, 0.0, 0.1, 60, oracle=oracle) == 0.0
    u = ConstantField((1.0, 0.0, 0.0))
    # geometric oracle: a straight path from x0 to x0 + 6 crosses the disk iff |y| < R and it reaches it
    steps = 60
    ends = seeds[:, 0] + 6.0
    expect = np.mean((np.abs(seeds[:, 1]) < 1.2) & (ends > -np.sqrt(np.maximum(1.44 - seeds[:, 1] ** 2, 0))))
    got = boundary_violation_rate(u, region, seeds, 0.0, 0.1, steps)
    assert got == pytest.approx(expect, abs=1.0 / len(seeds) * 3)
    assert got > 0
    assert boundary_violation_rate(u, region, np.zeros((0, 3))) == 0.0


def test_streamline_crossing():
    disk = (0.0, 0.0, 1.0)
    seeds = np.c_[np.full(101, -3.0), np.linspace(-2, 2, 101), np.zeros(101)]
    assert streamline_crossing_fraction(CylinderFlow(1.0, 1.0), seeds, disk) == 0.0
    frac = streamline_crossing_fraction(ConstantField((1.0, 0, 0)), seeds, disk)
    assert frac == pytest.approx(np.mean(np.abs(seeds[:, 1]) < 1.0), abs=0.02)


class _StopsAfterHalfSecond:
    def velocity(self, points, t):
        return np.tile([1.0 if t < 0.5 else 0.0, 0.0, 0.0], (len(np.atleast_2d(points)), 1))


def test_streamlines_use_one_instant():
    disk = (0.0, 0.0, 1.0)
    seeds = np.c_[np.full(41, -3.0), np.linspace(-2, 2, 41), np.zeros(41)]
    still_moving = streamline_crossing_fraction(_StopsAfterHalfSecond(), seeds, disk, t0=0.0)
    assert still_moving == streamline_crossing_fraction(ConstantField((1.0, 0, 0)), seeds, disk)
    assert streamline_crossing_fraction(_StopsAfterHalfSecond(), seeds, disk, t0=1.0) == 0.0


def test_report_formats(rng):
    frames = [rng.uniform(size=(12, 12, 3)) for _ in range(3)]
    rep = frame_metrics(frames, frames, mask=np.ones((12, 12), bool))
    rep.epe = 0.0
    lines = rep.to_jsonl().strip().split("\n")
    assert len(lines) == 4
    assert json.loads(lines[0]) == {"frame": 0, "psnr": 99.0, "ssim": 1.0, "psnr_fluid": 99.0}
    assert json.loads(lines[-1])["summary"]["mean_psnr"] == 99.0
    assert "runtimes" in json.loads(rep.to_jsonl(with_runtimes=True).strip().split("\n")[-1])
    csv_text = rep.to_csv()
    assert csv_text.splitlines()[0] == "frame,psnr,ssim,psnr_fluid"
    with pytest.raises(ValueError):
        frame_metrics(frames, frames[:2])
