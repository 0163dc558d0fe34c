import json

import numpy as np
import pytest
from click.testing import CliRunner

from flowsplat.cli import main
from flowsplat.neuralfield import FieldConfig, VelocityFieldModel, save_checkpoint
from flowsplat.pipeline import load_frames
from flowsplat.scene import read_bundle


def run(*args, ok=True):
    res = CliRunner().invoke(main, [str(a) for a in args])
    if ok:
        assert res.exit_code == 0, res.output + (res.stderr if hasattr(res, "stderr") else "")
    return res


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "rock"
    run("synth", "--rock", "--size", 32, "--frames", 4, "--n-flow", 256, "--out", out)
    return out


def _zero_checkpoint(bundle_dir, path):
    b = read_bundle(bundle_dir)
    cfg = FieldConfig(feature_channels=2, encoder_width=3, encoder_stages=1, mlp_widths=(8,),
                      zero_last=True)
    save_checkpoint(VelocityFieldModel(cfg, b.camera, 0.4), path)
    return path


def test_synth_rock_bundle(bundle_dir):
    b = read_bundle(bundle_dir)
    assert b.obstacle is not None and b.obstacle.any()
    assert b.meta["kind"] == "rock"
    assert len(b.flow["position"]) == 256
    assert len(load_frames(bundle_dir / "gt")) == 4


def test_eval_ground_truth_against_itself(bundle_dir, tmp_path):
    out = tmp_path / "rep.jsonl"
    run("eval", "--bundle", bundle_dir, "--frames", bundle_dir / "gt", "--out", out, "--n-probes", 200)
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert all(l["psnr"] == 99.0 and l["ssim"] == pytest.approx(1.0) for l in lines[:-1])
    s = lines[-1]["summary"]
    assert s["epe"] == 0.0 and s["violation_rate"] == 0.0
    csv_out = run("eval", "--bundle", bundle_dir, "--frames", bundle_dir / "gt", "--format", "csv",
                  "--n-probes", 200).output
    assert csv_out.splitlines()[0] == "frame,psnr,ssim,psnr_fluid"


def test_animate_zero_checkpoint(bundle_dir, tmp_path):
    ck = _zero_checkpoint(bundle_dir, tmp_path / "zero.ckpt")
    run("animate", "--bundle", bundle_dir, "--checkpoint", ck, "--out", tmp_path / "fwd", "--no-symmetric")
    frames = load_frames(tmp_path / "fwd")
    assert len(frames) == 4 and all(np.array_equal(f, frames[0]) for f in frames)
    man = json.loads((tmp_path / "fwd" / "manifest.json").read_text())
    assert man["n_frames"] == 4 and len(man["cameras"]) == 4
    # with symmetric splatting the two co-located half-opacity copies change compositing slightly
    run("animate", "--bundle", bundle_dir, "--checkpoint", ck, "--out", tmp_path / "sym")
    sym = load_frames(tmp_path / "sym")
    assert np.array_equal(sym[0], frames[0])
    assert max(np.abs(f - frames[0]).max() for f in sym) < 0.15


def test_train_and_edit(bundle_dir, tmp_path):
    out = tmp_path / "run"
    run("train", "--bundle", bundle_dir, "--out", out, "--iterations", 2, "--seed", 1)
    assert (out / "final.ckpt").exists() and (out / "config.yaml").exists()
    assert len((out / "trainlog.csv").read_text().splitlines()) == 3
    run("edit", "--bundle", bundle_dir, "--disk", "2.0,1.0,0.8", "--out", tmp_path / "edited")
    e = read_bundle(tmp_path / "edited")
    assert e.meta["edited"] and len(e.meta["region"]["disks"]) == 2
    assert not np.any(e.mask & e.obstacle)
    run("train", "--bundle", tmp_path / "edited", "--out", tmp_path / "ft", "--iterations", 1,
        "--init", out / "final.ckpt")


def test_train_decoder(bundle_dir, tmp_path):
    run("train", "--bundle", bundle_dir, "--out", tmp_path, "--stage", "decoder", "--iterations", 3,
        "--feature-channels", 4)
    assert (tmp_path / "decoder.npz").exists()


def test_errors(bundle_dir, tmp_path):
    res = run("synth", "--bogus", ok=False)
    assert res.exit_code == 2 and "Usage" in res.output
    res = run("edit", "--bundle", bundle_dir, "--disk", "0,4.8,1", "--out", tmp_path / "x", ok=False)
    assert res.exit_code == 1 and "error:" in res.output
    res = run("edit", "--bundle", bundle_dir, "--disk", "0,1", "--out", tmp_path / "x", ok=False)
    assert res.exit_code == 2


def test_help_lists_commands():
    out = run("--help").output
    for cmd in ("synth", "train", "animate", "eval", "edit", "gradcheck"):
        assert cmd in out
