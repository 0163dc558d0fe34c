"""Command-line entry point: synth, train, animate, eval, edit, gradcheck."""

from __future__ import annotations

import functools
import os
import sys
from pathlib import Path

import click
import numpy as np
from threadpoolctl import threadpool_limits

THREADS_ENV = "FLOWSPLAT_NUM_THREADS"


def _threads() -> int | None:
    v = os.environ.get(THREADS_ENV)
    return int(v) if v else None


def _guard(fn):
    """Run a command under the thread limit; report failures on stderr with exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        n = _threads()
        try:
            if n is None:
                return fn(*args, **kwargs)
            with threadpool_limits(n):
                return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _vec(text: str, n: int) -> tuple:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != n:
        raise click.BadParameter(f"expected {n} comma-separated numbers")
    return tuple(parts)


@click.group()
def main():
    """Physics-informed fluid animation from a single image."""


@main.command()
@click.option("--kind", type=click.Choice(["channel", "rock", "drift"]), default="channel")
@click.option("--rock", is_flag=True, help="Shorthand for --kind rock.")
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--frames", "n_frames", type=int, default=30, show_default=True)
@click.option("--fps", type=float, default=10.0, show_default=True)
@click.option("--n-flow", type=int, default=4096, show_default=True)
@click.option("--dolly", default=None, help="Per-frame camera offset dx,dy,dz.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guard
def synth(kind, rock, size, seed, n_frames, fps, n_flow, dolly, out):
    """Write a synthetic scene bundle with reference frames under gt/."""
    from .animation import write_frames
    from .scene.bundle import write_bundle
    from .synthlab import make_scene, render_ground_truth, sample_scene_flow, scene_to_bundle

    scene = make_scene("rock" if rock else kind, size=size, seed=seed, fps=fps, n_frames=n_frames)
    traj = scene.trajectory(None if dolly is None else _vec(dolly, 3))
    flow = sample_scene_flow(scene, n_flow, seed=seed)
    write_bundle(scene_to_bundle(scene, traj, flow), out)
    write_frames(render_ground_truth(scene, traj), Path(out) / "gt", fps, traj)
    click.echo(f"wrote bundle {out}")


@main.command()
@click.option("--bundle", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--stage", type=click.Choice(["dynamics", "decoder"]), default="dynamics")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--iterations", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--no-physics", is_flag=True)
@click.option("--no-force", is_flag=True)
@click.option("--init", "init_ckpt", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Start from this checkpoint (fine-tuning).")
@click.option("--feature-channels", type=int, default=8, show_default=True,
              help="Decoder stage: payload channels (0 = RGB pass-through).")
@_guard
def train(bundle, out, stage, config_path, iterations, seed, lr, no_physics, no_force, init_ckpt,
          feature_channels):
    """Train the velocity field (dynamics) or the feature decoder."""
    from .neuralfield import load_checkpoint
    from .pipeline import example_from_bundle, oracle_scene
    from .renderer import save_decoder
    from .scene.bundle import read_bundle
    from .training import (DecoderConfig, TrainConfig, decoder_example_from_scene,
                           train_decoder, train_dynamics)

    b = read_bundle(bundle)
    outp = Path(out)
    outp.mkdir(parents=True, exist_ok=True)
    if stage == "decoder":
        scene = oracle_scene(b)
        if scene is None:
            raise click.ClickException("decoder training needs a synthetic bundle")
        cfg = DecoderConfig(feature_channels=feature_channels)
        if iterations is not None:
            cfg.iterations = iterations
        if seed is not None:
            cfg.seed = seed
        if lr is not None:
            cfg.lr = lr
        ex = decoder_example_from_scene(scene, frames=range(0, scene.n_frames, 5))
        dec, losses = train_decoder([ex], cfg)
        save_decoder(dec, outp / "decoder.npz", feature_seed=cfg.seed)
        (outp / "decoder_loss.csv").write_text(
            "iteration,l1\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses)))
        click.echo(f"wrote {outp / 'decoder.npz'}")
        return

    d = {} if config_path is None else TrainConfig.from_yaml(config_path).to_dict()
    for k, v in (("iterations", iterations), ("seed", seed), ("lr", lr)):
        if v is not None:
            d[k] = v
    if no_physics:
        d["physics"] = False
    if no_force:
        d["external_force"] = False
    d["checkpoint_dir"] = str(outp)
    d["threads"] = _threads()
    cfg = TrainConfig.from_dict(d)
    ex = example_from_bundle(b, seed=cfg.seed)
    model = load_checkpoint(init_ckpt) if init_ckpt else None
    model, log = train_dynamics([ex], cfg, model=model)
    log.to_csv(outp / "trainlog.csv")
    cfg.to_yaml(outp / "config.yaml")
    click.echo(f"wrote {outp / 'final.ckpt'}")


@main.command()
@click.option("--bundle", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--decoder", "decoder_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--no-symmetric", is_flag=True, help="Forward advection only.")
@click.option("--feature-sampling", type=click.Choice(["current", "initial"]), default="current")
@_guard
def animate(bundle, checkpoint, out, decoder_path, no_symmetric, feature_sampling):
    """Render the looping video along the bundle's camera trajectory."""
    from .animation import AnimationConfig, write_frames
    from .neuralfield import load_checkpoint
    from .pipeline import animate_bundle
    from .renderer import load_decoder
    from .scene.bundle import read_bundle

    b = read_bundle(bundle)
    model = load_checkpoint(checkpoint)
    dec, fseed = (None, 0) if decoder_path is None else load_decoder(decoder_path)
    fps = float(b.meta.get("fps", 10.0))
    cfg = AnimationConfig(len(b.trajectory), fps, not no_symmetric,
                          feature_sampling=feature_sampling)
    frames = animate_bundle(b, model, cfg, dec, fseed)
    write_frames(frames, out, fps, b.trajectory)
    click.echo(f"wrote {len(frames)} frames to {out}")


@main.command(name="eval")
@click.option("--bundle", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--frames", "frames_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--reference", type=click.Path(exists=True, file_okay=False), default=None,
              help="Reference frames (default: the bundle's gt/).")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-probes", type=int, default=2000, show_default=True)
@click.option("--runtimes", is_flag=True, help="Include wall-clock timings (not reproducible).")
@_guard
def eval_cmd(bundle, frames_dir, reference, checkpoint, fmt, out, seed, n_probes, runtimes):
    """Score frames against references and the velocity field against the oracle."""
    from .neuralfield import load_checkpoint
    from .pipeline import evaluate, load_frames
    from .scene.bundle import read_bundle

    b = read_bundle(bundle)
    ref = load_frames(reference or Path(bundle) / "gt")
    model = load_checkpoint(checkpoint) if checkpoint else None
    rep = evaluate(b, load_frames(frames_dir), ref, model, n_probes, seed)
    text = rep.to_csv() if fmt == "csv" else rep.to_jsonl(with_runtimes=runtimes)
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--bundle", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--disk", required=True, help="Obstacle cx,cy,r in world units.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guard
def edit(bundle, disk, out):
    """Add a rock: update image and masks; keep the original flow samples still in the fluid."""
    from .animation import write_frames
    from .physics import SceneFlowSample
    from .pipeline import bundle_flow, oracle_scene
    from .scene.bundle import read_bundle, write_bundle
    from .synthlab import edit_scene_add_obstacle, render_ground_truth, scene_to_bundle

    b = read_bundle(bundle)
    scene = oracle_scene(b)
    if scene is None:
        raise click.ClickException("edit needs a synthetic bundle")
    new = edit_scene_add_obstacle(scene, _vec(disk, 3))
    flow = bundle_flow(b)
    if flow is not None:
        keep = new.region.inside(flow.position)
        flow = SceneFlowSample(flow.position[keep], flow.t[keep], flow.u_gt[keep])
    nb = scene_to_bundle(new, b.trajectory, flow)
    nb.meta["edited"] = True
    write_bundle(nb, out)
    write_frames(render_ground_truth(new, b.trajectory), Path(out) / "gt", new.fps, b.trajectory)
    click.echo(f"wrote edited bundle {out}")


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--activation", type=click.Choice(["relu", "tanh", "softplus"]), default="relu")
@click.option("--tol", type=float, default=1e-4, show_default=True)
@_guard
def gradcheck(seed, activation, tol):
    """Compare every loss gradient with central finite differences."""
    from .gradsuite import run_gradcheck

    worst = 0.0
    for r in run_gradcheck(seed, activation):
        click.echo(f"{r.name:10s} params={r.n_params} max_rel_err={r.max_rel_error:.3e} "
                   f"({r.seconds:.1f}s)")
        worst = max(worst, r.max_rel_error)
    if worst >= tol:
        click.echo(f"gradient check failed: {worst:.3e} >= {tol:.1e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
