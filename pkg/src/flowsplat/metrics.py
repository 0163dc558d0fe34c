"""Image, velocity and trajectory metrics plus the evaluation report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .physics import divergence

PSNR_CAP = 99.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    if size % 2 == 0:
        raise ValueError("window size must be odd")
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")
    return out[r:-r or None, r:-r or None]


def ssim(a, b, peak: float = 1.0, size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with a Gaussian window over window-complete positions, averaged over channels."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < size:
        raise ValueError("image smaller than the SSIM window")
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], peak, size, sigma, k1, k2)
                              for c in range(a.shape[2])]))
    g = gaussian_window(size, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def replace_outside(pred, gt, mask) -> np.ndarray:
    """Keep ``pred`` inside ``mask`` and the reference elsewhere (region-split scoring)."""
    pred, gt = _pair(pred, gt)
    m = np.asarray(mask, dtype=bool)
    return np.where(m[..., None] if pred.ndim == 3 else m, pred, gt)


# -- velocity ------------------------------------------------------------------------

@dataclass
class VelocityError:
    l1_component: float   # mean over samples and the 3 components of |du|
    l1_vector: float      # mean over samples of sum_i |du_i|
    epe: float            # mean over samples of |du|_2


def velocity_l1(field_, oracle, points, t) -> VelocityError:
    p = np.atleast_2d(points)
    if len(p) == 0:
        raise ValueError("velocity_l1 needs at least one probe")
    d = field_.velocity(p, t) - oracle.velocity(p, t)
    a = np.abs(d)
    return VelocityError(float(a.mean()), float(a.sum(1).mean()),
                         float(np.linalg.norm(d, axis=1).mean()))


def mean_abs_divergence(field_, points, t) -> float:
    """Monte-Carlo estimate of E|div u| over the given probe set."""
    return float(np.mean(np.abs(divergence(field_, np.atleast_2d(points), t))))


# -- trajectories ---------------------------------------------------------------------

def euler_exits(field_, region, points, t0: float, dt: float, steps: int) -> np.ndarray:
    """True where the explicit Euler trajectory leaves the region at any step."""
    x = np.array(points, dtype=np.float64)
    out = np.zeros(len(x), dtype=bool)
    for k in range(steps):
        x = x + dt * field_.velocity(x, t0 + k * dt)
        out |= region.outside(x)
    return out


def boundary_violation_rate(field_, region, points, t0: float = 0.0, dt: float = 0.1,
                            steps: int = 30, oracle=None) -> float:
    """Fraction of fluid kernels whose advected path leaves the fluid region.

    With an ``oracle`` only kernels whose oracle path (same Euler stepping) stays in the
    fluid are counted, so neither leakage inherent to the reference flow nor integrator
    overshoot is charged to the model.
    """
    p = np.atleast_2d(points)
    if len(p) == 0:
        return 0.0
    if oracle is not None:
        p = p[~euler_exits(oracle, region, p, t0, dt, steps)]
        if len(p) == 0:
            return 0.0
    return float(euler_exits(field_, region, p, t0, dt, steps).mean())


def _segment_hits_disk(a, b, disk) -> np.ndarray:
    cx, cy, r = disk
    c = np.array([cx, cy])
    a2, b2 = a[:, :2], b[:, :2]
    d = b2 - a2
    L = np.maximum((d * d).sum(1), 1e-300)
    s = np.clip(((c - a2) * d).sum(1) / L, 0.0, 1.0)
    q = a2 + s[:, None] * d
    return ((q - c) ** 2).sum(1) < r * r


def streamline_crossing_fraction(field_, seeds, disk, t0: float = 0.0, dt: float = 0.1,
                                 steps: int = 60) -> float:
    """Fraction of seeded Euler streamlines of u(., t0) passing through the disk (cx, cy, r)."""
    x = np.array(seeds, dtype=np.float64)
    if len(x) == 0:
        return 0.0
    hit = np.zeros(len(x), dtype=bool)
    for _ in range(steps):
        nxt = x + dt * field_.velocity(x, t0)
        hit |= _segment_hits_disk(x, nxt, disk)
        x = nxt
    return float(hit.mean())


# -- report ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    psnr_fluid: list = field(default_factory=list)
    epe: float = float("nan")
    l1_component: float = float("nan")
    l1_vector: float = float("nan")
    mean_abs_div: float = float("nan")
    violation_rate: float = float("nan")
    runtimes: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def summary(self) -> dict:
        return {"mean_psnr": self.mean_psnr, "mean_ssim": self.mean_ssim, "epe": self.epe,
                "l1_component": self.l1_component, "l1_vector": self.l1_vector,
                "mean_abs_div": self.mean_abs_div, "violation_rate": self.violation_rate}

    def to_jsonl(self, with_runtimes: bool = False) -> str:
        """One line per frame, then one summary line."""
        lines = []
        for i, (p, s) in enumerate(zip(self.psnr, self.ssim)):
            row = {"frame": i, "psnr": p, "ssim": s}
            if self.psnr_fluid:
                row["psnr_fluid"] = self.psnr_fluid[i]
            lines.append(json.dumps(row))
        summ = {"summary": self.summary()}
        if with_runtimes:
            summ["runtimes"] = self.runtimes
        lines.append(json.dumps(summ))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "psnr", "ssim", "psnr_fluid"])
        for i, (p, s) in enumerate(zip(self.psnr, self.ssim)):
            w.writerow([i, repr(p), repr(s), repr(self.psnr_fluid[i]) if self.psnr_fluid else ""])
        for k, v in self.summary().items():
            w.writerow([k, repr(v), "", ""])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return asdict(self)


def frame_metrics(pred_frames, gt_frames, mask=None) -> EvalReport:
    if len(pred_frames) != len(gt_frames):
        raise ValueError("frame counts differ")
    rep = EvalReport()
    for a, b in zip(pred_frames, gt_frames):
        rep.psnr.append(psnr(a, b))
        rep.ssim.append(ssim(a, b))
        if mask is not None:
            rep.psnr_fluid.append(psnr(replace_outside(a, b, mask), b))
    return rep
