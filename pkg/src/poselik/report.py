"""Report emission: particle JSONL, marginal CSVs, summary and figures.

Figures are rendered headless (Agg) next to the delimited output so a run
directory is self-describing; matplotlib is imported lazily to keep the
core library import light.
"""

from __future__ import annotations

import json
import math
from typing import Iterable, List, Optional

import numpy as np

from .sampler import COORDINATES, CIRCULAR, MarginalDensity, ParticleSet
from .se3 import Pose


def circular_std(angles: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
    """Dispersion sqrt(-2 ln R) from the mean resultant length R."""
    a = np.asarray(angles, dtype=np.float64)
    if weights is None:
        weights = np.full(a.shape, 1.0 / a.size)
    c = float(np.sum(weights * np.cos(a)))
    s = float(np.sum(weights * np.sin(a)))
    r = math.hypot(c, s)
    if r <= 0.0:
        return float("inf")
    return math.sqrt(max(0.0, -2.0 * math.log(min(1.0, r))))


def write_particles_jsonl(p: ParticleSet, path):
    weights = p.weights if p.weights is not None else np.full(p.size, 1.0 / p.size)
    with open(path, "w") as f:
        for pose, ll, w in zip(p.poses, p.log_liks, weights):
            q, t = pose.quat, pose.trans
            row = {"qw": q[0], "qx": q[1], "qy": q[2], "qz": q[3],
                   "tx": t[0], "ty": t[1], "tz": t[2],
                   "loglik": float(ll), "weight": float(w)}
            f.write(json.dumps(row) + "\n")


def read_particles_jsonl(path) -> ParticleSet:
    poses: List[Pose] = []
    lls: List[float] = []
    ws: List[float] = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            poses.append(Pose(np.array([row["qw"], row["qx"], row["qy"], row["qz"]]),
                              np.array([row["tx"], row["ty"], row["tz"]])))
            lls.append(row["loglik"])
            ws.append(row["weight"])
    return ParticleSet(poses=poses, log_liks=np.array(lls), weights=np.array(ws))


def write_marginal_csv(m: MarginalDensity, path):
    with open(path, "w") as f:
        f.write("value,density\n")
        for v, d in zip(m.grid, m.density):
            f.write(f"{v!r},{d!r}\n")


def read_marginal_csv(path):
    vals, dens = [], []
    with open(path) as f:
        header = f.readline().strip()
        if header != "value,density":
            raise ValueError(f"unexpected marginal CSV header {header!r}")
        for line in f:
            a, b = line.strip().split(",")
            vals.append(float(a))
            dens.append(float(b))
    return np.array(vals), np.array(dens)


def summarize(p: ParticleSet, stage_seconds: Optional[dict] = None) -> dict:
    trans = p.translations()
    euler = p.euler_angles()
    coords = {}
    for i, name in enumerate(COORDINATES):
        vals = trans[:, i] if i < 3 else euler[:, i - 3]
        entry = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        if name in CIRCULAR:
            entry["circular_std"] = circular_std(vals)
        coords[name] = entry
    ess = float(1.0 / np.sum(p.weights ** 2)) if p.weights is not None else None
    return {
        "coordinates": coords,
        "ess": ess,
        "n_particles": p.size,
        "best_loglik": float(np.max(p.log_liks)),
        "stage_seconds": stage_seconds or {},
    }


def write_summary(summary: dict, path):
    with open(path, "w") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")


_COORD_LABEL = {
    "tx": "x translation", "ty": "y translation", "tz": "z translation",
    "roll": "roll", "pitch": "pitch", "yaw": "yaw",
}


def render_marginal_png(m: MarginalDensity, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.fill_between(m.grid, m.density, alpha=0.3)
    ax.plot(m.grid, m.density, lw=1.5)
    unit = "rad" if m.circular else "scene units"
    ax.set_xlabel(f"{_COORD_LABEL.get(m.coordinate, m.coordinate)} [{unit}]")
    ax.set_ylabel("density")
    ax.set_title(f"{m.coordinate} marginal (bw={m.bandwidth:.3g})")
    if m.circular:
        ax.set_xlim(-np.pi, np.pi)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_overview_png(marginals: Iterable[MarginalDensity], path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ms = list(marginals)
    fig, axes = plt.subplots(2, 3, figsize=(12, 6))
    for ax, m in zip(axes.ravel(), ms):
        ax.plot(m.grid, m.density, lw=1.2)
        ax.fill_between(m.grid, m.density, alpha=0.25)
        ax.set_title(m.coordinate)
        if m.circular:
            ax.set_xlim(-np.pi, np.pi)
    fig.suptitle("pose distribution marginals")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
