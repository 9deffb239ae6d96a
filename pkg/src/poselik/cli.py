"""Command-line entry point: synth | mle | estimate | eval.

Configuration is a flat JSON file (--config) whose keys match the CLI
flag names; a flag given on the command line wins over the file. Exit
codes are a stable contract: 0 success, 2 input/validation, 3 I/O,
4 no correspondences, 5 all particles infeasible.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import formats, report, synth
from .errors import (AllInfeasible, NoCorrespondences, NoRegularVoxels,
                     PoselikError)
from .field import NEG_INF
from .likelihood import LikelihoodConfig, object_log_likelihood
from .mle import GncConfig, MleConfig, build_grid, cost_matrix, \
    correspondences_from_costs, gnc_solve
from .sampler import DeConfig, EstimateConfig, estimate_distribution
from .se3 import Pose

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_NO_CORRESPONDENCES = 4
EXIT_ALL_INFEASIBLE = 5

_DEFAULTS = {
    "beta": 10.0,
    "c_min": None,        # None: keep the classifier file's floor
    "particles": 10_000,
    "seed": 0,
    "population": 64,
    "generations": 300,
    "de_f": 0.8,
    "de_cr": 0.9,
    "k_candidates": 8,
    "truncation": None,   # None: voxel_size
    "mle_init": True,
    "plots": True,
    "normalize": False,
}


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _merged_config(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as f:
            loaded = json.load(f)
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(loaded) - set(_DEFAULTS) - {
            "object", "scene", "classifier", "spec", "out", "pose"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in list(_DEFAULTS) + ["object", "scene", "classifier", "spec", "out", "pose"]:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _load_inputs(cfg: dict):
    """Scene triplet from files or from a synth spec (exactly one)."""
    have_files = all(cfg.get(k) for k in ("object", "scene", "classifier"))
    have_spec = bool(cfg.get("spec"))
    if have_files == have_spec:
        raise ValueError("provide either --object/--scene/--classifier or --spec")
    if have_spec:
        inst = synth.generate(synth.load_spec(cfg["spec"]))
        return inst.object, inst.scene, inst.classifier
    obj = formats.load_object(cfg["object"])
    scene = formats.load_scene(cfg["scene"])
    cls = formats.load_classifier(cfg["classifier"])
    formats.check_paired(scene, cls)
    if cfg.get("c_min") is not None and float(cfg["c_min"]) != cls.c_min:
        raise ValueError("--c-min disagrees with the classifier file floor")
    return obj, scene, cls


def _ensure_outdir(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_bytes(b"")
    probe.unlink()
    return out


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        cfg = _merged_config(args)
        if not cfg.get("spec") or not cfg.get("out"):
            raise ValueError("synth needs --spec and --out")
        spec = synth.load_spec(cfg["spec"])
        inst = synth.generate(spec)
    except (PoselikError, ValueError, json.JSONDecodeError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)

    try:
        out = _ensure_outdir(cfg["out"])
        formats.save_object(inst.object, out / "object.spcl")
        formats.save_scene(inst.scene, out / "scene.svol")
        formats.save_classifier(inst.classifier, out / "classifier.pcls")
        gt = {
            "gt_pose": formats.pose_to_dict(inst.gt_pose),
            "symmetry_group": [formats.pose_to_dict(g) for g in inst.symmetry_group],
            "voxel_size": inst.scene.voxel_size,
        }
        with open(out / "ground_truth.json", "w") as f:
            json.dump(gt, f, indent=2)
            f.write("\n")
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)
    return EXIT_OK


def cmd_mle(args: argparse.Namespace) -> int:
    try:
        cfg = _merged_config(args)
        if not cfg.get("out"):
            raise ValueError("mle needs --out")
        obj, scene, cls = _load_inputs(cfg)
        lik = LikelihoodConfig(beta=float(cfg["beta"]))
        grid = build_grid(scene)
        costs = cost_matrix(obj, grid, scene, cls, lik)
        corr = correspondences_from_costs(costs, int(cfg["k_candidates"]), c_min=cls.c_min)
        if corr.n_pairs == 0:
            raise NoCorrespondences("no object point has a plausible localization")
        trunc = float(cfg["truncation"]) if cfg.get("truncation") else scene.voxel_size
        result = gnc_solve(obj, grid, corr, GncConfig(truncation=trunc))
        value = object_log_likelihood(obj, result.pose, scene, cls, lik)
    except (NoCorrespondences, NoRegularVoxels) as exc:
        return _fail(str(exc), EXIT_NO_CORRESPONDENCES)
    except (PoselikError, ValueError, json.JSONDecodeError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)

    try:
        out = _ensure_outdir(cfg["out"])
        payload = {
            "pose": formats.pose_to_dict(result.pose),
            "objective": value if value > NEG_INF else "-inf",
            "gnc_iterations": result.trace,
        }
        with open(out / "mle_pose.json", "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    t_start = time.perf_counter()
    try:
        cfg = _merged_config(args)
        if not cfg.get("out"):
            raise ValueError("estimate needs --out")
        obj, scene, cls = _load_inputs(cfg)
        lik = LikelihoodConfig(beta=float(cfg["beta"]))
        lo = scene.origin
        hi = scene.origin + np.array(scene.dims) * scene.voxel_size
        de = DeConfig(translation_bounds=(lo, hi),
                      population_size=int(cfg["population"]),
                      generations=int(cfg["generations"]),
                      differential_weight=float(cfg["de_f"]),
                      crossover_rate=float(cfg["de_cr"]),
                      seed=int(cfg["seed"]))
        est_cfg = EstimateConfig(likelihood=lik, de=de,
                                 particles=int(cfg["particles"]),
                                 use_mle_init=bool(cfg["mle_init"]),
                                 mle=MleConfig(likelihood=lik, top_k=int(cfg["k_candidates"])))
        result = estimate_distribution(obj, scene, cls, est_cfg)
    except AllInfeasible as exc:
        return _fail(str(exc), EXIT_ALL_INFEASIBLE)
    except (PoselikError, ValueError, json.JSONDecodeError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)

    try:
        out = _ensure_outdir(cfg["out"])
        report.write_particles_jsonl(result.particles, out / "particles.jsonl")
        for m in result.marginals:
            report.write_marginal_csv(m, out / f"marginal_{m.coordinate}.csv")
            if cfg["plots"]:
                report.render_marginal_png(m, out / f"marginal_{m.coordinate}.png")
        if cfg["plots"]:
            report.render_overview_png(result.marginals, out / "overview.png")
        stages = dict(result.stage_seconds)
        stages["total"] = time.perf_counter() - t_start
        summary = report.summarize(result.particles, stages)
        report.write_summary(summary, out / "summary.json")
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        cfg = _merged_config(args)
        if not cfg.get("pose"):
            raise ValueError("eval needs --pose (path or inline JSON)")
        obj, scene, cls = _load_inputs(cfg)
        pose = formats.load_pose(cfg["pose"])
        lik = LikelihoodConfig(beta=float(cfg["beta"]))
        value = object_log_likelihood(obj, pose, scene, cls, lik)
    except (PoselikError, ValueError, KeyError, json.JSONDecodeError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)
    print("-inf" if value == NEG_INF else repr(value))
    return EXIT_OK


def _add_shared(p: argparse.ArgumentParser):
    p.add_argument("--object", help="SPCL object file")
    p.add_argument("--scene", help="SVOL scene file")
    p.add_argument("--classifier", help="PCLS classifier file")
    p.add_argument("--spec", help="synthetic scene spec JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="flat JSON config; flags override it")
    p.add_argument("--beta", type=float, help="similarity temperature")
    p.add_argument("--c-min", dest="c_min", type=float, help="classifier log floor")
    p.add_argument("--particles", type=int, help="resampled particle count")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--population", type=int, help="DE population size")
    p.add_argument("--generations", type=int, help="DE generations")
    p.add_argument("--de-f", dest="de_f", type=float, help="DE differential weight")
    p.add_argument("--de-cr", dest="de_cr", type=float, help="DE crossover rate")
    p.add_argument("--k-candidates", dest="k_candidates", type=int,
                   help="correspondence candidates per point")
    p.add_argument("--truncation", type=float, help="GNC TLS threshold")
    p.add_argument("--no-mle-init", dest="mle_init", action="store_false",
                   default=None, help="skip the MLE seed for the sampler")
    p.add_argument("--no-plots", dest="plots", action="store_false",
                   default=None, help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poselik",
        description="Matching-free probabilistic 6DOF object pose estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, extra in (
        ("synth", cmd_synth, "generate a synthetic instance and write its files"),
        ("mle", cmd_mle, "robust maximum-likelihood pose"),
        ("estimate", cmd_estimate, "full pose-distribution estimate"),
        ("eval", cmd_eval, "log-likelihood of a given pose"),
    ):
        p = sub.add_parser(name, help=extra)
        _add_shared(p)
        if name == "eval":
            p.add_argument("--pose", help="pose JSON file or inline JSON object")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
