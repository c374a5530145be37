"""Command-line front end: `python -m maskrecon <subcommand> [flags]`.

Every subcommand writes its artifacts under --out. On failure the exit status
is 1 (2 for a malformed command line) and stderr carries one line
`maskrecon-error: <ExceptionName>: <message>`.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np

from .errors import UsageError
from .models import Intrinsics, LossWeights, PoseSE3, Preset, RefineConfig, RunConfig
from .parsers.camera import intrinsics_payload, load_trajectory, pose_payload
from .parsers.pfm import read_pfm
from .parsers.utils import FRAME_FILES, decode_png_mask, load_input_dir
from .services import storage
from .services.geometry import compose, inverse, pose_exp, relative_pose
from .services.losses import total_loss, triplet_loss
from .services.masks import combine, repeated_masking
from .services.metrics import ate_snippets, depth_metrics
from .services.refine import FramePair, refine_depth, refine_pose
from .services.report import (
    loss_payload, mask_coverage, mask_summary, occlusion_summary, trace_frame,
)
from .services.synth import (
    PRESET_NAMES, next_pose, preset, render_pair, render_triplet, visibility_oracle,
)
from .services.warp import footprint_inside, reconstruct

logger = logging.getLogger(__name__)

ERROR_PREFIX = "maskrecon-error"


class Inputs(NamedTuple):
    intr: Intrinsics
    pose: PoseSE3          # frame-t camera -> frame t-1 camera
    x_tm1: np.ndarray
    x_t: np.ndarray
    d_tm1: np.ndarray
    d_t: np.ndarray
    preset: Optional[Preset]


def _load(config: RunConfig) -> Inputs:
    if config.input_dir:
        f = load_input_dir(Path(config.input_dir))
        return Inputs(f.intrinsics, f.pose, f.x_tm1, f.x_t, f.d_tm1, f.d_t, None)
    p = preset(config.preset, config.seed)
    x_tm1, d_tm1, x_t, d_t = render_pair(p, config.channels)
    return Inputs(p.intrinsics, relative_pose(p.pose_tm1, p.pose_t), x_tm1, x_t, d_tm1, d_t, p)


def _out(config: RunConfig) -> Path:
    out = Path(config.out or ".")
    storage.ensure_dirs(out)
    return out


# ---- subcommands ----

def cmd_synth(config: RunConfig) -> int:
    out = _out(config)
    p = preset(config.preset, config.seed)
    x_tm1, d_tm1, x_t, d_t = render_pair(p, config.channels)
    storage.save_image_png(x_tm1, out, FRAME_FILES["x_tm1"])
    storage.save_image_png(x_t, out, FRAME_FILES["x_t"])
    storage.save_depth_pfm(d_tm1, out, FRAME_FILES["d_tm1"])
    storage.save_depth_pfm(d_t, out, FRAME_FILES["d_t"])
    storage.save_json(intrinsics_payload(p.intrinsics), out, FRAME_FILES["intrinsics"])
    storage.save_json(pose_payload(relative_pose(p.pose_tm1, p.pose_t)), out, FRAME_FILES["pose"])
    storage.save_labels_png(visibility_oracle(p.scene, p.intrinsics, p.pose_t, p.pose_tm1),
                            out, "labels_t.png")
    storage.save_labels_png(visibility_oracle(p.scene, p.intrinsics, p.pose_tm1, p.pose_t),
                            out, "labels_tm1.png")
    storage.save_json({"preset": p.name, "seed": config.seed, "scene": p.scene.model_dump(),
                       "pose_tm1": pose_payload(p.pose_tm1), "pose_t": pose_payload(p.pose_t)},
                      out, "scene.json")
    logger.info("synthesised preset %s into %s", p.name, out)
    return 0


def cmd_warp(config: RunConfig) -> int:
    out = _out(config)
    s = _load(config)
    recon_t, rec_t = reconstruct(s.x_tm1, s.d_t, s.pose, s.intr)
    recon_tm1, rec_tm1 = reconstruct(s.x_t, s.d_tm1, inverse(s.pose), s.intr)
    storage.save_image_png(recon_t, out, "recon_t.png")
    storage.save_image_png(recon_tm1, out, "recon_tm1.png")
    summary = {}
    for key, rec in (("t", rec_t), ("t-1", rec_tm1)):
        summary[key] = {"valid": int(rec.valid.sum()),
                        "inside": int(footprint_inside(rec, s.intr.bounds).sum())}
    storage.save_json(summary, out, "warp.json")
    return 0


def cmd_masks(config: RunConfig) -> int:
    out = _out(config)
    s = _load(config)
    res = repeated_masking(s.x_t, s.x_tm1, s.d_t, s.d_tm1, s.pose, s.intr, config.rounds)
    for key, masks in (("t", res.masks_t), ("tm1", res.masks_tm1)):
        for kind in ("edge", "overlap", "blank"):
            storage.save_mask_png(getattr(masks, kind), out, f"mask_{key}_{kind}.png")
    storage.save_image_png(res.recon_t, out, "recon_t.png")
    storage.save_image_png(res.recon_tm1, out, "recon_tm1.png")
    summary = mask_summary(res)
    if s.preset is not None:
        p = s.preset
        labels_t = visibility_oracle(p.scene, p.intrinsics, p.pose_t, p.pose_tm1)
        labels_tm1 = visibility_oracle(p.scene, p.intrinsics, p.pose_tm1, p.pose_t)
        summary["oracle"] = {
            "t": occlusion_summary(labels_t, combine(res.masks_t)),
            "t-1": occlusion_summary(labels_tm1, combine(res.masks_tm1)),
        }
        summary["coverage"] = {
            "t": mask_coverage(labels_t, res.masks_t),
            "t-1": mask_coverage(labels_tm1, res.masks_tm1),
        }
    storage.save_json(summary, out, "masks.json")
    return 0


def cmd_loss(config: RunConfig) -> int:
    out = _out(config)
    options = dict(dn_enabled=config.dn, rounds=config.rounds, use_masks=config.use_masks,
                   norm=config.norm)
    if config.three_frame:
        p = preset(config.preset, config.seed)
        x_tm1, d_tm1, x_t, d_t, x_tp1, d_tp1 = render_triplet(p, config.channels)
        poses = (relative_pose(p.pose_tm1, p.pose_t), relative_pose(p.pose_t, next_pose(p)))
        report = triplet_loss((x_tm1, x_t, x_tp1), (d_tm1, d_t, d_tp1), poses, p.intrinsics,
                              config.weights, **options)
    else:
        s = _load(config)
        report = total_loss((s.x_tm1, s.x_t), (s.d_tm1, s.d_t), s.pose, s.intr, config.weights,
                            **options)
    storage.save_json(loss_payload(report), out, "loss.json")
    return 0


def _refine_config(config: RunConfig, target: str) -> RefineConfig:
    step = config.step or (0.05 if target == "depth" else 0.01)
    return RefineConfig(target=target, step_size=step, max_iters=config.iters,
                        weights=config.weights, rounds=config.rounds)


def cmd_refine_depth(config: RunConfig) -> int:
    out = _out(config)
    s = _load(config)
    initial = s.d_t * config.init_scale
    frames = FramePair(x_tm1=s.x_tm1, x_t=s.x_t, d_tm1=s.d_tm1)
    depth, trace = refine_depth(initial, frames, s.pose, s.intr, _refine_config(config, "depth"))
    storage.save_depth_pfm(depth, out, "depth.pfm")
    storage.save_csv(trace_frame(trace), out, "trace.csv")
    before = depth_metrics(initial, s.d_t, cap=config.cap, median_scale=False)
    after = depth_metrics(depth, s.d_t, cap=config.cap, median_scale=False)
    storage.save_json({"iterations": len(trace) - 1, "initial": before.model_dump(),
                       "final": after.model_dump()}, out, "refine.json")
    return 0


def cmd_refine_pose(config: RunConfig) -> int:
    out = _out(config)
    s = _load(config)
    offset = pose_exp([config.perturb, 0.0, 0.0, 0.0, 0.0, 0.0])
    initial = compose(offset, s.pose)
    frames = FramePair(x_tm1=s.x_tm1, x_t=s.x_t, d_tm1=s.d_tm1)
    pose, trace = refine_pose(initial, s.d_t, frames, s.intr, _refine_config(config, "pose"))
    storage.save_json(pose_payload(pose), out, "pose.json")
    storage.save_csv(trace_frame(trace), out, "trace.csv")
    storage.save_json({
        "iterations": len(trace) - 1,
        "initial_translation_error": float(np.linalg.norm(initial.translation - s.pose.translation)),
        "final_translation_error": float(np.linalg.norm(pose.translation - s.pose.translation)),
    }, out, "refine.json")
    return 0


def _emit(payload: Dict, config: RunConfig, filename: str) -> None:
    if config.out:
        storage.save_json(payload, _out(config), filename)
    print(json.dumps(storage.round_floats(payload), sort_keys=True))


def cmd_eval_depth(config: RunConfig) -> int:
    valid = decode_png_mask(config.valid) if config.valid else None
    metrics = depth_metrics(read_pfm(config.pred), read_pfm(config.gt), valid,
                            cap=config.cap, median_scale=config.median_scale)
    _emit(metrics.model_dump(), config, "depth_metrics.json")
    return 0


def cmd_eval_ate(config: RunConfig) -> int:
    stats = ate_snippets(load_trajectory(config.pred), load_trajectory(config.gt),
                         config.snippet_len, align_scale=config.align_scale)
    _emit(stats.model_dump(), config, "ate.json")
    return 0


def cmd_serve(config: RunConfig) -> int:
    import uvicorn
    from .app import app

    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "synth": cmd_synth,
    "warp": cmd_warp,
    "masks": cmd_masks,
    "loss": cmd_loss,
    "refine-depth": cmd_refine_depth,
    "refine-pose": cmd_refine_pose,
    "eval-depth": cmd_eval_depth,
    "eval-ate": cmd_eval_ate,
    "serve": cmd_serve,
}


def run(config: RunConfig) -> int:
    """Dispatch one subcommand; returns the exit status."""
    handler = COMMANDS.get(config.subcommand)
    if handler is None:
        raise ValueError(f"unknown subcommand {config.subcommand!r}")
    return handler(config)


# ---- argument parsing ----

class Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of printing usage and exiting."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = Parser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--preset", choices=PRESET_NAMES, help="synthetic scene preset")
    common.add_argument("--input", dest="input_dir", help="directory with frames, depths, intrinsics, pose")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--rounds", type=int, default=3, help="two-way masking rounds")
    common.add_argument("--alpha", type=float, default=None)
    common.add_argument("--beta", type=float, default=None)
    common.add_argument("--gamma", type=float, default=None)
    common.add_argument("--scales", type=int, default=None)
    common.add_argument("--dn", action="store_true", help="depth normalization in the smoothness term")
    common.add_argument("--median-scale", dest="median_scale", action=argparse.BooleanOptionalAction,
                        default=True)
    common.add_argument("--cap", type=int, choices=(50, 80), default=80)
    common.add_argument("--channels", type=int, choices=(1, 3), default=1)
    common.add_argument("--log-level", default="WARNING")

    parser = Parser(prog="maskrecon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ("synth", "warp", "masks"):
        sub.add_parser(name, parents=[common])
    loss = sub.add_parser("loss", parents=[common])
    loss.add_argument("--no-masks", dest="use_masks", action="store_false")
    loss.add_argument("--norm", choices=("l1", "l2"), default="l1")
    loss.add_argument("--three-frame", dest="three_frame", action="store_true",
                      help="average the pairs (t-1, t) and (t, t+1) of a preset")
    for name in ("refine-depth", "refine-pose"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--iters", type=int, default=200)
        p.add_argument("--step", type=float, default=None)
        if name == "refine-depth":
            p.add_argument("--init-scale", dest="init_scale", type=float, default=1.2)
        else:
            p.add_argument("--perturb", type=float, default=0.05, help="x-translation offset (m)")
    for name in ("eval-depth", "eval-ate"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--pred", required=True)
        p.add_argument("--gt", required=True)
        if name == "eval-depth":
            p.add_argument("--valid", help="PNG mask of pixels to evaluate")
        else:
            p.add_argument("--snippet-len", dest="snippet_len", type=int, default=3)
            p.add_argument("--no-scale", dest="align_scale", action="store_false")
    serve = sub.add_parser("serve", parents=[common])
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = vars(args).copy()
    values.pop("log_level", None)
    base = LossWeights.defaults(depth_normalization=values.pop("dn"))
    overrides = {k: values.pop(k) for k in ("alpha", "beta", "gamma")}
    scales = values.pop("scales")
    if scales is not None:
        overrides["num_scales"] = scales
    weights = base.model_copy(update={k: v for k, v in overrides.items() if v is not None})
    # model_copy skips validation; round-trip to apply the field constraints
    weights = LossWeights.model_validate(weights.model_dump())
    return RunConfig(weights=weights, dn=args.dn, **values)


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"{ERROR_PREFIX}: {type(e).__name__}: {_one_line(e)}", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(config_from_args(args))
    except Exception as e:
        logger.debug("subcommand failed", exc_info=True)
        print(f"{ERROR_PREFIX}: {type(e).__name__}: {_one_line(e)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
