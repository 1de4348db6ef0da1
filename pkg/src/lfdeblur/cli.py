"""Batch entry points: synthesize, initialize, deblur, evaluate.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Every subcommand
accepts ``--config file.json`` (same keys as the flags, unknown keys
rejected, flags override the file) and ``--log-json path``.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import initialization as init_mod
from . import metrics as metrics_mod
from . import synth as synth_mod
from .geometry import se3_exp
from .lightfield import (
    DepthMap,
    load_depth,
    load_image,
    load_lightfield,
    save_depth,
    save_image,
    save_pfm,
)
from .solver import (
    EnergyParams,
    EstimationState,
    joint_estimate_pyramid,
    make_initial_state,
)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


@dataclass
class RunConfig:
    """Deblur-stage options; every field has a default so a config file may
    specify any subset."""

    lambda_u: float = 15.0
    lambda_L: float = 5.0
    lambda_D: float = 20.0
    M: int = 13
    outer_iters: int = 10
    irls_inner_iters: int = 3
    irls_delta: float = 1e-3
    tv_eps: float = 1e-3
    cg_tol: float = 1e-6
    cg_max_iters: int = 120
    step_damping: float = 1e-4
    include_center: bool = True
    near: float = 1.0
    far: float = 10.0
    candidates: int = 32
    patch: int = 21
    stride: int = 8
    ransac_trials: int = 500
    ransac_tau: float = 1.0
    conf_gate: float = 0.3
    seed: int = 0
    single_scale: bool = False
    pyramid_levels: int = 3
    threads: int = 1

    def energy_params(self) -> EnergyParams:
        return EnergyParams(
            lambda_u=self.lambda_u,
            lambda_L=self.lambda_L,
            lambda_D=self.lambda_D,
            M=self.M,
            outer_iters=self.outer_iters,
            irls_inner_iters=self.irls_inner_iters,
            irls_delta=self.irls_delta,
            tv_eps=self.tv_eps,
            cg_tol=self.cg_tol,
            cg_max_iters=self.cg_max_iters,
            step_damping=self.step_damping,
            include_center=self.include_center,
        )


def load_run_config(path, overrides: dict) -> RunConfig:
    """Defaults <- config file <- explicitly passed flags."""
    values = {f.name: f.default for f in fields(RunConfig)}
    if path is not None:
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - set(values)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("solver options")
    g.add_argument("--config", type=str, default=None, help="JSON config file")
    g.add_argument("--lambda-u", dest="lambda_u", type=float, default=None)
    g.add_argument("--lambda-L", dest="lambda_L", type=float, default=None)
    g.add_argument("--lambda-D", dest="lambda_D", type=float, default=None)
    g.add_argument("--time-samples", dest="M", type=int, default=None,
                   help="odd number of path samples of the blur operator")
    g.add_argument("--outer-iters", dest="outer_iters", type=int, default=None)
    g.add_argument("--irls-inner-iters", dest="irls_inner_iters", type=int, default=None)
    g.add_argument("--irls-delta", dest="irls_delta", type=float, default=None)
    g.add_argument("--tv-eps", dest="tv_eps", type=float, default=None)
    g.add_argument("--cg-tol", dest="cg_tol", type=float, default=None)
    g.add_argument("--cg-max-iters", dest="cg_max_iters", type=int, default=None)
    g.add_argument("--step-damping", dest="step_damping", type=float, default=None)
    g.add_argument("--near", type=float, default=None, help="nearest depth hypothesis")
    g.add_argument("--far", type=float, default=None, help="farthest depth hypothesis")
    g.add_argument("--candidates", type=int, default=None, help="depth hypothesis count")
    g.add_argument("--patch", type=int, default=None, help="kernel-estimator patch size")
    g.add_argument("--stride", type=int, default=None, help="kernel-estimator stride")
    g.add_argument("--ransac-trials", dest="ransac_trials", type=int, default=None)
    g.add_argument("--ransac-tau", dest="ransac_tau", type=float, default=None)
    g.add_argument("--conf-gate", dest="conf_gate", type=float, default=None)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--single-scale", dest="single_scale", action="store_const",
                   const=True, default=None, help="disable the coarse-to-fine pyramid")
    g.add_argument("--pyramid-levels", dest="pyramid_levels", type=int, default=None)
    g.add_argument("--threads", type=int, default=None,
                   help="worker parallelism bound (1 is the reproducibility reference)")


def _config_overrides(args) -> dict:
    names = {f.name for f in fields(RunConfig)}
    return {k: v for k, v in vars(args).items() if k in names}


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=1))


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.motion not in synth_mod.MOTION_TYPES:
        print(f"unknown motion {args.motion!r}; choose from {synth_mod.MOTION_TYPES}",
              file=sys.stderr)
        return USAGE_ERROR
    if args.scene not in ("plane", "twoplane", "steps"):
        print(f"unknown scene {args.scene!r}; choose plane, twoplane, or steps",
              file=sys.stderr)
        return USAGE_ERROR
    scene = synth_mod.make_scene(
        args.scene, args.motion, args.seed,
        width=args.width, height=args.height, views=args.views, blur_px=args.blur_px,
    )
    out = Path(args.output)
    gt = synth_mod.save_scene_outputs(scene, out, n_frames=args.frames)
    if args.log_json:
        _write_json(args.log_json, {"scene": scene.name, "out": str(out), **gt})
    print(f"wrote {out / 'manifest.json'} and {out / 'gt.json'}")
    return 0


# ---------------------------------------------------------------------------
# init-depth / init-pose
# ---------------------------------------------------------------------------


def _initial_depth(lf, cfg: RunConfig) -> DepthMap:
    cands = init_mod.inverse_depth_candidates(cfg.near, cfg.far, cfg.candidates)
    return init_mod.init_depth(lf, cands)


def cmd_init_depth(args) -> int:
    cfg = load_run_config(args.config, _config_overrides(args))
    lf = load_lightfield(args.input)
    depth = _initial_depth(lf, cfg)
    save_depth(depth, args.output)
    if args.log_json:
        _write_json(args.log_json, {"input": str(args.input), "output": str(args.output)})
    print(f"wrote {args.output}")
    return 0


def cmd_init_pose(args) -> int:
    cfg = load_run_config(args.config, _config_overrides(args))
    lf = load_lightfield(args.input)
    depth = load_depth(args.depth) if args.depth else _initial_depth(lf, cfg)
    if args.kernels:
        kernels = init_mod.load_kernel_field(args.kernels)
    else:
        kernels = init_mod.estimate_linear_kernels(lf.center_view(), cfg.patch, cfg.stride)
    eps = init_mod.ransac_pose_init(
        kernels, depth, lf.intrinsics, path_M=cfg.M,
        params=init_mod.RansacParams(cfg.ransac_trials, cfg.ransac_tau,
                                     cfg.conf_gate, cfg.seed),
    )
    _write_json(args.output, {"eps": [float(x) for x in eps]})
    if args.log_json:
        _write_json(args.log_json, {"eps": [float(x) for x in eps]})
    print(f"wrote {args.output}")
    return 0


# ---------------------------------------------------------------------------
# deblur
# ---------------------------------------------------------------------------


def cmd_deblur(args) -> int:
    cfg = load_run_config(args.config, _config_overrides(args))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        lf = load_lightfield(args.input)
        depth = _initial_depth(lf, cfg)
        if args.init_eps:
            eps0 = np.asarray(json.loads(Path(args.init_eps).read_text())["eps"], dtype=float)
        else:
            if args.oracle_kernels:
                kernels = init_mod.load_kernel_field(args.oracle_kernels)
            else:
                kernels = init_mod.estimate_linear_kernels(lf.center_view(), cfg.patch, cfg.stride)
            eps0 = init_mod.ransac_pose_init(
                kernels, depth, lf.intrinsics, path_M=cfg.M,
                params=init_mod.RansacParams(cfg.ransac_trials, cfg.ransac_tau,
                                             cfg.conf_gate, cfg.seed),
            )
        state = make_initial_state(lf, depth, eps0)
        params = cfg.energy_params()
        log_path = args.log_json or (out / "solver_log.jsonl")
        if cfg.outer_iters > 0:
            levels = 1 if cfg.single_scale else cfg.pyramid_levels
            state = joint_estimate_pyramid(lf, params, state, levels=levels,
                                           log_path=log_path)
        else:
            Path(log_path).write_text("")

        latent_path = out / "latent.png"
        save_image(state.latent, latent_path, bit_depth=16)
        written.append(latent_path)
        if state.latent.ndim == 3:
            sidecar = out / "latent.pfm"
            save_pfm(state.latent.astype(np.float32), sidecar)
            written.append(sidecar)
        depth_path = out / "depth.pfm"
        save_depth(state.depth, depth_path)
        written.append(depth_path)
        eps_path = out / "eps.json"
        _write_json(eps_path, {
            "eps": [float(x) for x in state.eps0],
            "init_eps": [float(x) for x in eps0],
            "pose": se3_exp(state.eps0).to_flat(),
            "energy_trace": [float(e) for e in state.energy_trace],
            "warnings": state.warnings,
        })
        written.append(eps_path)
    except Exception:
        for p in written:
            Path(p).unlink(missing_ok=True)
        raise
    print(f"wrote {out / 'latent.png'}, {out / 'depth.pfm'}, {out / 'eps.json'}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _gt_frames(gt_dir: Path, gt: dict, sharp_center: np.ndarray):
    frames = [sharp_center]
    frames_dir = gt_dir / "frames"
    if frames_dir.is_dir():
        for p in sorted(frames_dir.glob("frame_*.png")):
            frames.append(load_image(p))
    return frames


def cmd_eval(args) -> int:
    gt_dir = Path(args.gt)
    gt = json.loads((gt_dir / "gt.json").read_text())
    sharp_lf = load_lightfield(gt_dir / gt["sharp_manifest"])
    gt_depth = load_depth(gt_dir / gt["depth_file"])
    eps_gt = np.asarray(gt["eps_gt"], dtype=float)

    est_dir = Path(args.estimate)
    latent = load_image(est_dir / "latent.png")
    d_est = load_depth(est_dir / "depth.pfm")
    eps_est = np.asarray(json.loads((est_dir / "eps.json").read_text())["eps"], dtype=float)

    frames = _gt_frames(gt_dir, gt, sharp_lf.center_view())
    best_psnr, best_ssim, trace = metrics_mod.psnr_ssim_best(latent, frames)
    report = metrics_mod.EvalReport(
        psnr_best=best_psnr,
        ssim_best=best_ssim,
        l1_rel=metrics_mod.l1_rel(d_est, gt_depth),
        epe=metrics_mod.epe(eps_est, gt_depth, eps_gt, sharp_lf.intrinsics),
        frames=trace,
    )
    payload = report.to_dict()
    _write_json(args.output, payload)
    if args.log_json:
        _write_json(args.log_json, payload)
    print(f"psnr_best  {report.psnr_best:10.4f} dB")
    print(f"ssim_best  {report.ssim_best:10.6f}")
    print(f"l1_rel     {report.l1_rel:10.6f}")
    print(f"epe        {report.epe:10.6f} px")
    print(f"wrote {args.output}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfdeblur",
        description="Joint blind deblurring, depth, and camera-motion "
                    "estimation from a blurred 4D light field",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic blurred light field with ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scene", type=str, default="twoplane")
    p.add_argument("--motion", type=str, default="translation")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--blur-px", dest="blur_px", type=float, default=5.0)
    p.add_argument("--frames", type=int, default=5, help="sharp center frames to emit")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--log-json", dest="log_json", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-depth", help="plane-sweep depth from a static light field")
    p.add_argument("-i", "--input", required=True, help="manifest path or directory")
    p.add_argument("-o", "--output", required=True, help="output PFM path")
    p.add_argument("--log-json", dest="log_json", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_init_depth)

    p = sub.add_parser("init-pose", help="RANSAC camera-motion initialization")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--depth", default=None, help="initial depth PFM (plane sweep if omitted)")
    p.add_argument("--kernels", default=None, help="kernel-field JSON to use instead of the estimator")
    p.add_argument("-o", "--output", required=True, help="output eps JSON path")
    p.add_argument("--log-json", dest="log_json", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_init_pose)

    p = sub.add_parser("deblur", help="full pipeline: init + joint estimation")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--oracle-kernels", dest="oracle_kernels", default=None,
                   help="kernel-field JSON bypassing the estimator")
    p.add_argument("--init-eps", dest="init_eps", default=None,
                   help="JSON with {'eps': [6]} bypassing pose initialization")
    p.add_argument("--log-json", dest="log_json", default=None,
                   help="solver JSONL log path (default: <out>/solver_log.jsonl)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("eval", help="metrics of an estimate against synth ground truth")
    p.add_argument("--estimate", required=True, help="deblur output directory")
    p.add_argument("--gt", required=True, help="synth output directory")
    p.add_argument("-o", "--output", default="eval.json")
    p.add_argument("--log-json", dest="log_json", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR if isinstance(exc, ValueError) and "config" in str(exc) else RUNTIME_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
