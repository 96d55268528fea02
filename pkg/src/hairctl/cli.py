"""Command-line entry point: ``hairctl <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .errors import HairctlError, ValidationError
from .scenario import EffectSpec, ScenarioConfig

log = logging.getLogger("hairctl")

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def load_config(args) -> ScenarioConfig:
    from .io import parse_scenario

    cfg = parse_scenario(args.scenario) if args.scenario else ScenarioConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _finish_bundle(args, cfg, geometry, controls):
    from .io import export_bundle
    from .report import write_report

    manifest = export_bundle(controls, cfg, args.out,
                             geometry=geometry if args.dump_geometry else None,
                             threads=args.threads)
    print(f"wrote {manifest['frame_count']} frames to {args.out} "
          f"(scenario {manifest['scenario_hash']})")
    if args.report:
        csv_path, png_path = write_report(controls, Path(args.out) / "report")
        print(f"report: {csv_path} {png_path}")


def cmd_simulate(args):
    from .physics import save_geometry
    from .scenario import scenario_geometry

    cfg = load_config(args)
    _, seq = scenario_geometry(cfg, threads=args.threads)
    out = Path(args.out)
    path = out if out.suffix == ".hseq" else out / "geometry.hseq"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_geometry(seq, path)
    print(f"wrote {len(seq)} frames of {len(seq.counts)} strands to {path}")


def cmd_render(args):
    from .io import export_frames
    from .physics import GeometrySequence, load_geometry
    from .raster import extract_control_sequence
    from .scenario import scenario_poses, scenario_trajectory

    cfg = load_config(args)
    seq = load_geometry(args.geometry)
    poses = scenario_poses(cfg)
    if len(poses) != len(seq):
        raise ValidationError("geometry", f"{len(seq)} frames but the scenario describes {len(poses)}")
    rig = cfg.rig.build()
    seq = GeometrySequence(seq.frames, seq.counts, poses)
    controls = extract_control_sequence(seq, rig, scenario_trajectory(cfg), cfg.physics.fps,
                                        args.threads)
    manifest = export_frames(controls, args.out, threads=args.threads)
    print(f"wrote {manifest['frame_count']} frames to {args.out}")


def _run(args, cfg):
    from .scenario import run_pipeline

    t0 = time.perf_counter()
    geometry, controls = run_pipeline(cfg, threads=args.threads)
    log.info("pipeline finished in %.1f s", time.perf_counter() - t0)
    _finish_bundle(args, cfg, geometry, controls)


def cmd_pipeline(args):
    _run(args, load_config(args))


def cmd_bullet_time(args):
    cfg = load_config(args)
    keys = cfg.effect.azimuth_keyframes if cfg.effect.kind == "bullet_time" else None
    freeze = args.freeze_frame
    if freeze is None and cfg.effect.kind == "bullet_time":
        freeze = cfg.effect.freeze_frame
    if freeze is not None and not 0 <= freeze < cfg.frames:
        raise ValidationError("freeze_frame", f"must be in [0, {cfg.frames})")
    _run(args, replace(cfg, effect=EffectSpec("bullet_time", freeze, keys)))


def cmd_cinemagraph(args):
    cfg = load_config(args)
    _run(args, replace(cfg, effect=EffectSpec("cinemagraph")))


def cmd_metrics(args):
    from .io import read_png
    from .metrics import psnr, ssim

    try:
        a, b = read_png(args.a), read_png(args.b)
    except OSError as exc:
        raise OSError(f"cannot read image: {exc}") from exc
    fn = psnr if args.metric == "psnr" else ssim
    print(f"{fn(a, b):.6f}")


def cmd_verify(args):
    from .io import verify_bundle

    problems = verify_bundle(args.bundle)
    for p in problems:
        print(p)
    if problems:
        return EXIT_IO
    print("ok")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON (defaults used when omitted)")
    common.add_argument("--seed", type=_u64, help="override wig and wind seeds")
    common.add_argument("--threads", type=_positive, default=1,
                        help="worker threads; never changes output bytes")
    common.add_argument("-v", "--verbose", action="store_true")

    bundle = argparse.ArgumentParser(add_help=False)
    bundle.add_argument("--out", required=True, help="bundle directory")
    bundle.add_argument("--dump-geometry", action="store_true",
                        help="include the simulated strands as geometry.hseq")
    bundle.add_argument("--report", action="store_true",
                        help="also write report/report.csv and report/report.png")

    p = argparse.ArgumentParser(prog="hairctl",
                                description="Physics-driven hair control frames for video generation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="scenario -> HSEQ geometry")
    s.add_argument("--out", required=True, help="directory or .hseq path")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("render", parents=[common], help="HSEQ + scenario -> PNG frames")
    s.add_argument("--geometry", required=True, help="HSEQ file from `simulate`")
    s.add_argument("--out", required=True, help="frame directory")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("pipeline", parents=[common, bundle], help="scenario -> control bundle")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("bullet-time", parents=[common, bundle],
                       help="freeze the hair and orbit the camera")
    s.add_argument("--freeze-frame", type=int, help="0-based frame to hold (default: middle)")
    s.set_defaults(func=cmd_bullet_time)

    s = sub.add_parser("cinemagraph", parents=[common, bundle],
                       help="clip followed by its reversal, as a seamless loop")
    s.set_defaults(func=cmd_cinemagraph)

    s = sub.add_parser("metrics", help="compare two PNG images")
    s.add_argument("metric", choices=("psnr", "ssim"))
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("verify", help="check a bundle against its manifest")
    s.add_argument("bundle")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors are validation errors
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        rc = args.func(args)
    except HairctlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (IndexError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
