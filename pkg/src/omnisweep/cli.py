"""Command-line entry point: ``omnisweep <command> [<subcommand>] [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Heavy modules are imported inside the handlers so ``--threads`` can size the
numba thread pool before it starts.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, EmptyEvaluationError, InvalidArgumentError, TableMismatchError

log = logging.getLogger("omnisweep")

CAMERA_FILES = [f"cam{i}.png" for i in range(6)]


class UsageError(Exception):
    pass


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    if "numba" in sys.modules:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    else:
        os.environ["NUMBA_NUM_THREADS"] = str(n)


def _grid_arg(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _load_rig(path):
    from .geometry import load_rig
    from .suite import bundled_rig
    if path is None:
        return bundled_rig("default")
    if str(path).startswith("bundled:"):
        return bundled_rig(str(path).split(":", 1)[1])
    if not Path(path).exists():
        raise ConfigError("rig", f"{path} not found")
    return load_rig(path)


def _load_scene(path):
    from .suite import bundled_scene
    from .synth import load_scene
    if str(path).startswith("bundled:"):
        return bundled_scene(str(path).split(":", 1)[1])
    if not Path(path).exists():
        raise ConfigError("scene", f"{path} not found")
    return load_scene(path)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_cameras(in_dir):
    from .io import read_image
    src = Path(in_dir)
    images = []
    for i, name in enumerate(CAMERA_FILES):
        p = src / name
        if not p.exists():
            raise InvalidArgumentError(f"camera {i}: {p} not found")
        images.append(read_image(p))
    return images


def _manifest(args, config: dict, inputs: dict, outputs: dict, started: str):
    from .io import RunManifest, timestamp, write_manifest
    config = dict(config, argv=args.argv, seed=args.seed)
    m = RunManifest(args.command_name, config, inputs, outputs, started=started, finished=timestamp())
    return write_manifest(args.out, m)


# ---------------------------------------------------------------------------
# handlers


def cmd_estimate(args) -> int:
    import numpy as np

    from .io import timestamp, write_depth_png, write_pfm, write_ply
    from .matching import depth_to_pointcloud
    from .pipeline import PipelineConfig, band_intensity, estimate_depth
    from .sweep import load_tables

    started = timestamp()
    rig = _load_rig(args.rig)
    images = _read_cameras(args.inp)
    config = PipelineConfig(stride=args.stride, patch=args.patch, levels=args.levels, radius=args.radius,
                            mode=args.mode, beta=args.beta)
    tables = None
    if args.tables:
        grid, hyp, tables, _ = load_tables(args.tables, rig)
        if len(tables) != 2:
            raise TableMismatchError("estimate needs combined (two-table) mapping tables")
    est = estimate_depth(rig, images, config, tables)
    out = _out_dir(args.out)
    write_pfm(out / "depth.pfm", est.depth.depths)
    write_depth_png(out / "depth.png", est.depth.depths)
    cloud = depth_to_pointcloud(est.depth, est.grid,
                                band_intensity(rig, images, est.depth, est.hyp, config.stride))
    write_ply(out / "cloud.ply", cloud, binary=not args.ascii)
    valid = est.depth.valid
    log.info("valid pixels %d / %d, median depth %.3f m", valid.sum(), valid.size,
             float(np.median(est.depth.depths[valid])) if valid.any() else float("nan"))
    for stage, sec in est.timings.items():
        log.debug("%-10s %.3f s", stage, sec)
    _manifest(args, {"rig_hash": rig.fingerprint(), "grid": [est.grid.width, est.grid.height],
                     "crop_rows": list(rig.crop_rows), "D": len(est.hyp), "pipeline": config.to_dict()},
              {"images": str(args.inp), "rig": str(args.rig), "tables": args.tables},
              {"depth_pfm": "depth.pfm", "depth_png": "depth.png", "cloud": "cloud.ply"}, started)
    print(out / "depth.pfm")
    return 0


def cmd_build_tables(args) -> int:
    from .io import timestamp
    from .sweep import (build_sphere_grid, build_table_combined, build_table_conventional,
                        sample_hypotheses, save_tables)

    started = timestamp()
    rig = _load_rig(args.rig)
    width, height = args.grid or (rig.sphere_width, rig.sphere_height)
    rows = None if args.full else (rig.crop_rows if args.grid is None else None)
    grid = build_sphere_grid(width, height, rows)
    hyp = sample_hypotheses(args.min_depth or rig.min_depth, args.max_depth or rig.max_depth,
                            args.d or rig.num_hypotheses)
    if args.method == "conventional":
        tables, plan = build_table_conventional(rig, grid, hyp, args.stride)
    else:
        tables, plan = build_table_combined(rig, grid, hyp, args.stride), None
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_tables(path, rig, grid, hyp, tables, plan)
    log.info("%d tables, op_count %d", len(tables), sum(t.op_count for t in tables))
    args.out = str(path.parent)
    _manifest(args, {"rig_hash": rig.fingerprint(), "grid": [width, height], "rows": list(grid.rows),
                     "D": len(hyp), "stride": args.stride, "method": args.method},
              {"rig": str(args.rig)}, {"tables": path.name}, started)
    print(path)
    return 0


def cmd_pseudo_label(args) -> int:
    from .io import load_disparities, save_disparities, timestamp, write_depth_png, write_image, write_pfm
    from .pipeline import band_grid
    from .teacher import VirtualPinhole, pseudo_label

    started = timestamp()
    rig = _load_rig(args.rig)
    images = _read_cameras(args.inp)
    imported = load_disparities(args.import_disparity, rig.fingerprint()) if args.import_disparity else None
    grid = band_grid(rig)
    vp = VirtualPinhole(args.pinhole, args.pinhole)
    label, pairs, disps = pseudo_label(rig, images, grid, vp=vp, patch=args.patch, disparities=imported)
    out = _out_dir(args.out)
    write_pfm(out / "label.pfm", label.depth)
    write_depth_png(out / "label.png", label.depth)
    write_image(out / "support.png", label.support_count / 6.0)
    outputs = {"label_pfm": "label.pfm", "label_png": "label.png", "support": "support.png"}
    if args.export_disparity:
        save_disparities(out / "disparity", pairs, disps, rig.fingerprint())
        outputs["disparity"] = "disparity/"
    log.info("support >= 1 on %.2f%% of the band", 100.0 * label.valid.mean())
    _manifest(args, {"rig_hash": rig.fingerprint(), "grid": [grid.width, grid.height],
                     "crop_rows": list(rig.crop_rows), "pinhole": args.pinhole, "patch": args.patch},
              {"images": str(args.inp), "rig": str(args.rig), "import_disparity": args.import_disparity},
              outputs, started)
    print(out / "label.pfm")
    return 0


def cmd_render(args) -> int:
    from .io import timestamp, write_image, write_pfm
    from .pipeline import band_grid
    from .synth import render_groundtruth_erp, render_rig

    started = timestamp()
    rig = _load_rig(args.rig)
    scene = _load_scene(args.scene)
    images = render_rig(scene, rig, args.supersample, args.seed)
    out = _out_dir(args.out)
    for name, img in zip(CAMERA_FILES, images):
        write_image(out / name, img)
    gt = render_groundtruth_erp(scene, band_grid(rig))
    write_pfm(out / "gt.pfm", gt.depths)
    _manifest(args, {"rig_hash": rig.fingerprint(), "scene": scene.name, "supersample": args.supersample,
                     "crop_rows": list(rig.crop_rows)},
              {"scene": str(args.scene), "rig": str(args.rig)},
              {"images": CAMERA_FILES, "groundtruth": "gt.pfm"}, started)
    print(out)
    return 0


def _find_depth(path, names) -> Path:
    p = Path(path)
    if p.is_dir():
        for n in names:
            if (p / n).exists():
                return p / n
        raise InvalidArgumentError(f"{p}: none of {', '.join(names)} found")
    if not p.exists():
        raise InvalidArgumentError(f"{p} not found")
    return p


def _read_depth_file(p: Path):
    from .io import read_depth_png, read_pfm
    return read_pfm(p) if p.suffix.lower() == ".pfm" else read_depth_png(p)


def cmd_metrics(args) -> int:
    from .metrics import evaluate, report_csv, report_text

    pred_path = _find_depth(args.pred, ["depth.pfm", "label.pfm", "depth.png", "label.png"])
    gt_path = _find_depth(args.gt, ["gt.pfm", "depth.pfm"])
    rep = evaluate(_read_depth_file(pred_path), _read_depth_file(gt_path), args.cap)
    rows = [(args.method, args.dataset, rep)]
    sys.stdout.write(report_text(rows))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report_csv(rows))
    return 0


def cmd_bench(args) -> int:
    from .bench import METHODS, bench_pipeline, bench_sweep, results_csv
    from .pipeline import PipelineConfig
    from .sweep import build_sphere_grid, sample_hypotheses

    rig = _load_rig(args.rig)
    results = []
    if args.kind == "sweep":
        width, height = args.grid
        grid = build_sphere_grid(width, height)
        hyp = sample_hypotheses(rig.min_depth, rig.max_depth, args.d)
        methods = METHODS if args.method == "both" else (args.method,)
        for m in methods:
            results.append(bench_sweep(rig, grid, hyp, m, args.runs, args.stride, args.channels, args.seed))
    else:
        if args.scene is None:
            raise UsageError("bench pipeline needs --scene")
        from dataclasses import replace
        rig = replace(rig, num_hypotheses=args.d) if args.d else rig
        config = PipelineConfig(stride=args.stride)
        results.append(bench_pipeline(rig, _load_scene(args.scene), config, args.runs, seed=args.seed))
    text = results_csv(results)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    if args.kind == "sweep" and len(results) == 2:
        log.info("combined speedup %.2fx", results[0].wall_time / results[1].wall_time)
    return 0


def cmd_replay(args) -> int:
    """Re-run the command recorded in a manifest, writing to a new directory."""
    from .io import read_manifest
    m = read_manifest(args.manifest)
    argv = list(m.config.get("argv") or [])
    if not argv:
        raise ConfigError("argv", "manifest does not record a command line")
    for flag in ("--out", "--output"):
        if flag in argv:
            argv[argv.index(flag) + 1] = args.out
    return main(argv)


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--rig", help="rig YAML file, or bundled:<default|suite|mini> (default: bundled:default)")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("--threads", type=int, help="worker threads for compiled kernels (default: all cores)")
    p.add_argument("--verbose", "-v", action="count", default=0, help="more logging (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omnisweep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="depth panorama from six fisheye images")
    _common(p)
    p.add_argument("--in", dest="inp", required=True, help="directory holding cam0.png ... cam5.png")
    p.add_argument("--tables", help="combined mapping-table cache to reuse")
    p.add_argument("--stride", type=int, default=2, help="descriptor stride in pixels (default 2)")
    p.add_argument("--patch", type=int, default=5, help="descriptor patch size, odd (default 5)")
    p.add_argument("--levels", type=int, default=3, help="aggregation pyramid levels (default 3)")
    p.add_argument("--radius", type=int, default=2, help="aggregation box radius (default 2)")
    p.add_argument("--mode", choices=("soft", "wta"), default="soft", help="depth readout (default soft)")
    p.add_argument("--beta", type=float, default=16.0, help="soft readout sharpness (default 16)")
    p.add_argument("--ascii", action="store_true", help="write an ASCII PLY instead of binary")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="mapping-table utilities")
    ssub = p.add_subparsers(dest="subcommand", required=True)
    q = ssub.add_parser("build-tables", help="build and cache mapping tables")
    _common(q, out_required=False)
    q.add_argument("--output", required=True, help="table cache file to write")
    q.add_argument("--grid", type=_grid_arg, help="sphere grid WxH (default: rig grid, cropped band)")
    q.add_argument("--full", action="store_true", help="build the full sphere instead of the crop band")
    q.add_argument("--d", type=int, help="number of hypotheses (default: rig)")
    q.add_argument("--min-depth", type=float, help="nearest hypothesis in meters (default: rig)")
    q.add_argument("--max-depth", type=float, help="farthest hypothesis in meters (default: rig)")
    q.add_argument("--stride", type=int, default=2, help="feature stride (default 2)")
    q.add_argument("--method", choices=("combined", "conventional"), default="combined",
                   help="table layout (default combined)")
    q.set_defaults(func=cmd_build_tables)

    p = sub.add_parser("teacher", help="pseudo-label generation")
    tsub = p.add_subparsers(dest="subcommand", required=True)
    q = tsub.add_parser("pseudo-label", help="rectify, match and fuse the six adjacent pairs")
    _common(q)
    q.add_argument("--in", dest="inp", required=True, help="directory holding cam0.png ... cam5.png")
    q.add_argument("--import-disparity", help="directory with disparity.json and per-pair PFMs")
    q.add_argument("--export-disparity", action="store_true", help="also write the per-pair disparities")
    q.add_argument("--pinhole", type=int, default=640, help="virtual pinhole size in pixels (default 640)")
    q.add_argument("--patch", type=int, default=7, help="block-matching window, odd (default 7)")
    q.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("synth", help="synthetic scenes")
    ysub = p.add_subparsers(dest="subcommand", required=True)
    q = ysub.add_parser("render", help="render six fisheye views and ERP ground truth")
    _common(q)
    q.add_argument("--scene", required=True, help="scene YAML file, or bundled:<name>")
    q.add_argument("--supersample", type=int, default=2, help="samples per pixel axis (default 2)")
    q.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="evaluation")
    esub = p.add_subparsers(dest="subcommand", required=True)
    q = esub.add_parser("metrics", help="depth metrics of a prediction against ground truth")
    q.add_argument("--pred", required=True, help="prediction file or directory")
    q.add_argument("--gt", required=True, help="ground-truth file or directory")
    q.add_argument("--cap", type=float, default=10.0, help="ignore ground truth beyond this depth (default 10)")
    q.add_argument("--method", default="omnisweep", help="method label for the report")
    q.add_argument("--dataset", default="-", help="dataset label for the report")
    q.add_argument("--out", help="CSV report to write")
    q.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)
    q.add_argument("--threads", type=int, help="worker threads (unused, accepted for uniformity)")
    q.add_argument("--verbose", "-v", action="count", default=0, help="more logging (repeatable)")
    q.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="timing harness")
    bsub = p.add_subparsers(dest="kind", required=True)
    for kind, text in (("sweep", "warp stage, conventional vs combined"),
                       ("pipeline", "per-stage pipeline timing")):
        q = bsub.add_parser(kind, help=text)
        _common(q, out_required=False)
        q.add_argument("--d", type=int, default=64 if kind == "sweep" else None,
                       help="number of hypotheses" + (" (default 64)" if kind == "sweep" else " (default: rig)"))
        q.add_argument("--grid", type=_grid_arg, default=(960, 480), help="sphere grid WxH (default 960x480)")
        q.add_argument("--runs", type=int, default=5, help="timed runs after one warm-up, >= 3 (default 5)")
        q.add_argument("--stride", type=int, default=1 if kind == "sweep" else 2, help="feature stride")
        if kind == "sweep":
            q.add_argument("--method", choices=("both", "conventional", "combined"), default="both",
                           help="which sweep to time (default both)")
            q.add_argument("--channels", type=int, default=1, help="feature channels (default 1)")
        else:
            q.add_argument("--scene", help="scene YAML file, or bundled:<name>")
        q.set_defaults(func=cmd_bench, command_name=f"bench {kind}")
    p.description = "Writes CSV to --out (a file) and stdout."

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("--manifest", required=True, help="manifest.json or its directory")
    p.add_argument("--out", required=True, help="new output directory")
    p.set_defaults(func=cmd_replay, verbose=0, threads=None)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    if not hasattr(args, "command_name"):
        args.command_name = " ".join(x for x in (args.command, getattr(args, "subcommand", None)) if x)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        _set_threads(getattr(args, "threads", None))
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InvalidArgumentError, TableMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EmptyEvaluationError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        log.debug("traceback", exc_info=True)
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
