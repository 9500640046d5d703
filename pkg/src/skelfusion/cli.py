"""Command line interface.

    skelfusion synth --classes 4 --clips 30 --frames 32 --seed 7
    skelfusion hands --manifest data/manifest.json
    skelfusion encode-preview --manifest data/manifest.json --clip c00_000 --set train.fusion.mode=scaled_stack
    skelfusion train --manifest data/manifest.json --config run.yaml
    skelfusion experiment --manifest data/manifest.json --config run.yaml --jobs 2
    skelfusion report --experiments out/experiments

Outputs go below ``--out`` (default: ``$SKELFUSION_OUT`` or ``./skelfusion_out``).
Exit status: 0 success, 1 infrastructure failure, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, dump_run_config, load_run_config
from .core import SkelfusionError
from .encode import MULTI_MODES, compose_sample, encode_sample, save_preview
from .handprep import HandSelectConfig, prepare_hands
from .ingest import generate_synthetic_dataset, load_clip, load_manifest, write_hands_file, write_manifest
from .report import render_report
from .train import ExperimentGrid, clip_arrays, experiment_name, load_summary, run_experiment, train_model

EXIT_OK, EXIT_INFRA, EXIT_USAGE = 0, 1, 2
OUT_ENV = "SKELFUSION_OUT"

log = logging.getLogger("skelfusion")


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "skelfusion_out")


def _run_config(args):
    return load_run_config(args.config, args.set or ())


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir) if args.out_dir else _out_root(args) / "synthetic"
    settings = {"num_classes": args.classes, "clips_per_class": args.clips, "T": args.frames, "seed": args.seed}
    manifest = generate_synthetic_dataset(settings, out_dir)
    print(manifest.path)
    return EXIT_OK


def _hands_job(job):
    manifest_path, clip_id, cfg, dims, out_path = job
    manifest = load_manifest(manifest_path)
    clip = load_clip(manifest, clip_id)
    frames, stats = prepare_hands(clip, cfg, dims=dims, intrinsics=manifest.intrinsics.get(clip.view_id))
    write_hands_file(out_path, clip.raw_detections, frames)
    return clip_id, clip.num_frames, stats.as_dict()


def cmd_hands(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = HandSelectConfig(wrist_dist_threshold=args.threshold, crop_size=args.crop_size)
    out_dir = Path(args.out_dir) if args.out_dir else _out_root(args) / "hands"
    (out_dir / "hands").mkdir(parents=True, exist_ok=True)
    jobs = [(str(manifest.path), c.clip_id, cfg, args.dims, out_dir / "hands" / f"{c.clip_id}.jsonl")
            for c in manifest.clips]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_hands_job, jobs))
    else:
        results = [_hands_job(j) for j in jobs]

    stats = {cid: dict(s, frames=T) for cid, T, s in results}
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")

    # a manifest that points at the original bodies and the processed hands
    doc = json.loads(Path(manifest.path).read_text())
    for c in doc["clips"]:
        c["body_path"] = str((Path(manifest.path).parent / c["body_path"]).resolve())
        c["hands_path"] = f"hands/{c['clip_id']}.jsonl"
    doc["hands"] = {"wrist_dist_threshold": cfg.wrist_dist_threshold, "dims": args.dims}
    write_manifest(out_dir / "manifest.json", doc)

    totals = {k: sum(s[k] for s in stats.values()) for k in ("observed", "filled", "neutral", "discarded")}
    print(out_dir / "manifest.json")
    _print_json({"clips": len(stats), **totals})
    return EXIT_OK


def cmd_encode_preview(args) -> int:
    rc = _run_config(args)
    cfg = rc.train
    manifest = load_manifest(args.manifest)
    ids = {c.clip_id for c in manifest.clips}
    if args.clip not in ids:
        raise ConfigError(f"unknown clip id {args.clip!r}")
    clip = load_clip(manifest, args.clip)
    parts = clip_arrays(clip, manifest, cfg)
    images = encode_sample(*parts, cfg.fusion)
    composed = compose_sample(*parts, cfg.fusion)

    out_dir = Path(args.out_dir) if args.out_dir else _out_root(args) / "previews"
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{args.clip}_{cfg.fusion.mode}"
    files = []
    for i, im in enumerate(images):
        path = out_dir / (f"{stem}.png" if len(images) == 1 else f"{stem}_{i}.png")
        save_preview(im, path)
        files.append(path.name)

    def band_rows(img, names):
        return sum(b - a for n, a, b in img.bands if n in names)

    meta = {
        "clip_id": args.clip,
        "fusion": cfg.to_dict()["fusion"],
        "files": files,
        "images": [{"shape": list(im.data.shape), "bands": [list(b) for b in im.bands]} for im in images],
        "composition": [{"shape": list(im.data.shape), "bands": [list(b) for b in im.bands],
                         "hand_band_rows": band_rows(im, ("right_hand", "left_hand")),
                         "body_fraction": (im.layout_fraction("body")
                                           if any(n == "body" for n, _, _ in im.layout_bands) else None)}
                        for im in composed],
    }
    (out_dir / f"{stem}.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    for f in files:
        print(out_dir / f)
    return EXIT_OK


def cmd_train(args) -> int:
    rc = _run_config(args)
    manifest = load_manifest(args.manifest)
    run_dir = Path(args.run_dir) if args.run_dir else _out_root(args) / "runs" / experiment_name(rc.train)
    run_dir.mkdir(parents=True, exist_ok=True)
    result = train_model(rc.train, manifest, run_dir)
    _print_json({"run_dir": str(run_dir), "status": result.status, "best_epoch": result.best_epoch,
                 "test_mAcc": result.test_mAcc, "test_top1": result.test_top1, "message": result.message})
    return EXIT_OK


def _experiment_configs(rc):
    cfgs = []
    for fam in rc.experiment.families:
        for mode in rc.experiment.modes:
            if fam == "conv_residual" and mode in MULTI_MODES:
                raise ConfigError(f"family conv_residual cannot take the multi-image mode {mode!r}")
            t = rc.train
            cfgs.append(replace(t, fusion=replace(t.fusion, mode=mode), backbone=replace(t.backbone, family=fam)))
    return cfgs


def cmd_experiment(args) -> int:
    rc = _run_config(args)
    cfgs = _experiment_configs(rc)
    manifest = load_manifest(args.manifest)
    root = _out_root(args)
    exp_root = root / "experiments"
    exp_root.mkdir(parents=True, exist_ok=True)
    (root / "config.yaml").write_text(dump_run_config(rc))
    summaries = []
    for cfg in cfgs:
        grid = ExperimentGrid(cfg, rc.experiment.max_lrs, rc.experiment.repeats)
        exp_dir = exp_root / experiment_name(cfg)
        log.info("experiment %s: %d runs", exp_dir.name, len(grid.max_lrs) * grid.repeats)
        summaries.append(run_experiment(grid, manifest, exp_dir, jobs=args.jobs))
    written = render_report(summaries, root / "report")
    _print_json({"experiments": [str(exp_root / experiment_name(c)) for c in cfgs],
                 "failed_runs": sum(s.failures for s in summaries),
                 "report": written})
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.experiments) if args.experiments else _out_root(args) / "experiments"
    dirs = sorted(p for p in root.iterdir() if (p / "index.json").is_file()) if root.is_dir() else []
    if not dirs:
        raise ConfigError(f"no experiment directories with index.json under {root}")
    summaries = [load_summary(d) for d in dirs]
    out_dir = Path(args.out_dir) if args.out_dir else _out_root(args) / "report"
    _print_json(render_report(summaries, out_dir))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def add_globals(p, defaults):
        # accepted before or after the subcommand; the subparser copies must not reset them
        kw = (lambda v: {"default": v}) if defaults else (lambda v: {"default": argparse.SUPPRESS})
        p.add_argument("--out", help=f"output root (default: ${OUT_ENV} or ./skelfusion_out)", **kw(None))
        p.add_argument("-v", "--verbose", action="count", **kw(0))
        p.add_argument("--jobs", type=int, help="worker processes for independent work items", **kw(1))

    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, defaults=False)

    def with_config(p):
        p.add_argument("--config", help="YAML or JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-key override, e.g. train.fusion.mode=scaled_stack (repeatable)")

    parser = argparse.ArgumentParser(prog="skelfusion", description="Skeleton image encoding and fusion pipeline.")
    add_globals(parser, defaults=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--clips", type=int, default=30, help="clips per class")
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("hands", parents=[common], help="select, fill and align hands for every clip")
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=HandSelectConfig.wrist_dist_threshold,
                   help="max wrist distance in pixels")
    p.add_argument("--crop-size", type=int, default=HandSelectConfig.crop_size)
    p.add_argument("--dims", type=int, choices=(2, 3), default=3)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_hands)

    p = sub.add_parser("encode-preview", parents=[common], help="write the encoded image(s) of one clip")
    p.add_argument("--manifest", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out-dir")
    with_config(p)
    p.set_defaults(func=cmd_encode_preview)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir")
    with_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", parents=[common], help="learning-rate grid per fusion mode, then report")
    p.add_argument("--manifest", required=True)
    with_config(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", parents=[common], help="render plots and tables from experiment directories")
    p.add_argument("--experiments", help="directory holding experiment directories")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except SkelfusionError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError, MemoryError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
