"""Command-line front door.

One subcommand per pipeline stage plus `run-all`, which goes from the
three raw sources to the fused collection and filtered ground truth in
one call. Every dataset flows through the canonical JSON form, so equal
inputs produce byte-equal outputs regardless of thread count.

Exit codes: 0 success, 1 validation or data failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional

from .dataset import Dataset, DatasetError, load_dataset, save_dataset, validate_dataset
from .losses import LossConfig, gradient_check_report
from .pipeline import (
    Keyframe,
    PipelineConfig,
    build_track_dataset,
    clean_dataset,
    drop_low_iou_instances,
    drop_missing_instances,
    fuse_sources,
    run_pipeline,
    select_keyframes_dataset,
)
from .scoring import assign_tracklets
from .synth import default_profiles, gen_video, make_three_sources, save_frames, scene_spec_from_json
from . import reports

__all__ = ["main"]


def _write_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def _named_source(text: str) -> tuple[str, str]:
    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {text!r}")
    return name, path


def _configs(path: Optional[str]) -> tuple[PipelineConfig, LossConfig]:
    if path is None:
        return PipelineConfig(), LossConfig()
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError("config must be a JSON object")
    unknown = set(obj) - {"pipeline", "loss"}
    if unknown:
        raise ValueError(f"unknown config sections {sorted(unknown)}")
    for section in ("pipeline", "loss"):
        if section in obj and not isinstance(obj[section], dict):
            raise ValueError(f"config section {section!r} must be an object")
    return PipelineConfig(**obj.get("pipeline", {})), LossConfig(**obj.get("loss", {}))


def _cmd_validate(args, pcfg, lcfg) -> int:
    ds = load_dataset(args.infile, validate=False)
    violations = validate_dataset(ds)
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s)", file=sys.stderr)
        return 1
    print(f"ok: {len(ds.videos)} video(s), {len(ds.annotations)} annotation(s)")
    return 0


def _cmd_synth(args, pcfg, lcfg) -> int:
    with open(args.spec) as fh:
        spec = scene_spec_from_json(json.load(fh))
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    os.makedirs(args.outdir, exist_ok=True)
    gt, frames = gen_video(spec)
    hqsam, boxvis, track = make_three_sources(gt, default_profiles(spec.seed))
    save_dataset(gt, os.path.join(args.outdir, "gt.json"))
    save_dataset(hqsam, os.path.join(args.outdir, "hqsam.json"))
    save_dataset(boxvis, os.path.join(args.outdir, "boxvis.json"))
    save_dataset(track, os.path.join(args.outdir, "track.json"))
    save_frames(frames, os.path.join(args.outdir, "frames.bin"))
    print(f"wrote gt + 3 sources + frames to {args.outdir}")
    return 0


def _cmd_assign(args, pcfg, lcfg) -> int:
    pred = load_dataset(args.pred)
    gt = load_dataset(args.gt)
    aux = load_dataset(args.aux) if args.aux else gt
    records = []
    for video in gt.videos:
        predicted = {
            a.id: [a.mask_at(t) for t in range(video.length)]
            for a in pred.annotations_in(video.id)
        }
        gt_boxes = {
            a.id: [a.box_at(t) for t in range(video.length)]
            for a in gt.annotations_in(video.id)
        }
        aux_masks = {
            a.id: [aux_a.mask_at(t) for t in range(video.length)]
            for a in gt.annotations_in(video.id)
            if (aux_a := aux.annotation(video.id, a.id)) is not None
        }
        for missing in set(gt_boxes) - set(aux_masks):
            aux_masks[missing] = [None] * video.length
        result = assign_tracklets(predicted, gt_boxes, aux_masks, pcfg.min_score)
        records.append(
            {
                "video_id": video.id,
                "pairs": [
                    {"pred_id": p, "gt_id": g, "score": result.pair_scores[p]}
                    for p, g in sorted(result.pairs.items())
                ],
                "unmatched_pred": sorted(result.unmatched_predicted),
                "unmatched_gt": sorted(result.unmatched_gt),
            }
        )
    _write_json({"videos": records}, args.out)
    return 0


def _cmd_doob(args, pcfg, lcfg) -> int:
    pseudo = load_dataset(args.infile)
    gt = load_dataset(args.gt)
    save_dataset(clean_dataset(pseudo, gt, pcfg.doob_margin, args.threads), args.out)
    return 0


def _keyframes_json(keyframes: dict[tuple[int, int], list[Keyframe]]) -> dict:
    return {
        "keyframes": [
            {
                "video_id": vid,
                "instance_id": iid,
                "frames": [{"index": kf.index, "score": kf.score} for kf in kfs],
            }
            for (vid, iid), kfs in sorted(keyframes.items())
        ]
    }


def _keyframes_from_json(obj: dict) -> dict[tuple[int, int], list[Keyframe]]:
    out = {}
    for rec in obj["keyframes"]:
        out[(rec["video_id"], rec["instance_id"])] = [
            Keyframe(index=f["index"], score=f["score"]) for f in rec["frames"]
        ]
    return out


def _cmd_keyframes(args, pcfg, lcfg) -> int:
    boxvis = load_dataset(args.boxvis)
    hqsam = load_dataset(args.hqsam)
    gt = load_dataset(args.gt)
    kfs = select_keyframes_dataset(boxvis, hqsam, gt, pcfg)
    _write_json(_keyframes_json(kfs), args.out)
    return 0


def _cmd_propagate(args, pcfg, lcfg) -> int:
    seeds = load_dataset(args.seeds)
    gt = load_dataset(args.gt)
    with open(args.keyframes) as fh:
        kfs = _keyframes_from_json(json.load(fh))
    save_dataset(build_track_dataset(seeds, gt, kfs, threads=args.threads), args.out)
    return 0


def _cmd_fuse(args, pcfg, lcfg) -> int:
    hqsam = load_dataset(args.hqsam)
    boxvis = load_dataset(args.boxvis)
    track = load_dataset(args.track)
    gt = load_dataset(args.gt)
    save_dataset(fuse_sources(hqsam, boxvis, track, gt, pcfg, args.threads), args.out)
    return 0


def _cmd_filter_gt(args, pcfg, lcfg) -> int:
    gt = load_dataset(args.gt)
    pseudo = load_dataset(args.pseudo)
    if not args.missing and args.ria is None:
        print("error: choose --missing and/or --ria TAU", file=sys.stderr)
        return 2
    out = gt
    if args.missing:
        out = drop_missing_instances(out, pseudo, pcfg.min_score)
    if args.ria is not None:
        out = drop_low_iou_instances(out, pseudo, args.ria, pcfg.min_score)
    save_dataset(out, args.out)
    return 0


def _cmd_stats(args, pcfg, lcfg) -> int:
    if not (args.hist or args.coverage or args.tube_miou):
        print("error: choose at least one of --hist --coverage --tube-miou", file=sys.stderr)
        return 2
    gt = load_dataset(args.gt)
    sources = [(name, load_dataset(path)) for name, path in args.source]
    csv_mode = args.format == "csv"
    sections: list[str] = []
    if args.hist:
        bins = tuple(args.bins) if args.bins else reports.DEFAULT_BINS
        for name, ds in sources:
            h = reports.iou_histogram(ds, gt, bins)
            body = reports.histogram_csv(h) if csv_mode else reports.histogram_table(h)
            sections.append(f"# histogram {name}\n{body}")
    if args.coverage:
        r = reports.coverage_report([ds for _, ds in sources], gt, [n for n, _ in sources])
        sections.append("# coverage\n" + (reports.coverage_csv(r) if csv_mode else reports.coverage_table(r)))
    if args.tube_miou:
        for name, ds in sources:
            r = reports.tube_miou(ds, gt, pcfg.min_score)
            body = reports.tube_csv(r) if csv_mode else reports.tube_table(r)
            sections.append(f"# tube-miou {name}\n{body}")
    text = "\n".join(sections)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return 0


def _cmd_losscheck(args, pcfg, lcfg) -> int:
    rows = gradient_check_report(
        seed=args.seed if args.seed is not None else 0,
        trials=args.trials,
        size=args.size,
    )
    width = max(len(name) for name, _, _ in rows)
    for name, err, ok in rows:
        print(f"{name.ljust(width)}  {err:.3e}  {'pass' if ok else 'FAIL'}")
    return 0 if all(ok for _, _, ok in rows) else 1


def _cmd_run_all(args, pcfg, lcfg) -> int:
    gt = load_dataset(args.gt)
    hqsam = load_dataset(args.hqsam)
    boxvis = load_dataset(args.boxvis)
    track = load_dataset(args.track) if args.track else None
    result = run_pipeline(gt, hqsam, boxvis, pcfg, track=track, threads=args.threads)
    os.makedirs(args.outdir, exist_ok=True)
    save_dataset(result.hqsam_clean, os.path.join(args.outdir, "hqsam_clean.json"))
    save_dataset(result.boxvis_clean, os.path.join(args.outdir, "boxvis_clean.json"))
    _write_json(_keyframes_json(result.keyframes), os.path.join(args.outdir, "keyframes.json"))
    save_dataset(result.track, os.path.join(args.outdir, "track.json"))
    save_dataset(result.fused, os.path.join(args.outdir, "fused.json"))
    save_dataset(result.gt_filtered, os.path.join(args.outdir, "gt_filtered.json"))
    print(f"wrote 6 files to {args.outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskpipe",
        description="Pseudo-mask pipeline tools: synthesis, cleanup, fusion, filters, stats.",
    )
    parser.add_argument("--config", help="JSON file with pipeline/loss settings")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    parser.add_argument("--seed", type=int, default=None, help="seed override where applicable")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="schema-check a dataset file")
    p.add_argument("infile")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("spec", help="scene spec JSON")
    p.add_argument("outdir")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("assign", help="match predicted tracklets to gt instances")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--aux", help="reference masks; defaults to the gt masks")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_assign)

    p = sub.add_parser("doob", help="remove cross-instance overlaps and clip to boxes")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_doob)

    p = sub.add_parser("keyframes", help="pick per-instance keyframes")
    p.add_argument("--boxvis", required=True)
    p.add_argument("--hqsam", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_keyframes)

    p = sub.add_parser("propagate", help="propagate seed masks from keyframes")
    p.add_argument("--seeds", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--keyframes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_propagate)

    p = sub.add_parser("fuse", help="pick the best-supported mask per frame")
    p.add_argument("--hqsam", required=True)
    p.add_argument("--boxvis", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("filter-gt", help="drop unmatched or low-overlap gt instances")
    p.add_argument("--gt", required=True)
    p.add_argument("--pseudo", required=True)
    p.add_argument("--missing", action="store_true", help="drop gt without a counterpart")
    p.add_argument("--ria", type=float, default=None, metavar="TAU",
                   help="drop paired gt below this tube IoU")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter_gt)

    p = sub.add_parser("stats", help="IoU histogram, coverage, tube IoU reports")
    p.add_argument("--gt", required=True)
    p.add_argument("--source", type=_named_source, action="append", required=True,
                   metavar="NAME=PATH")
    p.add_argument("--hist", action="store_true")
    p.add_argument("--coverage", action="store_true")
    p.add_argument("--tube-miou", dest="tube_miou", action="store_true")
    p.add_argument("--bins", type=float, nargs="+", help="histogram bin edges")
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("losscheck", help="finite-difference check of the loss gradients")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--size", type=int, default=12)
    p.set_defaults(func=_cmd_losscheck)

    p = sub.add_parser("run-all", help="full pipeline: cleanup, keyframes, track, fuse, filter")
    p.add_argument("--gt", required=True)
    p.add_argument("--hqsam", required=True)
    p.add_argument("--boxvis", required=True)
    p.add_argument("--track", help="external track collection; replaces propagation")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_run_all)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        pcfg, lcfg = _configs(args.config)
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, pcfg, lcfg)
    except (DatasetError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
