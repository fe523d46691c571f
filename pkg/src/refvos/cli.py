"""Command line entry point: ``refvos run|evaluate|visualize|fuse|make-synthetic``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from refvos.dataset import ResultsLayout, load_meta, read_mask_png, write_mask_png
from refvos.errors import RefVOSError
from refvos.fusion import ratio_to_threshold
from refvos.masks import VoteGrid, accumulate, threshold
from refvos.metrics import BoundaryParams, evaluate, write_report_csv

log = logging.getLogger("refvos")


def cmd_run(args) -> int:
    from refvos.pipeline import load_config, run_pipeline, write_run_report

    cfg = load_config(args.config)
    if args.out is not None:
        cfg = replace(cfg, output=ResultsLayout(Path(args.out).resolve(), cfg.output.palette))
    if args.parallelism is not None:
        cfg = replace(cfg, parallelism=args.parallelism)
    meta = load_meta(args.meta)
    result = run_pipeline(cfg, meta, args.frames)
    report = Path(args.report) if args.report else cfg.output.root / "run_report.jsonl"
    write_run_report(result.records, report)
    log.info("wrote results to %s, run report to %s", cfg.output.root, report)
    if result.failed_units:
        for vid, group in result.failed_units:
            log.error("failed unit: %s %s", vid, group)
        return 1
    return 0


def cmd_evaluate(args) -> int:
    meta = load_meta(args.meta)
    rep = evaluate(
        ResultsLayout(Path(args.pred)),
        ResultsLayout(Path(args.gt)),
        meta,
        BoundaryParams(args.tolerance_ratio),
        aggregation=args.aggregation,
        workers=args.workers,
    )
    write_report_csv(rep, args.report)
    if not args.no_figure:
        from refvos.visualize import plot_scores

        fig_path = Path(args.figure) if args.figure else Path(args.report).with_suffix(".png")
        plot_scores(rep, fig_path)
    g = rep.global_score
    print(f"J={g.j_mean:.4f} F={g.f_mean:.4f} J&F={g.jf:.4f} ({rep.aggregation}-weighted, {len(rep.rows)} sequences)")
    return 0


def cmd_visualize(args) -> int:
    from refvos.visualize import render_overlays

    paths = render_overlays(ResultsLayout(Path(args.results)), args.frames, args.out, alpha=args.alpha)
    log.info("wrote %d overlays to %s", len(paths), args.out)
    return 0


def cmd_fuse(args) -> int:
    dirs = [Path(d) for d in args.dirs]
    rel_sets = [sorted(p.relative_to(d) for p in d.rglob("*.png")) for d in dirs]
    for d, rels in zip(dirs[1:], rel_sets[1:]):
        if rels != rel_sets[0]:
            raise RefVOSError(f"{d} does not hold the same mask files as {dirs[0]}")
    thr = ratio_to_threshold(args.thr_ratio, len(dirs))
    out = Path(args.out)
    for rel in rel_sets[0]:
        masks = [read_mask_png(d / rel) for d in dirs]
        grid = VoteGrid.like(masks[0])
        for m in masks:
            accumulate(grid, m)
        write_mask_png(threshold(grid, thr), out / rel)
    log.info("fused %d masks from %d inputs at threshold %d", len(rel_sets[0]), len(dirs), thr)
    return 0


def cmd_make_synthetic(args) -> int:
    from refvos.synthetic import SyntheticSpec, make_dataset

    ds = make_dataset(args.out, SyntheticSpec(videos=args.videos, frames=args.frames, seed=args.seed))
    print(f"meta: {ds.meta_path}\nframes: {ds.frames_root}\nground truth: {ds.ground_truth.root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refvos", description="Referring video segmentation pipeline tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run segment -> fuse -> keyframe -> propagate -> ensemble")
    r.add_argument("--config", required=True, help="pipeline config (JSON)")
    r.add_argument("--meta", required=True, help="meta_expressions.json")
    r.add_argument("--frames", default=None, help="frames root: <frames>/<video_id>/<frame_id>.jpg")
    r.add_argument("--out", default=None, help="results root (overrides config 'output')")
    r.add_argument("--parallelism", type=int, default=None)
    r.add_argument("--report", default=None, help="run report path (default <out>/run_report.jsonl)")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="J&F evaluation to CSV plus a summary figure")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--meta", required=True)
    e.add_argument("--report", required=True, help="CSV output path")
    e.add_argument("--aggregation", choices=("sequence", "frame"), default="sequence")
    e.add_argument("--tolerance-ratio", type=float, default=0.008)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--figure", default=None, help="figure path (default: report path with .png)")
    e.add_argument("--no-figure", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("visualize", help="blend result masks onto frames")
    v.add_argument("--results", required=True)
    v.add_argument("--frames", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--alpha", type=float, default=0.5)
    v.set_defaults(func=cmd_visualize)

    f = sub.add_parser("fuse", help="pixel-vote masks across directories with identical file sets")
    f.add_argument("dirs", nargs="+")
    f.add_argument("--out", required=True)
    f.add_argument("--thr-ratio", type=float, default=0.5)
    f.set_defaults(func=cmd_fuse)

    s = sub.add_parser("make-synthetic", help="write a small synthetic dataset with ground truth")
    s.add_argument("--out", required=True)
    s.add_argument("--videos", type=int, default=4)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RefVOSError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
