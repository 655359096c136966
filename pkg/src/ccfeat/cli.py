"""Command-line entry point.

Subcommands: build-codebook, extract {tf,ff,bf}, fuse-train-eval, sweep,
fetch-tags, report. Exit codes: 0 success, 1 usage, 2 data error, 3 backend
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .content import BackendError
from .fetch import fetch_tags
from .pipeline import (FEATURE_SETS, build_codebook_stage, extract_stage,
                       fuse_train_eval_stage, load_run_config, render_report_text,
                       sweep_stage)
from .store import load_manifest

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ccfeat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p):
        p.add_argument("--manifest", required=True, help="dataset manifest JSON")
        p.add_argument("--config", required=True, help="run config JSON")

    p = sub.add_parser("build-codebook", help="build the filter-word codebook from training tags")
    add_common(p)
    p.add_argument("--out", required=True, help="codebook output path")

    p = sub.add_parser("extract", help="extract one feature kind into a store")
    p.add_argument("which", choices=("tf", "ff", "bf"))
    add_common(p)
    p.add_argument("--out", required=True, help="feature store output path")
    p.add_argument("--codebook", help="codebook path (tf only)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--agg", choices=("max", "mean", "min"), help="override config aggregation")
    p.add_argument("--scales", help="override config scale factors, comma-separated")
    p.add_argument("--base-side", type=int, help="override config base side")

    p = sub.add_parser("fuse-train-eval", help="fuse stores, grid-search, train and evaluate")
    add_common(p)
    p.add_argument("--tf", help="tag feature store")
    p.add_argument("--bf", help="background feature store")
    p.add_argument("--ff", help="foreground feature store")
    p.add_argument("--features", default="ccf", choices=sorted(FEATURE_SETS))
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sweep", help="sweep one config axis and tabulate accuracy")
    add_common(p)
    p.add_argument("--axis", required=True, choices=("k", "threshold", "agg", "scales"))
    p.add_argument("--values", help="comma-separated axis values")
    p.add_argument("--workdir", required=True)
    p.add_argument("--features", choices=sorted(FEATURE_SETS))

    p = sub.add_parser("fetch-tags", help="pull tag lists from an HTTP source")
    p.add_argument("--endpoint", required=True,
                   help="URL, with optional {image_id} placeholder")
    p.add_argument("--manifest", help="take image ids from this manifest")
    p.add_argument("--ids", help="file with one image id per line")
    p.add_argument("--out", required=True, help="tag-document JSONL output")
    p.add_argument("--cache-dir", help="raw-response cache (default: $CCFEAT_CACHE)")
    p.add_argument("--rate-limit", type=float, default=0.0, help="seconds between requests")
    p.add_argument("--retries", type=int, default=3)

    p = sub.add_parser("report", help="pretty-print an evaluation report")
    p.add_argument("--report", required=True, help="report.json path")
    return parser


def _cmd_build_codebook(args) -> int:
    config, config_hash = load_run_config(args.config)
    manifest = load_manifest(args.manifest)
    codebook = build_codebook_stage(manifest, config, args.out)
    print(f"codebook: {len(codebook)} filter words from {len(codebook.categories)} "
          f"categories -> {args.out} (config {config_hash[:12]})")
    return EXIT_OK


def _apply_overrides(config, args):
    from dataclasses import replace
    changes = {}
    if getattr(args, "agg", None):
        changes["agg"] = args.agg
    if getattr(args, "scales", None):
        changes["scale_factors"] = tuple(float(v) for v in args.scales.split(","))
    if getattr(args, "base_side", None):
        changes["base_side"] = args.base_side
    return replace(config, **changes) if changes else config


def _cmd_extract(args) -> int:
    config, config_hash = load_run_config(args.config)
    overridden = _apply_overrides(config, args)
    if overridden is not config:
        config, config_hash = overridden, overridden.stable_hash()
    manifest = load_manifest(args.manifest)
    summary = extract_stage(manifest, config, args.which, args.out,
                            codebook_path=args.codebook, config_hash=config_hash,
                            workers=args.workers)
    print(f"{args.which}: {len(summary.ids)} rows -> {args.out}")
    if summary.failures:
        for image_id, err in summary.failures:
            print(f"failed {image_id}: {err}", file=sys.stderr)
        print(f"{len(summary.failures)} record(s) failed", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _cmd_fuse_train_eval(args) -> int:
    config, config_hash = load_run_config(args.config)
    manifest = load_manifest(args.manifest)
    store_paths = {k: v for k, v in (("tf", args.tf), ("bf", args.bf), ("ff", args.ff))
                   if v is not None}
    report = fuse_train_eval_stage(manifest, config, store_paths, args.features,
                                   out_dir=args.out_dir, config_hash=config_hash)
    print(render_report_text(report), end="")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config, _ = load_run_config(args.config)
    manifest = load_manifest(args.manifest)
    values = None
    if args.values:
        values = [v.strip() for v in args.values.split(",")]
    rows = sweep_stage(manifest, config, args.axis, values, args.workdir,
                       features=args.features)
    for row in rows:
        print(f"{row['axis']}={row['value']} features={row['features']} "
              f"accuracy={row['accuracy_mean']:.4f} +/- {row['accuracy_ci95']:.4f}")
    return EXIT_OK


def _cmd_fetch_tags(args) -> int:
    if bool(args.manifest) == bool(args.ids):
        print("fetch-tags: exactly one of --manifest / --ids is required", file=sys.stderr)
        return EXIT_USAGE
    if args.manifest:
        ids = [r.image_id for r in load_manifest(args.manifest).records]
    else:
        ids = [line.strip() for line in Path(args.ids).read_text(encoding="utf-8").splitlines()
               if line.strip()]
    summary = fetch_tags(args.endpoint, ids, args.out, cache_dir=args.cache_dir,
                         rate_limit_s=args.rate_limit, retries=args.retries)
    print(f"wrote {summary.written} documents ({summary.from_cache} cached) -> {args.out}")
    if summary.failures:
        for image_id, err in summary.failures:
            print(f"failed {image_id}: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _cmd_report(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    print(render_report_text(report), end="")
    return EXIT_OK


_COMMANDS = {
    "build-codebook": _cmd_build_codebook,
    "extract": _cmd_extract,
    "fuse-train-eval": _cmd_fuse_train_eval,
    "sweep": _cmd_sweep,
    "fetch-tags": _cmd_fetch_tags,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except BackendError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (ValueError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
