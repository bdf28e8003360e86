"""Command-line pipeline driver.

Subcommands: detect, score, curate, plot, serve, plus a synth helper for
demo datasets. Exit codes: 0 success, 1 usage, 2 input error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import PipelineConfig, load_config
from .descriptor import describe
from .detector import detect
from .errors import ConsistencyError, InputError, InternalInvariantError, KeysigError
from .knn import build, records_from_signatures
from .ksig_io import read_signature, write_signature
from .pairwise import score_dataset
from .report import (
    build_report,
    curate_report,
    load_report,
    read_metadata_csv,
    read_relations_csv,
    total_pair_count,
    write_report,
)
from .volume import load_volume, normalize, save_raw

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3

VOLUME_SUFFIXES = (".nii", ".nii.gz", ".raw")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _volume_files(spec: str) -> list[Path]:
    p = Path(spec)
    if p.is_dir():
        files = [
            f
            for f in sorted(p.iterdir())
            if f.is_file() and f.name.lower().endswith(VOLUME_SUFFIXES)
        ]
        if not files:
            raise InputError(f"no volume files (.nii/.nii.gz/.raw) in {p}")
        return files
    if p.exists():
        return [p]
    raise InputError(f"input not found: {spec}")


def cmd_detect(args) -> int:
    cfg = _config(args)
    files: list[Path] = []
    for spec in args.inputs:
        files.extend(_volume_files(spec))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(path: Path):
        t0 = time.perf_counter()
        v = normalize(load_volume(path))
        raw = detect(v, cfg.detector)
        sig = describe(v, raw)
        write_signature(sig, out_dir / f"{sig.image_id}.ksig")
        return sig.image_id, len(sig.keypoints), time.perf_counter() - t0

    errors: list[tuple[Path, str]] = []
    workers = max(1, cfg.threads)
    if workers == 1:
        results = []
        for f in files:
            try:
                results.append(run_one(f))
            except KeysigError as exc:
                results.append(None)
                errors.append((f, str(exc)))
    else:
        def safe(f):
            try:
                return run_one(f)
            except KeysigError as exc:
                errors.append((f, str(exc)))
                return None

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(safe, files))

    for res in results:
        if res is None:
            continue
        image_id, n, dt = res
        print(f"{image_id}: {n} keypoints ({dt:.2f}s)")
        if n == 0:
            print(f"warning: {image_id} produced no keypoints", file=sys.stderr)
    if errors:
        print(f"{len(errors)} input(s) failed:", file=sys.stderr)
        for f, msg in sorted(errors):
            print(f"  {f}: {msg}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def _load_signatures(sig_dir: str):
    p = Path(sig_dir)
    if not p.is_dir():
        raise InputError(f"signature directory not found: {sig_dir}")
    files = sorted(p.glob("*.ksig"))
    if not files:
        raise InputError(f"no .ksig files in {sig_dir}")
    return [read_signature(f) for f in files]


def cmd_score(args) -> int:
    cfg = _config(args)
    sigs = _load_signatures(args.sigs)
    meta_rows = read_metadata_csv(args.metadata)
    relations = read_relations_csv(args.relations) if args.relations else {}

    by_id = {m.image_id: m for m in meta_rows}
    missing = [s.image_id for s in sigs if s.image_id not in by_id]
    if missing:
        raise ConsistencyError(
            f"metadata is missing image(s): {', '.join(sorted(missing))}"
        )
    have_sig = {s.image_id for s in sigs}
    for m in meta_rows:
        if m.image_id not in have_sig:
            print(f"warning: no signature for {m.image_id}, skipping", file=sys.stderr)
    images = [m for m in meta_rows if m.image_id in have_sig]
    if len(images) < 2:
        raise InputError("scoring needs at least 2 signatures")
    sig_by_id = {s.image_id: s for s in sigs}
    ordered = [sig_by_id[m.image_id] for m in images]

    t0 = time.perf_counter()
    ix = build(records_from_signatures(ordered), cfg.index)
    scores = score_dataset(ordered, ix, cfg.match, threads=max(1, cfg.threads))
    dt = time.perf_counter() - t0

    report = build_report(
        images,
        [len(s.keypoints) for s in ordered],
        scores,
        relations,
        cfg.echo(),
    )
    write_report(report, args.out)
    n = len(images)
    print(
        f"scored {n} images: {total_pair_count(n)} candidate pairs, "
        f"{len(report['pairs'])} with matches ({dt:.2f}s)"
    )
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_curate(args) -> int:
    report = load_report(args.report)
    decisions = []
    if args.decisions:
        from .curation import load_decisions

        decisions = load_decisions(args.decisions)
    new = curate_report(report, decisions, z_threshold=args.z_threshold)
    write_report(new, args.out)
    flags = new["flags"]
    print(
        f"report version {new['report_version']}: {len(flags)} flag(s), "
        f"{new['decisions_applied']} pair decision(s) applied"
    )
    for f in flags:
        print(
            f"  [{f['label']}] images {f['a']},{f['b']} d={f['distance']:.3f} "
            f"{f['direction']} (severity {f['severity']:.1f})"
        )
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import render_report, save_svg

    report = load_report(args.report)
    fig = render_report(report)
    save_svg(fig, args.out)
    print(f"chart written to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .server import ReviewSession, create_app

    volume_paths = {}
    if args.volumes:
        csv_dir = Path(args.volumes).resolve().parent
        for m in read_metadata_csv(args.volumes):
            if m.path:
                p = Path(m.path)
                # relative paths in the CSV are relative to the CSV itself
                volume_paths[m.image_id] = str(p if p.is_absolute() else csv_dir / p)
    session = ReviewSession(
        report_path=Path(args.report),
        decisions_path=Path(args.decisions),
        volume_paths=volume_paths,
    )
    app = create_app(session, ui_dir=args.ui)
    host, _, port = args.bind.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import CohortSpec, generate_cohort

    spec = CohortSpec(
        subjects=args.subjects,
        images_per_subject=args.images_per_subject,
        size_range=(args.size, args.size),
        seed=args.seed if args.seed is not None else 7,
        inject=args.inject,
    )
    volumes, meta, truth = generate_cohort(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vol_dir = out / "volumes"
    vol_dir.mkdir(exist_ok=True)
    for v in volumes:
        save_raw(v, vol_dir / f"{v.id}.raw")
    with open(out / "metadata.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["image_id", "subject_id", "database", "path"])
        for m, v in zip(meta, volumes):
            # paths are relative to the metadata CSV location
            w.writerow([m.image_id, m.subject_id, m.database, f"volumes/{v.id}.raw"])
    print(f"{len(volumes)} volumes written to {vol_dir}")
    print(f"metadata written to {out / 'metadata.csv'}")
    if truth.corrupted_pairs:
        print("injected label errors (ground truth):")
        for a, b in truth.corrupted_pairs:
            print(f"  {a} <-> {b} are the same subject but labeled differently")
    return EXIT_OK


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "threads", None):
        from dataclasses import replace

        cfg = replace(cfg, threads=args.threads)
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    return cfg


def build_parser() -> _Parser:
    parser = _Parser(prog="keysig", description=__doc__)
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    parser.add_argument("--seed", type=int, default=None, help="seed echoed in reports")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect keypoints and write .ksig signatures")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="PATH")
    p.add_argument("--out", required=True, help="output directory for .ksig files")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("score", help="pairwise log-Jaccard distances for a dataset")
    p.add_argument("--sigs", required=True, help="directory of .ksig files")
    p.add_argument("--metadata", required=True, help="CSV: image_id,subject_id,database[,path]")
    p.add_argument("--relations", help="CSV: subject_a,subject_b,label (MZ/DZ/FS)")
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("curate", help="flag outlier pairs, apply curator decisions")
    p.add_argument("--report", required=True)
    p.add_argument("--decisions", help="append-only decisions JSONL")
    p.add_argument("--z-threshold", type=float, default=None)
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("plot", help="render class distributions with flag dots (SVG)")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, help="output SVG path")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("serve", help="review service for curator decisions")
    p.add_argument("--report", required=True)
    p.add_argument("--decisions", required=True, help="decisions JSONL (created if absent)")
    p.add_argument("--volumes", help="metadata CSV with path column for slice views")
    p.add_argument("--bind", default="127.0.0.1:8787")
    p.add_argument("--ui", help="static directory for the browser UI")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("synth", help="generate a deterministic demo cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--images-per-subject", type=int, default=2)
    p.add_argument("--size", type=int, default=64, help="cubic volume edge length")
    p.add_argument("--inject", type=int, default=0, help="injected subject-ID errors")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InternalInvariantError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
