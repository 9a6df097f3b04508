"""Command-line front end.

Subcommands: ``embed``, ``segment``, ``eval``, ``stats``, ``init-preview``.
Exit status is 0 on success, 1 on I/O or numerical failure and 2 on a
usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import fileio
from .graph import NeighborhoodSpec, boundary_edge_stats
from .initialization import initialize
from .metrics import evaluate
from .pipeline import (
    ConfigError,
    RunConfig,
    build_config,
    build_graph,
    channel_histograms,
    cluster,
    embed,
    read_config_file,
)
from .sparsela import ConvergenceError, NotPositiveDefiniteError
from .solver import DivergenceError

logger = logging.getLogger("pfembed")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

NUMERIC_ERRORS = (DivergenceError, ConvergenceError, NotPositiveDefiniteError,
                  FloatingPointError, np.linalg.LinAlgError, ArithmeticError)


class UsageError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--profile", choices=("clustering", "boundary"))
    g.add_argument("--d", type=int)
    g.add_argument("--p", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--r1", dest="r_stage1", type=float)
    g.add_argument("--r2", dest="r_stage2", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--eps", dest="epsilon_w", type=float)
    g.add_argument("--radius", type=int)
    g.add_argument("--affinity", choices=("color", "contour"))
    g.add_argument("--boundary", help="boundary-probability PGM for --affinity contour")
    g.add_argument("--sigma-c", dest="sigma_c", type=float)
    g.add_argument("--sigma-x", dest="sigma_x", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--init", choices=("random", "color_combo", "gmm_density", "wsc_density"))
    g.add_argument("--k", type=int)
    g.add_argument("--scheme", choices=("explicit", "fixed", "dynamic"))
    g.add_argument("--weighted", dest="use_weighted", type=int, choices=(0, 1))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", dest="output_dir")
    g.add_argument("--jobs", type=int, default=1, help="images processed in parallel")


CONFIG_DESTS = ("profile", "d", "p", "lam", "r_stage1", "r_stage2", "alpha", "epsilon_w",
                "radius", "affinity", "boundary", "sigma_c", "sigma_x", "rho", "init", "k",
                "scheme", "use_weighted", "seed", "output_dir")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfembed", description="Piecewise flat embeddings of images.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="compute embedding channels")
    p.add_argument("images", nargs="+", help="PPM/PGM inputs")
    _add_config_flags(p)

    p = sub.add_parser("segment", help="cluster an image or a PFEB channel file")
    p.add_argument("inputs", nargs="+", help="PPM/PGM images or .pfeb channel files")
    p.add_argument("--gt", action="append", default=[], help="ground-truth label PGM (repeatable)")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score a label map against ground truths")
    p.add_argument("seg")
    p.add_argument("gts", nargs="+")
    p.add_argument("--out", dest="output_dir")

    p = sub.add_parser("stats", help="boundary-edge statistics of ground-truth maps")
    p.add_argument("path", help="label PGM or a directory of them")
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--connectivity", choices=("chessboard", "cityblock"), default="chessboard",
                   help="cityblock with radius 1 is 4-connectivity")
    p.add_argument("--out", dest="output_dir")

    p = sub.add_parser("init-preview", help="write initialization channels as PGM")
    p.add_argument("images", nargs="+")
    _add_config_flags(p)
    return parser


def resolve_config(args) -> RunConfig:
    layers = []
    if getattr(args, "config", None):
        try:
            layers.append(read_config_file(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    layers.append({k: getattr(args, k, None) for k in CONFIG_DESTS})
    return build_config(*layers)


def _out(cfg_dir: str, name: str) -> str:
    os.makedirs(cfg_dir, exist_ok=True)
    return os.path.join(cfg_dir, name)


def _boundary(cfg: RunConfig):
    return fileio.read_image(cfg.boundary) if cfg.affinity == "contour" and cfg.boundary else None


def embed_one(path: str, cfg: RunConfig) -> list[str]:
    """Embed one image and write its channel, preview, trace and histogram files."""
    img = fileio.read_image(path)
    h, w = img.shape[:2]
    _, res = embed(img, cfg, _boundary(cfg))
    base = fileio.stem(path)
    written = []

    def put(name):
        written.append(_out(cfg.output_dir, name))
        return written[-1]

    fileio.write_pfeb(put(f"{base}.pfeb"), res.y, w, h)
    fileio.write_pfeb(put(f"{base}.weighted.pfeb"), res.y_weighted, w, h)
    for v in range(res.y.shape[1]):
        fileio.write_pgm(put(f"{base}_ch{v}.pgm"), fileio.preview_channel(res.y[:, v]).reshape(h, w))
    d = res.y.shape[1]
    trace_rows = [[it, float(row.sum()), *map(float, row)] for it, row in enumerate(res.channel_trace)]
    fileio.write_csv(put(f"{base}_trace.csv"), ["iteration", "total"] + [f"ch{v}" for v in range(d)],
                     trace_rows)
    fileio.write_csv(put(f"{base}_hist.csv"), ["channel", "bin", "lo", "hi", "count"],
                     channel_histograms(res.y))
    return written


def _load_features(path: str, cfg: RunConfig):
    """Features and grid shape from an image (embedding it) or a PFEB file (as stored)."""
    if path.endswith(".pfeb"):
        y, w, h = fileio.read_pfeb(path)
        return y, (h, w)
    img = fileio.read_image(path)
    _, res = embed(img, cfg, _boundary(cfg))
    return (res.y_weighted if cfg.use_weighted else res.y), img.shape[:2]


def segment_one(path: str, cfg: RunConfig, gt_paths: list[str]) -> list[str]:
    gts = [fileio.read_labels(g) for g in gt_paths]
    if cfg.scheme in ("fixed", "dynamic") and not gts:
        raise UsageError(f"the {cfg.scheme} scheme needs at least one --gt")
    feats, shape = _load_features(path, cfg)
    for g, gp in zip(gts, gt_paths):
        if g.shape != tuple(shape):
            raise ValueError(f"{gp} is {g.shape[1]}x{g.shape[0]}, input is {shape[1]}x{shape[0]}")
    segs, report = cluster(feats, shape, cfg, gts or None)
    base = fileio.stem(path)
    if base.endswith(".weighted"):
        base = base[: -len(".weighted")]
    written = []
    if cfg.scheme == "fixed":
        for i, s in enumerate(segs):
            written.append(_out(cfg.output_dir, f"{base}_labels_gt{i}.pgm"))
            fileio.write_labels(written[-1], s.labels)
    else:
        written.append(_out(cfg.output_dir, f"{base}_labels.pgm"))
        fileio.write_labels(written[-1], segs[0].labels)
    if report is not None:
        written.append(_out(cfg.output_dir, f"{base}_metrics.csv"))
        fileio.write_csv(written[-1], ["gt", "pri", "vi", "covering"], report.rows())
        print(f"{base}: {report}")
    return written


def init_preview_one(path: str, cfg: RunConfig) -> list[str]:
    img = fileio.read_image(path)
    h, w = img.shape[:2]
    graph = build_graph(img, cfg, _boundary(cfg))
    y0 = initialize(cfg.init, img, graph, cfg.d, cfg.seed)
    base = fileio.stem(path)
    written = []
    for v in range(y0.shape[1]):
        written.append(_out(cfg.output_dir, f"{base}_init_ch{v}.pgm"))
        fileio.write_pgm(written[-1], fileio.preview_channel(y0[:, v]).reshape(h, w))
    return written


def _run_many(fn, items, jobs: int, *extra):
    if jobs <= 1 or len(items) == 1:
        return [fn(it, *extra) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, it, *extra) for it in items]
        return [f.result() for f in futures]


def cmd_eval(args) -> None:
    seg = fileio.read_labels(args.seg)
    gts = [fileio.read_labels(g) for g in args.gts]
    for g, gp in zip(gts, args.gts):
        if g.shape != seg.shape:
            raise ValueError(f"{gp} does not match the dimensions of {args.seg}")
    report = evaluate(seg, gts)
    rows = report.rows()
    print("gt,pri,vi,covering")
    for row in rows:
        print(",".join([row[0]] + [repr(float(x)) for x in row[1:]]))
    if args.output_dir:
        fileio.write_csv(_out(args.output_dir, f"{fileio.stem(args.seg)}_metrics.csv"),
                         ["gt", "pri", "vi", "covering"], rows)


def cmd_stats(args) -> None:
    spec = NeighborhoodSpec(args.radius, args.connectivity)
    if os.path.isdir(args.path):
        names = sorted(f for f in os.listdir(args.path) if f.lower().endswith(".pgm"))
        rows = []
        for name in names:
            r_b, r_e = boundary_edge_stats(fileio.read_labels(os.path.join(args.path, name)), spec)
            rows.append([name, r_b, r_e])
            print(f"{name}, {r_b!r}, {r_e!r}")
        if args.output_dir:
            fileio.write_csv(_out(args.output_dir, "stats.csv"), ["map", "r_b", "r_e"], rows)
        return
    r_b, r_e = boundary_edge_stats(fileio.read_labels(args.path), spec)
    print(f"{r_b!r}, {r_e!r}")


def run(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            cmd_eval(args)
        elif args.command == "stats":
            cmd_stats(args)
        else:
            cfg = resolve_config(args)
            if args.jobs < 1:
                raise UsageError("--jobs must be >= 1")
            if args.command == "embed":
                _run_many(embed_one, args.images, args.jobs, cfg)
            elif args.command == "segment":
                _run_many(segment_one, args.inputs, args.jobs, cfg, args.gt)
            else:
                _run_many(init_preview_one, args.images, args.jobs, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"pfembed: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, *NUMERIC_ERRORS) as exc:
        print(f"pfembed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
