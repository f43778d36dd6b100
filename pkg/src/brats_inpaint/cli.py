"""Command line: ``brats-inpaint {phantoms,pool,sample,void,baseline,eval,rank}``.

Exit codes: 0 success, 1 input error or failed cases, 2 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .baseline_inpaint import METHODS, SolverConfig, run_baseline
from .errors import BratsInpaintError
from .mask_pipeline import DEFAULT_SEED, MaskPool, SamplerConfig, build_dataset, extract_pool, void_dataset
from .metrics import MetricParams, evaluate_submission, write_reports_csv, write_reports_json
from .phantoms import write_phantom_dataset
from .ranking import leaderboard_from_csvs
from .volume_io import list_cases, load_case

log = logging.getLogger("brats_inpaint")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2

SAMPLER_HELP = """\
healthy-mask rules (defaults):
  pool admission      components of at least 800 voxels (26-connectivity)
  size selection      shape percentile reflects the tumour's (p -> 100 - p), window +/-5 points
  mirroring           each axis flipped with probability 0.5 (50%%)
  rotation            X-Y then Y-Z plane, angles uniform in [0, 360) degrees
  placement           better of 2 random brain voxels, farthest from the tumour
  validity            >= 5 voxels Euclidean distance to the dilated tumour,
                      <= 0.25 (25%%) of the mask on background (zero T1 or off-grid)
  tumour dilation     3 voxels (ball), applied before the checks and on output
"""


class InputError(Exception):
    pass


def _add_sampler_args(p, pool_only=False):
    g = p.add_argument_group("sampler")
    g.add_argument("--min-voxels", dest="min_component_voxels", type=int, default=800,
                   help="smallest tumour component admitted to the pool (default: 800)")
    g.add_argument("--connectivity", type=int, choices=(6, 18, 26), default=26,
                   help="component adjacency (default: 26)")
    if pool_only:
        return
    g.add_argument("--min-tumor-distance", type=float, default=5.0,
                   help="minimum Euclidean voxel distance to the dilated tumour (default: 5)")
    g.add_argument("--max-background-overlap", type=float, default=0.25,
                   help="largest allowed background fraction of a healthy mask (default: 0.25)")
    g.add_argument("--percentile-window", type=float, default=5.0,
                   help="half-width of the size-percentile band, in points (default: 5)")
    g.add_argument("--mirror-probability", type=float, default=0.5,
                   help="per-axis mirror probability (default: 0.5)")
    g.add_argument("--max-attempts", type=int, default=1000,
                   help="placement attempts before giving up on a case (default: 1000)")
    g.add_argument("--dilation-radius", dest="tumor_dilation_radius", type=float, default=3.0,
                   help="tumour dilation radius in voxels (default: 3)")


def _sampler_config(args) -> SamplerConfig:
    fields = SamplerConfig.__dataclass_fields__
    kwargs = {k: getattr(args, k) for k in fields if hasattr(args, k)}
    kwargs["seed"] = args.seed
    return SamplerConfig(**kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brats-inpaint", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"global random seed (default: {DEFAULT_SEED})")
    common.add_argument("--config", type=Path,
                        help="INI file; keys in [DEFAULT] or [<command>] set flag defaults")
    common.add_argument("--jobs", type=int, default=1, help="parallel case workers (default: 1)")
    common.add_argument("--keep-going", action="store_true",
                        help="exit 0 when some cases fail; failures go to errors.json")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("phantoms", parents=[common], help="write synthetic phantom cases")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--cases", type=int, default=10)
    p.add_argument("--size", type=int, default=64, help="cube edge in voxels (default: 64)")

    p = sub.add_parser("pool", parents=[common], help="extract the tumour-shape pool",
                       epilog=SAMPLER_HELP, formatter_class=fmt)
    p.add_argument("--input", type=Path, required=True, help="case directory tree")
    p.add_argument("--output", type=Path, required=True, help="pool cache (JSON)")
    p.add_argument("--stats", type=Path, help="pool statistics JSON (default: <output>.stats.json)")
    _add_sampler_args(p, pool_only=True)

    p = sub.add_parser("sample", parents=[common], help="sample healthy masks and void cases",
                       epilog=SAMPLER_HELP, formatter_class=fmt)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--pool", type=Path, help="pool cache from `pool`; extracted from --input if absent")
    p.add_argument("--masks-per-case", type=int, default=1)
    _add_sampler_args(p)

    p = sub.add_parser("void", parents=[common], help="dilate tumours and void cases with existing masks")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--dilation-radius", dest="tumor_dilation_radius", type=float, default=3.0,
                   help="tumour dilation radius in voxels (default: 3)")

    p = sub.add_parser("baseline", parents=[common], help="harmonic (Laplace) infill of voided cases")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--tolerance", type=float, default=1e-6,
                   help="max residual relative to the boundary intensity range (default: 1e-6)")
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--method", choices=METHODS, default="conjugate_gradient")

    p = sub.add_parser("eval", parents=[common], help="score predictions inside healthy masks")
    p.add_argument("--gt", type=Path, required=True, help="case tree with t1n and mask-healthy")
    p.add_argument("--pred", type=Path, required=True, help="directory of <id>-t1n-inference.nii.gz")
    p.add_argument("--team", default="team")
    p.add_argument("--output", type=Path, required=True, help="metrics CSV (JSON mirror written alongside)")
    p.add_argument("--k1", type=float, default=0.01)
    p.add_argument("--k2", type=float, default=0.03)
    p.add_argument("--window-sigma", type=float, default=1.5)
    p.add_argument("--window-radius", type=int, default=5)
    p.add_argument("--dynamic-range", type=float, default=None,
                   help="fixed intensity range L (default: ground-truth max - min)")
    p.add_argument("--psnr-cap", type=float, default=100.0)

    p = sub.add_parser("rank", parents=[common], help="rank-sum leaderboard from metrics CSVs")
    p.add_argument("metrics", type=Path, nargs="+")
    p.add_argument("--output", type=Path, required=True, help="leaderboard JSON (CSV view written alongside)")
    return parser


def _apply_config(parser, argv):
    """Re-parse with config-file values as defaults so explicit flags still win."""
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    if not args.config.exists():
        raise InputError(f"config file {args.config} not found")
    cp = configparser.ConfigParser()
    cp.read(args.config)
    section = cp[args.command] if cp.has_section(args.command) else cp.defaults()
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in section.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise InputError(f"unknown config key {key!r} for {args.command}")
        conv = actions[dest].type or str
        defaults[dest] = conv(raw)
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _finish(summary: dict, out_dir: Path, keep_going: bool) -> int:
    failures = summary.get("failures", [])
    if not failures:
        return EXIT_OK
    (out_dir / "errors.json").write_text(json.dumps(failures, indent=2, sort_keys=True))
    for f in failures:
        log.error("%s: %s %s", f["case_id"], f["error"], f.get("message", ""))
    return EXIT_OK if keep_going else EXIT_INPUT


def _require_dir(path: Path) -> None:
    if not path.is_dir():
        raise InputError(f"{path} is not a directory")


def cmd_phantoms(args) -> int:
    args.output.mkdir(parents=True, exist_ok=True)
    ids = write_phantom_dataset(args.output, args.cases, args.seed, (args.size,) * 3)
    log.info("wrote %d phantom cases to %s", len(ids), args.output)
    return EXIT_OK


def cmd_pool_extract(args) -> int:
    _require_dir(args.input)
    case_ids = list_cases(args.input)
    if not case_ids:
        raise InputError("no cases found")
    cfg = _sampler_config(args)
    pool = extract_pool((load_case(args.input, c) for c in case_ids), cfg)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    pool.save(args.output)
    stats = pool.stats()
    stats.update(cases_read=len(case_ids), connectivity=cfg.connectivity,
                 min_component_voxels=cfg.min_component_voxels)
    stats_path = args.stats or args.output.with_suffix(".stats.json")
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True))
    log.info("pool: %d shapes from %d of %d cases (connectivity %d)",
             stats["count"], stats["source_cases"], len(case_ids), cfg.connectivity)
    return EXIT_OK


def cmd_sample(args) -> int:
    _require_dir(args.input)
    if not list_cases(args.input):
        raise InputError("no cases found")
    pool = MaskPool.load(args.pool) if args.pool else None
    summary = build_dataset(args.input, args.output, _sampler_config(args),
                            args.masks_per_case, args.jobs, pool)
    log.info("sampled %d masks, %d failed cases", len(summary["cases"]), len(summary["failures"]))
    return _finish(summary, args.output, args.keep_going)


def cmd_void(args) -> int:
    _require_dir(args.input)
    if not list_cases(args.input):
        raise InputError("no cases found")
    cfg = SamplerConfig(tumor_dilation_radius=args.tumor_dilation_radius, seed=args.seed)
    summary = void_dataset(args.input, args.output, cfg, args.jobs)
    return _finish(summary, args.output, args.keep_going)


def cmd_baseline(args) -> int:
    _require_dir(args.input)
    cfg = SolverConfig(args.tolerance, args.max_iterations, args.method)
    summary = run_baseline(args.input, args.output, cfg, args.jobs)
    if not summary["cases"] and not summary["failures"]:
        raise InputError("no voided cases found")
    return _finish(summary, args.output, args.keep_going)


def cmd_eval(args) -> int:
    _require_dir(args.gt)
    _require_dir(args.pred)
    params = MetricParams(args.k1, args.k2, args.window_sigma, args.window_radius,
                          args.dynamic_range, args.psnr_cap)
    reports = evaluate_submission(args.gt, args.pred, params, args.team)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_reports_csv(reports, args.output)
    write_reports_json(reports, args.output.with_suffix(".json"))
    missing = [r.case_id for r in reports if r.missing]
    if missing:
        log.warning("%d case(s) without prediction: %s", len(missing), ", ".join(missing))
    return EXIT_OK


def cmd_rank(args) -> int:
    for p in args.metrics:
        if not p.exists():
            raise InputError(f"{p} not found")
    board = leaderboard_from_csvs(args.metrics)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_text(board.to_json())
    board.write_csv(args.output.with_suffix(".csv"))
    for pos, team in enumerate(board.final_order, start=1):
        log.info("%d. %s (rank sum %g)", pos, team, board.final_rank_sum[team])
    return EXIT_OK


COMMANDS = {
    "phantoms": cmd_phantoms,
    "pool": cmd_pool_extract,
    "sample": cmd_sample,
    "void": cmd_void,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "rank": cmd_rank,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (InputError, BratsInpaintError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
