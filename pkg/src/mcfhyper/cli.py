"""Command-line entry point: ``mcfhyper {energy-time,path,certify,all}``."""

from __future__ import annotations

import argparse
import sys
import warnings

from . import __version__
from .analysis import VisibilityResult, certification_chain, qkd_threshold_check
from .config import RunConfig, load
from .errors import ConfigError, FitError, InsufficientCounts, RangeError
from .experiment import (PathResult, certify_from_dir, report, run_energy_time_scan, run_path_scan,
                         summary_text)

# largest tolerated |matrix - oracle| probability difference
ORACLE_TOL = 1e-12


def _parse_visibility(text: str) -> VisibilityResult:
    value, _, sigma = text.partition(":")
    return VisibilityResult(float(value), float(sigma or 0.0), "direct-formula")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration (defaults are built in)")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", help="output directory (overrides [run] output)")
    common.add_argument("--threads", type=int, help="worker threads for scan points")
    common.add_argument("--mode", choices=("sampled", "analytic"), help="Poisson counts or expectation values")
    common.add_argument("--oracle", action="store_true",
                        help="cross-check every scan point against brute-force amplitude enumeration")

    parser = argparse.ArgumentParser(prog="mcfhyper", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("energy-time", parents=[common], help="Franson phase scan with polarization analysis")
    sub.add_parser("path", parents=[common], help="piezo phase scan of the outer-core quartet and certification")
    sub.add_parser("all", parents=[common], help="both scans, one report")
    cert = sub.add_parser("certify", parents=[common], help="certification chain from CSVs or given numbers")
    cert.add_argument("--from", dest="source_dir", help="directory holding path_setting*.csv and path_diagonals.csv")
    cert.add_argument("--visibility", nargs="+", type=_parse_visibility, metavar="V[:SIGMA]",
                      help="path visibilities, one per basis setting")
    cert.add_argument("--diagonals", nargs="+", type=float, metavar="P", help="path populations p_1..p_d")
    cert.add_argument("--pair", nargs=2, type=int, default=(2, 3), metavar=("I", "J"),
                      help="0-based indices of the interfered pairs within the diagonals")
    return parser


def _config(args) -> RunConfig:
    cfg = load(args.config) if args.config else RunConfig()
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.out is not None:
        run["output"] = args.out
    if args.threads is not None:
        run["threads"] = args.threads
    if args.mode is not None:
        run["mode"] = args.mode
    return cfg.replace(run=run) if run else cfg


def _oracle_status(diffs) -> int:
    diffs = [d for d in diffs if d is not None]
    if not diffs:
        print("oracle: not applicable to this configuration")
        return 0
    worst = max(diffs)
    ok = worst <= ORACLE_TOL
    print(f"oracle: max |probability difference| = {worst:.3e} ({'ok' if ok else 'MISMATCH'})")
    return 0 if ok else 3


def _certify_numbers(cfg, args) -> int:
    if not args.visibility or not args.diagonals:
        print("certify: give --from DIR or both --visibility and --diagonals", file=sys.stderr)
        return 2
    c = cfg.certify
    for label, n_sigma in (("point", 0.0), ("bound", c.n_sigma)):
        rep = certification_chain(args.visibility, args.diagonals, tuple(args.pair), c.combine, n_sigma)
        print(f"chain.{label}: V={rep.visibility:.4f} r={rep.offdiag:.4f} F={rep.fidelity:.4f} "
              f"schmidt={rep.schmidt_number}")
    for k, v in enumerate(args.visibility):
        print(f"qkd.path.{k} = {qkd_threshold_check(v, c.qkd_threshold).line()}")
    print(f"assumption = {rep.assumption}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return _dispatch(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FitError, InsufficientCounts, RangeError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


def _dispatch(cfg: RunConfig, args) -> int:
    et = path = None
    if args.command == "certify":
        if not args.source_dir:
            return _certify_numbers(cfg, args)
        path = certify_from_dir(cfg, args.source_dir)
        print(summary_text(cfg, None, path), end="")
        return 0
    if args.command in ("energy-time", "all"):
        et = run_energy_time_scan(cfg, oracle=args.oracle)
    if args.command in ("path", "all"):
        path = run_path_scan(cfg, oracle=args.oracle)
    out = report(cfg, et, path)
    print(summary_text(cfg, et, path), end="")
    print(f"wrote {out}")
    if args.oracle:
        diffs = [b.oracle_diff for b in (et.bases.values() if et else [])]
        diffs += [s.oracle_diff for s in (path.settings if path else [])]
        return _oracle_status(diffs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
