"""Command-line experiment runner.

    chanest <snr-sweep|pilot-sweep|mobility|denoise-once>
            [--config path] [--out path] [--small] [--seed-base N]
            [--estimators ls,lmmse,mmse,s2s]

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .bench import (
    SCENARIOS,
    ConfigError,
    apply_small_profile,
    default_config,
    emit_csv,
    parse_config,
    run_scenario,
)

logger = logging.getLogger(__name__)

_COLUMN_NOTES = """\
# chanest results: one row per (axis value, estimator, seed)
# scenario    experiment kind (snr-sweep | pilot-sweep | mobility | denoise-once)
# estimator   ls | lmmse | mmse | s2s
# axis        SNR in dB, pilot length, or frame index depending on scenario
# seed        trial seed; all estimators in a cell share one (H, Y, X) triple
# nmse        ||H_e - H||_F^2 / ||H||_F^2 (linear)
# nmse_db     10*log10(nmse)
# wall_s      0 unless CHANEST_CSV_TIMINGS=1 (timings also go to the log)
# input_hash  sha256 prefix of the shared (H, Y, X) triple
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chanest",
                                     description="MIMO channel-estimation experiments")
    parser.add_argument("scenario", choices=SCENARIOS)
    parser.add_argument("--config", help="TOML config file (defaults apply when omitted)")
    parser.add_argument("--out", help="output CSV path (default: <scenario>.csv)")
    parser.add_argument("--small", action="store_true",
                        help="CI profile: 16x8 channel, depth-3 network")
    parser.add_argument("--seed-base", type=int, default=None)
    parser.add_argument("--estimators", help="comma-separated subset of ls,lmmse,mmse,s2s")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = parse_config(args.config, scenario=args.scenario)
        else:
            cfg = default_config(args.scenario)
        if args.seed_base is not None:
            n = len(cfg.seeds)
            cfg = replace(cfg, seed_base=args.seed_base,
                          seeds=tuple(range(args.seed_base, args.seed_base + n)))
        if args.estimators:
            cfg = replace(cfg, estimators=tuple(args.estimators.split(",")))
        if args.small:
            cfg = apply_small_profile(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"chanest: config error: {exc}", file=sys.stderr)
        return 1

    out_path = args.out or cfg.out or f"{cfg.scenario}.csv"
    try:
        results = run_scenario(cfg)
        emit_csv(results, out_path)
        with open(out_path + ".columns", "w") as fh:
            fh.write(_COLUMN_NOTES)
    except Exception as exc:
        print(f"chanest: run failed: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(results)} rows to {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
