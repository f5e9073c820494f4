#!/usr/bin/env python3
"""Reproduce the three benchmark protocols (SNR sweep, pilot sweep, mobility).

Writes one CSV per protocol into --outdir.  The full 64x32 profile with all
four estimators takes hours on a laptop; pass --small for the 16x8 profile
that finishes in tens of minutes.
"""

import argparse
import pathlib
import time

from chanest.bench import (
    apply_small_profile,
    default_config,
    emit_csv,
    run_scenario,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--outdir", default="results")
    parser.add_argument("--small", action="store_true")
    parser.add_argument("--seeds", type=int, default=5, help="trials per cell")
    args = parser.parse_args()
    outdir = pathlib.Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    from dataclasses import replace
    for scenario in ("snr-sweep", "pilot-sweep", "mobility"):
        cfg = default_config(scenario)
        if args.small:
            cfg = apply_small_profile(cfg)
        cfg = replace(cfg, seeds=tuple(range(args.seeds)))
        t0 = time.perf_counter()
        rows = run_scenario(cfg)
        path = outdir / f"{scenario}{'-small' if args.small else ''}.csv"
        emit_csv(rows, path)
        print(f"{scenario}: {len(rows)} rows -> {path} ({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
