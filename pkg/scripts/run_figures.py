#!/usr/bin/env python3
"""Run every preset experiment and drop the CSVs into a results directory.

Each preset sweeps one axis (iteration traces, antenna count, federated
group size, self-interference, payload) and writes one CSV per figure,
plus a trace CSV for the convergence preset.
"""

import argparse
import sys
import time
from pathlib import Path

from fedmimo.harness import figure_spec, run_experiment, write_csv, write_trace_csv

FIGURES = ("fig2", "fig3", "fig4", "fig5", "fig6")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="results",
                        help="directory for the CSV files (default: results)")
    parser.add_argument("--drops", type=int, default=None,
                        help="override the Monte Carlo drop count per point")
    parser.add_argument("--seed", type=int, default=0,
                        help="master seed shared by all presets")
    parser.add_argument("--workers", type=int, default=None,
                        help="process count (default: up to 8)")
    parser.add_argument("--only", choices=FIGURES, action="append",
                        help="run just this preset (repeatable)")
    args = parser.parse_args(argv)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for name in args.only or FIGURES:
        spec = figure_spec(name, n_drops=args.drops, master_seed=args.seed)
        start = time.perf_counter()
        result = run_experiment(spec, workers=args.workers)
        elapsed = time.perf_counter() - start

        path = out_dir / f"{name}.csv"
        write_csv(result, path)
        print(f"{name}: {len(result.rows)} rows -> {path} ({elapsed:.1f}s)")
        if result.traces:
            trace_path = out_dir / f"{name}_traces.csv"
            write_trace_csv(result, trace_path)
            print(f"{name}: {len(result.traces)} trace points -> {trace_path}")

        for value, scheme, mean, se, n_conv, n_total in result.aggregates():
            print(f"  {spec.sweep_axis}={value:g} {scheme}: "
                  f"{mean:.2f} Mbps (SE {se:.2f}, {n_conv}/{n_total} converged)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
