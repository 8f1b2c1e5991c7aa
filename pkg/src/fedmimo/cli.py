"""Command line front end.

Subcommands:
  run              sweep from a flat key=value config file, write CSV
  figure           canned experiment presets (fig2..fig6)
  validate-bounds  sample-check the approximation bounds
  verify-si        Monte Carlo check of the self-interference model

Exit codes: 0 success, 1 configuration error, 2 no feasible run at all.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .algorithms import ScaConfig
from .harness import (
    SCHEMES,
    SWEEP_AXES,
    ExperimentSpec,
    figure_spec,
    run_experiment,
    validate_bounds,
    write_csv,
    write_trace_csv,
)
from .link_model import verify_fd_si_variance
from .scenario import FadingModel, params_from_mapping, PARAM_FIELDS


class ConfigError(Exception):
    pass


_FADING_KEYS = {"shadow_std_db": float, "igi_distance_floor_m": float,
                "normalize_by_noise": None}
_SCA_KEYS = {"max_iters": int, "rel_tol": float, "slack_tol": float,
             "alpha": float, "backend": str}
_HARNESS_KEYS = ("sweep_axis", "sweep_values", "n_drops", "schemes",
                 "master_seed", "output_path")


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {raw!r}")


def parse_config_file(path: str) -> dict[str, str]:
    """Flat 'key = value' lines; '#' starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    mapping: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', "
                              f"got {raw_line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key in mapping:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        mapping[key] = val
    return mapping


def spec_from_mapping(mapping: dict[str, str]) -> ExperimentSpec:
    """Split a flat config into params, fading, loop, and sweep settings."""
    param_kv: dict[str, str] = {}
    fading_kv: dict[str, object] = {}
    sca_kv: dict[str, object] = {}
    harness_kv: dict[str, str] = {}
    for key, val in mapping.items():
        if key in PARAM_FIELDS:
            param_kv[key] = val
        elif key in _FADING_KEYS:
            conv = _FADING_KEYS[key]
            fading_kv[key] = _parse_bool(val) if conv is None else conv(val)
        elif key in _SCA_KEYS:
            sca_kv[key] = _SCA_KEYS[key](val)
        elif key in _HARNESS_KEYS:
            harness_kv[key] = val
        else:
            raise ConfigError(f"unknown config key {key!r}")

    try:
        params = params_from_mapping(param_kv)
        fading = FadingModel(**fading_kv)
        sca = ScaConfig(**sca_kv)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    kwargs: dict = {"params": params, "fading": fading, "sca": sca}
    if "sweep_axis" in harness_kv:
        kwargs["sweep_axis"] = harness_kv["sweep_axis"]
    if "sweep_values" in harness_kv:
        try:
            kwargs["sweep_values"] = tuple(
                float(v) for v in harness_kv["sweep_values"].split(","))
        except ValueError as exc:
            raise ConfigError(f"bad sweep_values: {exc}") from exc
    if "n_drops" in harness_kv:
        kwargs["n_drops"] = int(harness_kv["n_drops"])
    if "schemes" in harness_kv:
        kwargs["schemes"] = tuple(
            s.strip().upper() for s in harness_kv["schemes"].split(","))
    if "master_seed" in harness_kv:
        kwargs["master_seed"] = int(harness_kv["master_seed"])
    if "output_path" in harness_kv:
        kwargs["output_path"] = harness_kv["output_path"]
    try:
        return ExperimentSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _finish_run(spec: ExperimentSpec, out: str | None, workers: int | None) -> int:
    result = run_experiment(spec, workers=workers)
    path = out or spec.output_path or "results.csv"
    write_csv(result, path)
    if spec.collect_traces and result.traces:
        write_trace_csv(result, str(path) + ".trace.csv")
    print(f"wrote {len(result.rows)} rows to {path}")
    print(f"{'sweep':>10} {'scheme':>8} {'mean Mbps':>12} {'se':>8} "
          f"{'converged':>10}")
    for value, scheme, mean, se, n_conv, n_total in result.aggregates():
        print(f"{value:>10g} {scheme:>8} {mean:>12.4f} {se:>8.4f} "
              f"{n_conv:>6}/{n_total}")
    if all(r.status != "converged" for r in result.rows):
        print("no run converged anywhere", file=sys.stderr)
        return 2
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedmimo",
        description="Max-min effective-rate scheduling for cells serving "
                    "FL and regular users",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a sweep from a config file")
    p_run.add_argument("--config", help="flat key=value config file")
    p_run.add_argument("--out", help="output CSV path")
    p_run.add_argument("--drops", type=int, help="override n_drops")
    p_run.add_argument("--workers", type=int, help="worker processes")

    p_fig = sub.add_parser("figure", help="run a canned experiment preset")
    p_fig.add_argument("name", choices=["fig2", "fig3", "fig4", "fig5", "fig6"])
    p_fig.add_argument("--out", help="output CSV path (default <name>.csv)")
    p_fig.add_argument("--drops", type=int, help="override n_drops")
    p_fig.add_argument("--seed", type=int, default=0, help="master seed")
    p_fig.add_argument("--workers", type=int, help="worker processes")

    p_val = sub.add_parser("validate-bounds",
                           help="sample-check the approximation bounds")
    p_val.add_argument("--samples-scalar", type=int, default=10000)
    p_val.add_argument("--samples-rate", type=int, default=1000)
    p_val.add_argument("--seed", type=int, default=0)

    p_si = sub.add_parser("verify-si",
                          help="Monte Carlo check of the SI power model")
    p_si.add_argument("--antennas", type=int, default=64)
    p_si.add_argument("--samples", type=int, default=10000)
    p_si.add_argument("--si-db", type=float, default=20.0)
    p_si.add_argument("--pl-si-db", type=float, default=-81.1846)
    p_si.add_argument("--zeta-sum", type=float, default=1.0)
    p_si.add_argument("--rho-d", type=float, default=10.0)
    p_si.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            mapping = parse_config_file(args.config) if args.config else {}
            spec = spec_from_mapping(mapping)
            if args.drops is not None:
                spec = dataclasses.replace(spec, n_drops=args.drops)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        return _finish_run(spec, args.out, args.workers)

    if args.command == "figure":
        spec = figure_spec(args.name, n_drops=args.drops, master_seed=args.seed)
        out = args.out or f"{args.name}.csv"
        return _finish_run(spec, out, args.workers)

    if args.command == "validate-bounds":
        ok, report = validate_bounds(args.samples_scalar, args.samples_rate,
                                     args.seed)
        print(report)
        return 0 if ok else 1

    if args.command == "verify-si":
        bss = 10.0 ** (args.pl_si_db / 10.0) * 10.0 ** (args.si_db / 10.0)
        empirical, closed = verify_fd_si_variance(
            args.antennas, args.samples, bss, args.zeta_sum,
            rho_d=args.rho_d, seed=args.seed)
        rel = abs(empirical - closed) / closed
        print(f"empirical SI power   {empirical:.6e}")
        print(f"closed-form SI power {closed:.6e}")
        print(f"relative error       {rel:.4%}")
        return 0 if rel <= 0.03 else 1

    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
