"""Command line entry point: ``rlmac {run,sweep,validate}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import MACS, ConfigError, ScenarioConfig, config_from_dict, parse_config
from .harness import export_metrics, export_sweep, run_scenario, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0,1,5"`` or ``"0-9"`` (inclusive range), combinable with commas."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                lo_i, hi_i = int(lo), int(hi)
                if hi_i < lo_i:
                    raise ValueError
                seeds.extend(range(lo_i, hi_i + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError("--seeds", f"cannot parse seed list {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise ConfigError("--seeds", "need at least one non-negative seed")
    return seeds


def _load(args) -> ScenarioConfig:
    cfg = parse_config(args.config)
    if args.mac_override:
        raw = dict(cfg.raw)
        raw["mac"] = args.mac_override
        cfg = config_from_dict(raw)
    return cfg


def _seeds(args, cfg: ScenarioConfig) -> list[int]:
    if args.seed is not None and args.seeds is not None:
        raise ConfigError("--seeds", "give either --seed or --seeds")
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "seed must be non-negative")
        return [args.seed]
    if args.seeds is not None:
        return parse_seeds(args.seeds)
    return list(cfg.seeds)


def _cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"ok: {cfg.name} mac={cfg.mac} nodes={len(cfg.topology.nodes)} duration={cfg.duration}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _load(args)
    seeds = _seeds(args, cfg)
    out = Path(args.out or cfg.output)
    for seed in seeds:
        series, summary = run_scenario(cfg, seed)
        paths = export_metrics(series, out, summary, stem=f"{cfg.name}_seed{seed}")
        conv = summary.convergence if summary.convergence is not None else "-"
        print(f"seed={seed} status={summary.status} convergence={conv} mean_S={summary.mean_S:.4f} "
              f"-> {paths[0]}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    seeds = _seeds(args, cfg)
    axis = args.axis or (cfg.sweep or {}).get("axis")
    values = None
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError:
            raise ConfigError("--values", f"cannot parse values {args.values!r}") from None
    elif cfg.sweep is not None and axis == cfg.sweep["axis"]:
        values = cfg.sweep["values"]
    if axis is None or values is None:
        raise ConfigError("/sweep", "sweep needs an axis and values (config 'sweep' or --axis/--values)")
    result = run_sweep(cfg, axis, values, seeds, workers=args.workers)
    paths = export_sweep(result, Path(args.out or cfg.output), stem=f"{cfg.name}_sweep_{axis}")
    for row in result.aggregate:
        print(f"{axis}={row['value']:g} mean_S={row['mean_S_mean']:.4f} converged={row['converged']}/{row['n']}")
    print(f"-> {paths[0]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlmac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, seeds=True):
        sp.add_argument("--config", required=True, help="scenario JSON file")
        sp.add_argument("--mac-override", choices=MACS, help="replace the configured mac")
        if seeds:
            sp.add_argument("--seed", type=int, help="single seed")
            sp.add_argument("--seeds", help="seed list, e.g. 0,1,2 or 0-9")
            sp.add_argument("--out", help="output directory (default: config 'output')")

    common(sub.add_parser("validate", help="check a scenario file"), seeds=False)
    common(sub.add_parser("run", help="run a scenario for each seed"))
    sw = sub.add_parser("sweep", help="sweep one parameter axis")
    common(sw)
    sw.add_argument("--axis", choices=("load", "K", "per", "n_nodes"))
    sw.add_argument("--values", help="comma separated axis values")
    sw.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    return p


_COMMANDS = {"validate": _cmd_validate, "run": _cmd_run, "sweep": _cmd_sweep}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors count as config errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
