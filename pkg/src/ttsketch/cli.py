"""Command-line entry point: ``ttsketch run|oracle|plot``.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config, parse_compressor
from .langevin import NumericalAbort
from .plot import PlotError, emit_plot
from .sampler import SamplingError
from .sketch import SketchCollapseError

log = logging.getLogger("ttsketch")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load(args) -> "object":
    cfg = load_config(args.config)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        over["threads"] = args.threads
    if getattr(args, "compressor", None) is not None:
        if not cfg.is_quantum:
            raise ConfigError("--compressor applies to quantum experiments only")
        over["compressor"] = parse_compressor(args.compressor)
    if getattr(args, "iterations", None) is not None:
        over["iterations"] = args.iterations
    return cfg.with_overrides(**over) if over else cfg


def _output_dir(args, cfg) -> Path:
    return Path(args.out or os.environ.get("TTSKETCH_OUTPUT_DIR") or cfg.output_dir)


def cmd_run(args) -> int:
    from .experiments import run_experiment

    cfg = _load(args)
    out = _output_dir(args, cfg)
    stage = "run"
    try:
        stage = "quantum solver" if cfg.is_quantum else "langevin solver"
        res = run_experiment(cfg, out, threads=cfg.threads, cache_dir=args.cache_dir)
        if args.plot:
            stage = "plot"
            _plots(cfg, out, res.summary)
    except SketchCollapseError as exc:
        print(f"error: numerical abort in {stage} at bond {exc.bond}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SamplingError as exc:
        print(f"error: numerical abort in {stage} (sampling) at mode {exc.mode}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NumericalAbort as exc:
        where = f" at mode {exc.mode}" if exc.mode is not None else ""
        where += f" at bond {exc.bond}" if exc.bond is not None else ""
        print(f"error: numerical abort in {stage}{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps({"output_dir": str(out), "summary": _brief(res.summary)}, sort_keys=True))
    return 0


def _brief(summary: dict) -> dict:
    return {k: v for k, v in summary.items() if k != "errors"}


def _plots(cfg, out: Path, summary: dict) -> None:
    if cfg.is_quantum:
        emit_plot(out / "energy.csv", "energy", summary.get("reference_energy"))
    else:
        emit_plot(out / "trace.csv", "error")
        for p in sorted(out.glob("marginals_mode*_iter*.csv")):
            emit_plot(p, "marginal")


def cmd_oracle(args) -> int:
    from .basis import gaussian_kernel_basis
    from .experiments import ground_energy, references_for

    cfg = _load(args)
    cache = Path(args.cache_dir or _output_dir(args, cfg))
    if cfg.is_quantum:
        e0 = ground_energy(cfg, cache)
        if e0 is None:
            print(f"error: exact ground energy needs d <= 16, got d = {cfg.d}", file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps({"ground_energy": e0, "cache_dir": str(cache)}))
        return 0
    b = cfg.basis
    basis = gaussian_kernel_basis(n=b["n"], M=cfg.M, dx=b["dx"], quad_order=b["quad_order"])
    refs = references_for(cfg, basis, cache)
    print(json.dumps({"modes": sorted(refs), "sources": {str(m): r.source for m, r in refs.items()}, "cache_dir": str(cache)}))
    return 0


def cmd_plot(args) -> int:
    try:
        path = emit_plot(args.csv, args.kind, args.reference, args.out)
    except (PlotError, OSError) as exc:
        print(f"error: plot: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttsketch", description="Tensor-train sketching solvers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-iteration progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="YAML experiment configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--compressor", help="sketch | add-and-round[:max_rank]")
        sp.add_argument("--out", help="output directory (overrides config and TTSKETCH_OUTPUT_DIR)")
        sp.add_argument("--cache-dir", help="where exact/Monte Carlo references are cached")

    r = sub.add_parser("run", help="run an experiment")
    common(r)
    r.add_argument("--iterations", type=int)
    r.add_argument("--plot", action="store_true", help="also write SVG plots")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="compute and cache reference values")
    common(o)
    o.set_defaults(func=cmd_oracle)

    pl = sub.add_parser("plot", help="render a CSV trace to SVG")
    pl.add_argument("csv")
    pl.add_argument("--kind", choices=("energy", "marginal", "error"))
    pl.add_argument("--reference", type=float, help="horizontal reference level")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
