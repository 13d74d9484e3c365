"""Experiment drivers behind the command-line runner.

Random streams are keyed by ``(seed, iteration, ...)`` so a run is a pure
function of its configuration, independent of the thread count.
"""

from __future__ import annotations

import json
import logging
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .basis import gaussian_kernel_basis
from .config import ExperimentConfig, canonical_json
from .langevin import (
    LangevinConfig,
    double_well,
    equilibrium_reference,
    fpe_step,
    ginzburg_landau,
    marginal_error,
)
from .quantum import (
    IsingModel,
    afqmc_step,
    block_fields,
    build_hs,
    energy_mixed,
    energy_symmetric,
    lanczos_oracle,
    particle_sum_step,
    random_initial_state,
    uniform_reference,
)
from .sampler import marginal_density
from .sketch import make_cluster_sketch, make_random_sketch

log = logging.getLogger(__name__)

_INIT_STREAM = 1
_SKETCH_STREAM = 2


def fmt(v) -> str:
    """17 significant digits, the CSV float format."""
    return f"{float(v):.17g}"


def write_csv(path: Path, header: list[str], rows: list[list], comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in r) + "\n")


def git_hash() -> str | None:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).resolve().parent,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def bond_string(dims) -> str:
    return ";".join(str(int(r)) for r in dims)


@dataclass
class RunResult:
    out_dir: Path
    summary: dict = field(default_factory=dict)
    wall_times: list = field(default_factory=list)


def model_for(cfg: ExperimentConfig) -> IsingModel:
    if cfg.kind == "ising-1d":
        return IsingModel.ring(cfg.d, cfg.h, cfg.coupling)
    return IsingModel.lattice(cfg.rows, cfg.cols, cfg.h, cfg.coupling)


def ground_energy(cfg: ExperimentConfig, cache_dir: Path | None = None) -> float | None:
    """Lanczos ground energy (d <= 16), cached as a one-row CSV."""
    model = model_for(cfg)
    if model.d > 16:
        return None
    key = canonical_json({"kind": cfg.kind, "d": model.d, "h": cfg.h, "coupling": cfg.coupling, "rows": cfg.rows, "cols": cfg.cols})
    from .langevin import config_hash

    h = config_hash(json.loads(key))
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"lanczos_{h}.csv"
        if path.exists():
            rows = [r for r in path.read_text().splitlines() if r and not r.startswith("#")]
            return float(rows[1])
    e0, _ = lanczos_oracle(model)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(path, ["energy"], [[e0]], comment=f"seed=none config_hash={h} config={key}")
    return e0


def run_quantum(cfg: ExperimentConfig, out_dir: Path, threads: int = 1, reference_energy: float | None = None) -> RunResult:
    model = model_for(cfg)
    d = model.d
    hs = build_hs(model, cfg.dt)
    seed = int(cfg.seed)
    state = random_initial_state(d, cfg.initial_rank, np.random.default_rng([seed, _INIT_STREAM]))
    sk_cfg = cfg.sketch
    comp = cfg.compressor
    sketch = make_random_sketch([2] * d, sk_cfg["size"], seed=[seed, _SKETCH_STREAM])
    ref_state = uniform_reference(d)
    energy_rows, trace_rows, walls = [], [], []
    mixed = []
    window = cfg.window
    for it in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        k = block_fields(hs, cfg.N, seed, it)
        if comp["kind"] == "sketch":
            if sk_cfg.get("redraw"):
                sketch = make_random_sketch([2] * d, sk_cfg["size"], seed=[seed, _SKETCH_STREAM, it])
            state, info = afqmc_step(
                state, model, hs, cfg.N, sketch, cfg.svd_threshold, None,
                strang=cfg.strang, max_rank=cfg.max_rank, fields=k, threads=threads,
            )
            discarded = max(
                (float(x[0] / s[0]) for x, s in zip(info.trim.discarded, info.trim.kept) if len(x)), default=0.0
            )
        else:
            state = particle_sum_step(
                state, model, hs, cfg.N, comp["max_rank"], None, round_tol=comp.get("round_tol", 0.0), fields=k
            )
            discarded = float("nan")
        e_sym = energy_symmetric(state, model)
        try:
            e_mix = energy_mixed(state, ref_state, model)
        except ZeroDivisionError:
            e_mix = float("nan")
        mixed.append(e_mix)
        e_avg = float(np.nanmean(mixed[-window:]))
        walls.append(time.perf_counter() - t0)
        energy_rows.append([str(it), e_sym, e_mix, e_avg])
        trace_rows.append([str(it), str(max(state.bond_dims, default=1)), bond_string(state.bond_dims), discarded])
        log.info("iteration %d  E_sym %.6f  E_mixed %.6f  bonds %s", it, e_sym, e_mix, bond_string(state.bond_dims))
    write_csv(out_dir / "energy.csv", ["iteration", "E_symmetric", "E_mixed", "E_mixed_avg"], energy_rows)
    write_csv(out_dir / "trace.csv", ["iteration", "max_bond", "bond_dims", "max_discarded_ratio"], trace_rows)
    from .io import save_tt

    save_tt(out_dir / "final_state.tt", state)
    e_sym_all = np.array([r[1] for r in energy_rows])
    tail = e_sym_all[-window:]
    summary = {
        "final_E_symmetric": float(e_sym_all[-1]),
        "window_mean_E_symmetric": float(tail.mean()),
        "window_std_E_symmetric": float(tail.std()),
        "window_mean_E_mixed": float(np.nanmean(mixed[-window:])),
        "window": window,
        "final_bond_dims": list(state.bond_dims),
    }
    if reference_energy is not None:
        summary["reference_energy"] = reference_energy
        summary["window_rel_error_symmetric"] = abs(summary["window_mean_E_symmetric"] - reference_energy) / abs(reference_energy)
        summary["final_rel_error_symmetric"] = abs(summary["final_E_symmetric"] - reference_energy) / abs(reference_energy)
    return RunResult(out_dir, summary, walls)


def potential_for(cfg: ExperimentConfig):
    if cfg.kind == "double-well":
        return double_well(cfg.d, cfg.coef)
    return ginzburg_landau(cfg.d, cfg.lam)


def references_for(cfg: ExperimentConfig, basis, cache_dir: Path | None):
    ref = dict(cfg.reference)
    method = ref.pop("method", "auto")
    ref_cache = ref.pop("cache_dir", None) or cache_dir
    if method in ("auto", "quadrature"):
        method = "mc"
    return equilibrium_reference(potential_for(cfg), cfg.beta, basis, cfg.modes, cache_dir=ref_cache, method=method, **ref)


def run_langevin(cfg: ExperimentConfig, out_dir: Path, threads: int = 1, cache_dir: Path | None = None) -> RunResult:
    b = cfg.basis
    basis = gaussian_kernel_basis(n=b["n"], M=cfg.M, dx=b["dx"], quad_order=b["quad_order"])
    pot = potential_for(cfg)
    lcfg = LangevinConfig(beta=cfg.beta, dt=cfg.dt, N=cfg.N, M=cfg.M, substeps=cfg.substeps)
    sketch = make_cluster_sketch(basis, cfg.sketch["c"], cfg.d)
    refs = references_for(cfg, basis, cache_dir)
    modes = list(cfg.modes)
    snapshots = set(cfg.snapshots) | {cfg.iterations}
    seed = int(cfg.seed)
    density = None
    rows, walls, clamps = [], [], []
    errors = {m: [] for m in modes}
    x = basis.nodes
    for it in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng([seed, it])
        density, info = fpe_step(density, pot, lcfg, basis, sketch, cfg.svd_threshold, rng, max_rank=cfg.max_rank)
        walls.append(time.perf_counter() - t0)
        clamps.append(info.clamped_fraction)
        row = [str(it)]
        for m in modes:
            e = marginal_error(density, refs[m], m, basis)
            errors[m].append(e)
            row.append(e)
        row += [info.clamped_fraction, str(max(density.bond_dims, default=1)), bond_string(density.bond_dims)]
        rows.append(row)
        log.info("iteration %d  errors %s  clamped %.3g", it, [f"{errors[m][-1]:.4f}" for m in modes], info.clamped_fraction)
        if it in snapshots:
            for m in modes:
                est = np.real(marginal_density(density, m, basis, x))
                write_csv(
                    out_dir / f"marginals_mode{m}_iter{it}.csv",
                    ["x", "reference", "tt"],
                    [[xi, ri, ei] for xi, ri, ei in zip(x, refs[m](x), est)],
                )
    header = ["iteration"] + [f"err_mode{m}" for m in modes] + ["clamped_fraction", "max_bond", "bond_dims"]
    write_csv(out_dir / "trace.csv", header, rows)
    from .io import save_tt

    save_tt(out_dir / "final_density.tt", density)
    summary = {
        "final_errors": {str(m): errors[m][-1] for m in modes},
        "errors": {str(m): errors[m] for m in modes},
        "max_clamped_fraction": float(max(clamps)),
        "mean_clamped_fraction": float(np.mean(clamps)),
        "reference_source": {str(m): refs[m].source for m in modes},
        "final_bond_dims": list(density.bond_dims),
    }
    return RunResult(out_dir, summary, walls)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, threads: int | None = None, cache_dir=None) -> RunResult:
    out = Path(out_dir or os.environ.get("TTSKETCH_OUTPUT_DIR") or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = int(threads or cfg.threads or 1)
    t0 = time.perf_counter()
    if cfg.is_quantum:
        e0 = ground_energy(cfg, cache_dir)
        res = run_quantum(cfg, out, threads, e0)
    else:
        res = run_langevin(cfg, out, threads, cache_dir)
    write_csv(out / "timing.csv", ["iteration", "wall_time"], [[str(i + 1), w] for i, w in enumerate(res.wall_times)])
    meta = {
        "config": json.loads(cfg.canonical()),
        "config_canonical": cfg.canonical(),
        "resolved": cfg.values,
        "git_hash": git_hash(),
        "version": __version__,
        "numpy": np.__version__,
        "threads": threads,
        "wall_time_total": time.perf_counter() - t0,
        "summary": res.summary,
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n")
    return res
