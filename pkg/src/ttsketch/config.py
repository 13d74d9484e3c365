"""Experiment configuration files (YAML) and their validation.

Schema (keys marked * are required for the listed experiments)::

    experiment*      ising-1d | ising-2d | double-well | ginzburg-landau
    iterations*      int >= 1
    N*               particles per iteration, int >= 1
    dt*              outer time step
    seed             int (default 0)
    output_dir       path (default "runs/<experiment>")
    svd_threshold    relative singular-value cutoff
    max_rank         optional cap on sketched bond dimensions

    # quantum
    d*               sites (ising-1d)
    rows*, cols*     lattice shape (ising-2d)
    h                transverse field (default 1.0)
    coupling         bond strength (default 1.0)
    sketch           {kind: random, size: 60, redraw: false}
    compressor       {kind: sketch} | {kind: add-and-round, max_rank: 100}
    initial_rank     bond rank of the random start state (default 10)
    window           trailing window for averaged estimators (default 50)
    strang           symmetric splitting (default false)

    # langevin
    d*               dimension
    beta*            inverse temperature
    M                half-width of the box (default 2.5)
    substeps         Euler-Maruyama substeps per dt (default 1)
    basis            {n: 20, dx: null, quad_order: 64}
    sketch           {kind: cluster, c: 1}
    coef             double-well quadratic coefficient (default 0.3)
    lam              Ginzburg-Landau lambda (default 0.03)
    modes            0-based modes whose marginals are tracked (default [0])
    snapshots        iterations whose marginal tables are written
    reference        {method: auto|mc|transfer, cache_dir, particles, dt, t_end, seed}
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

QUANTUM = ("ising-1d", "ising-2d")
LANGEVIN = ("double-well", "ginzburg-landau")

_COMMON = {
    "experiment": None,
    "iterations": None,
    "N": None,
    "dt": None,
    "seed": 0,
    "output_dir": None,
    "svd_threshold": None,
    "max_rank": None,
    "threads": 1,
}

_QUANTUM = {
    "d": None,
    "rows": None,
    "cols": None,
    "h": 1.0,
    "coupling": 1.0,
    "sketch": {"kind": "random", "size": 60, "redraw": False},
    "compressor": {"kind": "sketch"},
    "initial_rank": 10,
    "window": 50,
    "strang": False,
    "svd_threshold": 1e-3,
}

_LANGEVIN = {
    "d": None,
    "beta": None,
    "M": 2.5,
    "substeps": 1,
    "basis": {"n": 20, "dx": None, "quad_order": 64},
    "sketch": {"kind": "cluster", "c": 1},
    "coef": 0.3,
    "lam": 0.03,
    "modes": [0],
    "snapshots": [],
    "reference": {"method": "auto", "cache_dir": None},
    "svd_threshold": 3e-2,
}

_REQUIRED = {
    "ising-1d": ("iterations", "N", "dt", "d"),
    "ising-2d": ("iterations", "N", "dt", "rows", "cols"),
    "double-well": ("iterations", "N", "dt", "d", "beta"),
    "ginzburg-landau": ("iterations", "N", "dt", "d", "beta"),
}

_NESTED = {
    "sketch": {"kind", "size", "redraw", "c"},
    "compressor": {"kind", "max_rank", "round_tol"},
    "basis": {"n", "dx", "quad_order"},
    "reference": {"method", "cache_dir", "particles", "dt", "t_end", "seed", "bins"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    values: dict

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    @property
    def kind(self) -> str:
        return self.values["experiment"]

    @property
    def is_quantum(self) -> bool:
        return self.kind in QUANTUM

    def canonical(self) -> str:
        """Canonical serialization of the file as written (before defaults)."""
        return canonical_json(self.raw)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        for k, v in kw.items():
            if v is not None:
                raw[k] = v
        return validate(raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def parse_compressor(text: str) -> dict:
    """``sketch`` or ``add-and-round:100`` (command-line form)."""
    if text == "sketch":
        return {"kind": "sketch"}
    if text.startswith("add-and-round"):
        _, _, rank = text.partition(":")
        try:
            return {"kind": "add-and-round", "max_rank": int(rank or 100)}
        except ValueError:
            raise ConfigError(f"bad compressor rank in {text!r}") from None
    raise ConfigError(f"unknown compressor {text!r}")


def _merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = sorted(set(given) - set(_NESTED[where]))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    out = dict(defaults)
    out.update(given)
    return out


def _positive_int(values: dict, key: str):
    v = values[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"{key} must be an integer >= 1, got {v!r}")


def _positive(values: dict, key: str):
    v = values[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise ConfigError(f"{key} must be a positive number, got {v!r}")


def validate(raw: Any) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    exp = raw.get("experiment")
    if exp is None:
        raise ConfigError("missing required key: experiment")
    if exp not in QUANTUM + LANGEVIN:
        raise ConfigError(f"unknown experiment {exp!r}; expected one of {', '.join(QUANTUM + LANGEVIN)}")
    schema = dict(_COMMON)
    schema.update(_QUANTUM if exp in QUANTUM else _LANGEVIN)
    if exp == "ginzburg-landau":
        schema["svd_threshold"] = 6e-3
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) for {exp}: {', '.join(unknown)}")
    missing = [k for k in _REQUIRED[exp] if raw.get(k) is None]
    if missing:
        raise ConfigError(f"missing required key(s) for {exp}: {', '.join(missing)}")
    values = copy.deepcopy(schema)
    for k, v in raw.items():
        if k in _NESTED:
            if not isinstance(v, dict):
                raise ConfigError(f"{k} must be a mapping")
            values[k] = _merge(schema[k], v, k)
        else:
            values[k] = copy.deepcopy(v)
    for key in ("iterations", "N"):
        _positive_int(values, key)
    _positive(values, "dt")
    _positive(values, "svd_threshold")
    if values["threads"] is not None:
        _positive_int(values, "threads")
    if values["max_rank"] is not None:
        _positive_int(values, "max_rank")
    if exp == "ising-1d":
        _positive_int(values, "d")
    elif exp == "ising-2d":
        _positive_int(values, "rows")
        _positive_int(values, "cols")
        values["d"] = values["rows"] * values["cols"]
    if exp in QUANTUM:
        sk = values["sketch"]
        if sk.get("kind") != "random":
            raise ConfigError("quantum experiments use sketch.kind = random")
        _positive_int(sk, "size")
        comp = values["compressor"]
        if comp.get("kind") not in ("sketch", "add-and-round"):
            raise ConfigError(f"unknown compressor kind {comp.get('kind')!r}")
        if comp["kind"] == "add-and-round":
            comp.setdefault("max_rank", 100)
            _positive_int(comp, "max_rank")
        _positive_int(values, "initial_rank")
        _positive_int(values, "window")
    else:
        _positive_int(values, "d")
        _positive(values, "beta")
        _positive(values, "M")
        _positive_int(values, "substeps")
        sk = values["sketch"]
        if sk.get("kind") != "cluster" or sk.get("c") not in (1, 2):
            raise ConfigError("langevin experiments use sketch.kind = cluster with c in {1, 2}")
        modes = values["modes"]
        if not isinstance(modes, list) or not all(isinstance(m, int) and 0 <= m < values["d"] for m in modes):
            raise ConfigError(f"modes must be a list of 0-based indices below d, got {modes!r}")
        if values["reference"].get("method", "auto") not in ("auto", "mc", "transfer", "quadrature"):
            raise ConfigError(f"unknown reference method {values['reference'].get('method')!r}")
    if values["output_dir"] is None:
        values["output_dir"] = f"runs/{exp}"
    return ExperimentConfig(raw=copy.deepcopy(raw), values=values)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return validate(raw)
