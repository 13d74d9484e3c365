import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from ttsketch.cli import main
from ttsketch.config import ConfigError, canonical_json, load_config, parse_compressor, validate
from ttsketch.plot import PlotError, emit_plot

ROOT = Path(__file__).resolve().parents[1]

QUANTUM = """\
# small ring for fast runs
experiment: ising-1d
d: 6
dt: 0.01
N: 60
iterations: 3
svd_threshold: 1.0e-3
sketch: {kind: random, size: 10}
window: 2
seed: 4
"""

LANGEVIN = """\
experiment: double-well
d: 3
beta: 1.0
dt: 0.02
N: 2000
iterations: 2
snapshots: [1]
modes: [0, 2]
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_cli(*args):
    return main([str(a) for a in args])


def test_quantum_run_artifacts(tmp_path, capsys):
    cfg = write(tmp_path, QUANTUM)
    out = tmp_path / "out"
    assert run_cli("run", cfg, "--out", out, "--plot") == 0
    for name in ("energy.csv", "trace.csv", "timing.csv", "run_meta.json", "final_state.tt", "energy.svg"):
        assert (out / name).exists(), name
    lines = (out / "energy.csv").read_text().splitlines()
    assert lines[0] == "iteration,E_symmetric,E_mixed,E_mixed_avg"
    assert len(lines) == 4
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["summary"]["reference_energy"] < 0
    assert len(meta["summary"]["final_bond_dims"]) == 5
    printed = json.loads(capsys.readouterr().out)
    assert printed["output_dir"] == str(out)


def test_csv_floats_use_17_significant_digits(tmp_path):
    out = tmp_path / "o"
    assert run_cli("run", write(tmp_path, QUANTUM), "--out", out) == 0
    row = (out / "energy.csv").read_text().splitlines()[1].split(",")
    e = float(row[1])
    assert row[1] == f"{e:.17g}"


def test_config_echo_is_canonical(tmp_path):
    cfg = write(tmp_path, QUANTUM)
    out = tmp_path / "o"
    assert run_cli("run", cfg, "--out", out) == 0
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["config_canonical"] == canonical_json(yaml.safe_load(cfg.read_text()))
    assert canonical_json(meta["config"]) == meta["config_canonical"]


def test_same_seed_same_trace(tmp_path):
    cfg = write(tmp_path, QUANTUM)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run_cli("run", cfg, "--out", a) == 0
    assert run_cli("run", cfg, "--out", b) == 0
    assert run_cli("run", cfg, "--out", c, "--threads", "3") == 0
    for name in ("trace.csv", "energy.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (a / name).read_bytes() == (c / name).read_bytes()


def test_seed_flag_changes_trace(tmp_path):
    cfg = write(tmp_path, QUANTUM)
    assert run_cli("run", cfg, "--out", tmp_path / "a") == 0
    assert run_cli("run", cfg, "--out", tmp_path / "b", "--seed", "5") == 0
    assert (tmp_path / "a" / "energy.csv").read_bytes() != (tmp_path / "b" / "energy.csv").read_bytes()
    meta = json.loads((tmp_path / "b" / "run_meta.json").read_text())
    assert meta["config"]["seed"] == 5


def test_compressor_flag_runs_baseline(tmp_path):
    cfg = write(tmp_path, QUANTUM)
    out = tmp_path / "base"
    assert run_cli("run", cfg, "--out", out, "--compressor", "add-and-round:8") == 0
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["resolved"]["compressor"] == {"kind": "add-and-round", "max_rank": 8}
    assert max(meta["summary"]["final_bond_dims"]) <= 8


def test_output_dir_env_override(tmp_path, monkeypatch):
    cfg = write(tmp_path, QUANTUM.replace("iterations: 3", "iterations: 1"))
    env_out = tmp_path / "from_env"
    monkeypatch.setenv("TTSKETCH_OUTPUT_DIR", str(env_out))
    assert run_cli("run", cfg) == 0
    assert (env_out / "energy.csv").exists()
    # explicit flag still wins
    assert run_cli("run", cfg, "--out", tmp_path / "flag") == 0
    assert (tmp_path / "flag" / "energy.csv").exists()


def test_langevin_run_artifacts(tmp_path):
    out = tmp_path / "dw"
    assert run_cli("run", write(tmp_path, LANGEVIN), "--out", out, "--plot") == 0
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "iteration,err_mode0,err_mode2,clamped_fraction,max_bond,bond_dims"
    for m in (0, 2):
        for it in (1, 2):
            assert (out / f"marginals_mode{m}_iter{it}.csv").exists()
            assert (out / f"marginals_mode{m}_iter{it}.svg").exists()
    assert (out / "trace.svg").exists()
    table = (out / "marginals_mode0_iter2.csv").read_text().splitlines()
    assert table[0] == "x,reference,tt"
    assert len(table) == 65


def test_missing_key_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, "experiment: ising-1d\nd: 4\nN: 10\n")
    assert run_cli("run", cfg) == 2
    err = capsys.readouterr().err
    assert "missing required key" in err and "iterations" in err and "dt" in err


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, QUANTUM + "bogus: 1\n")
    assert run_cli("run", cfg) == 2
    assert "bogus" in capsys.readouterr().err


def test_unreadable_config_exits_2(tmp_path):
    assert run_cli("run", tmp_path / "nope.yaml") == 2
    assert run_cli("run", write(tmp_path, "a: [1,\n")) == 2


def test_numerical_abort_exits_3_naming_bond(tmp_path, capsys):
    cfg = write(tmp_path, QUANTUM.replace("svd_threshold: 1.0e-3", "svd_threshold: 2.0"))
    assert run_cli("run", cfg, "--out", tmp_path / "o") == 3
    err = capsys.readouterr().err
    assert "quantum solver" in err and "bond 1" in err


def test_compressor_rejected_for_langevin(tmp_path):
    assert run_cli("run", write(tmp_path, LANGEVIN), "--compressor", "sketch") == 2


def test_oracle_subcommand_caches_energy(tmp_path, capsys):
    cfg = write(tmp_path, QUANTUM)
    assert run_cli("oracle", cfg, "--cache-dir", tmp_path / "cache") == 0
    e0 = json.loads(capsys.readouterr().out)["ground_energy"]
    cached = list((tmp_path / "cache").glob("lanczos_*.csv"))
    assert len(cached) == 1
    assert cached[0].read_text().startswith("# seed=none config_hash=")
    assert run_cli("oracle", cfg, "--cache-dir", tmp_path / "cache") == 0
    assert json.loads(capsys.readouterr().out)["ground_energy"] == e0


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ttsketch", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "run" in res.stdout and "oracle" in res.stdout and "plot" in res.stdout


def test_shipped_configs_validate():
    for p in sorted((ROOT / "configs").glob("*.yaml")):
        cfg = load_config(p)
        assert cfg.iterations >= 1


# ----------------------------------------------------------------------
# config schema


def test_validate_fills_defaults():
    cfg = validate(yaml.safe_load(QUANTUM))
    assert cfg.h == 1.0
    assert cfg.compressor == {"kind": "sketch"}
    assert cfg.output_dir == "runs/ising-1d"
    gl = validate({"experiment": "ginzburg-landau", "d": 16, "beta": 0.125, "dt": 0.002, "N": 10, "iterations": 1})
    assert gl.svd_threshold == 6e-3
    assert gl.lam == 0.03


@pytest.mark.parametrize(
    "patch, needle",
    [
        ({"N": 0}, "N must be"),
        ({"iterations": 1.5}, "iterations must be"),
        ({"experiment": "heisenberg"}, "unknown experiment"),
        ({"compressor": {"kind": "svd"}}, "unknown compressor"),
        ({"sketch": {"size": 10, "colour": 1}}, "unknown key(s) in sketch"),
    ],
)
def test_validate_errors(patch, needle):
    raw = yaml.safe_load(QUANTUM)
    raw.update(patch)
    with pytest.raises(ConfigError) as exc:
        validate(raw)
    assert needle in str(exc.value)


def test_langevin_mode_range():
    raw = yaml.safe_load(LANGEVIN)
    raw["modes"] = [3]
    with pytest.raises(ConfigError, match="modes"):
        validate(raw)


def test_parse_compressor():
    assert parse_compressor("sketch") == {"kind": "sketch"}
    assert parse_compressor("add-and-round") == {"kind": "add-and-round", "max_rank": 100}
    assert parse_compressor("add-and-round:40")["max_rank"] == 40
    with pytest.raises(ConfigError):
        parse_compressor("add-and-round:x")
    with pytest.raises(ConfigError):
        parse_compressor("tucker")


def test_overrides_revalidate():
    cfg = validate(yaml.safe_load(QUANTUM))
    assert cfg.with_overrides(seed=9).seed == 9
    with pytest.raises(ConfigError):
        cfg.with_overrides(N=-1)


# ----------------------------------------------------------------------
# plots


def test_plot_empty_trace_errors_without_file(tmp_path):
    p = tmp_path / "energy.csv"
    p.write_text("")
    with pytest.raises(PlotError):
        emit_plot(p)
    assert not (tmp_path / "energy.svg").exists()
    p.write_text("iteration,E_symmetric\n")
    with pytest.raises(PlotError):
        emit_plot(p, "energy")
    assert not (tmp_path / "energy.svg").exists()
    assert run_cli("plot", p) == 2


def test_plot_single_row_with_reference(tmp_path):
    p = tmp_path / "energy.csv"
    p.write_text("iteration,E_symmetric\n1,-20.1\n")
    svg = emit_plot(p, "energy", reference=-20.4046).read_text()
    assert svg.startswith("<svg")
    assert "stroke-dasharray" in svg
    assert "<circle" in svg or "<polyline" in svg


def test_plot_is_deterministic(tmp_path):
    p = tmp_path / "trace.csv"
    p.write_text("iteration,err_mode0\n1,0.5\n2,0.25\n3,0.125\n")
    a = emit_plot(p).read_bytes()
    b = emit_plot(p).read_bytes()
    assert a == b


def test_plot_rejects_mismatched_kind(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(PlotError):
        emit_plot(p)
    with pytest.raises(PlotError):
        emit_plot(p, "marginal")
    assert run_cli("plot", tmp_path / "missing.csv") == 2
