import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quafl_sim import ConfigError, RunConfig
from quafl_sim.cli import CSV_COLUMNS, PRESETS, main, parse_config, preset, read_csv, run_grid


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


def small(**kw):
    base = dict(n=6, s=2, K=2, T=8, swt=1.0, sit=0.5, b=12)
    base.update(kw)
    return RunConfig.from_dict(base)


def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config(write_json(tmp_path / "c.json", {"algo": "quafl", "n": 16, "s": 4, "K": 5, "task": "quadratic"}))
    default = RunConfig()
    assert cfg.to_dict() == default.to_dict()


def test_s_exceeds_n():
    with pytest.raises(ConfigError, match="s exceeds n"):
        RunConfig.from_dict({"n": 16, "s": 20})


def test_theorem_eta():
    cfg = RunConfig.from_dict({"n": 16, "s": 4, "eta": "theorem", "T": 2000, "task": "quadratic"})
    eta, _ = cfg.resolve(cfg.task.build(16))
    assert eta == pytest.approx(17 / math.sqrt(2000), rel=1e-15)


@pytest.mark.parametrize("data,path", [
    ({"bogus": 1}, "bogus"),
    ({"task": {"kind": "quadratic", "colour": 1}}, "task.colour"),
    ({"timing": {"rate": 2}}, "timing.rate"),
    ({"task": {"skew": 2.0}}, "task.skew"),
    ({"timing": {"kind": "exponential", "fast_rate": -1.0}}, "timing.fast_rate"),
    ({"K": 0}, "K"),
    ({"b": 40}, "b"),
    ({"b": "float"}, "b"),
    ({"eta": "fast"}, "eta"),
    ({"eta": "theorem", "task": "logistic"}, "eta"),
    ({"T": None}, "T"),
    ({"seeds": []}, "seeds"),
    ({"failure_mode": "panic"}, "failure_mode"),
])
def test_config_errors_carry_field_path(data, path):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(data)
    assert info.value.path == path


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 50),
    frac=st.floats(0, 1),
    K=st.integers(1, 30),
    b=st.one_of(st.integers(1, 32), st.just("lossless")),
    eta=st.one_of(st.floats(0, 1), st.just("theorem")),
    swt=st.floats(0, 100),
    kind=st.sampled_from(["uniform", "exponential"]),
    seeds=st.lists(st.integers(0, 1000), min_size=1, max_size=4),
)
def test_config_round_trip(n, frac, K, b, eta, swt, kind, seeds):
    data = {"n": n, "s": max(1, int(frac * n)), "K": K, "b": b, "eta": eta, "swt": swt,
            "timing": kind, "seeds": seeds}
    cfg = RunConfig.from_dict(data)
    once = cfg.to_dict()
    again = RunConfig.from_dict(json.loads(json.dumps(once))).to_dict()
    assert once == again


def test_flags_override_file(tmp_path, monkeypatch):
    path = write_json(tmp_path / "c.json", {"n": 8, "s": 2, "K": 3, "T": 5, "task": {"kind": "quadratic", "d": 4}})
    out = tmp_path / "out"
    code = main(["--config", str(path), "--K", "2", "--task-d", "3", "--seed-list", "4,5", "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    cfg = summary["configs"][0]["config"]
    assert (cfg["n"], cfg["K"], cfg["task"]["d"], cfg["seeds"]) == (8, 2, 3, [4, 5])
    assert len(summary["runs"]) == 2


def test_cli_reports_config_errors(capsys):
    assert main(["--n", "4", "--s", "5"]) == 2
    assert "s exceeds n" in capsys.readouterr().err
    assert main(["--preset", "no-such"]) == 2
    err = capsys.readouterr().err
    for name in PRESETS:
        assert name in err


def test_print_config(capsys):
    assert main(["--preset", "sweep-K", "--print-config"]) == 0
    cfgs = json.loads(capsys.readouterr().out)
    assert [c["K"] for c in cfgs] == [5, 10, 20]


def test_presets():
    ks = preset("sweep-K")
    assert [c.K for c in ks] == [5, 10, 20]
    rest = [{k: v for k, v in c.to_dict().items() if k != "K"} for c in ks]
    assert rest[0] == rest[1] == rest[2]
    assert [c.s for c in preset("sweep-s")] == [4, 8, 16]
    assert [c.b for c in preset("sweep-b")] == [12, 16, 32]
    assert [c.K for c in preset("cifar-K")] == [3, 9, 15]
    assert [c.s for c in preset("cifar-s")] == [3, 6, 10]
    timing = preset("timing")
    assert [c.algo for c in timing] == ["quafl", "fedavg", "baseline"]
    for c in timing:
        assert c.timing.kind == "exponential"
        assert (c.timing.fast_rate, c.timing.slow_rate, c.timing.slow_fraction) == (0.5, 0.125, 0.25)
    with pytest.raises(ValueError, match="available"):
        preset("sweep-z")


def test_grid_outputs_and_determinism(tmp_path):
    configs = [small(K=k, seeds=[0, 1, 2, 3, 4]) for k in (1, 2, 3)]
    res = run_grid(configs, out_dir=tmp_path / "a")
    assert res.exit_code == 0
    csvs = sorted((tmp_path / "a").glob("*.csv"))
    assert len(csvs) == 15 and len(list((tmp_path / "a").glob("*.json"))) == 1
    summary = json.loads(res.summary_path.read_text())
    cells = [(r["run_id"]) for r in summary["runs"]]
    assert len(cells) == len(set(cells)) == 15
    for c in configs:
        for seed in c.seeds:
            assert c.run_id(seed) in cells
    run_grid(configs, out_dir=tmp_path / "b")
    for p in csvs:
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_parallel_grid_matches_serial(tmp_path):
    configs = [small(K=k, seeds=[0, 1]) for k in (1, 2)]
    run_grid(configs, parallelism=1, out_dir=tmp_path / "serial")
    run_grid(configs, parallelism=2, out_dir=tmp_path / "par")
    for p in (tmp_path / "serial").glob("*.csv"):
        assert p.read_bytes() == (tmp_path / "par" / p.name).read_bytes()


def test_csv_schema(tmp_path):
    res = run_grid([small(seeds=[3])], out_dir=tmp_path)
    rows = read_csv(res.csv_paths[0])
    header = open(res.csv_paths[0]).readline().strip().split(",")
    assert tuple(header) == CSV_COLUMNS
    assert len(rows) == 9
    assert all(r["accuracy"] == "" for r in rows)
    assert [int(r["t"]) for r in rows] == list(range(9))
    assert rows[-1]["cum_bits"] == str(8 * 2 * 2 * (10 * 12 + 128))
    res = run_grid([small(seeds=[3], task={"kind": "logistic", "d": 5, "samples_per_client": 20})], out_dir=tmp_path / "l")
    rows = read_csv(res.csv_paths[0])
    assert all(0.0 <= float(r["accuracy"]) <= 1.0 for r in rows)


def test_strict_failure_exit_code(tmp_path, capsys):
    code = main(["--n", "6", "--s", "3", "--K", "3", "--T", "30", "--b", "2", "--quant-window", "0.001",
                 "--eta", "0.1", "--strict-quantization", "--seed-list", "0,1", "--out", str(tmp_path)])
    assert code != 0
    err = capsys.readouterr().err
    assert "decode failure" in err and "seed 0" in err and "server step" in err
    summary = json.loads((tmp_path / "summary.json").read_text())
    f = summary["failures"][0]
    assert f["seed"] == 0 and f["config"]["failure_mode"] == "strict" and f["t"] >= 0


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("QUAFL_SIM_OUT", str(tmp_path / "env"))
    assert main(["--n", "4", "--s", "2", "--T", "3"]) == 0
    assert (tmp_path / "env" / "summary.json").exists()


def test_cli_flag_types():
    from quafl_sim.cli import build_parser
    from quafl_sim.cli.main import resolve_configs

    args = build_parser().parse_args(["--b", "lossless", "--eta", "theorem", "--T", "100", "--horizon", "none",
                                      "--timing-kind", "exponential", "--algo", "fedavg"])
    (cfg,) = resolve_configs(args)
    assert (cfg.b, cfg.eta, cfg.T, cfg.horizon, cfg.timing.kind, cfg.algo) == (
        "lossless", "theorem", 100, None, "exponential", "fedavg")
