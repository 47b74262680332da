import csv
import io
import math
from dataclasses import replace

import pytest
import yaml

from hvsense import cli
from hvsense.experiments import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    run_experiment,
    validate_config,
)


def small(**kw):
    base = dict(values=(4, 6), trials=3, scenarios=("highway",), seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_empty_file_gives_defaults():
    cfg = validate_config("")
    assert cfg == ExperimentConfig()
    assert (cfg.carrier_hz, cfg.bandwidth_hz) == (5.9e9, 100e6)
    assert (cfg.n_rx, cfg.n_tx, cfg.tx_power_dbm) == (20, 20, 23.0)
    assert (cfg.length_m, cfg.width_m, cfg.distance_m) == (3.0, 6.0, 50.0)
    echoed = yaml.safe_load(cfg.echo())
    assert echoed["radio"] == {"carrier_hz": 5.9e9, "bandwidth_hz": 1e8, "n_rx": 20, "n_tx": 20, "tx_power_dbm": 23.0}


def test_echo_roundtrips():
    cfg = validate_config("sweep: {variable: distance, values: [30, 50]}\ntrials: 7\nmode: multi\n")
    assert validate_config(cfg.echo()) == cfg


def test_trials_zero_is_range_error():
    with pytest.raises(ConfigError) as err:
        validate_config("trials: 0")
    assert any(p.startswith("trials:") for p in err.value.problems)


def test_solver_keys_reach_the_solver():
    cfg = validate_config("solver: {max_dimension_m: 40, grid_step_deg: 0.25}")
    assert cfg.solver().max_dimension == 40.0
    assert cfg.solver().grid_step == pytest.approx(math.radians(0.25))
    with pytest.raises(ConfigError, match=r"solver\.max_dimension_m"):
        validate_config("solver: {max_dimension_m: 0}")


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="foo"):
        validate_config("foo: 1")
    with pytest.raises(ConfigError, match=r"radio\.foo"):
        validate_config("radio: {foo: 1}")


def test_problems_collected_together():
    text = "trials: -1\nmode: triple\nradio: {n_rx: 2.5}\nfoo: 1\nsweep: {values: []}\n"
    with pytest.raises(ConfigError) as err:
        validate_config(text)
    joined = "\n".join(err.value.problems)
    for key in ("trials", "mode", "radio.n_rx", "foo", "sweep.values"):
        assert key in joined
    assert len(err.value.problems) >= 5


def test_type_and_document_errors():
    with pytest.raises(ConfigError, match="expected integer"):
        validate_config("trials: ten")
    with pytest.raises(ConfigError, match="expected integer"):
        validate_config("seed: true")
    with pytest.raises(ConfigError, match="top level"):
        validate_config("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="YAML"):
        validate_config("trials: [1,")
    with pytest.raises(ConfigError, match="unknown scenario"):
        validate_config("scenarios: [urban]")


def test_multi_below_six_paths_always_fails(tmp_path):
    cfg = small(mode="multi", values=(5,), trials=10)
    res = run_experiment(cfg, output=str(tmp_path))
    assert all(t.failed for t in res.trials)
    assert {t.reason for t in res.trials} == {"infeasible: P<6"}
    (point,) = res.points
    assert point.failure_rate == 1.0


def test_single_noiseless_row_is_reproducible(tmp_path):
    cfg = small(values=(6,), trials=1, noise=False)
    run_experiment(cfg, output=str(tmp_path / "a"))
    run_experiment(cfg, output=str(tmp_path / "b"))
    text = (tmp_path / "a" / "trials.csv").read_text()
    assert text == (tmp_path / "b" / "trials.csv").read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 1 and tuple(rows[0]) == CSV_COLUMNS
    row = rows[0]
    assert (row["seed"], row["scenario"], row["P"], row["failed"]) == ("5", "highway", "6", "0")
    assert float(row["error_m2"]) <= 1e-6


def test_csv_independent_of_job_count(tmp_path):
    cfg = small(trials=4, scenarios=("highway", "rural"))
    run_experiment(cfg, output=str(tmp_path / "one"), jobs=1)
    run_experiment(cfg, output=str(tmp_path / "two"), jobs=2)
    for name in ("trials.csv", "summary.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    # the summary differs only in the echoed output directory
    one = (tmp_path / "one" / "summary.txt").read_text()
    assert one.replace(str(tmp_path / "one"), str(tmp_path / "two")) == (tmp_path / "two" / "summary.txt").read_text()


def test_rows_sorted_and_seeded(tmp_path):
    cfg = small(trials=3, scenarios=("rural", "highway"))
    res = run_experiment(cfg, output=str(tmp_path))
    keys = [(t.scenario, t.requested, t.seed) for t in res.trials]
    assert keys == [(s, v, 5 + i) for s in ("rural", "highway") for v in (4, 6) for i in range(3)]


def test_echo_matches_values_used(tmp_path):
    # mutate each knob that reaches the trials and check both the echo and the outcome move
    base = small(values=(6,), trials=2)
    ref = run_experiment(base, output=str(tmp_path / "ref"))
    mutations = {
        "seed": 11,
        "distance_m": 35.0,
        "tx_power_dbm": 10.0,
        "n_rx": 8,
        "width_m": 4.0,
    }
    for key, value in mutations.items():
        cfg = replace(base, **{key: value})
        if key == "width_m":
            cfg = replace(cfg, mode="multi", values=(8,))
        out = tmp_path / key
        res = run_experiment(cfg, output=str(out))
        echoed = validate_config((out / "summary.txt").read_text().split("# effective configuration\n", 1)[1])
        assert echoed == replace(cfg, output=str(out))
        if key != "width_m":
            assert [t.row() for t in res.trials] != [t.row() for t in ref.trials], key


def test_summary_contents(tmp_path):
    res = run_experiment(small(trials=5), output=str(tmp_path))
    summary = list(csv.DictReader(io.StringIO((tmp_path / "summary.csv").read_text())))
    assert [r["value"] for r in summary] == ["4", "6"]
    for r, p in zip(summary, res.points):
        assert int(r["trials"]) == 5 and float(r["failure_rate"]) == p.failure_rate
    assert "effective configuration" in (tmp_path / "summary.txt").read_text()


def test_unwritable_output_fails_before_trials(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("")
    calls = []
    monkeypatch.setattr("hvsense.experiments._trial_job", lambda job: calls.append(job))
    with pytest.raises(OSError):
        run_experiment(small(), output=str(blocker / "sub"))
    assert calls == []


def test_distance_sweep_runs(tmp_path):
    cfg = small(sweep="distance", values=(30, 60), trials=3, paths=None)
    res = run_experiment(cfg, output=str(tmp_path))
    assert sorted({t.distance_m for t in res.trials}) == [30.0, 60.0]
    assert all(t.requested is None for t in res.trials)


# -- command line ---------------------------------------------------------


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_cli_success(tmp_path, capsys):
    cfg = write(tmp_path, "sweep: {values: [6]}\ntrials: 2\nscenarios: [rural]\n")
    out = tmp_path / "out"
    assert cli.main([cfg, "-o", str(out)]) == 0
    assert (out / "trials.csv").exists()
    assert "effective configuration" in capsys.readouterr().out
    assert yaml.safe_load((out / "summary.txt").read_text().split("# effective configuration\n")[1])["output"] == str(out)


def test_cli_config_errors(tmp_path, capsys):
    assert cli.main([write(tmp_path, "foo: 1\ntrials: 0\n")]) == 2
    err = capsys.readouterr().err
    assert "foo" in err and "trials" in err
    assert cli.main([str(tmp_path / "missing.yaml")]) == 2
    assert cli.main(["-j", "0", write(tmp_path, "", "empty.yaml")]) == 2


def test_cli_runtime_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = write(tmp_path, "trials: 1\nsweep: {values: [4]}\n")
    assert cli.main([cfg, "-o", str(blocker / "out")]) == 3
    assert "output error" in capsys.readouterr().err


def test_cli_print_config(tmp_path, capsys):
    assert cli.main([write(tmp_path, "trials: 9\n"), "--print-config"]) == 0
    assert yaml.safe_load(capsys.readouterr().out)["trials"] == 9
