import csv
import json

import pytest
import yaml

from gmwb.cli import main
from gmwb.config import OUTPUT_ENV, PRESETS, ConfigError, build_config, deep_merge
from gmwb.service.schemas import CSV_COLUMNS

SMALL = {"contract": {"maturity_years": 3}, "solver": {"paths": 400, "grid_size": 50},
         "estimator": {"runs": 2, "seed": 5}}


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def test_presets_match_captions():
    t1 = build_config("table1")
    assert (t1.model.r0, t1.contract.penalty, t1.contract.fee) == (0.05, 0.1, 0.0135)
    assert t1.contract_params().g == pytest.approx(0.1)
    t3 = build_config("table3")
    m = t3.model_params()
    assert (m.r0, m.theta, m.kappa, m.sigma_r, m.rho) == (0.05, 0.05, 0.0349, 0.02, 0.3)
    assert t3.contract.fee == 0.01 and t3.estimator.runs == 100
    assert build_config("table2").solver.paths == 10_000
    assert set(PRESETS) == {"table1", "table2", "table3", "custom"}


def test_precedence_flags_over_file_over_preset(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"model": {"sigma_s": 0.1}, "solver": {"paths": 777}}))
    cfg = build_config("table1", path, {"solver": {"paths": 999}})
    assert cfg.model.sigma_s == 0.1  # file beats preset
    assert cfg.solver.paths == 999  # flag beats file
    assert cfg.contract.fee == 0.0135  # preset default survives
    assert cfg.preset == "table1"


def test_preset_named_in_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("preset: table3\n")
    assert build_config(file=path).model.rate_mode == "vasicek"


@pytest.mark.parametrize("data,field", [
    ({"model": {"sigma_s": -0.1}}, "model.sigma_s"),
    ({"solver": {"bogus": 1}}, "solver.bogus"),
    ({"solver": {"basis": "nonexistent"}}, "solver"),
    ({"estimator": {"runs": 0}}, "estimator.runs"),
])
def test_invalid_fields_are_named(data, field):
    with pytest.raises(ConfigError) as err:
        build_config(None, None, data)
    assert err.value.field == field


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        build_config(file=tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        build_config(file=bad)


def test_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert build_config().output_dir() == tmp_path / "env"
    assert build_config(overrides={"output": {"dir": "x"}}).output_dir().name == "x"


def test_deep_merge_does_not_mutate():
    base = {"a": {"b": 1, "c": 2}}
    out = deep_merge(base, {"a": {"b": 5}})
    assert out == {"a": {"b": 5, "c": 2}} and base["a"]["b"] == 1


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_csv_sidecar_and_log(small_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", str(small_cfg), "--algo", "surface_now", "--out", str(out)])
    assert code == 0
    rows = _rows(out / "results.csv")
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [r[CSV_COLUMNS.index("kind")] for r in rows[1:]] == ["lower", "upper"]
    fp = rows[1][0]
    side = json.loads((out / f"{fp}.json").read_text())
    assert side["config"]["solver"]["algorithm"] == "surface_now"
    assert (out / "gmwb.log").exists()
    assert "results appended" in capsys.readouterr().out


def test_identical_runs_give_identical_rows(small_cfg, tmp_path):
    out = tmp_path / "out"
    for _ in range(2):
        assert main(["run", "--config", str(small_cfg), "--out", str(out), "--seed", "3"]) == 0
    rows = _rows(out / "results.csv")
    assert rows[0] == list(CSV_COLUMNS)
    assert len(rows) == 3  # single header, appended rows
    clock = CSV_COLUMNS.index("runtime_s")
    strip = [r[:clock] + r[clock + 1:] for r in rows[1:]]
    assert strip[0] == strip[1]


def test_invalid_sigma_exit_code(capsys):
    assert main(["run", "--sigma", "-0.1"]) == 2
    assert "model.sigma_s" in capsys.readouterr().err


def test_unwritable_output(small_cfg, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", str(small_cfg), "--out", str(blocker / "sub")]) == 4


def test_unknown_suite_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["verify", "everything"])
    assert err.value.code == 2


def test_fair_fee_command(small_cfg, capsys):
    assert main(["fair-fee", "--config", str(small_cfg), "--paths", "2000"]) == 0
    assert "alpha* =" in capsys.readouterr().out


def test_fee_bracket_failure_exit_code(small_cfg):
    assert main(["fair-fee", "--config", str(small_cfg), "--lo", "0.3", "--hi", "0.4"]) == 3
