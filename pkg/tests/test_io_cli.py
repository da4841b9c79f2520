import json

import numpy as np
import pytest

from jko_corrosion.core import ConfigError
from jko_corrosion.io_cli import (CSV_COLUMNS, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, EXIT_STRICT,
                                  emit_config, main, parse_config, refinement_study, run_simulation)

from conftest import DEFAULT_CONFIG

SHORT = DEFAULT_CONFIG.replace("n_cells = 200", "n_cells = 40").replace("t_final = 0.1", "t_final = 0.005")


def _edit(text, key, value):
    lines = [ln for ln in text.splitlines() if not ln.startswith(key + " ")]
    if value is not None:
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def test_parse_default(default_config):
    cfg = default_config
    assert cfg.model.lam == 1.0 and cfg.discretization.n_cells == 200
    assert cfg.n_steps == 100
    assert cfg.solver.max_iters == 500 and cfg.outputs.sample_every == 1
    assert not cfg.flags.strict


def test_comments_and_blank_lines_are_ignored():
    text = "# header\n\n" + DEFAULT_CONFIG.replace("model.beta = 0.2", "model.beta = 0.2  # note")
    assert parse_config(text) == parse_config(DEFAULT_CONFIG)


@pytest.mark.parametrize("key,value,fragment", [
    ("model.beta", "0.8", "beta"),
    ("initial.rho0_value", "0.9", "rho0(0)"),
    ("initial.rho0_value", "1.5", "<= 1"),
    ("initial.rho0_value", "-0.1", "rho0"),
    ("discretization.tau", "1.5", "tau"),
    ("discretization.n_cells", "0", "n_cells"),
    ("initial.rho0_kind", "spline", "rho0_kind"),
    ("model.lambda", "abc", "model.lambda"),
])
def test_rejections(key, value, fragment):
    with pytest.raises(ConfigError, match=fragment.replace("(", r"\(").replace(")", r"\)")):
        parse_config(_edit(DEFAULT_CONFIG, key, value))


def test_missing_key_is_named():
    with pytest.raises(ConfigError, match="missing key: model.lambda"):
        parse_config(_edit(DEFAULT_CONFIG, "model.lambda", None))


def test_unknown_and_duplicate_keys():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(DEFAULT_CONFIG + "model.gamma = 1\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(DEFAULT_CONFIG + "model.alpha = 2\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(DEFAULT_CONFIG + "foo.bar = 1\n")


def test_affine_and_table_initial_data():
    cfg = parse_config(_edit(_edit(_edit(_edit(DEFAULT_CONFIG, "initial.rho0_value", None),
                                         "initial.rho0_kind", "affine"),
                                   "initial.rho0_left", "0.5"), "initial.rho0_right", "1.0"))
    v = cfg.initial_density().values
    assert v[0] > 0.5 and v[-1] < 1.0 and np.all(np.diff(v) > 0)
    cfg = parse_config(_edit(_edit(_edit(DEFAULT_CONFIG, "initial.rho0_value", None),
                                   "initial.rho0_kind", "table"), "initial.rho0_table", "0.4,0.5,0.9"))
    assert cfg.initial.rho0_table == (0.4, 0.5, 0.9)


def test_emit_parse_round_trip(default_config):
    text = emit_config(default_config)
    assert "derived.rho_plus" in text
    again = parse_config(text)
    assert again == default_config
    assert emit_config(again) == text


def test_zero_horizon_writes_initial_row(tmp_path):
    cfg = parse_config(_edit(SHORT, "discretization.t_final", "0"))
    traj, led, code = run_simulation(cfg, str(tmp_path))
    assert code == EXIT_OK and len(traj) == 1 and led.steps == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 2
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["ledger"]["steps_completed"] == 0


def test_outputs_are_byte_identical(tmp_path):
    cfg = parse_config(SHORT)
    run_simulation(cfg, str(tmp_path / "a"))
    run_simulation(cfg, str(tmp_path / "b"))
    for name in ("trajectory.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_rows_match_trajectory(tmp_path):
    cfg = parse_config(SHORT)
    traj, _, _ = run_simulation(cfg, str(tmp_path))
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()[1:]
    assert len(lines) == len(traj)
    last = dict(zip(CSV_COLUMNS, lines[-1].split(",")))
    assert float(last["X"]) == traj.interface[-1]
    assert float(last["M"]) == traj.masses[-1]


def test_summary_echoes_config(tmp_path):
    cfg = parse_config(SHORT)
    run_simulation(cfg, str(tmp_path))
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary) >= {"config_echo", "ledger", "violations", "timings"}
    echo = summary["config_echo"]
    assert echo["model.lambda"] == 1.0
    assert echo["derived.rho_plus"] == cfg.params.rho_plus


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_exit_codes(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["--config", _write(tmp_path, _edit(SHORT, "model.beta", "0.8"))]) == EXIT_CONFIG
    assert main(["--config", _write(tmp_path, SHORT), "--out-dir", str(tmp_path)]) == EXIT_OK
    stiff = _edit(_edit(SHORT, "solver.max_iters", "1"), "initial.rho0_kind", "affine")
    stiff = _edit(_edit(_edit(stiff, "initial.rho0_value", None), "initial.rho0_left", "0.4"),
                  "initial.rho0_right", "1.0")
    assert main(["--config", _write(tmp_path, stiff), "--out-dir", str(tmp_path)]) == EXIT_SOLVER
    capsys.readouterr()


def test_strict_default_run_reports_log_bound(default_config, default_run, tmp_path):
    # the default data break the literal upper log bound, so strict mode must refuse
    _, _, code, rec = default_run
    assert code == EXIT_OK
    kinds = {v["kind"] for v in rec.hard_violations}
    assert "upper-log-bound" in kinds
    cfg = default_config.replace(flags={"strict": True})
    text = emit_config(cfg)
    assert main(["--config", _write(tmp_path, text), "--out-dir", str(tmp_path)]) == EXIT_STRICT


def test_refinement_of_stationary_data_is_exact():
    cfg = parse_config(_edit(SHORT, "discretization.t_final", "0"))
    rep = refinement_study(cfg, 3)
    assert rep.failed_level is None
    assert np.all(rep.column("l1_to_previous")[1:] == 0.0)


def test_refinement_needs_two_levels():
    with pytest.raises(ValueError):
        refinement_study(parse_config(SHORT), 1)


def test_refinement_cli_writes_table(tmp_path, capsys):
    path = _write(tmp_path, _edit(SHORT, "discretization.t_final", "0.004"))
    assert main(["--config", path, "--refine", "2", "--out-dir", str(tmp_path)]) == EXIT_OK
    table = (tmp_path / "refinement.csv").read_text().splitlines()
    assert table[0].startswith("level,tau,n_cells")
    assert len(table) == 3
    assert (tmp_path / "refinement.plot").exists()
    capsys.readouterr()
