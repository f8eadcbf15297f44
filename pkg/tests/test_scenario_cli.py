from pathlib import Path

import numpy as np
import pytest

from mvcalc.cli import main
from mvcalc.scenario import ScenarioError, load_scenario, parse_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

TINY = """\
name: tiny
seed: 1
paths: 60
dynamics: {b: "0", sigma: "1", gamma: "1", bounds: [0, 1, 1]}
simulation: {N: 30, h: 0.05, T: 1.0}
fields:
  phi: {gaussian: {center: 0.0, scale: 1.0}}
functionals: [phi, phi^2]
checks: [mean_zero, linear_identity, mass_martingale]
"""


def write(tmp_path, text, name="sc.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, command, config, *extra, out="out"):
    return main([command, "--config", config, "--out", str(tmp_path / out), *extra])


# parsing


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_scenarios_round_trip(path):
    sc = load_scenario(str(path))
    again = parse_scenario(sc.dump())
    assert again.to_dict() == sc.to_dict()
    assert again.dump() == sc.dump()


def test_unknown_key_reports_position():
    with pytest.raises(ScenarioError) as err:
        parse_scenario("name: x\nsimulation:\n  N: 10\n  hh: 0.1\n")
    e = err.value
    assert "hh" in str(e) and e.line == 4 and e.column == 3


def test_yaml_syntax_error_position():
    with pytest.raises(ScenarioError) as err:
        parse_scenario("name: x\nsimulation: {N: 10,\n  h: [\n")
    assert err.value.line is not None and err.value.column is not None


def test_bad_expression_named():
    with pytest.raises(ScenarioError, match="foo"):
        parse_scenario("name: x\ndynamics: {b: 'foo x'}\n")


def test_unknown_field_in_functional():
    with pytest.raises(ScenarioError, match="psi"):
        parse_scenario("name: x\nfields: {phi: 'exp(-x^2)'}\nfunctionals: [psi^2]\n")


def test_unknown_check_rejected():
    with pytest.raises(ScenarioError):
        parse_scenario("name: x\nchecks: [nonsense]\n")


def test_scenario_builders():
    sc = parse_scenario(TINY)
    dyn = sc.dynamics()
    b, s, g = dyn.coefficients(np.array([0.0, 1.0]), sc.initial_measure(), np.zeros(2))
    np.testing.assert_array_equal(s, 1.0)
    assert [F.name for F in sc.functional_objects()] == ["phi", "phi^2"]
    cfg = sc.sim_config(resolution=(0.1, 20))
    assert cfg.h == 0.1 and cfg.N == 20


# command line


def test_no_checks_exit_zero(tmp_path):
    cfg = write(tmp_path, "name: empty\n")
    assert run(tmp_path, "sympoly", cfg) == 0
    assert "no checks" in (tmp_path / "out" / "summary.txt").read_text()


def test_malformed_config_exit_two(tmp_path, capsys):
    cfg = write(tmp_path, "name: bad\nsimulation: {NN: 3}\n")
    assert run(tmp_path, "simulate", cfg) == 2
    err = capsys.readouterr().err
    assert "NN" in err and "line 2" in err


def test_missing_config_exit_two(tmp_path):
    assert run(tmp_path, "simulate", str(tmp_path / "absent.yaml")) == 2


def test_resource_error_exit_three(tmp_path):
    cfg = write(tmp_path, TINY.replace("T: 1.0}", "T: 1.0, max_particles: 10}"))
    assert run(tmp_path, "simulate", cfg) == 3
    assert "resource" in (tmp_path / "out" / "summary.txt").read_text()


def test_failing_check_exit_one(tmp_path, capsys):
    text = (SCENARIOS / "heat_hjb.yaml").read_text().replace('terminal: "phi"', 'terminal: "0"')
    cfg = write(tmp_path, text)
    assert run(tmp_path, "hjb", cfg) == 1
    assert "terminal" in capsys.readouterr().err


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = write(tmp_path, TINY)
    assert run(tmp_path, "simulate", cfg, "--paths", "60", out="a") == 0
    assert run(tmp_path, "simulate", cfg, "--paths", "60", "--threads", "3", out="b") == 0
    for name in ("records.csv", "snapshots.jsonl", "increments.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "records.csv").read_text().splitlines()[0]
    assert header == "record,operation,subject,quantity,value"
    assert run(tmp_path, "simulate", cfg, "--paths", "60", "--seed", "5", out="c") == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() != (tmp_path / "c" / "records.csv").read_bytes()


def test_no_increments_flag(tmp_path):
    cfg = write(tmp_path, TINY)
    assert run(tmp_path, "simulate", cfg, "--paths", "60", "--no-increments") == 0
    assert not (tmp_path / "out" / "increments.csv").exists()


def test_ito_check_command(tmp_path):
    cfg = write(tmp_path, TINY)
    assert run(tmp_path, "ito-check", cfg) == 0
    table = (tmp_path / "out" / "ito_table.txt").read_text()
    assert "phi^2" in table and "verdict" in table


def test_resolution_override(tmp_path):
    cfg = write(tmp_path, TINY)
    assert run(tmp_path, "simulate", cfg, "--paths", "60", "--resolution", "0.1,10") == 0
    assert main(["simulate", "--config", cfg, "--resolution", "0.3,10", "--out", str(tmp_path / "x")]) == 2


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MVCALC_OUT", str(tmp_path / "root"))
    cfg = write(tmp_path, "name: envcheck\n")
    assert main(["metric", "--config", cfg]) == 0
    assert (tmp_path / "root" / "envcheck" / "summary.txt").exists()


@pytest.mark.parametrize("command,scenario,artifact", [
    ("sympoly", "sympoly.yaml", "decompositions.txt"),
    ("hjb", "heat_hjb.yaml", "records.csv"),
    ("verify", "heat_hjb.yaml", "verification.txt"),
])
def test_shipped_fast_scenarios_pass(tmp_path, command, scenario, artifact):
    assert run(tmp_path, command, str(SCENARIOS / scenario)) == 0
    assert (tmp_path / "out" / artifact).exists()


def test_value_command(tmp_path):
    text = (SCENARIOS / "control_value.yaml").read_text().replace("paths: 100", "paths: 20")
    text = text.replace("checks: [argmin, value_zero, dpp]", "checks: [argmin, value_zero]")
    assert run(tmp_path, "value", write(tmp_path, text)) == 0


def test_metric_command(tmp_path):
    text = (SCENARIOS / "metric.yaml").read_text().replace("triples: 1000", "triples: 50")
    text = text.replace("growth_measures: 1000", "growth_measures: 20")
    assert run(tmp_path, "metric", write(tmp_path, text)) == 0
    # the violations file is only written when a violation is found
    assert not (tmp_path / "out" / "psi_violations.txt").exists()
    assert "psi_growth" in (tmp_path / "out" / "summary.txt").read_text()
