"""Harness tests: FPE metric, scenario validation, batch reports and their
canonical serialization, table rendering."""

import json

import numpy as np
import pytest

from landersim.harness import (BatchReport, ScenarioConfig, ScenarioError,
                               TrialResult, batch_report,
                               builtin_scenario_names, final_point_error,
                               load_scenario, render_table, run_trials,
                               trial_result)
from landersim.sim import TrialLog, noise_preset


def _mini_log(drone, plat, seed=0, terminal=True):
    """A log with no rows but a terminal record; enough for the metric."""
    return TrialLog(
        scenario="mini", seed=seed, dt=0.1,
        t=np.zeros(0), states=np.zeros((0, 12)), controls=np.zeros((0, 4)),
        predicted=np.zeros((0, 12)), platform_pos=np.zeros((0, 3)),
        platform_vel=np.zeros((0, 3)), phases=[],
        converged=np.zeros(0, dtype=bool), iterations=np.zeros(0, dtype=int),
        kkt=np.zeros(0), defect=np.zeros(0), min_residual=np.zeros(0),
        solve_ms=np.zeros(0), held=np.zeros(0, dtype=bool),
        h=np.zeros((0, 0)),
        terminal={"touchdown_time": 4.2,
                  "drone_position": list(drone),
                  "platform_position": list(plat)} if terminal else None,
        failed=not terminal,
        failure_reason="" if terminal else "timeout after 60 s",
    )


@pytest.fixture(scope="module")
def small_batch():
    sc = load_scenario("static_clear")
    logs = run_trials(sc, trials=2)
    return sc, logs, batch_report(sc, logs)


# -- final point error -------------------------------------------------------


def test_fpe_zero_at_center():
    log = _mini_log((2.0, 0.0, 0.31), (2.0, 0.0, 0.3))
    assert final_point_error(log) == 0.0


def test_fpe_three_four_five():
    log = _mini_log((0.03, 0.04, 0.3), (0.0, 0.0, 0.3))
    assert final_point_error(log) == pytest.approx(5.0, abs=1e-12)


def test_fpe_three_d_variant():
    log = _mini_log((0.03, 0.04, 0.42), (0.0, 0.0, 0.3))
    assert final_point_error(log) == pytest.approx(5.0, abs=1e-12)
    assert final_point_error(log, three_d=True) == pytest.approx(13.0,
                                                                 abs=1e-12)


def test_fpe_translation_invariant():
    a = final_point_error(_mini_log((0.1, 0.2, 0.3), (0.0, 0.0, 0.3)))
    b = final_point_error(_mini_log((5.1, -3.8, 0.3), (5.0, -4.0, 0.3)))
    assert a == pytest.approx(b, rel=1e-12)


def test_fpe_requires_terminal():
    with pytest.raises(ValueError, match="terminal"):
        final_point_error(_mini_log((0, 0, 0), (0, 0, 0), terminal=False))


# -- scenario validation -----------------------------------------------------


def test_unknown_top_level_key():
    with pytest.raises(ScenarioError, match="unknown scenario keys"):
        ScenarioConfig.from_dict({"nmae": "typo"})


def test_unknown_nested_key():
    with pytest.raises(ScenarioError, match="unknown nmpc keys"):
        ScenarioConfig.from_dict({"nmpc": {"horizon": 10}})


def test_trials_and_timeout_bounds():
    with pytest.raises(ScenarioError, match="trials"):
        ScenarioConfig.from_dict({"trials": 0})
    with pytest.raises(ScenarioError, match="timeout"):
        ScenarioConfig.from_dict({"timeout": -1.0})


def test_x0_inside_safety_circle_rejected():
    d = {"cbf": {"obstacles": [{"center": [0.1, 0.0], "radius": 0.2}]}}
    with pytest.raises(ScenarioError, match="initial state inside"):
        ScenarioConfig.from_dict(d)


def test_platform_path_through_safety_circle_rejected():
    d = {
        "platform": {"kind": "constant_velocity", "p0": [0.0, 0.0, 0.0],
                     "vel": [1.0, 0.0, 0.0]},
        "cbf": {"obstacles": [{"center": [3.0, 0.0], "radius": 0.2}]},
        "x0": {"pos": [-1.0, 2.0, 2.0]},
    }
    with pytest.raises(ScenarioError, match="platform path"):
        ScenarioConfig.from_dict(d)


def test_noise_accepts_preset_name():
    sc = ScenarioConfig.from_dict({"noise": "mocap"})
    assert sc.noise == noise_preset("mocap")
    with pytest.raises(ScenarioError):
        ScenarioConfig.from_dict({"noise": "vicious"})


def test_x0_forms():
    sc = ScenarioConfig.from_dict({"x0": list(range(12))})
    assert np.array_equal(sc.x0, np.arange(12.0))
    sc = ScenarioConfig.from_dict(
        {"x0": {"pos": [1, 2, 3], "vel": [0.1, 0, 0], "yaw": 0.5}})
    assert np.array_equal(sc.x0[0:3], [1, 2, 3])
    assert sc.x0[8] == 0.5
    with pytest.raises(ScenarioError, match="x0"):
        ScenarioConfig.from_dict({"x0": [1, 2, 3]})


def test_from_json_errors(tmp_path):
    with pytest.raises(ScenarioError, match="cannot read"):
        ScenarioConfig.from_json(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ScenarioError, match="not valid JSON"):
        ScenarioConfig.from_json(bad)


def test_builtin_scenarios_listed_and_loadable():
    names = builtin_scenario_names()
    for want in ("static_clear", "static_obstacle", "dynamic_clear",
                 "dynamic_obstacle"):
        assert want in names
        sc = load_scenario(want)
        assert sc.name == want
        assert sc.trials == 10


def test_load_scenario_from_path(tmp_path):
    p = tmp_path / "custom.json"
    p.write_text(json.dumps({"name": "custom", "trials": 1}))
    sc = load_scenario(str(p))
    assert sc.name == "custom"
    assert sc.trials == 1


# -- trial results and batch reports ------------------------------------------


def test_trial_result_failed_log():
    r = trial_result(_mini_log((0, 0, 0), (0, 0, 0), terminal=False))
    assert r.failed
    assert r.fpe_cm is None and r.touchdown_time is None
    assert "timeout" in r.failure_reason


def test_trial_result_of_real_trial(small_batch):
    _, logs, _ = small_batch
    r = trial_result(logs[0])
    assert not r.failed
    assert 0.0 <= r.fpe_cm < 5.0
    assert r.touchdown_time > 0
    assert r.min_h is None            # no obstacles in static_clear
    assert r.solve_ms_mean > 0 and r.solve_ms_max >= r.solve_ms_mean


def test_run_trials_seed_sequence(small_batch):
    _, logs, _ = small_batch
    assert [lg.seed for lg in logs] == [0, 1]
    sc = load_scenario("static_clear")
    shifted = run_trials(sc, trials=1, base_seed=5)
    assert shifted[0].seed == 5


def test_report_aggregates_over_successes():
    rep = BatchReport(scenario="x", base_seed=0, results=[
        TrialResult(seed=0, failed=False, fpe_cm=2.0, touchdown_time=5.0,
                    min_h=0.5),
        TrialResult(seed=1, failed=False, fpe_cm=4.0, touchdown_time=6.0,
                    min_h=0.1),
        TrialResult(seed=2, failed=True, failure_reason="timeout"),
    ])
    assert rep.n_trials == 3 and rep.n_success == 2
    assert rep.success_rate == pytest.approx(2 / 3)
    assert rep.mean_fpe_cm == pytest.approx(3.0)
    assert rep.max_fpe_cm == pytest.approx(4.0)
    assert rep.min_h == pytest.approx(0.1)


def test_report_round_trip(small_batch):
    _, _, rep = small_batch
    again = BatchReport.from_json(rep.to_json())
    # equality ignores wall-clock fields (compare=False), which to_json drops
    assert again == rep
    assert again.to_json() == rep.to_json()


def test_report_json_is_canonical_and_timing_free(small_batch):
    _, _, rep = small_batch
    text = rep.to_json()
    assert text == rep.to_json()
    assert text.endswith("\n")
    assert "solve_ms" not in text
    d = json.loads(text)
    assert d["trials"] == 2
    assert d["aggregates"]["n_success"] == 2
    # timing reachable when asked for explicitly
    assert "solve_ms_mean" in rep.to_dict(include_timing=True)["results"][0]


def test_empty_batch_renders():
    rep = BatchReport(scenario="empty", base_seed=0, results=[])
    assert rep.success_rate is None and rep.mean_fpe_cm is None
    text = render_table(rep)
    assert "n/a" in text
    json.loads(rep.to_json())         # serializes despite the nulls


def test_render_table_golden(datadir):
    rep = BatchReport(scenario="golden", base_seed=3, results=[
        TrialResult(seed=3, failed=False, fpe_cm=1.25, touchdown_time=4.9,
                    min_h=0.0421, solve_ms_mean=12.34, solve_ms_max=56.78),
        TrialResult(seed=4, failed=True, failure_reason="timeout after 60 s",
                    solve_ms_mean=9.87, solve_ms_max=19.75),
    ])
    expect = (datadir / "golden_report.txt").read_text()
    assert render_table(rep) == expect
