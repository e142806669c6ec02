import numpy as np
import pytest

from aerecovery.harness import (
    CSV_HEADER,
    InvalidScenario,
    Scenario,
    SweepConfig,
    SweepResult,
    estimate_transition,
    rows_from_csv,
    run_sweep,
    run_trial,
    transition_from_rates,
)
from aerecovery.recovery import SolveConfig

LR = Scenario.parse("lowrank:4x4:r1:C", "gauss:4x4:C")


def test_transition_rule():
    assert transition_from_rates(range(3, 8), [0, 0, 0, 1, 1]) == 6
    assert transition_from_rates(range(3, 8), [0] * 5) is None
    assert transition_from_rates(range(3, 9), [0, 0.4, 0.6, 0.3, 1, 1]) == 7
    assert transition_from_rates([5], [0.5]) == 5


def test_estimate_transition_unknown_test():
    cfg = SweepConfig(LR, (5, 5), 1, tests=("LocalRank",))
    res = run_sweep(cfg)
    with pytest.raises(ValueError):
        estimate_transition(res, "Everywhere")


def test_scenario_thresholds():
    assert (LR.dim, LR.theoretical_ae_threshold, LR.theoretical_everywhere_threshold) == (7, 8, 12)
    pr = Scenario.parse("sym:4:r1", "rank1sym:4")
    assert (pr.dim, pr.theoretical_ae_threshold, pr.theoretical_everywhere_threshold) == (4, 5, 7)
    h = Scenario.parse("herm:4:r1", "rank1herm:4")
    assert h.counting_field.value == "R"
    assert (h.dim, h.theoretical_ae_threshold, h.theoretical_everywhere_threshold) == (7, 8, 12)
    assert Scenario.parse("orth:3", "gauss:3x3:R").theoretical_everywhere_threshold is None


@pytest.mark.parametrize("rec,ens", [
    ("lowrank:4x4:r1:C", "gauss:3x4:C"),
    ("lowrank:4x4:r1:C", "gauss:4x4:R"),
    ("lowrank:3x3:r1:C", "rank1herm:3"),
    ("sym:3:r1", "rank1herm:3"),
])
def test_invalid_scenarios(rec, ens):
    with pytest.raises(InvalidScenario):
        Scenario.parse(rec, ens)


def test_far_above_thresholds_all_succeed():
    for t in range(3):
        rows = run_trial(LR, 20, t, 0)
        assert [r.test for r in rows] == ["LocalRank", "AeRecovery", "Everywhere"]
        assert all(r.success for r in rows)


def test_no_measurements_all_fail():
    rows = run_trial(LR, 0, 0, 0)
    assert not any(r.success for r in rows)


def test_phase_retrieval_local_rank():
    pr = Scenario.parse("sym:4:r1", "rank1sym:4")
    rows = run_trial(pr, 5, 0, 1, tests=("LocalRank",))
    assert rows[0].success and rows[0].detail == 0


def test_trial_deterministic():
    a = run_trial(LR, 9, 3, 42, solve_cfg=SolveConfig(restarts=3))
    b = run_trial(LR, 9, 3, 42, solve_cfg=SolveConfig(restarts=3))
    assert a == b


def test_errors_recorded_not_raised():
    sc = Scenario.parse("orth:3", "gauss:3x3:R")
    rows = run_trial(sc, 4, 0, 0)
    by = {r.test: r for r in rows}
    assert by["LocalRank"].success in (True, False)
    assert not by["AeRecovery"].success and by["AeRecovery"].detail == -2.0
    assert not by["Everywhere"].success and by["Everywhere"].detail == -2.0


def test_single_row_sweep():
    res = run_sweep(SweepConfig(LR, (5, 5), 1, tests=("LocalRank",)))
    assert len(res.rows) == 1


def test_local_rank_curve_and_csv():
    cfg = SweepConfig(LR, (5, 14), 50, base_seed=3, tests=("LocalRank",))
    res = run_sweep(cfg)
    assert len(res.rows) == 10 * 50
    rates = dict(res.rates("LocalRank"))
    assert all(rates[N] == 0 for N in (5, 6)) and all(rates[N] == 1 for N in range(7, 15))
    assert res.transitions["LocalRank"] == 7
    text = res.to_csv()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert rows_from_csv(text) == res.rows


def test_sweep_json_config_roundtrip():
    cfg = SweepConfig(LR, (3, 4), 2, base_seed=5, tests=("Everywhere", "LocalRank"),
                      solve_cfg=SolveConfig(restarts=2))
    assert cfg.tests == ("LocalRank", "Everywhere")
    assert SweepConfig.from_json(cfg.to_json()) == cfg


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(LR, (5, 4), 1)
    with pytest.raises(ValueError):
        SweepConfig(LR, (1, 4), 0)
    with pytest.raises(ValueError):
        SweepConfig(LR, (1, 4), 1, tests=("Bogus",))


def test_saturating_delta_warns():
    sc = Scenario.parse("lowrank:3x3:r2:R", "gauss:3x3:R")
    with pytest.warns(UserWarning, match="saturates"):
        res = run_sweep(SweepConfig(sc, (9, 9), 1, tests=("Everywhere",),
                                    solve_cfg=SolveConfig(restarts=2, max_iters=50)))
    assert res.warnings


def test_workers_do_not_change_results():
    cfg = SweepConfig(LR, (5, 8), 3, base_seed=11, tests=("LocalRank", "AeRecovery"),
                      solve_cfg=SolveConfig(restarts=4))
    one = run_sweep(cfg, workers=1)
    two = run_sweep(cfg, workers=2)
    assert one.to_csv() == two.to_csv()
    assert one.to_json_text() == two.to_json_text()


def test_local_rank_rate_nondecreasing():
    sc = Scenario.parse("herm:3:r1", "rank1herm:3")
    res = run_sweep(SweepConfig(sc, (0, 8), 20, tests=("LocalRank",)))
    r = [rate for _, rate in res.rates("LocalRank")]
    assert all(b - a >= -0.02 for a, b in zip(r, r[1:]))
