import math
from dataclasses import replace

import numpy as np
import pytest

from botw.environment import EnvironmentSpec, gap_profile
from botw.files import trace_csv_text
from botw.harness import (
    RegretTrace,
    RunConfig,
    check_grid,
    checkpoints,
    fit_loglog_slope,
    gap_context,
    run_repetitions,
    run_single,
    stream,
    sweep_horizons,
    verify_trace_invariants,
)

from conftest import SINE_OMEGA, THETA, stochastic_config


def test_stream_is_counter_based():
    a = stream(5, 0).random(100)
    b = stream(5, 0).random(60)
    assert np.array_equal(a[:60], b)
    assert not np.array_equal(stream(5, 1).random(10), a[:10])
    assert not np.array_equal(stream(6, 0).random(10), a[:10])


def test_checkpoints():
    assert checkpoints(1, "power_of_two_checkpoints").tolist() == [1]
    assert checkpoints(20, "power_of_two_checkpoints").tolist() == [1, 2, 4, 8, 16, 20]
    assert checkpoints(16, "power_of_two_checkpoints").tolist() == [1, 2, 4, 8, 16]
    assert checkpoints(3, "every_round").tolist() == [1, 2, 3]


def test_uniform_expected_regret_is_closed_form(five_arms):
    tr = run_single(stochastic_config(five_arms, 1000, policy="uniform"), seed=3)
    mean_gap = float(np.mean(gap_profile(five_arms, THETA).gaps))
    assert tr.final_regret == pytest.approx(1000 * mean_gap, rel=1e-12)
    assert np.allclose(tr.rows["regret_expected"], tr.rows["t"] * mean_gap, rtol=1e-12)


def test_single_round(five_arms):
    tr = run_single(stochastic_config(five_arms, 1), seed=0)
    gaps = gap_profile(five_arms, THETA).gaps
    assert len(tr) == 1
    assert any(tr.rows["regret_realized"][0] == g for g in gaps)


def test_determinism_bytes(five_arms):
    cfg = stochastic_config(five_arms, 300)
    assert trace_csv_text([run_single(cfg, 9)]) == trace_csv_text([run_single(cfg, 9)])
    assert trace_csv_text([run_single(cfg, 9)]) != trace_csv_text([run_single(cfg, 10)])


def test_checkpoints_match_every_round(five_arms):
    full = run_single(stochastic_config(five_arms, 300), seed=4)
    sparse = run_single(stochastic_config(five_arms, 300, granularity="power_of_two_checkpoints"), 4)
    idx = sparse.rows["t"] - 1
    for col in sparse.rows:
        assert np.array_equal(sparse.rows[col], full.rows[col][idx]), col


def test_one_repetition_aggregate(five_arms):
    res = run_repetitions(stochastic_config(five_arms, 64, reps=1), workers=1)
    agg, tr = res.aggregate, res.traces[0]
    assert np.array_equal(agg["regret_expected_mean"], tr.rows["regret_expected"])
    assert np.all(agg["regret_expected_std"] == 0)


def test_repetitions_mean_and_spread(five_arms):
    res = run_repetitions(stochastic_config(five_arms, 256, reps=6, seed=11), workers=1)
    assert [tr.meta["seed"] for tr in res.traces] == list(range(11, 17))
    # streaming (Welford) mean oracle
    mean = np.zeros(len(res.traces[0]))
    for k, tr in enumerate(res.traces, start=1):
        mean += (tr.rows["regret_expected"] - mean) / k
    assert np.allclose(res.aggregate["regret_expected_mean"], mean, rtol=0, atol=1e-12)
    assert res.aggregate["regret_expected_std"][-1] > 0


def test_parallel_matches_serial(five_arms):
    cfg = stochastic_config(five_arms, 200, reps=4, granularity="power_of_two_checkpoints")
    serial = run_repetitions(cfg, workers=1).aggregate
    parallel = run_repetitions(cfg, workers=3).aggregate
    for key in serial:
        assert np.array_equal(serial[key], parallel[key]), key


def test_zero_budget_corruption_equals_stochastic(five_arms):
    env = EnvironmentSpec("corrupted", 300, theta=THETA, corruption={"kind": "front_loaded", "budget_C": 0})
    corrupted = RunConfig(arms=five_arms, environment=env, horizon_T=300,
                          record_granularity="every_round")
    a = run_single(corrupted, 2)
    b = run_single(stochastic_config(five_arms, 300), 2)
    assert trace_csv_text([a]) == trace_csv_text([b])


def test_corrupted_budget_accounting(five_arms):
    env = EnvironmentSpec("corrupted", 500, theta=THETA,
                          corruption={"kind": "on_optimal_rounds", "budget_C": 30, "per_round_cap": 0.5})
    cfg = RunConfig(arms=five_arms, environment=env, horizon_T=500, record_granularity="every_round")
    tr = run_single(cfg, 0)
    applied = tr.meta["corruption_applied"]
    assert np.abs(applied).sum() <= 30 + 1e-9
    assert verify_trace_invariants(tr).passed


def test_stochastic_run_passes_every_check(five_arms):
    cfg = stochastic_config(five_arms, 2000)
    tr = run_single(cfg, seed=1)
    report = verify_trace_invariants(tr)
    assert report.passed, report.lines()
    assert report.by_name("estimate_bound").status == "pass"
    # the CSV-only path (no totals) agrees
    bare = RegretTrace(rows=tr.rows, meta=tr.meta, totals=None)
    bare_report = verify_trace_invariants(bare, gap_context(cfg))
    assert bare_report.passed, bare_report.lines()


def test_telescoping_full_vs_totals(five_arms):
    tr = run_single(stochastic_config(five_arms, 400), seed=5)
    h, beta = tr.rows["entropy_q"], tr.rows["beta"]
    # rows 1..T carry beta_1..beta_T; totals add the final H(q_{T+1}) term
    partial = float(np.sum(np.diff(beta) * h[1:]))
    assert tr.totals["telescoping_lhs"] >= partial


def test_tampered_beta_fails_at_row(five_arms):
    tr = run_single(stochastic_config(five_arms, 100), seed=0)
    rows = {k: v.copy() for k, v in tr.rows.items()}
    rows["beta"][40] = rows["beta"][38]
    report = verify_trace_invariants(RegretTrace(rows=rows, meta=tr.meta))
    res = report.by_name("beta_increasing")
    assert res.status == "fail" and res.first_violation == 41
    assert not report.passed


def test_point_mass_entropy_selection_degenerate():
    n = 16
    rows = {
        "t": np.arange(1, n + 1),
        "regret_expected": np.zeros(n),
        "regret_realized": np.zeros(n),
        "entropy_q": np.zeros(n),
        "beta": np.arange(1, n + 1, dtype=float),
        "gamma": np.full(n, 0.1),
        "one_minus_qstar": np.zeros(n),
        "clips": np.zeros(n, dtype=np.int64),
    }
    meta = {"num_arms": 4, "policy": "ftrl", "variant": "stochastic", "c_const": 1.0,
            "delta_min": 0.2}
    res = verify_trace_invariants(RegretTrace(rows=rows, meta=meta)).by_name("entropy_selection")
    assert res.status == "pass"


def test_adversarial_trace_definition(five_arms):
    gen = {"kind": "sinusoidal", "u": [1, 0], "v": [0, 1], "omega": SINE_OMEGA}
    env = EnvironmentSpec("adversarial", 700, generator=gen)
    cfg = RunConfig(arms=five_arms, environment=env, horizon_T=700, policy="uniform",
                    record_granularity="every_round")
    tr = run_single(cfg, 0)
    t = np.arange(1, 701)
    thetas = np.column_stack([np.cos(SINE_OMEGA * t), np.sin(SINE_OMEGA * t)])
    cum = np.cumsum(thetas @ five_arms.arms.T, axis=0)
    best = int(np.argmin(cum[-1]))
    assert tr.meta["optimal_index"] == best
    oracle = cum.mean(axis=1) - cum[:, best]  # uniform play
    assert np.allclose(tr.rows["regret_expected"], oracle, rtol=0, atol=1e-9)
    assert verify_trace_invariants(tr).passed


def test_exp2_close_to_ftrl_on_adaptive_adversary(five_arms):
    env = EnvironmentSpec("adversarial", 4096, generator={"kind": "follow_the_crowd"})
    finals = {}
    for pol in ("ftrl", "exp2"):
        cfg = RunConfig(arms=five_arms, environment=env, horizon_T=4096, policy=pol, repetitions=10)
        res = run_repetitions(cfg)
        finals[pol] = float(np.mean([tr.final_regret for tr in res.traces]))
    assert finals["ftrl"] > 0 and finals["exp2"] > 0
    assert finals["exp2"] <= 3 * finals["ftrl"] and finals["ftrl"] <= 3 * finals["exp2"]


# -- sweeps ----------------------------------------------------------------------------

def test_synthetic_sqrt_slope(five_arms):
    cfg = stochastic_config(five_arms, 1024)
    summary = sweep_horizons(cfg, [1024, 4096, 16384], final_regrets=lambda T: [7 * math.sqrt(T)] * 3)
    assert summary.slope == pytest.approx(0.5, abs=1e-12)
    assert summary.residual < 1e-20


def test_synthetic_log_squared_slope():
    grid = [2 ** k for k in range(10, 17)]
    slope, _, _ = fit_loglog_slope(grid, [3.0 * math.log(T) ** 2 for T in grid])
    # d ln(ln^2 T) / d ln T = 2 / ln T, at most 2 / ln 2^10 ~ 0.29 and ~0.2 on average
    assert slope <= 0.25


def test_grid_validation():
    with pytest.raises(ValueError):
        check_grid([])
    with pytest.raises(ValueError):
        check_grid([1024, 512])
    with pytest.raises(ValueError):
        check_grid([1000, 2048])
    with pytest.raises(ValueError):
        fit_loglog_slope([1, 2], [1.0, -1.0])


def test_sweep_runs_fresh_schedules(five_arms):
    cfg = stochastic_config(five_arms, 64, reps=2, granularity="power_of_two_checkpoints")
    summary = sweep_horizons(cfg, [64, 128], workers=1)
    b64 = summary.runs[64].traces[0].rows["beta"][0]
    b128 = summary.runs[128].traces[0].rows["beta"][0]
    assert b128 > b64  # ln T enters beta_1
    assert all(p["invariants_passed"] for p in summary.per_horizon)
    assert math.isfinite(summary.slope)


def test_run_config_validation(five_arms):
    cfg = stochastic_config(five_arms, 10)
    with pytest.raises(ValueError):
        replace(cfg, repetitions=0)
    with pytest.raises(ValueError):
        replace(cfg, record_granularity="sometimes")
    with pytest.raises(ValueError):
        replace(cfg, policy="ucb")
    assert cfg.config_hash() == stochastic_config(five_arms, 10).config_hash()
    assert cfg.with_horizon(20).environment.horizon_T == 20
