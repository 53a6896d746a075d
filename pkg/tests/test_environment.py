import math
import warnings

import numpy as np
import pytest

from botw.environment import (
    CorruptionSchedule,
    Environment,
    EnvironmentSpec,
    FollowTheCrowdGenerator,
    NoiseSpec,
    SinusoidalGenerator,
    best_fixed_arm,
    build_environment,
    corruption_schedule_build,
    emit_loss,
    gap_profile,
    pseudo_regret_increment,
)
from botw.errors import ConfigError, HorizonExceeded, InfeasibleBudget, NonUniqueOptimum
from botw.geometry import validate_arm_set

from conftest import random_arm_set


def stochastic_env(arms, theta, T=10, noise=None, corruption=None):
    spec = EnvironmentSpec("corrupted" if corruption else "stochastic", T, theta=tuple(theta),
                           noise=noise or NoiseSpec(), corruption={"budget_C": 0} if corruption else None)
    return Environment(spec, arms, corruption=corruption)


def test_noise_free_inner_product(basis2):
    env = stochastic_env(basis2, (0.6, -0.2))
    fb = emit_loss(env, 1, 0)
    assert fb.observed_loss == 0.6 and fb.clean_mean_loss == 0.6 and not fb.clipped


@pytest.mark.parametrize("clean, c, observed, clipped", [
    (0.5, 0.5, 1.0, False),
    (0.5, 0.6, 1.0, True),
    (0.6, 0.5, 1.0, True),
    (-0.7, -0.4, -1.0, True),
])
def test_corruption_clipping_boundary(clean, c, observed, clipped):
    arms = validate_arm_set(np.eye(2))
    sched = CorruptionSchedule("front_loaded", abs(c), 2.0, 3, values=np.array([c, 0.0, 0.0]))
    env = stochastic_env(arms, (clean, 0.0), T=3, corruption=sched)
    fb = emit_loss(env, 1, 0)
    assert fb.observed_loss == observed and fb.clipped is clipped
    assert fb.corruption_applied == pytest.approx(observed - clean, abs=1e-15)


def test_alternating_sign():
    arms = validate_arm_set(np.eye(2))
    spec = EnvironmentSpec("adversarial", 8, generator={"kind": "alternating", "v": [0.3, 0.4]})
    env = build_environment(spec, arms)
    losses = [emit_loss(env, t, 0).observed_loss for t in range(1, 9)]
    assert losses == [-0.3, 0.3] * 4


def test_sinusoid_values():
    gen = SinusoidalGenerator([1, 0], [0, 1], 0.25)
    assert np.allclose(gen(4, ()), [math.cos(1.0), math.sin(1.0)], rtol=1e-15)


def test_horizon_exceeded(basis2):
    env = stochastic_env(basis2, (0.1, 0.1), T=2)
    emit_loss(env, 1, 0)
    emit_loss(env, 2, 0)
    with pytest.raises(HorizonExceeded):
        emit_loss(env, 3, 0)


def test_out_of_order_commit_rejected(basis2):
    env = stochastic_env(basis2, (0.1, 0.1), T=5)
    with pytest.raises(RuntimeError):
        env.theta_for_round(2)


def test_adversary_sees_only_past():
    arms = validate_arm_set(np.eye(2))
    seen = []

    def probe(t, history):
        seen.append((t, list(history)))
        return np.array([0.1 * t / 10, 0.0])

    env = Environment(EnvironmentSpec("adversarial", 5, generator={"kind": "alternating", "v": [0, 0]}),
                      arms, generator=probe)
    picks = [1, 0, 1, 1, 0]
    for t, i in enumerate(picks, start=1):
        emit_loss(env, t, i)
    for t, hist in seen:
        assert len(hist) == t - 1
        assert [h[0] for h in hist] == picks[: t - 1]
    with pytest.raises(TypeError):
        env.history[0] = (0, 0.0)


def test_follow_the_crowd_targets_most_pulled():
    arms = validate_arm_set([[1, 0], [0, 1], [0.6, 0.8]])
    gen = FollowTheCrowdGenerator(arms)
    assert np.allclose(gen(1, []), [1, 0])
    assert np.allclose(gen(4, [(2, 0.1), (2, 0.1), (1, 0.0)]), [0.6, 0.8])


def test_noise_zero_mean():
    n = 100_000
    u = np.random.default_rng(0).random(n)
    for spec in (NoiseSpec("uniform", 0.3), NoiseSpec("gaussian", 0.3)):
        for mean in (0.0, 0.8):
            eps = np.array([spec.draw(x, mean) for x in u])
            assert abs(eps.mean()) <= 3 * eps.std() / math.sqrt(n)
            if spec.kind == "gaussian":
                # truncated so the noisy loss never leaves [-1, 1]
                assert np.all(np.abs(mean + eps) <= 1.0)


def test_noise_spec_validation():
    with pytest.raises(ConfigError):
        NoiseSpec("laplace", 1.0)
    with pytest.raises(ConfigError):
        NoiseSpec("gaussian", 0.0)


def test_spec_validation():
    with pytest.raises(ConfigError, match="environment.theta"):
        EnvironmentSpec("stochastic", 10)
    with pytest.raises(ConfigError):
        EnvironmentSpec("stochastic", 10, theta=(1.0, 1.0))
    with pytest.raises(ConfigError):
        EnvironmentSpec("adversarial", 10)
    with pytest.raises(ConfigError):
        EnvironmentSpec("corrupted", 10, theta=(0.1, 0.0))
    with pytest.raises(ConfigError):
        EnvironmentSpec("bandit", 10)


def test_gap_profile_examples():
    arms = validate_arm_set(np.eye(2))
    prof = gap_profile(arms, (-0.5, -0.3))
    assert prof.optimal_index == 0 and prof.unique
    assert np.allclose(prof.gaps, [0, 0.2], rtol=0, atol=1e-15)
    assert prof.delta_min == pytest.approx(0.2)
    with pytest.warns(NonUniqueOptimum):
        tied = gap_profile(arms, (0.4, 0.4))
    assert tied.optimal_index == 0 and not tied.unique and math.isnan(tied.delta_min)


def test_gap_profile_matches_brute_force():
    rng = np.random.default_rng(17)
    for _ in range(100):
        arms = random_arm_set(rng, 3, 5)
        theta = rng.normal(size=3)
        theta /= np.linalg.norm(theta)
        losses = [float(x @ theta) for x in arms.arms]
        best = min(range(5), key=lambda i: (losses[i], i))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonUniqueOptimum)
            prof = gap_profile(arms, theta)
        assert prof.optimal_index == best
        assert np.allclose(prof.gaps, np.array(losses) - losses[best], atol=1e-15)


def test_front_loaded_schedule():
    s = corruption_schedule_build("front_loaded", 10, 0.5, 100)
    assert np.all(s.values[:20] == 0.5) and np.all(s.values[20:] == 0)
    s = corruption_schedule_build("front_loaded", 1.2, 0.5, 100, sign=-1)
    assert np.allclose(s.values[:3], [-0.5, -0.5, -0.2]) and abs(np.abs(s.values).sum() - 1.2) <= 1e-9


def test_random_rounds_budget():
    s = corruption_schedule_build("random_rounds", 50, 0.5, 4096, rng=np.random.default_rng(3))
    assert abs(np.abs(s.values).sum() - 50) <= 1e-9
    assert np.count_nonzero(s.values) == 100
    with pytest.raises(ConfigError):
        corruption_schedule_build("random_rounds", 50, 0.5, 4096)


def test_schedule_errors():
    with pytest.raises(InfeasibleBudget):
        corruption_schedule_build("front_loaded", 11, 0.5, 20)
    with pytest.raises(ConfigError):
        corruption_schedule_build("front_loaded", 1, 2.5, 20)
    with pytest.raises(ConfigError):
        corruption_schedule_build("sideways", 1, 0.5, 20)
    with pytest.raises(ConfigError):
        corruption_schedule_build("front_loaded", -1, 0.5, 20)


def test_on_optimal_rounds_adaptive():
    s = corruption_schedule_build("on_optimal_rounds", 1.0, 0.4, 10)
    vals = [s.value(1, True), s.value(2, False), s.value(3, True), s.value(4, True)]
    assert vals == pytest.approx([0.4, -0.4, 0.2, 0.0])
    assert s.remaining == 0.0
    quiet = corruption_schedule_build("on_optimal_rounds", 1.0, 0.4, 10, penalize_others=False)
    assert quiet.value(1, False) == 0.0 and quiet.value(2, True) == 0.4


def test_pseudo_regret_increment_examples():
    losses = np.array([-1.0, -0.8, 0.0])
    assert pseudo_regret_increment(losses, np.array([1.0, 0, 0]), 0, 0) == (0.0, 0.0)
    real, exp = pseudo_regret_increment(losses, np.array([0.5, 0.5, 0.0]), 1, 0)
    assert real == pytest.approx(0.2) and exp == pytest.approx(0.1)


def test_adversarial_comparator_three_rounds():
    arms = validate_arm_set([[1, 0], [0, 1], [0.6, 0.8]])
    thetas = np.array([[1.0, 0.0], [0.0, -1.0], [-0.5, 0.5]])
    # cumulative losses: e1 = 0.5, e2 = -0.5, third = 0.6 - 0.8 - 0.3 + 0.4 = -0.1
    totals = [sum(float(x @ th) for th in thetas) for x in arms.arms]
    assert totals == pytest.approx([0.5, -0.5, -0.1])
    assert best_fixed_arm(arms, thetas) == int(np.argmin(totals)) == 1


def test_no_clipping_without_noise_or_corruption():
    rng = np.random.default_rng(0)
    for _ in range(20):
        arms = random_arm_set(rng, 3, 6)
        theta = rng.normal(size=3)
        theta /= np.linalg.norm(theta)
        env = stochastic_env(arms, theta, T=50)
        for t in range(1, 51):
            assert not emit_loss(env, t, int(rng.integers(6))).clipped
