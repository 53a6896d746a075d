import math

import numpy as np
import pytest

from botw.environment import EnvironmentSpec
from botw.geometry import validate_arm_set
from botw.harness import RunConfig

# two basis arms plus three unit-circle arms; with theta = (-1, 0) the gaps are
# (0, 1, 0.2, 0.4, 1.6), so the smallest positive gap is 0.2
FIVE_ARMS = [[1.0, 0.0], [0.0, 1.0], [0.8, 0.6], [0.6, -0.8], [-0.6, 0.8]]
THETA = (-1.0, 0.0)
SINE_OMEGA = 2 * math.pi / 512


@pytest.fixture(scope="session")
def five_arms():
    return validate_arm_set(FIVE_ARMS)


@pytest.fixture(scope="session")
def basis2():
    return validate_arm_set([[1.0, 0.0], [0.0, 1.0]])


def stochastic_config(arms, T, policy="ftrl", reps=1, seed=0, granularity="every_round", noise=None):
    from botw.environment import NoiseSpec
    env = EnvironmentSpec("stochastic", T, theta=THETA, noise=noise or NoiseSpec())
    return RunConfig(arms=arms, environment=env, policy=policy, horizon_T=T, repetitions=reps,
                     base_seed=seed, record_granularity=granularity)


def random_arm_set(rng, d, n):
    """n arms in the unit ball of R^d, redrawn until they span."""
    while True:
        raw = rng.normal(size=(n, d))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        raw *= rng.uniform(0.3, 1.0, size=(n, 1))
        try:
            return validate_arm_set(raw)
        except ValueError:
            continue


def random_simplex(rng, n, floor=0.0):
    p = rng.dirichlet(np.ones(n))
    if floor:
        p = p + floor
        p /= p.sum()
    return p


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "REPORT", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
