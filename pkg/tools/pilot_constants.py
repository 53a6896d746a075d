"""Pilot run that fixes the scaling constants used by the acceptance suite.

Runs the reference seed set (base seed 0, 20 repetitions) on the five-arm
instance and prints, per horizon, the regret divided by the reference rate
of each bound. The acceptance suite freezes each constant at 1.25 times the
largest pilot ratio, rounded up to two significant digits.

    python tools/pilot_constants.py
"""
import json
import math
import sys
import time

import numpy as np

from botw.environment import EnvironmentSpec
from botw.geometry import validate_arm_set
from botw.harness import RunConfig, run_repetitions

ARMS = validate_arm_set([[1.0, 0.0], [0.0, 1.0], [0.8, 0.6], [0.6, -0.8], [-0.6, 0.8]])
THETA = (-1.0, 0.0)
D, K, DELTA = 2, 5, 0.2
GRID = [2 ** 10, 2 ** 12, 2 ** 14, 2 ** 16]
SINE = {"kind": "sinusoidal", "u": [1.0, 0.0], "v": [0.0, 1.0], "omega": 2 * math.pi / 512}


def finals(env, T, reps=20):
    cfg = RunConfig(arms=ARMS, environment=env, horizon_T=T, repetitions=reps, base_seed=0)
    res = run_repetitions(cfg)
    return np.array([tr.final_regret for tr in res.traces])


def main():
    out = {"stochastic": {}, "adversarial": {}, "corrupted": {}}
    t0 = time.time()
    for T in GRID:
        r = finals(EnvironmentSpec("stochastic", T, theta=THETA), T).mean()
        out["stochastic"][T] = r / (D * math.log(T) * math.log(K * T) / DELTA)
        print(f"stochastic T={T}: mean R={r:.4f} ratio={out['stochastic'][T]:.4f}", flush=True)
    for T in GRID:
        r = finals(EnvironmentSpec("adversarial", T, generator=SINE), T).mean()
        out["adversarial"][T] = r / math.sqrt(D * T * math.log(T) * math.log(K * T))
        print(f"adversarial T={T}: mean R={r:.4f} ratio={out['adversarial'][T]:.5f}", flush=True)
    T = 2 ** 14
    base = None
    for C in (0, 50, 200):
        env = EnvironmentSpec("corrupted", T, theta=THETA,
                              corruption={"kind": "front_loaded", "budget_C": C, "per_round_cap": 0.5})
        r = finals(env, T).mean()
        if C == 0:
            base = r
        else:
            out["corrupted"][C] = (r - base) / math.sqrt(C * D * math.log(T) * math.log(K * T) / DELTA)
        print(f"corrupted C={C}: mean R={r:.4f}", flush=True)
    print(json.dumps(out, indent=2, default=str))
    print(f"elapsed {time.time() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
