"""FTRL with an entropy regularizer for finite-armed linear bandits.

Modules: ``geometry`` (arm sets, G-optimal design), ``policy`` (the learner
and baselines), ``environment`` (stochastic, adversarial and corrupted loss
streams), ``harness`` (runs, sweeps, trace checks), ``files`` and ``cli``.
"""
from botw.environment import EnvironmentSpec, NoiseSpec, build_environment, gap_profile
from botw.geometry import ArmSet, DesignResult, frank_wolfe_design, validate_arm_set
from botw.harness import (
    RunConfig,
    run_repetitions,
    run_single,
    sweep_horizons,
    verify_trace_invariants,
)
from botw.policy import Exp2Policy, FtrlPolicy, UniformPolicy, make_policy

__version__ = "0.1.0"

__all__ = [
    "ArmSet", "DesignResult", "EnvironmentSpec", "Exp2Policy", "FtrlPolicy", "NoiseSpec",
    "RunConfig", "UniformPolicy", "build_environment", "frank_wolfe_design", "gap_profile",
    "make_policy", "run_repetitions", "run_single", "sweep_horizons", "validate_arm_set",
    "verify_trace_invariants",
]
