"""Experiment orchestration: seeded runs, repetitions, horizon sweeps, trace checks."""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from botw.environment import EnvironmentSpec, build_environment, gap_profile
from botw.errors import ConfigError
from botw.geometry import ArmSet, DesignResult, frank_wolfe_design
from botw.policy import entropy, make_policy, regularized_leader, schedule_constant

TRACE_COLUMNS = ("t", "regret_expected", "regret_realized", "entropy_q", "beta", "gamma",
                 "one_minus_qstar", "clips")
GRANULARITIES = ("every_round", "power_of_two_checkpoints")

# Philox stream purposes
SAMPLE_STREAM, NOISE_STREAM, CORRUPTION_STREAM = 0, 1, 2


def stream(seed: int, purpose: int) -> np.random.Generator:
    """Counter-based generator for one (seed, purpose) pair.

    The k-th draw is a pure function of (seed, purpose, k), so a round's
    randomness never depends on how other runs are scheduled.
    """
    key = np.random.SeedSequence([int(seed), int(purpose)]).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@lru_cache(maxsize=32)
def _cached_design(arm_bytes: bytes, shape: tuple, tol: float) -> DesignResult:
    a = np.frombuffer(arm_bytes, dtype=float).reshape(shape)
    return frank_wolfe_design(ArmSet(arms=a, ids=tuple(range(shape[0]))), tol=tol)


def design_for(arms: ArmSet, tol: float = 1e-3) -> DesignResult:
    """G-optimal design, computed once per (arm set, tol) per process."""
    a = np.ascontiguousarray(arms.arms)
    return _cached_design(a.tobytes(), a.shape, float(tol))


@dataclass(frozen=True)
class RunConfig:
    arms: ArmSet
    environment: EnvironmentSpec
    policy: str = "ftrl"
    horizon_T: int = 1024
    repetitions: int = 1
    base_seed: int = 0
    record_granularity: str = "power_of_two_checkpoints"
    design_tol: float = 1e-3
    arm_set_source: str | None = None
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.horizon_T is None or self.horizon_T < 1:
            raise ConfigError("horizon_T must be at least 1")
        if self.record_granularity not in GRANULARITIES:
            raise ConfigError(f"record_granularity must be one of {GRANULARITIES}")
        if self.policy not in ("ftrl", "exp2", "uniform"):
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.environment.horizon_T != self.horizon_T:
            object.__setattr__(self, "environment", self.environment.with_horizon(self.horizon_T))

    def with_horizon(self, horizon_T: int) -> "RunConfig":
        return replace(self, horizon_T=horizon_T,
                       environment=self.environment.with_horizon(horizon_T))

    def to_dict(self) -> dict:
        env = self.environment
        return {
            "arm_set_source": self.arm_set_source,
            "arms": {"ids": [str(i) for i in self.arms.ids], "vectors": self.arms.arms.tolist()},
            "environment": {
                "variant": env.variant,
                "theta": None if env.theta is None else list(env.theta),
                "noise": env.noise.to_dict(),
                "corruption": env.corruption,
                "generator": env.generator,
            },
            "policy": self.policy,
            "horizon_T": self.horizon_T,
            "repetitions": self.repetitions,
            "base_seed": self.base_seed,
            "record_granularity": self.record_granularity,
            "design_tol": self.design_tol,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RegretTrace:
    """Checkpoint rows plus run metadata.

    ``totals`` carries whole-run sums that stay valid whatever the record
    granularity; it is absent for traces read back from CSV.
    """

    rows: dict
    meta: dict
    totals: dict | None = None

    def __len__(self):
        return len(self.rows["t"])

    @property
    def final_regret(self) -> float:
        return float(self.rows["regret_expected"][-1])


def checkpoints(horizon_T: int, granularity: str) -> np.ndarray:
    if granularity == "every_round":
        return np.arange(1, horizon_T + 1)
    pts = [1 << k for k in range(horizon_T.bit_length()) if (1 << k) <= horizon_T]
    if pts[-1] != horizon_T:
        pts.append(horizon_T)
    return np.array(pts)


def gap_context(config: RunConfig, design: DesignResult | None = None) -> dict:
    """Everything ``verify_trace_invariants`` needs besides the trace itself."""
    arms = config.arms
    env = config.environment
    if design is None and config.policy != "uniform":
        design = design_for(arms, config.design_tol)
    ctx = {
        "variant": env.variant,
        "policy": config.policy,
        "num_arms": arms.size,
        "dimension": arms.d,
        "horizon_T": config.horizon_T,
        "c_const": schedule_constant(arms.d, config.horizon_T, arms.size),
        "g_pi": None if design is None else design.g_value,
        "design": None if design is None else [float(v) for v in design.pi],
        "optimal_index": None,
        "gaps": None,
        "delta_min": None,
    }
    if env.variant != "adversarial":
        prof = gap_profile(arms, env.theta, warn=False)
        ctx.update(optimal_index=prof.optimal_index, gaps=[float(g) for g in prof.gaps],
                   delta_min=prof.delta_min)
    return ctx


def run_single(config: RunConfig, seed: int) -> RegretTrace:
    """Run one seeded episode of ``config.horizon_T`` rounds."""
    arms = config.arms
    a = arms.arms
    T = config.horizon_T
    design = None if config.policy == "uniform" else design_for(arms, config.design_tol)
    policy = make_policy(config.policy, arms, design, T)
    env = build_environment(config.environment, arms, rng=stream(seed, CORRUPTION_STREAM))
    u_sample = stream(seed, SAMPLE_STREAM).random(T)
    u_noise = stream(seed, NOISE_STREAM).random(T)

    adversarial = env.variant == "adversarial"
    if not adversarial:
        prof = gap_profile(arms, env.spec.theta, warn=False)
        xstar, gaps, delta_min = prof.optimal_index, prof.gaps, prof.delta_min
        arm_losses = a @ np.asarray(env.spec.theta, dtype=float)

    pts = checkpoints(T, config.record_granularity)
    n_rows = pts.size
    rec = np.zeros(T + 2, dtype=bool)
    rec[pts] = True
    out = {c: np.zeros(n_rows) for c in TRACE_COLUMNS}
    out["t"] = pts.astype(np.int64)
    out["clips"] = np.zeros(n_rows, dtype=np.int64)
    q_rows = np.zeros((n_rows, arms.size)) if adversarial else None
    arm_rows = np.zeros((n_rows, arms.size)) if adversarial else None

    cum_exp = cum_real = 0.0
    cum_arm = np.zeros(arms.size)
    cum_one_minus_q = np.zeros(arms.size)
    sum_h = telescoping_lhs = kernel_lhs = 0.0
    clips = 0
    applied_abs = 0.0
    prev_beta = None
    row = 0
    for t in range(1, T + 1):
        theta = env.theta_for_round(t)
        dec = policy.decide(u_sample[t - 1])
        fb = env.emit_loss(t, dec.chosen_index, u_noise[t - 1])
        policy.absorb(dec, fb.observed_loss)

        q, p, i = dec.q, dec.p, dec.chosen_index
        if adversarial:
            arm_losses = a @ theta
            cum_arm += arm_losses
            cum_exp += float(p @ arm_losses)
            cum_real += float(arm_losses[i])
        else:
            cum_exp += float(p @ gaps)
            cum_real += float(gaps[i])
            kernel_lhs += (1.0 - dec.gamma) * float(q @ gaps)
        cum_one_minus_q += 1.0 - q
        h = dec.entropy_q
        sum_h += h
        if prev_beta is not None:
            telescoping_lhs += (dec.beta - prev_beta) * h
        prev_beta = dec.beta
        if fb.clipped:
            clips += 1
        applied_abs += abs(fb.corruption_applied)

        if rec[t]:
            out["regret_expected"][row] = cum_exp
            out["regret_realized"][row] = cum_real
            out["entropy_q"][row] = h
            out["beta"][row] = dec.beta
            out["gamma"][row] = dec.gamma
            out["clips"][row] = clips
            if adversarial:
                q_rows[row] = q
                arm_rows[row] = cum_arm
            else:
                out["one_minus_qstar"][row] = 1.0 - q[xstar]
            row += 1

    if config.policy == "ftrl":
        # the telescoping sum runs to H(q_{T+1}); q_{T+1} is the leader after the last update
        st = policy.state
        telescoping_lhs += (st.beta - prev_beta) * entropy(regularized_leader(st.cum_loss_est, st.beta))

    if adversarial:
        xstar = int(np.argmin(cum_arm))
        out["regret_expected"] = out["regret_expected"] - arm_rows[:, xstar]
        out["regret_realized"] = out["regret_realized"] - arm_rows[:, xstar]
        out["one_minus_qstar"] = 1.0 - q_rows[:, xstar]
        delta_min = math.nan

    totals = {
        "rounds": T,
        "sum_entropy": sum_h,
        "sum_one_minus_qstar": float(cum_one_minus_q[xstar]),
        "telescoping_lhs": telescoping_lhs if config.policy == "ftrl" else None,
        "kernel_lhs": None if adversarial else kernel_lhs,
        "max_estimate_ratio": policy.max_estimate_ratio,
        "clips": clips,
        "corruption_applied_abs": applied_abs,
        "corruption_budget": (env.corruption.budget_C if env.corruption is not None else 0.0),
    }
    meta = {
        "seed": int(seed),
        "config_hash": config.config_hash(),
        "g_pi": None if design is None else design.g_value,
        "policy": config.policy,
        "variant": env.variant,
        "num_arms": arms.size,
        "dimension": arms.d,
        "horizon_T": T,
        "c_const": schedule_constant(arms.d, T, arms.size),
        "optimal_index": xstar,
        "delta_min": delta_min,
        "granularity": config.record_granularity,
    }
    if env.corruption is not None:
        meta["corruption_applied"] = env.corruption.applied
    return RegretTrace(rows=out, meta=meta, totals=totals)


def _run_one(args):
    config, seed = args
    return run_single(config, seed)


def thread_cap() -> int:
    raw = os.environ.get("BOTW_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"BOTW_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


@dataclass
class RepetitionResult:
    traces: list
    aggregate: dict


def aggregate_traces(traces) -> dict:
    """Per-checkpoint mean and standard deviation of every numeric column."""
    agg = {"t": np.asarray(traces[0].rows["t"])}
    n = len(traces)
    for col in TRACE_COLUMNS[1:]:
        stacked = np.stack([np.asarray(tr.rows[col], dtype=float) for tr in traces])
        agg[col + "_mean"] = stacked.mean(axis=0)
        agg[col + "_std"] = stacked.std(axis=0, ddof=1) if n > 1 else np.zeros(stacked.shape[1])
    return agg


def run_repetitions(config: RunConfig, workers: int | None = None) -> RepetitionResult:
    """Run ``config.repetitions`` seeds (base_seed + rep), merged in rep order."""
    seeds = [config.base_seed + rep for rep in range(config.repetitions)]
    if workers is None:
        workers = min(thread_cap(), len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_one, [(config, s) for s in seeds]))
    else:
        traces = [run_single(config, s) for s in seeds]
    return RepetitionResult(traces=traces, aggregate=aggregate_traces(traces))


@dataclass
class SweepSummary:
    horizons: list
    mean: list
    std: list
    slope: float
    intercept: float
    residual: float
    per_horizon: list = field(default_factory=list)
    runs: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "horizons": self.horizons,
            "mean_final_regret": self.mean,
            "std_final_regret": self.std,
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "per_horizon": self.per_horizon,
        }


def fit_loglog_slope(horizons, values) -> tuple[float, float, float]:
    """OLS of ln(values) on ln(horizons); returns (slope, intercept, residual SS)."""
    x = np.log(np.asarray(horizons, dtype=float))
    y = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two horizons to fit a slope")
    if np.any(y <= 0):
        raise ValueError("log-log fit needs strictly positive regret values")
    y = np.log(y)
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(coef[0]), float(coef[1]), float(resid @ resid)


def check_grid(grid) -> list:
    grid = [int(g) for g in grid]
    if not grid:
        raise ValueError("horizon grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("horizon grid must be strictly increasing")
    if any(g < 1 or g & (g - 1) for g in grid):
        raise ValueError("every horizon in the grid must be a power of two")
    return grid


def sweep_horizons(config: RunConfig, grid, final_regrets=None,
                   workers: int | None = None) -> SweepSummary:
    """Run every horizon of ``grid`` from scratch and fit the log-log slope.

    The schedule depends on ln T, so runs at different horizons are not
    prefixes of one another. ``final_regrets(T)`` may replace the simulation
    and return the per-repetition final regrets for horizon T directly.
    """
    grid = check_grid(grid)
    means, stds, per, runs = [], [], [], {}
    for T in grid:
        if final_regrets is not None:
            finals = np.asarray(final_regrets(T), dtype=float)
            info = {"T": T}
        else:
            res = run_repetitions(config.with_horizon(T), workers=workers)
            runs[T] = res
            finals = np.array([tr.final_regret for tr in res.traces])
            reports = [verify_trace_invariants(tr) for tr in res.traces]
            info = {
                "T": T,
                "mean_final_entropy": float(np.mean([tr.rows["entropy_q"][-1] for tr in res.traces])),
                "mean_final_one_minus_qstar": float(
                    np.mean([tr.rows["one_minus_qstar"][-1] for tr in res.traces])),
                "max_estimate_ratio": float(max(tr.totals["max_estimate_ratio"] for tr in res.traces)),
                "invariants_passed": all(r.passed for r in reports),
                "g_pi": res.traces[0].meta["g_pi"],
            }
        means.append(float(finals.mean()))
        stds.append(float(finals.std(ddof=1)) if finals.size > 1 else 0.0)
        info.update(mean=means[-1], std=stds[-1])
        per.append(info)
    slope, intercept, resid = fit_loglog_slope(grid, means)
    return SweepSummary(horizons=grid, mean=means, std=stds, slope=slope, intercept=intercept,
                        residual=resid, per_horizon=per, runs=runs)


# -- invariant verification ------------------------------------------------------

CHECK_TOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str  # "pass", "fail" or "skip"
    first_violation: int | None = None
    detail: str = ""


@dataclass
class InvariantReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def by_name(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def digest(self) -> dict:
        return {c.name: c.status for c in self.checks}

    def lines(self) -> list:
        out = []
        for c in self.checks:
            where = "" if c.first_violation is None else f" (first violation at t={c.first_violation})"
            extra = f": {c.detail}" if c.detail else ""
            out.append(f"{c.status.upper():4s} {c.name}{where}{extra}")
        return out


def _first_fail(t, ok) -> int | None:
    bad = np.flatnonzero(~ok)
    return None if bad.size == 0 else int(t[bad[0]])


def _result(name, t, ok, detail="") -> CheckResult:
    first = _first_fail(t, ok)
    return CheckResult(name, "pass" if first is None else "fail", first, detail)


def _xlog_bound(x, num_arms, n):
    """x ln(e |D| n / x) with the x = 0 limit taken as 0."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(math.e * num_arms * np.asarray(n, dtype=float)[pos] / x[pos])
    return out


def verify_trace_invariants(trace: RegretTrace, context: dict | None = None) -> InvariantReport:
    """Evaluate every per-trace inequality the trace supports.

    ``context`` is the gap/schedule description produced by ``gap_context``;
    for in-memory traces it defaults to the trace metadata. Sums over rounds
    need an every-round trace unless the trace carries whole-run totals.
    """
    ctx = dict(trace.meta)
    if context:
        ctx.update({k: v for k, v in context.items() if v is not None})
    rows = trace.rows
    t = np.asarray(rows["t"], dtype=np.int64)
    beta = np.asarray(rows["beta"], dtype=float)
    gamma = np.asarray(rows["gamma"], dtype=float)
    h = np.asarray(rows["entropy_q"], dtype=float)
    omq = np.asarray(rows["one_minus_qstar"], dtype=float)
    reg = np.asarray(rows["regret_expected"], dtype=float)
    num_arms = int(ctx["num_arms"])
    ln_k = math.log(num_arms)
    policy = ctx.get("policy", "ftrl")
    variant = ctx.get("variant", "stochastic")
    full = t.size > 0 and t[0] == 1 and np.all(np.diff(t) == 1)
    totals = trace.totals
    checks = []

    if t.size == 0 or np.any(np.diff(t) <= 0):
        checks.append(CheckResult("rows_ordered", "fail", None, "round index must increase"))
        return InvariantReport(checks)

    checks.append(_result("entropy_range", t, (h >= -CHECK_TOL) & (h <= ln_k + CHECK_TOL)))
    checks.append(_result("one_minus_qstar_range", t, (omq >= -CHECK_TOL) & (omq <= 1 + CHECK_TOL)))

    if policy in ("ftrl", "exp2"):
        checks.append(_result("gamma_range", t, (gamma > 0) & (gamma <= 0.5)))
    if policy == "ftrl":
        ok = np.ones(t.size, dtype=bool)
        ok[1:] = np.diff(beta) > 0
        checks.append(_result("beta_increasing", t, ok))
        ok = np.ones(t.size, dtype=bool)
        released = gamma[:-1] < 0.5
        ok[1:] = ~released | (gamma[1:] <= gamma[:-1])
        checks.append(_result("gamma_nonincreasing", t, ok))

    if variant in ("stochastic", "corrupted"):
        ok = np.ones(t.size, dtype=bool)
        ok[1:] = np.diff(reg) >= 0
        checks.append(_result("regret_nondecreasing", t, ok))

    # entropy-selection: sum H(q_t) <= X ln(e|D|T / X), X = sum (1 - q_t(x*))
    if full:
        lhs = np.cumsum(h)
        x = np.cumsum(omq)
        rhs = _xlog_bound(x, num_arms, t)
        checks.append(_result("entropy_selection", t,
                              lhs <= rhs + CHECK_TOL * np.maximum(1.0, rhs)))
    elif totals is not None:
        x = totals["sum_one_minus_qstar"]
        rhs = float(_xlog_bound([x], num_arms, [totals["rounds"]])[0])
        ok = totals["sum_entropy"] <= rhs + CHECK_TOL * max(1.0, rhs)
        checks.append(CheckResult("entropy_selection", "pass" if ok else "fail",
                                  None if ok else int(t[-1])))
    else:
        checks.append(CheckResult("entropy_selection", "skip", None, "needs every round"))

    # beta-entropy telescoping: sum (beta_{t+1} - beta_t) H(q_{t+1}) <= 2c sqrt(ln|D| sum H(q_t))
    if policy == "ftrl":
        c = ctx.get("c_const")
        if totals is not None and totals.get("telescoping_lhs") is not None:
            rhs = 2.0 * c * math.sqrt(ln_k * totals["sum_entropy"])
            ok = totals["telescoping_lhs"] <= rhs + CHECK_TOL * max(1.0, rhs)
            checks.append(CheckResult("beta_entropy_telescoping", "pass" if ok else "fail",
                                      None if ok else int(t[-1]),
                                      f"lhs={totals['telescoping_lhs']:.6g} rhs={rhs:.6g}"))
        elif full and t.size >= 2:
            lhs = np.concatenate([[0.0], np.cumsum(np.diff(beta) * h[1:])])
            rhs = 2.0 * c * np.sqrt(ln_k * np.cumsum(h))
            # row n checks the statement at horizon n against the lhs terms through H(q_{n+1})
            ok = np.ones(t.size, dtype=bool)
            ok[:-1] = lhs[1:] <= rhs[:-1] + CHECK_TOL * np.maximum(1.0, rhs[:-1])
            checks.append(_result("beta_entropy_telescoping", t, ok))
        else:
            checks.append(CheckResult("beta_entropy_telescoping", "skip", None, "needs every round"))

    # self-bounding kernel: sum (1-gamma_t) <q_t, gap> >= delta_min/2 sum (1 - q_t(x*))
    if variant in ("stochastic", "corrupted"):
        dmin = ctx.get("delta_min")
        if dmin is None or not math.isfinite(dmin):
            checks.append(CheckResult("self_bounding_kernel", "skip", None, "no gap"))
        elif totals is not None and totals.get("kernel_lhs") is not None:
            rhs = 0.5 * dmin * totals["sum_one_minus_qstar"]
            ok = totals["kernel_lhs"] >= rhs - CHECK_TOL * max(1.0, rhs)
            checks.append(CheckResult("self_bounding_kernel", "pass" if ok else "fail",
                                      None if ok else int(t[-1])))
        elif full and ctx.get("design") is not None and ctx.get("gaps") is not None:
            pi_gap = float(np.dot(ctx["design"], ctx["gaps"])) if policy != "uniform" else 0.0
            inc = np.diff(np.concatenate([[0.0], reg]))
            lhs = np.cumsum(inc - gamma * pi_gap)
            rhs = 0.5 * dmin * np.cumsum(omq)
            scale = np.maximum(1.0, np.abs(reg))
            checks.append(_result("self_bounding_kernel", t, lhs >= rhs - CHECK_TOL * scale))
        else:
            checks.append(CheckResult("self_bounding_kernel", "skip", None,
                                      "needs every round and the design"))

    if policy == "ftrl":
        if totals is not None:
            r = totals["max_estimate_ratio"]
            ok = r <= 1.0 + CHECK_TOL
            checks.append(CheckResult("estimate_bound", "pass" if ok else "fail", None,
                                      f"max |estimate|/beta = {r:.6g}"))
        else:
            checks.append(CheckResult("estimate_bound", "skip", None,
                                      "estimates are not stored in traces"))

    if totals is not None and totals.get("corruption_budget"):
        ok = totals["corruption_applied_abs"] <= totals["corruption_budget"] + 1e-9
        checks.append(CheckResult("corruption_budget", "pass" if ok else "fail", None,
                                  f"applied {totals['corruption_applied_abs']:.6g} of "
                                  f"{totals['corruption_budget']:.6g}"))
    return InvariantReport(checks)
