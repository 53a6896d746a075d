"""FTRL with a negative-entropy regularizer, plus two comparison baselines.

Round protocol, shared by all three policies::

    decision = policy.decide(u)          # u: one uniform draw in [0, 1)
    estimate = policy.absorb(decision, observed_loss)

``decide`` never looks at the current loss and ``absorb`` is the only place
the state changes, so the schedule at round t depends on H(q_1..q_{t-1}) only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from botw.errors import (
    HorizonMissing,
    InvariantViolation,
    LossOutOfRange,
    NonFiniteInput,
)
from botw.geometry import ArmSet, DesignResult, cho_solve, cholesky, covariance

PROB_FLOOR = 1e-300
# slack on |loss estimate| <= beta for floating-point rounding only
BOUND_RTOL = 1e-9


def entropy(p) -> float:
    """Shannon entropy in nats with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=float)
    if p.min() > 0.0:
        return float(-(p @ np.log(p)))
    nz = p[p > 0.0]
    return float(-(nz @ np.log(nz)))


def regularized_leader(cum_loss_est, beta: float) -> np.ndarray:
    """argmin_p <L, p> - beta H(p) over the simplex: p(x) ~ exp(-L(x) / beta)."""
    if not beta > 0.0 or not math.isfinite(beta):
        raise NonFiniteInput(f"beta must be positive and finite, got {beta!r}")
    L = np.asarray(cum_loss_est, dtype=float)
    low = L.min()
    if not (math.isfinite(low) and math.isfinite(L.sum())):
        raise NonFiniteInput("cumulative loss estimates contain non-finite values")
    w = np.exp((low - L) / beta)
    w /= w.sum()
    if w.min() < PROB_FLOOR:
        np.maximum(w, PROB_FLOOR, out=w)
        w /= w.sum()
    return w


def ftrl_objective(p, cum_loss_est, beta: float) -> float:
    return float(np.dot(cum_loss_est, p)) - beta * entropy(p)


def compute_gamma(beta: float, g_pi: float) -> float:
    return min(g_pi / beta, 0.5)


def mix(q, pi, gamma: float) -> np.ndarray:
    """gamma * pi + (1 - gamma) * q."""
    if not 0.0 <= gamma <= 0.5:
        raise ValueError(f"gamma must lie in [0, 1/2], got {gamma}")
    return gamma * np.asarray(pi, dtype=float) + (1.0 - gamma) * np.asarray(q, dtype=float)


def inverse_cdf(p: np.ndarray, u: float) -> int:
    """Index i with cdf(i-1) <= u < cdf(i), in arm order."""
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if i >= p.shape[0]:
        i = int(np.flatnonzero(p > 0.0)[-1])
    return i


def sample_arm(p, rng: np.random.Generator) -> int:
    """Draw an arm index from p; consumes exactly one uniform from ``rng``."""
    return inverse_cdf(np.asarray(p, dtype=float), float(rng.random()))


def estimate_loss(arms, p, chosen: int, observed_loss: float, context=None) -> np.ndarray:
    """Least-squares estimate x^T Sigma^{-1} x_chosen * loss for every arm.

    ``context`` may be ``(gamma, g_pi)``; the estimate is then checked against
    |estimate| <= g_pi / gamma, which holds whenever Sigma dominates gamma V(pi).
    """
    if not abs(observed_loss) <= 1.0:
        raise LossOutOfRange(f"observed loss {observed_loss!r} outside [-1, 1]")
    a = arms.arms if isinstance(arms, ArmSet) else np.asarray(arms, dtype=float)
    factor = cholesky(covariance(p, a))
    w = cho_solve(factor, a[chosen])
    est = (a @ w) * observed_loss
    if context is not None:
        gamma, g_pi = context
        bound = g_pi / gamma
        worst = float(np.abs(est).max())
        if worst > bound * (1.0 + BOUND_RTOL):
            raise InvariantViolation(f"|loss estimate| {worst:.17g} exceeds g/gamma = {bound:.17g}")
    return est


def schedule_constant(d: int, horizon_T: int, num_arms: int) -> float:
    """sqrt(d ln T / ln |D|)."""
    if horizon_T is None:
        raise HorizonMissing("the learning-rate schedule needs the horizon T")
    if horizon_T < 1:
        raise ValueError("horizon must be at least 1")
    return math.sqrt(d * math.log(horizon_T) / math.log(num_arms))


def beta_schedule_direct(entropies, g_pi: float, c: float, num_arms: int) -> np.ndarray:
    """beta_1..beta_{n+1} re-summed from scratch from H(q_1..q_n); test oracle."""
    ln_k = math.log(num_arms)
    out = [2.0 * g_pi + c]
    for tau in range(1, len(entropies) + 1):
        total = 2.0 * g_pi + c
        for j in range(1, tau + 1):
            # left-to-right partial sums, the same order the incremental update uses
            partial = 0.0
            for h in entropies[:j]:
                partial += h
            total += c / math.sqrt(1.0 + partial / ln_k)
        out.append(total)
    return np.array(out)


@dataclass
class FtrlState:
    t: int
    cum_loss_est: np.ndarray
    cum_entropy: float
    beta: float
    gamma: float
    horizon_T: int
    c_const: float
    g_pi: float
    design: np.ndarray
    log_num_arms: float

    @classmethod
    def initial(cls, arms: ArmSet, design: DesignResult, horizon_T: int | None) -> "FtrlState":
        c = schedule_constant(arms.d, horizon_T, arms.size)
        beta = 2.0 * design.g_value + c
        return cls(t=1, cum_loss_est=np.zeros(arms.size), cum_entropy=0.0, beta=beta,
                   gamma=compute_gamma(beta, design.g_value), horizon_T=horizon_T,
                   c_const=c, g_pi=design.g_value, design=np.asarray(design.pi),
                   log_num_arms=math.log(arms.size))


@dataclass(frozen=True)
class PolicyDecision:
    q: np.ndarray
    p: np.ndarray
    chosen_index: int
    entropy_q: float
    beta: float
    gamma: float


def compute_beta(state: FtrlState) -> float:
    """Current beta_t; the running sum is advanced one summand per absorbed round."""
    if state.horizon_T is None:
        raise HorizonMissing("the learning-rate schedule needs the horizon T")
    return state.beta


def ftrl_step(state: FtrlState, arms: ArmSet, rng) -> PolicyDecision:
    """Lines 3-5 of one round: leader, mixing, sampling.

    ``rng`` is a numpy Generator or an already drawn uniform in [0, 1).
    """
    beta = compute_beta(state)
    gamma = compute_gamma(beta, state.g_pi)
    state.gamma = gamma
    q = regularized_leader(state.cum_loss_est, beta)
    p = mix(q, state.design, gamma)
    u = float(rng) if isinstance(rng, (float, np.floating)) else float(rng.random())
    return PolicyDecision(q=q, p=p, chosen_index=inverse_cdf(p, u),
                          entropy_q=entropy(q), beta=beta, gamma=gamma)


def absorb_feedback(state: FtrlState, arms: ArmSet, decision: PolicyDecision,
                    observed_loss: float) -> np.ndarray:
    """Line 6 plus the schedule update; returns the loss estimate."""
    est = estimate_loss(arms, decision.p, decision.chosen_index, observed_loss)
    worst = float(np.abs(est).max())
    if worst > decision.beta * (1.0 + BOUND_RTOL):
        raise InvariantViolation(
            f"round {state.t}: |loss estimate| {worst:.17g} > beta {decision.beta:.17g}",
            round_index=state.t,
        )
    state.cum_loss_est = state.cum_loss_est + est
    state.cum_entropy += decision.entropy_q
    state.beta += state.c_const / math.sqrt(1.0 + state.cum_entropy / state.log_num_arms)
    state.t += 1
    return est


class FtrlPolicy:
    """Algorithm 1 with the anytime-entropy learning rate; needs the horizon."""

    name = "ftrl"

    def __init__(self, arms: ArmSet, design: DesignResult, horizon_T: int):
        self.arms = arms
        self.state = FtrlState.initial(arms, design, horizon_T)
        self.max_estimate_ratio = 0.0

    def decide(self, u) -> PolicyDecision:
        return ftrl_step(self.state, self.arms, u)

    def absorb(self, decision: PolicyDecision, observed_loss: float) -> np.ndarray:
        est = absorb_feedback(self.state, self.arms, decision, observed_loss)
        ratio = float(np.abs(est).max()) / decision.beta
        if ratio > self.max_estimate_ratio:
            self.max_estimate_ratio = ratio
        return est


class Exp2Policy:
    """Fixed-rate exponential weights with G-optimal exploration.

    beta = sqrt(d T / ln|D|) and gamma = min(g(pi) / beta, 1/2) for every round.
    """

    name = "exp2"

    def __init__(self, arms: ArmSet, design: DesignResult, horizon_T: int):
        if horizon_T is None:
            raise HorizonMissing("exp2 needs the horizon T")
        self.arms = arms
        self.design = np.asarray(design.pi)
        self.g_pi = design.g_value
        self.beta = math.sqrt(arms.d * horizon_T / math.log(arms.size))
        self.gamma = compute_gamma(self.beta, self.g_pi)
        self.cum_loss_est = np.zeros(arms.size)
        self.t = 1
        self.max_estimate_ratio = 0.0

    def decide(self, u) -> PolicyDecision:
        q = regularized_leader(self.cum_loss_est, self.beta)
        p = mix(q, self.design, self.gamma)
        u = float(u) if isinstance(u, (float, np.floating)) else float(u.random())
        return PolicyDecision(q=q, p=p, chosen_index=inverse_cdf(p, u),
                              entropy_q=entropy(q), beta=self.beta, gamma=self.gamma)

    def absorb(self, decision: PolicyDecision, observed_loss: float) -> np.ndarray:
        est = estimate_loss(self.arms, decision.p, decision.chosen_index, observed_loss,
                            context=(self.gamma, self.g_pi))
        self.max_estimate_ratio = max(self.max_estimate_ratio,
                                      float(np.abs(est).max()) * self.gamma / self.g_pi)
        self.cum_loss_est = self.cum_loss_est + est
        self.t += 1
        return est


class UniformPolicy:
    """Plays uniformly at random; linear-regret control."""

    name = "uniform"

    def __init__(self, arms: ArmSet, design: DesignResult | None = None, horizon_T: int | None = None):
        self.arms = arms
        self._p = np.full(arms.size, 1.0 / arms.size)
        self._p.setflags(write=False)
        self._h = math.log(arms.size)
        self.t = 1
        self.max_estimate_ratio = 0.0

    def decide(self, u) -> PolicyDecision:
        u = float(u) if isinstance(u, (float, np.floating)) else float(u.random())
        return PolicyDecision(q=self._p, p=self._p, chosen_index=inverse_cdf(self._p, u),
                              entropy_q=self._h, beta=math.nan, gamma=0.0)

    def absorb(self, decision: PolicyDecision, observed_loss: float):
        if not abs(observed_loss) <= 1.0:
            raise LossOutOfRange(f"observed loss {observed_loss!r} outside [-1, 1]")
        self.t += 1
        return None


def baseline_exp2_step(policy: Exp2Policy, rng) -> PolicyDecision:
    return policy.decide(rng)


def baseline_uniform_step(policy: UniformPolicy, rng) -> PolicyDecision:
    return policy.decide(rng)


POLICIES = {"ftrl": FtrlPolicy, "exp2": Exp2Policy, "uniform": UniformPolicy}


def make_policy(name: str, arms: ArmSet, design: DesignResult, horizon_T: int):
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return cls(arms, design, horizon_T)
