"""Loss-generating environments and the ground truth used for regret accounting.

An ``Environment`` is single-run mutable state. Each round the harness calls
``theta_for_round(t)`` (the loss vector is committed using history through
t - 1 only) and then ``emit_loss(t, chosen_index, u)`` with a uniform draw that
drives the noise.
"""
from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from botw.errors import ConfigError, HorizonExceeded, InfeasibleBudget, NonUniqueOptimum
from botw.geometry import ArmSet

log = logging.getLogger(__name__)

TIE_EPS = 1e-12
THETA_NORM_SLACK = 1e-12


# -- noise -------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean noise: ``none``, ``uniform`` on (-sigma, sigma), or ``gaussian``.

    Gaussian noise is N(0, sigma^2) truncated symmetrically to
    [-(1 - |mean|), 1 - |mean|] so the noisy loss stays in [-1, 1] and the
    noise keeps mean zero.
    """

    kind: str = "none"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "gaussian"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind != "none" and not self.sigma > 0:
            raise ConfigError("noise sigma must be positive")

    def draw(self, u: float, mean: float) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "uniform":
            return self.sigma * (2.0 * u - 1.0)
        half = max(0.0, 1.0 - abs(mean))
        if half == 0.0:
            return 0.0
        lo = ndtr(-half / self.sigma)
        hi = ndtr(half / self.sigma)
        return float(self.sigma * ndtri(lo + u * (hi - lo)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma}


# -- corruption --------------------------------------------------------------

CORRUPTION_KINDS = ("front_loaded", "on_optimal_rounds", "random_rounds")


class CorruptionSchedule:
    """Per-round corruption c_t with total budget C = sum |c_t|.

    ``front_loaded`` and ``random_rounds`` are fixed up front in ``values``.
    ``on_optimal_rounds`` is adaptive: it adds ``sign * cap`` whenever the
    pulled arm is the optimal one (or ``-sign * cap`` on other pulls when
    ``penalize_others``) until the budget runs out.
    """

    def __init__(self, kind: str, budget_C: float, per_round_cap: float, horizon_T: int,
                 values: np.ndarray | None = None, sign: float = 1.0,
                 penalize_others: bool = False):
        self.kind = kind
        self.budget_C = float(budget_C)
        self.per_round_cap = float(per_round_cap)
        self.horizon_T = int(horizon_T)
        self.values = values
        self.sign = float(sign)
        self.penalize_others = penalize_others
        self.remaining = float(budget_C)
        self.applied = np.zeros(self.horizon_T)

    @property
    def adaptive(self) -> bool:
        return self.values is None

    def value(self, t: int, pulled_optimal: bool) -> float:
        if not self.adaptive:
            return float(self.values[t - 1])
        if self.remaining <= 0.0:
            return 0.0
        if pulled_optimal:
            direction = self.sign
        elif self.penalize_others:
            direction = -self.sign
        else:
            return 0.0
        amount = min(self.per_round_cap, self.remaining)
        self.remaining -= amount
        return direction * amount

    def fresh(self) -> "CorruptionSchedule":
        return CorruptionSchedule(self.kind, self.budget_C, self.per_round_cap, self.horizon_T,
                                  values=self.values, sign=self.sign,
                                  penalize_others=self.penalize_others)


def corruption_schedule_build(kind: str, budget_C: float, per_round_cap: float, horizon_T: int,
                              rng: np.random.Generator | None = None, sign: float = 1.0,
                              penalize_others: bool | None = None) -> CorruptionSchedule:
    """Build a schedule; ``penalize_others`` defaults to True for ``on_optimal_rounds``."""
    if kind not in CORRUPTION_KINDS:
        raise ConfigError(f"unknown corruption kind {kind!r}; choose from {CORRUPTION_KINDS}")
    if budget_C < 0:
        raise ConfigError("corruption budget must be non-negative")
    if not 0.0 < per_round_cap <= 2.0:
        raise ConfigError("per-round corruption cap must lie in (0, 2]")
    if sign not in (1.0, -1.0, 1, -1):
        raise ConfigError("corruption sign must be +1 or -1")
    if budget_C > horizon_T * per_round_cap * (1.0 + 1e-12):
        raise InfeasibleBudget(
            f"budget {budget_C} exceeds T * cap = {horizon_T * per_round_cap}"
        )
    if kind == "on_optimal_rounds":
        return CorruptionSchedule(kind, budget_C, per_round_cap, horizon_T, sign=sign,
                                  penalize_others=True if penalize_others is None else penalize_others)

    amounts = _split_budget(budget_C, per_round_cap)
    values = np.zeros(horizon_T)
    if kind == "front_loaded":
        rounds = np.arange(amounts.size)
    else:
        if rng is None:
            raise ConfigError("random_rounds corruption needs a random generator")
        rounds = np.sort(rng.choice(horizon_T, size=amounts.size, replace=False))
    values[rounds] = sign * amounts
    values.setflags(write=False)
    return CorruptionSchedule(kind, budget_C, per_round_cap, horizon_T, values=values, sign=sign)


def _split_budget(budget: float, cap: float) -> np.ndarray:
    full = int(math.floor(budget / cap + 1e-12))
    rest = budget - full * cap
    amounts = [cap] * full
    if rest > 1e-15:
        amounts.append(rest)
    elif rest < 0:
        # budget/cap rounded up past an integer; shave the last slot
        amounts[-1] += rest
    return np.array(amounts, dtype=float)


# -- adversaries -------------------------------------------------------------

class History(Sequence):
    """Read-only view of past (arm_index, observed_loss) pairs."""

    __slots__ = ("_items",)

    def __init__(self, items: list):
        self._items = items

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class AlternatingGenerator:
    """theta_t = (-1)^t v."""

    def __init__(self, v):
        self.v = np.asarray(v, dtype=float)

    def __call__(self, t, history):
        return self.v if t % 2 == 0 else -self.v


class SinusoidalGenerator:
    """theta_t = cos(omega t) u + sin(omega t) v."""

    def __init__(self, u, v, omega: float):
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.omega = float(omega)

    def __call__(self, t, history):
        return math.cos(self.omega * t) * self.u + math.sin(self.omega * t) * self.v


class FixedSequenceGenerator:
    def __init__(self, thetas):
        self.thetas = np.asarray(thetas, dtype=float)

    def __call__(self, t, history):
        if t > self.thetas.shape[0]:
            raise HorizonExceeded(f"theta sequence has {self.thetas.shape[0]} rounds, asked for {t}")
        return self.thetas[t - 1]


class FollowTheCrowdGenerator:
    """Puts unit loss on the direction of the most-pulled arm so far.

    Ties go to the lowest index; before any pull the first arm is targeted.
    """

    def __init__(self, arms: ArmSet, scale: float = 1.0):
        self.arms = arms.arms
        self.scale = float(scale)
        self.counts = np.zeros(arms.size, dtype=np.int64)
        self._seen = 0

    def __call__(self, t, history):
        for i in range(self._seen, len(history)):
            self.counts[history[i][0]] += 1
        self._seen = len(history)
        x = self.arms[int(np.argmax(self.counts))]
        n = float(np.linalg.norm(x))
        return self.scale * x / n if n > 0 else np.zeros_like(x)


# -- environment ---------------------------------------------------------------

@dataclass(frozen=True)
class EnvironmentSpec:
    """Static description of an environment; ``build`` makes the run-time state."""

    variant: str
    horizon_T: int
    theta: tuple | None = None
    noise: NoiseSpec = NoiseSpec()
    corruption: dict | None = None
    generator: dict | None = None

    def __post_init__(self):
        if self.variant not in ("stochastic", "adversarial", "corrupted"):
            raise ConfigError(f"unknown environment variant {self.variant!r}")
        if self.horizon_T is None or self.horizon_T < 1:
            raise ConfigError("environment horizon must be at least 1")
        if self.variant in ("stochastic", "corrupted"):
            if self.theta is None:
                raise ConfigError("environment.theta is required for stochastic and corrupted variants")
            if np.linalg.norm(self.theta) > 1.0 + THETA_NORM_SLACK:
                raise ConfigError("environment.theta must have Euclidean norm <= 1")
        if self.variant == "corrupted" and self.corruption is None:
            raise ConfigError("environment.corruption is required for the corrupted variant")
        if self.variant == "adversarial" and self.generator is None:
            raise ConfigError("environment.generator is required for the adversarial variant")

    def with_horizon(self, horizon_T: int) -> "EnvironmentSpec":
        return EnvironmentSpec(self.variant, horizon_T, self.theta, self.noise,
                               self.corruption, self.generator)


def make_generator(cfg: dict, arms: ArmSet):
    kind = cfg.get("kind")
    if kind == "alternating":
        return AlternatingGenerator(cfg["v"])
    if kind == "sinusoidal":
        return SinusoidalGenerator(cfg["u"], cfg["v"], cfg["omega"])
    if kind == "fixed":
        if "thetas" in cfg:
            return FixedSequenceGenerator(cfg["thetas"])
        from botw.files import read_theta_sequence
        return FixedSequenceGenerator(read_theta_sequence(cfg["path"]))
    if kind == "follow_the_crowd":
        return FollowTheCrowdGenerator(arms, cfg.get("scale", 1.0))
    raise ConfigError(f"unknown adversary generator {kind!r}")


@dataclass(frozen=True)
class Feedback:
    observed_loss: float
    clean_mean_loss: float
    corruption_applied: float
    clipped: bool
    noise: float = 0.0


class Environment:
    def __init__(self, spec: EnvironmentSpec, arms: ArmSet, generator=None,
                 corruption: CorruptionSchedule | None = None):
        self.spec = spec
        self.arms = arms
        self.horizon_T = spec.horizon_T
        self.variant = spec.variant
        self.generator = generator
        self.corruption = corruption
        self.noise = spec.noise
        self._history: list = []
        self.history = History(self._history)
        self._theta = None if spec.theta is None else np.asarray(spec.theta, dtype=float)
        self._committed_t = 0
        self.optimal_index = None
        if self.variant != "adversarial":
            self.optimal_index = gap_profile(arms, self._theta, warn=False).optimal_index

    def theta_for_round(self, t: int) -> np.ndarray:
        if t > self.horizon_T:
            raise HorizonExceeded(f"round {t} beyond horizon {self.horizon_T}")
        if t != self._committed_t + 1 or len(self._history) != t - 1:
            raise RuntimeError(f"round {t} committed out of order")
        self._committed_t = t
        if self.variant == "adversarial":
            theta = np.asarray(self.generator(t, self.history), dtype=float)
            if np.linalg.norm(theta) > 1.0 + THETA_NORM_SLACK:
                raise ConfigError(f"adversary produced theta with norm > 1 at round {t}")
            self._theta_t = theta
            return theta
        return self._theta

    def emit_loss(self, t: int, chosen_index: int, u: float = 0.5) -> Feedback:
        if t > self.horizon_T:
            raise HorizonExceeded(f"round {t} beyond horizon {self.horizon_T}")
        if t != self._committed_t:
            raise RuntimeError(f"theta for round {t} was not committed before the pull")
        x = self.arms.arms[chosen_index]
        if self.variant == "adversarial":
            clean = float(x @ self._theta_t)
            base, c = clean, 0.0
        else:
            clean = float(x @ self._theta)
            eps = self.noise.draw(u, clean)
            base = clean + eps
            c = 0.0
            if self.corruption is not None:
                c = self.corruption.value(t, chosen_index == self.optimal_index)
        raw = base + c
        observed = min(1.0, max(-1.0, raw))
        clipped = observed != raw
        applied = 0.0
        if c != 0.0:
            applied = observed - min(1.0, max(-1.0, base))
            if self.corruption is not None:
                self.corruption.applied[t - 1] = applied
        if clipped:
            log.debug("round %d: loss %.17g clipped to %.17g", t, raw, observed)
        self._history.append((chosen_index, observed))
        return Feedback(observed_loss=observed, clean_mean_loss=clean,
                        corruption_applied=applied, clipped=clipped, noise=base - clean)


def build_environment(spec: EnvironmentSpec, arms: ArmSet,
                      rng: np.random.Generator | None = None) -> Environment:
    """Instantiate fresh run state; ``rng`` seeds randomized corruption schedules."""
    generator = None
    corruption = None
    if spec.variant == "adversarial":
        generator = make_generator(spec.generator, arms)
    if spec.variant == "corrupted":
        cfg = spec.corruption
        corruption = corruption_schedule_build(
            cfg.get("kind", "front_loaded"), cfg["budget_C"], cfg.get("per_round_cap", 0.5),
            spec.horizon_T, rng=rng, sign=cfg.get("sign", 1.0),
            penalize_others=cfg.get("penalize_others"))
    return Environment(spec, arms, generator=generator, corruption=corruption)


def emit_loss(env: Environment, t: int, chosen_index: int,
              rng: np.random.Generator | None = None) -> Feedback:
    """Commit theta_t (if not yet done) and emit the loss of ``chosen_index``."""
    if env._committed_t < t:
        env.theta_for_round(t)
    u = 0.5 if rng is None else float(rng.random())
    return env.emit_loss(t, chosen_index, u)


# -- ground truth ----------------------------------------------------------------

@dataclass(frozen=True)
class GapProfile:
    optimal_index: int
    gaps: np.ndarray
    delta_min: float
    unique: bool = True


def gap_profile(arms, theta, warn: bool = True) -> GapProfile:
    a = arms.arms if isinstance(arms, ArmSet) else np.asarray(arms, dtype=float)
    losses = a @ np.asarray(theta, dtype=float)
    best = int(np.argmin(losses))
    gaps = losses - losses[best]
    gaps[best] = 0.0
    tied = np.flatnonzero(gaps <= TIE_EPS)
    unique = tied.size == 1
    if not unique and warn:
        warnings.warn(f"optimal arm is not unique (arms {tied.tolist()})", NonUniqueOptimum,
                      stacklevel=2)
    positive = gaps[gaps > TIE_EPS]
    delta_min = float(positive.min()) if positive.size else math.nan
    gaps.setflags(write=False)
    return GapProfile(optimal_index=best, gaps=gaps, delta_min=delta_min, unique=unique)


def pseudo_regret_increment(arm_losses: np.ndarray, p: np.ndarray, chosen_index: int,
                            optimal_index: int) -> tuple[float, float]:
    """(realized, expected) one-round pseudo-regret against ``optimal_index``.

    ``arm_losses`` is <x, theta_t> for every arm.
    """
    best = arm_losses[optimal_index]
    return float(arm_losses[chosen_index] - best), float(p @ arm_losses - best)


def best_fixed_arm(arms, thetas) -> int:
    """Best fixed arm in hindsight over a realized theta sequence (lowest index on ties)."""
    a = arms.arms if isinstance(arms, ArmSet) else np.asarray(arms, dtype=float)
    return int(np.argmin(a @ np.asarray(thetas, dtype=float).sum(axis=0)))
