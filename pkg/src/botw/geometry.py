"""Linear-algebra kernel: arm sets, moment matrices, SPD solves, G-optimal design.

Distributions over arms are plain 1-D float arrays indexed like ``ArmSet.arms``;
moment matrices are plain 2-D arrays. Both are treated as immutable once built.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from botw.errors import (
    NormViolation,
    NotConverged,
    RankDeficient,
    SingularMatrix,
    TooFewArms,
)

NORM_SLACK = 1e-12
RANK_EPS = 1e-12
PIVOT_EPS = 1e-12
SIMPLEX_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ArmSet:
    """The finite action set. ``arms`` is a read-only (|D|, d) array."""

    arms: np.ndarray
    ids: tuple

    @property
    def d(self) -> int:
        return self.arms.shape[1]

    @property
    def size(self) -> int:
        return self.arms.shape[0]

    def __len__(self) -> int:
        return self.arms.shape[0]

    def index_of(self, arm_id) -> int:
        return self.ids.index(arm_id)


@dataclass(frozen=True)
class DesignResult:
    pi: np.ndarray
    g_value: float
    moment: np.ndarray
    iterations: int
    converged: bool
    # ln det V(pi) after each accepted step, starting from the initial design
    logdet_history: np.ndarray = field(repr=False, default=None)


def validate_arm_set(raw_vectors: Sequence[Sequence[float]], ids: Sequence | None = None) -> ArmSet:
    """Build an ArmSet, enforcing |D| >= 2, ||x|| <= 1 and full span."""
    if len(raw_vectors) == 0:
        raise TooFewArms("arm set is empty")
    lengths = {len(v) for v in raw_vectors}
    if len(lengths) != 1:
        raise ValueError(f"arms have inconsistent dimensions: {sorted(lengths)}")
    arms = np.array(raw_vectors, dtype=float)
    if arms.ndim != 2 or arms.shape[1] < 1:
        raise ValueError("arms must be non-empty real vectors")
    if not np.all(np.isfinite(arms)):
        raise ValueError("arm coordinates must be finite")
    n, d = arms.shape
    if n < 2:
        raise TooFewArms(f"need at least 2 arms, got {n}")
    norms = np.linalg.norm(arms, axis=1)
    bad = np.flatnonzero(norms > 1.0 + NORM_SLACK)
    if bad.size:
        i = int(bad[0])
        raise NormViolation(f"arm {i} has Euclidean norm {norms[i]:.17g} > 1")
    if ids is None:
        ids = tuple(range(n))
    else:
        ids = tuple(ids)
        if len(ids) != n:
            raise ValueError("ids and arms differ in length")
        if len(set(ids)) != n:
            raise ValueError("arm ids must be unique")
    uniform = np.full(n, 1.0 / n)
    min_eig = float(np.linalg.eigvalsh(covariance(uniform, arms)).min())
    if min_eig <= RANK_EPS:
        raise RankDeficient(
            f"arms do not span R^{d}: uniform moment matrix has min eigenvalue {min_eig:.3g}"
        )
    arms.setflags(write=False)
    return ArmSet(arms=arms, ids=ids)


def check_simplex(probs, size: int | None = None) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1:
        raise ValueError("distribution must be a 1-D vector")
    if size is not None and p.shape[0] != size:
        raise ValueError(f"distribution has {p.shape[0]} entries, expected {size}")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0):
        raise ValueError("distribution entries must be finite and non-negative")
    if abs(p.sum() - 1.0) > SIMPLEX_SUM_TOL:
        raise ValueError(f"distribution sums to {p.sum():.17g}, not 1")
    return p


def _as_matrix(arms) -> np.ndarray:
    return arms.arms if isinstance(arms, ArmSet) else np.asarray(arms, dtype=float)


def covariance(dist, arms) -> np.ndarray:
    """Sum_x p(x) x x^T, assembled so the result is bitwise symmetric."""
    a = _as_matrix(arms)
    p = np.asarray(dist, dtype=float)
    if p.shape[0] != a.shape[0]:
        raise ValueError("distribution and arm set have different sizes")
    m = (a * p[:, None]).T @ a
    return 0.5 * (m + m.T)


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; SingularMatrix if any pivot is <= 1e-12."""
    m = np.asarray(m, dtype=float)
    factor, info = lapack.dpotrf(m, lower=1, clean=1)
    if info != 0:
        raise SingularMatrix(f"matrix is not positive definite (potrf info={info})")
    low = float(factor.diagonal().min()) ** 2
    if low <= PIVOT_EPS:
        raise SingularMatrix(f"factorization pivot {low:.3g} <= {PIVOT_EPS}")
    return factor


def cho_solve(factor: np.ndarray, v) -> np.ndarray:
    w, info = lapack.dpotrs(factor, np.asarray(v, dtype=float), lower=1)
    if info != 0:
        raise ValueError(f"potrs failed with info={info}")
    return w


def spd_solve(m, v) -> np.ndarray:
    """Solve m w = v for symmetric positive-definite m via Cholesky."""
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if v.shape[0] != m.shape[0]:
        raise ValueError("right-hand side has the wrong length")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    return cho_solve(cholesky(m), v)


def leverages(moment: np.ndarray, arms) -> np.ndarray:
    """x^T V^{-1} x for every arm."""
    a = _as_matrix(arms)
    factor = cholesky(moment)
    w = cho_solve(factor, a.T)
    return np.einsum("ij,ji->i", a, w)


def g_value(dist, arms) -> float:
    """max_x x^T V(dist)^{-1} x."""
    return float(leverages(covariance(dist, arms), arms).max())


def _logdet(moment: np.ndarray) -> float:
    return 2.0 * float(np.log(np.diag(cholesky(moment))).sum())


def frank_wolfe_design(arms: ArmSet, tol: float = 1e-3, max_iter: int = 100_000,
                       refresh_every: int = 500) -> DesignResult:
    """G-optimal design by Frank-Wolfe on the D-optimal objective.

    Each step moves mass toward the arm with the largest leverage ``a`` using
    the exact line-search step (a - d) / (d (a - 1)). The inverse moment matrix
    and all leverages are updated by rank-one formulas and recomputed from
    scratch every ``refresh_every`` steps and before declaring convergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    a = arms.arms
    n, d = a.shape
    threshold = d * (1.0 + tol)
    pi = np.full(n, 1.0 / n)

    def exact_state(weights):
        moment = covariance(weights, a)
        factor = cholesky(moment)
        inv = cho_solve(factor, np.eye(d))
        inv = 0.5 * (inv + inv.T)
        lev = np.einsum("ij,jk,ik->i", a, inv, a)
        return inv, lev, 2.0 * float(np.log(np.diag(factor)).sum())

    inv, lev, logdet = exact_state(pi)
    history = [logdet]
    converged = False
    it = 0
    since_refresh = 0
    while True:
        i = int(np.argmax(lev))
        top = float(lev[i])
        if top <= threshold:
            inv, lev, logdet_exact = exact_state(pi)
            history[-1] = logdet_exact
            since_refresh = 0
            i = int(np.argmax(lev))
            top = float(lev[i])
            if top <= threshold:
                converged = True
                break
        if it >= max_iter:
            break
        step = (top - d) / (d * (top - 1.0))
        if step >= 1.0:
            # only when d = 1: all mass moves to the longest arm
            pi = np.zeros(n)
            pi[i] = 1.0
            inv, lev, logdet = exact_state(pi)
            it += 1
            since_refresh = 0
            history.append(logdet)
            continue
        u = inv @ a[i]
        denom = 1.0 - step + step * top
        inv = (inv - (step / denom) * np.outer(u, u)) / (1.0 - step)
        proj = a @ u
        lev = (lev - (step / denom) * proj * proj) / (1.0 - step)
        pi *= 1.0 - step
        pi[i] += step
        new_logdet = logdet + (d - 1) * math.log1p(-step) + math.log(denom)
        if new_logdet < logdet - 1e-12 * max(1.0, abs(logdet)):
            raise AssertionError(f"D-optimal objective increased at iteration {it}")
        logdet = new_logdet
        it += 1
        since_refresh += 1
        if since_refresh >= refresh_every:
            pi /= pi.sum()
            inv, lev, logdet = exact_state(pi)
            since_refresh = 0
        history.append(logdet)

    pi = pi / pi.sum()
    moment = covariance(pi, a)
    g = float(leverages(moment, a).max())
    converged = converged and g <= threshold
    if not converged:
        warnings.warn(
            f"Frank-Wolfe stopped after {it} iterations with g={g:.6g} > {threshold:.6g}",
            NotConverged,
            stacklevel=2,
        )
    pi.setflags(write=False)
    moment.setflags(write=False)
    return DesignResult(pi=pi, g_value=g, moment=moment, iterations=it,
                        converged=converged, logdet_history=np.array(history))
