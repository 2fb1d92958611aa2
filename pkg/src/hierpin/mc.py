"""Seeded population-dynamics engine for the random recursion.

A pool of M samples of log R_n stands in for the level-n law. One step
draws, for each of M offspring, two distinct parent indices and applies
log R' = logaddexp(l_i + l_j, log(B-1)) - log B. Everything stays in
log space: in the localized phase log R_n doubles per level and linear
space overflows around n = 40 even for tiny free energies.

Randomness is counter-based (Philox) and keyed by (seed, replica_id,
level, draw), so results are a pure function of the inputs and
bit-identical under any parallel schedule. Error bars come only from
independent replicas; within-pool spread is correlated and never used.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import Disorder, ModelParams, kB

Z99 = 2.5758293035489004  # two-sided 99% normal quantile


def _generator(seed: int, replica_id: int, level: int) -> np.random.Generator:
    # the full key (seed, replica, level, draw) is normative: draw k of a
    # level is position k of this stream, independent of evaluation order
    key = np.array([seed, replica_id], dtype=np.uint64)
    counter = np.array([0, 0, level, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class LogPool:
    n: int
    logs: np.ndarray
    M: int
    seed: int
    replica_id: int

    def check(self, B: float) -> None:
        if self.M < 2 or self.logs.size != self.M:
            raise AssertionError("pool needs M >= 2 entries")
        if not np.all(np.isfinite(self.logs)):
            raise AssertionError("pool entries must be finite")
        if self.n >= 1 and float(self.logs.min()) < math.log((B - 1.0) / B) - 1e-12:
            raise AssertionError("pool entry below the (B-1)/B floor")


def pool_init(params: ModelParams, disorder: Disorder, M: int, seed: int, replica_id: int) -> LogPool:
    if M < 2:
        raise ValueError("M must be >= 2")
    omega = disorder.sample(_generator(seed, replica_id, 0), M)
    logs = params.beta * omega - disorder.log_mgf(params.beta) + params.h
    return LogPool(0, np.asarray(logs, dtype=np.float64), M, seed, replica_id)


def pool_step(pool: LogPool, B: float) -> LogPool:
    M = pool.M
    g = _generator(pool.seed, pool.replica_id, pool.n + 1)
    i = g.integers(0, M, M)
    j = g.integers(0, M - 1, M)
    j += j >= i  # uniform over indices != i
    logs = np.logaddexp(pool.logs[i] + pool.logs[j], math.log(B - 1.0)) - math.log(B)
    return LogPool(pool.n + 1, logs, M, pool.seed, pool.replica_id)


def evolve_pools(
    params: ModelParams,
    disorder: Disorder,
    M: int,
    N: int,
    replicas: int,
    seed: int,
    workers: int = 1,
    per_level: Callable[[int, list[LogPool]], bool] | None = None,
) -> list[LogPool]:
    """Evolve `replicas` independent pools to level N (or early stop).

    `per_level(n, pools)` is called after each step; returning True stops
    the evolution. Replica work may run on threads; results are collected
    by replica index, so the schedule cannot affect the output.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    pools = [pool_init(params, disorder, M, seed, r) for r in range(replicas)]
    if per_level is not None and per_level(0, pools):
        return pools
    step = lambda p: pool_step(p, params.B)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            for n in range(1, N + 1):
                pools = list(ex.map(step, pools))
                if per_level is not None and per_level(n, pools):
                    break
    else:
        for n in range(1, N + 1):
            pools = [step(p) for p in pools]
            if per_level is not None and per_level(n, pools):
                break
    return pools


# -- estimators ----------------------------------------------------------

def pool_mean_log(pool: LogPool) -> float:
    """Mean of log R over the pool."""
    return float(pool.logs.mean())


def pool_log_linear_mean(pool: LogPool) -> float:
    """log of the pool mean of R itself, via a stable log-sum."""
    return float(np.logaddexp.reduce(pool.logs) - math.log(pool.M))


def pool_log_excess(pool: LogPool) -> np.ndarray:
    """log(R - 1) over the entries with R > 1, stable near R = 1."""
    pos = pool.logs[pool.logs > 0]
    if pos.size and float(pos.min()) > 40.0:
        # log1p(-exp(-x)) rounds to 0 ulps of x here; skip the transcendentals
        return pos
    return pos + np.log1p(-np.exp(-pos))


def _frac_moment_from_excess(log_excess: np.ndarray, M: int, gamma: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    if log_excess.size == 0:
        return 0.0
    t = gamma * log_excess
    top = float(t.max())
    if top == math.inf:
        return math.inf
    s = top + math.log(float(np.exp(t - top).sum())) - math.log(M)
    return math.exp(s) if s < 700.0 else math.inf


def pool_frac_moment(pool: LogPool, gamma: float) -> float:
    """Pool mean of ([R - 1]^+)^gamma; may be inf deep in the localized phase."""
    return _frac_moment_from_excess(pool_log_excess(pool), pool.M, gamma)


def tail_prob(pool: LogPool, tol: float) -> float:
    """Empirical P(|R - 1| > tol), compared in log space (no overflow)."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    above = pool.logs > math.log1p(tol)
    if tol < 1.0:
        above |= pool.logs < math.log1p(-tol)
    return float(above.mean())


def pool_histogram(pool: LogPool, bins: int = 64) -> tuple[np.ndarray, np.ndarray]:
    counts, edges = np.histogram(pool.logs, bins=bins)
    return edges, counts


@dataclass(frozen=True)
class FreeEnergyEstimate:
    """Replica-averaged f_N = 2^{-N} <log R_N> with its rigorous sandwich."""

    N: int
    f_N: float
    stderr: float
    lower: float  # f_N - 2^-N log B
    upper: float  # lower + 2^-N (log B + log K_B), so the width is exact
    replicas: int

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _estimate_from_means(n: int, means: np.ndarray, B: float) -> FreeEnergyEstimate:
    f = means / 2.0**n
    f_n = float(f.mean())
    se = float(f.std(ddof=1) / math.sqrt(f.size)) if f.size > 1 else 0.0
    lower = f_n - math.log(B) / 2.0**n
    upper = lower + (math.log(B) + math.log(kB(B))) / 2.0**n
    return FreeEnergyEstimate(n, f_n, se, lower, upper, int(f.size))


def run_free_energy(
    params: ModelParams,
    disorder: Disorder,
    M: int,
    N: int,
    replicas: int,
    seed: int,
    workers: int = 1,
) -> tuple[FreeEnergyEstimate, list[FreeEnergyEstimate]]:
    """Estimate f_N and the whole finite-level trajectory n = 0..N.

    Returns (estimate at N, trajectory). stderr is the replica-to-replica
    standard error; with beta = 0 all replicas coincide and it is 0.
    """
    if replicas < 2:
        raise ValueError("replicas must be >= 2 for a replica standard error")
    trajectory: list[FreeEnergyEstimate] = []

    def record(n: int, pools: list[LogPool]) -> bool:
        means = np.array([pool_mean_log(p) for p in pools])
        trajectory.append(_estimate_from_means(n, means, params.B))
        return False

    evolve_pools(params, disorder, M, N, replicas, seed, workers, per_level=record)
    return trajectory[-1], trajectory


@dataclass(frozen=True)
class FracMomentEstimate:
    """Replica-averaged A_n(gamma); statistical, not a rigorous bound."""

    gamma: float
    mean: float
    stderr: float
    ci_upper: float  # mean + z * stderr at 99%
    statistical: bool = True


def _estimates_from_table(per: np.ndarray, gammas: Sequence[float]) -> list[FracMomentEstimate]:
    out = []
    for k, g in enumerate(gammas):
        col = per[:, k]
        if not np.all(np.isfinite(col)):
            out.append(FracMomentEstimate(g, math.inf, math.inf, math.inf))
            continue
        # deep in the localized phase the finite estimates still overflow when
        # squared for the variance; an inf stderr is the honest summary there
        with np.errstate(over="ignore"):
            mean = float(col.mean())
            se = float(col.std(ddof=1) / math.sqrt(col.size)) if col.size > 1 else 0.0
        out.append(FracMomentEstimate(g, mean, se, mean + Z99 * se))
    return out


def frac_moment_estimate(pools: Sequence[LogPool], gamma: float) -> FracMomentEstimate:
    per = np.array([[pool_frac_moment(p, gamma)] for p in pools])
    return _estimates_from_table(per, [gamma])[0]


def frac_moment_estimates(pools: Sequence[LogPool], gammas: Sequence[float]) -> list[FracMomentEstimate]:
    """One estimate per gamma, sharing a single positive-part pass per pool."""
    per = np.empty((len(pools), len(gammas)))
    for i, p in enumerate(pools):
        le = pool_log_excess(p)
        per[i] = [_frac_moment_from_excess(le, p.M, g) for g in gammas]
    return _estimates_from_table(per, gammas)


def tail_prob_estimate(pools: Sequence[LogPool], tol: float) -> tuple[float, float]:
    per = np.array([tail_prob(p, tol) for p in pools])
    se = float(per.std(ddof=1) / math.sqrt(per.size)) if per.size > 1 else 0.0
    return float(per.mean()), se
