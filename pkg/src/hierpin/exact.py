"""Exact propagation of the level-n weight law for finite-support disorder.

The level-n weight R_n of a system with finitely many disorder values
has a finite-support law, representable as a sorted list of atoms. One
level of the recursion R' = (X*Y + B - 1)/B with X, Y independent is an
outer product over atom pairs followed by a canonical sort-and-merge.
This is the ground-truth oracle every statistical estimator is checked
against, so merging is conservative and pruning is off by default.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import Disorder, ModelParams, kB, pure_orbit

ATOM_CAP = 4_000_000
MERGE_TOL = 1e-13


class AtomBudgetError(ValueError):
    """Raised when one more exact step would exceed the atom cap."""


@dataclass(frozen=True)
class ExactDist:
    """Finite-support law of R_n: strictly increasing values, positive probs."""

    n: int
    values: np.ndarray
    probs: np.ndarray
    mass_dropped: float = 0.0

    @property
    def natoms(self) -> int:
        return int(self.values.size)

    def check(self, B: float) -> None:
        if np.any(self.probs <= 0) or np.any(self.values <= 0):
            raise AssertionError("atoms must have positive value and probability")
        if np.any(np.diff(self.values) <= 0):
            raise AssertionError("atom values must be strictly increasing")
        total = float(self.probs.sum()) + self.mass_dropped
        if abs(total - 1.0) > 1e-12:
            raise AssertionError(f"probabilities sum to {total}, not 1")
        if self.n >= 1 and float(self.values[0]) < (B - 1.0) / B - 1e-15:
            raise AssertionError("support floor (B-1)/B violated")

    def mean(self) -> float:
        return float(self.values @ self.probs) / float(self.probs.sum())

    def variance(self) -> float:
        w = self.probs / self.probs.sum()
        m = float(self.values @ w)
        return float((self.values - m) ** 2 @ w)

    def log_mean(self) -> float:
        """E[log R_n]."""
        w = self.probs / self.probs.sum()
        return float(np.log(self.values) @ w)

    def frac_moment(self, gamma: float) -> float:
        """A_n(gamma) = E[([R_n - 1]^+)^gamma]."""
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        w = self.probs / self.probs.sum()
        excess = np.maximum(self.values - 1.0, 0.0)
        return float(excess**gamma @ w)


def _merge_sorted(values: np.ndarray, probs: np.ndarray, merge_tol: float) -> tuple[np.ndarray, np.ndarray]:
    # canonical merge: adjacent atoms within relative merge_tol collapse to
    # their probability-weighted mean; independent of how input was produced
    order = np.argsort(values, kind="stable")
    v = values[order]
    p = probs[order]
    starts = np.empty(v.size, dtype=bool)
    starts[0] = True
    np.greater(np.diff(v), merge_tol * v[1:], out=starts[1:])
    idx = np.flatnonzero(starts)
    pm = np.add.reduceat(p, idx)
    vm = np.add.reduceat(v * p, idx) / pm
    return vm, pm


def exact_init(params: ModelParams, disorder: Disorder) -> ExactDist:
    """Atoms of R0 = exp(beta*omega - log M(beta) + h), one per disorder atom."""
    if not disorder.finite_support:
        raise ValueError("exact propagation needs finite-support disorder, not Gaussian")
    lm = disorder.log_mgf(params.beta)
    atoms = disorder.atoms()
    values = np.array([math.exp(params.beta * w - lm + params.h) for w, _ in atoms])
    probs = np.array([p for _, p in atoms])
    values, probs = _merge_sorted(values, probs, MERGE_TOL)
    return ExactDist(0, values, probs, 0.0)


def exact_step(
    d: ExactDist,
    B: float,
    merge_tol: float = MERGE_TOL,
    prune_tol: float = 0.0,
    atom_cap: int = ATOM_CAP,
) -> ExactDist:
    """Law of (X*Y + B - 1)/B for X, Y independent copies of d."""
    k = d.natoms
    if k * k > atom_cap:
        raise AtomBudgetError(
            f"level {d.n} -> {d.n + 1} needs {k}^2 = {k * k} atoms, cap is {atom_cap}"
        )
    vals = (np.outer(d.values, d.values).ravel() + (B - 1.0)) / B
    probs = np.outer(d.probs, d.probs).ravel()
    vals, probs = _merge_sorted(vals, probs, merge_tol)
    dropped = d.mass_dropped * (2.0 - d.mass_dropped)  # 1 - (1 - m)^2, both parents surviving
    if prune_tol > 0.0:
        keep = probs >= prune_tol
        dropped += float(probs[~keep].sum())
        vals, probs = vals[keep], probs[keep]
    out = ExactDist(d.n + 1, vals, probs, dropped)
    out.check(B)
    return out


def exact_track(
    params: ModelParams,
    disorder: Disorder,
    n_max: int,
    merge_tol: float = MERGE_TOL,
    prune_tol: float = 0.0,
    atom_cap: int = ATOM_CAP,
) -> list[ExactDist]:
    """Distributions of R_0 .. R_{n_max}."""
    dists = [exact_init(params, disorder)]
    for _ in range(n_max):
        dists.append(exact_step(dists[-1], params.B, merge_tol, prune_tol, atom_cap))
    return dists


@dataclass(frozen=True)
class LevelBound:
    """f_n with its rigorous sandwich around the limit free energy."""

    n: int
    f: float
    lower: float  # f_n - 2^-n log B      <= f(beta, h)
    upper: float  # f_n + 2^-n log K_B    >= f(beta, h)


def free_energy_bounds(n: int, log_mean: float, B: float) -> LevelBound:
    f = log_mean / 2.0**n
    return LevelBound(n, f, f - math.log(B) / 2.0**n, f + math.log(kB(B)) / 2.0**n)


def exact_free_energy_seq(
    dists: list[ExactDist], B: float
) -> list[LevelBound]:
    """f_n = 2^{-n} E[log R_n] with sandwich bounds, per level."""
    return [free_energy_bounds(d.n, d.log_mean(), B) for d in dists]


def exact_frac_moment(d: ExactDist, gamma: float) -> float:
    return d.frac_moment(gamma)


# -- contact-set weights -------------------------------------------------

CONTACT_N_MAX = 4


@dataclass(frozen=True)
class ContactWeights:
    """p(n, I) over subsets I of {1..2^n}, stored densely by bitmask.

    Site i corresponds to bit i-1; after one composition step the left
    block occupies the low bits and the right block the high bits.
    """

    n: int
    B: float
    weights: np.ndarray  # length 2^(2^n)

    def check(self) -> None:
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise AssertionError("contact weights must sum to 1")
        empty = float(self.weights[0])
        orbit = float(pure_orbit(0.0, self.B, self.n)[-1])
        if empty != orbit:
            raise AssertionError(f"p(n, empty) = {empty} != pure orbit {orbit}")


def contact_weights(n: int, B: float) -> ContactWeights:
    """Build p(n, I) by p(n+1, I) = p(n, I_left) p(n, I_right)/B + ((B-1)/B) [I = empty]."""
    if not 0 <= n <= CONTACT_N_MAX:
        raise ValueError(f"contact weights supported for n <= {CONTACT_N_MAX}, got {n}")
    w = np.array([0.0, 1.0])  # level 0: p({1}) = 1, p(empty) = 0
    for _ in range(n):
        # combined mask = maskL | (maskR << block); row-major outer puts maskR on rows
        nxt = np.outer(w, w).ravel() / B
        # route the empty set through the same float ops as pure_step
        nxt[0] = (w[0] * w[0] + (B - 1.0)) / B
        w = nxt
    cw = ContactWeights(n, B, w)
    cw.check()
    return cw


def subset_log_sums(x: np.ndarray) -> np.ndarray:
    """For sites with per-site values x, the sum over each bitmask subset."""
    size = x.size
    out = np.zeros(2**size)
    for i in range(size):
        bit = 1 << i
        # masks in [bit, 2*bit) have i as their highest set bit
        out[bit : 2 * bit] = out[:bit] + x[i]
    return out


def reconstruct_r(cw: ContactWeights, params: ModelParams, disorder: Disorder, omegas: np.ndarray) -> float:
    """R_n = sum_I p(n, I) exp(sum_{i in I} (beta*omega_i - log M + h)) for one draw."""
    if omegas.size != 2**cw.n:
        raise ValueError(f"need 2^{cw.n} omegas")
    x = params.beta * omegas - disorder.log_mgf(params.beta) + params.h
    return float(cw.weights @ np.exp(subset_log_sums(x)))


def direct_r(params: ModelParams, disorder: Disorder, omegas: np.ndarray) -> float:
    """R_n for one disorder draw by the pairwise recursion on the leaf weights."""
    r = np.exp(params.beta * omegas - disorder.log_mgf(params.beta) + params.h)
    B = params.B
    while r.size > 1:
        r = (r[0::2] * r[1::2] + (B - 1.0)) / B
    return float(r[0])


def export_csv(d: ExactDist, path: str) -> None:
    """Dump (value, prob) rows for debugging."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "prob"])
        for v, p in zip(d.values, d.probs):
            writer.writerow([f"{v:.17g}", f"{p:.17g}"])
