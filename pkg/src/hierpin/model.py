"""Parameters, disorder laws, and the deterministic recursions.

The model lives on a hierarchy of levels. At level zero a single bond
carries the random weight R0 = exp(beta*omega - log M(beta) + h); one
level up, two independent systems combine through

    R' = (R1 * R2 + (B - 1)) / B,      B > 2.

With the disorder switched off (beta = 0) this is the scalar quadratic
map r -> (r^2 + B - 1)/B, whose fixed points 1 (stable) and B - 1
(unstable) separate the delocalized and localized phases; the critical
pinning strength is h_c(0) = log(B - 1). Everything in this module is a
pure function: closed forms, moment recursions, conjugacies, and the
deterministic orbits used as the annealed reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

B_CRIT = 2.0 + math.sqrt(2.0)


def check_B(B: float) -> float:
    """Validate the branching parameter for the core recursions.

    Only B > 2 is supported directly. B in (1, 2) maps onto an
    equivalent B-hat > 2 through :func:`dualize`; B = 1 and B = 2 are
    degenerate special cases with no quadratic-map phase transition of
    the kind treated here.
    """
    if abs(B - 1.0) < 1e-12:
        raise ValueError("B = 1 is an exactly solvable special case; not supported")
    if abs(B - 2.0) < 1e-12:
        raise ValueError("B = 2 has purely nonlinear growth and no B > 2 reduction; not supported")
    if 1.0 < B < 2.0:
        raise ValueError(f"B = {B} is in (1, 2); apply dualize(B) = B/(B-1) first")
    if B < 1.0:
        raise ValueError(f"B = {B} is not supported (need B > 2)")
    return B


@dataclass(frozen=True)
class ModelParams:
    """The triple (B, beta, h)."""

    B: float
    beta: float
    h: float

    def __post_init__(self) -> None:
        check_B(self.B)
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def eps(self) -> float:
        """eps = <R0> - (B - 1) = e^h - (B - 1)."""
        return math.expm1(self.h) - (self.B - 2.0)

    @classmethod
    def from_eps(cls, B: float, beta: float, eps: float) -> "ModelParams":
        check_B(B)
        if eps <= -(B - 1.0):
            raise ValueError("eps must exceed -(B-1) for e^h > 0")
        return cls(B, beta, math.log((B - 1.0) + eps))


# -- disorder -----------------------------------------------------------

GAUSSIAN = "gaussian"
RADEMACHER = "rademacher"
FINITE = "finite"


@dataclass(frozen=True)
class Disorder:
    """Law of a single omega: standard Gaussian, Rademacher, or finite support.

    All variants are centered with unit variance, so beta alone sets the
    disorder strength; finite-support atoms are validated at construction.
    """

    kind: str
    support: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.kind not in (GAUSSIAN, RADEMACHER, FINITE):
            raise ValueError(f"unknown disorder kind: {self.kind!r}")
        if self.kind == FINITE:
            if len(self.support) < 2:
                raise ValueError("finite-support disorder needs at least two atoms")
            probs = np.array([p for _, p in self.support])
            vals = np.array([v for v, _ in self.support])
            if np.any(probs <= 0):
                raise ValueError("atom probabilities must be positive")
            if abs(probs.sum() - 1.0) > 1e-12:
                raise ValueError("atom probabilities must sum to 1 within 1e-12")
            mean = float(vals @ probs)
            var = float((vals - mean) ** 2 @ probs)
            if abs(mean) > 1e-9 or abs(var - 1.0) > 1e-9:
                raise ValueError(f"disorder must have mean 0, variance 1 (got {mean}, {var})")

    @property
    def finite_support(self) -> bool:
        return self.kind != GAUSSIAN

    def atoms(self) -> tuple[tuple[float, float], ...]:
        """(value, prob) pairs; defined only for finite-support variants."""
        if self.kind == RADEMACHER:
            return ((-1.0, 0.5), (1.0, 0.5))
        if self.kind == FINITE:
            return self.support
        raise ValueError("Gaussian disorder has no finite atom list")

    def mgf(self, t: float) -> float:
        """M(t) = E exp(t*omega)."""
        if self.kind == GAUSSIAN:
            return math.exp(0.5 * t * t)
        if self.kind == RADEMACHER:
            return math.cosh(t)
        return float(sum(p * math.exp(t * v) for v, p in self.support))

    def log_mgf(self, t: float) -> float:
        if self.kind == GAUSSIAN:
            return 0.5 * t * t
        if self.kind == RADEMACHER:
            # log cosh t, stable for large |t|
            a = abs(t)
            return a + math.log1p(math.exp(-2.0 * a)) - math.log(2.0)
        terms = np.array([math.log(p) + t * v for v, p in self.support])
        return float(np.logaddexp.reduce(terms))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == GAUSSIAN:
            return rng.standard_normal(size)
        if self.kind == RADEMACHER:
            return rng.integers(0, 2, size) * 2.0 - 1.0
        vals = np.array([v for v, _ in self.support])
        probs = np.array([p for _, p in self.support])
        return rng.choice(vals, size=size, p=probs / probs.sum())


def gaussian() -> Disorder:
    return Disorder(GAUSSIAN)


def rademacher() -> Disorder:
    return Disorder(RADEMACHER)


def finite(atoms: list[tuple[float, float]] | tuple[tuple[float, float], ...]) -> Disorder:
    return Disorder(FINITE, tuple(atoms))


def parse_disorder(text: str) -> Disorder:
    """Parse a disorder name: 'gaussian', 'rademacher', or 'finite:v:p,v:p,...'."""
    if text == GAUSSIAN:
        return gaussian()
    if text == RADEMACHER:
        return rademacher()
    if text.startswith("finite:"):
        atoms = []
        for chunk in text[len("finite:"):].split(","):
            v, p = chunk.split(":")
            atoms.append((float(v), float(p)))
        return finite(atoms)
    raise ValueError(f"unknown disorder: {text!r} (expected gaussian, rademacher, or finite:v:p,...)")


def mgf(disorder: Disorder, t: float) -> float:
    return disorder.mgf(t)


def r0_sample(params: ModelParams, disorder: Disorder, omega: float) -> float:
    """R0 = exp(beta*omega - log M(beta) + h); strictly positive."""
    return math.exp(params.beta * omega - disorder.log_mgf(params.beta) + params.h)


# -- pure (annealed) map ------------------------------------------------

def pure_step(r: float, B: float) -> float:
    check_B(B)
    if r < 0:
        raise ValueError("r must be >= 0")
    return (r * r + (B - 1.0)) / B


def pure_orbit(r0: float, B: float, n: int) -> np.ndarray:
    """Orbit r_0, r_1, ..., r_n of the pure map (length n+1)."""
    out = np.empty(n + 1)
    out[0] = r0
    r = r0
    for k in range(1, n + 1):
        r = pure_step(r, B)
        out[k] = r
    return out


def logistic_conjugate(r: float, B: float) -> float:
    """z = 1/2 - r/(2(B-1)); conjugates the pure map to a logistic map."""
    check_B(B)
    return 0.5 - r / (2.0 * (B - 1.0))


def logistic_inverse(z: float, B: float) -> float:
    check_B(B)
    return (B - 1.0) * (1.0 - 2.0 * z)


def logistic_step(z: float, B: float) -> float:
    """z' = (2(B-1)/B) z (1 - z), the conjugated form of pure_step."""
    check_B(B)
    return (2.0 * (B - 1.0) / B) * z * (1.0 - z)


# -- derived constants --------------------------------------------------

def alpha(B: float) -> float:
    """alpha = log(2(B-1)/B) / log 2, in (0, 1); equals 1/2 at B = 2 + sqrt(2)."""
    check_B(B)
    return math.log(2.0 * (B - 1.0) / B) / math.log(2.0)


def kB(B: float) -> float:
    """K_B = (B^2 + B - 1) / (B (B - 1)) > 1; upper sandwich constant."""
    check_B(B)
    return (B * B + B - 1.0) / (B * (B - 1.0))


def shift_exponent(B: float) -> float:
    """2*alpha/(2*alpha - 1): h_c(beta) - h_c ~ beta^(this) for B > 2 + sqrt(2)."""
    check_B(B)
    if B <= B_CRIT:
        raise ValueError(f"shift exponent requires B > 2 + sqrt(2) = {B_CRIT}; got {B}")
    a = alpha(B)
    val = 2.0 * a / (2.0 * a - 1.0)
    # same exponent via the growth rates q = 2(B-1)^2/B^2 and qbar = 2(B-1)/B
    q = 2.0 * (B - 1.0) ** 2 / B**2
    qbar = 2.0 * (B - 1.0) / B
    alt = 2.0 * math.log(qbar) / math.log(q)
    if abs(val - alt) > 1e-12 * max(1.0, abs(val)):
        raise AssertionError(f"shift exponent definitions disagree: {val} vs {alt}")
    return val


def delta_of_beta(params: ModelParams, disorder: Disorder) -> float:
    """Delta(beta) = (B-1)^2 (M(2 beta)/M(beta)^2 - 1), the variance of R0 at h = h_c."""
    b = params.beta
    ratio = math.exp(disorder.log_mgf(2.0 * b) - 2.0 * disorder.log_mgf(b))
    return (params.B - 1.0) ** 2 * (ratio - 1.0)


def irrelevance_threshold(B: float) -> float:
    """Disorder is provably irrelevant (for 2 < B < B_c) when Delta(beta) <= this."""
    check_B(B)
    return B * B - 2.0 * (B - 1.0) ** 2


def dualize(B: float) -> float:
    """Map B in (1, 2) to the equivalent B-hat = B/(B-1) > 2 (an involution)."""
    if not 1.0 < B < 2.0:
        raise ValueError(f"dualize expects B in (1, 2); got {B}")
    return B / (B - 1.0)


def eps_of_h(B: float, h: float) -> float:
    check_B(B)
    return math.expm1(h) - (B - 2.0)


def h_of_eps(B: float, eps: float) -> float:
    check_B(B)
    if eps <= -(B - 1.0):
        raise ValueError("eps must exceed -(B-1)")
    return math.log((B - 1.0) + eps)


# -- annealed moment recursion ------------------------------------------

@dataclass(frozen=True)
class AnnealedState:
    """Mean/variance track of R_n: rbar = <R_n>, p = rbar - (B-1), delta = Var R_n, q = delta/rbar^2."""

    n: int
    rbar: float
    p: float
    delta: float
    q: float

    def check(self, B: float) -> None:
        if abs(self.rbar - ((B - 1.0) + self.p)) > 1e-12 * max(1.0, abs(self.rbar)):
            raise AssertionError("rbar and p inconsistent")
        if abs(self.q * self.rbar**2 - self.delta) > 1e-12 * max(1.0, abs(self.delta)):
            raise AssertionError("q and delta inconsistent")


def annealed_init(params: ModelParams, disorder: Disorder) -> AnnealedState:
    rbar = math.exp(params.h)
    q0 = math.expm1(disorder.log_mgf(2.0 * params.beta) - 2.0 * disorder.log_mgf(params.beta))
    return AnnealedState(0, rbar, rbar - (params.B - 1.0), q0 * rbar * rbar, q0)


def annealed_step(state: AnnealedState, B: float) -> AnnealedState:
    """One level of the independent-copies moment recursion.

    <R'> = (<R>^2 + B - 1)/B and Delta' = Delta (2 <R>^2 + Delta)/B^2;
    P and Q follow. The normalized-variance update is cross-checked
    against its closed product form with prefactor
    2((B-1)/B)^2 * <R>^4 / (<R'>^2 (B-1)^2).
    """
    check_B(B)
    state.check(B)
    rbar = state.rbar
    rbar2 = rbar * rbar
    rbar_next = (rbar2 + (B - 1.0)) / B
    delta_next = state.delta * (2.0 * rbar2 + state.delta) / (B * B)
    p_next = 2.0 * ((B - 1.0) / B) * state.p + state.p * state.p / B
    q_next = delta_next / (rbar_next * rbar_next)
    # closed-form Q update must agree with the delta/rbar route
    pref = 2.0 * ((B - 1.0) / B) ** 2 * (rbar2 * rbar2 / (rbar_next**2 * (B - 1.0) ** 2))
    q_alt = pref * (state.q + 0.5 * state.q * state.q)
    if state.q > 0 and abs(q_next - q_alt) > 1e-10 * max(abs(q_next), abs(q_alt)):
        raise AssertionError(f"Q update mismatch: {q_next} vs {q_alt}")
    return AnnealedState(state.n + 1, rbar_next, p_next, delta_next, q_next)


def annealed_track(params: ModelParams, disorder: Disorder, n_max: int) -> list[AnnealedState]:
    states = [annealed_init(params, disorder)]
    for _ in range(n_max):
        states.append(annealed_step(states[-1], params.B))
    return states


def q_prefactor(rbar: float, B: float) -> float:
    """<R_n>^4 / (<R_{n+1}>^2 (B-1)^2), the variable factor in the Q update."""
    check_B(B)
    rbar_next = (rbar * rbar + (B - 1.0)) / B
    return rbar**4 / (rbar_next**2 * (B - 1.0) ** 2)


# -- annealed free energy and critical point ----------------------------

def annealed_free_energy(B: float, h: float, n_max: int = 100_000) -> float:
    """f(0, h) = lim 2^{-n} log r_n, iterated in log space to convergence.

    In the localized phase log r_n doubles each level once r_n is large,
    so 2^{-n} log r_n becomes exactly constant; in the delocalized phase
    it tends to 0. Iteration stops when consecutive values agree to
    relative 1e-16.
    """
    check_B(B)
    lr = h
    lb1 = math.log(B - 1.0)
    lB = math.log(B)
    prev = None
    for n in range(1, n_max + 1):
        lr = float(np.logaddexp(2.0 * lr, lb1)) - lB
        cur = lr / 2.0**n
        if prev is not None and abs(cur - prev) <= 1e-18 + 1e-16 * abs(cur):
            # converged float residue at the critical orbit is O(1e-18);
            # genuine positive values at delta >= 1e-6 stay above 3e-15
            return 0.0 if abs(cur) < 1e-15 else cur
        prev = cur
    return prev


def annealed_hc(B: float, tol: float = 1e-9) -> float:
    """Critical h of the pure map by bisection on orbit divergence.

    The orbit from r0 = e^h either falls to the stable fixed point 1 or
    diverges; the watershed is located without using the closed form
    log(B-1), which serves as an independent check elsewhere.
    """
    check_B(B)

    def diverges(h: float) -> bool:
        r = math.exp(h)
        hi = (B - 1.0) * (1.0 + 1e-9)
        lo = (B - 1.0) * (1.0 - 1e-9)
        for _ in range(2000):
            if r > hi:
                return True
            if r < lo:
                return False
            r = (r * r + (B - 1.0)) / B
        # undecided after many steps: r stuck at the unstable point
        return r > B - 1.0

    lo, hi = 0.0, math.log(B) + 1.0
    if diverges(lo) or not diverges(hi):
        raise AssertionError("bisection seeds do not straddle the transition")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if diverges(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def annealed_exponent_fit(
    B: float,
    deltas: np.ndarray | None = None,
) -> tuple[float, float, float]:
    """Least-squares slope of log f(0, h_c + delta) against log delta.

    Returns (slope, intercept, max abs residual). The slope approaches
    1/alpha(B) as delta -> 0, up to small log-periodic wobble.
    """
    check_B(B)
    if deltas is None:
        deltas = np.logspace(-6.0, -3.0, 13)
    hc = math.log(B - 1.0)
    logf = np.array([math.log(annealed_free_energy(B, hc + d)) for d in deltas])
    logd = np.log(deltas)
    slope, intercept = np.polyfit(logd, logf, 1)
    resid = logf - (slope * logd + intercept)
    return float(slope), float(intercept), float(np.max(np.abs(resid)))


# -- inverse-map sequences (small-excess a_n asymptotics) ----------------

@dataclass(frozen=True)
class InverseSeqState:
    n: int
    value: float
    scaled: float  # value * 2^(alpha * n)


def inverse_map_f(x: float, B: float) -> float:
    """f(x) = sqrt(Bx + (B-1)^2) - (B-1), the inverse branch of the centered pure map.

    Evaluated as Bx/(sqrt(Bx + (B-1)^2) + (B-1)): no cancellation for
    small x, where the direct form loses all relative precision.
    """
    check_B(B)
    if x <= -(B - 2.0):
        raise ValueError(f"x must exceed -(B-2) = {-(B - 2.0)}")
    c = B - 1.0
    return B * x / (math.sqrt(B * x + c * c) + c)


def inverse_map_g(x: float, B: float) -> float:
    """g(x) = (2(B-1)x + x^2)/B; g(f(x)) = x."""
    check_B(B)
    return (2.0 * (B - 1.0) * x + x * x) / B


def inverse_map_seq(start: float, B: float, n: int) -> list[InverseSeqState]:
    """Iterate a_{k+1} = f(a_k) from a_0 = start, reporting a_k * 2^(alpha k).

    For positive starts the scaled sequence decreases to a limit G_a,
    with G_a ~ a as the start a -> 0.
    """
    check_B(B)
    if start <= -(B - 2.0):
        raise ValueError(f"start must exceed -(B-2) = {-(B - 2.0)}")
    a = alpha(B)
    states = [InverseSeqState(0, start, start)]
    x = start
    for k in range(1, n + 1):
        x = inverse_map_f(x, B)
        states.append(InverseSeqState(k, x, x * 2.0 ** (a * k)))
    return states
