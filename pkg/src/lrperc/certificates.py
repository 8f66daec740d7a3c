"""Log-space checks of the scale constants and of the bad-block recursion.

The base scale ``M`` the renormalization needs is astronomically large, so it
is carried as ``lnM`` throughout.  Factorials go through ``gammaln``; the
minimum of each per-level margin is located through ``digamma``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from ._rng import derive_seed
from .lattice_model import Box, Params, compare_length, connection_probabilities, exceeds, length_measure
from .sampler import displacement_classes, sample_configuration

SLACK = 1e-9


@dataclass(frozen=True)
class ConstantsSpec:
    d: int
    s: float
    s_prime: float
    beta: float
    lnM: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not (2 * self.d < self.s_prime < self.s):
            raise ValueError(f"need 2d < s' < s, got d={self.d}, s'={self.s_prime}, s={self.s}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.lnM > 0:
            raise ValueError("lnM must be positive")


@dataclass
class InequalityCheck:
    ok: bool
    witness: Optional[float]  # the minimizing n or k (None for the scale-free inequality)
    log_margin: float

    def to_dict(self):
        return asdict(self)


@dataclass
class Certificate:
    ineq3: Optional[InequalityCheck] = None
    ineq4: Optional[InequalityCheck] = None
    ineq5: Optional[InequalityCheck] = None
    recursion: list = field(default_factory=list)  # ln P_k upper bounds
    inductive_bounds: list = field(default_factory=list)
    inductive_ok: Optional[bool] = None
    recursion_sum: Optional[float] = None
    slack: float = SLACK
    lnM: Optional[float] = None

    @property
    def ineq3_ok(self):
        return self.ineq3.ok if self.ineq3 else None

    @property
    def ineq4_ok(self):
        return self.ineq4.ok if self.ineq4 else None

    @property
    def ineq5_ok(self):
        return self.ineq5.ok if self.ineq5 else None

    @property
    def inequalities_ok(self) -> bool:
        return bool(self.ineq3_ok and self.ineq4_ok and self.ineq5_ok)

    def to_dict(self) -> dict:
        out = {"slack": self.slack}
        if self.lnM is not None:
            out["lnM"] = self.lnM
        for name in ("ineq3", "ineq4", "ineq5"):
            chk = getattr(self, name)
            if chk is not None:
                out[name] = chk.to_dict()
        if self.recursion:
            out["recursion"] = {
                "ln_pk_bound": list(self.recursion),
                "inductive_bound": list(self.inductive_bounds),
                "inductive_ok": self.inductive_ok,
                "sum": self.recursion_sum,
            }
        return out


# -- the three scale inequalities, as log margins (positive = satisfied) --


def margin3(spec: ConstantsSpec, lnM=None) -> float:
    """``ln(1/(1000 2^d)) - ln(100^s beta M^(2d-s))``."""
    lnM = spec.lnM if lnM is None else lnM
    d, s = spec.d, spec.s
    return -math.log(1000.0) - d * math.log(2.0) - (s * math.log(100.0) + math.log(spec.beta) + (2 * d - s) * lnM)


def margin4(spec: ConstantsSpec, n, lnM=None):
    """``(s-s') (lnM + ln n!) - 2 s ln n``."""
    lnM = spec.lnM if lnM is None else lnM
    n = np.asarray(n, dtype=np.float64)
    return (spec.s - spec.s_prime) * (lnM + gammaln(n + 1)) - 2 * spec.s * np.log(n)


def margin5(spec: ConstantsSpec, k, lnM=None):
    """``-30 d k - ln(100^s beta M^(2d-s') (k!)^(4d-2s'))``."""
    lnM = spec.lnM if lnM is None else lnM
    d, s, sp = spec.d, spec.s, spec.s_prime
    k = np.asarray(k, dtype=np.float64)
    return -30 * d * k - (s * math.log(100.0) + math.log(spec.beta) + (2 * d - sp) * lnM + (4 * d - 2 * sp) * gammaln(k + 1))


def _solve_increasing(f, lo: float, hi: float) -> float:
    """Root of an increasing function on ``[lo, hi]`` by bisection in log space."""
    if f(lo) >= 0:
        return lo
    while f(hi) < 0:
        hi *= 2.0
    a, b = math.log(lo), math.log(hi)
    for _ in range(200):
        m = 0.5 * (a + b)
        if f(math.exp(m)) < 0:
            a = m
        else:
            b = m
        if b - a < 1e-15:
            break
    return math.exp(b)


def critical_n4(spec: ConstantsSpec) -> float:
    """Stationary point of ``margin4``: ``(s-s') psi(n+1) = 2s/n``."""
    return _solve_increasing(lambda n: (spec.s - spec.s_prime) * digamma(n + 1) - 2 * spec.s / n, 1.0, 2.0)


def critical_k5(spec: ConstantsSpec) -> float:
    """Stationary point of ``margin5``: ``psi(k+1) = 30d / (2s' - 4d)``."""
    target = 30 * spec.d / (2 * spec.s_prime - 4 * spec.d)
    return _solve_increasing(lambda k: digamma(k + 1) - target, 1.0, max(2.0, math.exp(target)))


def _integer_candidates(crit: float, bound: int) -> np.ndarray:
    """Integers ``1..bound`` plus the two integers bracketing ``crit``."""
    pts = np.arange(1, bound + 1, dtype=np.float64)
    extra = np.array([np.floor(crit), np.ceil(crit)], dtype=np.float64)
    return np.unique(np.concatenate([pts, extra[extra >= 1]]))


def _convex_check(margin, crit: float, bound: int, slack: float) -> InequalityCheck:
    # margin is convex in its argument, so over the integers its minimum sits
    # at floor(crit) or ceil(crit); the scan up to ``bound`` is a cross-check.
    pts = _integer_candidates(crit, bound)
    vals = margin(pts)
    i = int(np.argmin(vals))
    worst = float(vals[i])
    return InequalityCheck(worst > slack, float(pts[i]), worst)


def check_inequalities(spec: ConstantsSpec, n_max: int = 1000, k_max: int = 1000, slack: float = SLACK) -> Certificate:
    if n_max < 1 or k_max < 1:
        raise ValueError("n_max and k_max must be >= 1")
    m3 = margin3(spec)
    c3 = InequalityCheck(m3 > slack, None, m3)
    c4 = _convex_check(lambda n: margin4(spec, n), critical_n4(spec), n_max, slack)
    c5 = _convex_check(lambda k: margin5(spec, k), critical_k5(spec), k_max, slack)
    return Certificate(ineq3=c3, ineq4=c4, ineq5=c5, slack=slack, lnM=spec.lnM)


def required_lnM(spec: ConstantsSpec, n_max: int = 1000, k_max: int = 1000) -> dict:
    """Smallest ``lnM`` each inequality allows on its own (margins are affine in lnM)."""
    d, s, sp = spec.d, spec.s, spec.s_prime
    r3 = (math.log(1000.0) + d * math.log(2.0) + s * math.log(100.0) + math.log(spec.beta)) / (s - 2 * d)
    n = _integer_candidates(critical_n4(spec), n_max)
    r4 = float(np.max(2 * s * np.log(n) / (s - sp) - gammaln(n + 1)))
    k = _integer_candidates(critical_k5(spec), k_max)
    r5 = float(np.max((30 * d * k + s * math.log(100.0) + math.log(spec.beta) + (4 * d - 2 * sp) * gammaln(k + 1)) / (sp - 2 * d)))
    return {"ineq3": r3, "ineq4": r4, "ineq5": r5}


def find_min_lnM(d: int, s: float, s_prime: float, beta: float, k_max: int = 1000, n_max: int = 1000,
                 rel_tol: float = 1e-7, max_iter: int = 400) -> float:
    """Smallest lnM (to ``rel_tol``) passing :func:`check_inequalities`.

    Each log margin is increasing in lnM, so passing is monotone and bisection
    applies.  Returns the passing end of the final bracket.
    """
    probe = ConstantsSpec(d, s, s_prime, beta)

    def passes(x):
        return check_inequalities(ConstantsSpec(d, s, s_prime, beta, x), n_max, k_max).inequalities_ok

    lo, hi = 0.0, 1.0
    it = 0
    while not passes(hi):
        lo, hi = hi, hi * 2.0
        it += 1
        if it > 2000:
            raise RuntimeError(f"no passing lnM found below {hi:g}")
    for _ in range(max_iter):
        if hi - lo <= rel_tol * hi:
            return hi
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            return hi
        if passes(mid):
            hi = mid
        else:
            lo = mid
    raise RuntimeError(f"bisection did not converge: bracket [{lo!r}, {hi!r}]")


# -- recursion for the bad-block probabilities --


def iterate_recursion(d: int, k_max: int, ln_p0: Optional[float] = None) -> Certificate:
    """Iterate ``P_k <= e^(-30dk) + 2^d k^(4d) P_(k-1)^2`` in log space.

    Starts from ``P_0 = 2^-d / 1000`` and checks
    ``P_k < 2^-d (k+1)^(-4d) e^(-2k)`` at every level.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    ln2 = math.log(2.0)
    lp = [-d * ln2 - math.log(1000.0) if ln_p0 is None else ln_p0]
    bounds = [-d * ln2]
    for k in range(1, k_max + 1):
        lp.append(float(np.logaddexp(-30.0 * d * k, d * ln2 + 4 * d * math.log(k) + 2 * lp[-1])))
        bounds.append(-d * ln2 - 4 * d * math.log(k + 1) - 2 * k)
    ok = all(a < b for a, b in zip(lp, bounds))
    ln_total = float(logsumexp(lp[1:]))
    total = math.exp(ln_total) if ln_total < 709.0 else math.inf
    return Certificate(recursion=lp, inductive_bounds=bounds, inductive_ok=ok, recursion_sum=total)


# -- level-0 bad probability --


def exact_p0(params: Params, M: int) -> float:
    """Probability that ``[0, M)^d`` holds an open edge longer than ``M/100``."""
    params = replace(params, boundary="free")
    ks = displacement_classes(params, Box((0,) * params.d, M), 0)
    if len(ks) == 0:
        return 0.0
    long = compare_length(params.norm, length_measure(params.norm, ks), M, 100) > 0
    ks = ks[long]
    if len(ks) == 0:
        return 0.0
    counts = np.prod(M - np.abs(ks), axis=1).astype(np.float64)
    p = connection_probabilities(params, ks)
    if np.any((p >= 1.0) & (counts > 0)):
        return 1.0
    log_none = float(np.sum(counts * np.log1p(-p)))
    return float(-np.expm1(log_none))


@dataclass(frozen=True)
class P0Estimate:
    empirical: float
    exact: float
    trials: int
    bad: int

    @property
    def stderr(self) -> float:
        return math.sqrt(max(self.exact * (1 - self.exact), 0.0) / self.trials)


def empirical_p0(params: Params, M: int, trials: int, seed: int, max_edges: float = 5e6) -> P0Estimate:
    """Fraction of independently sampled ``[0, M)^d`` blocks that are bad at level 0."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = replace(params, boundary="free")
    box = Box((0,) * params.d, M)
    bad = 0
    for t in range(trials):
        conf = sample_configuration(params, box, 0, derive_seed(seed, t), "skip", max_edges=max_edges)
        if conf.n_edges:
            c = conf.edge_coords()
            if np.any(exceeds(params.norm, length_measure(params.norm, c[:, 1] - c[:, 0]), M, 100)):
                bad += 1
    return P0Estimate(bad / trials, exact_p0(params, M), trials, bad)
