"""Monte Carlo experiments on chemical distance and block goodness."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import binomtest

from ._rng import derive_seed
from .certificates import exact_p0
from .lattice_model import Block, BlockHierarchy, Box, Params, block_side, norm_of
from .metric import distances_from
from .renorm import classify_block, required_margin
from .sampler import DEFAULT_EDGE_BUDGET, BudgetExceeded, expected_edges, sample_configuration

CSV_COLUMNS = (
    "x_norm", "n_finite", "n_unreachable",
    "d_mean", "d_median", "d_q05", "d_q95",
    "ratio_mean", "ratio_median", "ratio_q05", "ratio_q95",
)
DEFAULT_MARGIN = 128


@dataclass(frozen=True)
class ExperimentPlan:
    """Distances ``n`` along unit direction ``v``; targets are ``[nv]``.

    The box is centered at the origin with half-width ``max(distances) + margin``.
    """

    params: Params
    distances: tuple
    direction: tuple
    trials: int
    seed: int
    margin: int = DEFAULT_MARGIN

    def __post_init__(self):
        dist = tuple(int(x) for x in self.distances)
        if not dist or list(dist) != sorted(dist) or dist[0] < 1:
            raise ValueError("distances must be positive and sorted ascending")
        v = tuple(float(x) for x in self.direction)
        if len(v) != self.params.d:
            raise ValueError("direction has the wrong dimension")
        if abs(norm_of(self.params.norm, v) - 1.0) > 1e-12:
            raise ValueError("direction must have unit norm")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        object.__setattr__(self, "distances", dist)
        object.__setattr__(self, "direction", v)

    @property
    def half_width(self) -> int:
        return self.distances[-1] + self.margin

    @property
    def box(self) -> Box:
        h = self.half_width
        return Box((-h,) * self.params.d, 2 * h + 1)

    def targets(self) -> np.ndarray:
        """``[nv]``: the lattice point nearest ``n v`` (halves round up)."""
        v = np.asarray(self.direction)
        return np.floor(np.outer(self.distances, v) + 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["params"] = self.params.to_dict()
        return out


def quantile_type1(sorted_vals: np.ndarray, q: float) -> float:
    """Inverse empirical CDF (lower order statistic)."""
    n = len(sorted_vals)
    j = max(math.ceil(round(q * n, 9)), 1)
    return float(sorted_vals[j - 1])


def _summary(vals: np.ndarray) -> tuple:
    if len(vals) == 0:
        return (math.nan,) * 4
    s = np.sort(vals)
    return (math.fsum(s) / len(s), quantile_type1(s, 0.5), quantile_type1(s, 0.05), quantile_type1(s, 0.95))


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    raw: np.ndarray  # (trials, len(distances)) chemical distances, -1 = unreachable
    records: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    wall_time: float = 0.0
    expected_edges: float = 0.0

    @classmethod
    def aggregate(cls, plan: ExperimentPlan, raw: np.ndarray, **meta) -> "ExperimentResult":
        records = []
        for i, n in enumerate(plan.distances):
            col = raw[:, i]
            fin = col[col >= 0].astype(np.float64)
            x_norm = float(n)
            records.append({
                "x_norm": x_norm,
                "n_finite": int(len(fin)),
                "n_unreachable": int(len(col) - len(fin)),
                **dict(zip(("d_mean", "d_median", "d_q05", "d_q95"), _summary(fin))),
                **dict(zip(("ratio_mean", "ratio_median", "ratio_q05", "ratio_q95"), _summary(fin / x_norm))),
            })
        return cls(plan, raw, records, **meta)

    def medians(self) -> np.ndarray:
        return np.array([r["d_median"] for r in self.records])

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([r[c] if isinstance(r[c], int) else f"{r[c]:.9g}" for c in CSV_COLUMNS])
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "box": {"lo": list(self.plan.box.lo), "side": self.plan.box.side},
            "boundary_note": "free boundary; edges leaving the box are not sampled",
            "seeds": [str(s) for s in self.seeds],
            "wall_time_s": self.wall_time,
            "expected_edges_per_trial": self.expected_edges,
        }


def run_ratio_experiment(plan: ExperimentPlan, max_edges: float = DEFAULT_EDGE_BUDGET) -> ExperimentResult:
    box = plan.box
    expected = expected_edges(plan.params, box, 0)
    if expected > max_edges:
        raise BudgetExceeded(expected, max_edges)
    t0 = time.perf_counter()
    targets = plan.targets()
    origin = (0,) * plan.params.d
    raw = np.empty((plan.trials, len(plan.distances)), dtype=np.int64)
    seeds = []
    for t in range(plan.trials):
        seed = derive_seed(plan.seed, t)
        seeds.append(seed)
        conf = sample_configuration(plan.params, box, 0, seed, "skip", max_edges=max_edges)
        dist = distances_from(conf, origin)
        raw[t] = dist[conf.flat(targets)]
    return ExperimentResult.aggregate(plan, raw, seeds=seeds, wall_time=time.perf_counter() - t0, expected_edges=expected)


# --------------------------------------------------------------------------
# regime fits

REGIMES = ("constant", "loglog", "polylog", "linear")


def regime_of(params: Params) -> str:
    d, s = params.d, params.s
    if s < d:
        return "constant"
    if s == d:
        return "loglog"
    if s < 2 * d:
        return "polylog"
    if s > 2 * d:
        return "linear"
    return "critical"


@dataclass(frozen=True)
class RegimeFit:
    regime: str
    fitted: dict
    residual_ss: float
    r2: float
    n_points: int

    def to_dict(self):
        return asdict(self)


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icept), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - (slope * x + icept)
    ss_res = float(np.dot(res, res))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return float(slope), float(icept), ss_res, r2


def regime_diagnostics(result: ExperimentResult, regime_hint: str) -> RegimeFit:
    """Least-squares fit of median distance against the regime's functional form."""
    if regime_hint not in REGIMES:
        raise ValueError(f"no fit form for regime {regime_hint!r}; expected one of {REGIMES}")
    x = result.column("x_norm")
    D = result.medians()
    ok = np.isfinite(D)
    x, D = x[ok], D[ok]
    if len(x) < 4:
        raise ValueError(f"need >= 4 finite medians, got {len(x)}")
    if regime_hint == "constant":
        c = float(D.mean())
        slope, _, _, _ = _linfit(np.log(x), D)
        res = D - c
        return RegimeFit("constant", {"constant": c, "spread": float(D.max() - D.min()), "slope_vs_log_x": slope},
                         float(np.dot(res, res)), math.nan, len(x))
    if regime_hint == "loglog":
        f = np.log(x) / np.log(np.log(x))
        a, b, ss, r2 = _linfit(f, D)
        return RegimeFit("loglog", {"slope": a, "intercept": b}, ss, r2, len(x))
    if regime_hint == "polylog":
        if np.any(D <= 0) or np.any(x <= math.e):
            raise ValueError("polylog fit needs positive distances and x > e")
        a, b, ss, r2 = _linfit(np.log(np.log(x)), np.log(D))
        return RegimeFit("polylog", {"exponent": a, "log_prefactor": b}, ss, r2, len(x))
    a, b, ss, r2 = _linfit(x, D)
    return RegimeFit("linear", {"slope": a, "intercept": b}, ss, r2, len(x))


# --------------------------------------------------------------------------
# bad-block frequencies


class InfeasibleLevel(BudgetExceeded):
    pass


@dataclass(frozen=True)
class LevelEstimate:
    level: int
    side: int
    bad: int
    trials: int
    ci_low: float
    ci_high: float
    exact: float | None = None

    @property
    def p_hat(self) -> float:
        return self.bad / self.trials


def estimate_block_goodness(params: Params, M: int, level: int, trials: int, seed: int,
                            max_vertices: float = 2e7, max_edges: float = DEFAULT_EDGE_BUDGET) -> list[LevelEstimate]:
    """Empirical probability that ``[0, A_k)^d`` is bad, for ``k = 0..level``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = replace(params, boundary="free")
    h = BlockHierarchy(M)
    side = block_side(h, level)
    halo = required_margin(h, level)
    n_vert = float(side + 2 * halo) ** params.d
    if n_vert > max_vertices:
        raise InfeasibleLevel(n_vert, max_vertices)
    box = Box((0,) * params.d, side)
    bad = np.zeros(level + 1, dtype=np.int64)
    for t in range(trials):
        conf = sample_configuration(params, box, halo, derive_seed(seed, t), "skip", max_edges=max_edges)
        for k in range(level + 1):
            if not classify_block(conf, h, Block(k, (0,) * params.d)).good:
                bad[k] += 1
    out = []
    for k in range(level + 1):
        ci = binomtest(int(bad[k]), trials).proportion_ci(0.95)
        out.append(LevelEstimate(k, block_side(h, k), int(bad[k]), trials, float(ci.low), float(ci.high),
                                 exact_p0(params, M) if k == 0 else None))
    return out
