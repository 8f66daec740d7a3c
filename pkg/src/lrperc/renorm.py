"""Good-block classification and the path constructions built on it.

A 0-block is good when it holds no edge longer than ``A_0/100``.  A k-block
is good when (a) it holds no edge longer than ``A_{k-1}/100``, (b) at most
one of its children is bad, and (c) some configuration agreeing with the
current one on every pair touching the block makes all ``3^d`` half-shifted
copies satisfy (a) and (b).

Goodness only ever fails because an edge is present, so it is antitone in the
edge set.  The configuration in (c) may therefore be taken to be the one that
keeps exactly the edges touching the block; (c) becomes a single evaluation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .lattice_model import (
    Block,
    BlockHierarchy,
    block_side,
    children_of,
    compare_length,
    exceeds,
    length_measure,
    norm_of,
    shift_vectors,
)
from .metric import Path
from .sampler import Configuration, RegionQuery

GOOD = "GOOD"
BAD = "BAD"


class InsufficientHalo(ValueError):
    def __init__(self, block: Block, required: int, msg: str = ""):
        super().__init__(msg or f"{block} needs a sampled margin of {required} around it inside box + halo")
        self.required = required


@dataclass(frozen=True)
class LongEdge:
    edge: tuple  # ((x...), (y...))

    def to_dict(self):
        return {"type": "LONG_EDGE", "edge": [list(self.edge[0]), list(self.edge[1])]}


@dataclass(frozen=True)
class TwoBadChildren:
    children: tuple  # two Blocks

    def to_dict(self):
        return {"type": "TWO_BAD_CHILDREN", "children": [list(c.corner) for c in self.children]}


@dataclass(frozen=True)
class ShiftedFail:
    j: tuple
    sub: object  # LongEdge | TwoBadChildren

    def to_dict(self):
        return {"type": "SHIFTED_FAIL", "j": list(self.j), "sub": self.sub.to_dict()}


@dataclass(frozen=True)
class BlockStatus:
    verdict: str
    reason: object  # None for GOOD
    level: int
    corner: tuple = ()

    @property
    def good(self) -> bool:
        return self.verdict == GOOD

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "corner": list(self.corner),
            "verdict": self.verdict,
            "reason": "NONE" if self.reason is None else self.reason.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def required_margin(hierarchy: BlockHierarchy, level: int) -> int:
    """Sampled margin a level-``level`` block needs: the sum of ``A_i // 2`` for ``i < level``."""
    return sum(block_side(hierarchy, i) // 2 for i in range(level))


def half_step(hierarchy: BlockHierarchy, level: int) -> int:
    """Shift used by clause (c) at ``level``: ``A_{level-1} // 2``."""
    return block_side(hierarchy, level - 1) // 2


def check_halo(config: Configuration, hierarchy: BlockHierarchy, block: Block) -> None:
    side = block_side(hierarchy, block.level)
    margin = required_margin(hierarchy, block.level)
    box, ext = config.box, config.ext
    for c, bl, el in zip(block.corner, box.lo, ext.lo):
        if c < bl or c + side > bl + box.side:
            raise InsufficientHalo(block, margin, f"{block} is not inside the sampled box {box}")
        if c - margin < el or c + side + margin > el + ext.side:
            raise InsufficientHalo(block, margin)


class _Classifier:
    """Memoized goodness evaluation over one fixed edge set."""

    def __init__(self, a: np.ndarray, b: np.ndarray, hierarchy: BlockHierarchy, norm: str):
        self.a = a
        self.b = b
        self.measure = length_measure(norm, b - a) if len(a) else np.zeros(0, dtype=np.int64)
        self.hierarchy = hierarchy
        self.norm = norm
        self.d = a.shape[1]
        self._status: dict = {}
        self._restricted: dict = {}

    @classmethod
    def of(cls, config: Configuration, hierarchy: BlockHierarchy) -> "_Classifier":
        key = ("classifier", hierarchy.M)
        if key not in config._cache:
            c = config.edge_coords()
            config._cache[key] = cls(c[:, 0], c[:, 1], hierarchy, config.params.norm)
        return config._cache[key]

    def _in(self, pts: np.ndarray, corner: tuple, side: int) -> np.ndarray:
        lo = np.asarray(corner)
        return np.all((pts >= lo) & (pts < lo + side), axis=1)

    def long_edge(self, level: int, corner: tuple) -> Optional[LongEdge]:
        if len(self.a) == 0:
            return None
        side = block_side(self.hierarchy, level)
        scale = block_side(self.hierarchy, max(level - 1, 0))
        hit = self._in(self.a, corner, side) & self._in(self.b, corner, side)
        hit &= exceeds(self.norm, self.measure, scale, 100)
        idx = np.flatnonzero(hit)
        if len(idx) == 0:
            return None
        i = idx[0]
        return LongEdge((tuple(map(int, self.a[i])), tuple(map(int, self.b[i]))))

    def clauses_ab(self, level: int, corner: tuple):
        """First violated reason among clauses (a) and (b), else None."""
        reason = self.long_edge(level, corner)
        if reason is not None or level == 0:
            return reason
        bad = []
        for child in children_of(self.hierarchy, Block(level, corner)):
            if not self.status(child.level, child.corner).good:
                bad.append(child)
                if len(bad) == 2:
                    return TwoBadChildren(tuple(bad))
        return None

    def restricted_to(self, level: int, corner: tuple) -> "_Classifier":
        """Classifier over the edges touching the block (the optimal choice in clause (c))."""
        key = (level, corner)
        sub = self._restricted.get(key)
        if sub is None:
            side = block_side(self.hierarchy, level)
            keep = self._in(self.a, corner, side) | self._in(self.b, corner, side) if len(self.a) else np.zeros(0, bool)
            sub = _Classifier(self.a[keep], self.b[keep], self.hierarchy, self.norm)
            self._restricted[key] = sub
        return sub

    def status(self, level: int, corner: tuple) -> BlockStatus:
        key = (level, corner)
        hit = self._status.get(key)
        if hit is not None:
            return hit
        reason = self.clauses_ab(level, corner)
        if reason is None and level >= 1:
            sub = self.restricted_to(level, corner)
            step = half_step(self.hierarchy, level)
            for j in shift_vectors(self.d):
                if step == 0 and any(j):
                    continue
                shifted = tuple(c + ji * step for c, ji in zip(corner, j))
                r = sub.clauses_ab(level, shifted)
                if r is not None:
                    reason = ShiftedFail(j, r)
                    break
        out = BlockStatus(GOOD if reason is None else BAD, reason, level, corner)
        self._status[key] = out
        return out


def classify_block(config: Configuration, hierarchy: BlockHierarchy, block: Block) -> BlockStatus:
    check_halo(config, hierarchy, block)
    return _Classifier.of(config, hierarchy).status(block.level, block.corner)


def max_edge_length_in(config: Configuration, region: RegionQuery) -> float:
    """Longest open edge with both endpoints in ``region``; 0.0 if none."""
    ext = config.ext
    for l, h, el, eh in zip(region.lo, region.hi, ext.lo, ext.hi):
        if not region.empty and (l < el or h > eh):
            raise ValueError(f"region {region} leaves box + halo")
    c = config.edge_coords()
    if len(c) == 0 or region.empty:
        return 0.0
    inside = region.contains(c[:, 0]) & region.contains(c[:, 1])
    if not inside.any():
        return 0.0
    diffs = c[inside, 1] - c[inside, 0]
    return max(norm_of(config.params.norm, k) for k in diffs)


# --------------------------------------------------------------------------
# path decomposition


@dataclass(frozen=True)
class Decomposition:
    """Segments are ``(start, stop)`` vertex-index pairs into ``path``, inclusive."""

    path: Path
    gamma_segments: list
    nu_segments: list
    bad_blocks: list
    U: list
    hit_blocks: list = field(default_factory=list)  # index into bad_blocks per nu segment

    def sub_path(self, seg) -> Path:
        return Path(self.path.vertices[seg[0]: seg[1] + 1])

    def gammas(self) -> list[Path]:
        return [self.sub_path(s) for s in self.gamma_segments]

    def nus(self) -> list[Path]:
        return [self.sub_path(s) for s in self.nu_segments]

    def chain(self) -> list:
        """Segments in path order: gamma_1, nu_1, gamma_2, ..., gamma_n."""
        out = []
        for i, g in enumerate(self.gamma_segments):
            out.append(g)
            if i < len(self.nu_segments):
                out.append(self.nu_segments[i])
        return out


def bad_blocks_for(config: Configuration, hierarchy: BlockHierarchy, block: Block) -> list[Block]:
    """Bad children of the block and of its half-shifted copies, in scan order.

    Children are judged under the configuration restricted to edges touching
    ``block``, which agrees with the original on every edge a path inside the
    block can use.
    """
    if block.level < 1:
        raise ValueError("decomposition needs a block of level >= 1")
    check_halo(config, hierarchy, block)
    sub = _Classifier.of(config, hierarchy).restricted_to(block.level, block.corner)
    step = half_step(hierarchy, block.level)
    seen, out = set(), []
    for j in shift_vectors(block.d):
        if step == 0 and any(j):
            continue
        q = Block(block.level, tuple(c + ji * step for c, ji in zip(block.corner, j)))
        for child in children_of(hierarchy, q):
            if child.corner in seen:
                continue
            if not sub.status(child.level, child.corner).good:
                seen.add(child.corner)
                out.append(child)
    return out


def decompose_indices(vertices: np.ndarray, bad_blocks: list[Block], hierarchy: BlockHierarchy, scale: int, norm: str = "euclidean") -> Decomposition:
    """Split a vertex sequence into bad-block-avoiding and bad-block-crossing pieces.

    ``a_i`` is the first index after the previous crossing that lies in some
    bad block, ``B_{b_i}`` the lowest-numbered bad block containing it and
    ``z_i`` the last index of the whole path inside ``B_{b_i}``.  The crossing
    runs from one vertex before ``a_i`` to one vertex after ``z_i``; it never
    starts before the end of the previous crossing, so consecutive pieces share
    endpoints.  ``U`` lists the avoiding pieces whose endpoints are more
    than ``scale/2`` apart.
    """
    v = np.asarray(vertices, dtype=np.int64)
    if v.ndim == 1:
        v = v[:, None]
    path = Path(v)
    l = len(v)
    if bad_blocks:
        member = np.stack(
            [np.all((v >= np.asarray(b.corner)) & (v < np.asarray(b.corner) + block_side(hierarchy, b.level)), axis=1) for b in bad_blocks],
            axis=1,
        )
    else:
        member = np.zeros((l, 0), dtype=bool)
    any_bad = member.any(axis=1)
    gammas, nus, hits = [], [], []
    start = 0
    while True:
        nxt = np.flatnonzero(any_bad[start:])
        if len(nxt) == 0:
            break
        a = start + int(nxt[0])
        b = int(np.flatnonzero(member[a])[0])
        z = int(np.flatnonzero(member[:, b])[-1])
        nu_start = max(a - 1, start)
        gammas.append((start, nu_start))
        nu_end = min(z + 1, l - 1)
        nus.append((nu_start, nu_end))
        hits.append(b)
        if z + 1 >= l:
            start = l - 1
            break
        start = z + 1
    gammas.append((start, l - 1))
    ends = np.array(gammas)
    m = length_measure(norm, v[ends[:, 1]] - v[ends[:, 0]])
    U = [int(i) for i in np.flatnonzero(exceeds(norm, m, scale, 2))]
    return Decomposition(path, gammas, nus, list(bad_blocks), U, hits)


def decompose_path(config: Configuration, hierarchy: BlockHierarchy, block: Block, path: Path) -> Decomposition:
    side = block_side(hierarchy, block.level)
    v = path.vertices
    lo = np.asarray(block.corner)
    if not np.all((v >= lo) & (v < lo + side)):
        raise ValueError(f"path leaves {block}")
    bad = bad_blocks_for(config, hierarchy, block)
    return decompose_indices(v, bad, hierarchy, block_side(hierarchy, block.level - 1), config.params.norm)


def segment_displacement(path: Path, seg, norm: str = "euclidean") -> float:
    v = path.vertices
    return norm_of(norm, v[seg[1]] - v[seg[0]])


# --------------------------------------------------------------------------
# waypoints


def select_waypoints(path: Path, scale: int, norm: str = "euclidean") -> list[int]:
    """Greedy waypoints: gaps longer than ``scale/4``, excursions shorter than ``scale/2``.

    Raises ``ValueError`` if any step of the path has length ``>= scale/100``.
    """
    v = path.vertices
    if len(v) > 1:
        steps = length_measure(norm, np.diff(v, axis=0))
        if np.any(compare_length(norm, steps, scale, 100) >= 0):
            raise ValueError(f"path has a step of length >= {scale}/100")
    out = [0]
    cur = 0
    while True:
        dist = length_measure(norm, v[cur:] - v[cur])
        if not np.any(compare_length(norm, dist, scale, 2) >= 0):
            return out
        far = np.flatnonzero(exceeds(norm, dist, scale, 4))
        cur += int(far[0])
        out.append(cur)


# --------------------------------------------------------------------------
# environment of a block


@dataclass(frozen=True)
class EnvironmentReport:
    ok: bool
    first_failure: Optional[tuple] = None  # (level, Block)


def centered_block(hierarchy: BlockHierarchy, block: Block, level: int) -> Block:
    """Grid-aligned ``level``-block whose center is nearest the center of ``block``.

    Ties go to the lower corner.
    """
    a_k = block_side(hierarchy, block.level)
    a_j = block_side(hierarchy, level)
    corner = []
    for c in block.corner:
        x = Fraction(2 * c + a_k - a_j, 2 * a_j)
        corner.append(math.ceil(x - Fraction(1, 2)) * a_j)
    return Block(level, tuple(corner))


def environment_blocks(hierarchy: BlockHierarchy, block: Block, max_level: int) -> list[Block]:
    """Blocks whose goodness the environment test needs, in checking order."""
    step = block_side(hierarchy, block.level) // 2
    out = [Block(block.level, tuple(c + ji * step for c, ji in zip(block.corner, j))) for j in shift_vectors(block.d)]
    out += [centered_block(hierarchy, block, j) for j in range(block.level + 1, max_level + 1)]
    return out


def environment_is_good(config: Configuration, hierarchy: BlockHierarchy, block: Block, max_level: int) -> EnvironmentReport:
    if max_level < block.level:
        raise ValueError("max_level below the block level")
    blocks = environment_blocks(hierarchy, block, max_level)
    for q in blocks:
        check_halo(config, hierarchy, q)
    for q in blocks:
        if not classify_block(config, hierarchy, q).good:
            return EnvironmentReport(False, (q.level, q))
    return EnvironmentReport(True)


# --------------------------------------------------------------------------


def lower_bound_constant(kappa: float, k_from: int, k_to: int, C_prime: float) -> float:
    """``C' * prod_{h=k_from}^{k_to} (1 - kappa/h^2)``."""
    if kappa < 2:
        raise ValueError("kappa must be >= 2")
    if k_from * k_from <= kappa:
        raise ValueError(f"factor 1 - {kappa}/{k_from}^2 is not positive")
    if k_to < k_from:
        return float(C_prime)
    h = np.arange(k_from, k_to + 1, dtype=np.float64)
    return float(C_prime) * math.exp(math.fsum(np.log1p(-kappa / (h * h))))
