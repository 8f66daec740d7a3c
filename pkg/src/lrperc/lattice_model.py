"""Connection kernel, lattice boxes and the multiscale block hierarchy.

Everything here is pure: no randomness, no mutable state.  Block sides
``A_k = M (k!)^2`` are exact Python integers; magnitudes that do not fit a
machine word belong in :mod:`lrperc.certificates`, which works in log space.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

NORMS = ("euclidean", "sup", "l1")
BOUNDARIES = ("free", "torus")

# Largest block side / vertex count we hand to int64 index arithmetic.
INT_LIMIT = 2**63 - 1


@dataclass(frozen=True)
class Params:
    """Model parameters: dimension, decay exponent and kernel amplitude."""

    d: int
    s: float
    beta: float
    norm: str = "euclidean"
    boundary: str = "free"
    force_nn: bool = False

    def __post_init__(self):
        if isinstance(self.d, bool) or not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        if not self.s > 0:
            raise ValueError(f"s must be positive, got {self.s!r}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be non-negative, got {self.beta!r}")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "force_nn", bool(self.force_nn))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "Params":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown Params fields: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, text: str) -> "Params":
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise ValueError("Params JSON must be an object")
        return cls.from_dict(obj)


@dataclass(frozen=True)
class Box:
    """The vertex set ``lo + [0, side)^d``."""

    lo: tuple
    side: int

    def __post_init__(self):
        lo = tuple(int(c) for c in self.lo)
        if not lo:
            raise ValueError("box needs at least one coordinate")
        if int(self.side) < 1:
            raise ValueError(f"box side must be >= 1, got {self.side}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "side", int(self.side))
        if self.side ** len(lo) > INT_LIMIT:
            raise OverflowError(f"box with side {self.side} in d={len(lo)} exceeds index range")

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> int:
        return self.side**self.d

    @property
    def hi(self) -> tuple:
        return tuple(c + self.side for c in self.lo)

    def contains(self, x: Sequence[int]) -> bool:
        return all(l <= c < l + self.side for l, c in zip(self.lo, x))

    def expanded(self, margin: int) -> "Box":
        return Box(tuple(c - margin for c in self.lo), self.side + 2 * margin)


@dataclass(frozen=True)
class Block:
    """An ``level``-block ``corner + [0, A_level)^d``."""

    level: int
    corner: tuple

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("block level must be >= 0")
        object.__setattr__(self, "corner", tuple(int(c) for c in self.corner))

    @property
    def d(self) -> int:
        return len(self.corner)


@dataclass(frozen=True)
class BlockHierarchy:
    """Scales ``C_0 = M, C_n = n^2`` and sides ``A_n = M (n!)^2``."""

    M: int

    def __post_init__(self):
        if int(self.M) < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        object.__setattr__(self, "M", int(self.M))

    def scale(self, n: int) -> int:
        return self.M if n == 0 else n * n

    def side(self, k: int) -> int:
        return block_side(self, k)

    def levels_within(self, box: Box) -> int:
        """Largest level whose block side fits in ``box`` (-1 if none)."""
        k = -1
        while k + 1 < 64 and block_side(self, k + 1) <= box.side:
            k += 1
        return k

    def block_box(self, block: Block) -> Box:
        return Box(block.corner, block_side(self, block.level))


def block_side(hierarchy: BlockHierarchy, level: int) -> int:
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    a = hierarchy.M * math.factorial(level) ** 2
    if a > INT_LIMIT:
        raise OverflowError(f"A_{level} = M*({level}!)^2 does not fit in 64 bits; use certificates for log-space magnitudes")
    return a


def children_of(hierarchy: BlockHierarchy, block: Block) -> list[Block]:
    if block.level < 1:
        raise ValueError("a 0-block has no children")
    c = hierarchy.scale(block.level)
    a = block_side(hierarchy, block.level - 1)
    return [
        Block(block.level - 1, tuple(j + h * a for j, h in zip(block.corner, hs)))
        for hs in itertools.product(range(c), repeat=block.d)
    ]


def shift_vectors(d: int) -> list[tuple]:
    """``{0, +1, -1}^d`` with the zero vector first."""
    return list(itertools.product((0, 1, -1), repeat=d))


def shifted_copies(block: Block, step: int) -> list[Block]:
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return [
        Block(block.level, tuple(c + j * step for c, j in zip(block.corner, js)))
        for js in shift_vectors(block.d)
    ]


def norm_of(params_or_norm, k) -> float:
    norm = getattr(params_or_norm, "norm", params_or_norm)
    k = np.asarray(k, dtype=np.float64)
    if norm == "euclidean":
        return float(np.sqrt(np.sum(k * k, axis=-1)))
    if norm == "sup":
        return float(np.max(np.abs(k), axis=-1))
    return float(np.sum(np.abs(k), axis=-1))


def norms(norm: str, k: np.ndarray) -> np.ndarray:
    """Row-wise norms of an ``(n, d)`` integer array."""
    k = np.asarray(k, dtype=np.float64)
    if norm == "euclidean":
        return np.sqrt(np.einsum("ij,ij->i", k, k))
    if norm == "sup":
        return np.abs(k).max(axis=1)
    return np.abs(k).sum(axis=1)


def length_measure(norm: str, k: np.ndarray) -> np.ndarray:
    """Exact integer surrogate of ``norm`` (the squared length for euclidean)."""
    k = np.asarray(k, dtype=np.int64)
    if k.ndim == 1:
        k = k[:, None]
    if norm == "euclidean":
        return np.einsum("ij,ij->i", k, k)
    if norm == "sup":
        return np.abs(k).max(axis=1)
    return np.abs(k).sum(axis=1)


def compare_length(norm: str, measure, scale: int, denom: int = 1) -> np.ndarray:
    """Exact sign of ``||k|| - scale/denom`` from :func:`length_measure` values."""
    m = np.asarray(measure)
    if norm == "euclidean":
        lhs_scale, rhs = denom * denom, scale * scale
    else:
        lhs_scale, rhs = denom, scale
    if rhs < 2**62 and (m.size == 0 or int(m.max(initial=0)) * lhs_scale < 2**62):
        lhs = m.astype(np.int64) * lhs_scale
    else:
        lhs = m.astype(object) * lhs_scale
    return (lhs > rhs).astype(np.int64) - (lhs < rhs).astype(np.int64)


def exceeds(norm: str, measure, scale: int, denom: int = 1) -> np.ndarray:
    """Exactly decide ``||k|| > scale / denom`` elementwise."""
    return compare_length(norm, measure, scale, denom) > 0


def connection_probability(params: Params, k) -> float:
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    if k.shape != (params.d,):
        raise ValueError(f"displacement must have {params.d} coordinates")
    if not k.any():
        raise ValueError("connection probability is undefined for a zero displacement")
    if params.force_nn and int(np.abs(k).sum()) == 1:
        return 1.0
    if params.beta == 0.0:
        return 0.0
    return min(1.0, params.beta * norm_of(params.norm, k) ** (-params.s))


def connection_probabilities(params: Params, ks: np.ndarray) -> np.ndarray:
    """Vectorized :func:`connection_probability` over rows of ``ks``."""
    ks = np.asarray(ks, dtype=np.int64).reshape(-1, params.d)
    r = norms(params.norm, ks)
    if np.any(r == 0):
        raise ValueError("connection probability is undefined for a zero displacement")
    if params.beta == 0.0:
        p = np.zeros(len(ks))
    else:
        with np.errstate(over="ignore"):
            p = np.minimum(1.0, params.beta * r ** (-params.s))
    if params.force_nn:
        p[np.abs(ks).sum(axis=1) == 1] = 1.0
    return p
