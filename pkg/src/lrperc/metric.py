"""Chemical (graph) distance on a sampled configuration."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .lattice_model import norm_of
from .sampler import Configuration, RegionQuery


class _Unreachable:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNREACHABLE"

    def __reduce__(self):
        return (_Unreachable, ())


UNREACHABLE = _Unreachable()


@dataclass(frozen=True)
class Path:
    """Vertex sequence ``v_1, ..., v_l``; shape ``(l, d)``."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.int64)
        if v.ndim == 1:
            v = v[:, None]
        if len(v) < 1:
            raise ValueError("a path has at least one vertex")
        if len(v) > 1 and np.any(np.all(v[1:] == v[:-1], axis=1)):
            raise ValueError("consecutive path vertices must differ")
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)

    def is_valid(self, config: Configuration) -> bool:
        """True when every vertex lies in box + halo and every step is open."""
        v = self.vertices
        if v.shape[1] != config.d or not np.all(RegionQuery.of_box(config.ext).contains(v)):
            return False
        if len(v) == 1:
            return True
        f = config.flat(v)
        steps = np.sort(np.stack([f[:-1], f[1:]], axis=1), axis=1)
        e = config.edges
        if len(e) == 0:
            return False
        n = config.n_vertices
        keys = e[:, 0] * n + e[:, 1]
        want = steps[:, 0] * n + steps[:, 1]
        pos = np.searchsorted(keys, want)
        pos = np.minimum(pos, len(keys) - 1)
        return bool(np.all(keys[pos] == want))


@dataclass(frozen=True)
class DistanceResult:
    value: object  # int or UNREACHABLE
    witness: Optional[Path] = None

    @property
    def reachable(self) -> bool:
        return self.value is not UNREACHABLE


@dataclass(frozen=True)
class PathStats:
    L: int
    D: float


@njit(cache=True)
def _bfs(indptr, indices, source, target, allowed):
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    if not allowed[source]:
        return dist, parent
    dist[source] = 0
    queue[0] = source
    head = 0
    tail = 1
    while head < tail:
        u = queue[head]
        head += 1
        if u == target:
            break
        du = dist[u] + 1
        for e in range(indptr[u], indptr[u + 1]):
            w = indices[e]
            if dist[w] < 0 and allowed[w]:
                dist[w] = du
                parent[w] = u
                queue[tail] = w
                tail += 1
    return dist, parent


def _check_point(config: Configuration, x, where) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    if x.shape != (config.d,) or not where.contains(x[None, :])[0]:
        raise ValueError(f"vertex {tuple(x)} outside {where}")
    return x


def _search(config, x, y, allowed, want_witness) -> DistanceResult:
    indptr, indices = config.adjacency()
    sx, sy = int(config.flat(x)), int(config.flat(y))
    dist, parent = _bfs(indptr, indices, sx, sy, allowed)
    if dist[sy] < 0:
        return DistanceResult(UNREACHABLE)
    witness = None
    if want_witness:
        chain = [sy]
        while chain[-1] != sx:
            chain.append(int(parent[chain[-1]]))
        witness = Path(config.coords(np.array(chain[::-1], dtype=np.int64)))
    return DistanceResult(int(dist[sy]), witness)


def chemical_distance(config: Configuration, x, y, want_witness: bool = False) -> DistanceResult:
    inner = RegionQuery.of_box(config.box)
    x = _check_point(config, x, inner)
    y = _check_point(config, y, inner)
    allowed = np.ones(config.n_vertices, dtype=np.bool_)
    return _search(config, x, y, allowed, want_witness)


def restricted_distance(config: Configuration, x, y, region: RegionQuery, want_witness: bool = False) -> DistanceResult:
    """Distance using only vertices inside ``region`` (clipped to box + halo)."""
    x = _check_point(config, x, region)
    y = _check_point(config, y, region)
    pts = config.coords(np.arange(config.n_vertices, dtype=np.int64))
    allowed = np.ascontiguousarray(region.contains(pts))
    return _search(config, x, y, allowed, want_witness)


def distances_from(config: Configuration, x) -> np.ndarray:
    """Distances from ``x`` to every vertex of box + halo (-1 = unreachable)."""
    x = _check_point(config, x, RegionQuery.of_box(config.box))
    indptr, indices = config.adjacency()
    allowed = np.ones(config.n_vertices, dtype=np.bool_)
    dist, _ = _bfs(indptr, indices, int(config.flat(x)), -1, allowed)
    return dist


def path_stats(path: Path, norm: str = "euclidean") -> PathStats:
    v = path.vertices
    return PathStats(len(v) - 1, norm_of(norm, v[-1] - v[0]))
