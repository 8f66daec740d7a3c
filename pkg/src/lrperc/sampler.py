"""Sampling of long-range percolation configurations on a finite box.

A configuration holds every open pair with at least one endpoint in the box
and both endpoints in the box expanded by ``halo``.  Pairs are grouped into
displacement classes; the ``skip`` backend walks each class with geometric
gaps (cost proportional to the number of open edges), the ``hash`` backend
decides every pair from a counter-based hash of its global coordinates and
serves as an order-independent oracle.

Vertices are addressed by row-major flat indices into the expanded box, with
the first coordinate most significant, so integer order on flat indices is
lexicographic order on coordinates.
"""
from __future__ import annotations

import functools
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from ._rng import MASK64, nb_absorb, nb_mix64, nb_next, nb_unit_closed, nb_unit_open
from .lattice_model import Box, Params, connection_probabilities

BACKENDS = ("skip", "hash")
FORMAT_VERSION = 1
DEFAULT_EDGE_BUDGET = 50_000_000


class BudgetExceeded(RuntimeError):
    """Raised before sampling when the expected edge count is too large."""

    def __init__(self, expected: float, budget: float):
        super().__init__(f"expected {expected:.3g} open edges exceeds budget {budget:.3g}")
        self.expected = expected
        self.budget = budget


class BundleError(ValueError):
    code = "bundle"


class BundleHeaderError(BundleError):
    code = "malformed_header"


class BundleVersionError(BundleError):
    code = "version_mismatch"


class BundleChecksumError(BundleError):
    code = "checksum_failure"


@dataclass(frozen=True)
class RegionQuery:
    """Axis-aligned rectangle ``[lo, hi)`` in global coordinates."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(c) for c in self.lo))
        object.__setattr__(self, "hi", tuple(int(c) for c in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("region corners differ in dimension")

    @classmethod
    def of_box(cls, box: Box) -> "RegionQuery":
        return cls(box.lo, box.hi)

    @property
    def empty(self) -> bool:
        return any(h <= l for l, h in zip(self.lo, self.hi))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Row mask for an ``(n, d)`` coordinate array."""
        pts = np.asarray(pts)
        return np.all((pts >= np.asarray(self.lo)) & (pts < np.asarray(self.hi)), axis=-1)


@dataclass(frozen=True, eq=False)
class Configuration:
    params: Params
    box: Box
    halo: int
    edges: np.ndarray  # (E, 2) int64 flat indices into the expanded box, u < v, sorted
    seed: int = 0
    backend: str = "skip"
    format_version: int = FORMAT_VERSION
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def d(self) -> int:
        return self.box.d

    @functools.cached_property
    def ext(self) -> Box:
        return self.box.expanded(self.halo)

    @property
    def n_vertices(self) -> int:
        return self.ext.volume

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def flat(self, pts) -> np.ndarray:
        """Flat indices of global points (``(n, d)`` or a single point)."""
        pts = np.asarray(pts, dtype=np.int64)
        local = pts - np.asarray(self.ext.lo, dtype=np.int64)
        out = np.zeros(local.shape[:-1], dtype=np.int64)
        for i in range(self.d):
            out = out * self.ext.side + local[..., i]
        return out

    def coords(self, idx) -> np.ndarray:
        """Global coordinates of flat indices; shape ``idx.shape + (d,)``."""
        idx = np.asarray(idx, dtype=np.int64)
        side = self.ext.side
        out = np.empty(idx.shape + (self.d,), dtype=np.int64)
        rest = idx.copy()
        for i in range(self.d - 1, -1, -1):
            out[..., i] = rest % side + self.ext.lo[i]
            rest //= side
        return out

    def edge_coords(self) -> np.ndarray:
        """``(E, 2, d)`` global coordinates of the open edges, canonical order."""
        if "coords" not in self._cache:
            self._cache["coords"] = self.coords(self.edges)
        return self._cache["coords"]

    def edge_list(self) -> list[tuple[tuple, tuple]]:
        return [(tuple(map(int, a)), tuple(map(int, b))) for a, b in self.edge_coords()]

    def adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR ``(indptr, indices)`` of the undirected open-edge graph."""
        if "csr" not in self._cache:
            self._cache["csr"] = _csr(self.edges, self.n_vertices)
        return self._cache["csr"]

    def same_edges(self, other: "Configuration") -> bool:
        return np.array_equal(self.edge_coords(), other.edge_coords())

    def with_edges(self, edges: np.ndarray) -> "Configuration":
        """Same provenance, different (already canonical) edge array."""
        return Configuration(self.params, self.box, self.halo, edges, self.seed, self.backend, self.format_version)

    def without_edge(self, i: int) -> "Configuration":
        return self.with_edges(np.delete(self.edges, i, axis=0))

    def with_extra_edges(self, pairs) -> "Configuration":
        extra = _pairs_to_flat(self, pairs)
        return self.with_edges(_canonical(np.concatenate([self.edges, extra])))

    def validate(self) -> None:
        """Check the structural invariants; raises ``ValueError``."""
        e = self.edges
        if e.ndim != 2 or e.shape[1] != 2:
            raise ValueError("edges must be an (E, 2) array")
        if len(e) == 0:
            return
        if np.any(e[:, 0] >= e[:, 1]):
            raise ValueError("edges must be stored with u < v and no self-loops")
        if e.min() < 0 or e.max() >= self.n_vertices:
            raise ValueError("edge endpoint outside box + halo")
        order = np.lexsort((e[:, 1], e[:, 0]))
        if not np.array_equal(order, np.arange(len(e))):
            raise ValueError("edges not in canonical order")
        if np.any(np.all(e[1:] == e[:-1], axis=1)):
            raise ValueError("duplicate edge")
        inner = RegionQuery.of_box(self.box)
        c = self.edge_coords()
        if not np.all(inner.contains(c[:, 0]) | inner.contains(c[:, 1])):
            raise ValueError("edge with both endpoints outside the box")

    @classmethod
    def from_edges(cls, params: Params, box: Box, halo: int, pairs, seed: int = 0, backend: str = "explicit") -> "Configuration":
        """Build a configuration from explicit ``(x, y)`` coordinate pairs."""
        shell = cls(params, box, int(halo), np.empty((0, 2), dtype=np.int64), seed, backend)
        edges = _canonical(_pairs_to_flat(shell, pairs))
        conf = shell.with_edges(edges)
        conf.validate()
        return conf


def _pairs_to_flat(conf: Configuration, pairs) -> np.ndarray:
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2, conf.d)
    ext = RegionQuery.of_box(conf.ext)
    if not np.all(ext.contains(arr.reshape(-1, conf.d))):
        raise ValueError("edge endpoint outside box + halo")
    f = conf.flat(arr)
    if np.any(f[:, 0] == f[:, 1]):
        raise ValueError("self-loop")
    return np.sort(f, axis=1)


def _canonical(edges: np.ndarray) -> np.ndarray:
    if len(edges) == 0:
        return edges.reshape(0, 2).astype(np.int64)
    edges = np.unique(edges, axis=0)
    return np.ascontiguousarray(edges, dtype=np.int64)


def _csr(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.argsort(src, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, np.ascontiguousarray(dst[order])


# --------------------------------------------------------------------------
# displacement classes


def displacement_classes(params: Params, box: Box, halo: int) -> np.ndarray:
    """Class representatives, one per unordered displacement, ``(C, d)``.

    Free boundary: lexicographically positive ``k`` with ``|k_i| < side+2*halo``.
    Torus: residues ``k`` in ``[0, L)^d`` with ``k <= -k mod L`` lexicographically.
    """
    d = box.d
    if params.boundary == "torus":
        L = box.side
        ks = np.indices((L,) * d).reshape(d, -1).T
        neg = (-ks) % L
        keep = _lex_less_equal(ks, neg) & ks.any(axis=1)
        return np.ascontiguousarray(ks[keep], dtype=np.int64)
    le = box.side + 2 * halo
    if d == 1:
        return np.arange(1, le, dtype=np.int64)[:, None]
    ks = np.indices((2 * le - 1,) * d).reshape(d, -1).T - (le - 1)
    return np.ascontiguousarray(ks[_lex_positive(ks)], dtype=np.int64)


def _lex_positive(ks: np.ndarray) -> np.ndarray:
    out = np.zeros(len(ks), dtype=bool)
    undecided = np.ones(len(ks), dtype=bool)
    for i in range(ks.shape[1]):
        out |= undecided & (ks[:, i] > 0)
        undecided &= ks[:, i] == 0
    return out


def _lex_less_equal(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(len(a), dtype=bool)
    undecided = np.ones(len(a), dtype=bool)
    for i in range(a.shape[1]):
        out |= undecided & (a[:, i] < b[:, i])
        undecided &= a[:, i] == b[:, i]
    return out | undecided


def _minimal_image(ks: np.ndarray, L: int) -> np.ndarray:
    return np.where(ks > L // 2, ks - L, ks)


def _class_ranges(ks: np.ndarray, side: int, halo: int, torus: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-class, per-axis start coordinates and lengths (local) of the scan hull."""
    if torus:
        return np.zeros_like(ks), np.full_like(ks, side)
    le = side + 2 * halo
    lo = np.maximum(0, -ks)
    hi = np.minimum(le, le - ks)
    t_lo = np.minimum(halo, halo - ks)
    t_hi = np.maximum(halo + side, halo + side - ks)
    a = np.maximum(lo, t_lo)
    b = np.minimum(hi, t_hi)
    return a, np.maximum(b - a, 0)


def expected_edges(params: Params, box: Box, halo: int = 0) -> float:
    """Expected number of pairs examined-and-opened; used for budget checks."""
    ks, p, _, lengths = _plan(params, box, halo)
    return float(np.dot(np.prod(lengths.astype(np.float64), axis=1), p))


def _plan(params: Params, box: Box, halo: int):
    if params.d != box.d:
        raise ValueError(f"params.d={params.d} but box has d={box.d}")
    if halo < 0:
        raise ValueError("halo must be >= 0")
    torus = params.boundary == "torus"
    if torus and halo:
        raise ValueError("torus boundary does not use a halo")
    ks = displacement_classes(params, box, halo)
    if len(ks) == 0:
        return ks, np.zeros(0), ks, ks
    disp = _minimal_image(ks, box.side) if torus else ks
    p = connection_probabilities(params, disp)
    starts, lengths = _class_ranges(ks, box.side, halo, torus)
    return ks, p, starts, lengths


def sample_configuration(
    params: Params,
    box: Box,
    halo: int = 0,
    seed: int = 0,
    backend: str = "skip",
    max_edges: float = DEFAULT_EDGE_BUDGET,
) -> Configuration:
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    halo = int(halo)
    ks, p, starts, lengths = _plan(params, box, halo)
    seed = int(seed) & MASK64
    if len(ks) == 0:
        return Configuration(params, box, halo, np.empty((0, 2), dtype=np.int64), seed, backend)
    expected = float(np.dot(np.prod(lengths.astype(np.float64), axis=1), p))
    if expected > max_edges:
        raise BudgetExceeded(expected, max_edges)
    self_inverse = np.zeros(len(ks), dtype=np.bool_)
    if params.boundary == "torus":
        self_inverse = np.all(ks == (-ks) % box.side, axis=1)
    cap = int(expected + 8 * math.sqrt(expected) + 1024)
    origin = np.asarray(box.expanded(halo).lo, dtype=np.int64)
    edges = _sample_kernel(
        ks, p, starts, lengths, self_inverse, box.side, halo, origin,
        np.uint64(seed), backend == "hash", params.boundary == "torus", cap,
    )
    n = box.side + 2 * halo
    if n**box.d < 2**31:
        key = edges[:, 0] * (n**box.d) + edges[:, 1]
        edges = edges[np.argsort(key, kind="stable")]
    else:
        edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return Configuration(params, box, halo, np.ascontiguousarray(edges), seed, backend)


@njit(cache=True)
def _sample_kernel(ks, ps, starts, lengths, self_inverse, side, halo, origin, seed, use_hash, torus, cap):
    n_cls, d = ks.shape
    le = side + 2 * halo
    out = np.empty((cap, 2), dtype=np.int64)
    cnt = 0
    x = np.empty(d, dtype=np.int64)
    y = np.empty(d, dtype=np.int64)
    base_seed = nb_mix64(seed)
    for c in range(n_cls):
        p = ps[c]
        if p <= 0.0:
            continue
        n = 1
        for i in range(d):
            n *= lengths[c, i]
        if n == 0:
            continue
        state = np.uint64(0)
        log_q = 0.0
        if use_hash or p >= 1.0:
            t = 0
            step_all = True
        else:
            state = nb_mix64(base_seed ^ nb_mix64(np.uint64(c) + np.uint64(0x632BE59BD9B4E019)))
            log_q = math.log1p(-p)
            t = -1
            step_all = False
        while True:
            if step_all:
                if t >= n:
                    break
            else:
                state, z = nb_next(state)
                # gap stays a float until it is known to fit (huge gaps overflow int64)
                g = math.log(nb_unit_closed(z)) / log_q
                if g >= n - t - 1:
                    break
                t += int(g) + 1
            # decode t into the class's scan hull (row-major)
            rest = t
            for i in range(d - 1, -1, -1):
                x[i] = starts[c, i] + rest % lengths[c, i]
                rest //= lengths[c, i]
            touches = True
            for i in range(d):
                yi = x[i] + ks[c, i]
                if torus:
                    yi = yi % side
                y[i] = yi
            if not torus:
                in_x = True
                in_y = True
                for i in range(d):
                    if x[i] < halo or x[i] >= halo + side:
                        in_x = False
                    if y[i] < halo or y[i] >= halo + side:
                        in_y = False
                touches = in_x or in_y
            fx = 0
            fy = 0
            for i in range(d):
                fx = fx * le + x[i]
                fy = fy * le + y[i]
            if torus and self_inverse[c] and fy < fx:
                touches = False
            if touches:
                keep = True
                lo_f = min(fx, fy)
                hi_f = max(fx, fy)
                if use_hash and p < 1.0:
                    h = seed
                    a = x if fx < fy else y
                    b = y if fx < fy else x
                    for i in range(d):
                        h = nb_absorb(h, a[i] + origin[i])
                    for i in range(d):
                        h = nb_absorb(h, b[i] + origin[i])
                    keep = nb_unit_open(h) < p
                if keep:
                    if cnt == out.shape[0]:
                        bigger = np.empty((2 * out.shape[0], 2), dtype=np.int64)
                        bigger[:cnt] = out[:cnt]
                        out = bigger
                    out[cnt, 0] = lo_f
                    out[cnt, 1] = hi_f
                    cnt += 1
            if step_all:
                t += 1
    return out[:cnt].copy()


def pair_is_open_hash(params: Params, seed: int, x, y) -> bool:
    """Reference decision of the hash backend for one pair (global coords)."""
    from ._rng import GOLDEN, mix64

    x = tuple(int(c) for c in x)
    y = tuple(int(c) for c in y)
    if x == y:
        raise ValueError("self-loop")
    a, b = (x, y) if x < y else (y, x)
    k = np.subtract(b, a)
    p = connection_probabilities(params, k[None, :])[0]
    if p >= 1.0:
        return True
    if p <= 0.0:
        return False
    h = int(seed) & MASK64
    for v in a + b:
        h = mix64(h ^ ((v + GOLDEN) & MASK64))
    return ((h >> 11) / 2.0**53) < p


# --------------------------------------------------------------------------
# region queries


def _check_region(config: Configuration, region: RegionQuery) -> None:
    if len(region.lo) != config.d:
        raise ValueError("region dimension mismatch")
    if region.empty:
        return
    ext = config.ext
    for l, h, el, eh in zip(region.lo, region.hi, ext.lo, ext.hi):
        if l < el or h > eh:
            raise ValueError(f"region {region} leaves box + halo {ext.lo}..{ext.hi}")


def touching_mask(config: Configuration, region: RegionQuery) -> np.ndarray:
    _check_region(config, region)
    if region.empty:
        return np.zeros(config.n_edges, dtype=bool)
    c = config.edge_coords()
    return region.contains(c[:, 0]) | region.contains(c[:, 1])


def edges_touching(config: Configuration, query: RegionQuery) -> np.ndarray:
    """Open edges with at least one endpoint in ``query``, ``(n, 2, d)``."""
    return config.edge_coords()[touching_mask(config, query)]


# --------------------------------------------------------------------------
# bundles


def save_bundle(config: Configuration, path) -> None:
    c = config.edge_coords().reshape(config.n_edges, 2 * config.d)
    if len(c):
        payload = ("\n".join(" ".join(map(str, row)) for row in c.tolist()) + "\n").encode()
    else:
        payload = b""
    header = {
        "format_version": config.format_version,
        "params": config.params.to_dict(),
        "box": {"lo": list(config.box.lo), "side": config.box.side},
        "halo": config.halo,
        "seed": config.seed,
        "backend": config.backend,
        "edge_count": config.n_edges,
        "crc32": zlib.crc32(payload),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def load_bundle(path) -> Configuration:
    raw = Path(path).read_bytes()
    head, sep, payload = raw.partition(b"\n")
    if not sep:
        raise BundleHeaderError("bundle has no header line")
    try:
        header = json.loads(head.decode("utf-8"))
        version = header["format_version"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise BundleHeaderError(f"malformed bundle header: {exc}") from exc
    if version != FORMAT_VERSION:
        raise BundleVersionError(f"bundle format_version {version} unsupported (expected {FORMAT_VERSION})")
    try:
        params = Params.from_dict(header["params"])
        box = Box(header["box"]["lo"], header["box"]["side"])
        halo = int(header["halo"])
        count = int(header["edge_count"])
        crc = int(header["crc32"])
        seed = int(header["seed"])
        backend = str(header["backend"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleHeaderError(f"malformed bundle header: {exc}") from exc
    if zlib.crc32(payload) != crc:
        raise BundleChecksumError("bundle payload CRC32 mismatch")
    rows = payload.split()
    if len(rows) != count * 2 * params.d:
        raise BundleChecksumError(f"bundle holds {len(rows)} coordinates, header promises {count} edges")
    coords = np.array(rows, dtype=np.int64).reshape(count, 2, params.d)
    conf = Configuration.from_edges(params, box, halo, coords, seed=seed, backend=backend)
    if conf.n_edges != count:
        raise BundleChecksumError("duplicate edges in bundle payload")
    return conf
