import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lrperc.lattice_model import Box, Params
from lrperc.sampler import (
    BudgetExceeded,
    BundleChecksumError,
    BundleHeaderError,
    BundleVersionError,
    Configuration,
    RegionQuery,
    edges_touching,
    load_bundle,
    pair_is_open_hash,
    sample_configuration,
    save_bundle,
)

from oracles import vertices_of


def class_counts(conf, kmax):
    c = conf.edge_coords()[:, :, 0]
    return np.bincount(c[:, 1] - c[:, 0], minlength=kmax + 1)[: kmax + 1]


def test_only_nn_when_beta_zero():
    conf = sample_configuration(Params(1, 3, 0.0, force_nn=True), Box((0,), 10), 0, seed=1)
    assert conf.edge_list() == [((i,), (i + 1,)) for i in range(9)]


def test_class_fraction_within_binomial_band():
    conf = sample_configuration(Params(1, 3, 1.0), Box((0,), 4096), 0, seed=11)
    n, p = 4096 - 4, 4.0**-3
    opened = class_counts(conf, 4)[4]
    assert abs(opened - n * p) < 4 * math.sqrt(n * p * (1 - p))


@pytest.mark.parametrize("backend", ["skip", "hash"])
def test_deterministic(backend):
    args = (Params(2, 2.5, 1.0), Box((0, 0), 30), 4, 77, backend)
    a, b = sample_configuration(*args), sample_configuration(*args)
    assert np.array_equal(a.edges, b.edges)
    c = sample_configuration(Params(2, 2.5, 1.0), Box((0, 0), 30), 4, 78, backend)
    assert not np.array_equal(a.edges, c.edges)


def brute_candidate_pairs(box, halo):
    ext = box.expanded(halo)
    verts = vertices_of(ext.lo, ext.side)
    out = set()
    for a, b in itertools.combinations(verts, 2):
        if box.contains(a) or box.contains(b):
            out.add((min(a, b), max(a, b)))
    return out


@pytest.mark.parametrize("d,side,halo", [(1, 7, 0), (1, 5, 3), (2, 4, 0), (2, 3, 2), (3, 2, 1)])
@pytest.mark.parametrize("backend", ["skip", "hash"])
def test_pair_enumeration_complete(d, side, halo, backend):
    # every probability is 1, so the sampler must return every candidate pair once
    box = Box((-1,) * d, side)
    conf = sample_configuration(Params(d, 1.0, 1e9), box, halo, seed=3, backend=backend)
    conf.validate()
    assert set(conf.edge_list()) == brute_candidate_pairs(box, halo)


@pytest.mark.parametrize("d,side", [(1, 6), (1, 7), (2, 4), (2, 5)])
def test_torus_enumerates_each_pair_once(d, side):
    box = Box((0,) * d, side)
    conf = sample_configuration(Params(d, 1.0, 1e9, boundary="torus"), box, 0, seed=3)
    conf.validate()
    v = side**d
    assert conf.n_edges == v * (v - 1) // 2


def test_torus_uses_minimal_image():
    # only nn bonds forced, beta = 0: torus wraps the chain into a cycle
    conf = sample_configuration(Params(1, 3, 0.0, boundary="torus", force_nn=True), Box((0,), 8), 0, seed=0)
    assert conf.n_edges == 8
    assert ((0,), (7,)) in conf.edge_list()


def test_hash_backend_matches_pairwise_reference():
    params = Params(2, 2.0, 0.8)
    box = Box((-3, 2), 6)
    conf = sample_configuration(params, box, 2, seed=12345, backend="hash")
    got = set(conf.edge_list())
    want = {pr for pr in brute_candidate_pairs(box, 2) if pair_is_open_hash(params, 12345, *pr)}
    assert got == want


def test_hash_backend_is_box_independent():
    params = Params(1, 1.8, 1.0)
    a = sample_configuration(params, Box((0,), 200), 0, seed=9, backend="hash")
    b = sample_configuration(params, Box((50,), 300), 20, seed=9, backend="hash")
    window = RegionQuery((50,), (200,))
    ea = {e for e in a.edge_list() if window.contains(np.array([e[0], e[1]])).all()}
    eb = {e for e in b.edge_list() if window.contains(np.array([e[0], e[1]])).all()}
    assert ea == eb and ea


@given(
    d=st.integers(1, 2),
    side=st.integers(1, 12),
    halo=st.integers(0, 4),
    s=st.floats(0.5, 5.0),
    beta=st.floats(0.0, 3.0),
    seed=st.integers(0, 2**64 - 1),
    backend=st.sampled_from(["skip", "hash"]),
    force_nn=st.booleans(),
)
@settings(max_examples=80, deadline=None)
def test_structural_invariants(d, side, halo, s, beta, seed, backend, force_nn):
    conf = sample_configuration(Params(d, s, beta, force_nn=force_nn), Box((0,) * d, side), halo, seed, backend)
    conf.validate()
    if force_nn:
        nn = sum(1 for a, b in conf.edge_list() if sum(abs(x - y) for x, y in zip(a, b)) == 1)
        assert nn >= d * side ** (d - 1) * (side - 1)


def test_budget_refusal():
    with pytest.raises(BudgetExceeded) as info:
        sample_configuration(Params(1, 0.5, 1.0), Box((0,), 20000), 0, seed=0, max_edges=1e5)
    assert info.value.expected > 1e5


def test_invalid_backend():
    with pytest.raises(ValueError):
        sample_configuration(Params(1, 3, 1), Box((0,), 10), 0, 0, backend="fast")


@pytest.mark.slow
def test_per_class_counts_chi_square():
    params, L, K = Params(1, 3.0, 1.0), 1024, range(2, 26)
    totals = np.zeros(26)
    seeds = 100
    for seed in range(seeds):
        totals += class_counts(sample_configuration(params, Box((0,), L), 0, seed), 25)
    stat = sum((totals[k] - seeds * (L - k) * k**-3.0) ** 2 / (seeds * (L - k) * k**-3.0 * (1 - k**-3.0)) for k in K)
    assert stats.chi2.sf(stat, len(K)) > 1e-3


@pytest.mark.slow
def test_skip_and_hash_agree_in_distribution():
    params, L, K = Params(1, 2.5, 1.0), 256, range(2, 21)
    counts = {b: np.zeros(21) for b in ("skip", "hash")}
    for seed in range(200):
        for b in counts:
            counts[b] += class_counts(sample_configuration(params, Box((0,), L), 0, seed, b), 20)
    stat = 0.0
    for k in K:
        p = k**-2.5
        var = 2 * 200 * (L - k) * p * (1 - p)
        stat += (counts["skip"][k] - counts["hash"][k]) ** 2 / var
    assert stats.chi2.sf(stat, len(K)) > 1e-3


# -- region queries -----------------------------------------------------------


def test_edges_touching_examples():
    conf = sample_configuration(Params(2, 2.0, 1.0), Box((0, 0), 10), 0, 5)
    assert len(edges_touching(conf, RegionQuery((3, 3), (3, 8)))) == 0
    assert np.array_equal(edges_touching(conf, RegionQuery.of_box(conf.box)), conf.edge_coords())
    with pytest.raises(ValueError):
        edges_touching(conf, RegionQuery((-1, 0), (4, 4)))


@given(seed=st.integers(0, 10**6), lo=st.tuples(st.integers(-3, 10), st.integers(-3, 10)),
       ext=st.tuples(st.integers(0, 8), st.integers(0, 8)))
@settings(max_examples=60, deadline=None)
def test_edges_touching_matches_brute_force(seed, lo, ext):
    conf = sample_configuration(Params(2, 2.0, 1.5), Box((0, 0), 12), 3, seed)
    hi = tuple(min(l + e, 15) for l, e in zip(lo, ext))
    region = RegionQuery(lo, hi)
    got = [tuple(map(tuple, e)) for e in edges_touching(conf, region).tolist()]
    inside = lambda p: all(l <= x < h for x, l, h in zip(p, lo, hi))
    assert got == [e for e in conf.edge_list() if inside(e[0]) or inside(e[1])]


# -- bundles ------------------------------------------------------------------


@pytest.fixture
def config():
    return sample_configuration(Params(2, 2.5, 1.2, norm="sup", force_nn=True), Box((-4, 1), 9), 2, 2**63 + 5)


def test_bundle_round_trip(tmp_path, config):
    path = tmp_path / "c.bundle"
    save_bundle(config, path)
    back = load_bundle(path)
    assert back.same_edges(config) and np.array_equal(back.edges, config.edges)
    assert (back.params, back.box, back.halo, back.seed, back.backend) == (config.params, config.box, config.halo, config.seed, config.backend)
    save_bundle(back, tmp_path / "again.bundle")
    assert (tmp_path / "again.bundle").read_bytes() == path.read_bytes()


def test_bundle_payload_format(tmp_path):
    conf = Configuration.from_edges(Params(2, 3, 0.0), Box((0, 0), 4), 0, [((0, 0), (0, 1)), ((-0, 2), (3, 3))])
    save_bundle(conf, tmp_path / "b")
    head, payload = (tmp_path / "b").read_bytes().split(b"\n", 1)
    header = json.loads(head)
    assert header["edge_count"] == 2 and header["format_version"] == 1
    assert payload == b"0 0 0 1\n0 2 3 3\n"


def test_bundle_truncated(tmp_path, config):
    path = tmp_path / "c.bundle"
    save_bundle(config, path)
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    with pytest.raises(BundleChecksumError):
        load_bundle(path)


def test_bundle_version(tmp_path, config):
    path = tmp_path / "c.bundle"
    save_bundle(config, path)
    head, payload = path.read_bytes().split(b"\n", 1)
    header = json.loads(head)
    header["format_version"] = 99
    path.write_bytes(json.dumps(header).encode() + b"\n" + payload)
    with pytest.raises(BundleVersionError):
        load_bundle(path)


def test_bundle_malformed_header(tmp_path):
    path = tmp_path / "c.bundle"
    path.write_bytes(b"{not json\n1 2\n")
    with pytest.raises(BundleHeaderError):
        load_bundle(path)
    path.write_bytes(b'{"format_version": 1}\n')
    with pytest.raises(BundleHeaderError):
        load_bundle(path)


def test_error_classes_distinct():
    assert len({BundleChecksumError.code, BundleHeaderError.code, BundleVersionError.code}) == 3
