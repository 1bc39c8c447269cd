from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sasgrid import wire
from sasgrid.actions import build_catalogue
from sasgrid.es import TrainConfig, centered_ranks, estimate_gradient, RolloutResult
from sasgrid.grid import Action, format_grid, load_preset, parse_grid
from sasgrid.policy import PolicyParams, decode, serialize, top_k
from sasgrid.powerflow import dc_flows, generator_nodes, line_nodes

from .conftest import random_topology

CASE14 = load_preset("case14")
CAT14 = build_catalogue(CASE14)
finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), arrays(np.float64, 14 * 2, elements=st.floats(-5, 5)))
def test_flows_balance_every_island(seed, inj):
    topo = random_topology(CASE14, np.random.default_rng(seed))
    frm, to = line_nodes(CASE14, topo)
    _, flow, bal, lab = dc_flows(CASE14, frm, to, inj, generator_nodes(CASE14, topo))
    net = np.zeros(CASE14.n_nodes)
    live = (frm >= 0) & (to >= 0)
    np.add.at(net, frm[live], flow[live])
    np.add.at(net, to[live], -flow[live])
    assert np.abs(net - bal).max() < 1e-9
    for isl in np.unique(lab):
        assert abs(bal[lab == isl].sum()) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 99), st.integers(0, 2 ** 64 - 1))
def test_checkpoint_round_trip(sizes, seed, iteration):
    n = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
    theta = np.random.default_rng(seed).normal(size=n) * 1e3
    p = PolicyParams(theta, tuple(sizes))
    q, it = decode(serialize(p, iteration))
    assert q == p and it == iteration


@given(st.builds(wire.TaskMessage, st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 32 - 1),
                 st.integers(0, 2 ** 64 - 1), st.sampled_from([1, -1]), finite, st.integers(0, 2 ** 32 - 1),
                 st.integers(1, 2 ** 32 - 1), st.integers(0, 2 ** 32 - 1)))
def test_task_round_trip(msg):
    assert wire.decode_payload(wire.encode_payload(msg)) == msg


@given(st.lists(finite, min_size=2, max_size=40))
def test_centered_ranks_properties(xs):
    r = centered_ranks(xs)
    assert abs(r.sum()) < 1e-9
    assert r.min() >= -0.5 and r.max() <= 0.5
    x = np.array(xs)
    for i in range(len(xs)):
        for j in range(len(xs)):
            if x[i] < x[j]:
                assert r[i] < r[j]


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 40))
def test_top_k_is_sorted_prefix(ps, k):
    idx = top_k(ps, k)
    assert len(idx) == min(k, len(ps))
    p = np.array(ps)
    assert all(p[a] >= p[b] for a, b in zip(idx, idx[1:]))
    if len(idx) < len(ps):
        rest = np.setdiff1d(np.arange(len(ps)), idx)
        assert p[idx].min() >= p[rest].max()


@given(st.integers(0, CASE14.n_sub - 1), st.data())
def test_bus_vectors_canonicalize(sub, data):
    n = len(CASE14.sub_slots[sub])
    buses = data.draw(st.lists(st.sampled_from([1, 2]), min_size=n, max_size=n))
    if len(set(buses)) == 1:
        return
    i = CAT14.index_of(Action.set_bus(sub, tuple(buses)))
    j = CAT14.index_of(Action.set_bus(sub, tuple(3 - b for b in buses)))
    assert i == j


@given(st.lists(finite, min_size=4, max_size=4))
def test_mirrored_equal_returns_cancel(rs):
    cfg = TrainConfig(population=8, rank_shaping=False)
    res = [RolloutResult(2 * i + h, 100 + i, sg, r, 1, 0.0, 0)
           for i, r in enumerate(rs) for h, sg in enumerate((1, -1))]
    assert not estimate_gradient(res, cfg, 16).any()


def test_grid_format_round_trip():
    for name in ("case5", "case14"):
        spec = load_preset(name)
        assert format_grid(parse_grid(format_grid(spec))) == format_grid(spec)
