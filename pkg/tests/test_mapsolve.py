from collections import deque

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _util import random_chain, random_tree
from perturbmap import _fallback, kernels
from perturbmap.mapsolve import (
    FlowNetwork, SolverPreconditionError, auto_method, graphcut_map, graphcut_network,
    max_flow, mplp_map, solve_map,
)
from perturbmap.model import SpinGlassConfig, build_model, gen_spin_glass, score
from perturbmap.oracle import exact_map


def edmonds_karp(n, arcs, s, t):
    """Dense BFS augmenting-path reference for small networks."""
    cap = np.zeros((n, n))
    for u, v, c in arcs:
        cap[u, v] += c
    flow = 0.0
    while True:
        parent = [-1] * n
        parent[s] = s
        q = deque([s])
        while q and parent[t] < 0:
            u = q.popleft()
            for v in range(n):
                if parent[v] < 0 and cap[u, v] > 1e-12:
                    parent[v] = u
                    q.append(v)
        if parent[t] < 0:
            return flow
        f, v = np.inf, t
        while v != s:
            f = min(f, cap[parent[v], v])
            v = parent[v]
        v = t
        while v != s:
            cap[parent[v], v] -= f
            cap[v, parent[v]] += f
            v = parent[v]
        flow += f


def random_network(n, density, seed):
    rng = np.random.default_rng(seed)
    arcs = [(u, v, float(rng.uniform(0, 5))) for u in range(n) for v in range(n)
            if u != v and rng.random() < density]
    tails, heads, caps = (np.array(x) for x in zip(*arcs)) if arcs else ([], [], [])
    return arcs, FlowNetwork(n, tails, heads, caps, 0, n - 1)


def test_diamond():
    net = FlowNetwork(4, [0, 0, 1, 2], [1, 2, 3, 3], [1, 1, 1, 1], 0, 3)
    assert max_flow(net)[0] == 2.0


def test_single_arc():
    value, side = max_flow(FlowNetwork(2, [0], [1], [3.5], 0, 1))
    assert value == 3.5 and side.tolist() == [True, False]


@pytest.mark.parametrize("kw", [
    dict(source=0, sink=0), dict(caps=[-1.0]), dict(caps=[np.inf]), dict(heads=[5]),
])
def test_network_validation(kw):
    args = dict(num_nodes=2, tails=[0], heads=[1], caps=[1.0], source=0, sink=1) | kw
    with pytest.raises(ValueError):
        FlowNetwork(**args)


@pytest.mark.parametrize("seed", range(5))
def test_certificate_on_random_network(seed):
    _, net = random_network(50, 0.1, seed)
    value, side = max_flow(net)
    assert side[net.source] and not side[net.sink]
    assert value == pytest.approx(net.cut_capacity(side), abs=1e-9)
    g = nx.DiGraph()
    for u, v, c in zip(net.tails, net.heads, net.caps):
        g.add_edge(int(u), int(v), capacity=float(c) + (g[u][v]["capacity"] if g.has_edge(u, v) else 0.0))
    assert value == pytest.approx(nx.maximum_flow_value(g, 0, 49), abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_agrees_with_augmenting_path_reference(seed):
    arcs, net = random_network(12, 0.3, seed)
    assert max_flow(net)[0] == pytest.approx(edmonds_karp(12, arcs, 0, 11), abs=1e-9)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="extension not built")
@pytest.mark.parametrize("seed", range(10))
def test_backends_agree(seed):
    from perturbmap import _kernels
    _, net = random_network(30, 0.15, seed)
    args = (net.num_nodes, net.tails, net.heads, net.caps, 0, 29, 1e-12)
    a, b = _fallback.maxflow(*args), _kernels.maxflow(*args)
    assert a[0] == pytest.approx(b[0], abs=1e-9) and np.array_equal(a[1], b[1])
    m = gen_spin_glass(SpinGlassConfig(3, 4, 1.0, 2.0, "mixed", seed))
    un, ends, tabs = m.arrays
    cards = np.array(m.cards, dtype=np.intp)
    ra, rb = _fallback.mplp(un, ends, tabs, cards, 50, 1e-8), _kernels.mplp(un, ends, tabs, cards, 50, 1e-8)
    assert np.array_equal(ra[0], rb[0]) and ra[3] == rb[3]
    assert np.allclose(ra[2], rb[2], rtol=0, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7),
                                             st.floats(0, 10, allow_nan=False)), max_size=30))
def test_flow_equals_cut_property(n, raw):
    arcs = [(u % n, v % n, c) for u, v, c in raw if u % n != v % n]
    tails = [a[0] for a in arcs]
    heads = [a[1] for a in arcs]
    caps = [a[2] for a in arcs]
    net = FlowNetwork(n, tails, heads, caps, 0, n - 1)
    value, side = max_flow(net)
    assert value == pytest.approx(net.cut_capacity(side), abs=1e-9)
    assert value == pytest.approx(edmonds_karp(n, arcs, 0, n - 1), abs=1e-9)


# -- MAP solvers --------------------------------------------------------------


def test_brute_matches_oracle():
    m = gen_spin_glass(SpinGlassConfig(3, 3, 1.0, 1.0, "mixed", seed=1))
    res = solve_map(m, "brute")
    assert (res.assignment, res.value) == exact_map(m)


def test_graphcut_rejects_mixed():
    m = gen_spin_glass(SpinGlassConfig(3, 3, 1.0, 1.0, "mixed", seed=1))
    with pytest.raises(SolverPreconditionError):
        solve_map(m, "graphcut")


def test_graphcut_rejects_non_binary():
    with pytest.raises(SolverPreconditionError):
        graphcut_map(build_model([3], [[0, 1, 2]]))


def test_unknown_method():
    with pytest.raises(ValueError):
        solve_map(build_model([2], [[0, 1]]), "anneal")


@pytest.mark.parametrize("seed", range(25))
def test_graphcut_exact_on_attractive(seed):
    m = gen_spin_glass(SpinGlassConfig(4, 4, 1.0, 2.0, "attractive", seed))
    res = graphcut_map(m)
    assert res.value == pytest.approx(exact_map(m)[1], abs=1e-9)
    assert res.value == score(m, res.assignment)


def test_graphcut_zero_coupling():
    rng = np.random.default_rng(0)
    unary = [rng.normal(size=2) for _ in range(5)]
    res = graphcut_map(build_model([2] * 5, unary))
    assert res.assignment == tuple(int(np.argmax(u)) for u in unary)


def test_graphcut_zero_field_constant_labelling():
    m = gen_spin_glass(SpinGlassConfig(3, 3, 0.0, 1.0, "attractive", seed=3))
    res = graphcut_map(m)
    assert len(set(res.assignment)) == 1
    assert res.value == pytest.approx(sum(t[0, 0] for _, _, t in m.edges), abs=1e-12)


def test_graphcut_shift_invariance():
    m = gen_spin_glass(SpinGlassConfig(3, 3, 1.0, 1.0, "attractive", seed=6))
    a, b = graphcut_map(m), graphcut_map(m.shifted(2.5, 3))
    assert a.assignment == b.assignment
    assert b.value - a.value == pytest.approx(2.5, abs=1e-12)


def test_graphcut_network_cut_is_energy():
    m = gen_spin_glass(SpinGlassConfig(2, 3, 1.0, 1.0, "attractive", seed=1))
    net = graphcut_network(*m.arrays)
    from perturbmap.oracle import state_labels
    # cut capacity of every labelling differs from -score by one constant
    offs = []
    for y in state_labels(m):
        side = np.concatenate([y == 0, [True, False]])
        offs.append(net.cut_capacity(side) + score(m, y))
    assert np.ptp(offs) <= 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_mplp_exact_on_trees(seed):
    m = random_tree(5, seed)
    res = mplp_map(m)
    opt = exact_map(m)[1]
    assert abs(res.value - opt) <= 1e-6 and abs(res.dual_bound - opt) <= 1e-6


def test_mplp_chain_multilabel():
    m = random_chain(5, 3, card=3)
    res = mplp_map(m)
    assert abs(res.value - exact_map(m)[1]) <= 1e-6


def test_mplp_zero_coupling_one_sweep():
    rng = np.random.default_rng(2)
    unary = [rng.normal(size=3) for _ in range(4)]
    res = mplp_map(build_model([3] * 4, unary))
    assert res.iterations == 1
    assert res.assignment == tuple(int(np.argmax(u)) for u in unary)


@pytest.mark.parametrize("seed", range(10))
def test_mplp_sandwich_and_monotone(seed):
    m = gen_spin_glass(SpinGlassConfig(4, 4, 1.0, 1.0, "mixed", seed))
    res = mplp_map(m)
    opt = exact_map(m)[1]
    assert res.value <= opt + 1e-9 <= res.dual_bound + 2e-9
    assert res.value == score(m, res.assignment)
    assert all(b <= a + 1e-9 for a, b in zip(res.duals, res.duals[1:]))


def test_mplp_with_forbidden_entries():
    m = build_model([2, 3], [[0, 1], [0.5, 0, 2]], {(0, 1): [[0, 0, -np.inf], [0, 1, -np.inf]]})
    res = mplp_map(m)
    assert res.value == exact_map(m)[1]


def test_mplp_requires_iterations():
    with pytest.raises(ValueError):
        mplp_map(build_model([2], [[0, 1]]), max_iters=0)


def test_auto_method():
    att = gen_spin_glass(SpinGlassConfig(3, 3, 1.0, 1.0, "attractive", 0))
    mix = gen_spin_glass(SpinGlassConfig(3, 3, 1.0, 1.0, "mixed", 0))
    big = gen_spin_glass(SpinGlassConfig(4, 4, 1.0, 1.0, "mixed", 0))
    assert auto_method(att) == "graphcut"
    assert auto_method(mix) == "brute"
    assert auto_method(big) == "mplp"
