import itertools
import math
from collections import deque
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from networkx.algorithms.triads import triad_type

from toxconv import metrics as M
from toxconv.model import DiGraph

from conftest import P, random_tree, tree_of


def dg(edges, nodes=()):
    return DiGraph.from_edges(edges, nodes)


def to_nx(g, directed=True):
    G = nx.DiGraph() if directed else nx.Graph()
    G.add_nodes_from(g.nodes)
    G.add_edges_from(g.edges)
    return G


def random_digraph(rng, n, p):
    edges = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < p]
    return dg(edges, range(n))


def wiener_bfs(tree):
    adj = {pid: set(tree.children[pid]) for pid in tree.posts}
    for pid, p in tree.posts.items():
        if p.parent is not None and pid != tree.root.id:
            adj[pid].add(p.parent)
    total = 0
    for s in adj:
        dist = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        total += sum(dist.values())
    n = len(adj)
    return Fraction(total, n * (n - 1))


# ---------------------------------------------------------------- trees


def test_tree_shape_examples():
    s = M.tree_shape(tree_of(P("r", "A"), P("a", "B", "r", 1)))
    assert (s.size, s.depth, s.width) == (2, 1, 1)
    s = M.tree_shape(tree_of(P("r", "A"), *[P(f"x{i}", "B", "r", i) for i in range(1, 4)]))
    assert (s.depth, s.width) == (1, 3)
    s = M.tree_shape(tree_of(P("r", "A"), P("a", "B", "r", 1), P("b", "B", "a", 2), P("c", "B", "b", 3)))
    assert (s.depth, s.width) == (3, 1)


def test_wiener_examples():
    assert M.wiener_index(tree_of(P("r", "A"), P("a", "B", "r", 1))) == 1.0
    star = tree_of(P("r", "A"), *[P(f"x{i}", "B", "r", i) for i in range(1, 4)])
    assert M.wiener_index(star) == 1.5
    path = tree_of(P("r", "A"), P("a", "B", "r", 1), P("b", "B", "a", 2), P("c", "B", "b", 3))
    assert M.wiener_index(path) == pytest.approx(5 / 3)
    with pytest.raises(M.SizeTooSmall):
        M.wiener_index(tree_of(P("r", "A")))


def test_wiener_matches_bfs_exactly():
    rng = np.random.default_rng(0)
    for _ in range(60):
        t = random_tree(rng, int(rng.integers(2, 120)))
        n = t.size
        assert Fraction(2 * M._wiener_pair_sum(t), n * (n - 1)) == wiener_bfs(t)


# ---------------------------------------------------------------- basics


def test_density_examples():
    assert M.density(dg([(a, b) for a in range(3) for b in range(3) if a != b])) == 1.0
    assert M.density(dg([], range(5))) == 0.0
    assert M.density(dg([(0, 1), (1, 2)])) == pytest.approx(1 / 3)


def test_components():
    assert len(M.weakly_connected_components(dg([], "ABCD"))) == 4
    comps = M.weakly_connected_components(dg([("A", "B")], "ABC"))
    assert comps == [{"A", "B"}, {"C"}]
    assert len(M.weakly_connected_components(dg([(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]))) == 2


def test_clustering_and_connected_pairs_vs_networkx():
    rng = np.random.default_rng(3)
    for _ in range(30):
        g = random_digraph(rng, int(rng.integers(3, 12)), 0.25)
        U = to_nx(g).to_undirected()
        local, glob = M.clustering(g)
        assert local == pytest.approx(nx.average_clustering(U))
        assert glob == pytest.approx(nx.transitivity(U))
        n = len(g)
        conn = sum(len(c) * (len(c) - 1) for c in nx.connected_components(U)) / (n * (n - 1))
        assert M.fraction_connected_pairs(g) == pytest.approx(conn)


# ---------------------------------------------------------------- louvain


def test_louvain_examples():
    two = dg([(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)])
    p = M.louvain(two, seed=0)
    assert p.modularity == pytest.approx(0.5, abs=1e-12) and len(p.communities) == 2
    k4 = dg([(a, b) for a in range(4) for b in range(a + 1, 4)])
    p = M.louvain(k4, seed=0)
    assert len(p.communities) == 1 and p.modularity == pytest.approx(0.0, abs=1e-12)
    assert M.louvain(dg([], range(4))).modularity == 0.0


def test_louvain_q_and_history():
    rng = np.random.default_rng(5)
    for seed in range(25):
        g = random_digraph(rng, int(rng.integers(5, 30)), 0.15)
        if not g.edges:
            continue
        p = M.louvain(g, seed=seed)
        groups = [set(c) for c in p.communities]
        assert p.modularity == pytest.approx(nx.community.modularity(to_nx(g).to_undirected(), groups), abs=1e-12)
        assert p.modularity == pytest.approx(M.modularity(g, p.assignment), abs=1e-12)
        assert all(b >= a - 1e-12 for a, b in zip(p.history, p.history[1:]))
        assert M.louvain(g, seed=seed).assignment == p.assignment


# ---------------------------------------------------------------- mixing


def test_assortativity_examples():
    cliques = dg([(a, b) for a in range(4) for b in range(4) if a != b] +
                 [(a, b) for a in range(4, 8) for b in range(4, 8) if a != b])
    labels = {v: v < 4 for v in range(8)}
    assert M.assortativity_categorical(cliques, labels) == pytest.approx(1.0, abs=1e-12)
    bip = dg([(a, b) for a in range(4) for b in range(4, 8)] + [(b, a) for a in range(4) for b in range(4, 8)])
    assert M.assortativity_categorical(bip, labels) == pytest.approx(-1.0, abs=1e-12)
    assert M.assortativity_numeric(cliques, {v: float(v < 4) for v in range(8)}) == pytest.approx(1.0)
    assert M.assortativity_numeric(bip, {v: float(v < 4) for v in range(8)}) == pytest.approx(-1.0)
    with pytest.raises(M.UndefinedMixing):
        M.assortativity_categorical(dg([], range(3)), {0: 1, 1: 1, 2: 1})


def test_assortativity_vs_networkx():
    rng = np.random.default_rng(7)
    for _ in range(20):
        g = random_digraph(rng, 20, 0.15)
        labels = {v: int(rng.integers(0, 3)) for v in g.nodes}
        G = to_nx(g)
        nx.set_node_attributes(G, labels, "c")
        try:
            ours = M.assortativity_categorical(g, labels)
        except M.UndefinedMixing:
            continue
        assert ours == pytest.approx(nx.attribute_assortativity_coefficient(G, "c"), abs=1e-9)
        vals = {v: float(rng.normal()) for v in g.nodes}
        nx.set_node_attributes(G, vals, "x")
        assert M.assortativity_numeric(g, vals) == pytest.approx(nx.numeric_assortativity_coefficient(G, "x"), abs=1e-9)


def test_degree_assortativity_vs_networkx():
    rng = np.random.default_rng(8)
    for _ in range(20):
        g = random_digraph(rng, 15, 0.2)
        U = to_nx(g).to_undirected()
        assert M.degree_assortativity(g) == pytest.approx(nx.degree_assortativity_coefficient(U), abs=1e-9)
        assert M.in_out_degree_assortativity(g) == pytest.approx(
            nx.degree_assortativity_coefficient(to_nx(g), x="out", y="in"), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 12), st.integers(0, 10_000))
def test_categorical_assortativity_range(n, seed):
    rng = np.random.default_rng(seed)
    g = random_digraph(rng, n, 0.3)
    labels = {v: int(rng.integers(0, 2)) for v in g.nodes}
    try:
        r = M.assortativity_categorical(g, labels)
    except M.UndefinedMixing:
        return
    assert -1 - 1e-12 <= r <= 1 + 1e-12
    crossing = any(labels[u] != labels[v] for u, v in g.edges)
    assert (abs(r - 1) < 1e-12) == (not crossing)


# ---------------------------------------------------------------- centrality


def test_centrality_examples():
    star = dg([(0, i) for i in range(1, 5)])
    assert M.centrality(star, "degree", directed=False)[0] == 4
    p3 = dg([(0, 1), (1, 2)])
    assert M.betweenness(p3, directed=False)[1] == 1.0
    k5 = dg([(a, b) for a in range(5) for b in range(5) if a != b])
    pr = M.pagerank(k5)
    assert all(v == pytest.approx(0.2) for v in pr.values())


def test_centrality_vs_networkx():
    rng = np.random.default_rng(9)
    for _ in range(15):
        g = random_digraph(rng, int(rng.integers(3, 14)), 0.25)
        n = len(g)
        for directed in (True, False):
            G = to_nx(g, directed)
            ours = M.betweenness(g, directed)
            ref = nx.betweenness_centrality(G, normalized=False)
            assert all(ours[v] == pytest.approx(ref[v], abs=1e-9) for v in g.nodes)
            ours = M.harmonic_closeness(g, directed)
            ref = nx.harmonic_centrality(G)
            assert all(ours[v] * (n - 1) == pytest.approx(ref[v], abs=1e-9) for v in g.nodes)
            ours = M.pagerank(g, directed)
            ref = nx.pagerank(G, alpha=0.85, tol=1e-13, max_iter=10000)
            assert all(ours[v] == pytest.approx(ref[v], abs=1e-7) for v in g.nodes)
            assert sum(ours.values()) == pytest.approx(1.0, abs=1e-9)


def test_eigenvector_relabel_invariant():
    rng = np.random.default_rng(10)
    g = random_digraph(rng, 10, 0.3)
    perm = {v: f"n{(v * 7) % 10}" for v in g.nodes}
    h = dg([(perm[u], perm[v]) for u, v in g.edges], perm.values())
    a, b = M.eigenvector_centrality(g), M.eigenvector_centrality(h)
    for v in g.nodes:
        assert a[v] == pytest.approx(b[perm[v]], abs=1e-8)


def test_centralization_examples():
    star = dg([(0, i) for i in range(1, 6)])
    assert M.centralization(star, "degree", directed=False) == pytest.approx(1.0)
    k5 = dg([(a, b) for a in range(5) for b in range(5) if a != b])
    for kind in M.CENTRALITIES:
        assert M.centralization(k5, kind, directed=False) == pytest.approx(0.0, abs=1e-9)
    # P3 degree: sum (2 - d) = 2, star on 3 nodes also 2
    assert M.centralization(dg([(0, 1), (1, 2)]), "degree", directed=False) == pytest.approx(1.0)
    with pytest.raises(M.SizeTooSmall):
        M.centralization(dg([(0, 1)]), "degree")


def test_centralization_formula():
    rng = np.random.default_rng(12)
    for _ in range(10):
        g = random_digraph(rng, 8, 0.3)
        U = to_nx(g).to_undirected()
        deg = dict(U.degree())
        top = max(deg.values())
        n = len(g)
        want = sum(top - d for d in deg.values()) / ((n - 1) * (n - 2))
        assert M.centralization(g, "degree", directed=False) == pytest.approx(want)


# ---------------------------------------------------------------- cores


def test_core_truss_examples():
    tri = dg([(0, 1), (1, 2), (2, 0)])
    assert M.k_core(tri, 2).nodes == {0, 1, 2}
    assert not M.k_core(dg([(0, i) for i in range(1, 5)]), 2).nodes
    k4 = dg([(a, b) for a in range(4) for b in range(a + 1, 4)])
    assert len(M.k_truss(k4, 4).edges) == 6


def test_core_truss_vs_networkx_and_nesting():
    rng = np.random.default_rng(13)
    for _ in range(20):
        g = random_digraph(rng, 14, 0.3)
        U = to_nx(g).to_undirected()
        for k in range(1, 6):
            assert M.k_core(g, k).nodes == set(nx.k_core(U, k).nodes)
            truss = nx.k_truss(U, k)
            assert M.k_truss(g, k).edges == {tuple(sorted(e)) for e in truss.edges}
            assert M.k_core(g, k + 1).nodes <= M.k_core(g, k).nodes
            if k >= 2:
                assert M.k_truss(g, k).nodes <= M.k_core(g, k - 1).nodes


# ---------------------------------------------------------------- census


def brute_census(g):
    nodes = sorted(g.nodes)
    out = {t: 0 for t in M.TRIAD_TYPES}
    for a, b, c in itertools.combinations(nodes, 3):
        H = nx.DiGraph()
        H.add_nodes_from((a, b, c))
        H.add_edges_from((u, v) for u, v in g.edges if u in (a, b, c) and v in (a, b, c))
        out[triad_type(H)] += 1
    return out


def test_census_examples():
    assert M.dyad_triad_census(dg([], range(3))).triads["003"] == 1
    full = dg([(a, b) for a in range(3) for b in range(3) if a != b])
    c = M.dyad_triad_census(full)
    assert c.triads["300"] == 1 and c.dyads["mutual"] == 3


def test_census_vs_brute_force():
    rng = np.random.default_rng(14)
    for _ in range(60):
        n = int(rng.integers(3, 9))
        g = random_digraph(rng, n, float(rng.uniform(0.1, 0.7)))
        c = M.dyad_triad_census(g)
        assert c.triads == brute_census(g)
        assert sum(c.triads.values()) == math.comb(n, 3)
        assert sum(c.dyads.values()) == math.comb(n, 2)


def test_classify_all_64_configurations():
    pairs = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)]
    for mask in range(64):
        arcs = [pairs[i] for i in range(6) if mask >> i & 1]
        H = nx.DiGraph()
        H.add_nodes_from(range(3))
        H.add_edges_from(arcs)
        assert M.classify_triad(arcs) == triad_type(H)


# ---------------------------------------------------------------- embeddedness / spectrum


def test_embeddedness():
    e = M.embeddedness("u", "v", {"u": {"a", "b"}, "v": {"b", "c"}})
    assert (e.count, e.fraction) == (1, pytest.approx(1 / 3))
    assert M.embeddedness("u", "v", {"u": {"a"}, "v": {"a"}}).fraction == 1.0
    assert M.embeddedness("u", "v", {"u": {"a"}, "v": {"b"}})[:2] == (0, 0.0)
    assert M.embeddedness("u", "v", {"u": {"a"}}).missing


def test_algebraic_connectivity():
    assert M.algebraic_connectivity(dg([(0, 1)])) == pytest.approx(2.0, abs=1e-6)
    assert M.algebraic_connectivity(M.largest_component(dg([(0, 1), (2, 3)]))) == pytest.approx(2.0, abs=1e-6)
    assert M.algebraic_connectivity(dg([(0, 1), (1, 2)])) == pytest.approx(1.0, abs=1e-6)
    rng = np.random.default_rng(15)
    for _ in range(10):
        g = M.largest_component(random_digraph(rng, 12, 0.25))
        if len(g) < 2:
            continue
        L = nx.laplacian_matrix(to_nx(g).to_undirected(), nodelist=sorted(g.nodes)).toarray()
        assert M.algebraic_connectivity(g) == pytest.approx(np.linalg.eigvalsh(L)[1], abs=1e-6)
