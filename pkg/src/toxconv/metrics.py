"""Structural measures over reply trees, reply graphs, and follow graphs.

Graphs are :class:`toxconv.model.DiGraph` instances; undirected measures use
the graph's undirected view (an edge in either direction links the pair) and
ignore edge weights.
"""
from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .model import DiGraph, ReplyTree, _lt


class SizeTooSmall(ValueError):
    pass


class UndefinedMixing(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


def _sorted(nodes):
    try:
        return sorted(nodes)
    except TypeError:
        return sorted(nodes, key=repr)


# ---------------------------------------------------------------- trees


@dataclass(frozen=True)
class TreeShape:
    size: int
    depth: int
    width: int
    nodes_at_depth: tuple
    wiener: float


def _wiener_pair_sum(tree: ReplyTree) -> int:
    """Sum of distances over unordered node pairs, via subtree sizes."""
    n = tree.size
    order = []
    stack = [tree.root.id]
    while stack:
        pid = stack.pop()
        order.append(pid)
        stack.extend(tree.children[pid])
    sub = {}
    total = 0
    for pid in reversed(order):
        s = 1 + sum(sub[c] for c in tree.children[pid])
        sub[pid] = s
        if pid != tree.root.id:
            # the edge above pid separates s nodes from n - s
            total += s * (n - s)
    return total


def wiener_index(tree: ReplyTree) -> float:
    n = tree.size
    if n < 2:
        raise SizeTooSmall("Wiener index needs at least two nodes")
    return 2 * _wiener_pair_sum(tree) / (n * (n - 1))


def tree_shape(tree: ReplyTree) -> TreeShape:
    depths = tree.depths()
    counts = [0] * (max(depths.values()) + 1)
    for d in depths.values():
        counts[d] += 1
    n = tree.size
    w = 2 * _wiener_pair_sum(tree) / (n * (n - 1)) if n >= 2 else 0.0
    return TreeShape(size=n, depth=len(counts) - 1, width=max(counts),
                     nodes_at_depth=tuple(counts), wiener=w)


# ---------------------------------------------------------------- basics


def density(g: DiGraph, directed: bool = True) -> float:
    n = len(g)
    if n < 2:
        raise SizeTooSmall("density needs at least two nodes")
    if directed:
        return len(g.edges) / (n * (n - 1))
    return 2 * len(g.undirected_edges()) / (n * (n - 1))


def _components(adj) -> list:
    seen, comps = set(), []
    for s in _sorted(adj):
        if s in seen:
            continue
        comp = {s}
        seen.add(s)
        q = deque([s])
        while q:
            x = q.popleft()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    comp.add(y)
                    q.append(y)
        comps.append(comp)
    comps.sort(key=lambda c: -len(c))
    return comps


def weakly_connected_components(g: DiGraph) -> list:
    """Node sets of the weak components, largest first."""
    return _components(g.undirected())


def largest_component(g: DiGraph) -> DiGraph:
    comps = weakly_connected_components(g)
    return g.subgraph(comps[0]) if comps else g


def fraction_connected_pairs(g: DiGraph) -> float:
    n = len(g)
    if n < 2:
        raise SizeTooSmall("need at least two nodes")
    linked = sum(len(c) * (len(c) - 1) // 2 for c in weakly_connected_components(g))
    return linked / (n * (n - 1) / 2)


def clustering(g: DiGraph) -> tuple:
    """(mean local clustering, global transitivity) of the undirected view."""
    adj = g.undirected()
    if not adj:
        return 0.0, 0.0
    local, tri, trip = [], 0, 0
    for v, nb in adj.items():
        d = len(nb)
        links = sum(1 for a, b in combinations(nb, 2) if b in adj[a])
        local.append(2 * links / (d * (d - 1)) if d > 1 else 0.0)
        tri += links
        trip += d * (d - 1) // 2
    return float(np.mean(local)), (tri / trip if trip else 0.0)


# ---------------------------------------------------------------- community


@dataclass(frozen=True)
class Partition:
    assignment: dict
    modularity: float
    history: tuple = field(default=())

    @property
    def communities(self) -> list:
        groups = {}
        for node in _sorted(self.assignment):
            groups.setdefault(self.assignment[node], set()).add(node)
        return [groups[c] for c in sorted(groups)]


def modularity(g: DiGraph, assignment) -> float:
    """Newman-Girvan Q of a node -> community map on the undirected view."""
    edges = g.undirected_edges()
    m = len(edges)
    if m == 0:
        return 0.0
    adj = g.undirected()
    inside, tot = {}, {}
    for u, v in edges:
        if assignment[u] == assignment[v]:
            inside[assignment[u]] = inside.get(assignment[u], 0) + 1
    for node, nb in adj.items():
        c = assignment[node]
        tot[c] = tot.get(c, 0) + len(nb)
    return float(sum(inside.get(c, 0) / m - (t / (2 * m)) ** 2 for c, t in tot.items()))


def _one_level(nodes, w, loops, rng_order):
    """Local moving phase on a weighted graph.

    ``w`` maps node -> {neighbour: weight} (no self entries); ``loops`` holds
    self-loop weights.  Returns node -> community.
    """
    k = {i: sum(w[i].values()) + 2 * loops[i] for i in nodes}
    m2 = sum(k.values())
    comm = {i: i for i in nodes}
    tot = dict(k)
    improved = True
    while improved:
        improved = False
        for i in rng_order:
            ci = comm[i]
            links = {}
            for j, wij in w[i].items():
                links[comm[j]] = links.get(comm[j], 0.0) + wij
            tot[ci] -= k[i]
            best, best_gain = ci, links.get(ci, 0.0) - tot[ci] * k[i] / m2
            for c in _sorted(links):
                gain = links[c] - tot[c] * k[i] / m2
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            tot[best] += k[i]
            if best != ci:
                comm[i] = best
                improved = True
    return comm


def louvain(g: DiGraph, seed: int = 0) -> Partition:
    """Two-phase Louvain on the undirected, unweighted view of ``g``.

    Nodes are visited in sorted order shuffled by ``seed`` so results are
    reproducible.
    """
    base = _sorted(g.nodes)
    if not g.undirected_edges():
        return Partition({v: i for i, v in enumerate(base)}, 0.0, (0.0,))
    rng = random.Random(seed)
    index = {v: i for i, v in enumerate(base)}
    w = {i: {} for i in range(len(base))}
    for u, v in g.undirected_edges():
        a, b = index[u], index[v]
        w[a][b] = w[a].get(b, 0.0) + 1.0
        w[b][a] = w[b].get(a, 0.0) + 1.0
    loops = {i: 0.0 for i in w}
    member = {i: i for i in range(len(base))}  # original index -> current super-node
    history = [modularity(g, {v: v for v in base})]
    while True:
        nodes = sorted(w)
        order = list(nodes)
        rng.shuffle(order)
        comm = _one_level(nodes, w, loops, order)
        relabel = {}
        for i in nodes:
            relabel.setdefault(comm[i], len(relabel))
        if len(relabel) == len(nodes):
            break
        member = {o: relabel[comm[s]] for o, s in member.items()}
        nw = {c: {} for c in relabel.values()}
        nl = {c: 0.0 for c in relabel.values()}
        for i in nodes:
            ci = relabel[comm[i]]
            nl[ci] += loops[i]
            for j, wij in w[i].items():
                cj = relabel[comm[j]]
                if ci == cj:
                    nl[ci] += wij / 2  # each internal edge is seen from both ends
                else:
                    nw[ci][cj] = nw[ci].get(cj, 0.0) + wij
        w, loops = nw, nl
        q = modularity(g, {base[o]: c for o, c in member.items()})
        history.append(q)
    final = {}
    assignment = {}
    for o in range(len(base)):
        c = member[o]
        final.setdefault(c, len(final))
        assignment[base[o]] = final[c]
    return Partition(assignment, modularity(g, assignment), tuple(history))


# ---------------------------------------------------------------- mixing


def _edge_pairs(g: DiGraph, directed: bool):
    if directed:
        return list(g.edges)
    out = []
    for u, v in g.undirected_edges():
        out.append((u, v))
        out.append((v, u))
    return out


def assortativity_categorical(g: DiGraph, labels, directed: bool = True) -> float:
    """Newman's categorical assortativity over the edge mixing matrix.

    Edges touching an unlabelled node are ignored.
    """
    pairs = [(labels[u], labels[v]) for u, v in _edge_pairs(g, directed)
             if labels.get(u) is not None and labels.get(v) is not None]
    if not pairs:
        raise UndefinedMixing("no labelled edges")
    cats = _sorted({c for p in pairs for c in p})
    if len(cats) < 2:
        raise UndefinedMixing("a single category among edge endpoints")
    idx = {c: i for i, c in enumerate(cats)}
    e = np.zeros((len(cats), len(cats)))
    for a, b in pairs:
        e[idx[a], idx[b]] += 1
    e /= e.sum()
    ab = float(e.sum(axis=1) @ e.sum(axis=0))
    if ab >= 1.0:
        raise UndefinedMixing("degenerate mixing matrix")
    return float((np.trace(e) - ab) / (1 - ab))


def assortativity_numeric(g: DiGraph, values, directed: bool = True) -> float:
    """Pearson correlation of node values across edge ends."""
    pairs = [(values[u], values[v]) for u, v in _edge_pairs(g, directed)
             if values.get(u) is not None and values.get(v) is not None
             and not (isinstance(values[u], float) and math.isnan(values[u]))
             and not (isinstance(values[v], float) and math.isnan(values[v]))]
    if len(pairs) < 2:
        raise ZeroVariance("fewer than two usable edges")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    sx, sy = x.std(), y.std()
    if sx <= 1e-15 * max(1.0, abs(x).max()) or sy <= 1e-15 * max(1.0, abs(y).max()):
        raise ZeroVariance("constant values at an edge end")
    r = float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))
    return max(-1.0, min(1.0, r))


def degree_assortativity(g: DiGraph) -> float:
    adj = g.undirected()
    return assortativity_numeric(g, {v: len(nb) for v, nb in adj.items()}, directed=False)


def in_out_degree_assortativity(g: DiGraph) -> float:
    """Correlation between source out-degree and target in-degree."""
    succ, pred = g.successors(), g.predecessors()
    pairs = [(len(succ[u]), len(pred[v])) for u, v in g.edges]
    if len(pairs) < 2:
        raise ZeroVariance("fewer than two edges")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if x.std() == 0 or y.std() == 0:
        raise ZeroVariance("constant degrees at an edge end")
    return float(np.corrcoef(x, y)[0, 1])


# ---------------------------------------------------------------- centrality


def _adjacency(g: DiGraph, directed: bool):
    return g.successors() if directed else g.undirected()


def _bfs(adj, s):
    dist = {s: 0}
    q = deque([s])
    while q:
        x = q.popleft()
        for y in adj[x]:
            if y not in dist:
                dist[y] = dist[x] + 1
                q.append(y)
    return dist


def betweenness(g: DiGraph, directed: bool = True) -> dict:
    """Unnormalised shortest-path betweenness (Brandes)."""
    adj = _adjacency(g, directed)
    cb = {v: 0.0 for v in adj}
    for s in _sorted(adj):
        stack, preds = [], {v: [] for v in adj}
        sigma = dict.fromkeys(adj, 0)
        sigma[s] = 1
        dist = {s: 0}
        q = deque([s])
        while q:
            v = q.popleft()
            stack.append(v)
            for w in adj[v]:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    q.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = dict.fromkeys(adj, 0.0)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1 + delta[w])
            if w != s:
                cb[w] += delta[w]
    if not directed:
        cb = {v: c / 2 for v, c in cb.items()}
    return cb


def harmonic_closeness(g: DiGraph, directed: bool = True) -> dict:
    """Mean inverse distance from the other nodes (incoming when directed)."""
    adj = g.predecessors() if directed else g.undirected()
    n = len(adj)
    if n < 2:
        return {v: 0.0 for v in adj}
    out = {}
    for v in adj:
        dist = _bfs(adj, v)
        out[v] = sum(1 / d for d in dist.values() if d > 0) / (n - 1)
    return out


def eigenvector_centrality(g: DiGraph, tol: float = 1e-10, max_iter: int = 10000) -> dict:
    """Power iteration on A + I over the largest weak component; 0 elsewhere."""
    out = {v: 0.0 for v in g.order}
    if not g.edges:
        return out
    comp = _sorted(weakly_connected_components(g)[0])
    idx = {v: i for i, v in enumerate(comp)}
    a = np.zeros((len(comp), len(comp)))
    for u, v in g.undirected_edges():
        if u in idx and v in idx:
            a[idx[u], idx[v]] = a[idx[v], idx[u]] = 1.0
    a += np.eye(len(comp))
    x = np.ones(len(comp)) / math.sqrt(len(comp))
    for _ in range(max_iter):
        nx_ = a @ x
        nx_ /= np.linalg.norm(nx_)
        if np.abs(nx_ - x).sum() < tol * len(comp):
            x = nx_
            break
        x = nx_
    for v, i in idx.items():
        out[v] = float(x[i])
    return out


def pagerank(g: DiGraph, directed: bool = True, damping: float = 0.85,
             tol: float = 1e-10, max_iter: int = 10000) -> dict:
    nodes = _sorted(g.nodes)
    n = len(nodes)
    if n == 0:
        return {}
    idx = {v: i for i, v in enumerate(nodes)}
    adj = _adjacency(g, directed)
    out_deg = np.array([len(adj[v]) for v in nodes], dtype=float)
    src, dst = [], []
    for v in nodes:
        for w in adj[v]:
            src.append(idx[v])
            dst.append(idx[w])
    src, dst = np.array(src, dtype=int), np.array(dst, dtype=int)
    dangling = out_deg == 0
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = np.zeros(n)
        if src.size:
            np.add.at(nxt, dst, x[src] / out_deg[src])
        nxt = damping * (nxt + x[dangling].sum() / n) + (1 - damping) / n
        err = np.abs(nxt - x).sum()
        x = nxt
        if err < tol:
            break
    x /= x.sum()
    return {v: float(x[idx[v]]) for v in nodes}


def degree_centrality(g: DiGraph, directed: bool = True) -> dict:
    if directed:
        succ, pred = g.successors(), g.predecessors()
        return {v: float(len(succ[v]) + len(pred[v])) for v in g.order}
    return {v: float(len(nb)) for v, nb in g.undirected().items()}


CENTRALITIES = ("degree", "betweenness", "closeness", "eigenvector", "pagerank")


def centrality(g: DiGraph, kind: str, directed: bool = True) -> dict:
    if not g.nodes:
        raise ValueError("empty graph")
    if kind == "degree":
        return degree_centrality(g, directed)
    if kind == "betweenness":
        return betweenness(g, directed)
    if kind == "closeness":
        return harmonic_closeness(g, directed)
    if kind == "eigenvector":
        return eigenvector_centrality(g)
    if kind == "pagerank":
        return pagerank(g, directed)
    raise ValueError(f"unknown centrality {kind!r}")


def _star(n: int, directed: bool) -> DiGraph:
    edges = [(0, i) for i in range(1, n)]
    if directed:
        edges += [(i, 0) for i in range(1, n)]
    return DiGraph.from_edges(edges, nodes=range(n))


def centralization(g: DiGraph, kind: str, directed: bool = True) -> float:
    """Freeman centralization in [0, 1].

    Degree, betweenness and closeness are normalised by the value a star of
    the same size attains (a mutual star when ``directed``); eigenvector and
    pagerank by ``(n - 1) * max``.
    """
    n = len(g)
    if n < 3:
        raise SizeTooSmall("centralization needs at least three nodes")
    c = centrality(g, kind, directed)
    top = max(c.values())
    raw = sum(top - x for x in c.values())
    if kind in ("eigenvector", "pagerank"):
        denom = (n - 1) * top
    else:
        s = centrality(_star(n, directed), kind, directed)
        denom = sum(max(s.values()) - x for x in s.values())
    if denom <= 0:
        return 0.0
    return float(min(1.0, max(0.0, raw / denom)))


# ---------------------------------------------------------------- cores


@dataclass(frozen=True)
class UGraph:
    """Simple undirected graph; edges are stored as sorted node pairs."""

    nodes: frozenset
    edges: frozenset

    def density(self) -> float:
        n = len(self.nodes)
        return 2 * len(self.edges) / (n * (n - 1)) if n >= 2 else 0.0

    def n_components(self) -> int:
        adj = {v: set() for v in self.nodes}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return len(_components(adj))


def k_core(g: DiGraph, k: int) -> UGraph:
    adj = {v: set(nb) for v, nb in g.undirected().items()}
    q = deque(v for v in adj if len(adj[v]) < k)
    removed = set()
    while q:
        v = q.popleft()
        if v in removed:
            continue
        removed.add(v)
        for w in adj[v]:
            adj[w].discard(v)
            if w not in removed and len(adj[w]) < k:
                q.append(w)
        adj[v] = set()
    keep = frozenset(v for v in adj if v not in removed)
    edges = frozenset((u, v) for u, v in g.undirected_edges() if u in keep and v in keep)
    return UGraph(keep, edges)


def k_truss(g: DiGraph, k: int) -> UGraph:
    """Maximal edge set in which every edge closes at least k - 2 triangles."""
    adj = {v: set(nb) for v, nb in g.undirected().items()}
    edges = set(g.undirected_edges())
    need = k - 2
    changed = True
    while changed:
        changed = False
        for u, v in _sorted(edges):
            if len(adj[u] & adj[v]) < need:
                edges.discard((u, v))
                adj[u].discard(v)
                adj[v].discard(u)
                changed = True
    nodes = frozenset(x for e in edges for x in e)
    return UGraph(nodes, frozenset(edges))


# ---------------------------------------------------------------- census

TRIAD_TYPES = ("003", "012", "102", "021D", "021U", "021C", "111D", "111U",
               "030T", "030C", "201", "120D", "120U", "120C", "210", "300")
DYAD_TYPES = ("mutual", "asymmetric", "null")


@dataclass(frozen=True)
class CensusCounts:
    dyads: dict
    triads: dict


def classify_triad(arcs) -> str:
    """Holland-Leinhardt type of a triad given its arcs among nodes {0, 1, 2}."""
    arcs = set(arcs)
    m = a = 0
    for x, y in ((0, 1), (0, 2), (1, 2)):
        f, b = (x, y) in arcs, (y, x) in arcs
        if f and b:
            m += 1
        elif f or b:
            a += 1
    n = 3 - m - a
    outd = [sum(1 for x, _ in arcs if x == i) for i in range(3)]
    ind = [sum(1 for _, y in arcs if y == i) for i in range(3)]
    key = f"{m}{a}{n}"
    if key in ("003", "012", "102", "201", "210", "300"):
        return key
    if key == "021":
        if 2 in outd:
            return "021D"
        if 2 in ind:
            return "021U"
        return "021C"
    if key == "030":
        return "030T" if 2 in outd else "030C"
    if key == "111":
        (x, y), = [(x, y) for x, y in arcs if (y, x) not in arcs]
        # D when the one-way arc points into the mutual pair
        mutual = {i for i in range(3) if sum(1 for p, q in arcs if (q, p) in arcs and i in (p, q))}
        return "111D" if y in mutual else "111U"
    if key == "120":
        outside = next(i for i in range(3)
                       if not any((i, j) in arcs and (j, i) in arcs for j in range(3) if j != i))
        if outd[outside] == 2:
            return "120D"
        if ind[outside] == 2:
            return "120U"
        return "120C"
    raise AssertionError(key)


def dyad_triad_census(g: DiGraph) -> CensusCounts:
    nodes = _sorted(g.nodes)
    n = len(nodes)
    e = set(g.edges)
    und = g.undirected_edges()
    mutual = sum(1 for u, v in und if (u, v) in e and (v, u) in e)
    dyads = {"mutual": mutual, "asymmetric": len(und) - mutual,
             "null": n * (n - 1) // 2 - len(und)}

    triads = dict.fromkeys(TRIAD_TYPES, 0)
    adj = g.undirected()
    rank = {v: i for i, v in enumerate(nodes)}
    for v in nodes:
        for u in adj[v]:
            if rank[u] <= rank[v]:
                continue
            nbrs = _sorted((adj[v].keys() | adj[u].keys()) - {u, v})
            # triads whose only link is the v-u dyad
            kind = "102" if ((u, v) in e and (v, u) in e) else "012"
            triads[kind] += n - len(nbrs) - 2
            for w in nbrs:
                if rank[u] < rank[w] or (rank[v] < rank[w] < rank[u] and v not in adj[w]):
                    local = {v: 0, u: 1, w: 2}
                    arcs = [(local[a], local[b]) for a, b in
                            ((v, u), (u, v), (v, w), (w, v), (u, w), (w, u)) if (a, b) in e]
                    triads[classify_triad(arcs)] += 1
    total = n * (n - 1) * (n - 2) // 6
    triads["003"] = total - sum(c for t, c in triads.items() if t != "003")
    return CensusCounts(dyads, triads)


# ---------------------------------------------------------------- embeddedness / spectrum


class Embeddedness(NamedTuple):
    count: int
    fraction: float
    missing: bool = False


def embeddedness(u, v, friends) -> Embeddedness:
    fu, fv = friends.get(u), friends.get(v)
    if fu is None or fv is None:
        return Embeddedness(0, 0.0, True)
    inter = len(fu & fv)
    union = len(fu | fv)
    return Embeddedness(inter, inter / union if union else 0.0, False)


def algebraic_connectivity(g: DiGraph, tol: float = 1e-8, max_iter: int = 100000) -> float:
    """Second-smallest Laplacian eigenvalue of the largest weak component.

    Shifted power iteration on ``c*I - L`` restricted to the complement of the
    constant vector.
    """
    comps = weakly_connected_components(g)
    if not comps or len(comps[0]) < 2:
        raise SizeTooSmall("largest component has fewer than two nodes")
    comp = _sorted(comps[0])
    n = len(comp)
    idx = {v: i for i, v in enumerate(comp)}
    lap = np.zeros((n, n))
    for u, v in g.undirected_edges():
        if u in idx and v in idx:
            i, j = idx[u], idx[v]
            lap[i, j] = lap[j, i] = -1.0
    lap[np.diag_indices(n)] = -lap.sum(axis=1)
    shift = 2.0 * lap.diagonal().max() + 1.0
    m = shift * np.eye(n) - lap
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    x -= x.mean()
    x /= np.linalg.norm(x)
    lam = float(x @ lap @ x)
    for _ in range(max_iter):
        y = m @ x
        y -= y.mean()
        y /= np.linalg.norm(y)
        new = float(y @ lap @ y)
        if abs(new - lam) < tol * 1e-3 and np.linalg.norm(lap @ y - new * y) < tol:
            return max(0.0, new)
        x, lam = y, new
    return max(0.0, lam)
