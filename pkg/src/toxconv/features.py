"""Feature extraction for the prefix task and the paired next-reply task.

Each enabled feature set contributes a fixed, deterministic list of named
values.  Undefined values (variance of one number, assortativity of a graph
with no edges, ...) are NaN.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from . import metrics
from .model import (ConversationPrefix, DiGraph, Post, ReplyTree, follow_graph_project,
                    reply_graph_from_tree)
from .stats import MISSING, entropy, gini, h_index, summarize

NAN = MISSING

PREFIX_SETS = ("content_toxicity", "reply_tree", "follow_graph", "reply_graph", "subgraphs",
               "embeddedness", "political", "arrival", "rate")
NEXT_REPLY_SETS = ("conversation_state", "user_parent", "user_root", "follow_graph", "reply_graph",
                   "reply_tree", "overall_embeddedness", "toxic_embeddedness", "political", "user_info")
CONTENT_SETS = {"prefix": ("content_toxicity",), "next_reply": ("conversation_state",)}

EDGE_TYPES = ("mutual", "child_follows_parent", "parent_follows_child", "none")
CC_SIZES = (1, 2, 3, 5, 10)
CORE_KS = (1, 2, 3, 4, 5)


class EmptyPrefix(ValueError):
    pass


class UnknownParent(KeyError):
    pass


class CatalogMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FeatureCatalog:
    task: str
    sets: tuple

    def __post_init__(self):
        allowed = PREFIX_SETS if self.task == "prefix" else NEXT_REPLY_SETS if self.task == "next_reply" else None
        if allowed is None:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.sets:
            raise ValueError("catalog must enable at least one feature set")
        bad = set(self.sets) - set(allowed)
        if bad:
            raise ValueError(f"unknown feature sets for {self.task}: {sorted(bad)}")
        # canonical order regardless of how the sets were listed
        object.__setattr__(self, "sets", tuple(s for s in allowed if s in set(self.sets)))

    @classmethod
    def all(cls, task: str) -> "FeatureCatalog":
        return cls(task, PREFIX_SETS if task == "prefix" else NEXT_REPLY_SETS)

    @classmethod
    def parse(cls, task: str, choice: Optional[str]) -> "FeatureCatalog":
        """``all``, ``structure`` (all but content), ``content`` or a comma list."""
        full = PREFIX_SETS if task == "prefix" else NEXT_REPLY_SETS
        if choice in (None, "", "all"):
            return cls(task, full)
        if choice == "content":
            return cls(task, CONTENT_SETS[task])
        if choice == "structure":
            return cls(task, tuple(s for s in full if s not in CONTENT_SETS[task]))
        return cls(task, tuple(x.strip() for x in choice.split(",") if x.strip()))


class FeatureVector:
    """Ordered feature name -> value map tied to the catalog that produced it."""

    __slots__ = ("names", "values", "catalog")

    def __init__(self, names, values, catalog: FeatureCatalog):
        self.names = tuple(names)
        self.values = np.asarray(values, dtype=float)
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names")
        if self.values.shape != (len(self.names),):
            raise ValueError("names and values differ in length")
        self.catalog = catalog

    @classmethod
    def from_items(cls, items, catalog) -> "FeatureVector":
        return cls([k for k, _ in items], [v for _, v in items], catalog)

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def __len__(self):
        return len(self.names)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))


def pair_difference(fa: FeatureVector, fb: FeatureVector) -> FeatureVector:
    """Elementwise ``fa - fb``; NaN on either side stays NaN."""
    if fa.catalog != fb.catalog or fa.names != fb.names:
        raise CatalogMismatch("feature vectors come from different catalogs")
    return FeatureVector(fa.names, fa.values - fb.values, fa.catalog)


# ---------------------------------------------------------------- helpers


def user_alignment(url_domains, table: dict) -> Optional[float]:
    """Mean alignment of the listed domains found in ``table``; None if none match."""
    scores = [table[d.lower()] for d in url_domains if d.lower() in table]
    if not scores:
        return None
    return float(np.mean(scores))


def leaning(score: Optional[float]) -> Optional[str]:
    if score is None:
        return None
    return "right" if score > 0 else "left"


def corpus_alignments(corpus) -> dict:
    """Per-user alignment from every domain the user shared anywhere in the corpus."""
    shared = {}
    for p in corpus.posts():
        shared.setdefault(p.author, []).extend(p.url_domains)
    return {u: user_alignment(d, corpus.alignment) for u, d in shared.items()}


def _safe(fn, *args, **kw) -> float:
    try:
        v = fn(*args, **kw)
    except (metrics.SizeTooSmall, metrics.UndefinedMixing, metrics.ZeroVariance, ZeroDivisionError):
        return NAN
    return float(v)


def _summ(prefix, values, which):
    return [(f"{prefix}.{k}", v) for k, v in summarize(values, which).items()]


def _ratio(a, b) -> float:
    return a / b if b else NAN


@dataclass
class Context:
    """Side information shared by all extractions over one corpus."""

    snapshots: object
    alignments: dict
    threshold: float

    def toxic(self, post: Post) -> Optional[bool]:
        return None if post.toxicity is None else post.toxicity > self.threshold

    def friends(self, users, at) -> dict:
        return {u: self.snapshots.friends(u, at) for u in users}

    def alignment(self, user) -> Optional[float]:
        return self.alignments.get(user)


def context_for(corpus) -> Context:
    return Context(corpus.snapshots, corpus_alignments(corpus), corpus.threshold)


# ---------------------------------------------------------------- prefix: per set


def _content(tree: ReplyTree, ctx):
    scores = [p.toxicity for p in [tree.root] + tree.replies() if p.toxicity is not None]
    return _summ("content", scores, ("mean", "std", "min", "max", "q1", "median", "q3"))


def _subtree_sizes(tree: ReplyTree) -> dict:
    size = {}
    order = []
    stack = [tree.root.id]
    while stack:
        pid = stack.pop()
        order.append(pid)
        stack.extend(tree.children[pid])
    for pid in reversed(order):
        size[pid] = 1 + sum(size[c] for c in tree.children[pid])
    return size


def _subtree_height(tree: ReplyTree, top) -> int:
    h, stack = 0, [(top, 0)]
    while stack:
        pid, d = stack.pop()
        h = max(h, d)
        stack.extend((c, d + 1) for c in tree.children[pid])
    return h


def _numeric_assort(g, values, directed=True):
    return _safe(metrics.assortativity_numeric, g, values, directed)


def _reply_tree(tree: ReplyTree, ctx, k):
    shape = metrics.tree_shape(tree)
    depths = tree.depths()
    out = [("tree.depth", shape.depth), ("tree.width", shape.width),
           ("tree.wiener", _safe(metrics.wiener_index, tree) if tree.size >= 2 else NAN)]
    per_depth = list(shape.nodes_at_depth)
    for i in range(1, k + 1):
        out.append((f"tree.nodes_at_depth_{i}", per_depth[i] if i < len(per_depth) else 0))
    summ = ("mean", "var", "hidx", "gini", "entropy")
    out += _summ("tree.nodes_per_depth", per_depth, summ)
    out.append(("tree.depth_size_ratio", shape.depth / shape.size))
    out += _summ("tree.node_depth", list(depths.values()), summ)
    leaves = [depths[p] for p in tree.posts if not tree.children[p]]
    out += _summ("tree.leaf_depth", leaves, summ)
    out += _summ("tree.children", [len(tree.children[p]) for p in tree.posts], ("mean", "var", "hidx"))
    direct = tree.children[tree.root.id]
    n_rep = tree.size - 1
    out.append(("tree.frac_direct_replies", _ratio(len(direct), n_rep)))
    out.append(("tree.frac_direct_with_reply", _ratio(sum(1 for c in direct if tree.children[c]), len(direct))))
    sizes = _subtree_sizes(tree)
    top = [sizes[c] for c in direct]
    out.append(("tree.subtree_gini", gini(top) if top else NAN))
    out.append(("tree.subtree_entropy", entropy(top) if top else NAN))
    if top:
        big = max(direct, key=lambda c: (sizes[c], c))
        out.append(("tree.largest_subtree_depth_size_ratio", (_subtree_height(tree, big) + 1) / sizes[big]))
    else:
        out.append(("tree.largest_subtree_depth_size_ratio", NAN))
    # alignment assortativity across reply edges between posts
    post_graph = DiGraph.from_edges([(p.id, p.parent) for p in tree.posts.values() if p.parent is not None
                                     and p.id != tree.root.id], nodes=tree.posts)
    vals = {pid: ctx.alignment(p.author) for pid, p in tree.posts.items()}
    out.append(("tree.alignment_assortativity", _numeric_assort(post_graph, vals)))
    per_user = {}
    for p in tree.posts.values():
        per_user[p.author] = per_user.get(p.author, 0) + 1
    out += _summ("tree.tweets_per_user", [per_user[u] for u in sorted(per_user)], summ)
    return out


def _pair_kinds(g: DiGraph):
    """Counts of unordered node pairs with no / one-way / two-way edges."""
    nodes = sorted(g.nodes)
    n_pairs = len(nodes) * (len(nodes) - 1) // 2
    two = sum(1 for (u, v) in g.edges if (v, u) in g.edges) // 2
    one = len(g.edges) - 2 * two
    return n_pairs - one - two, one, two, n_pairs


def _graph_features(name: str, g: DiGraph, ctx, follow: bool):
    out = [(f"{name}.n_nodes", len(g)), (f"{name}.n_edges", len(g.edges)),
           (f"{name}.density", metrics.density(g) if len(g) >= 2 else NAN)]
    succ, pred = g.successors(), g.predecessors()
    nodes = sorted(g.nodes)
    degs = {
        "in": [len(pred[v]) for v in nodes],
        "out": [len(succ[v]) for v in nodes],
        "total": [len(pred[v]) + len(succ[v]) for v in nodes],
    }
    for kind, d in degs.items():
        out += _summ(f"{name}.{kind}_degree", d, ("mean", "var", "fpos", "hidx", "gini"))
    out.append((f"{name}.degree_assortativity", _safe(metrics.degree_assortativity, g)))
    out.append((f"{name}.in_out_degree_assortativity", _safe(metrics.in_out_degree_assortativity, g)))
    none, one, two, n_pairs = _pair_kinds(g)
    for label, c in (("no_edge", none), ("one_way", one), ("two_way", two)):
        out.append((f"{name}.pairs_{label}", c))
        out.append((f"{name}.frac_pairs_{label}", _ratio(c, n_pairs)))
    out.append((f"{name}.frac_connected_pairs", metrics.fraction_connected_pairs(g) if len(g) >= 2 else NAN))
    for kind in ("degree", "betweenness", "closeness", "eigenvector", "pagerank"):
        for directed in (True, False):
            tag = "dir" if directed else "undir"
            out.append((f"{name}.centralization_{kind}_{tag}", _safe(metrics.centralization, g, kind, directed)))
    lcc = metrics.largest_component(g) if len(g) else g
    out.append((f"{name}.algebraic_connectivity",
                metrics.algebraic_connectivity(lcc) if len(lcc) >= 2 else NAN))
    if len(g):
        local, glob = metrics.clustering(g)
    else:
        local = glob = NAN
    out += [(f"{name}.clustering_local", local), (f"{name}.clustering_global", glob)]
    part = metrics.louvain(g, seed=0) if g.edges else None
    out.append((f"{name}.modularity", part.modularity if part else NAN))
    comps = metrics.weakly_connected_components(g) if len(g) else []
    out.append((f"{name}.frac_largest_cc", _ratio(len(comps[0]), len(g)) if comps else NAN))
    for s in CC_SIZES:
        out.append((f"{name}.n_cc_min_{s}", sum(1 for c in comps if len(c) >= s)))
    for k in CORE_KS:
        for label, sub in (("core", metrics.k_core(g, k)), ("truss", metrics.k_truss(g, k))):
            out += [(f"{name}.{k}{label}.n_nodes", len(sub.nodes)), (f"{name}.{k}{label}.n_edges", len(sub.edges)),
                    (f"{name}.{k}{label}.density", sub.density()), (f"{name}.{k}{label}.n_cc", sub.n_components())]
    if follow:
        fol = [g.follower_count.get(v, 0) for v in nodes]
        fri = [g.friend_count.get(v, 0) for v in nodes]
        out += _summ(f"{name}.followers", fol, ("mean", "var", "hidx", "gini"))
        out += _summ(f"{name}.friends", fri, ("mean", "var", "hidx", "gini"))
        counts = (g.follower_count, g.friend_count)
    else:
        counts = None
    if counts is not None:
        fol_c, fri_c = counts
        out.append((f"{name}.followers_assortativity", _numeric_assort(g, {v: float(fol_c.get(v, 0)) for v in nodes})))
        out.append((f"{name}.friends_assortativity", _numeric_assort(g, {v: float(fri_c.get(v, 0)) for v in nodes})))
    al = {v: ctx.alignment(v) for v in nodes}
    out.append((f"{name}.alignment_assortativity", _numeric_assort(g, al)))
    lean = {v: leaning(al[v]) or "unknown" for v in nodes}
    out.append((f"{name}.leaning_modularity", _safe(metrics.modularity, g, lean) if g.edges else NAN))
    return out


def _intersection(a: DiGraph, b: DiGraph) -> DiGraph:
    nodes = a.nodes & b.nodes
    return DiGraph.from_edges([e for e in a.edges if e in b.edges and e[0] in nodes and e[1] in nodes], nodes)


def _census(name: str, g: DiGraph):
    c = metrics.dyad_triad_census(g)
    return [(f"{name}.dyad_{t}", c.dyads[t]) for t in metrics.DYAD_TYPES] + \
           [(f"{name}.triad_{t}", c.triads[t]) for t in metrics.TRIAD_TYPES]


def _emb_block(name, pairs, friends):
    counts, fracs = [], []
    for u, v in pairs:
        e = metrics.embeddedness(u, v, friends)
        if e.missing:
            continue
        counts.append(e.count)
        fracs.append(e.fraction)
    out = [(f"{name}.n", len(counts))]
    which = ("mean", "var", "entropy", "gini")
    out += _summ(f"{name}.count", counts, which)
    out += _summ(f"{name}.fraction", fracs, which)
    return out


def _relation(g: DiGraph, u, v) -> str:
    a, b = (u, v) in g.edges, (v, u) in g.edges
    return "twoway" if a and b else "oneway" if a or b else "none"


def _embeddedness(follow, reply, friends):
    pairs = list(combinations(sorted(follow.nodes), 2))
    out = _emb_block("emb.all", pairs, friends)
    for gname, g in (("follow", follow), ("reply", reply)):
        for rel in ("none", "oneway", "twoway"):
            sel = [(u, v) for u, v in pairs if _relation(g, u, v) == rel]
            out += _emb_block(f"emb.{gname}_{rel}", sel, friends)
    return out


def _political(users, ctx):
    al = [ctx.alignment(u) for u in sorted(users)]
    known = [a for a in al if a is not None]
    out = _summ("political.alignment", known, ("mean", "std", "min", "max", "q1", "median", "q3", "iqr"))
    n_left = sum(1 for a in known if leaning(a) == "left")
    n_right = len(known) - n_left
    out += [("political.n_left", n_left), ("political.n_right", n_right),
            ("political.leaning_entropy", entropy([n_left, n_right]) if known else NAN)]
    return out


def _arrival(tree: ReplyTree, k):
    ids = {tree.root.author: 0}
    seen = set()
    out_ids, out_unique = [], []
    for p in tree.replies():
        if p.author not in ids:
            ids[p.author] = len(ids)
        seen.add(p.author)
        out_ids.append(ids[p.author])
        out_unique.append(len(seen))
    out = []
    for i in range(k):
        out.append((f"arrival.temporal_id_{i + 1}", out_ids[i] if i < len(out_ids) else NAN))
    for i in range(k):
        out.append((f"arrival.unique_users_{i + 1}", out_unique[i] if i < len(out_unique) else NAN))
    return out


def _rate(tree: ReplyTree, k):
    times = [p.time for p in tree.replies()]
    t0 = tree.root.time
    gaps = [b - a for a, b in zip([t0] + times[:-1], times)]
    out = [(f"rate.root_to_{i + 1}", times[i] - t0 if i < len(times) else NAN) for i in range(k)]
    out += [(f"rate.gap_{i + 1}", gaps[i] if i < len(gaps) else NAN) for i in range(k)]
    half = (len(gaps) + 1) // 2
    mean = lambda xs: float(np.mean(xs)) if xs else NAN
    out += [("rate.mean_gap", mean(gaps)), ("rate.mean_gap_first_half", mean(gaps[:half])),
            ("rate.mean_gap_second_half", mean(gaps[half:]))]
    return out


def prefix_features(prefix: ConversationPrefix, ctx: Context, catalog: FeatureCatalog) -> FeatureVector:
    """Conversation-level features of a prefix (root plus first k replies).

    Follow relations and friend lists are taken as of the last prefix reply.
    """
    if catalog.task != "prefix":
        raise CatalogMismatch("prefix_features needs a prefix catalog")
    tree, k = prefix.tree, prefix.k
    reps = tree.replies()
    if not reps:
        raise EmptyPrefix("prefix has no replies")
    at = reps[-1].time
    users = tree.participants()
    need_graphs = {"follow_graph", "reply_graph", "subgraphs", "embeddedness"} & set(catalog.sets)
    if need_graphs:
        follow = follow_graph_project(users, ctx.snapshots, at)
        reply = reply_graph_from_tree(tree)
    items = []
    for s in catalog.sets:
        if s == "content_toxicity":
            items += _content(tree, ctx)
        elif s == "reply_tree":
            items += _reply_tree(tree, ctx, k)
        elif s == "follow_graph":
            items += _graph_features("follow", follow, ctx, True)
        elif s == "reply_graph":
            items += _graph_features("reply", reply, ctx, False)
        elif s == "subgraphs":
            items += _census("census.follow", follow) + _census("census.reply", reply)
            items += _census("census.both", _intersection(follow, reply))
        elif s == "embeddedness":
            items += _embeddedness(follow, reply, ctx.friends(users, at))
        elif s == "political":
            items += _political(users, ctx)
        elif s == "arrival":
            items += _arrival(tree, k)
        elif s == "rate":
            items += _rate(tree, k)
    return FeatureVector.from_items(items, catalog)


# ---------------------------------------------------------------- next reply


def _edge_type(g: DiGraph, user, target) -> str:
    c2p, p2c = (user, target) in g.edges, (target, user) in g.edges
    if c2p and p2c:
        return "mutual"
    return "child_follows_parent" if c2p else "parent_follows_child" if p2c else "none"


class _State:
    """Per-instance graphs and lazily computed graph statistics."""

    def __init__(self, tree, user, ctx, at):
        self.tree, self.user, self.ctx = tree, user, ctx
        users = tree.participants() | {user}
        self.users = users
        self.follow = follow_graph_project(users, ctx.snapshots, at)
        rg = reply_graph_from_tree(tree)
        self.reply = type(rg)(nodes=frozenset(users), edges=rg.edges)
        self.friends = ctx.friends(users, at)
        self.toxic_users = {p.author for p in tree.posts.values() if ctx.toxic(p)}
        self._cent, self._parts, self._comps = {}, {}, {}

    def graph(self, name):
        return self.follow if name == "follow" else self.reply

    def cent(self, gname, kind, directed):
        key = (gname, kind, directed)
        if key not in self._cent:
            self._cent[key] = metrics.centrality(self.graph(gname), kind, directed)
        return self._cent[key]

    def partition(self, gname) -> dict:
        if gname not in self._parts:
            g = self.graph(gname)
            self._parts[gname] = metrics.louvain(g, seed=0).assignment
        return self._parts[gname]

    def component(self, gname) -> dict:
        if gname not in self._comps:
            lab = {}
            for i, c in enumerate(metrics.weakly_connected_components(self.graph(gname))):
                for v in c:
                    lab[v] = i
            self._comps[gname] = lab
        return self._comps[gname]


def _group_size(assign: dict, v) -> int:
    return sum(1 for x in assign.values() if x == assign[v])


def _reply_counts(tree: ReplyTree, a, b, ctx):
    """(replies a->b, toxic replies a->b)."""
    n = t = 0
    for p in tree.posts.values():
        if p.author == a and tree.parent_author(p) == b:
            n += 1
            t += bool(ctx.toxic(p))
    return n, t


def _dyad_block(prefix, st: _State, target_post: Post, full: bool):
    ctx, u = st.ctx, st.user
    v = target_post.author
    out = [(f"{prefix}.target_toxic", float(bool(ctx.toxic(target_post))) if target_post.toxicity is not None else NAN)]
    et = _edge_type(st.follow, u, v)
    out += [(f"{prefix}.edge_{t}", float(et == t)) for t in EDGE_TYPES]
    e = metrics.embeddedness(u, v, st.friends)
    out += [(f"{prefix}.common_friends", NAN if e.missing else e.count),
            (f"{prefix}.common_friends_fraction", NAN if e.missing else e.fraction)]
    fc, fo = st.follow.friend_count, st.follow.follower_count
    out += [(f"{prefix}.delta_friends", fc.get(u, 0) - fc.get(v, 0)),
            (f"{prefix}.delta_followers", fo.get(u, 0) - fo.get(v, 0))]
    if full:
        for gname in ("follow", "reply"):
            for kind in metrics.CENTRALITIES:
                for directed in (True, False):
                    c = st.cent(gname, kind, directed)
                    out.append((f"{prefix}.delta_{gname}_{kind}_{'dir' if directed else 'undir'}",
                                c.get(u, 0.0) - c.get(v, 0.0)))
        for gname in ("follow", "reply"):
            cc, part = st.component(gname), st.partition(gname)
            out += [(f"{prefix}.{gname}_same_cc", float(cc[u] == cc[v])),
                    (f"{prefix}.{gname}_same_partition", float(part[u] == part[v])),
                    (f"{prefix}.{gname}_delta_cc_size", _group_size(cc, u) - _group_size(cc, v)),
                    (f"{prefix}.{gname}_delta_partition_size", _group_size(part, u) - _group_size(part, v))]
    n_uv, t_uv = _reply_counts(st.tree, u, v, ctx)
    n_vu, t_vu = _reply_counts(st.tree, v, u, ctx)
    out += [(f"{prefix}.frac_toxic_between", _ratio(t_uv + t_vu, n_uv + n_vu)),
            (f"{prefix}.replies_user_to_target", n_uv), (f"{prefix}.toxic_user_to_target", t_uv),
            (f"{prefix}.frac_toxic_user_to_target", _ratio(t_uv, n_uv)),
            (f"{prefix}.replies_target_to_user", n_vu), (f"{prefix}.toxic_target_to_user", t_vu),
            (f"{prefix}.frac_toxic_target_to_user", _ratio(t_vu, n_vu))]
    au, av = ctx.alignment(u), ctx.alignment(v)
    known = au is not None and av is not None
    out += [(f"{prefix}.delta_alignment", au - av if known else NAN),
            (f"{prefix}.same_leaning", float(leaning(au) == leaning(av)) if known else NAN)]
    return out


def _conversation_state(st: _State):
    ctx, u, tree = st.ctx, st.user, st.tree
    reps = tree.replies()
    tox = [bool(ctx.toxic(p)) for p in reps]
    mine = [t for p, t in zip(reps, tox) if p.author == u]
    to_me = [t for p, t in zip(reps, tox) if tree.parent_author(p) == u and p.author != u]
    out = [("state.n_replies", len(reps)), ("state.n_toxic", sum(tox)), ("state.frac_toxic", _ratio(sum(tox), len(reps)))]
    out += [("state.n_from_user", len(mine)), ("state.n_toxic_from_user", sum(mine)),
            ("state.frac_toxic_from_user", _ratio(sum(mine), len(mine))),
            ("state.n_to_user", len(to_me)), ("state.n_toxic_to_user", sum(to_me)),
            ("state.frac_toxic_to_user", _ratio(sum(to_me), len(to_me)))]
    return out


def _position(gname, st: _State):
    g, u = st.graph(gname), st.user
    out = []
    for kind in metrics.CENTRALITIES:
        for directed in (True, False):
            out.append((f"{gname}.{kind}_{'dir' if directed else 'undir'}", st.cent(gname, kind, directed).get(u, 0.0)))
    others = sorted(st.users - {u})
    for label, members in (("toxic", [v for v in others if v in st.toxic_users]),
                           ("nontoxic", [v for v in others if v not in st.toxic_users])):
        ins = sum(1 for v in members if (v, u) in g.edges)
        outs = sum(1 for v in members if (u, v) in g.edges)
        two = sum(1 for v in members if (v, u) in g.edges and (u, v) in g.edges)
        anyc = ins + outs - two
        for name, c in (("in", ins), ("out", outs), ("twoway", two), ("any", anyc)):
            out += [(f"{gname}.{name}_edges_{label}", c), (f"{gname}.frac_{name}_edges_{label}", _ratio(c, len(members)))]
    cc, part = st.component(gname), st.partition(gname)
    same_cc = sum(1 for v in others if cc[v] == cc[u])
    same_p = sum(1 for v in others if part[v] == part[u])
    out += [(f"{gname}.same_cc", same_cc), (f"{gname}.frac_same_cc", _ratio(same_cc, len(others))),
            (f"{gname}.same_partition", same_p), (f"{gname}.frac_same_partition", _ratio(same_p, len(others)))]
    groups = {
        "unconnected": [v for v in others if (u, v) not in g.edges and (v, u) not in g.edges],
        "user_to": [v for v in others if (u, v) in g.edges],
        "to_user": [v for v in others if (v, u) in g.edges],
    }
    for label, members in groups.items():
        out += _emb_block(f"{gname}.emb_{label}", [(u, v) for v in members], st.friends)
    return out


def _tree_position(st: _State, parent: Post):
    tree = st.tree
    depths = tree.depths()
    out = [("position.depth", depths[parent.id] + 1), ("position.siblings", len(tree.children[parent.id]))]
    if parent.id == tree.root.id:
        out += [("position.subtree_size", 0), ("position.subtree_fraction", 0.0),
                ("position.subtree_size_depth_ratio", NAN)]
        return out
    top = parent.id
    while tree.posts[top].parent != tree.root.id:
        top = tree.posts[top].parent
    sizes = _subtree_sizes(tree)
    levels = _subtree_height(tree, top) + 1
    out += [("position.subtree_size", sizes[top]), ("position.subtree_fraction", sizes[top] / tree.size),
            ("position.subtree_size_depth_ratio", sizes[top] / levels)]
    return out


def _political_delta(st: _State):
    u, ctx = st.user, st.ctx
    au = ctx.alignment(u)
    others = [ctx.alignment(v) for v in sorted(st.users - {u})]
    others = [a for a in others if a is not None]
    if au is None or not others:
        return [("political.mean_abs_delta", NAN), ("political.frac_same_leaning", NAN)]
    return [("political.mean_abs_delta", float(np.mean([abs(au - a) for a in others]))),
            ("political.frac_same_leaning", float(np.mean([leaning(a) == leaning(au) for a in others])))]


def _user_info(st: _State):
    u = st.user
    fr, fo = st.follow.friend_count.get(u, 0), st.follow.follower_count.get(u, 0)
    if u in st.follow.missing:
        return [("user.friends", NAN), ("user.followers", NAN), ("user.friends_followers_ratio", NAN)]
    return [("user.friends", fr), ("user.followers", fo), ("user.friends_followers_ratio", _ratio(fr, fo))]


def next_reply_features(tree: ReplyTree, user, parent_id, ctx: Context, catalog: FeatureCatalog,
                        at: Optional[int] = None) -> FeatureVector:
    """Features of ``user`` replying to ``parent_id`` given the conversation so far."""
    if catalog.task != "next_reply":
        raise CatalogMismatch("next_reply_features needs a next-reply catalog")
    if parent_id not in tree.posts:
        raise UnknownParent(parent_id)
    parent = tree.posts[parent_id]
    if at is None:
        at = max(p.time for p in tree.posts.values())
    st = _State(tree, user, ctx, at)
    others = sorted(st.users - {user})
    items = []
    for s in catalog.sets:
        if s == "conversation_state":
            items += _conversation_state(st)
        elif s == "user_parent":
            items += _dyad_block("parent", st, parent, True)
        elif s == "user_root":
            items += _dyad_block("root", st, tree.root, False)
        elif s == "follow_graph":
            items += _position("follow", st)
        elif s == "reply_graph":
            items += _position("reply", st)
        elif s == "reply_tree":
            items += _tree_position(st, parent)
        elif s == "overall_embeddedness":
            items += _emb_block("emb_overall", [(user, v) for v in others], st.friends)
        elif s == "toxic_embeddedness":
            items += _emb_block("emb_toxic", [(user, v) for v in others if v in st.toxic_users], st.friends)
            items += _emb_block("emb_nontoxic", [(user, v) for v in others if v not in st.toxic_users], st.friends)
        elif s == "political":
            items += _political_delta(st)
        elif s == "user_info":
            items += _user_info(st)
    return FeatureVector.from_items(items, catalog)


# ---------------------------------------------------------------- matrix files


def write_matrix(fh, names, X, extra_cols=()) -> None:
    """Header of feature names, then one row per instance; NaN -> empty field.

    ``extra_cols`` is a list of (name, values) written before the features.
    """
    import csv

    w = csv.writer(fh, lineterminator="\n")
    w.writerow([c for c, _ in extra_cols] + list(names))
    X = np.asarray(X, dtype=float)
    X = X.reshape(X.shape[0] if X.ndim == 2 else (X.size // max(1, len(names))), len(names))
    for i, row in enumerate(X):
        out = [vals[i] for _, vals in extra_cols]
        out += ["" if math.isnan(x) else repr(float(x)) for x in row]
        w.writerow(out)


def read_matrix(fh, n_extra=0):
    """Inverse of :func:`write_matrix`: (names, extra column dict, X)."""
    import csv

    r = csv.reader(fh)
    header = next(r)
    extra_names, names = header[:n_extra], header[n_extra:]
    extras = {c: [] for c in extra_names}
    rows = []
    for line in r:
        for c, x in zip(extra_names, line[:n_extra]):
            extras[c].append(x)
        rows.append([float(x) if x != "" else np.nan for x in line[n_extra:]])
    X = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return names, extras, X
