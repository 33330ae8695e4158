"""In-memory conversation model: posts, reply trees, and the two user graphs."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional


class MissingSnapshotStore(RuntimeError):
    pass


@dataclass(frozen=True)
class Post:
    id: str
    author: str
    parent: Optional[str] = None
    root: Optional[str] = None
    time: int = 0
    text: Optional[str] = None
    toxicity: Optional[float] = None
    url_domains: tuple = ()
    mentions: tuple = ()

    def __post_init__(self):
        if self.parent is not None and self.parent == self.id:
            raise ValueError(f"post {self.id!r} is its own parent")
        if self.toxicity is not None and not 0.0 <= self.toxicity <= 1.0:
            raise ValueError(f"toxicity {self.toxicity} outside [0, 1]")

    @property
    def order_key(self):
        return (self.time, self.id)


@dataclass(frozen=True)
class ReplyTree:
    """A rooted tree of posts.

    ``children`` maps every post id to the ids of its direct replies, sorted
    by ``(time, id)``.  ``orphan_rooted`` marks trees whose root pointed at a
    parent missing from the corpus; ``skewed`` marks trees with a reply
    timestamped before its parent.
    """

    root: Post
    children: Mapping[str, tuple]
    posts: Mapping[str, Post]
    orphan_rooted: bool = False
    skewed: bool = False

    @classmethod
    def from_posts(cls, root: Post, posts: Iterable[Post], orphan_rooted: bool = False) -> "ReplyTree":
        by_id = {root.id: root}
        for p in posts:
            by_id.setdefault(p.id, p)
        kids = defaultdict(list)
        for p in by_id.values():
            if p.id == root.id:
                continue
            if p.parent not in by_id:
                raise ValueError(f"post {p.id!r} has parent {p.parent!r} outside the tree")
            kids[p.parent].append(p)
        children = {pid: () for pid in by_id}
        for pid, lst in kids.items():
            lst.sort(key=lambda q: q.order_key)
            children[pid] = tuple(q.id for q in lst)
        # every post must hang off the root
        seen = {root.id}
        stack = [root.id]
        while stack:
            for c in children[stack.pop()]:
                seen.add(c)
                stack.append(c)
        if len(seen) != len(by_id):
            raise ValueError("posts do not form a single tree under the root")
        skewed = any(
            p.parent is not None and p.id != root.id and p.time < by_id[p.parent].time
            for p in by_id.values()
        )
        return cls(root=root, children=children, posts=by_id,
                   orphan_rooted=orphan_rooted, skewed=skewed)

    @property
    def size(self) -> int:
        return len(self.posts)

    def replies(self) -> list:
        """Non-root posts ordered by (time, id)."""
        return sorted((p for p in self.posts.values() if p.id != self.root.id),
                      key=lambda p: p.order_key)

    def parent_author(self, post: Post) -> Optional[str]:
        if post.parent is None or post.parent not in self.posts:
            return None
        return self.posts[post.parent].author

    def depths(self) -> dict:
        out = {self.root.id: 0}
        stack = [self.root.id]
        while stack:
            pid = stack.pop()
            for c in self.children[pid]:
                out[c] = out[pid] + 1
                stack.append(c)
        return out

    def participants(self) -> set:
        return {p.author for p in self.posts.values()}


@dataclass(frozen=True)
class DiGraph:
    """Directed graph on hashable user ids with positive integer edge weights."""

    nodes: frozenset
    edges: Mapping[tuple, int] = field(default_factory=dict)

    def __post_init__(self):
        # canonical edge order, so float reductions never depend on hash seeds
        object.__setattr__(self, "edges", {e: self.edges[e] for e in _sorted_ids(self.edges)})
        object.__setattr__(self, "_order", tuple(_sorted_ids(self.nodes)))

    @classmethod
    def from_edges(cls, edges, nodes=()) -> "DiGraph":
        w = defaultdict(int)
        ns = set(nodes)
        for e in edges:
            u, v = e[0], e[1]
            if u == v:
                continue
            w[(u, v)] += e[2] if len(e) > 2 else 1
            ns.update((u, v))
        return cls(nodes=frozenset(ns), edges=dict(w))

    def __len__(self):
        return len(self.nodes)

    @property
    def order(self) -> tuple:
        """Nodes in sorted order."""
        return self._order

    def has_edge(self, u, v) -> bool:
        return (u, v) in self.edges

    # neighbour maps are dicts used as insertion-ordered sets

    def successors(self) -> dict:
        out = {n: {} for n in self._order}
        for u, v in self.edges:
            out[u][v] = None
        return out

    def predecessors(self) -> dict:
        out = {n: {} for n in self._order}
        for u, v in self.edges:
            out[v][u] = None
        return out

    def undirected(self) -> dict:
        out = {n: {} for n in self._order}
        for u, v in self.edges:
            out[u][v] = None
            out[v][u] = None
        return out

    def undirected_edges(self) -> dict:
        """Unordered pairs ``(low, high)`` as an ordered set (dict keys)."""
        return dict.fromkeys((u, v) if _lt(u, v) else (v, u) for u, v in self.edges)

    def subgraph(self, nodes) -> "DiGraph":
        keep = frozenset(nodes) & self.nodes
        return DiGraph(keep, {e: w for e, w in self.edges.items() if e[0] in keep and e[1] in keep})


def _sorted_ids(ids) -> list:
    try:
        return sorted(ids)
    except TypeError:
        return sorted(ids, key=repr)


def _lt(a, b) -> bool:
    try:
        return a < b
    except TypeError:
        return repr(a) < repr(b)


@dataclass(frozen=True)
class ReplyGraph(DiGraph):
    pass


@dataclass(frozen=True)
class FollowGraph(DiGraph):
    follower_count: Mapping = field(default_factory=dict)
    friend_count: Mapping = field(default_factory=dict)
    missing: frozenset = frozenset()


@dataclass(frozen=True)
class ConversationPrefix:
    """Root plus the first ``k`` replies of a conversation.

    ``consistent`` is False when a selected reply's parent was not itself
    selected (only possible in clock-skewed trees); such replies are left out
    of ``tree`` and the prefix should not be used for prediction.
    """

    tree: ReplyTree
    k: int
    suffix: tuple = ()
    consistent: bool = True

    @property
    def replies(self) -> list:
        return self.tree.replies()


def reply_graph_from_tree(tree: ReplyTree) -> ReplyGraph:
    weights = defaultdict(int)
    for p in tree.posts.values():
        if p.id == tree.root.id:
            continue
        target = tree.parent_author(p)
        if target is not None and target != p.author:
            weights[(p.author, target)] += 1
    return ReplyGraph(nodes=frozenset(tree.participants()), edges=dict(weights))


def follow_graph_project(participants, snapshots, at) -> FollowGraph:
    """Induced follow graph among ``participants`` as of time ``at``.

    Each user's friend list comes from their latest snapshot taken at or
    before ``at``, or their earliest snapshot when all are later.  Users with
    no snapshot at all are isolated and listed in ``missing``.
    """
    if snapshots is None:
        raise MissingSnapshotStore("no snapshot store supplied")
    people = frozenset(participants)
    edges = {}
    followers, friends, missing = {}, {}, set()
    for u in people:
        snap = snapshots.lookup(u, at)
        if snap is None:
            missing.add(u)
            followers[u] = 0
            friends[u] = 0
            continue
        followers[u] = snap.follower_count
        friends[u] = snap.friend_count
        for v in snap.friends:
            if v in people and v != u:
                edges[(u, v)] = 1
    return FollowGraph(nodes=people, edges=edges, follower_count=followers,
                       friend_count=friends, missing=frozenset(missing))


def prefix(tree: ReplyTree, k: int) -> ConversationPrefix:
    if k < 1:
        raise ValueError("prefix size must be >= 1")
    replies = tree.replies()
    head, tail = replies[:k], replies[k:]
    chosen = {p.id for p in head}
    keep = {tree.root.id}
    stack = [tree.root.id]
    while stack:
        for c in tree.children[stack.pop()]:
            if c in chosen:
                keep.add(c)
                stack.append(c)
    consistent = len(keep) == len(chosen) + 1
    posts = [tree.posts[i] for i in keep]
    sub = ReplyTree.from_posts(tree.root, posts, orphan_rooted=tree.orphan_rooted)
    return ConversationPrefix(tree=sub, k=k, suffix=tuple(tail), consistent=consistent)


def conversation_before(tree: ReplyTree, post: Post) -> ReplyTree:
    """The tree as it stood just before ``post`` was published."""
    cut = post.order_key
    keep = [p for p in tree.posts.values() if p.order_key < cut or p.id == tree.root.id]
    ids = {p.id for p in keep}
    # drop anything whose ancestry is not yet visible (clock skew)
    ok = [tree.root]
    stack = [tree.root.id]
    while stack:
        for c in tree.children[stack.pop()]:
            if c in ids:
                ok.append(tree.posts[c])
                stack.append(c)
    return ReplyTree.from_posts(tree.root, ok, orphan_rooted=tree.orphan_rooted)
