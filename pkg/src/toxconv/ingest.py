"""Reading post/snapshot records and assembling reply forests."""
from __future__ import annotations

import bisect
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .model import Post, ReplyTree

log = logging.getLogger(__name__)


class UnreadableInput(IOError):
    pass


class CycleDetected(ValueError):
    """Raised by :func:`link_replies` when reply links form a cycle.

    The partially built forest (cycle members removed) is kept on ``forest``
    so callers can continue.
    """

    def __init__(self, cycle_ids, forest):
        self.cycle_ids = frozenset(cycle_ids)
        self.forest = forest
        super().__init__(f"reply cycle among {sorted(self.cycle_ids)}")


class ParsedPosts(list):
    """List of posts plus counts of what was skipped while reading."""

    def __init__(self, posts=(), skipped=0, duplicates=0):
        super().__init__(posts)
        self.skipped = skipped
        self.duplicates = duplicates


@dataclass(frozen=True)
class Snapshot:
    time: int
    friends: frozenset
    follower_count: int
    friend_count: int


class SnapshotStore:
    """Per-user, time-ordered friend list snapshots."""

    def __init__(self, snapshots: Optional[dict] = None):
        self._by_user = {}
        self._times = {}
        for user, snaps in (snapshots or {}).items():
            for s in snaps:
                self.add(user, s)

    def add(self, user, snap: Snapshot) -> None:
        snaps = self._by_user.setdefault(user, [])
        times = self._times.setdefault(user, [])
        i = bisect.bisect_left(times, snap.time)
        if i < len(times) and times[i] == snap.time:
            raise ValueError(f"duplicate snapshot time {snap.time} for user {user!r}")
        if user in snap.friends:
            snap = Snapshot(snap.time, snap.friends - {user}, snap.follower_count, snap.friend_count)
        snaps.insert(i, snap)
        times.insert(i, snap.time)

    def users(self):
        return self._by_user.keys()

    def __contains__(self, user):
        return user in self._by_user

    def history(self, user) -> list:
        return list(self._by_user.get(user, ()))

    def lookup(self, user, at) -> Optional[Snapshot]:
        """Latest snapshot with time <= ``at``; the earliest one if all are later."""
        times = self._times.get(user)
        if not times:
            return None
        i = bisect.bisect_right(times, at) - 1
        return self._by_user[user][max(i, 0)]

    def earliest(self, user) -> Optional[Snapshot]:
        snaps = self._by_user.get(user)
        return snaps[0] if snaps else None

    def friends(self, user, at=None) -> Optional[frozenset]:
        s = self.earliest(user) if at is None else self.lookup(user, at)
        return None if s is None else s.friends


@dataclass(frozen=True)
class CorpusFilter:
    tracked_accounts: frozenset
    min_distinct_users: int = 2

    def __post_init__(self):
        if not self.tracked_accounts:
            raise ValueError("tracked_accounts must be nonempty")

    def accepts(self, tree: ReplyTree) -> bool:
        if tree.orphan_rooted or tree.size < 2:
            return False
        root = tree.root
        if root.author not in self.tracked_accounts and not set(root.mentions) & self.tracked_accounts:
            return False
        return len(tree.participants()) >= self.min_distinct_users


def _iter_lines(stream):
    try:
        for line in stream:
            yield line
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableInput(str(exc)) from exc


def post_from_record(rec: dict) -> Post:
    if not isinstance(rec, dict):
        raise ValueError("record is not an object")
    pid, author, t = rec["id"], rec["author"], rec["time"]
    if not isinstance(pid, str) or not isinstance(author, str):
        raise ValueError("id and author must be strings")
    if isinstance(t, bool) or not isinstance(t, int):
        raise ValueError("time must be an integer")
    parent = rec.get("parent")
    if parent is not None and not isinstance(parent, str):
        raise ValueError("parent must be a string or null")
    tox = rec.get("toxicity")
    if tox is not None:
        tox = float(tox)
    return Post(
        id=pid, author=author, parent=parent, root=rec.get("root"), time=t,
        text=rec.get("text"), toxicity=tox,
        url_domains=tuple(rec.get("url_domains") or ()),
        mentions=tuple(rec.get("mentions") or ()),
    )


def post_to_record(p: Post) -> dict:
    return {
        "id": p.id, "author": p.author, "parent": p.parent, "time": p.time,
        "text": p.text, "toxicity": p.toxicity,
        "mentions": list(p.mentions), "url_domains": list(p.url_domains),
    }


def parse_posts(stream: Iterable[str]) -> ParsedPosts:
    """Read line-delimited JSON post records.

    Malformed lines are skipped and counted; repeated ids keep the first
    occurrence.
    """
    seen = set()
    out = ParsedPosts()
    for line in _iter_lines(stream):
        if not line.strip():
            continue
        try:
            post = post_from_record(json.loads(line))
        except (ValueError, KeyError, TypeError):
            out.skipped += 1
            continue
        if post.id in seen:
            out.duplicates += 1
            continue
        seen.add(post.id)
        out.append(post)
    if out.skipped:
        log.warning("skipped %d malformed post records", out.skipped)
    return out


def parse_snapshots(stream: Iterable[str]) -> SnapshotStore:
    store = SnapshotStore()
    skipped = 0
    for line in _iter_lines(stream):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            snap = Snapshot(
                time=int(rec["time"]), friends=frozenset(rec.get("friends") or ()),
                follower_count=int(rec["follower_count"]), friend_count=int(rec["friend_count"]),
            )
            store.add(str(rec["user"]), snap)
        except (ValueError, KeyError, TypeError):
            skipped += 1
    if skipped:
        log.warning("skipped %d malformed snapshot records", skipped)
    return store


def snapshot_to_record(user, s: Snapshot) -> dict:
    return {"user": user, "time": s.time, "friends": sorted(s.friends),
            "follower_count": s.follower_count, "friend_count": s.friend_count}


def link_replies(posts: Iterable[Post], strict: bool = True) -> list:
    """Assemble posts into a forest of reply trees via their parent links.

    Posts whose parent is not in the corpus root their own (orphan-rooted)
    tree.  Posts on a parent cycle are dropped; with ``strict`` a
    :class:`CycleDetected` carrying the remaining forest is raised.
    """
    by_id = {}
    for p in posts:
        by_id.setdefault(p.id, p)

    # walk parent chains; anything that revisits its own chain is on a cycle
    state = {}  # id -> 0 visiting, 1 done-ok, 2 done-cycle
    cyclic = set()
    for start in by_id:
        if start in state:
            continue
        path, pos = [], {}
        cur = start
        while cur in by_id and cur not in state:
            pos[cur] = len(path)
            state[cur] = 0
            path.append(cur)
            cur = by_id[cur].parent
            if cur in pos:
                cyclic.update(path[pos[cur]:])
                break
        for node in path:
            state[node] = 2 if node in cyclic else 1

    roots, kids = [], defaultdict(list)
    for p in by_id.values():
        if p.id in cyclic:
            continue
        if p.parent is None or p.parent not in by_id or p.parent in cyclic:
            roots.append(p)
        else:
            kids[p.parent].append(p)

    forest = []
    for r in sorted(roots, key=lambda p: p.order_key):
        members = []
        stack = [r.id]
        while stack:
            pid = stack.pop()
            for c in kids.get(pid, ()):
                members.append(c)
                stack.append(c.id)
        forest.append(ReplyTree.from_posts(r, members, orphan_rooted=r.parent is not None))

    if cyclic:
        if strict:
            raise CycleDetected(cyclic, forest)
        log.warning("dropped %d posts on reply cycles", len(cyclic))
    return forest


def filter_conversations(trees: Iterable[ReplyTree], filt: CorpusFilter) -> list:
    return [t for t in trees if filt.accepts(t)]


def read_posts(path) -> ParsedPosts:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_posts(fh)
    except OSError as exc:
        raise UnreadableInput(f"{path}: {exc}") from exc


def read_snapshots(path) -> SnapshotStore:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_snapshots(fh)
    except OSError as exc:
        raise UnreadableInput(f"{path}: {exc}") from exc
