import itertools

import pytest

from toxconv.corpus import Corpus, corpus_from_synth
from toxconv.ingest import Snapshot, SnapshotStore
from toxconv.model import Post, ReplyTree
from toxconv.synth import GeneratorConfig, generate

_ids = itertools.count()


def P(pid, author, parent=None, t=0, tox=0.1, **kw):
    return Post(id=pid, author=author, parent=parent, time=t, text=kw.pop("text", ""), toxicity=tox, **kw)


def tree_of(*posts):
    root = next(p for p in posts if p.parent is None)
    return ReplyTree.from_posts(root, [p for p in posts if p is not root])


def store(friends: dict, followers=None, t=0) -> SnapshotStore:
    followers = followers or {}
    return SnapshotStore({
        u: [Snapshot(t, frozenset(fs), followers.get(u, 0), len(fs))] for u, fs in friends.items()
    })


def random_tree(rng, n):
    """Random recursive tree on n posts as a ReplyTree."""
    posts = [P("p0", "u0", None, 0)]
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        posts.append(P(f"p{i}", f"u{i % 7}", f"p{parent}", i))
    return tree_of(*posts)


@pytest.fixture(scope="session")
def small_synth():
    return generate(GeneratorConfig(seed=11, n_conversations=60, n_users=400, n_communities=8))


@pytest.fixture(scope="session")
def small_corpus(small_synth) -> Corpus:
    return corpus_from_synth(small_synth)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(" C")[1].split(":")[0])):
            terminalreporter.write_line(line)
