"""Individual, dyad, reply-tree and follow-graph toxicity analyses.

Every analysis returns figure-ready :class:`BucketSeries` tables: one row per
bucket with a representative x, a statistic y, its 95% interval and the
number of observations behind it.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from . import metrics
from .model import ReplyTree, follow_graph_project
from .parallel import pmap
from .stats import LogBucketer, mean_ci, proportion_ci, quartiles

EDGE_TYPES = ("mutual", "child_follows_parent", "parent_follows_child", "none")
CSV_COLUMNS = ("series", "bucket", "x", "y", "ci_lo", "ci_hi", "n")

GAP_WIDTH = 0.5
GAP_RANGE = 4.0


class NoToxicTweets(ValueError):
    pass


@dataclass(frozen=True)
class BucketRow:
    bucket: str
    x: float
    y: float
    ci_lo: float
    ci_hi: float
    n: int


@dataclass
class BucketSeries:
    name: str
    rows: list = field(default_factory=list)

    def ys(self) -> list:
        return [r.y for r in self.rows]

    def by_bucket(self) -> dict:
        return {r.bucket: r for r in self.rows}


def series_to_csv(series) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in series:
        for r in s.rows:
            w.writerow([s.name, r.bucket, _fmt(r.x), _fmt(r.y), _fmt(r.ci_lo), _fmt(r.ci_hi), r.n])
    return buf.getvalue()


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


@dataclass(frozen=True)
class DyadRecord:
    parent_user: str
    parent_post: str
    child_user: str
    child_post: str
    parent_toxic: bool
    child_toxic: bool
    edge_type: str
    influence_gap: float
    embeddedness: int
    missing_follow: bool = False


# ---------------------------------------------------------------- individual level


def _user_counts(corpus):
    """Per-author (scored tweets, toxic tweets)."""
    tweets, toxic = Counter(), Counter()
    for p in corpus.posts():
        t = corpus.toxic(p)
        if t is None:
            continue
        tweets[p.author] += 1
        toxic[p.author] += int(t)
    return tweets, toxic


def _count_series(name, values, bucketer):
    groups = Counter(bucketer.bucket(v) for v in values)
    return BucketSeries(name, [
        BucketRow(bucketer.label(b), bucketer.lower(b), float(c), float(c), float(c), c)
        for b, c in sorted(groups.items())
    ])


def user_distributions(corpus, base: float = 2.0) -> list:
    """Users per log bucket of tweet count and of toxic-tweet count."""
    bk = LogBucketer(base)
    tweets, toxic = _user_counts(corpus)
    users = sorted(tweets)
    return [
        _count_series("users_by_tweets", [tweets[u] for u in users], bk),
        _count_series("users_by_toxic_tweets", [toxic[u] for u in users], bk),
    ]


def toxicity_contribution(corpus, base: float = 2.0) -> BucketSeries:
    """Share of all toxic tweets posted by users in each toxic-count bucket."""
    bk = LogBucketer(base)
    _, toxic = _user_counts(corpus)
    total = sum(toxic.values())
    if total == 0:
        raise NoToxicTweets("corpus has no toxic tweets")
    tox_sum, users = defaultdict(int), defaultdict(int)
    for u, c in toxic.items():
        if c:
            b = bk.bucket(c)
            tox_sum[b] += c
            users[b] += 1
    rows = []
    for b in sorted(tox_sum):
        f = tox_sum[b] / total
        rows.append(BucketRow(bk.label(b), bk.lower(b), f, f, f, users[b]))
    return BucketSeries("toxic_contribution", rows)


def toxicity_rate_by_activity(corpus, base: float = 2.0) -> BucketSeries:
    """Mean per-user toxic fraction per activity bucket, with a t interval."""
    bk = LogBucketer(base)
    tweets, toxic = _user_counts(corpus)
    groups = defaultdict(list)
    for u in sorted(tweets):
        groups[bk.bucket(tweets[u])].append(toxic[u] / tweets[u])
    rows = []
    for b in sorted(groups):
        lo, hi = mean_ci(groups[b])
        y = float(np.mean(groups[b]))
        rows.append(BucketRow(bk.label(b), bk.lower(b), y, min(lo, y), max(hi, y), len(groups[b])))
    return BucketSeries("toxic_rate_by_activity", rows)


HOMOPHILY_MODES = ("toxic1", "toxic4", "numeric")


def homophily(corpus, mode: str = "toxic1", restrict_toxic: bool = False) -> float:
    """Assortativity of toxicity on the follow graph among all corpus users.

    ``toxic1`` / ``toxic4`` contrast users with no toxic tweets against those
    with at least one / four (users in between are left out); ``numeric``
    uses the toxic-tweet count, optionally only over users with one or more.
    Friend lists come from each user's earliest snapshot.
    """
    if mode not in HOMOPHILY_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    _, toxic = _user_counts(corpus)
    users = set(toxic)
    if mode == "toxic4":
        users = {u for u in users if toxic[u] == 0 or toxic[u] >= 4}
    if mode == "numeric" and restrict_toxic:
        users = {u for u in users if toxic[u] > 0}
    g = follow_graph_project(users, corpus.snapshots, at=-math.inf)
    if mode == "numeric":
        return metrics.assortativity_numeric(g, {u: float(toxic[u]) for u in users})
    return metrics.assortativity_categorical(g, {u: toxic[u] > 0 for u in users})


# ---------------------------------------------------------------- dyads


def _log_followers(c) -> float:
    return math.log10(c + 1)


def extract_dyads(tree: ReplyTree, follow, snapshots, threshold: float) -> list:
    """Reply dyads of one conversation (no self-replies, no direct root replies)."""
    at = tree.root.time
    out = []
    for p in tree.replies():
        if p.parent == tree.root.id:
            continue
        parent = tree.posts[p.parent]
        if parent.author == p.author or p.toxicity is None or parent.toxicity is None:
            continue
        a, b = parent.author, p.author
        missing = a in follow.missing or b in follow.missing
        c2p, p2c = follow.has_edge(b, a), follow.has_edge(a, b)
        et = "mutual" if c2p and p2c else "child_follows_parent" if c2p else \
            "parent_follows_child" if p2c else "none"
        gap = _log_followers(follow.follower_count.get(a, 0)) - _log_followers(follow.follower_count.get(b, 0))
        fa, fb = snapshots.friends(a, at), snapshots.friends(b, at)
        emb = len(fa & fb) if fa is not None and fb is not None else 0
        out.append(DyadRecord(a, parent.id, b, p.id, parent.toxicity > threshold,
                              p.toxicity > threshold, et, gap, emb, missing))
    return out


def _tree_dyads(tree, snapshots, threshold):
    follow = follow_graph_project(tree.participants(), snapshots, tree.root.time)
    return extract_dyads(tree, follow, snapshots, threshold)


def corpus_dyads(corpus, workers: int = 1) -> list:
    fn = partial(_tree_dyads, snapshots=corpus.snapshots, threshold=corpus.threshold)
    return [d for ds in pmap(fn, corpus.trees, workers) for d in ds]


def gap_bin(gap: float) -> int:
    lim = int(GAP_RANGE / GAP_WIDTH)
    return max(-lim, min(lim - 1, int(math.floor(gap / GAP_WIDTH))))


DYAD_CONDITIONS = ("edge_type", "influence_gap", "embeddedness")


def toxic_reply_probability(dyads, condition: str, given_parent_toxic: bool) -> BucketSeries:
    """P(child toxic | condition bin, parent toxicity) with Wilson intervals."""
    if condition not in DYAD_CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    bk = LogBucketer(2.0)
    counts = defaultdict(lambda: [0, 0])
    for d in dyads:
        if d.parent_toxic != given_parent_toxic:
            continue
        if condition == "edge_type":
            key = EDGE_TYPES.index(d.edge_type)
        elif condition == "influence_gap":
            key = gap_bin(d.influence_gap)
        else:
            key = bk.bucket(d.embeddedness)
        counts[key][0] += int(d.child_toxic)
        counts[key][1] += 1
    rows = []
    for key in sorted(counts):
        k, n = counts[key]
        lo, hi = proportion_ci(k, n)
        if condition == "edge_type":
            label, x = EDGE_TYPES[key], float(key)
        elif condition == "influence_gap":
            label, x = f"[{key * GAP_WIDTH:g},{(key + 1) * GAP_WIDTH:g})", (key + 0.5) * GAP_WIDTH
        else:
            label, x = bk.label(key), bk.lower(key)
        rows.append(BucketRow(label, x, k / n, lo, hi, n))
    name = f"p_toxic_reply|{condition}|parent_{'toxic' if given_parent_toxic else 'nontoxic'}"
    return BucketSeries(name, rows)


# ---------------------------------------------------------------- conversation level


def conversation_toxicity(tree: ReplyTree, threshold: float) -> Optional[float]:
    """Fraction of toxic posts, root included; None when nothing is scored."""
    scores = [p.toxicity for p in tree.posts.values() if p.toxicity is not None]
    if not scores:
        return None
    return sum(s > threshold for s in scores) / len(scores)


TREE_X = ("size", "depth", "width", "wiener")
FOLLOW_X = ("density", "n_components", "modularity")


def _mean_rows(pairs, key_fn, label_fn):
    groups = defaultdict(lambda: ([], []))
    for x, y in pairs:
        k = key_fn(x)
        groups[k][0].append(x)
        groups[k][1].append(y)
    rows = []
    for k in sorted(groups):
        xs, ys = groups[k]
        y = float(np.mean(ys))
        lo, hi = mean_ci(ys)
        rows.append(BucketRow(label_fn(k), float(np.mean(xs)), y, min(lo, y), max(hi, y), len(ys)))
    return rows


def _tree_x(tree, x):
    if x == "wiener":
        return metrics.wiener_index(tree) if tree.size >= 2 else None
    s = metrics.tree_shape(tree)
    return float({"size": s.size, "depth": s.depth, "width": s.width}[x])


def tree_toxicity_curves(corpus, x: str = "size") -> list:
    """Mean conversation toxicity per log2 bucket of a reply-tree statistic.

    For ``wiener`` one extra series is emitted per log10 size group.
    """
    if x not in TREE_X:
        raise ValueError(f"unknown tree statistic {x!r}")
    bk = LogBucketer(2.0)
    pairs, sizes = [], []
    for t in corpus.trees:
        y = conversation_toxicity(t, corpus.threshold)
        v = _tree_x(t, x)
        if y is None or v is None:
            continue
        pairs.append((v, y))
        sizes.append(t.size)
    out = [BucketSeries(f"tree_toxicity|{x}", _mean_rows(pairs, bk.bucket, bk.label))]
    if x == "wiener":
        sz = LogBucketer(10.0)
        groups = defaultdict(list)
        for (v, y), s in zip(pairs, sizes):
            groups[sz.bucket(s)].append((v, y))
        for g in sorted(groups):
            out.append(BucketSeries(f"tree_toxicity|wiener|size={sz.label(g)}",
                                    _mean_rows(groups[g], bk.bucket, bk.label)))
    return out


def _follow_x(tree, snapshots, x):
    g = follow_graph_project(tree.participants(), snapshots, tree.root.time)
    if x == "density":
        return metrics.density(g) if len(g) >= 2 else None
    if x == "n_components":
        return float(len(metrics.weakly_connected_components(g)))
    if not g.edges:
        return None  # modularity undefined without edges
    return metrics.louvain(g, seed=0).modularity


def _linear_key(width):
    return lambda v: int(math.floor(v / width + 1e-12))


def follow_graph_toxicity_curves(corpus, x: str = "density") -> BucketSeries:
    """Mean conversation toxicity binned by a statistic of the participants' follow graph.

    Density and modularity use bins of width 0.1; component counts use log2 buckets.
    """
    if x not in FOLLOW_X:
        raise ValueError(f"unknown follow-graph statistic {x!r}")
    pairs = []
    for t in corpus.trees:
        y = conversation_toxicity(t, corpus.threshold)
        v = _follow_x(t, corpus.snapshots, x)
        if y is None or v is None:
            continue
        pairs.append((v, y))
    if x == "n_components":
        bk = LogBucketer(2.0)
        rows = _mean_rows(pairs, bk.bucket, bk.label)
    else:
        rows = _mean_rows(pairs, _linear_key(0.1), lambda k: f"[{k / 10:.1f},{(k + 1) / 10:.1f})")
    return BucketSeries(f"follow_toxicity|{x}", rows)


def time_to_size(corpus, n: int) -> dict:
    """Seconds from the root to the n-th reply, over conversations that reach n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    elapsed = []
    for t in corpus.trees:
        reps = t.replies()
        if len(reps) >= n:
            elapsed.append(reps[n - 1].time - t.root.time)
    if not elapsed:
        return {"n": n, "count": 0, "median": None, "q1": None, "q3": None}
    q1, med, q3 = quartiles(elapsed)
    return {"n": n, "count": len(elapsed), "median": med, "q1": q1, "q3": q3}


def run_all(corpus, workers: int = 1) -> dict:
    """Every analysis table, keyed by output file stem."""
    out = {}
    users = user_distributions(corpus)
    try:
        users.append(toxicity_contribution(corpus))
    except NoToxicTweets:
        pass
    users.append(toxicity_rate_by_activity(corpus))
    out["individual"] = users
    dyads = corpus_dyads(corpus, workers)
    out["dyads"] = [toxic_reply_probability(dyads, c, pt)
                    for c in DYAD_CONDITIONS for pt in (True, False)]
    out["tree"] = [s for x in ("size", "depth", "width") for s in tree_toxicity_curves(corpus, x)]
    out["wiener"] = tree_toxicity_curves(corpus, "wiener")
    out["follow_graph"] = [follow_graph_toxicity_curves(corpus, x) for x in FOLLOW_X]
    ttsize = [time_to_size(corpus, n) for n in (10, 100)]
    rows = [BucketRow(str(d["n"]), float(d["n"]), d["median"], d["q1"], d["q3"], d["count"])
            for d in ttsize if d["count"]]
    out["time_to_size"] = [BucketSeries("seconds_to_nth_reply", rows)]
    return out
