"""Controlled datasets for the two prediction tasks."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .features import (FeatureCatalog, context_for, next_reply_features, pair_difference,
                       prefix_features, write_matrix)
from .model import conversation_before, prefix
from .parallel import pmap

BAND_LOW, BAND_HIGH = 0.25, 0.75


class NoQualifyingBuckets(ValueError):
    pass


@dataclass
class LabeledDataset:
    task: str
    names: tuple
    X: np.ndarray
    y: np.ndarray
    groups: list
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y)

    def write(self, matrix_path, manifest_path=None) -> None:
        with open(matrix_path, "w", encoding="utf-8") as fh:
            write_matrix(fh, self.names, self.X, [("group", self.groups), ("label", [int(v) for v in self.y])])
        if manifest_path:
            with open(manifest_path, "w", encoding="utf-8") as fh:
                json.dump(self.manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")


def _tox(post, threshold):
    return post.toxicity > threshold


def prefix_labels(corpus, k: int, min_bucket: int = 200, seed: int = 0) -> tuple:
    """Median-split labels within (k, toxic-in-prefix) buckets.

    Returns ``(rows, manifest)`` with rows ``(tree_index, label, toxic_in_prefix)``
    in corpus order.  Conversations with fewer than ``2k`` replies, with
    unscored replies, or with a clock-inconsistent prefix are left out.
    Exact-median conversations are dropped; if a bucket is still unbalanced
    the larger side is subsampled (seeded) to the size of the smaller.
    """
    if k < 1:
        raise ValueError("prefix size must be >= 1")
    th = corpus.threshold
    buckets = defaultdict(list)
    dropped = defaultdict(int)
    for i, t in enumerate(corpus.trees):
        reps = t.replies()
        if len(reps) < 2 * k:
            dropped["too_small"] += 1
            continue
        if any(p.toxicity is None for p in reps):
            dropped["unscored"] += 1
            continue
        if not prefix(t, k).consistent:
            dropped["inconsistent_prefix"] += 1
            continue
        head, tail = reps[:k], reps[k:]
        n_tox = sum(_tox(p, th) for p in head)
        frac = sum(_tox(p, th) for p in tail) / len(tail)
        buckets[n_tox].append((i, frac))

    rng = np.random.default_rng(seed)
    rows, table = [], []
    for b in sorted(buckets):
        members = buckets[b]
        entry = {"prefix_toxic": b, "conversations": len(members)}
        if len(members) < min_bucket:
            entry["kept"] = False
            dropped["small_bucket"] += len(members)
            table.append(entry)
            continue
        fr = np.array([f for _, f in members])
        med = float(np.median(fr))
        pos = [i for i, f in members if f > med]
        neg = [i for i, f in members if f < med]
        ties = len(members) - len(pos) - len(neg)
        m = min(len(pos), len(neg))
        trimmed = len(pos) + len(neg) - 2 * m
        if len(pos) > m:
            pos = sorted(rng.choice(pos, size=m, replace=False).tolist())
        if len(neg) > m:
            neg = sorted(rng.choice(neg, size=m, replace=False).tolist())
        dropped["median_ties"] += ties
        dropped["balance_trim"] += trimmed
        entry.update(kept=True, median=med, positives=len(pos), negatives=len(neg),
                     ties_dropped=ties, trimmed=trimmed)
        table.append(entry)
        rows += [(i, 1, b) for i in pos] + [(i, 0, b) for i in neg]
    if not rows:
        raise NoQualifyingBuckets(f"no bucket with >= {min_bucket} conversations and both labels")
    rows.sort()
    manifest = {"task": "prefix", "prefix_size": k, "min_bucket": min_bucket, "seed": seed,
                "buckets": table, "dropped": dict(sorted(dropped.items())), "instances": len(rows)}
    return rows, manifest


def _prefix_vec(tree, k, ctx, catalog):
    return prefix_features(prefix(tree, k), ctx, catalog)


def prefix_label_dataset(corpus, k: int, min_bucket: int = 200, catalog=None, seed: int = 0,
                         workers: int = 1, ctx=None) -> LabeledDataset:
    rows, manifest = prefix_labels(corpus, k, min_bucket, seed)
    catalog = catalog or FeatureCatalog.all("prefix")
    ctx = ctx or context_for(corpus)
    fn = partial(_prefix_vec, k=k, ctx=ctx, catalog=catalog)
    vecs = pmap(fn, [corpus.trees[i] for i, _, _ in rows], workers,
                chunksize=max(1, math.ceil(len(rows) / (4 * max(1, workers)))))
    manifest["feature_sets"] = list(catalog.sets)
    return LabeledDataset(
        task="prefix", names=vecs[0].names, X=np.vstack([v.values for v in vecs]),
        y=np.array([lab for _, lab, _ in rows], dtype=int),
        groups=[corpus.trees[i].root.id for i, _, _ in rows], manifest=manifest)


def qualifying_replies(tree, low: float = BAND_LOW, high: float = BAND_HIGH) -> tuple:
    """(toxic, nontoxic) candidate replies: no self or direct-root replies, score outside the band."""
    tox, non = [], []
    for p in tree.replies():
        if p.parent == tree.root.id or p.toxicity is None:
            continue
        parent = tree.posts[p.parent]
        if parent.author == p.author or not parent.order_key < p.order_key:
            continue
        if p.toxicity > high:
            tox.append(p)
        elif p.toxicity < low:
            non.append(p)
    return tox, non


def sample_pairs(corpus, seed: int = 0) -> list:
    """At most one (first, second, label) pair per conversation, exactly half toxic-first."""
    rng = np.random.default_rng(seed)
    picked = []
    for i, t in enumerate(corpus.trees):
        tox, non = qualifying_replies(t)
        if tox and non:
            picked.append((i, tox[int(rng.integers(len(tox)))], non[int(rng.integers(len(non)))]))
    if len(picked) % 2:
        # an odd count cannot be split evenly; drop one pair at random
        picked.pop(int(rng.integers(len(picked))))
    flags = np.zeros(len(picked), dtype=bool)
    flags[rng.permutation(len(picked))[: len(picked) // 2]] = True
    out = []
    for (i, a, b), first_toxic in zip(picked, flags):
        out.append((i, a, b, 1) if first_toxic else (i, b, a, 0))
    return out


def _reply_vec(args, ctx, catalog):
    tree, post = args
    before = conversation_before(tree, post)
    return next_reply_features(before, post.author, post.parent, ctx, catalog, at=post.time)


def paired_next_reply_dataset(corpus, seed: int = 0, catalog=None, workers: int = 1, ctx=None) -> LabeledDataset:
    pairs = sample_pairs(corpus, seed)
    catalog = catalog or FeatureCatalog.all("next_reply")
    ctx = ctx or context_for(corpus)
    jobs = []
    for i, first, second, _ in pairs:
        jobs += [(corpus.trees[i], first), (corpus.trees[i], second)]
    fn = partial(_reply_vec, ctx=ctx, catalog=catalog)
    vecs = pmap(fn, jobs, workers, chunksize=max(1, math.ceil(len(jobs) / (4 * max(1, workers)))))
    diffs = [pair_difference(vecs[2 * j], vecs[2 * j + 1]) for j in range(len(pairs))]
    y = np.array([lab for *_, lab in pairs], dtype=int)
    manifest = {"task": "next-reply", "seed": seed, "pairs": len(pairs), "positives": int(y.sum()),
                "band": [BAND_LOW, BAND_HIGH], "feature_sets": list(catalog.sets),
                "pair_ids": [[f.id, s.id] for _, f, s, _ in pairs]}
    if not diffs:
        return LabeledDataset("next-reply", (), np.zeros((0, 0)), y, [], manifest)
    return LabeledDataset(
        task="next-reply", names=diffs[0].names, X=np.vstack([d.values for d in diffs]), y=y,
        groups=[corpus.trees[i].root.id for i, *_ in pairs], manifest=manifest)
