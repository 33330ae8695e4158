"""A scored, filtered set of conversations plus the side tables analyses need."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

from .ingest import (CorpusFilter, SnapshotStore, UnreadableInput, filter_conversations,
                     link_replies, read_posts, read_snapshots)
from .toxicity import DEFAULT_THRESHOLD

POSTS_FILE = "posts.jsonl"
SNAPSHOTS_FILE = "snapshots.jsonl"
ALIGNMENT_FILE = "alignment.tsv"
TRACKED_FILE = "tracked.txt"


@dataclass
class Corpus:
    trees: list
    snapshots: Optional[SnapshotStore] = None
    alignment: dict = field(default_factory=dict)
    threshold: float = DEFAULT_THRESHOLD

    def toxic(self, post) -> Optional[bool]:
        if post.toxicity is None:
            return None
        return post.toxicity > self.threshold

    def posts(self):
        for t in self.trees:
            yield from t.posts.values()

    def __len__(self):
        return len(self.trees)


def read_alignment(path) -> dict:
    table = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                dom, score = line.split("\t")
                table[dom.lower()] = float(score)
    except OSError as exc:
        raise UnreadableInput(f"{path}: {exc}") from exc
    return table


def read_tracked(path) -> frozenset:
    try:
        with open(path, encoding="utf-8") as fh:
            return frozenset(x.strip() for x in fh if x.strip())
    except OSError as exc:
        raise UnreadableInput(f"{path}: {exc}") from exc


def load_corpus(directory, threshold: float = DEFAULT_THRESHOLD, strict: bool = False,
                apply_filter: bool = True) -> Corpus:
    """Read a corpus directory (posts, snapshots, optional alignment/tracked)."""
    posts = read_posts(os.path.join(directory, POSTS_FILE))
    trees = link_replies(posts, strict=strict)
    tracked_path = os.path.join(directory, TRACKED_FILE)
    if apply_filter and os.path.exists(tracked_path):
        trees = filter_conversations(trees, CorpusFilter(read_tracked(tracked_path)))
    snap_path = os.path.join(directory, SNAPSHOTS_FILE)
    snaps = read_snapshots(snap_path) if os.path.exists(snap_path) else None
    al_path = os.path.join(directory, ALIGNMENT_FILE)
    alignment = read_alignment(al_path) if os.path.exists(al_path) else {}
    return Corpus(trees, snaps, alignment, threshold)


def corpus_from_synth(sc, threshold: Optional[float] = None) -> Corpus:
    """In-memory equivalent of writing a synthetic corpus and loading it back."""
    trees = filter_conversations(link_replies(sc.posts), CorpusFilter(frozenset(sc.tracked)))
    return Corpus(trees, sc.snapshot_store(), dict(sc.alignment),
                  sc.config.threshold if threshold is None else threshold)
