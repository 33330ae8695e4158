import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toxconv import labeling as L
from toxconv.corpus import Corpus
from toxconv.features import FeatureCatalog

from conftest import P, tree_of

T = 0.531


def chain(cid, n_replies, toxic_idx=(), scores=None, authors=None):
    """Root plus a reply chain; replies listed in ``toxic_idx`` (1-based) are toxic."""
    posts = [P(f"{cid}-0", "R", None, 0, tox=0.1)]
    for i in range(1, n_replies + 1):
        tox = scores[i - 1] if scores else (0.9 if i in toxic_idx else 0.1)
        author = authors[i - 1] if authors else f"u{i % 3}"
        posts.append(P(f"{cid}-{i}", author, f"{cid}-{i - 1}", i, tox=tox))
    return tree_of(*posts)


def suffix_chain(cid, k, prefix_toxic, suffix_frac, suffix_len=10):
    n_tox = round(suffix_frac * suffix_len)
    idx = set(range(1, prefix_toxic + 1)) | set(range(k + 1, k + 1 + n_tox))
    return chain(cid, k + suffix_len, idx)


def test_median_split_example():
    trees = [suffix_chain(f"c{i}", 10, 0, f) for i, f in enumerate([0.1, 0.2, 0.2, 0.4])]
    rows, man = L.prefix_labels(Corpus(trees, threshold=T), 10, min_bucket=4)
    assert rows == [(0, 0, 0), (3, 1, 0)]
    b = man["buckets"][0]
    assert b["median"] == pytest.approx(0.2) and b["ties_dropped"] == 2


def test_small_bucket_dropped():
    trees = [suffix_chain(f"c{i}", 10, 0, (i % 5) / 10) for i in range(199)]
    with pytest.raises(L.NoQualifyingBuckets):
        L.prefix_labels(Corpus(trees, threshold=T), 10)
    trees.append(suffix_chain("extra", 10, 0, 0.9))
    rows, man = L.prefix_labels(Corpus(trees, threshold=T), 10)
    assert man["buckets"][0]["conversations"] == 200 and rows


def test_short_conversations_excluded():
    trees = [chain("short", 15, (11, 12))] + [suffix_chain(f"c{i}", 10, 0, f) for i, f in enumerate([0.1, 0.4])]
    rows, man = L.prefix_labels(Corpus(trees, threshold=T), 10, min_bucket=2)
    assert man["dropped"]["too_small"] == 1
    assert 0 not in {i for i, _, _ in rows}


def test_unscored_excluded():
    t = chain("x", 20, scores=[0.1] * 19 + [None])
    rows_in = [suffix_chain(f"c{i}", 10, 0, f) for i, f in enumerate([0.1, 0.4])]
    _, man = L.prefix_labels(Corpus([t] + rows_in, threshold=T), 10, min_bucket=2)
    assert man["dropped"]["unscored"] == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_bucket_balance_property(seed):
    rng = np.random.default_rng(seed)
    k = 4
    trees = []
    for i in range(int(rng.integers(20, 120))):
        pt = int(rng.integers(0, 3))
        trees.append(suffix_chain(f"c{i}", k, pt, float(rng.integers(0, 11)) / 10))
    try:
        rows, man = L.prefix_labels(Corpus(trees, threshold=T), k, min_bucket=5, seed=seed)
    except L.NoQualifyingBuckets:
        return
    by_bucket = {}
    for _, lab, b in rows:
        by_bucket.setdefault(b, [0, 0])[lab] += 1
    for neg, pos in by_bucket.values():
        assert abs(pos - neg) <= 1
    labels = np.array([lab for _, lab, _ in rows])
    counts = np.array([b for _, _, b in rows])
    if counts.std() > 0:
        assert abs(np.corrcoef(labels, counts)[0, 1]) <= 0.02
    assert len({i for i, _, _ in rows}) == len(rows)


def test_qualifying_replies_band():
    t = chain("q", 5, scores=[0.9, 0.5, 0.1, 0.8, 0.2], authors=["a", "b", "c", "c", "d"])
    tox, non = L.qualifying_replies(t)
    # reply 1 answers the root; reply 4 is a self-reply; reply 2 is inside the band
    assert [p.id for p in tox] == []
    assert [p.id for p in non] == ["q-3", "q-5"]


def test_pairs_skip_and_balance():
    only_toxic = chain("t", 4, scores=[0.1, 0.9, 0.95, 0.9], authors=["a", "b", "c", "d"])
    assert L.sample_pairs(Corpus([only_toxic], threshold=T)) == []
    trees = [chain(f"c{i}", 4, scores=[0.1, 0.9, 0.1, 0.8], authors=["a", "b", "c", "d"]) for i in range(1001)]
    pairs = L.sample_pairs(Corpus(trees, threshold=T), seed=4)
    assert len(pairs) == 1000
    assert sum(lab for *_, lab in pairs) == 500
    assert len({i for i, *_ in pairs}) == 1000
    for _, first, second, lab in pairs:
        assert (first.toxicity > 0.75) == bool(lab) and (second.toxicity < 0.25) == bool(lab)
    assert L.sample_pairs(Corpus(trees, threshold=T), seed=4) == pairs


def test_paired_dataset(small_corpus):
    ds = L.paired_next_reply_dataset(small_corpus, seed=1, catalog=FeatureCatalog("next_reply", ("conversation_state",)))
    assert len(ds) % 2 == 0 and ds.y.sum() * 2 == len(ds)
    assert len(set(ds.groups)) == len(ds.groups)
    ds2 = L.paired_next_reply_dataset(small_corpus, seed=1, catalog=FeatureCatalog("next_reply", ("conversation_state",)))
    np.testing.assert_array_equal(ds.X, ds2.X)


def test_prefix_dataset_write(tmp_path, small_corpus):
    ds = L.prefix_label_dataset(small_corpus, 3, min_bucket=3, catalog=FeatureCatalog("prefix", ("rate",)))
    ds.write(tmp_path / "m.csv", tmp_path / "man.json")
    head = (tmp_path / "m.csv").read_text().splitlines()[0].split(",")
    assert head[:2] == ["group", "label"] and head[2] == "rate.root_to_1"
    assert '"buckets"' in (tmp_path / "man.json").read_text()
