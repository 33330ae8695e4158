import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toxconv.toxicity import (NONTOXIC, TOXIC, DegenerateGold, InsufficientData, RemoteScorer, StubScorer,
                              binarize, krippendorff_alpha, majority_vote, tune_threshold)


def test_binarize():
    assert binarize(0.54, 0.531) == TOXIC
    assert binarize(0.531, 0.531) == NONTOXIC
    assert binarize(0.0, 0.531) == NONTOXIC
    with pytest.raises(ValueError):
        binarize(1.2)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_binarize_monotone(a, b, t):
    lo, hi = sorted((a, b))
    assert not (binarize(lo, t) == TOXIC and binarize(hi, t) == NONTOXIC)


def test_tune_threshold():
    t, f = tune_threshold([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1], [0.5])
    assert t == 0.5 and f == 1.0
    t, f = tune_threshold([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1], [0.7, 0.3, 0.5])
    assert t == 0.3 and f == 1.0  # ties go to the smallest
    with pytest.raises(DegenerateGold):
        tune_threshold([0.1, 0.9], [1, 1], [0.5])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=30))
def test_tune_threshold_reports_achieved_f1(rows):
    scores = [s for s, _ in rows]
    gold = [g for _, g in rows]
    if all(gold) or not any(gold):
        return
    grid = [i / 20 for i in range(21)]
    t, f = tune_threshold(scores, gold, grid)
    pred = np.array([binarize(s, t) == TOXIC for s in scores])
    g = np.array(gold)
    tp = np.sum(pred & g)
    f1 = 2 * tp / (2 * tp + np.sum(pred & ~g) + np.sum(~pred & g)) if tp else 0.0
    assert f == pytest.approx(f1)


def test_majority_vote_enumerated():
    labels = (TOXIC, NONTOXIC)
    for n in (2, 3):
        for row in itertools.product(labels, repeat=n):
            t = row.count(TOXIC)
            want = TOXIC if t > n - t else NONTOXIC
            assert majority_vote([row]) == [want]
    assert majority_vote([[TOXIC, TOXIC, NONTOXIC]]) == [TOXIC]
    assert majority_vote([[TOXIC, NONTOXIC]]) == [NONTOXIC]


def test_alpha_examples():
    assert krippendorff_alpha([[TOXIC, TOXIC]] * 5 + [[NONTOXIC, NONTOXIC]] * 5) == 1.0
    assert krippendorff_alpha([["a", "a"], ["b", "b"]]) == 1.0
    with pytest.raises(InsufficientData):
        krippendorff_alpha([["a", None]])


def _alpha_oracle(matrix):
    # pairwise formulation: 1 - (n-1) * sum_u sum_pairs d / (sum_u (m_u - 1)) ... evaluated via values
    units = [[x for x in r if x is not None] for r in matrix]
    units = [u for u in units if len(u) > 1]
    vals = [x for u in units for x in u]
    n = len(vals)
    do = sum(sum(a != b for i, a in enumerate(u) for j, b in enumerate(u) if i != j) / (len(u) - 1)
             for u in units) / n
    de = sum(a != b for i, a in enumerate(vals) for j, b in enumerate(vals) if i != j) / (n * (n - 1))
    return 1 - do / de


def test_alpha_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = [[rng.choice(["x", "y", "z", None]) for _ in range(3)] for _ in range(12)]
        try:
            a = krippendorff_alpha(m)
        except InsufficientData:
            continue
        assert a == pytest.approx(_alpha_oracle(m), abs=1e-12)


def test_alpha_invariances():
    rng = np.random.default_rng(1)
    m = [[rng.choice(["x", "y"]) for _ in range(3)] for _ in range(30)]
    a = krippendorff_alpha(m)
    renamed = [[{"x": "q", "y": "r"}[v] for v in row] for row in m]
    permuted = [row[::-1] for row in m]
    assert krippendorff_alpha(renamed) == pytest.approx(a)
    assert krippendorff_alpha(permuted) == pytest.approx(a)


def test_stub_scorer(tmp_path):
    p = tmp_path / "terms.tsv"
    p.write_text("idiot\t3.0\n# comment\n")
    s = StubScorer.from_file(p)
    assert s.score("you idiot") > 0.9
    assert s.score("hello") == 0.5
    assert s.score_batch(["a", "idiot"]) == [0.5, s.score("idiot")]


class _Resp:
    def __init__(self, payload, status=200):
        self.payload, self.status = payload, status

    def raise_for_status(self):
        if self.status >= 400:
            raise RuntimeError(f"HTTP {self.status}")

    def json(self):
        return self.payload


class _Session:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def post(self, *a, **kw):
        self.calls += 1
        return self.responses.pop(0)


def test_remote_scorer_retries_then_succeeds():
    sess = _Session([_Resp({}, 503), _Resp({"attributeScores": {"TOXICITY": {"summaryScore": {"value": 0.7}}}})])
    sc = RemoteScorer("http://x", retries=2, backoff=0.0, session=sess, max_in_flight=1)
    assert sc.score("t") == 0.7 and sess.calls == 2


def test_remote_scorer_gives_up():
    sess = _Session([_Resp({}, 500)] * 3)
    sc = RemoteScorer("http://x", retries=2, backoff=0.0, session=sess, max_in_flight=1)
    assert sc.score("t") is None and sc.failures == 1


def test_remote_scorer_requires_endpoint(monkeypatch):
    monkeypatch.delenv("TOXCONV_SCORER_ENDPOINT", raising=False)
    with pytest.raises(ValueError):
        RemoteScorer()
