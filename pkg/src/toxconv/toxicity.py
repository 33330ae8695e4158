"""Toxicity scoring, thresholding, and annotation aggregation."""
from __future__ import annotations

import logging
import math
import os
import re
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.531
TOXIC, NONTOXIC = "toxic", "nontoxic"


class DegenerateGold(ValueError):
    pass


class InsufficientData(ValueError):
    pass


def binarize(score: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    if not (0.0 <= score <= 1.0 and 0.0 <= threshold <= 1.0):
        raise ValueError("score and threshold must lie in [0, 1]")
    return TOXIC if score > threshold else NONTOXIC


def is_toxic(score: Optional[float], threshold: float = DEFAULT_THRESHOLD) -> Optional[bool]:
    if score is None:
        return None
    return score > threshold


def _f1(pred, gold) -> float:
    tp = int(np.sum(pred & gold))
    fp = int(np.sum(pred & ~gold))
    fn = int(np.sum(~pred & gold))
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def tune_threshold(scores, gold, grid) -> tuple:
    """Pick the grid threshold with the highest F1; ties go to the smaller one.

    Returns ``(threshold, f1)``.
    """
    s = np.asarray(scores, dtype=float)
    g = np.asarray([_as_bool(x) for x in gold], dtype=bool)
    if s.shape != g.shape:
        raise ValueError("scores and gold differ in length")
    if g.all() or not g.any():
        raise DegenerateGold("gold labels contain a single class")
    best_t, best_f = None, -1.0
    for t in sorted(grid):
        f = _f1(s > t, g)
        if f > best_f:
            best_t, best_f = t, f
    return best_t, best_f


def _as_bool(x) -> bool:
    if isinstance(x, str):
        if x not in (TOXIC, NONTOXIC):
            raise ValueError(f"unknown label {x!r}")
        return x == TOXIC
    return bool(x)


def majority_vote(matrix) -> list:
    """Per-item modal label over non-missing entries; exact ties -> nontoxic."""
    out = []
    for row in matrix:
        votes = Counter(x for x in row if x is not None)
        if not votes:
            raise ValueError("item without any label")
        t, n = votes.get(TOXIC, 0), votes.get(NONTOXIC, 0)
        out.append(TOXIC if t > n else NONTOXIC)
    return out


def krippendorff_alpha(matrix) -> float:
    """Krippendorff's alpha for nominal labels via the coincidence matrix.

    ``matrix`` is items x annotators with ``None`` for missing labels.  Items
    with fewer than two labels are not pairable and are ignored.
    """
    units = [[x for x in row if x is not None] for row in matrix]
    units = [u for u in units if len(u) >= 2]
    if len(units) < 2:
        raise InsufficientData("need at least two items with two or more labels")
    values = sorted({x for u in units for x in u}, key=repr)
    idx = {v: i for i, v in enumerate(values)}
    c = np.zeros((len(values), len(values)))
    for u in units:
        m = len(u)
        counts = Counter(u)
        for a, na in counts.items():
            for b, nb in counts.items():
                pairs = na * (nb - 1) if a == b else na * nb
                c[idx[a], idx[b]] += pairs / (m - 1)
    n_c = c.sum(axis=1)
    n = n_c.sum()
    d_o = (n - np.trace(c)) / n
    d_e = (n * n - np.sum(n_c ** 2)) / (n * (n - 1))
    if d_e == 0:
        # a single value used throughout: no disagreement possible
        return 1.0
    return float(1.0 - d_o / d_e)


class StubScorer:
    """Offline scorer: logistic of the summed weights of matched terms."""

    def __init__(self, weights: dict, bias: float = 0.0):
        self.weights = {k.lower(): float(v) for k, v in weights.items()}
        self.bias = bias

    @classmethod
    def from_file(cls, path) -> "StubScorer":
        weights = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                term, w = line.split("\t")
                weights[term] = float(w)
        return cls(weights)

    def score(self, text: Optional[str]) -> float:
        z = self.bias
        for tok in re.findall(r"[\w']+", (text or "").lower()):
            z += self.weights.get(tok, 0.0)
        return 1.0 / (1.0 + math.exp(-z))

    def score_batch(self, texts: Sequence[Optional[str]]) -> list:
        return [self.score(t) for t in texts]


class RemoteScorer:
    """HTTP scoring client.

    POSTs ``{"text": ...}`` to ``endpoint`` and reads a probability from the
    JSON response (``score``, ``probability``, or a Perspective-style
    ``attributeScores.TOXICITY.summaryScore.value``).  Failed requests are
    retried with exponential backoff; a post that still fails scores None.
    """

    def __init__(self, endpoint=None, key=None, retries=3, backoff=0.5,
                 max_in_flight=4, timeout=10.0, session=None):
        self.endpoint = endpoint or os.environ.get("TOXCONV_SCORER_ENDPOINT")
        self.key = key or os.environ.get("TOXCONV_SCORER_KEY")
        if not self.endpoint:
            raise ValueError("no scorer endpoint configured (TOXCONV_SCORER_ENDPOINT)")
        self.retries = retries
        self.backoff = backoff
        self.max_in_flight = max_in_flight
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self.session = session
        self.failures = 0

    @staticmethod
    def _extract(payload) -> float:
        if "score" in payload:
            v = payload["score"]
        elif "probability" in payload:
            v = payload["probability"]
        else:
            v = payload["attributeScores"]["TOXICITY"]["summaryScore"]["value"]
        v = float(v)
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"score {v} outside [0, 1]")
        return v

    def score(self, text: Optional[str]) -> Optional[float]:
        params = {"key": self.key} if self.key else None
        for attempt in range(self.retries + 1):
            try:
                r = self.session.post(self.endpoint, json={"text": text or ""},
                                      params=params, timeout=self.timeout)
                r.raise_for_status()
                return self._extract(r.json())
            except Exception as exc:  # network, HTTP, or payload errors all retry
                if attempt == self.retries:
                    log.warning("scoring failed after %d attempts: %s", attempt + 1, exc)
                    self.failures += 1
                    return None
                time.sleep(self.backoff * 2 ** attempt)
        return None

    def score_batch(self, texts: Sequence[Optional[str]]) -> list:
        if self.max_in_flight <= 1:
            return [self.score(t) for t in texts]
        with ThreadPoolExecutor(self.max_in_flight) as pool:
            return list(pool.map(self.score, texts))
