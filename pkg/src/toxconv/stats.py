"""Summary statistics shared by the analyses and the feature extractors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

MISSING = float("nan")


@dataclass(frozen=True)
class LogBucketer:
    """Maps nonnegative counts to ``floor(log_base(x))``; zero gets its own bucket."""

    base: float = 2.0

    ZERO = -1

    def __post_init__(self):
        if not self.base > 1:
            raise ValueError("base must be > 1")

    def bucket(self, x) -> int:
        if x < 0:
            raise ValueError("negative value")
        if x < 1:
            return self.ZERO
        b = int(math.floor(math.log(x) / math.log(self.base)))
        # guard against log rounding right at powers of the base
        if self.base ** (b + 1) <= x:
            b += 1
        elif self.base ** b > x:
            b -= 1
        return b

    def lower(self, b: int) -> float:
        return 0.0 if b == self.ZERO else float(self.base ** b)

    def label(self, b: int) -> str:
        if b == self.ZERO:
            return "0"
        return f"[{self.base ** b:g},{self.base ** (b + 1):g})"


def h_index(values) -> int:
    v = sorted(values, reverse=True)
    h = 0
    for i, x in enumerate(v, start=1):
        if x >= i:
            h = i
        else:
            break
    return h


def gini(values) -> float:
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    s = x.sum()
    if n == 0 or s <= 0:
        return 0.0
    idx = np.arange(1, n + 1)
    return float(np.sum((2 * idx - n - 1) * x) / (n * s))


def entropy(values) -> float:
    x = np.asarray(values, dtype=float)
    s = math.fsum(x)
    if x.size == 0 or s <= 0:
        return 0.0
    p = np.sort(x[x > 0]) / s
    return float(max(0.0, -np.sum(p * np.log2(p))))


def proportion_ci(k: int, n: int, level: float = 0.95) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n and n >= 1")
    z = norm.ppf(0.5 + level / 2)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # pin exact boundaries so the interval always contains k/n
    if k == 0:
        lo = 0.0
    if k == n:
        hi = 1.0
    return lo, hi


def mean_ci(values, level: float = 0.95) -> tuple:
    """Student-t interval for a mean; degenerate at the mean for n < 2."""
    from scipy.stats import t as student_t

    x = np.asarray(values, dtype=float)
    m = float(x.mean())
    if x.size < 2:
        return m, m
    se = float(x.std(ddof=1)) / math.sqrt(x.size)
    half = float(student_t.ppf(0.5 + level / 2, x.size - 1)) * se
    return m - half, m + half


def quartiles(values) -> tuple:
    x = np.asarray(values, dtype=float)
    q = np.percentile(x, [25, 50, 75], method="linear")
    return float(q[0]), float(q[1]), float(q[2])


def variance(values) -> float:
    x = np.asarray(values, dtype=float)
    return float(x.var()) if x.size >= 2 else MISSING


def std(values) -> float:
    x = np.asarray(values, dtype=float)
    return float(x.std()) if x.size >= 2 else MISSING


def mean(values) -> float:
    x = np.asarray(values, dtype=float)
    return float(x.mean()) if x.size else MISSING


def summarize(values, which) -> dict:
    """Named summaries of a list of numbers; undefined ones are NaN."""
    # sorted so float sums do not depend on input order
    x = sorted(values, key=lambda v: (math.isnan(v), v)) if values is not None else []
    out = {}
    for w in which:
        if w == "mean":
            out[w] = mean(x)
        elif w == "var":
            out[w] = variance(x)
        elif w == "std":
            out[w] = std(x)
        elif w == "min":
            out[w] = float(min(x)) if x else MISSING
        elif w == "max":
            out[w] = float(max(x)) if x else MISSING
        elif w in ("q1", "median", "q3", "iqr"):
            if not x:
                out[w] = MISSING
            else:
                q1, q2, q3 = quartiles(x)
                out[w] = {"q1": q1, "median": q2, "q3": q3, "iqr": q3 - q1}[w]
        elif w == "hidx":
            out[w] = float(h_index(x))
        elif w == "gini":
            out[w] = gini(x) if x else MISSING
        elif w == "entropy":
            out[w] = entropy(x) if x else MISSING
        elif w == "fpos":
            out[w] = float(np.mean(np.asarray(x) > 0)) if x else MISSING
        elif w == "n":
            out[w] = float(len(x))
        else:
            raise KeyError(w)
    return out
