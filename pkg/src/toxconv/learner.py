"""Gradient-boosted regression trees with a logistic link, plus evaluation harness."""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .stats import mean_ci

DEFAULT_GRID = (10, 25, 50, 100, 500, 1000, 2000, 3000, 5000, 10000)
MODEL_FORMAT = "toxconv-gbrt"
MODEL_VERSION = 1


class SingleClass(ValueError):
    pass


class EmptyData(ValueError):
    pass


class TooFewGroups(ValueError):
    pass


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _log_loss(y, f) -> float:
    # log(1 + e^f) - y f, computed stably
    return float(np.mean(np.logaddexp(0.0, f) - y * f))


@dataclass
class RegressionTree:
    """Array-encoded binary tree; node 0 is the root, ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            rows = np.nonzero(inner)[0]
            x = X[rows, f[inner]]
            nd = node[inner]
            go_left = np.where(np.isnan(x), self.missing_left[nd], x <= self.threshold[nd])
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        def d(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(d(self.left[i]), d(self.right[i]))
        return d(0)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [None if math.isnan(t) else t for t in self.threshold.tolist()],
            "missing_left": self.missing_left.astype(int).tolist(),
            "left": self.left.tolist(), "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "RegressionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray([np.nan if t is None else t for t in d["threshold"]], dtype=float),
            missing_left=np.asarray(d["missing_left"], dtype=bool),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
        )


def _bin_edges(col: np.ndarray, max_bins: int) -> np.ndarray:
    """Candidate split thresholds drawn from the column's own distinct values.

    Thresholds are picked by rank, so any strictly increasing transform of the
    column yields the same partition of the training rows.
    """
    u = np.unique(col)
    if u.size <= 1:
        return np.empty(0)
    if u.size <= max_bins:
        return u[:-1]
    pos = np.unique(np.round(np.linspace(0, u.size - 1, max_bins + 1)[1:-1]).astype(int))
    return u[pos]


class _TreeBuilder:
    """Level-wise histogram tree growth.

    Per-feature bin histograms are laid out end to end (features with no
    usable threshold are skipped) and come from one sparse product per level
    against a one-hot indicator; right children are parent minus left child.
    """

    def __init__(self, codes, thresholds, medians, max_depth, min_samples_leaf):
        n = codes.shape[0]
        self.thresholds = thresholds
        self.medians = medians
        self.max_depth = max_depth
        self.min_leaf = min_samples_leaf
        active = [j for j, t in enumerate(thresholds) if t.size]
        self.active = np.asarray(active, dtype=np.int64)
        self.codes = codes[:, self.active]
        sizes = np.asarray([thresholds[j].size + 1 for j in active], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        total = int(sizes.sum())
        self.first = starts
        self.pos_feature = np.repeat(np.arange(len(active)), sizes)
        self.pos_bin = np.arange(total) - np.repeat(starts, sizes)
        self.sizes = sizes
        # the last bin of each feature has nothing to its right
        self.splittable = self.pos_bin < np.repeat(sizes - 1, sizes)
        n_act = len(active)
        if n_act:
            flat = (self.codes + starts[None, :]).ravel()
            onehot = sparse.csr_matrix(
                (np.ones(flat.size), flat, np.arange(0, flat.size + 1, n_act)),
                shape=(n, total))
            self.onehot = onehot
            self.root_counts = np.asarray(onehot.sum(axis=0)).ravel()
        else:
            self.onehot = None

    def _hist(self, cols):
        return self.onehot.T @ np.column_stack(cols)

    def _best_split(self, s, c):
        cs, cc = np.cumsum(s), np.cumsum(c)
        base_s = np.repeat(np.concatenate([[0.0], cs[self.first[1:] - 1]]), self.sizes)
        base_c = np.repeat(np.concatenate([[0.0], cc[self.first[1:] - 1]]), self.sizes)
        sl, cl = cs - base_s, cc - base_c
        tot_s, tot_c = cs[self.sizes[0] - 1], cc[self.sizes[0] - 1]
        sr, cr = tot_s - sl, tot_c - cl
        ok = (cl >= self.min_leaf - 0.5) & (cr >= self.min_leaf - 0.5) & self.splittable
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(ok, sl * sl / cl + sr * sr / cr - tot_s * tot_s / tot_c, -np.inf)
        k = int(np.argmax(gain))
        g = gain[k]
        if not np.isfinite(g) or g <= 1e-12 * max(1.0, tot_s * tot_s / tot_c):
            return None
        return int(self.pos_feature[k]), int(self.pos_bin[k])

    def build(self, r, h):
        n = self.codes.shape[0]
        feature, threshold, mleft, left, right = [-1], [np.nan], [True], [-1], [-1]
        node_of = np.zeros(n, dtype=np.int64)
        level = {}
        if self.onehot is not None and self.max_depth > 0:
            level = {0: (self.onehot.T @ r, self.root_counts)}
        for _ in range(self.max_depth):
            splits = {}
            for node, (s, c) in level.items():
                if c[: self.sizes[0]].sum() < 2 * self.min_leaf:
                    continue
                sp = self._best_split(s, c)
                if sp is None:
                    continue
                f, b = sp
                col = int(self.active[f])
                thr = float(self.thresholds[col][b])
                feature[node], threshold[node] = col, thr
                mleft[node] = bool(self.medians[col] <= thr)
                for _ in range(2):
                    feature.append(-1)
                    threshold.append(np.nan)
                    mleft.append(True)
                    left.append(-1)
                    right.append(-1)
                ln, rn = len(feature) - 2, len(feature) - 1
                left[node], right[node] = ln, rn
                splits[node] = (f, b, ln, rn)
            if not splits:
                break
            cols = []
            for node, (f, b, ln, rn) in splits.items():
                rows = node_of == node
                go_left = rows & (self.codes[:, f] <= b)
                node_of[go_left] = ln
                node_of[rows & ~go_left] = rn
                cols.append(np.where(go_left, r, 0.0))
                cols.append(go_left.astype(float))
            lh = self._hist(cols)
            nxt = {}
            for i, (node, (f, b, ln, rn)) in enumerate(splits.items()):
                ps, pc = level[node]
                ls, lc = lh[:, 2 * i], lh[:, 2 * i + 1]
                nxt[ln] = (ls, lc)
                nxt[rn] = (ps - ls, pc - lc)
            level = nxt
        n_nodes = len(feature)
        num = np.bincount(node_of, weights=r, minlength=n_nodes)
        den = np.bincount(node_of, weights=h, minlength=n_nodes)
        value = np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 0.0)
        value[np.asarray(feature) >= 0] = 0.0
        return RegressionTree(
            np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
            np.asarray(mleft, dtype=bool), np.asarray(left, dtype=np.int64),
            np.asarray(right, dtype=np.int64), value,
        )


class GradientBoostedTrees(ClassifierMixin, BaseEstimator):
    """Binary classifier: stagewise boosting of depth-limited regression trees on log loss.

    Each stage fits a least-squares tree to the residuals ``y - p`` and sets
    each leaf to a single Newton step.  Missing inputs are imputed with the
    training medians; each split records which side the median falls on and
    routes missing values there at prediction time.

    Parameters
    ----------
    n_estimators : int
        Number of boosting stages.
    learning_rate : float
        Shrinkage applied to every tree.
    max_depth : int
        Depth limit of each tree.
    min_samples_leaf : int
        Minimum training rows in a leaf.
    max_bins : int
        Cap on candidate thresholds per feature.
    """

    def __init__(self, n_estimators=100, learning_rate=0.1, max_depth=3,
                 min_samples_leaf=1, max_bins=255):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_bins = max_bins

    def _validate_X(self, X, fitting=False):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if np.isinf(X).any():
            raise ValueError("X contains infinite values")
        if not fitting and X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def fit(self, X, y):
        X = self._validate_X(X, fitting=True)
        y = np.asarray(y)
        if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
            raise EmptyData("X and y must be nonempty and of equal length")
        if X.shape[0] < 2:
            raise EmptyData("need at least two rows")
        self.classes_, yi = np.unique(y, return_inverse=True)
        if self.classes_.size != 2:
            raise SingleClass(f"need exactly two classes, got {self.classes_.size}")
        yf = yi.astype(float)
        self.n_features_in_ = X.shape[1]

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
            med = np.nanmedian(X, axis=0) if X.size else np.zeros(X.shape[1])
        self.medians_ = np.where(np.isnan(med), 0.0, med)
        Xi = np.where(np.isnan(X), self.medians_[None, :], X)

        thresholds = [_bin_edges(Xi[:, j], self.max_bins) for j in range(X.shape[1])]
        codes = np.empty(Xi.shape, dtype=np.int64)
        for j, t in enumerate(thresholds):
            codes[:, j] = np.searchsorted(t, Xi[:, j], side="left")
        builder = _TreeBuilder(codes, thresholds, self.medians_,
                               self.max_depth, self.min_samples_leaf)

        p0 = yf.mean()
        self.init_ = float(math.log(p0 / (1 - p0)))
        f = np.full(X.shape[0], self.init_)
        self.estimators_ = []
        self.train_loss_ = [_log_loss(yf, f)]
        for _ in range(self.n_estimators):
            p = _sigmoid(f)
            tree = builder.build(yf - p, p * (1 - p))
            self.estimators_.append(tree)
            f = f + self.learning_rate * tree.predict(Xi)
            self.train_loss_.append(_log_loss(yf, f))
        return self

    def staged_decision_function(self, X):
        check_is_fitted(self, "estimators_")
        X = self._validate_X(X)
        f = np.full(X.shape[0], self.init_)
        for tree in self.estimators_:
            f = f + self.learning_rate * tree.predict(X)
            yield f

    def decision_function(self, X):
        check_is_fitted(self, "estimators_")
        X = self._validate_X(X)
        f = np.full(X.shape[0], self.init_)
        for tree in self.estimators_:
            f += self.learning_rate * tree.predict(X)
        return f

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]

    # -- serialization

    def to_dict(self) -> dict:
        check_is_fitted(self, "estimators_")
        return {
            "format": MODEL_FORMAT, "version": MODEL_VERSION,
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "n_features": self.n_features_in_,
            "init": self.init_, "medians": self.medians_.tolist(),
            "trees": [t.to_dict() for t in self.estimators_],
        }

    @classmethod
    def from_dict(cls, d) -> "GradientBoostedTrees":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError("unsupported model dump")
        m = cls(**d["params"])
        m.classes_ = np.asarray(d["classes"])
        m.n_features_in_ = d["n_features"]
        m.init_ = d["init"]
        m.medians_ = np.asarray(d["medians"], dtype=float)
        m.estimators_ = [RegressionTree.from_dict(t) for t in d["trees"]]
        return m

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, s: str) -> "GradientBoostedTrees":
        return cls.from_dict(json.loads(s))


# ---------------------------------------------------------------- metrics


def auc_score(y_true, scores) -> float:
    """Mann-Whitney AUC with mid-ranks for ties."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=float)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    r = rankdata(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def classification_metrics(y_true, scores, threshold=0.5) -> dict:
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=float)
    pred = s > threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return {"accuracy": float(np.mean(pred == y)), "auc": auc_score(y, s), "f1": f1}


# ---------------------------------------------------------------- cross-validation


def group_kfold(groups, n_splits: int, seed: int = 0) -> list:
    """Fold index per row; each group lands in exactly one fold."""
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    if uniq.size < n_splits:
        raise TooFewGroups(f"{uniq.size} groups for {n_splits} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(uniq.size)
    fold_of = {uniq[g]: i % n_splits for i, g in enumerate(perm)}
    return np.array([fold_of[g] for g in groups], dtype=int)


@dataclass
class CVReport:
    folds: list
    mean: dict
    ci: dict
    grid: tuple
    seed: int
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["fold,n_estimators,n_test,accuracy,auc,f1"]
        for f in self.folds:
            lines.append(f"{f['fold']},{f['n_estimators']},{f['n_test']},"
                         f"{f['accuracy']:.6f},{f['auc']:.6f},{f['f1']:.6f}")
        for m in ("accuracy", "auc", "f1"):
            lines.append(f"# {m} mean={self.mean[m]:.6f} ci=({self.ci[m][0]:.6f},{self.ci[m][1]:.6f})")
        return "\n".join(lines) + "\n"


def _staged_accuracy(model, X, y, grid):
    out = {}
    wanted = set(grid)
    for i, f in enumerate(model.staged_decision_function(X), start=1):
        if i in wanted:
            out[i] = float(np.mean((f > 0) == y.astype(bool)))
    return out


def select_n_estimators(X, y, groups, grid, n_splits=5, seed=0, params=None) -> tuple:
    """Inner-loop grid search by grouped CV accuracy; ties go to the smaller value.

    One model with ``max(grid)`` stages is fitted per fold and scored at every
    grid point along its staged predictions.
    """
    params = dict(params or {})
    grid = sorted(set(grid))
    folds = group_kfold(groups, n_splits, seed)
    acc = {g: [] for g in grid}
    for k in range(n_splits):
        tr, te = folds != k, folds == k
        if np.unique(y[tr]).size < 2:
            raise SingleClass("inner training fold has a single class")
        m = GradientBoostedTrees(n_estimators=max(grid), **params).fit(X[tr], y[tr])
        for g, a in _staged_accuracy(m, X[te], y[te], grid).items():
            acc[g].append(a)
    means = {g: float(np.mean(v)) for g, v in acc.items()}
    best = max(grid, key=lambda g: (means[g], -g))
    return best, means


def _outer_fold(args):
    k, X, y, groups, folds, grid, seed, params = args
    tr, te = folds != k, folds == k
    best, inner = select_n_estimators(X[tr], y[tr], groups[tr], grid, 5, seed + 1 + k, params)
    model = GradientBoostedTrees(n_estimators=best, **params).fit(X[tr], y[tr])
    p = model.predict_proba(X[te])[:, 1]
    m = classification_metrics(y[te], p)
    return {"fold": k, "n_estimators": best, "n_test": int(te.sum()),
            "inner_accuracy": {str(g): a for g, a in inner.items()}, **m}


def nested_cv(X, y, groups, grid=DEFAULT_GRID, seed=0, n_outer=10, params=None, workers=1) -> CVReport:
    """Grouped nested cross-validation (outer ``n_outer`` folds, inner 5 folds)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    groups = np.asarray(groups)
    if np.unique(groups).size < n_outer:
        raise TooFewGroups(f"need at least {n_outer} groups")
    folds = group_kfold(groups, n_outer, seed)
    jobs = [(k, X, y, groups, folds, tuple(grid), seed, params or {}) for k in range(n_outer)]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_outer_fold, jobs))
    else:
        results = [_outer_fold(j) for j in jobs]
    mean, ci = {}, {}
    for m in ("accuracy", "auc", "f1"):
        vals = [r[m] for r in results if not math.isnan(r[m])]
        mean[m] = float(np.mean(vals)) if vals else float("nan")
        ci[m] = tuple(mean_ci(vals)) if vals else (float("nan"), float("nan"))
    return CVReport(results, mean, ci, tuple(sorted(set(grid))), seed, dict(params or {}))


def train_test_split_groups(groups, test_fraction=0.2, seed=0):
    """Boolean test mask holding out roughly ``test_fraction`` of the groups."""
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    rng = np.random.default_rng(seed)
    n_test = max(1, int(round(test_fraction * uniq.size)))
    test_groups = set(uniq[rng.permutation(uniq.size)[:n_test]].tolist())
    return np.array([g in test_groups for g in groups.tolist()])


def domain_transfer(Xa, ya, ga, Xb, yb, gb, grid=DEFAULT_GRID, seed=0, params=None) -> dict:
    """Fit on 80% of domain A, score on A's and B's held-out 20%."""
    Xa, Xb = np.asarray(Xa, dtype=float), np.asarray(Xb, dtype=float)
    ya, yb = np.asarray(ya).astype(int), np.asarray(yb).astype(int)
    ga, gb = np.asarray(ga), np.asarray(gb)
    test_a = train_test_split_groups(ga, 0.2, seed)
    test_b = train_test_split_groups(gb, 0.2, seed + 1)
    best, inner = select_n_estimators(Xa[~test_a], ya[~test_a], ga[~test_a], grid, 5, seed, params)
    model = GradientBoostedTrees(n_estimators=best, **(params or {})).fit(Xa[~test_a], ya[~test_a])
    own = classification_metrics(ya[test_a], model.predict_proba(Xa[test_a])[:, 1])
    other = classification_metrics(yb[test_b], model.predict_proba(Xb[test_b])[:, 1])
    return {"n_estimators": best, "inner_accuracy": {str(k): v for k, v in inner.items()},
            "in_domain": own, "cross_domain": other,
            "accuracy_drop": own["accuracy"] - other["accuracy"], "seed": seed}
