"""Deterministic CART classifier (Gini impurity, axis-aligned ``<=`` splits)."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MODEL_SCHEMA_VERSION = 1

# Split scores closer than this (on the impurity scale) count as ties.
TIE_EPS = 1e-12


class EmptyTrainingSet(ValueError):
    pass


class SingleClass(UserWarning):
    pass


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")

    def as_dict(self) -> dict:
        return {"max_depth": self.max_depth, "min_samples_split": self.min_samples_split,
                "min_samples_leaf": self.min_samples_leaf}


@dataclass(frozen=True)
class Node:
    """Internal node when ``feature >= 0``; leaf otherwise."""

    feature: int
    threshold: float
    left: int
    right: int
    label: int
    distribution: tuple

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(frozen=True)
class TreeModel:
    nodes: tuple
    class_order: tuple
    n_features: int
    hyperparams: HyperParams = field(default_factory=HyperParams)
    train_seed: int = 0

    def __post_init__(self):
        n = len(self.nodes)
        object.__setattr__(self, "_feature", np.array([nd.feature for nd in self.nodes], dtype=np.int64))
        object.__setattr__(self, "_threshold", np.array([nd.threshold for nd in self.nodes], dtype=np.float64))
        object.__setattr__(self, "_left", np.array([nd.left for nd in self.nodes], dtype=np.int64))
        object.__setattr__(self, "_right", np.array([nd.right for nd in self.nodes], dtype=np.int64))
        object.__setattr__(self, "_label", np.array([nd.label for nd in self.nodes], dtype=np.int64))
        assert n > 0

    @property
    def depth(self) -> int:
        depth = {0: 0}
        best = 0
        for i, nd in enumerate(self.nodes):
            d = depth[i]
            best = max(best, d)
            if not nd.is_leaf:
                depth[nd.left] = depth[nd.right] = d + 1
        return best

    @property
    def n_leaves(self) -> int:
        return sum(nd.is_leaf for nd in self.nodes)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got shape {X.shape}")
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self._feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self._feature[nd]] <= self._threshold[nd]
            node[r] = np.where(go_left, self._left[nd], self._right[nd])
            active = self._feature[node] >= 0
        return node

    def predict_codes(self, X: np.ndarray) -> np.ndarray:
        return self._label[self.apply(X)]

    def predict(self, X: np.ndarray) -> list:
        return [self.class_order[c] for c in self.predict_codes(X)]

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "kind": "cart-gini",
            "n_features": self.n_features,
            "class_order": list(self.class_order),
            "hyperparams": self.hyperparams.as_dict(),
            "train_seed": self.train_seed,
            "nodes": [
                {"feature": nd.feature, "threshold": nd.threshold, "left": nd.left, "right": nd.right,
                 "label": nd.label, "distribution": list(nd.distribution)}
                for nd in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        if d.get("schema_version") != MODEL_SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported model schema {d.get('schema_version')!r}")
        nodes = tuple(Node(int(n["feature"]), float(n["threshold"]), int(n["left"]), int(n["right"]),
                           int(n["label"]), tuple(int(v) for v in n["distribution"])) for n in d["nodes"])
        return cls(nodes, tuple(d["class_order"]), int(d["n_features"]),
                   HyperParams(**d["hyperparams"]), int(d["train_seed"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def loads(cls, s: str) -> "TreeModel":
        return cls.from_dict(json.loads(s))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TreeModel":
        with open(path) as fh:
            return cls.loads(fh.read())


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.dot(p, p))


def _best_split(X: np.ndarray, y: np.ndarray, k: int, min_leaf: int):
    """Return (feature, threshold, gain) of the best split, or None.

    Score per candidate is sum over children of sum_k n_ck^2 / n_c, which
    is n * (1 - weighted child Gini); maximizing it minimizes the weighted
    child impurity. Candidates are scanned on the per-feature histogram of
    distinct values, so cost scales with the number of distinct values.
    """
    n, f = X.shape
    counts = np.bincount(y, minlength=k).astype(np.float64)
    parent_score = np.dot(counts, counts) / n
    best = None
    per_feature = []
    for j in range(f):
        uniq, inv = np.unique(X[:, j], return_inverse=True)
        u = len(uniq)
        if u < 2:
            per_feature.append(None)
            continue
        hist = np.bincount(inv.ravel() * k + y, minlength=u * k).reshape(u, k).astype(np.float64)
        left = np.cumsum(hist, axis=0)[:-1]
        right = counts - left
        n_left = left.sum(1)
        n_right = n - n_left
        valid = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            per_feature.append(None)
            continue
        score = np.full(u - 1, -np.inf)
        lv, rv = left[valid], right[valid]
        score[valid] = (lv * lv).sum(1) / n_left[valid] + (rv * rv).sum(1) / n_right[valid]
        per_feature.append((score, uniq))
        top = score.max()
        if best is None or top > best:
            best = top
    if best is None:
        return None
    gain = (best - parent_score) / n
    if gain <= TIE_EPS:
        return None
    floor = best - TIE_EPS * n
    for j, entry in enumerate(per_feature):
        if entry is None:
            continue
        score, uniq = entry
        hits = np.flatnonzero(score >= floor)
        if hits.size:
            i = int(hits[0])
            lo, hi = float(uniq[i]), float(uniq[i + 1])
            thr = (lo + hi) / 2.0
            if not lo <= thr < hi:
                thr = lo
            return j, thr, gain
    raise AssertionError("unreachable")


def _majority(counts: np.ndarray) -> int:
    # argmax returns the first maximum, i.e. the earliest class in class_order
    return int(np.argmax(counts))


def fit(X, y: Sequence, hp: Optional[HyperParams] = None, seed: int = 0,
        class_order: Optional[Sequence] = None) -> TreeModel:
    """Grow an unpruned Gini tree on rows of ``X`` labelled ``y``.

    Ties between equally good splits go to the lowest feature index, then
    the lowest threshold. Leaf labels are the majority class, ties going to
    the class listed first in ``class_order`` (default: sorted labels).
    Growth does not depend on randomness; ``seed`` is recorded only.
    """
    hp = hp or HyperParams()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SchemaMismatch("X must be 2-dimensional")
    y = list(y)
    if len(y) == 0 or len(X) == 0:
        raise EmptyTrainingSet("no training samples")
    if len(y) != len(X):
        raise ValueError("X and y lengths differ")
    if np.isnan(X).any():
        raise ValueError("NaN in training features")
    if class_order is None:
        class_order = sorted(set(y))
    index = {c: i for i, c in enumerate(class_order)}
    codes = np.array([index[v] for v in y], dtype=np.int64)
    k = len(class_order)
    if len(set(codes.tolist())) < 2:
        warnings.warn("training data holds a single class; returning a one-leaf tree", SingleClass)

    nodes: list = []
    # (row indices, depth, parent id, is_left)
    stack = [(np.arange(len(X)), 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        counts = np.bincount(codes[idx], minlength=k)
        me = len(nodes)
        nodes.append(None)
        if parent >= 0:
            p = nodes[parent]
            nodes[parent] = p[:2] + ((me, p[3]) if is_left else (p[2], me)) + p[4:]
        split = None
        n = len(idx)
        if (np.count_nonzero(counts) > 1 and n >= hp.min_samples_split
                and (hp.max_depth is None or depth < hp.max_depth)
                and n >= 2 * hp.min_samples_leaf):
            split = _best_split(X[idx], codes[idx], k, hp.min_samples_leaf)
        dist = tuple(int(c) for c in counts)
        if split is None:
            nodes[me] = (-1, 0.0, -1, -1, _majority(counts), dist)
            continue
        j, thr, _gain = split
        nodes[me] = (j, thr, -1, -1, _majority(counts), dist)
        mask = X[idx, j] <= thr
        # push right first so the left subtree is numbered next (preorder)
        stack.append((idx[~mask], depth + 1, me, False))
        stack.append((idx[mask], depth + 1, me, True))
    return TreeModel(tuple(Node(*t) for t in nodes), tuple(class_order), X.shape[1], hp, seed)


def predict(model: TreeModel, X) -> list:
    return model.predict(X)
