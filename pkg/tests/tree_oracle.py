"""Exhaustive-split CART oracle in exact rational arithmetic.

Written from the split rule alone (weighted Gini, midpoints between distinct
sorted values, ties by lowest feature then lowest threshold, majority leaves
with ties to the first class) without sharing code with the library.
"""
from fractions import Fraction


def gini(labels, classes):
    n = len(labels)
    if n == 0:
        return Fraction(0)
    return 1 - sum(Fraction(labels.count(c), n) ** 2 for c in classes)


def majority(labels, classes):
    best = classes[0]
    for c in classes:
        if labels.count(c) > labels.count(best):
            best = c
    return best


def best_split(rows, labels, classes, min_leaf):
    n = len(rows)
    parent = gini(labels, classes)
    best = None  # (weighted impurity, feature, threshold)
    for j in range(len(rows[0])):
        values = sorted(set(r[j] for r in rows))
        for lo, hi in zip(values, values[1:]):
            thr = (Fraction(lo) + Fraction(hi)) / 2
            left = [lab for r, lab in zip(rows, labels) if r[j] <= thr]
            right = [lab for r, lab in zip(rows, labels) if r[j] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            w = Fraction(len(left), n) * gini(left, classes) + Fraction(len(right), n) * gini(right, classes)
            # strict improvement only: earlier (feature, threshold) wins ties
            if best is None or w < best[0]:
                best = (w, j, thr)
    if best is None or parent - best[0] <= 0:
        return None
    return best


def build(rows, labels, classes, max_depth=None, min_split=2, min_leaf=1):
    """Nodes in preorder as (feature, threshold, left, right, label, distribution)."""
    nodes = []

    def grow(rows, labels, depth):
        me = len(nodes)
        nodes.append(None)
        dist = tuple(labels.count(c) for c in classes)
        label = classes.index(majority(labels, classes))
        split = None
        if (len(set(labels)) > 1 and len(rows) >= min_split and (max_depth is None or depth < max_depth)):
            split = best_split(rows, labels, classes, min_leaf)
        if split is None:
            nodes[me] = (-1, 0.0, -1, -1, label, dist)
            return me
        _, j, thr = split
        li = [i for i, r in enumerate(rows) if r[j] <= thr]
        ri = [i for i, r in enumerate(rows) if r[j] > thr]
        left = grow([rows[i] for i in li], [labels[i] for i in li], depth + 1)
        right = grow([rows[i] for i in ri], [labels[i] for i in ri], depth + 1)
        nodes[me] = (j, float(thr), left, right, label, dist)
        return me

    grow(rows, labels, 0)
    return nodes


def predict(nodes, classes, x):
    i = 0
    while nodes[i][0] >= 0:
        f, thr, left, right = nodes[i][:4]
        i = left if x[f] <= thr else right
    return classes[nodes[i][4]]
