"""Slow, independently coded reference implementations used as test oracles.

Nothing here imports the code under test except plain data containers, so a
bug in the package cannot leak into its own reference values.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


# --- geometry / GNM ---------------------------------------------------------


def kirchhoff_loops(ca: np.ndarray, cutoff: float) -> np.ndarray:
    n = len(ca)
    gamma = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and math.dist(ca[i], ca[j]) <= cutoff:
                gamma[i, j] = -1.0
        gamma[i, i] = -gamma[i].sum()
    return gamma


def pinv_bfactors(gamma: np.ndarray) -> np.ndarray:
    """Raw B-factors as the diagonal of the Moore-Penrose pseudo-inverse."""
    return np.diag(np.linalg.pinv(gamma, rcond=1e-10, hermitian=True)).copy()


def knn_brute(ca: np.ndarray, k: int):
    """Per row: list of ``(j, d)`` sorted by distance, then index."""
    out = []
    for i in range(len(ca)):
        cand = sorted((math.dist(ca[i], ca[j]), j) for j in range(len(ca)) if j != i)
        out.append([(j, d) for d, j in cand[:k]])
    return out


def random_chain(rng: np.random.Generator, length: int, bond: float = 3.8) -> np.ndarray:
    """Plain random walk; consecutive residues always share a contact."""
    steps = rng.normal(size=(length, 3))
    steps /= np.linalg.norm(steps, axis=1, keepdims=True)
    steps[0] = 0.0
    return np.cumsum(bond * steps, axis=0)


# --- labels -----------------------------------------------------------------


def binarize_oracle(scores, quantile):
    """Sort-and-slice: top/bottom ``ceil(q n)`` by rank, tie-straddlers dropped.

    Returns ``{index: label}`` for surviving entries.
    """
    n = len(scores)
    k = math.ceil(Fraction(str(quantile)) * n)
    ranked = sorted(range(n), key=lambda i: scores[i])
    bottom = {ranked[r] for r in range(k)}
    top = {ranked[r] for r in range(n - k, n)}
    out = {}
    for i in range(n):
        s = scores[i]
        in_top = i in top and all(scores[j] != s for j in range(n) if j not in top)
        in_bottom = i in bottom and all(scores[j] != s for j in range(n) if j not in bottom)
        if in_top:
            out[i] = 1
        elif in_bottom:
            out[i] = 0
    return out


# --- metrics ----------------------------------------------------------------


def auroc_pairs(scores, labels) -> float:
    labels = [int(y) for y in labels]
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    credit = Fraction(0)
    for p in pos:
        for q in neg:
            if p > q:
                credit += 1
            elif p == q:
                credit += Fraction(1, 2)
    return float(credit / (len(pos) * len(neg)))


def auprc_thresholds(scores, labels) -> float:
    """Enumerate every distinct threshold from the top; exact rational area."""
    labels = [int(y) for y in labels]
    n_pos = sum(labels)
    area = Fraction(0)
    prev_recall = Fraction(0)
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        n_sel = sum(1 for s in scores if s >= t)
        recall = Fraction(tp, n_pos)
        area += (recall - prev_recall) * Fraction(tp, n_sel)
        prev_recall = recall
    return float(area)


def auprc_enumerate(scores, labels) -> float:
    """Threshold enumeration in float arithmetic, one term per distinct score.

    Each term is ``delta_recall * precision`` evaluated as written, so the
    result must agree bit-for-bit with any implementation of the same sum.
    """
    labels = [int(y) for y in labels]
    n_pos = sum(labels)
    area = 0.0
    prev_tp = 0
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        n_sel = sum(1 for s in scores if s >= t)
        if tp != prev_tp:
            area += (tp - prev_tp) / n_pos * (tp / n_sel)
        prev_tp = tp
    return area


def macro_enumerate(scores, labels, threshold=0.5):
    """Confusion counts by explicit loop, float formulas as defined."""
    labels = [int(y) for y in labels]
    pred = [1 if s >= threshold else 0 for s in scores]
    n = len(labels)
    acc = sum(1 for p, y in zip(pred, labels) if p == y) / n
    prec, rec, f1 = [], [], []
    for c in (0, 1):
        tp = sum(1 for p, y in zip(pred, labels) if p == c and y == c)
        npred = pred.count(c)
        ntrue = labels.count(c)
        p = tp / npred if npred else 0.0
        r = tp / ntrue if ntrue else 0.0
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return acc, (f1[0] + f1[1]) / 2, (rec[0] + rec[1]) / 2, (prec[0] + prec[1]) / 2


def macro_oracle(scores, labels, threshold=0.5):
    labels = [int(y) for y in labels]
    pred = [1 if s >= threshold else 0 for s in scores]
    n = len(labels)
    acc = Fraction(sum(p == y for p, y in zip(pred, labels)), n)
    prec, rec, f1 = [], [], []
    for c in (0, 1):
        tp = sum(1 for p, y in zip(pred, labels) if p == c and y == c)
        npred = pred.count(c)
        ntrue = list(labels).count(c)
        p = Fraction(tp, npred) if npred else Fraction(0)
        r = Fraction(tp, ntrue) if ntrue else Fraction(0)
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else Fraction(0))
    return tuple(float(x) for x in (acc, (f1[0] + f1[1]) / 2, (rec[0] + rec[1]) / 2, (prec[0] + prec[1]) / 2))


def ece_oracle(probs, labels, n_bins=15) -> float:
    """Quantile-binned ECE with an explicit per-item bin walk."""
    n = len(probs)
    items = sorted(range(n), key=lambda i: (probs[i], i))
    bin_of = {}
    for rank, i in enumerate(items):
        b = rank * n_bins // n
        # a tied score keeps the bin of the earliest-ranked equal score
        for prev_rank in range(rank):
            if probs[items[prev_rank]] == probs[i]:
                b = prev_rank * n_bins // n
                break
        bin_of[i] = b
    total = 0.0
    for b in range(n_bins):
        members = [i for i in range(n) if bin_of[i] == b]
        if not members:
            continue
        mp = sum(probs[i] for i in members) / len(members)
        rate = sum(labels[i] for i in members) / len(members)
        total += len(members) / n * abs(mp - rate)
    return total


# --- network pieces ---------------------------------------------------------


def gelu_ref(x):
    return np.vectorize(lambda v: 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))))(x)


def info_nce_loops(z, zp, tau):
    B = len(z)
    zn = [row / np.linalg.norm(row) for row in z]
    zpn = [row / np.linalg.norm(row) for row in zp]
    sim = [[float(np.dot(zn[i], zpn[j])) / tau for j in range(B)] for i in range(B)]
    row = 0.0
    col = 0.0
    for i in range(B):
        row += -sim[i][i] + math.log(sum(math.exp(sim[i][j]) for j in range(B)))
        col += -sim[i][i] + math.log(sum(math.exp(sim[j][i]) for j in range(B)))
    return 0.5 * (row / B + col / B)


def moe_rowwise(z_seq, z_str, z_dyn, params):
    """One row at a time, experts and router written out by hand."""

    def mlp(x, pre):
        h = x @ params[pre + "W1"] + params[pre + "b1"]
        return gelu_ref(h) @ params[pre + "W2"] + params[pre + "b2"]

    fused = []
    weights = []
    for a, b, c in zip(z_seq, z_str, z_dyn):
        f1 = mlp(np.concatenate([a, b]), "expert1.")
        f2 = mlp(np.concatenate([a, c]), "expert2.")
        f3 = mlp(np.concatenate([b, c]), "expert3.")
        f4 = mlp(np.concatenate([a, b, c]), "expert4.")
        logits = mlp(np.concatenate([a, b, c]), "router.")
        e = np.exp(logits - logits.max())
        w = e / e.sum()
        fused.append(w[0] * f1 + w[1] * f2 + w[2] * f3 + w[3] * f4)
        weights.append(w)
    return np.array(fused), np.array(weights)


def central_difference(f, x: np.ndarray, index, h: float = 1e-5) -> float:
    old = x[index]
    x[index] = old + h
    up = f()
    x[index] = old - h
    down = f()
    x[index] = old
    return (up - down) / (2.0 * h)


def relative_error(a, b, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
