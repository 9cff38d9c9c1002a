"""Hot numeric kernels for tree fitting and prediction.

Each kernel has a numba-compiled loop version and a vectorized numpy version
with identical semantics. Set ``EDGETRAN_NUMBA=0`` to force the numpy path
(numba is also skipped automatically when it cannot be imported).
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("EDGETRAN_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")


# ---------------------------------------------------------------------------
# level-wise histogram tree growth
#
# Features arrive pre-binned as integer codes; a split at bin ``b`` of feature
# ``f`` sends ``code <= b`` left. Both versions accumulate sums in sample order
# so they produce bit-identical trees. Ties go to the lowest feature, then the
# lowest bin.

MIN_GAIN = 1e-15


def grow_tree_numpy(codes, y, n_bins, max_bins, max_depth, min_leaf):
    """Grow one least-squares tree; returns ``(feature, bin, left, right, value)``."""
    n, d = codes.shape
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, dtype=np.int64)
    split_bin = np.zeros(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    node_of = np.zeros(n, dtype=np.int64)
    n_nodes, lo, hi = 1, 0, 1
    bin_ok = np.arange(max_bins)[None, :] < (n_bins[:, None] - 1)
    for depth in range(max_depth + 1):
        m = hi - lo
        rel = node_of - lo
        act = (rel >= 0) & (rel < m)
        r = rel[act]
        cnt = np.bincount(r, minlength=m).astype(np.float64)
        sm = np.bincount(r, weights=y[act], minlength=m)
        value[lo:hi] = sm / np.maximum(cnt, 1.0)
        if depth == max_depth:
            break
        ca = codes[act]
        flat = (r[:, None] * d + np.arange(d)[None, :]) * max_bins + ca
        size = m * d * max_bins
        hs = np.bincount(flat.ravel(), weights=np.repeat(y[act], d), minlength=size).reshape(m, d, max_bins)
        hc = np.bincount(flat.ravel(), minlength=size).astype(np.float64).reshape(m, d, max_bins)
        sl = np.cumsum(hs, axis=2)
        nl = np.cumsum(hc, axis=2)
        tot = sm[:, None, None]
        nt = cnt[:, None, None]
        nr = nt - nl
        with np.errstate(divide="ignore", invalid="ignore"):
            sr = tot - sl
            gain = sl * sl / nl + sr * sr / nr - tot * tot / nt
        ok = bin_ok[None] & (nl >= min_leaf) & (nr >= min_leaf) & (nt >= 2 * min_leaf)
        gain = np.where(ok, gain, -np.inf).reshape(m, -1)
        start = n_nodes
        for k in range(m):
            j = int(np.argmax(gain[k]))
            if gain[k, j] > MIN_GAIN:
                node = lo + k
                feature[node], split_bin[node] = divmod(j, max_bins)
                left[node] = n_nodes
                right[node] = n_nodes + 1
                n_nodes += 2
        if n_nodes == start:
            break
        inner = act & (feature[np.clip(node_of, 0, cap - 1)] >= 0)
        idx = np.nonzero(inner)[0]
        nd = node_of[idx]
        go_left = codes[idx, feature[nd]] <= split_bin[nd]
        node_of[idx] = np.where(go_left, left[nd], right[nd])
        lo, hi = start, n_nodes
    return feature[:n_nodes], split_bin[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def _grow_tree_loop(codes, y, n_bins, max_bins, max_depth, min_leaf):
    n, d = codes.shape
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, dtype=np.int64)
    split_bin = np.zeros(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    node_of = np.zeros(n, dtype=np.int64)
    n_nodes = 1
    lo = 0
    hi = 1
    for depth in range(max_depth + 1):
        m = hi - lo
        cnt = np.zeros(m)
        sm = np.zeros(m)
        for i in range(n):
            k = node_of[i] - lo
            if k >= 0 and k < m:
                cnt[k] += 1.0
                sm[k] += y[i]
        for k in range(m):
            value[lo + k] = sm[k] / max(cnt[k], 1.0)
        if depth == max_depth:
            break
        hs = np.zeros((m, d, max_bins))
        hc = np.zeros((m, d, max_bins))
        for i in range(n):
            k = node_of[i] - lo
            if k >= 0 and k < m:
                for f in range(d):
                    b = codes[i, f]
                    hs[k, f, b] += y[i]
                    hc[k, f, b] += 1.0
        start = n_nodes
        for k in range(m):
            nt = cnt[k]
            if nt < 2 * min_leaf:
                continue
            tot = sm[k]
            base = tot * tot / nt
            best_g = -np.inf
            best_f = -1
            best_b = 0
            for f in range(d):
                sl = 0.0
                nl = 0.0
                for b in range(n_bins[f] - 1):
                    sl += hs[k, f, b]
                    nl += hc[k, f, b]
                    nr = nt - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    sr = tot - sl
                    g = sl * sl / nl + sr * sr / nr - base
                    if g > best_g:
                        best_g = g
                        best_f = f
                        best_b = b
            if best_f >= 0 and best_g > MIN_GAIN:
                node = lo + k
                feature[node] = best_f
                split_bin[node] = best_b
                left[node] = n_nodes
                right[node] = n_nodes + 1
                n_nodes += 2
        if n_nodes == start:
            break
        for i in range(n):
            nd = node_of[i]
            if nd >= lo and nd < hi and feature[nd] >= 0:
                if codes[i, feature[nd]] <= split_bin[nd]:
                    node_of[i] = left[nd]
                else:
                    node_of[i] = right[nd]
        lo = start
        hi = n_nodes
    return feature[:n_nodes], split_bin[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


# ---------------------------------------------------------------------------
# prediction over flat tree arrays

def tree_predict_numpy(feature, threshold, left, right, value, X):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while np.any(active):
        f = feature[node]
        go_left = X[rows, np.maximum(f, 0)] <= threshold[node]
        nxt = np.where(go_left, left[node], right[node])
        node = np.where(active, nxt, node)
        active = feature[node] >= 0
    return value[node]


def _tree_predict_loop(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out


def forest_predict_numpy(feature, threshold, left, right, value, roots, X):
    out = np.empty((len(roots), X.shape[0]))
    for t in range(len(roots)):
        r = roots[t]
        end = roots[t + 1] if t + 1 < len(roots) else len(feature)
        f = feature[r:end]
        out[t] = tree_predict_numpy(f, threshold[r:end], left[r:end] - r, right[r:end] - r, value[r:end], X)
    return out


def _forest_predict_loop(feature, threshold, left, right, value, roots, X):
    n_trees = roots.shape[0]
    n = X.shape[0]
    out = np.empty((n_trees, n))
    for t in range(n_trees):
        r = roots[t]
        for i in range(n):
            k = r
            while feature[k] >= 0:
                if X[i, feature[k]] <= threshold[k]:
                    k = left[k]
                else:
                    k = right[k]
            out[t, i] = value[k]
    return out


if numba is not None:
    grow_tree_numba = numba.njit(cache=True)(_grow_tree_loop)
    tree_predict_numba = numba.njit(cache=True)(_tree_predict_loop)
    forest_predict_numba = numba.njit(cache=True)(_forest_predict_loop)
else:  # pragma: no cover
    grow_tree_numba = tree_predict_numba = forest_predict_numba = None


def grow_tree(codes, y, n_bins, max_bins, max_depth, min_leaf):
    if USE_NUMBA:
        return grow_tree_numba(codes, y, n_bins, max_bins, max_depth, min_leaf)
    return grow_tree_numpy(codes, y, n_bins, max_bins, max_depth, min_leaf)


def tree_predict(feature, threshold, left, right, value, X):
    if USE_NUMBA:
        return tree_predict_numba(feature, threshold, left, right, value, X)
    return tree_predict_numpy(feature, threshold, left, right, value, X)


def forest_predict(feature, threshold, left, right, value, roots, X):
    """Per-tree predictions, shape ``(n_trees, n_rows)``.

    Trees are concatenated in the flat arrays; ``roots[t]`` is the offset of
    tree ``t`` and child pointers are absolute offsets.
    """
    if USE_NUMBA:
        return forest_predict_numba(feature, threshold, left, right, value, roots, X)
    return forest_predict_numpy(feature, threshold, left, right, value, roots, X)
