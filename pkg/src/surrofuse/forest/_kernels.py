"""Compiled tree growing and prediction.

Trees are stored as rows of 2-D arrays (tree index x node index). A node with
``feature == -1`` is a leaf. Children always carry larger node ids than their
parent, so a single forward pass can propagate values top-down.

Besides a per-tree leaf value, every node keeps the honest means of the
moments a causal or instrumental fit needs. Forest predictions in those modes
solve the local moment equation on the tree-averaged moments, which is the
forest-weighted estimate, rather than averaging per-tree ratios.
"""

from __future__ import annotations

import numpy as np
from numba import njit

REGRESSION = 0
CAUSAL = 1
INSTRUMENTAL = 2

DENOM_EPS = 1e-8
# per-node honest means of y, w, z, y*z, w*z
N_MOMENTS = 5

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def counter_uniform(seed, counter):
    """Uniform [0, 1) draw number ``counter`` of the stream keyed by ``seed``."""
    z = _mix(seed ^ _mix(np.uint64(counter)))
    return np.float64(z >> _S11) * _INV53


@njit(cache=True)
def counter_uniforms(seed, start, count):
    out = np.empty(count)
    for k in range(count):
        out[k] = counter_uniform(seed, start + k)
    return out


@njit(cache=True)
def _pseudo_outcome(mode, idx, y, w, z, rho):
    """Fill ``rho`` for the node units; return False if the node is degenerate."""
    n = idx.shape[0]
    if mode == REGRESSION:
        for k in range(n):
            rho[k] = y[idx[k]]
        return True
    ybar = 0.0
    wbar = 0.0
    zbar = 0.0
    for k in range(n):
        ybar += y[idx[k]]
        wbar += w[idx[k]]
        zbar += z[idx[k]]
    ybar /= n
    wbar /= n
    zbar /= n
    num = 0.0
    den = 0.0
    for k in range(n):
        i = idx[k]
        if mode == CAUSAL:
            num += (w[i] - wbar) * (y[i] - ybar)
            den += (w[i] - wbar) * (w[i] - wbar)
        else:
            num += (z[i] - zbar) * (y[i] - ybar)
            den += (z[i] - zbar) * (w[i] - wbar)
    if abs(den) < 1e-12:
        return False
    slope = num / den
    for k in range(n):
        i = idx[k]
        resid = (y[i] - ybar) - (w[i] - wbar) * slope
        if mode == CAUSAL:
            rho[k] = (w[i] - wbar) * resid
        else:
            rho[k] = (z[i] - zbar) * resid
    return True


@njit(cache=True)
def _grow_one(X, y, w, z, arm, mode, seed, n_sub, n_split, min_leaf, min_arm, alpha, mtry,
              root_value, feat, thr, left, right, val, mom, sub_out):
    n, p = X.shape
    keys = counter_uniforms(seed, 0, n)
    order = np.argsort(keys)
    sub = order[:n_sub].copy()
    for k in range(n_sub):
        sub_out[k] = sub[k]
    work = sub[:n_split].copy()
    honest = sub[n_split:]

    max_nodes = feat.shape[0]
    parent = np.full(max_nodes, -1, dtype=np.int64)
    stack_node = np.empty(max_nodes, dtype=np.int64)
    stack_lo = np.empty(max_nodes, dtype=np.int64)
    stack_hi = np.empty(max_nodes, dtype=np.int64)
    rho = np.empty(n_split)
    vals = np.empty(n_split)
    tmp = np.empty(n_split, dtype=np.int64)
    fkeys = np.empty(p)

    for k in range(max_nodes):
        feat[k] = -1
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n_split
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        cnt = hi - lo
        if cnt < 2 * min_leaf:
            continue
        idx = work[lo:hi]
        r = rho[:cnt]
        if not _pseudo_outcome(mode, idx, y, w, z, r):
            continue
        total = 0.0
        total_sq = 0.0
        arm_ones = 0
        for k in range(cnt):
            total += r[k]
            total_sq += r[k] * r[k]
            if arm[idx[k]] > 0.5:
                arm_ones += 1
        parent_score = total * total / cnt
        # each child keeps at least a share alpha of the node
        min_child = max(min_leaf, int(np.ceil(alpha * cnt)))
        tol = 1e-10 * total_sq + 1e-300

        for j in range(p):
            fkeys[j] = counter_uniform(seed, n + node * p + j)
        cand = np.sort(np.argsort(fkeys)[:mtry])

        best_score = parent_score + tol
        best_f = -1
        best_t = 0.0
        v = vals[:cnt]
        for f in cand:
            for k in range(cnt):
                v[k] = X[idx[k], f]
            o = np.argsort(v, kind="mergesort")
            s_left = 0.0
            ones_left = 0
            for k in range(cnt - 1):
                s_left += r[o[k]]
                if arm[idx[o[k]]] > 0.5:
                    ones_left += 1
                n_left = k + 1
                n_right = cnt - n_left
                if n_left < min_child:
                    continue
                if n_right < min_child:
                    break
                if not v[o[k]] < v[o[k + 1]]:
                    continue
                if mode != REGRESSION:
                    # both arms of the treatment (instrument) need min_arm units
                    ones_right = arm_ones - ones_left
                    if (ones_left < min_arm or n_left - ones_left < min_arm
                            or ones_right < min_arm or n_right - ones_right < min_arm):
                        continue
                s_right = total - s_left
                score = s_left * s_left / n_left + s_right * s_right / n_right
                if score > best_score:
                    best_score = score
                    best_f = f
                    best_t = 0.5 * (v[o[k]] + v[o[k + 1]])
        if best_f < 0:
            continue

        # stable partition of work[lo:hi]
        n_left = 0
        for k in range(cnt):
            if X[idx[k], best_f] <= best_t:
                tmp[n_left] = idx[k]
                n_left += 1
        m = n_left
        for k in range(cnt):
            if not X[idx[k], best_f] <= best_t:
                tmp[m] = idx[k]
                m += 1
        for k in range(cnt):
            work[lo + k] = tmp[k]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feat[node] = best_f
        thr[node] = best_t
        left[node] = lc
        right[node] = rc
        parent[lc] = node
        parent[rc] = node
        stack_node[top] = rc
        stack_lo[top] = lo + n_left
        stack_hi[top] = hi
        top += 1
        stack_node[top] = lc
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left
        top += 1

    # honest moments per node: count, y, w, z, y*z, w*z (z = w for causal)
    acc = np.zeros((n_nodes, N_MOMENTS + 1))
    for k in range(honest.shape[0]):
        i = honest[k]
        node = 0
        while True:
            acc[node, 0] += 1.0
            acc[node, 1] += y[i]
            acc[node, 2] += w[i]
            acc[node, 3] += z[i]
            acc[node, 4] += y[i] * z[i]
            acc[node, 5] += w[i] * z[i]
            if feat[node] < 0:
                break
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
    # top-down fill; an empty or degenerate node inherits its parent's values
    for node in range(n_nodes):
        cnt = acc[node, 0]
        if mode == REGRESSION:
            ok = cnt > 0.0
        else:
            ok = cnt > 0.0 and abs(acc[node, 5]) >= DENOM_EPS
        if ok:
            for m in range(N_MOMENTS):
                mom[node, m] = acc[node, m + 1] / cnt
            if mode == REGRESSION:
                val[node] = acc[node, 1] / cnt
            else:
                val[node] = acc[node, 4] / acc[node, 5]
        elif node == 0:
            val[node] = root_value
            if cnt > 0.0:
                for m in range(N_MOMENTS):
                    mom[node, m] = acc[node, m + 1] / cnt
        else:
            val[node] = val[parent[node]]
            for m in range(N_MOMENTS):
                mom[node, m] = mom[parent[node], m]
    return n_nodes


@njit(cache=True, nogil=True)
def grow_trees(X, y, w, z, arm, mode, tree_seeds, n_sub, n_split, min_leaf,
               min_arm, alpha, mtry, max_nodes, root_value):
    n_trees = tree_seeds.shape[0]
    feat = np.full((n_trees, max_nodes), -1, dtype=np.int64)
    thr = np.zeros((n_trees, max_nodes))
    left = np.full((n_trees, max_nodes), -1, dtype=np.int64)
    right = np.full((n_trees, max_nodes), -1, dtype=np.int64)
    val = np.zeros((n_trees, max_nodes))
    mom = np.zeros((n_trees, max_nodes, N_MOMENTS))
    n_nodes = np.zeros(n_trees, dtype=np.int64)
    sub = np.empty((n_trees, n_sub), dtype=np.int64)
    for t in range(n_trees):
        n_nodes[t] = _grow_one(
            X, y, w, z, arm, mode, tree_seeds[t], n_sub, n_split, min_leaf,
            min_arm, alpha, mtry, root_value, feat[t], thr[t], left[t], right[t], val[t],
            mom[t], sub[t],
        )
    return feat, thr, left, right, val, mom, n_nodes, sub


@njit(cache=True, nogil=True)
def predict_each(Xq, feat, thr, left, right, val):
    nq = Xq.shape[0]
    n_trees = feat.shape[0]
    out = np.empty((nq, n_trees))
    for q in range(nq):
        for t in range(n_trees):
            node = 0
            while feat[t, node] >= 0:
                if Xq[q, feat[t, node]] <= thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[q, t] = val[t, node]
    return out


@njit(cache=True, nogil=True)
def predict_mean(Xq, feat, thr, left, right, val):
    nq = Xq.shape[0]
    n_trees = feat.shape[0]
    out = np.empty(nq)
    for q in range(nq):
        acc = 0.0
        for t in range(n_trees):
            node = 0
            while feat[t, node] >= 0:
                if Xq[q, feat[t, node]] <= thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += val[t, node]
        out[q] = acc / n_trees
    return out


@njit(cache=True, nogil=True)
def predict_moments(Xq, feat, thr, left, right, mom):
    """Forest-averaged honest leaf moments, shape (n, N_MOMENTS)."""
    nq = Xq.shape[0]
    n_trees = feat.shape[0]
    out = np.zeros((nq, N_MOMENTS))
    for q in range(nq):
        for t in range(n_trees):
            node = 0
            while feat[t, node] >= 0:
                if Xq[q, feat[t, node]] <= thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            for m in range(N_MOMENTS):
                out[q, m] += mom[t, node, m]
        for m in range(N_MOMENTS):
            out[q, m] /= n_trees
    return out
