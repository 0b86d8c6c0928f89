"""Pure-numpy tree-growth kernel.

Fallback for the compiled extension. Both kernels implement the same
algorithm with the same arithmetic: sums are accumulated sequentially
(np.cumsum matches a C accumulation loop bit for bit, np.sum does not),
sorts are stable, and the split comparison uses the same epsilon rule,
so a fixed RNG state yields identical trees on either backend.

Data layout: features arrive as a dense float64 matrix where categorical
columns hold level codes 0..L-1 (L <= 64) and unseen levels are coded -1
at prediction time.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(state):
    """Advance a splitmix64 state; returns (new_state, value)."""
    state = (state + _GOLDEN) & _M64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _M64
    z = ((z ^ (z >> 27)) * _MIX2) & _M64
    z = z ^ (z >> 31)
    return state, z


def derive_stream(seed, index):
    """Stream state for sub-stream `index` of `seed` (hash of the pair)."""
    state = (seed ^ ((index + 1) * _MIX1)) & _M64
    state, _ = splitmix64(state)
    state, _ = splitmix64(state)
    return state


def _seq_sum(values):
    # cumsum is sequential, matching the compiled kernel's accumulation order
    if len(values) == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def _node_stats(yv):
    n = len(yv)
    mean = _seq_sum(yv) / n
    sse = _seq_sum((yv - mean) ** 2)
    return mean, sse


def _pick_sequential(red, eps):
    """Index chosen by a left-to-right scan keeping the current best and
    replacing it only on an improvement greater than eps (first wins ties).
    Vectorized equivalent: the last index whose value exceeds the running
    max of everything before it by more than eps."""
    cm = np.maximum.accumulate(red)
    prev = np.concatenate(([-np.inf], cm[:-1]))
    repl = np.nonzero(red > prev + eps)[0]
    return int(repl[-1])


def _scan_numeric(xv, yv, min_leaf, parent_sse, eps):
    m = len(yv)
    order = np.argsort(xv, kind="stable")
    xs = xv[order]
    ys = yv[order]
    cs = np.cumsum(ys)
    css = np.cumsum(ys * ys)
    total_s = cs[-1]
    total_ss = css[-1]
    nl = np.arange(1, m)
    cut = (xs[:-1] != xs[1:]) & (nl >= min_leaf) & (m - nl >= min_leaf)
    idx = np.nonzero(cut)[0]
    if len(idx) == 0:
        return None
    sl = cs[idx]
    ssl = css[idx]
    nL = idx + 1.0
    nR = m - nL
    sse_l = np.maximum(ssl - sl * sl / nL, 0.0)
    sse_r = np.maximum((total_ss - ssl) - (total_s - sl) ** 2 / nR, 0.0)
    red = parent_sse - (sse_l + sse_r)
    best = _pick_sequential(red, eps)
    if red[best] <= eps:
        return None
    i = idx[best]
    thr = (xs[i] + xs[i + 1]) / 2.0
    return float(red[best]), float(thr), 0, 0, int(i + 1)


def _scan_categorical(xv, yv, n_levels, min_leaf, parent_sse, eps):
    codes = xv.astype(np.int64)
    cnt = np.bincount(codes, minlength=n_levels).astype(np.int64)
    sums = np.zeros(n_levels)
    np.add.at(sums, codes, yv)
    present = np.nonzero(cnt > 0)[0]
    if len(present) < 2:
        return None
    obs_mask = 0
    for c in present:
        obs_mask |= 1 << int(c)
    means = sums[present] / cnt[present]
    order = present[np.lexsort((present, means))]
    c_cnt = np.cumsum(cnt[order])
    c_sum = np.cumsum(sums[order])
    total_n = c_cnt[-1]
    total_s = c_sum[-1]
    total_ss = _seq_sum(yv * yv)
    # within-level sum of squares is shared by both sides; split on level sets
    nL = c_cnt[:-1].astype(float)
    nR = total_n - nL
    ok = (nL >= min_leaf) & (nR >= min_leaf)
    idx = np.nonzero(ok)[0]
    if len(idx) == 0:
        return None
    sl = c_sum[idx]
    sse_l = -sl * sl / nL[idx]
    sse_r = -((total_s - sl) ** 2) / nR[idx]
    # add total_ss once: sse_l + sse_r = total_ss - sl^2/nL - sr^2/nR
    red = parent_sse - (total_ss + sse_l + sse_r)
    best = _pick_sequential(red, eps)
    if red[best] <= eps:
        return None
    k = idx[best]
    left_mask = 0
    for c in order[:k + 1]:
        left_mask |= 1 << int(c)
    return float(red[best]), 0.0, left_mask, obs_mask, int(c_cnt[k])


def best_split_feature(xv, yv, is_cat, n_levels, min_leaf, parent_sse):
    """Best admissible split of one feature over gathered node rows.

    Returns (reduction, threshold, left_mask, obs_mask, n_left) or None.
    """
    xv = np.ascontiguousarray(xv, dtype=np.float64)
    yv = np.ascontiguousarray(yv, dtype=np.float64)
    eps = 1e-12 * max(1.0, parent_sse)
    if is_cat:
        return _scan_categorical(xv, yv, n_levels, min_leaf, parent_sse, eps)
    return _scan_numeric(xv, yv, min_leaf, parent_sse, eps)


def _sample_features(p, mtry, state):
    pool = list(range(p))
    for i in range(mtry):
        state, z = splitmix64(state)
        j = i + z % (p - i)
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:mtry]), state


def grow_tree(X, is_cat, n_levels, y, rows, max_depth, min_split, min_leaf,
              mtry, rng_state):
    """Grow one least-squares regression tree; returns flat node arrays.

    `rows` is the training multiset (row indices, repeats allowed). Nodes
    are numbered in preorder, left child first. mtry <= 0 or >= p uses all
    features (consuming no randomness).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    work = np.array(rows, dtype=np.int32)
    m = len(work)
    p = X.shape[1]
    sample = 0 < mtry < p
    cap = 2 * m + 1

    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left_mask = np.zeros(cap, dtype=np.uint64)
    obs_mask = np.zeros(cap, dtype=np.uint64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    n_arr = np.zeros(cap, dtype=np.int32)
    mean = np.zeros(cap)
    sse = np.zeros(cap)

    n_nodes = 0
    state = rng_state
    # explicit preorder stack: (a, b, depth, parent, is_left)
    stack = [(0, m, 0, -1, False)]
    while stack:
        a, b, depth, parent, is_left = stack.pop()
        nid = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left:
                left[parent] = nid
            else:
                right[parent] = nid
        seg = work[a:b]
        yv = y[seg]
        node_mean, node_sse = _node_stats(yv)
        n_arr[nid] = b - a
        mean[nid] = node_mean
        sse[nid] = node_sse

        if not (b - a >= min_split and depth < max_depth and node_sse > 0.0):
            continue
        if sample:
            feats, state = _sample_features(p, mtry, state)
        else:
            feats = range(p)
        eps = 1e-12 * max(1.0, node_sse)
        best = None  # (red, f, thr, lmask, omask, n_left)
        run_max = -np.inf
        for f in feats:
            xv = X[seg, f]
            res = best_split_feature(xv, yv, bool(is_cat[f]), int(n_levels[f]),
                                     min_leaf, node_sse)
            if res is None:
                continue
            red = res[0]
            if red > run_max + eps:
                best = (red, f) + res[1:]
            run_max = max(run_max, red)
        if best is None:
            continue
        _, f, thr, lmask, omask, n_left = best
        xv = X[seg, f]
        if is_cat[f]:
            go_left = (np.uint64(lmask) >> xv.astype(np.uint64)) & np.uint64(1)
            go_left = go_left.astype(bool)
        else:
            go_left = xv <= thr
        # stable partition keeps relative order on both sides
        new_seg = np.concatenate([seg[go_left], seg[~go_left]])
        work[a:b] = new_seg
        feature[nid] = f
        threshold[nid] = thr
        left_mask[nid] = lmask
        obs_mask[nid] = omask
        split_at = a + n_left
        # push right first so the left child is processed next (preorder)
        stack.append((split_at, b, depth + 1, nid, False))
        stack.append((a, split_at, depth + 1, nid, True))

    return dict(
        feature=feature[:n_nodes].copy(),
        threshold=threshold[:n_nodes].copy(),
        left_mask=left_mask[:n_nodes].copy(),
        obs_mask=obs_mask[:n_nodes].copy(),
        left=left[:n_nodes].copy(),
        right=right[:n_nodes].copy(),
        n=n_arr[:n_nodes].copy(),
        mean=mean[:n_nodes].copy(),
        sse=sse[:n_nodes].copy(),
    )


def predict_rows(nodes, Xq, is_cat):
    """Route query rows through flat node arrays; returns predictions."""
    feature = nodes["feature"]
    threshold = nodes["threshold"]
    left_mask = nodes["left_mask"]
    obs_mask = nodes["obs_mask"]
    left = nodes["left"]
    right = nodes["right"]
    n_arr = nodes["n"]
    mean = nodes["mean"]
    Xq = np.ascontiguousarray(Xq, dtype=np.float64)
    out = np.empty(len(Xq))
    for i in range(len(Xq)):
        nid = 0
        while feature[nid] >= 0:
            f = feature[nid]
            if is_cat[f]:
                code = int(Xq[i, f])
                if 0 <= code < 64 and (int(obs_mask[nid]) >> code) & 1:
                    go_left = (int(left_mask[nid]) >> code) & 1
                else:
                    # unseen level: follow the larger child, ties to the left
                    go_left = n_arr[left[nid]] >= n_arr[right[nid]]
            else:
                go_left = Xq[i, f] <= threshold[nid]
            nid = left[nid] if go_left else right[nid]
        out[i] = mean[nid]
    return out
