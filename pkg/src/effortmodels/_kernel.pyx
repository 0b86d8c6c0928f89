# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled tree-growth kernel.

Mirrors _kernel_py exactly: sequential accumulation, stable sorts, the same
epsilon comparison rule and RNG stream, so trees are bit-identical across
backends for a fixed state.
"""
from libc.stdlib cimport malloc, free, qsort
from libc.math cimport INFINITY

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

cdef extern from *:
    """
    typedef struct { double x; int idx; } em_xpair;
    static int em_cmp_xpair(const void* pa, const void* pb) {
        const em_xpair* a = (const em_xpair*)pa;
        const em_xpair* b = (const em_xpair*)pb;
        if (a->x < b->x) return -1;
        if (a->x > b->x) return 1;
        if (a->idx < b->idx) return -1;
        if (a->idx > b->idx) return 1;
        return 0;
    }
    """
    ctypedef struct em_xpair:
        double x
        int idx
    int em_cmp_xpair(const void* a, const void* b) nogil

cdef unsigned long long GOLDEN = <unsigned long long>0x9E3779B97F4A7C15
cdef unsigned long long MIX1 = <unsigned long long>0xBF58476D1CE4E5B9
cdef unsigned long long MIX2 = <unsigned long long>0x94D049BB133111EB
_PY_MIX1 = 0xBF58476D1CE4E5B9


cdef inline unsigned long long _next(unsigned long long* state) nogil:
    cdef unsigned long long z
    state[0] = state[0] + GOLDEN
    z = state[0]
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    z = z ^ (z >> 31)
    return z


def splitmix64(state):
    """Advance a splitmix64 state; returns (new_state, value)."""
    cdef unsigned long long s = <unsigned long long>(state & 0xFFFFFFFFFFFFFFFF)
    cdef unsigned long long z = _next(&s)
    return int(s), int(z)


def derive_stream(seed, index):
    """Stream state for sub-stream `index` of `seed` (hash of the pair)."""
    cdef unsigned long long s = <unsigned long long>(
        (seed ^ ((index + 1) * _PY_MIX1)) & 0xFFFFFFFFFFFFFFFF)
    _next(&s)
    _next(&s)
    return int(s)


cdef struct SplitResult:
    bint found
    double red
    double thr
    unsigned long long left_mask
    unsigned long long obs_mask
    int n_left


cdef void _scan_numeric(const double* xv, const double* yv, int m,
                        int min_leaf, double parent_sse, double eps,
                        em_xpair* buf, SplitResult* out) nogil:
    cdef int i, nl
    cdef double sy = 0.0, syy = 0.0
    cdef double total_s, total_ss
    cdef double sse_l, sse_r, red, run_max
    cdef double yo
    out.found = False
    for i in range(m):
        buf[i].x = xv[i]
        buf[i].idx = i
    qsort(buf, m, sizeof(em_xpair), em_cmp_xpair)
    # totals in sorted order (matches cumsum over the sorted values)
    total_s = 0.0
    total_ss = 0.0
    for i in range(m):
        yo = yv[buf[i].idx]
        total_s += yo
        total_ss += yo * yo
    run_max = -INFINITY
    sy = 0.0
    syy = 0.0
    cdef int best_i = -1
    cdef double best_red = 0.0, best_thr = 0.0
    cdef int best_nl = 0
    for i in range(m - 1):
        yo = yv[buf[i].idx]
        sy += yo
        syy += yo * yo
        if buf[i].x == buf[i + 1].x:
            continue
        nl = i + 1
        if nl < min_leaf or m - nl < min_leaf:
            continue
        sse_l = syy - sy * sy / nl
        if sse_l < 0.0:
            sse_l = 0.0
        sse_r = (total_ss - syy) - (total_s - sy) * (total_s - sy) / (m - nl)
        if sse_r < 0.0:
            sse_r = 0.0
        red = parent_sse - (sse_l + sse_r)
        if red > run_max + eps:
            best_i = i
            best_red = red
            best_thr = (buf[i].x + buf[i + 1].x) / 2.0
            best_nl = nl
        if red > run_max:
            run_max = red
    if best_i >= 0 and best_red > eps:
        out.found = True
        out.red = best_red
        out.thr = best_thr
        out.left_mask = 0
        out.obs_mask = 0
        out.n_left = best_nl


cdef void _scan_categorical(const double* xv, const double* yv, int m,
                            int n_levels, int min_leaf, double parent_sse,
                            double eps, SplitResult* out) nogil:
    cdef double lvl_sum[64]
    cdef long lvl_cnt[64]
    cdef int ordered[64]
    cdef int i, c, k, n_present, j, tmp
    cdef double total_ss = 0.0, total_s = 0.0
    cdef long total_n = 0
    cdef double mi, mj
    out.found = False
    if n_levels > 64:
        return
    for c in range(n_levels):
        lvl_sum[c] = 0.0
        lvl_cnt[c] = 0
    for i in range(m):
        c = <int>xv[i]
        lvl_sum[c] += yv[i]
        lvl_cnt[c] += 1
        total_ss += yv[i] * yv[i]
    n_present = 0
    for c in range(n_levels):
        if lvl_cnt[c] > 0:
            ordered[n_present] = c
            n_present += 1
    if n_present < 2:
        return
    # insertion sort of present levels by (mean, code)
    for i in range(1, n_present):
        j = i
        while j > 0:
            mi = lvl_sum[ordered[j]] / lvl_cnt[ordered[j]]
            mj = lvl_sum[ordered[j - 1]] / lvl_cnt[ordered[j - 1]]
            if mi < mj or (mi == mj and ordered[j] < ordered[j - 1]):
                tmp = ordered[j]
                ordered[j] = ordered[j - 1]
                ordered[j - 1] = tmp
                j -= 1
            else:
                break
    cdef unsigned long long omask = 0
    for i in range(n_present):
        omask |= (<unsigned long long>1) << ordered[i]
        total_s += lvl_sum[ordered[i]]
        total_n += lvl_cnt[ordered[i]]
    cdef double sl = 0.0
    cdef long nl = 0
    cdef double red, run_max = -INFINITY
    cdef int best_k = -1
    cdef double best_red = 0.0
    cdef long best_nl = 0
    for k in range(n_present - 1):
        sl += lvl_sum[ordered[k]]
        nl += lvl_cnt[ordered[k]]
        if nl < min_leaf or total_n - nl < min_leaf:
            continue
        red = parent_sse - (total_ss - sl * sl / nl
                            - (total_s - sl) * (total_s - sl) / (total_n - nl))
        if red > run_max + eps:
            best_k = k
            best_red = red
            best_nl = nl
        if red > run_max:
            run_max = red
    if best_k >= 0 and best_red > eps:
        out.found = True
        out.red = best_red
        out.thr = 0.0
        out.obs_mask = omask
        out.left_mask = 0
        for k in range(best_k + 1):
            out.left_mask |= (<unsigned long long>1) << ordered[k]
        out.n_left = <int>best_nl


def best_split_feature(xv, yv, is_cat, n_levels, min_leaf, parent_sse):
    """Best admissible split of one feature over gathered node rows.

    Returns (reduction, threshold, left_mask, obs_mask, n_left) or None.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.ascontiguousarray(xv, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.ascontiguousarray(yv, dtype=np.float64)
    cdef int m = xa.shape[0]
    cdef double eps = 1e-12 * max(1.0, parent_sse)
    cdef SplitResult res
    cdef em_xpair* buf
    if is_cat:
        _scan_categorical(&xa[0], &ya[0], m, n_levels, min_leaf, parent_sse, eps, &res)
    else:
        buf = <em_xpair*>malloc(m * sizeof(em_xpair))
        if buf == NULL:
            raise MemoryError()
        try:
            _scan_numeric(&xa[0], &ya[0], m, min_leaf, parent_sse, eps, buf, &res)
        finally:
            free(buf)
    if not res.found:
        return None
    return res.red, res.thr, int(res.left_mask), int(res.obs_mask), res.n_left


cdef struct Frame:
    int a
    int b
    int depth
    int parent
    bint is_left


def grow_tree(X, is_cat, n_levels, y, rows, max_depth, min_split, min_leaf,
              mtry, rng_state):
    """Grow one least-squares regression tree; returns flat node arrays.

    Matches the pure-python kernel node for node; see there for semantics.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xa = \
        np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] cat = np.ascontiguousarray(is_cat, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] nlev = np.ascontiguousarray(n_levels, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] work = np.array(rows, dtype=np.int32)

    cdef int m = work.shape[0]
    cdef int p = Xa.shape[1]
    cdef int cap = 2 * m + 1
    cdef bint sample = 0 < mtry < p
    cdef int n_sel = mtry if sample else p

    cdef cnp.ndarray[cnp.int32_t, ndim=1] feature = np.full(cap, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] threshold = np.zeros(cap)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] left_mask = np.zeros(cap, dtype=np.uint64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] obs_mask = np.zeros(cap, dtype=np.uint64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] left = np.full(cap, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] right = np.full(cap, -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1] n_arr = np.zeros(cap, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mean = np.zeros(cap)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sse = np.zeros(cap)

    cdef unsigned long long state = <unsigned long long>(rng_state & 0xFFFFFFFFFFFFFFFF)
    cdef int n_nodes = 0

    cdef Frame* stack = <Frame*>malloc((2 * m + 4) * sizeof(Frame))
    cdef em_xpair* buf = <em_xpair*>malloc(max(m, 1) * sizeof(em_xpair))
    cdef double* xbuf = <double*>malloc(max(m, 1) * sizeof(double))
    cdef double* ybuf = <double*>malloc(max(m, 1) * sizeof(double))
    cdef int* part = <int*>malloc(max(m, 1) * sizeof(int))
    cdef int* pool = <int*>malloc(max(p, 1) * sizeof(int))
    cdef int* sel = <int*>malloc(max(p, 1) * sizeof(int))
    if stack == NULL or buf == NULL or xbuf == NULL or ybuf == NULL \
            or part == NULL or pool == NULL or sel == NULL:
        free(stack); free(buf); free(xbuf); free(ybuf); free(part); free(pool); free(sel)
        raise MemoryError()

    cdef int sp = 0, a, b, depth, parent, nid, i, f, fi, j, k, nm, tmp
    cdef bint is_left_flag
    cdef double node_mean, node_sse, acc, eps, run_max
    cdef SplitResult res
    cdef SplitResult best
    cdef int best_f = 0
    cdef bint have_best
    cdef unsigned long long z
    cdef int nl_count

    with nogil:
        stack[0].a = 0
        stack[0].b = m
        stack[0].depth = 0
        stack[0].parent = -1
        stack[0].is_left = False
        sp = 1
        while sp > 0:
            sp -= 1
            a = stack[sp].a
            b = stack[sp].b
            depth = stack[sp].depth
            parent = stack[sp].parent
            is_left_flag = stack[sp].is_left
            nid = n_nodes
            n_nodes += 1
            if parent >= 0:
                if is_left_flag:
                    left[parent] = nid
                else:
                    right[parent] = nid
            nm = b - a
            acc = 0.0
            for i in range(nm):
                acc += ya[work[a + i]]
            node_mean = acc / nm
            acc = 0.0
            for i in range(nm):
                acc += (ya[work[a + i]] - node_mean) * (ya[work[a + i]] - node_mean)
            node_sse = acc
            n_arr[nid] = nm
            mean[nid] = node_mean
            sse[nid] = node_sse

            if not (nm >= min_split and depth < max_depth and node_sse > 0.0):
                continue

            if sample:
                for i in range(p):
                    pool[i] = i
                for i in range(mtry):
                    z = _next(&state)
                    j = i + <int>(z % <unsigned long long>(p - i))
                    tmp = pool[i]; pool[i] = pool[j]; pool[j] = tmp
                for i in range(mtry):
                    sel[i] = pool[i]
                # insertion sort ascending
                for i in range(1, mtry):
                    j = i
                    while j > 0 and sel[j] < sel[j - 1]:
                        tmp = sel[j]; sel[j] = sel[j - 1]; sel[j - 1] = tmp
                        j -= 1
            else:
                for i in range(p):
                    sel[i] = i

            eps = 1e-12 * (node_sse if node_sse > 1.0 else 1.0)
            have_best = False
            run_max = -INFINITY
            for fi in range(n_sel):
                f = sel[fi]
                for i in range(nm):
                    xbuf[i] = Xa[work[a + i], f]
                    ybuf[i] = ya[work[a + i]]
                if cat[f]:
                    _scan_categorical(xbuf, ybuf, nm, nlev[f], min_leaf,
                                      node_sse, eps, &res)
                else:
                    _scan_numeric(xbuf, ybuf, nm, min_leaf, node_sse, eps, buf, &res)
                if not res.found:
                    continue
                if res.red > run_max + eps:
                    best = res
                    best_f = f
                    have_best = True
                if res.red > run_max:
                    run_max = res.red

            if not have_best:
                continue

            # stable partition of work[a:b]
            k = 0
            for i in range(nm):
                if cat[best_f]:
                    j = <int>Xa[work[a + i], best_f]
                    if (best.left_mask >> j) & 1:
                        part[k] = work[a + i]
                        k += 1
                else:
                    if Xa[work[a + i], best_f] <= best.thr:
                        part[k] = work[a + i]
                        k += 1
            nl_count = k
            for i in range(nm):
                if cat[best_f]:
                    j = <int>Xa[work[a + i], best_f]
                    if not ((best.left_mask >> j) & 1):
                        part[k] = work[a + i]
                        k += 1
                else:
                    if not (Xa[work[a + i], best_f] <= best.thr):
                        part[k] = work[a + i]
                        k += 1
            for i in range(nm):
                work[a + i] = part[i]

            feature[nid] = best_f
            threshold[nid] = best.thr
            left_mask[nid] = best.left_mask
            obs_mask[nid] = best.obs_mask

            stack[sp].a = a + nl_count
            stack[sp].b = b
            stack[sp].depth = depth + 1
            stack[sp].parent = nid
            stack[sp].is_left = False
            sp += 1
            stack[sp].a = a
            stack[sp].b = a + nl_count
            stack[sp].depth = depth + 1
            stack[sp].parent = nid
            stack[sp].is_left = True
            sp += 1

    free(stack); free(buf); free(xbuf); free(ybuf); free(part); free(pool); free(sel)

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
    cdef cnp.ndarray[cnp.int32_t, ndim=1] feature = nodes["feature"]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] threshold = nodes["threshold"]
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] left_mask = nodes["left_mask"]
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] obs_mask = nodes["obs_mask"]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] left = nodes["left"]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] right = nodes["right"]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] n_arr = nodes["n"]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mean = nodes["mean"]
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xa = \
        np.ascontiguousarray(Xq, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] cat = np.ascontiguousarray(is_cat, dtype=np.uint8)
    cdef int nq = Xa.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(nq)
    cdef int i, nid, f, code
    cdef bint go_left
    with nogil:
        for i in range(nq):
            nid = 0
            while feature[nid] >= 0:
                f = feature[nid]
                if cat[f]:
                    code = <int>Xa[i, f]
                    if 0 <= code < 64 and (obs_mask[nid] >> code) & 1:
                        go_left = (left_mask[nid] >> code) & 1
                    else:
                        go_left = n_arr[left[nid]] >= n_arr[right[nid]]
                else:
                    go_left = Xa[i, f] <= threshold[nid]
                nid = left[nid] if go_left else right[nid]
            out[i] = mean[nid]
    return out
