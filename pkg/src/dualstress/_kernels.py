"""Compiled inner loops for tree growing and evaluation."""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def grow_tree(codes, residual, rows, bin_feature, bin_start, bin_end, bin_values,
              n_bins, max_depth, min_leaf):
    """Greedy level-wise squared-loss tree on pre-binned features.

    ``codes[i, j]`` is the global bin of row ``i`` on feature ``j``; bins of one
    feature are contiguous and sorted by value. Returns node arrays sized for
    a complete tree of ``max_depth``; unused slots are trimmed by the caller
    using the returned node count.
    """
    m = rows.shape[0]
    p = codes.shape[1]
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.full(max_nodes, np.nan)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    split_bin = np.full(max_nodes, -1, np.int64)
    n_samples = np.zeros(max_nodes, np.int64)
    value = np.zeros(max_nodes)

    node_of = np.zeros(m, np.int64)
    total = 0.0
    for i in range(m):
        total += residual[rows[i]]
    n_nodes = 1
    n_samples[0] = m
    value[0] = total / m

    frontier = np.zeros(max_nodes, np.int64)
    n_frontier = 1
    slot = np.full(max_nodes, -1, np.int64)
    eligible = np.zeros(max_nodes, np.int64)

    for depth in range(max_depth):
        n_slots = 0
        slot[:] = -1
        for k in range(n_frontier):
            nd = frontier[k]
            if n_samples[nd] >= 2 * min_leaf:
                slot[nd] = n_slots
                eligible[n_slots] = nd
                n_slots += 1
        if n_slots == 0:
            break
        cnt = np.zeros((n_slots, n_bins), np.int64)
        sm = np.zeros((n_slots, n_bins))
        nn = np.zeros(n_slots, np.int64)
        ns = np.zeros(n_slots)
        nss = np.zeros(n_slots)
        for i in range(m):
            s = slot[node_of[i]]
            if s < 0:
                continue
            row = rows[i]
            ri = residual[row]
            nn[s] += 1
            ns[s] += ri
            nss[s] += ri * ri
            for j in range(p):
                b = codes[row, j]
                cnt[s, b] += 1
                sm[s, b] += ri

        new_frontier = 0
        next_frontier = np.zeros(max_nodes, np.int64)
        for s in range(n_slots):
            nd = eligible[s]
            n_tot = nn[s]
            s_tot = ns[s]
            parent = s_tot * s_tot / n_tot
            best = -np.inf
            best_bin = -1
            best_ln = 0
            best_ls = 0.0
            ln = 0
            ls = 0.0
            for b in range(n_bins):
                if b == bin_start[b]:
                    ln = 0
                    ls = 0.0
                c = cnt[s, b]
                if c == 0:
                    continue
                ln += c
                ls += sm[s, b]
                rn = n_tot - ln
                if ln < min_leaf or rn < min_leaf:
                    continue
                rs = s_tot - ls
                g = ls * ls / ln + rs * rs / rn - parent
                # near-equal gains count as ties so rounding noise cannot
                # override the lowest-feature, lowest-threshold rule
                if best_bin < 0 or g > best + 1e-12 * abs(best):
                    best = g
                    best_bin = b
                    best_ln = ln
                    best_ls = ls
            sse = nss[s] - parent
            if best_bin < 0 or not (best > 0.0) or best <= 1e-12 * max(sse, 0.0):
                continue
            nxt = best_bin + 1
            while nxt < bin_end[best_bin] and cnt[s, nxt] == 0:
                nxt += 1
            lo = bin_values[best_bin]
            hi = bin_values[nxt]
            thr = 0.5 * (lo + hi)
            if not (lo <= thr and thr < hi):
                thr = lo
            feature[nd] = bin_feature[best_bin]
            threshold[nd] = thr
            split_bin[nd] = best_bin
            lc = n_nodes
            rc = n_nodes + 1
            n_nodes += 2
            left[nd] = lc
            right[nd] = rc
            n_samples[lc] = best_ln
            n_samples[rc] = n_tot - best_ln
            value[lc] = best_ls / best_ln
            value[rc] = (s_tot - best_ls) / (n_tot - best_ln)
            next_frontier[new_frontier] = lc
            next_frontier[new_frontier + 1] = rc
            new_frontier += 2
        if new_frontier == 0:
            break
        for i in range(m):
            nd = node_of[i]
            f = feature[nd]
            if f < 0:
                continue
            if codes[rows[i], f] <= split_bin[nd]:
                node_of[i] = left[nd]
            else:
                node_of[i] = right[nd]
        for k in range(new_frontier):
            frontier[k] = next_frontier[k]
        n_frontier = new_frontier

    # exact leaf means
    sums = np.zeros(n_nodes)
    counts = np.zeros(n_nodes, np.int64)
    for i in range(m):
        sums[node_of[i]] += residual[rows[i]]
        counts[node_of[i]] += 1
    for nd in range(n_nodes):
        if feature[nd] < 0 and counts[nd] > 0:
            value[nd] = sums[nd] / counts[nd]
    return feature, threshold, left, right, value, n_samples, n_nodes


@njit(cache=True, nogil=True)
def apply_tree(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        nd = 0
        while feature[nd] >= 0:
            if X[i, feature[nd]] <= threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = nd
    return out
