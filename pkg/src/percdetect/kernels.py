"""Hot loops: cluster labeling on the axial triangular lattice.

Every kernel exists twice. The ``*_nb`` versions are sequential union-find
loops compiled with numba; the ``*_np`` versions are vectorized numpy
(hook-to-minimum plus pointer jumping) and need no compiler. The public
names at the bottom dispatch on :data:`percdetect._backend.USE_NUMBA`.

All kernels take C-contiguous ``(N, N)`` arrays indexed ``[row, col]`` and
report an operation count (parent-pointer traversals for union-find, edge
evaluations for the vectorized path) used by the complexity probe.

Labels are canonical: a marked site carries the smallest linear index
``row * N + col`` of its cluster, unmarked sites carry -1.
"""

import numpy as np

from ._backend import BACKEND, HAVE_NUMBA, USE_NUMBA, njit

TOP, BOTTOM, LEFT, RIGHT = 1, 2, 4, 8


# ---------------------------------------------------------------- numba path


@njit
def _find(parent, i, ops):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
        ops[0] += 1
    return i


@njit
def _union(parent, csize, a, b, ops):
    ra = _find(parent, a, ops)
    rb = _find(parent, b, ops)
    ops[0] += 1
    if ra == rb:
        return ra
    if csize[ra] < csize[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    csize[ra] += csize[rb]
    return ra


@njit
def _uf_forest(flat, n, ops):
    # Each undirected edge is visited once, from its later endpoint:
    # (r, c-1), (r-1, c), (r-1, c+1) precede (r, c) in row-major order.
    size = n * n
    # 32-bit indices halve the memory traffic; N is far below 46341
    parent = np.arange(size, dtype=np.int32)
    csize = np.zeros(size, dtype=np.int32)
    for i in range(size):
        if not flat[i]:
            continue
        csize[i] = 1
        r = i // n
        c = i - r * n
        if c > 0 and flat[i - 1]:
            _union(parent, csize, i, i - 1, ops)
        if r > 0:
            if flat[i - n]:
                _union(parent, csize, i, i - n, ops)
            if c + 1 < n and flat[i - n + 1]:
                _union(parent, csize, i, i - n + 1, ops)
    return parent, csize


@njit
def label_nb(mask):
    n = mask.shape[0]
    flat = mask.ravel()
    ops = np.zeros(1, dtype=np.int64)
    parent, csize = _uf_forest(flat, n, ops)
    size = n * n
    labels = np.full(size, -1, dtype=np.int64)
    canon = np.full(size, -1, dtype=np.int64)
    for i in range(size):
        if flat[i]:
            root = _find(parent, i, ops)
            if canon[root] < 0:
                canon[root] = i
            labels[i] = canon[root]
    return labels.reshape((n, n)), ops[0]


@njit
def max_cluster_nb(mask):
    n = mask.shape[0]
    flat = mask.ravel()
    ops = np.zeros(1, dtype=np.int64)
    parent, csize = _uf_forest(flat, n, ops)
    best = 0
    for i in range(n * n):
        if flat[i] and parent[i] == i and csize[i] > best:
            best = csize[i]
    return best, ops[0]


@njit
def crossing_nb(mask):
    n = mask.shape[0]
    flat = mask.ravel()
    ops = np.zeros(1, dtype=np.int64)
    parent, csize = _uf_forest(flat, n, ops)
    touch = np.zeros(n * n, dtype=np.int64)
    for k in range(n):
        for i in (k, (n - 1) * n + k, k * n, k * n + n - 1):
            if flat[i]:
                root = _find(parent, i, ops)
                if i == k:
                    touch[root] |= TOP
                if i == (n - 1) * n + k:
                    touch[root] |= BOTTOM
                if i == k * n:
                    touch[root] |= LEFT
                if i == k * n + n - 1:
                    touch[root] |= RIGHT
    for i in range(n * n):
        t = touch[i]
        if (t & 3) == 3 or (t & 12) == 12:
            return True, ops[0]
    return False, ops[0]


@njit
def _border_flags(i, n):
    r = i // n
    c = i - r * n
    f = 0
    if r == 0:
        f |= TOP
    if r == n - 1:
        f |= BOTTOM
    if c == 0:
        f |= LEFT
    if c == n - 1:
        f |= RIGHT
    return f


@njit
def crossing_step_nb(order, n):
    """Position in ``order`` at which the growing occupied set first crosses.

    Sites are switched on one at a time in the given order (Newman-Ziff
    style); returns -1 if the lattice never crosses, which cannot happen for
    a full ordering.
    """
    size = n * n
    parent = np.arange(size)
    csize = np.ones(size, dtype=np.int64)
    touch = np.zeros(size, dtype=np.int64)
    on = np.zeros(size, dtype=np.bool_)
    ops = np.zeros(1, dtype=np.int64)
    for k in range(order.shape[0]):
        i = order[k]
        on[i] = True
        touch[i] = _border_flags(i, n)
        r = i // n
        c = i - r * n
        root = i
        for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0), (-1, 1), (1, -1)):
            rr = r + dr
            cc = c + dc
            if rr < 0 or rr >= n or cc < 0 or cc >= n:
                continue
            j = rr * n + cc
            if not on[j]:
                continue
            ra = _find(parent, root, ops)
            rb = _find(parent, j, ops)
            flags = touch[ra] | touch[rb]
            root = _union(parent, csize, ra, rb, ops)
            touch[root] = flags
        t = touch[_find(parent, i, ops)]
        if (t & 3) == 3 or (t & 12) == 12:
            return k, ops[0]
    return -1, ops[0]


@njit
def cluster_size_at_nb(mask, r0, c0):
    n = mask.shape[0]
    if not mask[r0, c0]:
        return 0
    seen = np.zeros((n, n), dtype=np.bool_)
    stack = np.empty(n * n, dtype=np.int64)
    top = 0
    stack[top] = r0 * n + c0
    top += 1
    seen[r0, c0] = True
    count = 0
    while top > 0:
        top -= 1
        i = stack[top]
        count += 1
        r = i // n
        c = i - r * n
        for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0), (-1, 1), (1, -1)):
            rr = r + dr
            cc = c + dc
            if 0 <= rr < n and 0 <= cc < n and mask[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                stack[top] = rr * n + cc
                top += 1
    return count


# ---------------------------------------------------------------- numpy path


def _edges(mask):
    n = mask.shape[0]
    idx = np.arange(n * n, dtype=np.int64).reshape(n, n)
    us, vs = [], []
    # (r, c)-(r, c+1), (r, c)-(r+1, c), (r, c+1)-(r+1, c)
    for a, b in (
        ((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
        ((slice(None, -1), slice(None)), (slice(1, None), slice(None))),
        ((slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1))),
    ):
        both = mask[a] & mask[b]
        us.append(idx[a][both])
        vs.append(idx[b][both])
    return np.concatenate(us), np.concatenate(vs)


def _roots_np(mask):
    n = mask.shape[0]
    u, v = _edges(mask)
    parent = np.arange(n * n, dtype=np.int64)
    ops = 0
    while True:
        pu = parent[u]
        pv = parent[v]
        ops += u.size
        diff = pu != pv
        if not diff.any():
            break
        lo = np.minimum(pu, pv)[diff]
        hi = np.maximum(pu, pv)[diff]
        np.minimum.at(parent, hi, lo)
        while True:
            jumped = parent[parent]
            ops += parent.size
            if np.array_equal(jumped, parent):
                break
            parent = jumped
    return parent.reshape(n, n), ops


def label_np(mask):
    roots, ops = _roots_np(mask)
    return np.where(mask, roots, -1), ops


def max_cluster_np(mask):
    roots, ops = _roots_np(mask)
    marked = roots[mask]
    if marked.size == 0:
        return 0, ops
    return int(np.bincount(marked).max()), ops


def crossing_np(mask):
    labels, ops = label_np(mask)
    top = labels[0][labels[0] >= 0]
    bottom = labels[-1][labels[-1] >= 0]
    left = labels[:, 0][labels[:, 0] >= 0]
    right = labels[:, -1][labels[:, -1] >= 0]
    crosses = np.intersect1d(top, bottom).size > 0 or np.intersect1d(left, right).size > 0
    return bool(crosses), ops


def crossing_step_np(order, n):
    # Crossing is increasing in the occupied set, so bisect on the prefix length.
    mask = np.zeros(n * n, dtype=bool)
    lo, hi = 0, order.size  # prefix of length hi crosses, lo does not
    ops = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        mask[:] = False
        mask[order[:mid]] = True
        crosses, k = crossing_np(mask.reshape(n, n))
        ops += k
        if crosses:
            hi = mid
        else:
            lo = mid
    return hi - 1, ops


def cluster_size_at_np(mask, r0, c0):
    if not mask[r0, c0]:
        return 0
    roots, _ = _roots_np(mask)
    return int(np.count_nonzero(roots[mask] == roots[r0, c0]))


# ---------------------------------------------------------------- dispatch

if USE_NUMBA:
    _label, _max_cluster, _crossing = label_nb, max_cluster_nb, crossing_nb
    _crossing_step, _cluster_size_at = crossing_step_nb, cluster_size_at_nb
else:
    _label, _max_cluster, _crossing = label_np, max_cluster_np, crossing_np
    _crossing_step, _cluster_size_at = crossing_step_np, cluster_size_at_np


def _prep(mask):
    return np.ascontiguousarray(mask, dtype=np.bool_)


def label(mask):
    """Canonical cluster labels and the operation count."""
    labels, ops = _label(_prep(mask))
    return labels, int(ops)


def max_cluster(mask):
    """Largest cluster size in ``mask`` and the operation count."""
    best, ops = _max_cluster(_prep(mask))
    return int(best), int(ops)


def crossing(mask):
    crosses, ops = _crossing(_prep(mask))
    return bool(crosses), int(ops)


def cluster_size_at(mask, row, col):
    return int(_cluster_size_at(_prep(mask), row, col))


def crossing_level(values):
    """Largest ``a`` for which ``{values >= a}`` contains a crossing cluster.

    Returns ``(a, ops)``. Computed in one sorted sweep instead of relabeling
    at every candidate threshold.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    order = np.argsort(-values.ravel(), kind="stable").astype(np.int64)
    step, ops = _crossing_step(order, n)
    return float(values.ravel()[order[step]]), int(ops)


__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "USE_NUMBA",
    "label",
    "max_cluster",
    "crossing",
    "crossing_level",
    "cluster_size_at",
]
