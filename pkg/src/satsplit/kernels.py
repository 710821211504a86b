"""Hot inner loops over CSR adjacency.

Every kernel exists in two flavours: a loop version that numba compiles
(``*_loop``) and a fallback used when numba is disabled or missing
(``*_numpy``, scipy sparse products; for the graph traversals the fallback is the same loop run
by the interpreter, since BFS/DFS do not vectorise). The public names at
the bottom of the module are bound once at import time according to
``SATSPLIT_DISABLE_NUMBA``.

CSR layout used throughout: ``indptr`` (n+1,), ``indices`` (2m,) neighbour
ids sorted ascending within each row, ``eids`` (2m,) id of the undirected
edge each slot belongs to.
"""

import numpy as np
from scipy import sparse

from ._accel import NUMBA_ENABLED, njit


def build_csr(num_nodes, edges, active=None):
    """Symmetric CSR of the active edges. Returns ``(indptr, indices, eids)``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    ids = np.arange(len(edges), dtype=np.int64)
    if active is not None:
        keep = np.asarray(active, dtype=bool)
        edges = edges[keep]
        ids = ids[keep]
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    eid = np.concatenate([ids, ids])
    order = np.lexsort((dst, src))
    src, dst, eid = src[order], dst[order], eid[order]
    counts = np.bincount(src, minlength=num_nodes)
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, dst, eid


# -- mean aggregation ---------------------------------------------------------

def _mean_aggregate_loop(indptr, indices, x):
    n = indptr.shape[0] - 1
    d = x.shape[1]
    out = np.zeros((n, d), dtype=x.dtype)
    for v in range(n):
        start = indptr[v]
        stop = indptr[v + 1]
        if stop == start:
            continue
        for k in range(start, stop):
            u = indices[k]
            for j in range(d):
                out[v, j] += x[u, j]
        inv = 1.0 / (stop - start)
        for j in range(d):
            out[v, j] *= inv
    return out


def _mean_operator(indptr, indices, dtype):
    n = indptr.shape[0] - 1
    deg = np.diff(indptr)
    inv = np.zeros(n, dtype=dtype)
    nz = deg > 0
    inv[nz] = 1.0 / deg[nz]
    return sparse.csr_matrix((np.repeat(inv, deg), indices, indptr), shape=(n, n))


def _mean_aggregate_numpy(indptr, indices, x):
    return np.asarray(_mean_operator(indptr, indices, x.dtype) @ x, dtype=x.dtype)


def _mean_aggregate_t_loop(indptr, indices, g):
    """Adjoint of mean aggregation: out[u] += g[v] / deg(v) for u in N(v)."""
    n = indptr.shape[0] - 1
    d = g.shape[1]
    out = np.zeros((n, d), dtype=g.dtype)
    for v in range(n):
        start = indptr[v]
        stop = indptr[v + 1]
        if stop == start:
            continue
        inv = 1.0 / (stop - start)
        for k in range(start, stop):
            u = indices[k]
            for j in range(d):
                out[u, j] += g[v, j] * inv
    return out


def _mean_aggregate_t_numpy(indptr, indices, g):
    return np.asarray(_mean_operator(indptr, indices, g.dtype).T @ g, dtype=g.dtype)


# -- neighbour sum (power iteration) ------------------------------------------

def _neighbor_sum_loop(indptr, indices, x):
    n = indptr.shape[0] - 1
    out = np.zeros(n, dtype=x.dtype)
    for v in range(n):
        acc = 0.0
        for k in range(indptr[v], indptr[v + 1]):
            acc += x[indices[k]]
        out[v] = acc
    return out


def _neighbor_sum_numpy(indptr, indices, x):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    return np.bincount(rows, weights=x[indices], minlength=n).astype(x.dtype)


# -- Brandes betweenness -------------------------------------------------------

def _brandes_loop(indptr, indices):
    """Unnormalised betweenness summed over ordered (s, t) pairs."""
    n = indptr.shape[0] - 1
    bc = np.zeros(n)
    sigma = np.zeros(n)
    delta = np.zeros(n)
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    for s in range(n):
        for i in range(n):
            sigma[i] = 0.0
            delta[i] = 0.0
            dist[i] = -1
        sigma[s] = 1.0
        dist[s] = 0
        head = 0
        tail = 1
        queue[0] = s
        sp = 0
        while head < tail:
            v = queue[head]
            head += 1
            stack[sp] = v
            sp += 1
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue[tail] = w
                    tail += 1
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        while sp > 0:
            sp -= 1
            w = stack[sp]
            for k in range(indptr[w], indptr[w + 1]):
                v = indices[k]
                if dist[v] == dist[w] - 1:
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


# -- bridges (iterative Tarjan low-link) --------------------------------------

def _bridges_loop(indptr, indices, eids, num_edges):
    n = indptr.shape[0] - 1
    disc = np.full(n, -1, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    cursor = np.zeros(n, dtype=np.int64)
    stack_v = np.empty(n, dtype=np.int64)
    stack_pe = np.empty(n, dtype=np.int64)
    is_bridge = np.zeros(num_edges, dtype=np.bool_)
    clock = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = clock
        low[root] = clock
        clock += 1
        cursor[root] = indptr[root]
        top = 0
        stack_v[0] = root
        stack_pe[0] = -1
        while top >= 0:
            v = stack_v[top]
            if cursor[v] < indptr[v + 1]:
                k = cursor[v]
                cursor[v] += 1
                e = eids[k]
                if e == stack_pe[top]:
                    continue
                w = indices[k]
                if disc[w] < 0:
                    disc[w] = clock
                    low[w] = clock
                    clock += 1
                    cursor[w] = indptr[w]
                    top += 1
                    stack_v[top] = w
                    stack_pe[top] = e
                elif disc[w] < low[v]:
                    low[v] = disc[w]
            else:
                top -= 1
                if top >= 0:
                    p = stack_v[top]
                    if low[v] < low[p]:
                        low[p] = low[v]
                    if low[v] > disc[p]:
                        is_bridge[stack_pe[top + 1]] = True
    return is_bridge


if NUMBA_ENABLED:
    mean_aggregate = njit(_mean_aggregate_loop)
    mean_aggregate_t = njit(_mean_aggregate_t_loop)
    neighbor_sum = njit(_neighbor_sum_loop)
    brandes = njit(_brandes_loop)
    bridges = njit(_bridges_loop)
else:
    mean_aggregate = _mean_aggregate_numpy
    mean_aggregate_t = _mean_aggregate_t_numpy
    neighbor_sum = _neighbor_sum_numpy
    brandes = _brandes_loop
    bridges = _bridges_loop
