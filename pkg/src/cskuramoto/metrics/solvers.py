"""Exact discrete optimal-transport solvers.

All solvers take source weights ``a`` (m,), target weights ``b`` (n,) and
return ``(src, dst, mass)`` arrays describing a coupling. They differ only in
the inputs they accept:

* :func:`sorted_1d` - monotone coupling of points on the line (squared cost).
* :func:`assignment` - uniform weights, via scipy's Jonker-Volgenant solver;
  unequal counts are handled by replicating atoms to a common count.
* :func:`network_simplex` - general weights, primal simplex on the bipartite
  transportation polytope with a spanning-tree basis.
* :func:`brute_force` - enumeration of permutations, for tiny uniform problems.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = ["sorted_1d", "assignment", "network_simplex", "brute_force", "is_uniform", "MAX_REPLICATED"]

MAX_REPLICATED = 4096


def is_uniform(w, rtol=1e-12) -> bool:
    w = np.asarray(w, dtype=float)
    return bool(np.all(np.abs(w - 1.0 / w.size) <= rtol / w.size))


def sorted_1d(xa, a, xb, b):
    """North-west corner rule on sorted supports (optimal for convex costs in 1D)."""
    xa = np.asarray(xa, dtype=float).reshape(-1)
    xb = np.asarray(xb, dtype=float).reshape(-1)
    ia = np.argsort(xa, kind="stable")
    ib = np.argsort(xb, kind="stable")
    ra = np.asarray(a, dtype=float)[ia].copy()
    rb = np.asarray(b, dtype=float)[ib].copy()
    src, dst, mass = [], [], []
    i = j = 0
    m, n = ra.size, rb.size
    while i < m and j < n:
        f = min(ra[i], rb[j])
        if f > 0:
            src.append(ia[i])
            dst.append(ib[j])
            mass.append(f)
        ra[i] -= f
        rb[j] -= f
        if i == m - 1 and j == n - 1:
            break
        # advance whichever side ran out; ties and float residue go to the shorter remainder
        if (ra[i] <= rb[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return np.asarray(src, dtype=np.intp), np.asarray(dst, dtype=np.intp), np.asarray(mass)


def assignment(cost, a=None, b=None):
    """Exact transport between uniform measures through linear assignment."""
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    if a is not None and not is_uniform(a):
        raise ValueError("assignment path needs uniform source weights")
    if b is not None and not is_uniform(b):
        raise ValueError("assignment path needs uniform target weights")
    if m == n:
        rows, cols = linear_sum_assignment(cost)
        return rows.astype(np.intp), cols.astype(np.intp), np.full(m, 1.0 / m)
    size = m * n // math.gcd(m, n)
    if size > MAX_REPLICATED:
        raise ValueError(f"replicated assignment would need {size} atoms")
    rep_a, rep_b = size // m, size // n
    big = np.repeat(np.repeat(cost, rep_a, axis=0), rep_b, axis=1)
    rows, cols = linear_sum_assignment(big)
    pairs: dict = {}
    for r, c in zip(rows // rep_a, cols // rep_b):
        pairs[(int(r), int(c))] = pairs.get((int(r), int(c)), 0) + 1
    keys = sorted(pairs)
    src = np.array([k[0] for k in keys], dtype=np.intp)
    dst = np.array([k[1] for k in keys], dtype=np.intp)
    mass = np.array([pairs[k] / size for k in keys])
    return src, dst, mass


def brute_force(cost):
    """Optimal permutation by enumeration (uniform weights, square cost)."""
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.shape != (n, n) or n > 8:
        raise ValueError("brute force is limited to square problems with n <= 8")
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        c = math.fsum(cost[i, perm[i]] for i in range(n))
        if c < best:
            best, best_perm = c, perm
    return np.arange(n, dtype=np.intp), np.asarray(best_perm, dtype=np.intp), np.full(n, 1.0 / n)


# -- network simplex ------------------------------------------------------------------

def _northwest_corner(a, b):
    m, n = a.size, b.size
    ra, rb = a.copy(), b.copy()
    flows = {}
    i = j = 0
    while True:
        f = min(ra[i], rb[j])
        flows[(i, j)] = f
        ra[i] -= f
        rb[j] -= f
        if i == m - 1 and j == n - 1:
            break
        if (ra[i] <= rb[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return flows


def _tree_walk(m, n, adj, cost):
    """Potentials and parent pointers of the basis tree rooted at row 0."""
    nodes = m + n
    pot = np.zeros(nodes)
    parent = np.full(nodes, -1, dtype=np.intp)
    depth = np.zeros(nodes, dtype=np.intp)
    seen = np.zeros(nodes, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        a = stack.pop()
        for c in adj[a]:
            if seen[c]:
                continue
            seen[c] = True
            parent[c] = a
            depth[c] = depth[a] + 1
            # edge between row i and column j carries u_i + v_j = C_ij
            if a < m:
                pot[c] = cost[a, c - m] - pot[a]
            else:
                pot[c] = cost[c, a - m] - pot[a]
            stack.append(c)
    return pot, parent, depth


def _cell(a, b, m):
    return (a, b - m) if a < m else (b, a - m)


def network_simplex(a, b, cost, max_iter=None, tol=None):
    """Exact transport plan for general weights.

    Entering cells follow Dantzig's rule; after a run of degenerate pivots
    the solver switches to Bland's rule (lowest index entering and leaving),
    which rules out cycling.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    if a.size != m or b.size != n:
        raise ValueError("weights do not match the cost matrix")
    scale = float(np.max(np.abs(cost))) if cost.size else 0.0
    tol = 1e-13 * max(scale, 1.0) if tol is None else tol
    max_iter = 50 * (m + n) * max(m, n) if max_iter is None else max_iter
    flows = _northwest_corner(a, b)
    adj = [set() for _ in range(m + n)]
    for i, j in flows:
        adj[i].add(m + j)
        adj[m + j].add(i)
    degenerate_run = 0
    for _ in range(max_iter):
        pot, parent, depth = _tree_walk(m, n, adj, cost)
        reduced = cost - pot[:m, None] - pot[None, m:]
        if degenerate_run < 2 * (m + n):
            k = int(np.argmin(reduced))
            if reduced.flat[k] >= -tol:
                break
        else:
            cand = np.flatnonzero(reduced.reshape(-1) < -tol)
            if cand.size == 0:
                break
            k = int(cand[0])
        ei, ej = divmod(k, n)
        # tree path from column ej up to row ei through the lowest common ancestor
        u, v = m + ej, ei
        up, down = [], []
        while u != v:
            if depth[u] >= depth[v]:
                up.append((u, parent[u]))
                u = parent[u]
            else:
                down.append((parent[v], v))
                v = parent[v]
        path = up + down[::-1]
        cycle = [_cell(p, q, m) for p, q in path]
        minus = cycle[0::2]
        plus = cycle[1::2]
        theta = min(flows[c] for c in minus)
        leaving = min((c for c in minus if flows[c] == theta), key=lambda c: c[0] * n + c[1])
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0
        for c in minus:
            flows[c] -= theta
        for c in plus:
            flows[c] += theta
        flows[(ei, ej)] = theta
        del flows[leaving]
        li, lj = leaving
        adj[li].discard(m + lj)
        adj[m + lj].discard(li)
        adj[ei].add(m + ej)
        adj[m + ej].add(ei)
    else:
        raise RuntimeError("network simplex did not converge")
    keys = sorted(c for c, f in flows.items() if f > 0)
    src = np.array([c[0] for c in keys], dtype=np.intp)
    dst = np.array([c[1] for c in keys], dtype=np.intp)
    mass = np.array([flows[c] for c in keys])
    return src, dst, mass
