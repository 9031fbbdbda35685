"""Exact solution of linear equations given by a linear operator on block unknowns.

The operator is sampled on unit matrices to assemble a sparse system, which
is split into independent pieces before exact row reduction.  Pivots follow
the order in which unknowns are listed, so solutions are reproducible.
"""
from collections import defaultdict

from flint import fmpq_mat

from . import linalg as la


def _unit(r, c, i, j):
    M = fmpq_mat(r, c)
    M[i, j] = 1
    return M


def solve_blocks(apply, slots, target):
    """Find X (dict key -> matrix) with apply(X) == target, or None.

    apply maps a dict of unknown blocks to a dict of output blocks and must be
    linear.  slots lists (key, rows, cols) of the unknowns; absent output
    blocks count as zero.
    """
    rowid = {}
    coef = defaultdict(dict)
    n = 0
    cols = []
    for key, r, c in slots:
        for i in range(r):
            for j in range(c):
                out = apply({key: _unit(r, c, i, j)})
                for ek, M in out.items():
                    mc = M.ncols()
                    for k, v in enumerate(M.entries()):
                        if v:
                            rk = (ek, k // mc, k % mc)
                            rid = rowid.setdefault(rk, len(rowid))
                            coef[rid][n] = v
                cols.append((key, i, j, r, c))
                n += 1
    rhs = {}
    for ek, M in target.items():
        mc = M.ncols()
        for k, v in enumerate(M.entries()):
            if v:
                rk = (ek, k // mc, k % mc)
                if rk not in rowid:
                    return None
                rhs[rowid[rk]] = v
    x = solve_sparse(coef, rhs, n)
    if x is None:
        return None
    out = {key: fmpq_mat(r, c) for key, r, c in slots}
    for col, v in x.items():
        key, i, j, r, c = cols[col]
        out[key][i, j] = v
    return out


def solve_sparse(coef, rhs, n):
    """Solve rows {row: {col: value}} = rhs; free variables are zero."""
    rows = {r: d for r, d in coef.items() if any(d.values())}
    for r, v in rhs.items():
        if v and r not in rows:
            return None
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for d in rows.values():
        it = iter(d)
        c0 = find(next(it))
        for c in it:
            c1 = find(c)
            if c1 != c0:
                parent[c1] = c0
    groups = defaultdict(list)
    for r in sorted(rows):
        groups[find(next(iter(rows[r])))].append(r)
    x = {}
    for root in sorted(groups):
        rs = groups[root]
        if not any(rhs.get(r) for r in rs):
            continue
        cs = sorted({c for r in rs for c in rows[r]})
        cidx = {c: k for k, c in enumerate(cs)}
        A = fmpq_mat(len(rs), len(cs) + 1)
        for a, r in enumerate(rs):
            for c, v in rows[r].items():
                if v:
                    A[a, cidx[c]] = v
            v = rhs.get(r)
            if v:
                A[a, len(cs)] = v
        R, piv = la.rref(A)
        if piv and piv[-1] == len(cs):
            return None
        for i, p in enumerate(piv):
            v = R[i, len(cs)]
            if v:
                x[cs[p]] = v
    return x
