"""Exact rational matrix helpers on top of FLINT's fmpq_mat."""
from fractions import Fraction

from flint import fmpq, fmpq_mat


def Q(x):
    """Coerce an int, Fraction, fmpq or 'p/q' string to fmpq."""
    if isinstance(x, fmpq):
        return x
    if isinstance(x, Fraction):
        return fmpq(x.numerator, x.denominator)
    if isinstance(x, str):
        return fmpq(x.strip())
    return fmpq(x)


def zeros(r, c):
    return fmpq_mat(r, c)


def eye(n):
    M = fmpq_mat(n, n)
    for i in range(n):
        M[i, i] = 1
    return M


def matrix(rows, ncols=None):
    """Build from a list of row lists."""
    r = len(rows)
    c = len(rows[0]) if r else (ncols or 0)
    flat = [Q(v) for row in rows for v in row]
    return fmpq_mat(r, c, flat) if r and c else fmpq_mat(r, c)


def flat(M):
    return M.entries()


def from_flat(r, c, values):
    if r == 0 or c == 0:
        return fmpq_mat(r, c)
    return fmpq_mat(r, c, [Q(v) for v in values])


def is_zero(M):
    return not M


def shape(M):
    return M.nrows(), M.ncols()


def block(rows_of_blocks, row_sizes, col_sizes):
    """Assemble a block matrix; None entries are zero blocks."""
    R, C = sum(row_sizes), sum(col_sizes)
    out = fmpq_mat(R, C)
    r0 = 0
    for bi, rs in enumerate(row_sizes):
        c0 = 0
        for bj, cs in enumerate(col_sizes):
            B = rows_of_blocks[bi][bj]
            if B is not None and rs and cs and B:
                paste(out, B, r0, c0)
            c0 += cs
        r0 += rs
    return out


def paste(out, B, r0, c0):
    """Write B into out at offset (r0, c0), in place."""
    r, c = B.nrows(), B.ncols()
    vals = B.entries()
    k = 0
    for i in range(r):
        for j in range(c):
            v = vals[k]
            k += 1
            if v:
                out[r0 + i, c0 + j] = v


def paste_add(out, B, r0, c0, sign=1):
    """Add sign * B into out at offset (r0, c0), in place."""
    r, c = B.nrows(), B.ncols()
    vals = B.entries()
    k = 0
    for i in range(r):
        for j in range(c):
            v = vals[k]
            k += 1
            if v:
                out[r0 + i, c0 + j] = out[r0 + i, c0 + j] + (v if sign > 0 else -v)


def add_identity(out, n, r0, c0, sign=1):
    for i in range(n):
        out[r0 + i, c0 + i] = out[r0 + i, c0 + i] + sign


def hstack(blocks, nrows=None):
    if not blocks:
        return fmpq_mat(nrows or 0, 0)
    return block([blocks], [blocks[0].nrows()], [b.ncols() for b in blocks])


def vstack(blocks, ncols=None):
    if not blocks:
        return fmpq_mat(0, ncols or 0)
    return block([[b] for b in blocks], [b.nrows() for b in blocks], [blocks[0].ncols()])


def sub(M, rows, cols):
    """Submatrix on the given row and column index lists."""
    out = fmpq_mat(len(rows), len(cols))
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            v = M[i, j]
            if v:
                out[a, b] = v
    return out


def window(M, r0, r1, c0, c1):
    return sub(M, range(r0, r1), range(c0, c1))


def rref(M):
    """Reduced row echelon form and pivot columns."""
    if M.nrows() == 0 or M.ncols() == 0:
        return fmpq_mat(M.nrows(), M.ncols()), []
    R, rk = M.rref()
    piv = []
    j = 0
    for i in range(rk):
        while not R[i, j]:
            j += 1
        piv.append(j)
        j += 1
    return R, piv


def rank(M):
    if M.nrows() == 0 or M.ncols() == 0:
        return 0
    return M.rank()


def nullspace(M):
    """Columns spanning ker M, one per free variable (canonical from rref)."""
    n = M.ncols()
    R, piv = rref(M)
    free = [j for j in range(n) if j not in set(piv)]
    N = fmpq_mat(n, len(free))
    for k, f in enumerate(free):
        N[f, k] = 1
        for i, p in enumerate(piv):
            v = R[i, f]
            if v:
                N[p, k] = -v
    return N


def column_basis(M):
    """Pivot columns of M, a basis of its column space."""
    _, piv = rref(M)
    return sub(M, range(M.nrows()), piv)


def solve(A, B):
    """Some X with A X = B, or None when inconsistent. Free variables are set to zero."""
    m, n = A.nrows(), A.ncols()
    k = B.ncols()
    if m == 0:
        return fmpq_mat(n, k)
    if n == 0:
        return fmpq_mat(0, k) if not B else None
    R, piv = rref(hstack([A, B]))
    for j in piv:
        if j >= n:
            return None
    X = fmpq_mat(n, k)
    for i, p in enumerate(piv):
        for c in range(k):
            v = R[i, n + c]
            if v:
                X[p, c] = v
    return X


def inverse(M):
    if M.nrows() == 0:
        return fmpq_mat(0, 0)
    return M.inv()


def in_span(A, v):
    return solve(A, v) is not None


def col(M, j):
    return sub(M, range(M.nrows()), [j])


def to_strings(M):
    return [str(v) for v in M.entries()]
