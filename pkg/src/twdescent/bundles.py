"""Pointwise bundles, graded maps with exterior components, and complexes of bundles.

A bundle on a finite set of points is a rank per point; sections are the
product of the fibers Q^rank.  A graded map of total degree t carries, at
each point x, one matrix for every exterior monomial I (a bitmask over the
generators) and source degree n, mapping the degree-n fiber to the fiber in
degree n + t - |I|.
"""
from collections import defaultdict
from dataclasses import dataclass

from flint import fmpq, fmpq_mat

from . import linalg as la


def popcount(m):
    return bin(m).count("1")


def ext_sign(I, J):
    """Sign of w_I w_J = sign * w_{I|J} for disjoint bitmasks I, J."""
    s = 0
    j = J
    while j:
        b = j & -j
        # generators of I strictly above b must be moved past it
        s += popcount(I & ~((b << 1) - 1))
        j ^= b
    return -1 if s & 1 else 1


# ---------------------------------------------------------------- bundles

@dataclass(frozen=True)
class Bundle:
    """Ungraded bundle: a rank on every point of the domain."""
    domain: frozenset
    ranks: tuple  # sorted (point, rank) pairs with rank > 0

    @staticmethod
    def of(domain, ranks):
        return Bundle(frozenset(domain), tuple(sorted(((x, r) for x, r in dict(ranks).items() if r), key=_pkey)))

    def rank(self, x):
        return dict(self.ranks).get(x, 0)


@dataclass(frozen=True)
class BundleMap:
    source: Bundle
    target: Bundle
    blocks: dict

    def at(self, x):
        b = self.blocks.get(x)
        return b if b is not None else la.zeros(self.target.rank(x), self.source.rank(x))


def _pkey(pair):
    return repr(pair[0])


def kernel(f):
    """Pointwise kernel of a bundle map with its inclusion."""
    ranks, inc = {}, {}
    for x in f.source.domain:
        N = la.nullspace(f.at(x))
        ranks[x] = N.ncols()
        inc[x] = N
    K = Bundle.of(f.source.domain, ranks)
    return K, BundleMap(K, f.source, inc)


# ---------------------------------------------------------------- graded

class GradedBundle:
    """Ranks indexed by point and degree on a fixed domain."""

    __slots__ = ("domain", "ranks", "_key")

    def __init__(self, domain, ranks=None):
        self.domain = frozenset(domain)
        clean = {}
        for x, rs in (ranks or {}).items():
            if x not in self.domain:
                raise ValueError(f"point {x!r} outside domain")
            d = {n: r for n, r in rs.items() if r}
            if any(r < 0 for r in d.values()):
                raise ValueError("negative rank")
            if d:
                clean[x] = d
        self.ranks = clean
        self._key = None

    def rank(self, x, n):
        d = self.ranks.get(x)
        return d.get(n, 0) if d else 0

    def degrees(self, x=None):
        if x is not None:
            return sorted(self.ranks.get(x, {}))
        return sorted({n for d in self.ranks.values() for n in d})

    def bounds(self):
        ds = self.degrees()
        return (ds[0], ds[-1]) if ds else None

    def total_rank(self, x):
        return sum(self.ranks.get(x, {}).values())

    def key(self):
        if self._key is None:
            self._key = (self.domain, tuple(sorted(((repr(x), tuple(sorted(d.items())))
                                                    for x, d in self.ranks.items()))))
        return self._key

    def __eq__(self, other):
        return isinstance(other, GradedBundle) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"GradedBundle({ {x: d for x, d in self.ranks.items()} })"

    def restrict(self, subset):
        subset = frozenset(subset)
        if not subset <= self.domain:
            raise ValueError("restriction target not contained in domain")
        return GradedBundle(subset, {x: d for x, d in self.ranks.items() if x in subset})

    def extend(self, ambient):
        """Same fibers viewed on a larger domain (zero fibers elsewhere)."""
        return GradedBundle(frozenset(ambient) | self.domain, self.ranks)

    def shift(self, k=1):
        """E[k]^n = E^{n+k}."""
        return GradedBundle(self.domain, {x: {n - k: r for n, r in d.items()} for x, d in self.ranks.items()})

    def is_zero(self):
        return not self.ranks

    def degree_part(self, n):
        return Bundle.of(self.domain, {x: self.rank(x, n) for x in self.domain})


def direct_sum(*parts):
    """Fiberwise direct sum; summands appear in the given order."""
    dom = parts[0].domain
    ranks = defaultdict(lambda: defaultdict(int))
    for p in parts:
        if p.domain != dom:
            raise ValueError("direct sum of bundles on different domains")
        for x, d in p.ranks.items():
            for n, r in d.items():
                ranks[x][n] += r
    return GradedBundle(dom, {x: dict(d) for x, d in ranks.items()})


def sum_offsets(parts, x, n):
    """Row offsets of each summand inside the fiber of a direct sum at (x, n)."""
    out, o = [], 0
    for p in parts:
        out.append(o)
        o += p.rank(x, n)
    return out


class GradedMap:
    """Right-linear map over the exterior algebra on g generators.

    blocks[(x, I, n)] maps src fiber (x, n) to tgt fiber (x, n + degree - |I|).
    Zero blocks are never stored.
    """

    __slots__ = ("src", "tgt", "degree", "g", "blocks")

    def __init__(self, src, tgt, degree, blocks=None, g=0):
        self.src, self.tgt, self.degree, self.g = src, tgt, degree, g
        bl = {}
        if blocks:
            for k, M in blocks.items():
                if M:
                    bl[k] = M
        self.blocks = bl

    # structure
    def target_degree(self, I, n):
        return n + self.degree - popcount(I)

    def block(self, x, I, n):
        M = self.blocks.get((x, I, n))
        if M is None:
            return la.zeros(self.tgt.rank(x, self.target_degree(I, n)), self.src.rank(x, n))
        return M

    def points(self):
        return {k[0] for k in self.blocks}

    def is_zero(self):
        return not self.blocks

    def __bool__(self):
        return bool(self.blocks)

    def __eq__(self, other):
        return (isinstance(other, GradedMap) and self.degree == other.degree
                and self.blocks == other.blocks)

    def __hash__(self):
        return hash((self.degree, len(self.blocks)))

    def __repr__(self):
        return f"GradedMap(degree={self.degree}, g={self.g}, blocks={len(self.blocks)})"

    def _like(self, blocks, src=None, tgt=None, degree=None):
        return GradedMap(src or self.src, tgt or self.tgt, self.degree if degree is None else degree,
                         blocks, self.g)

    # linear structure
    def __add__(self, other):
        if other.degree != self.degree:
            raise ValueError("adding maps of different degrees")
        bl = dict(self.blocks)
        for k, M in other.blocks.items():
            bl[k] = bl[k] + M if k in bl else M
        return GradedMap(_union(self.src, other.src), _union(self.tgt, other.tgt), self.degree, bl,
                         max(self.g, other.g))

    def __neg__(self):
        return self._like({k: -M for k, M in self.blocks.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c):
        c = la.Q(c)
        if not c:
            return self._like({})
        return self._like({k: M * c for k, M in self.blocks.items()})

    def restrict(self, subset):
        subset = frozenset(subset)
        return GradedMap(self.src.restrict(subset & self.src.domain), self.tgt.restrict(subset & self.tgt.domain),
                         self.degree, {k: M for k, M in self.blocks.items() if k[0] in subset}, self.g)

    def on(self, src, tgt):
        """Same blocks, reinterpreted between the given bundles."""
        return GradedMap(src, tgt, self.degree, self.blocks, self.g)

    def mono_part(self, I):
        return self._like({k: M for k, M in self.blocks.items() if k[1] == I})

    def forget(self):
        """Exterior-degree-zero part, as a map over the ground ring alone."""
        return GradedMap(self.src, self.tgt, self.degree,
                         {k: M for k, M in self.blocks.items() if k[1] == 0}, 0)

    def with_g(self, g):
        return GradedMap(self.src, self.tgt, self.degree, self.blocks, g)


def _union(A, B):
    """Bundle on both domains; the two agree wherever they overlap."""
    if B.domain <= A.domain:
        return A
    if A.domain <= B.domain:
        return B
    return GradedBundle(A.domain | B.domain, {**B.ranks, **A.ranks})


def compose(A, B):
    """A after B; exterior parts multiply with the Koszul sign of the algebra only."""
    g = max(A.g, B.g)
    by = defaultdict(list)
    for (x, I, m), M in A.blocks.items():
        by[(x, m)].append((I, M))
    out = {}
    for (x, J, n), N in B.blocks.items():
        m = n + B.degree - popcount(J)
        for I, M in by.get((x, m), ()):
            if I & J:
                continue
            P = M * N
            if not P:
                continue
            if J and I and ext_sign(I, J) < 0:
                P = -P
            k = (x, I | J, n)
            out[k] = out[k] + P if k in out else P
    dom = A.src.domain & B.tgt.domain & A.tgt.domain & B.src.domain
    src = B.src if B.src.domain == dom else B.src.restrict(dom)
    tgt = A.tgt if A.tgt.domain == dom else A.tgt.restrict(dom)
    return GradedMap(src, tgt, A.degree + B.degree, out, g)


def identity(E, g=0):
    return GradedMap(E, E, 0, {(x, 0, n): la.eye(r) for x, d in E.ranks.items() for n, r in d.items()}, g)


def zero_map(src, tgt, degree, g=0):
    return GradedMap(src, tgt, degree, {}, g)


def hom_d(F_conn, E_conn, phi):
    """d(phi) = F o phi - (-1)^|phi| phi o E."""
    a = compose(F_conn, phi)
    b = compose(phi, E_conn)
    return a - b if phi.degree % 2 == 0 else a + b


def block_map(rows, cols, entries, degree, g=0):
    """Map between direct sums: entries[(r, c)] is a GradedMap cols[c] -> rows[r]."""
    src, tgt = direct_sum(*cols), direct_sum(*rows)
    acc = {}
    for (r, c), phi in entries.items():
        if phi is None:
            continue
        for (x, I, n), M in phi.blocks.items():
            m = n + degree - popcount(I)
            k = (x, I, n)
            if k not in acc:
                acc[k] = la.zeros(tgt.rank(x, m), src.rank(x, n))
            ro = sum_offsets(rows, x, m)[r]
            co = sum_offsets(cols, x, n)[c]
            la.paste(acc[k], M, ro, co)
    return GradedMap(src, tgt, degree, acc, g)


def block_entry(phi, rows, cols, r, c):
    """Extract the (r, c) block of a map between direct sums."""
    out = {}
    for (x, I, n), M in phi.blocks.items():
        m = phi.target_degree(I, n)
        ro, co = sum_offsets(rows, x, m)[r], sum_offsets(cols, x, n)[c]
        B = la.window(M, ro, ro + rows[r].rank(x, m), co, co + cols[c].rank(x, n))
        if B:
            out[(x, I, n)] = B
    return GradedMap(cols[c], rows[r], phi.degree, out, phi.g)


# ---------------------------------------------------------------- complexes

class BundleComplex:
    """Graded bundle with a degree-one differential squaring to zero."""

    __slots__ = ("graded", "d")

    def __init__(self, graded, d=None):
        self.graded = graded
        self.d = d if d is not None else zero_map(graded, graded, 1)
        if self.d.degree != 1:
            raise ValueError("differential must have degree 1")

    def diff(self, x, n):
        return self.d.block(x, 0, n)

    def is_valid(self):
        return compose(self.d, self.d).is_zero()

    def __eq__(self, other):
        return isinstance(other, BundleComplex) and self.graded == other.graded and self.d == other.d

    def __hash__(self):
        return hash(self.graded)

    def __repr__(self):
        return f"BundleComplex({self.graded!r})"


def _range(c, x):
    ds = c.graded.degrees(x)
    return range(ds[0] - 1, ds[-1] + 2) if ds else range(0)


def cohomology(c):
    """{degree: {point: rank}} of the pointwise cohomology, nonzero entries only."""
    out = defaultdict(dict)
    for x in c.graded.domain:
        for n in c.graded.degrees(x):
            h = c.graded.rank(x, n) - la.rank(c.diff(x, n)) - la.rank(c.diff(x, n - 1))
            if h:
                out[n][x] = h
    return {n: d for n, d in sorted(out.items())}


def euler(c, x):
    return sum((-1) ** (n % 2) * r for n, r in c.graded.ranks.get(x, {}).items())


def is_chain_map(f, C, D):
    return f.degree == 0 and (compose(D.d, f.forget()) - compose(f.forget(), C.d)).is_zero()


@dataclass
class QuasiIsoCertificate:
    ok: bool
    ranks: dict  # (point, degree) -> (dim H source, dim H target, rank of induced map)
    failure: tuple = None


def induced_rank(f, C, D, x, n):
    """(dim H^n C, dim H^n D, rank of H^n f) at x."""
    dC, dC_prev = C.diff(x, n), C.diff(x, n - 1)
    dD, dD_prev = D.diff(x, n), D.diff(x, n - 1)
    Z = la.nullspace(dC)
    hC = Z.ncols() - la.rank(dC_prev)
    bD = la.rank(dD_prev)
    hD = D.graded.rank(x, n) - la.rank(dD) - bD
    F = f.block(x, 0, n)
    img = F * Z if Z.ncols() else la.zeros(D.graded.rank(x, n), 0)
    r = la.rank(la.hstack([img, dD_prev])) - bD if D.graded.rank(x, n) else 0
    return hC, hD, r


def is_quasi_iso(f, C, D, window=None):
    """Whether the chain map f: C -> D induces isomorphisms on all pointwise cohomology.

    window=(lo, hi) restricts the comparison to those degrees.
    """
    if not is_chain_map(f, C, D):
        raise ValueError("not a chain map")
    ranks = {}
    failure = None
    for x in sorted(C.graded.domain | D.graded.domain, key=repr):
        degs = set(C.graded.degrees(x)) | set(D.graded.degrees(x)) if x in C.graded.domain and x in D.graded.domain else set()
        if window is not None:
            degs = {n for n in degs if window[0] <= n <= window[1]}
        for n in sorted(degs):
            hC, hD, r = induced_rank(f, C, D, x, n)
            ranks[(x, n)] = (hC, hD, r)
            if failure is None and not (hC == hD == r):
                failure = (x, n)
    return QuasiIsoCertificate(failure is None, ranks, failure)


@dataclass
class Contraction:
    """Strong deformation retract onto harmonic representatives."""
    harmonic: GradedBundle
    iota: GradedMap  # harmonic -> complex
    p: GradedMap     # complex -> harmonic
    h: GradedMap     # degree -1 on the complex


def contraction(c):
    """Pointwise splitting V = B + H + C with dh + hd = id - iota p."""
    E = c.graded
    Hr, iota, p, h = {}, {}, {}, {}
    for x in E.domain:
        degs = E.degrees(x)
        bases = {}
        for n in degs:
            r = E.rank(x, n)
            d = c.diff(x, n)
            _, piv = la.rref(d)
            Cb = la.sub(la.eye(r), range(r), piv)
            Z = la.nullspace(d)
            Bb = c.diff(x, n - 1) * bases[n - 1][2] if n - 1 in bases else la.zeros(r, 0)
            _, piv2 = la.rref(la.hstack([Bb, Z]))
            nb = Bb.ncols()
            Hb = la.sub(Z, range(r), [j - nb for j in piv2 if j >= nb])
            bases[n] = (Bb, Hb, Cb)
        for n in degs:
            Bb, Hb, Cb = bases[n]
            r = E.rank(x, n)
            P = la.hstack([Bb, Hb, Cb]) if r else la.zeros(0, 0)
            Pinv = la.inverse(P)
            nb, nh = Bb.ncols(), Hb.ncols()
            if nh:
                Hr.setdefault(x, {})[n] = nh
                iota[(x, 0, n)] = Hb
                p[(x, 0, n)] = la.window(Pinv, nb, nb + nh, 0, r)
            if nb:
                # B^n coordinates go back to the C^{n-1} vectors they came from
                Cprev = bases[n - 1][2]
                h[(x, 0, n)] = Cprev * la.window(Pinv, 0, nb, 0, r)
    H = GradedBundle(E.domain, Hr)
    return Contraction(H, GradedMap(H, E, 0, iota), GradedMap(E, H, 0, p), GradedMap(E, E, -1, h))
