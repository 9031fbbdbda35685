"""Hom-valued Cech cochains over a finite cover: composition, differential, refinement.

A cochain of total degree t stores, for each multi-index (i_0, ..., i_p),
a GradedMap of degree t - p from the source object of i_p to the target
object of i_0, restricted to the intersection.  Absent components are zero.
"""
from collections import defaultdict
from dataclasses import dataclass
from itertools import product

from .bundles import GradedMap, compose as op_compose, identity, popcount


class Cochain:
    __slots__ = ("degree", "comps")

    def __init__(self, degree, comps=None):
        self.degree = degree
        self.comps = {I: M for I, M in (comps or {}).items() if M}
        for I, M in self.comps.items():
            if M.degree != degree - (len(I) - 1):
                raise ValueError(f"component {I} has degree {M.degree}, expected {degree - len(I) + 1}")

    def __bool__(self):
        return bool(self.comps)

    def is_zero(self):
        return not self.comps

    def __eq__(self, other):
        return isinstance(other, Cochain) and self.degree == other.degree and self.comps == other.comps

    def __hash__(self):
        return hash((self.degree, len(self.comps)))

    def __repr__(self):
        return f"Cochain(degree={self.degree}, comps={sorted(self.comps)})"

    def __add__(self, other):
        if self.degree != other.degree:
            raise ValueError("adding cochains of different degrees")
        out = dict(self.comps)
        for I, M in other.comps.items():
            out[I] = out[I] + M if I in out else M
        return Cochain(self.degree, out)

    def __neg__(self):
        return Cochain(self.degree, {I: -M for I, M in self.comps.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c):
        return Cochain(self.degree, {I: M.scale(c) for I, M in self.comps.items()})

    def level(self, p):
        """Components of Cech degree p only."""
        return Cochain(self.degree, {I: M for I, M in self.comps.items() if len(I) == p + 1})

    def levels(self):
        return sorted({len(I) - 1 for I in self.comps})

    def max_level(self):
        return max((len(I) - 1 for I in self.comps), default=-1)

    def restrict(self, subset):
        """Components restricted to a set of points."""
        subset = frozenset(subset)
        out = {}
        for I, M in self.comps.items():
            if M.src.domain & subset:
                out[I] = M.restrict(M.src.domain & subset)
        return Cochain(self.degree, out)

    def forget(self):
        return Cochain(self.degree, {I: M.forget() for I, M in self.comps.items()})

    def map_comps(self, f):
        return Cochain(self.degree, {I: f(I, M) for I, M in self.comps.items()})

    def up_to(self, p):
        return Cochain(self.degree, {I: M for I, M in self.comps.items() if len(I) - 1 <= p})


def compose(u, v):
    """(u.v)_K = (-1)^{q r} u_{K[:p+1]} o v_{K[p:]}, q the hom degree of u's piece, r the Cech degree of v's."""
    by_last = defaultdict(list)
    for I, M in u.comps.items():
        by_last[I[-1]].append((I, M))
    out = {}
    for J, N in v.comps.items():
        r = len(J) - 1
        for I, M in by_last.get(J[0], ()):
            if not (M.src.domain & N.tgt.domain):
                continue
            P = op_compose(M, N)
            if not P:
                continue
            q = M.degree
            if (q * r) % 2:
                P = -P
            K = I + J[1:]
            out[K] = out[K] + P if K in out else P
    return Cochain(u.degree + v.degree, out)


def delta(u, site):
    """Interior-deletion Cech differential: (du)_K = sum_{k=1}^{p} (-1)^k u_{K minus k}."""
    out = {}
    for J, M in u.comps.items():
        p = len(J) - 1
        if p < 1:
            continue
        dom = M.src.domain
        for j, U in enumerate(site.opens):
            sup = dom & U
            if not sup:
                continue
            R = M if sup == dom else M.restrict(sup)
            for k in range(1, p + 1):
                K = J[:k] + (j,) + J[k:]
                P = R if k % 2 == 0 else -R
                out[K] = out[K] + P if K in out else P
    return Cochain(u.degree + 1, out)


def identity_cochain(objects, g=0):
    """Identity maps on singleton multi-indices."""
    return Cochain(0, {(i,): identity(E.graded if hasattr(E, "graded") else E, g) for i, E in enumerate(objects)})


def leibniz_residual(u, v, site):
    """delta(u.v) - delta u . v - (-1)^{|u|} u . delta v, with |u| = p + q."""
    lhs = delta(compose(u, v), site)
    rhs = compose(delta(u, site), v)
    w = compose(u, delta(v, site))
    rhs = rhs - w if u.degree % 2 else rhs + w
    return lhs - rhs


def leibniz_check(u, v, site):
    return leibniz_residual(u, v, site).is_zero()


@dataclass(frozen=True)
class Refinement:
    """A cover V of the same points with V_j inside U_{sigma(j)}."""
    coarse: object
    fine: object
    sigma: tuple

    def __post_init__(self):
        if self.coarse.points != self.fine.points:
            raise ValueError("refinement must live on the same points")
        if len(self.sigma) != self.fine.n_opens:
            raise ValueError("sigma must assign an open to every refining open")
        for j, i in enumerate(self.sigma):
            if not 0 <= i < self.coarse.n_opens or not self.fine.opens[j] <= self.coarse.opens[i]:
                raise ValueError(f"V_{j} is not contained in U_{i}")

    def then(self, other):
        """Compose with a further refinement of the fine cover."""
        return Refinement(self.coarse, other.fine, tuple(self.sigma[s] for s in other.sigma))


def restrict_to_refinement(u, ref):
    """Pull a cochain back along sigma: component J is u_{sigma(J)} restricted to V_J."""
    pre = defaultdict(list)
    for j, i in enumerate(ref.sigma):
        pre[i].append(j)
    out = {}
    for I, M in u.comps.items():
        for J in product(*(pre[i] for i in I)):
            sup = ref.fine.support(J) & M.src.domain
            if sup:
                out[J] = M.restrict(sup)
    return Cochain(u.degree, out)
