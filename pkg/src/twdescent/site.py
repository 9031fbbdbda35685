"""Finite ringed sites: points, a cover, function rings and partitions of unity."""
from dataclasses import dataclass
from itertools import product

from flint import fmpq

from .linalg import Q


class SiteError(ValueError):
    pass


@dataclass(frozen=True)
class Site:
    """Ordered points with an ordered cover by nonempty subsets."""
    points: tuple
    opens: tuple

    def __init__(self, points, opens):
        points = tuple(points)
        opens = tuple(frozenset(u) for u in opens)
        if len(set(points)) != len(points):
            raise SiteError("duplicate points")
        pts = set(points)
        for i, u in enumerate(opens):
            if not u:
                raise SiteError(f"open {i} is empty")
            if not u <= pts:
                raise SiteError(f"open {i} has unknown points")
        if not opens or set().union(*opens) != pts:
            raise SiteError("opens do not cover the points")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "opens", opens)

    @property
    def n_opens(self):
        return len(self.opens)

    def order(self, subset):
        """Points of subset in site order."""
        return tuple(x for x in self.points if x in subset)

    def support(self, indices):
        if not indices:
            raise SiteError("empty multi-index")
        s = None
        for i in indices:
            if not 0 <= i < len(self.opens):
                raise SiteError(f"unknown open index {i}")
            s = self.opens[i] if s is None else s & self.opens[i]
        return s

    def opens_at(self, x):
        """Indices of opens containing x."""
        return tuple(i for i, u in enumerate(self.opens) if x in u)

    def first_open(self, x):
        return self.opens_at(x)[0]

    def multi_indices(self, x, length):
        """All multi-indices of the given length whose support contains x."""
        return list(product(self.opens_at(x), repeat=length))

    def sub_site(self, subset):
        """Cover of a subset by the traces of the opens (empty traces dropped)."""
        pts = self.order(subset)
        return Site(pts, [u & set(pts) for u in self.opens if u & set(pts)])


@dataclass(frozen=True)
class MultiIndex:
    indices: tuple
    support: frozenset

    @property
    def admissible(self):
        return bool(self.support)

    @property
    def level(self):
        return len(self.indices) - 1


def intersect(site, indices):
    indices = tuple(indices)
    return MultiIndex(indices, frozenset(site.support(indices)))


class RingElement:
    """A function on a finite set of points with exact rational values."""

    __slots__ = ("values",)

    def __init__(self, values):
        self.values = {x: Q(v) for x, v in dict(values).items()}

    @property
    def domain(self):
        return frozenset(self.values)

    def __call__(self, x):
        return self.values[x]

    def _check(self, other):
        if self.domain != other.domain:
            raise SiteError("domains differ")

    def __add__(self, other):
        self._check(other)
        return RingElement({x: v + other.values[x] for x, v in self.values.items()})

    def __sub__(self, other):
        self._check(other)
        return RingElement({x: v - other.values[x] for x, v in self.values.items()})

    def __mul__(self, other):
        if isinstance(other, RingElement):
            self._check(other)
            return RingElement({x: v * other.values[x] for x, v in self.values.items()})
        c = Q(other)
        return RingElement({x: v * c for x, v in self.values.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return RingElement({x: -v for x, v in self.values.items()})

    def __eq__(self, other):
        return isinstance(other, RingElement) and self.values == other.values

    def __hash__(self):
        return hash(tuple(sorted((repr(x), str(v)) for x, v in self.values.items())))

    def __repr__(self):
        return f"RingElement({ {x: str(v) for x, v in self.values.items()} })"


def constant(domain, c):
    return RingElement({x: c for x in domain})


def restrict(f, target):
    target = frozenset(target)
    if not target <= f.domain:
        raise SiteError("restriction target not contained in domain")
    return RingElement({x: f.values[x] for x in target})


def extend_by_zero(f, ambient):
    ambient = frozenset(ambient)
    if not f.domain <= ambient:
        raise SiteError("domain not contained in ambient set")
    return RingElement({x: f.values.get(x, fmpq(0)) for x in ambient})


@dataclass(frozen=True)
class PartitionOfUnity:
    weights: tuple

    def __call__(self, i, x):
        return self.weights[i].values[x]

    def check(self, site):
        """True iff supports are respected and the weights sum to one."""
        for i, w in enumerate(self.weights):
            for x in site.points:
                if x not in site.opens[i] and w(x) != 0:
                    return False
        for x in site.points:
            if sum((w(x) for w in self.weights), fmpq(0)) != 1:
                return False
        return True


def standard_partition(site):
    ws = []
    for u in site.opens:
        ws.append(RingElement({x: fmpq(1, len(site.opens_at(x))) if x in u else 0
                               for x in site.points}))
    return PartitionOfUnity(tuple(ws))
