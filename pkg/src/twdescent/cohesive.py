"""Cohesive modules over the finite model algebra and their hom complexes.

The model algebra on g generators is functions on points valued in the
exterior algebra; it has zero differential and zero curvature.  A cohesive
module is a bounded graded bundle with a degree-one connection whose
exterior components are stored as the monomial blocks of a GradedMap.
"""
from dataclasses import dataclass, field

from . import linalg as la
from .bundles import (BundleComplex, GradedMap, GradedBundle, block_map, compose, direct_sum,
                      hom_d, identity, is_quasi_iso, popcount, zero_map)
from .site import Site


@dataclass(frozen=True)
class ModelAlgebra:
    site: Site
    generators: int = 0

    @property
    def monomials(self):
        return range(1 << self.generators)


class CohesiveModule:
    """Graded bundle with a flat connection; quasi=True drops the finiteness promise."""

    __slots__ = ("graded", "conn", "g", "quasi")

    def __init__(self, graded, conn=None, g=0, quasi=False):
        self.graded = graded
        self.conn = conn if conn is not None else zero_map(graded, graded, 1, g)
        self.g = g
        self.quasi = quasi
        if self.conn.degree != 1:
            raise ValueError("connection must have degree 1")

    @property
    def domain(self):
        return self.graded.domain

    def forget(self):
        return BundleComplex(self.graded, self.conn.forget())

    def restrict(self, subset):
        return CohesiveModule(self.graded.restrict(subset), self.conn.restrict(subset), self.g, self.quasi)

    def __eq__(self, other):
        return isinstance(other, CohesiveModule) and self.graded == other.graded and self.conn == other.conn

    def __hash__(self):
        return hash(self.graded)

    def __repr__(self):
        return f"CohesiveModule({self.graded!r}, g={self.g})"


def from_complex(c, g=0):
    return CohesiveModule(c.graded, c.d.with_g(g), g)


@dataclass
class Verdict:
    ok: bool
    where: tuple = None
    message: str = ""

    def __bool__(self):
        return self.ok


def check_shapes(phi):
    """First block whose shape disagrees with the declared bundles, or None."""
    for (x, I, n), M in sorted(phi.blocks.items(), key=lambda kv: (repr(kv[0][0]), kv[0][1], kv[0][2])):
        m = phi.target_degree(I, n)
        if (M.nrows(), M.ncols()) != (phi.tgt.rank(x, m), phi.src.rank(x, n)):
            return (x, I, n)
        if I >= (1 << phi.g):
            return (x, I, n)
    return None


def first_block(phi):
    """Deterministically chosen nonzero block key of phi."""
    if not phi.blocks:
        return None
    return min(phi.blocks, key=lambda k: (popcount(k[1]), k[2], repr(k[0]), k[1]))


def validate_cohesive(E):
    """Boundedness, shapes and flatness; reports (degree, exterior degree, point) on failure."""
    bad = check_shapes(E.conn)
    if bad:
        x, I, n = bad
        return Verdict(False, (n, popcount(I), x), "connection block has the wrong shape")
    if not E.quasi and E.graded.bounds() is None and E.graded.ranks:
        return Verdict(False, None, "unbounded")
    curv = compose(E.conn, E.conn)
    k = first_block(curv)
    if k is not None:
        x, I, n = k
        return Verdict(False, (n, popcount(I), x), "connection is not flat")
    return Verdict(True)


def hom_differential(E, F, phi):
    return hom_d(F.conn, E.conn, phi)


def is_closed(E, F, phi):
    return hom_differential(E, F, phi).is_zero()


def reindex(phi, src, tgt, ks, kt):
    """phi between shifted bundles: src = S[ks], tgt = T[kt]; blocks re-keyed by the shift."""
    return GradedMap(src, tgt, phi.degree + ks - kt,
                     {(x, I, n - ks): M for (x, I, n), M in phi.blocks.items()}, phi.g)


def shift(E, k=1):
    """E[k] with connection multiplied by (-1)^k."""
    G = E.graded.shift(k)
    conn = reindex(E.conn, G, G, k, k)
    if k % 2:
        conn = -conn
    return CohesiveModule(G, conn, E.g, E.quasi)


def cone(phi, E, F):
    """Cone of a closed degree-0 map E -> F: F + E[1] with connection [[F, phi], [0, -E]]."""
    if phi.degree != 0:
        raise ValueError("cone needs a degree-0 map")
    if not is_closed(E, F, phi):
        raise ValueError("cone needs a closed map")
    E1 = shift(E)
    parts = [F.graded, E1.graded]
    ph = reindex(phi, E1.graded, F.graded, 1, 0)
    conn = block_map(parts, parts, {(0, 0): F.conn, (0, 1): ph, (1, 1): E1.conn}, 1, max(E.g, F.g))
    return CohesiveModule(direct_sum(*parts), conn, max(E.g, F.g), E.quasi or F.quasi)


def cone_maps(phi, E, F):
    """Canonical maps F -> cone(phi) -> E[1]."""
    C = cone(phi, E, F)
    E1 = shift(E)
    parts = [F.graded, E1.graded]
    inc = block_map(parts, [F.graded], {(0, 0): identity(F.graded, C.g)}, 0, C.g)
    proj = block_map([E1.graded], parts, {(0, 1): identity(E1.graded, C.g)}, 0, C.g)
    return C, inc, proj


def forget(E):
    return E.forget()


def pullback(E, subset):
    """Restriction to a smaller set of points."""
    return E.restrict(subset)


def pushforward(E, ambient):
    """Same sections viewed over a larger set of points; fibers outside vanish."""
    G = E.graded.extend(ambient)
    return CohesiveModule(G, E.conn.on(G, G), E.g, quasi=True)


def is_quasi_iso_cohesive(phi, E, F):
    return is_quasi_iso(phi.forget(), E.forget(), F.forget())


# ---------------------------------------------------------------- exact lifting

def _op_slots(src, tgt, x, degree, g):
    out = []
    for I in range(1 << g):
        for n in src.degrees(x):
            r, c = tgt.rank(x, n + degree - popcount(I)), src.rank(x, n)
            if r and c:
                out.append(((x, I, n), r, c))
    return out


@dataclass
class HomotopyCertificate:
    ok: bool
    inverse: object = None
    h_src: object = None  # inverse o phi - id = d(h_src)
    h_tgt: object = None  # phi o inverse - id = d(h_tgt)
    reason: str = ""


def lift_p(psi, f, E, F, G):
    """Closed eta: E -> F and h: E -> G with psi eta - f = d h, psi: F -> G a quasi-iso.

    Solved point by point as one exact linear system in (eta, h).
    """
    from .solver import solve_blocks
    g = max(E.g, F.g, G.g, psi.g, f.g)
    eta_blocks, h_blocks = {}, {}
    points = sorted(E.domain, key=repr)
    for x in points:
        Ex, Fx, Gx = E.restrict({x}), F.restrict({x}), G.restrict({x})
        px, fx = psi.restrict({x}), f.restrict({x})
        slots = [("eta",) + s for s in _op_slots(Ex.graded, Fx.graded, x, 0, g)]
        slots += [("h",) + s for s in _op_slots(Ex.graded, Gx.graded, x, -1, g)]

        def apply(X, Ex=Ex, Fx=Fx, Gx=Gx, px=px):
            eta = GradedMap(Ex.graded, Fx.graded, 0, {k[1]: M for k, M in X.items() if k[0] == "eta"}, g)
            h = GradedMap(Ex.graded, Gx.graded, -1, {k[1]: M for k, M in X.items() if k[0] == "h"}, g)
            out = {}
            for k, M in hom_differential(Ex, Fx, eta).blocks.items():
                out[("closed", k)] = M
            for k, M in (compose(px, eta) - hom_differential(Ex, Gx, h)).blocks.items():
                out[("lift", k)] = M
            return out

        target = {("lift", k): M for k, M in fx.blocks.items()}
        sol = solve_blocks(apply, [((t, k), r, c) for (t, k, r, c) in slots], target)
        if sol is None:
            return None
        for (t, k), M in sol.items():
            if M:
                (eta_blocks if t == "eta" else h_blocks)[k] = M
    eta = GradedMap(E.graded, F.graded, 0, eta_blocks, g)
    h = GradedMap(E.graded, G.graded, -1, h_blocks, g)
    return eta, h


def homotopy_inverse(phi, lift, comp, d, id_src, id_tgt):
    """Inverse up to homotopy from two lifts (generic over the ambient dg-category).

    lift(psi, f, which) returns (eta, h) with psi eta - f = d h, where `which`
    names the source object of f.
    """
    r = lift(phi, id_tgt, "tgt")
    if r is None:
        return None
    psi, h = r
    r = lift(psi, id_src, "src")
    if r is None:
        return None
    eta, h2 = r
    H = h2 + comp(comp(psi, h), eta) - comp(comp(psi, phi), h2)
    return psi, H, h


def is_homotopy_equivalence(phi, E, F):
    """A quasi-iso between cohesive modules has an exact homotopy inverse."""
    if E.quasi or F.quasi:
        raise ValueError("homotopy inverses need cohesive endpoints on both sides")
    if phi.degree != 0 or not is_closed(E, F, phi):
        raise ValueError("need a closed degree-0 map")
    if not is_quasi_iso_cohesive(phi, E, F).ok:
        return HomotopyCertificate(False, reason="not a quasi-isomorphism")
    g = max(E.g, F.g, phi.g)

    def lift(psi, f, which):
        if which == "tgt":
            return lift_p(psi, f, F, E, F)
        return lift_p(psi, f, E, F, E)

    res = homotopy_inverse(phi, lift, compose, None, identity(E.graded, g), identity(F.graded, g))
    if res is None:
        return HomotopyCertificate(False, reason="lift failed")
    psi, hE, hF = res
    cert = HomotopyCertificate(True, psi, hE, hF)
    if not check_homotopy_certificate(phi, E, F, cert):
        raise AssertionError("homotopy certificate failed to verify")
    return cert


def check_homotopy_certificate(phi, E, F, cert):
    psi, g = cert.inverse, max(E.g, F.g)
    a = compose(psi, phi) - identity(E.graded, g) - hom_differential(E, E, cert.h_src)
    b = compose(phi, psi) - identity(F.graded, g) - hom_differential(F, F, cert.h_tgt)
    return a.is_zero() and b.is_zero() and is_closed(F, E, psi)


@dataclass
class ConnectionLift:
    module: CohesiveModule
    phi: GradedMap
    steps: list = field(default_factory=list)


def lift_connection(E0, theta0, Q):
    """Extend the differential of E0 to a flat connection with a closed map into Q lifting theta0.

    Works one exterior monomial at a time; at each monomial the unknown
    components solve a linear system whose solvability follows from theta0
    being a quasi-isomorphism.
    """
    from .solver import solve_blocks
    if not is_quasi_iso(theta0.forget(), E0, Q.forget()).ok:
        raise ValueError("theta0 is not a quasi-isomorphism")
    g = Q.g
    G = E0.graded
    conn = E0.d.with_g(g)
    phi = theta0.forget().on(G, Q.graded).with_g(g)
    steps = []
    monos = sorted(range(1, 1 << g), key=lambda K: (popcount(K), K))
    for K in monos:
        for x in sorted(G.domain, key=repr):
            cx, px = conn.restrict({x}), phi.restrict({x})
            Qx = Q.restrict({x})
            Gx = G.restrict({x})
            slots = [(("E", k), r, c) for (k, r, c) in _op_slots(Gx, Gx, x, 1, g) if k[1] == K]
            slots += [(("phi", k), r, c) for (k, r, c) in _op_slots(Gx, Qx.graded, x, 0, g) if k[1] == K]

            def residual(cx, px, Qx=Qx):
                Ex = CohesiveModule(cx.src, cx, g)
                out = {}
                for k, M in compose(cx, cx).blocks.items():
                    if k[1] == K:
                        out[("flat", k)] = M
                for k, M in hom_differential(Ex, Qx, px).blocks.items():
                    if k[1] == K:
                        out[("closed", k)] = M
                return out

            base = residual(cx, px)

            def apply(X, cx=cx, px=px, Gx=Gx, Qx=Qx, base=base):
                dE = GradedMap(Gx, Gx, 1, {k[1]: M for k, M in X.items() if k[0] == "E"}, g)
                dP = GradedMap(Gx, Qx.graded, 0, {k[1]: M for k, M in X.items() if k[0] == "phi"}, g)
                new = residual(cx + dE, px + dP)
                out = dict(new)
                for k, M in base.items():
                    out[k] = out[k] - M if k in out else -M
                return out

            target = {k: -M for k, M in base.items()}
            sol = solve_blocks(apply, slots, target)
            if sol is None:
                raise AssertionError(f"connection lift obstructed at monomial {K}, point {x!r}")
            conn = conn + GradedMap(G, G, 1, {k: M for (t, k), M in sol.items() if t == "E"}, g)
            phi = phi + GradedMap(G, Q.graded, 0, {k: M for (t, k), M in sol.items() if t == "phi"}, g)
            steps.append((K, x, len(slots)))
    E = CohesiveModule(G, conn, g)
    if not validate_cohesive(E).ok or not is_closed(E, Q, phi):
        raise AssertionError("connection lift failed to verify")
    return ConnectionLift(E, phi, steps)
