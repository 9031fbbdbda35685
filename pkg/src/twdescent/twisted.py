"""Twisted complexes over a finite cover: Maurer-Cartan data, morphisms, cones, lifts."""
import random
from dataclasses import dataclass, field
from itertools import product

from . import linalg as la
from .bundles import (GradedBundle, GradedMap, block_map, compose as op_compose, direct_sum, identity,
                      is_quasi_iso, popcount)
from .cech import Cochain, compose, delta, identity_cochain
from .cohesive import (CohesiveModule, Verdict, check_shapes, hom_differential, homotopy_inverse,
                       is_closed, reindex, shift)
from .solver import solve_blocks


class TwistedComplex:
    """Objects E_i on U_i and a total-degree-one cochain a."""

    __slots__ = ("site", "objects", "a", "g")

    def __init__(self, site, objects, a, g=None):
        self.site = site
        self.objects = tuple(objects)
        if len(self.objects) != site.n_opens:
            raise ValueError("one object per open is required")
        for i, E in enumerate(self.objects):
            if E.domain != site.opens[i]:
                raise ValueError(f"object {i} does not live on U_{i}")
        self.g = g if g is not None else max([E.g for E in self.objects] + [0])
        if a.degree != 1:
            raise ValueError("twisting cochain must have total degree 1")
        self.a = attach(a, self.objects, self.objects, site)

    @property
    def small(self):
        return not any(E.quasi for E in self.objects)

    def component(self, I):
        return self.a.comps.get(tuple(I))

    def forget(self):
        return TwistedComplex(self.site, [CohesiveModule(E.graded, E.conn.forget(), 0, E.quasi)
                                          for E in self.objects], self.a.forget(), 0)

    def amplitude(self):
        ds = [b for E in self.objects for b in (E.graded.bounds() or ())]
        return (min(ds), max(ds)) if ds else None

    def __repr__(self):
        return f"TwistedComplex(opens={self.site.n_opens}, g={self.g}, comps={len(self.a.comps)})"


def attach(c, src_objs, tgt_objs, site):
    """Re-anchor every component between the restricted source and target bundles."""
    out = {}
    for I, M in c.comps.items():
        sup = site.support(I)
        if not M.src.domain <= sup:
            raise ValueError(f"component {I} lives outside its intersection")
        src = src_objs[I[-1]].graded.restrict(M.src.domain)
        tgt = tgt_objs[I[0]].graded.restrict(M.src.domain)
        out[I] = M.on(src, tgt) if (M.src != src or M.tgt != tgt) else M
    return Cochain(c.degree, out)


@dataclass
class TwistedMorphism:
    src: TwistedComplex
    tgt: TwistedComplex
    body: Cochain

    def __post_init__(self):
        self.body = attach(self.body, self.src.objects, self.tgt.objects, self.src.site)

    @property
    def degree(self):
        return self.body.degree


def tw_d(phi, S, T):
    """d(phi) = delta phi + b.phi - (-1)^|phi| phi.a."""
    body = phi.body if isinstance(phi, TwistedMorphism) else phi
    out = delta(body, S.site) + compose(T.a, body)
    r = compose(body, S.a)
    return out - r if body.degree % 2 == 0 else out + r


def mc_residual(T):
    return delta(T.a, T.site) + compose(T.a, T.a)


def _first(c):
    """Deterministic first offending (k, multi-index, point) of a nonzero cochain."""
    best = None
    for I, M in c.comps.items():
        for (x, mono, n) in M.blocks:
            key = (len(I) - 1, I, repr(x), popcount(mono), n)
            if best is None or key < best[0]:
                best = (key, (len(I) - 1, I, x))
    return best[1] if best else None


def validate_mc(T):
    """Maurer-Cartan equation and both normalization conditions."""
    for I, M in sorted(T.a.comps.items()):
        bad = check_shapes(M)
        if bad:
            return Verdict(False, (len(I) - 1, I, bad[0]), "twist component has the wrong shape")
    res = mc_residual(T)
    if res:
        return Verdict(False, _first(res), "Maurer-Cartan equation fails")
    for i, E in enumerate(T.objects):
        a0 = T.a.comps.get((i,))
        conn = E.conn
        diff = (a0 - conn) if a0 is not None else -conn
        if diff:
            x = min((k[0] for k in diff.blocks), key=repr)
            return Verdict(False, (0, (i,), x), "condition 1: a^{0,1} differs from the connection of the object")
    for i, E in enumerate(T.objects):
        a1 = T.a.comps.get((i, i))
        a1 = a1 if a1 is not None else GradedMap(E.graded, E.graded, 0, {}, T.g)
        if not is_closed(E, E, a1):
            return Verdict(False, (1, (i, i), None), "condition 2: a^{1,0}_{ii} is not closed")
        cert = is_quasi_iso(a1.forget(), E.forget(), E.forget())
        if not cert.ok:
            return Verdict(False, (1, (i, i), cert.failure[0]),
                           "condition 2: a^{1,0}_{ii} is not a homotopy equivalence")
    return Verdict(True)


def identity_tw(T):
    return TwistedMorphism(T, T, identity_cochain(T.objects, T.g))


def compose_tw(f, g):
    return TwistedMorphism(g.src, f.tgt, compose(f.body, g.body))


# ---------------------------------------------------------------- shift and cone

def shift_tw(T):
    """T[1]: objects shifted, a[1]^k = (-1)^{k-1} a^k."""
    objs = [shift(E) for E in T.objects]
    comps = {}
    for I, M in T.a.comps.items():
        k = len(I) - 1
        src, tgt = objs[I[-1]].graded.restrict(M.src.domain), objs[I[0]].graded.restrict(M.src.domain)
        R = reindex(M, src, tgt, 1, 1)
        comps[I] = R if (k - 1) % 2 == 0 else -R
    return TwistedComplex(T.site, objs, Cochain(1, comps), T.g)


def shift_morphism(phi):
    """phi[1]^{p,q} = (-1)^q phi^{p,q} between the shifted complexes."""
    S, T = shift_tw(phi.src), shift_tw(phi.tgt)
    comps = {}
    for I, M in phi.body.comps.items():
        src, tgt = S.objects[I[-1]].graded.restrict(M.src.domain), T.objects[I[0]].graded.restrict(M.src.domain)
        R = reindex(M, src, tgt, 1, 1)
        comps[I] = R if M.degree % 2 == 0 else -R
    return TwistedMorphism(S, T, Cochain(phi.degree, comps))


def cone_tw(phi):
    """Cone of a closed degree-0 morphism: G_i = E_i[1] + F_i, c^k = [[(-1)^{k-1} a^k, 0], [phi^k, b^k]]."""
    S, T = phi.src, phi.tgt
    if phi.degree != 0:
        raise ValueError("cone needs a degree-0 morphism")
    if tw_d(phi, S, T):
        raise ValueError("cone needs a closed morphism")
    S1 = [shift(E) for E in S.objects]
    g = max(S.g, T.g)
    keys = set(S.a.comps) | set(T.a.comps) | set(phi.body.comps)
    comps = {}
    for I in keys:
        k = len(I) - 1
        sup = T.site.support(I)
        cols = [S1[I[-1]].graded.restrict(sup), T.objects[I[-1]].graded.restrict(sup)]
        rows = [S1[I[0]].graded.restrict(sup), T.objects[I[0]].graded.restrict(sup)]
        ent = {}
        a = S.a.comps.get(I)
        if a is not None:
            R = reindex(a, cols[0], rows[0], 1, 1)
            ent[(0, 0)] = R if (k - 1) % 2 == 0 else -R
        f = phi.body.comps.get(I)
        if f is not None:
            ent[(1, 0)] = reindex(f, cols[0], rows[1], 1, 0)
        b = T.a.comps.get(I)
        if b is not None:
            ent[(1, 1)] = b.on(cols[1], rows[1])
        M = block_map(rows, cols, ent, 1 - k, g)
        comps[I] = M
    objs = []
    for i in range(T.site.n_opens):
        G = direct_sum(S1[i].graded, T.objects[i].graded)
        c0 = comps.get((i,))
        objs.append(CohesiveModule(G, c0.on(G, G) if c0 is not None else None, g,
                                   S.objects[i].quasi or T.objects[i].quasi))
    return TwistedComplex(T.site, objs, Cochain(1, comps), g)


def cone_tw_maps(phi):
    """Canonical closed maps F -> cone(phi) -> E[1]."""
    C = cone_tw(phi)
    S, T = phi.src, phi.tgt
    S1 = shift_tw(S)
    inc, proj = {}, {}
    for i in range(T.site.n_opens):
        parts = [S1.objects[i].graded, T.objects[i].graded]
        inc[(i,)] = block_map(parts, [T.objects[i].graded], {(1, 0): identity(T.objects[i].graded, C.g)}, 0, C.g)
        proj[(i,)] = block_map([S1.objects[i].graded], parts, {(0, 0): identity(S1.objects[i].graded, C.g)}, 0, C.g)
    return C, TwistedMorphism(T, C, Cochain(0, inc)), TwistedMorphism(C, S1, Cochain(0, proj))


# ---------------------------------------------------------------- quasi-isomorphisms

@dataclass
class TwQuasiIso:
    ok: bool
    per_open: dict = field(default_factory=dict)


def is_quasi_iso_tw(phi):
    if tw_d(phi, phi.src, phi.tgt):
        raise ValueError("not a closed morphism")
    per = {}
    for i in range(phi.src.site.n_opens):
        E, F = phi.src.objects[i], phi.tgt.objects[i]
        f = phi.body.comps.get((i,))
        f = f.forget() if f is not None else GradedMap(E.graded, F.graded, 0, {})
        per[i] = is_quasi_iso(f, E.forget(), F.forget())
    return TwQuasiIso(all(c.ok for c in per.values()), per)


def level_bound(S, T, degree):
    """Largest Cech level that can carry a nonzero hom component of the given degree."""
    aS, aT = S.amplitude(), T.amplitude()
    if aS is None or aT is None:
        return -1
    return degree + aS[1] - aT[0]


def tw_slots(S, T, degree, x, p, I=None):
    """Unknown blocks of a hom cochain at point x and Cech level p (optionally one multi-index)."""
    g = max(S.g, T.g)
    out = []
    idx = [I] if I is not None else product(S.site.opens_at(x), repeat=p + 1)
    for J in idx:
        src, tgt = S.objects[J[-1]].graded, T.objects[J[0]].graded
        for mono in range(1 << g):
            for n in src.degrees(x):
                r, c = tgt.rank(x, n + degree - p - popcount(mono)), src.rank(x, n)
                if r and c:
                    out.append(((J, (x, mono, n)), r, c))
    return out


def cochain_from(X, S, T, degree, tag=None):
    """Assemble a cochain from solved blocks keyed ((J, block key)) or (tag, J, block key)."""
    g = max(S.g, T.g)
    comps = {}
    for key, M in X.items():
        if tag is not None:
            if key[0] != tag:
                continue
            key = key[1:]
        J, bk = key
        comps.setdefault(J, {})[bk] = M
    out = {}
    for J, bl in comps.items():
        dom = frozenset(k[0] for k in bl)
        out[J] = GradedMap(S.objects[J[-1]].graded.restrict(dom), T.objects[J[0]].graded.restrict(dom),
                           degree - len(J) + 1, bl, g)
    return Cochain(degree, out)


def _d0(u, S, T):
    """Level-preserving part of the hom differential on a cochain concentrated in one level."""
    out = {}
    for I, M in u.comps.items():
        p = len(I) - 1
        dom = M.src.domain
        b0 = T.a.comps.get((I[0],))
        a0 = S.a.comps.get((I[-1],))
        R = None
        if b0 is not None:
            L = op_compose(b0.restrict(dom), M)
            R = L if p % 2 == 0 else -L
        if a0 is not None:
            Rr = op_compose(M, a0.restrict(dom))
            Rr = Rr if u.degree % 2 == 0 else -Rr
            R = -Rr if R is None else R - Rr
        if R is not None:
            out[I] = R
    return Cochain(u.degree + 1, out)


@dataclass
class Lift:
    eta: TwistedMorphism
    h: Cochain
    levels: int


def lift_through_quasi_iso(phi, psi, check=True):
    """Closed eta: E -> F and h with psi.eta - phi = d(h), given psi: F -> G a quasi-iso.

    Built one Cech level at a time; at each level the corrections solve
    independent exact systems per multi-index and point.  check=False skips
    the up-front quasi-iso test (for truncated targets); obstructions still raise.
    """
    E, G = phi.src, phi.tgt
    F = psi.src
    if not E.small:
        raise ValueError("the source must be in the small flavor")
    if phi.degree != 0 or psi.degree != 0:
        raise ValueError("degree-0 morphisms expected")
    if check and not is_quasi_iso_tw(psi).ok:
        raise ValueError("psi is not a quasi-isomorphism")
    fast = max(E.g, F.g, G.g) == 0
    cones = {}
    eta = Cochain(0)
    h = Cochain(-1)
    top = max(level_bound(E, F, 0), level_bound(E, G, -1), phi.body.max_level()) + 1
    p = 0
    while True:
        r1 = tw_d(eta, E, F)
        r2 = compose(psi.body, eta) - phi.body - tw_d(h, E, G)
        if not r1 and not r2:
            break
        if p > top:
            raise AssertionError("lift did not terminate")
        lo = min(r1.levels()[:1] + r2.levels()[:1])
        if lo < p:
            raise AssertionError(f"residual below the current level {p}")
        p = lo
        upd_eta, upd_h = {}, {}
        for I in sorted(set(r1.level(p).comps) | set(r2.level(p).comps)):
            pts = set()
            for c in (r1, r2):
                if I in c.comps:
                    pts |= c.comps[I].points()
            for x in sorted(pts, key=repr):
                slots = [(("eta",) + s[0], s[1], s[2]) for s in tw_slots(E, F, 0, x, p, I)]
                slots += [(("h",) + s[0], s[1], s[2]) for s in tw_slots(E, G, -1, x, p, I)]
                target = {}
                for tag, c in (("r1", r1), ("r2", r2)):
                    M = c.comps.get(I)
                    if M is not None:
                        for k, B in M.blocks.items():
                            if k[0] == x:
                                target[(tag, I, k)] = -B

                def apply(X):
                    e = cochain_from(X, E, F, 0, "eta")
                    hh = cochain_from(X, E, G, -1, "h")
                    o = {}
                    for J, M in _d0(e, E, F).comps.items():
                        for k, B in M.blocks.items():
                            o[("r1", J, k)] = B
                    v = compose(psi.body.level(0), e) - _d0(hh, E, G)
                    for J, M in v.comps.items():
                        for k, B in M.blocks.items():
                            o[("r2", J, k)] = B
                    return o

                sol = None
                if fast:
                    sol = _contract_solve(E, F, G, psi, I, x, p, target, cones)
                    if sol is not None and not _agrees(apply(sol), target):
                        sol = None
                if sol is None:
                    sol = solve_blocks(apply, slots, target)
                if sol is None:
                    raise AssertionError(f"lift obstructed at level {p}, multi-index {I}, point {x!r}")
                for key, M in sol.items():
                    if M:
                        (upd_eta if key[0] == "eta" else upd_h)[key[1:]] = M
        eta = eta + cochain_from(upd_eta, E, F, 0)
        h = h + cochain_from(upd_h, E, G, -1)
        p += 1
    return Lift(TwistedMorphism(E, F, eta), h, p)


def _agrees(out, target):
    keys = set(out) | set(target)
    for k in keys:
        a, b = out.get(k), target.get(k)
        if a is None:
            if b:
                return False
        elif b is None:
            if a:
                return False
        elif a != b:
            return False
    return True


def _block0(c, i, x, n):
    M = c.comps.get((i,))
    return M.blocks.get((x, 0, n)) if M is not None else None


def _cone_contraction(F, G, psi, i, x, sign):
    """Contraction of the pointwise cone of psi_i: F_i[1] + G_i at x, differentials scaled by sign."""
    from .bundles import BundleComplex, contraction
    Fb, Gb = F.objects[i].graded, G.objects[i].graded
    degs = sorted({n - 1 for n in Fb.degrees(x)} | set(Gb.degrees(x)))
    ranks = {n: Fb.rank(x, n + 1) + Gb.rank(x, n) for n in degs}
    ranks = {n: r for n, r in ranks.items() if r}
    blocks = {}
    for n in ranks:
        f0, g0 = Fb.rank(x, n + 1), Gb.rank(x, n)
        f1, g1 = Fb.rank(x, n + 2), Gb.rank(x, n + 1)
        if not (f1 + g1):
            continue
        D = la.zeros(f1 + g1, f0 + g0)
        b = _block0(F.a, i, x, n + 1)
        if b is not None:
            la.paste_add(D, b, 0, 0, -sign)
        ps = _block0(psi.body, i, x, n + 1)
        if ps is not None:
            la.paste_add(D, ps, f1, 0)
        c = _block0(G.a, i, x, n)
        if c is not None:
            la.paste_add(D, c, f1, f0, sign)
        if D:
            blocks[(x, 0, n)] = D
    C = GradedBundle({x}, {x: ranks} if ranks else {})
    K = contraction(BundleComplex(C, GradedMap(C, C, 1, blocks)))
    if K.harmonic.ranks:
        return None
    return K.h


def _contract_solve(E, F, G, psi, I, x, p, target, cones):
    """Solve the level-p lifting equations at (I, x) by a contraction of the cone of psi (no exterior part)."""
    i = I[0]
    key = (i, x, p % 2)
    if key not in cones:
        cones[key] = _cone_contraction(F, G, psi, i, x, -1 if p % 2 else 1)
    h = cones[key]
    if h is None:
        return None
    Fb, Gb, Eb = F.objects[i].graded, G.objects[i].graded, E.objects[I[-1]].graded
    out = {}
    for n in Eb.degrees(x):
        e = Eb.rank(x, n)
        f1, g0 = Fb.rank(x, n - p + 1), Gb.rank(x, n - p)
        if not (f1 + g0):
            continue
        T = la.zeros(f1 + g0, e)
        R1 = target.get(("r1", I, (x, 0, n)))
        R2 = target.get(("r2", I, (x, 0, n)))
        if R1 is not None:
            la.paste_add(T, R1, 0, 0, -1)
        if R2 is not None:
            la.paste_add(T, R2, f1, 0)
        if not T:
            continue
        hb = h.blocks.get((x, 0, n - p))
        if hb is None:
            continue
        X = hb * T
        f0 = Fb.rank(x, n - p)
        eta = la.window(X, 0, f0, 0, e)
        beta = la.window(X, f0, X.nrows(), 0, e)
        if eta:
            out[("eta", I, (x, 0, n))] = eta
        if beta:
            out[("h", I, (x, 0, n))] = -beta
    return out


@dataclass
class TwHomotopyInverse:
    ok: bool
    inverse: TwistedMorphism = None
    h_src: Cochain = None
    h_tgt: Cochain = None
    reason: str = ""


def homotopy_inverse_tw(phi):
    """Inverse of a quasi-isomorphism up to exact homotopies: psi.phi - id = d h_src, phi.psi - id = d h_tgt."""
    E, F = phi.src, phi.tgt
    if not (E.small and F.small):
        raise ValueError("homotopy inverses need small-flavor endpoints")
    if not is_quasi_iso_tw(phi).ok:
        return TwHomotopyInverse(False, reason="not a quasi-isomorphism")

    def lift(psi, f, which):
        L = lift_through_quasi_iso(f, psi)
        return L.eta, L.h

    id_E, id_F = identity_tw(E), identity_tw(F)

    def comp(a, b):
        ab = a.body if isinstance(a, TwistedMorphism) else a
        bb = b.body if isinstance(b, TwistedMorphism) else b
        return compose(ab, bb)

    res = homotopy_inverse(phi, lift, comp, None, id_E, id_F)
    psi, hE, hF = res
    out = TwHomotopyInverse(True, psi, hE, hF)
    if not check_tw_homotopy(phi, out):
        raise AssertionError("homotopy certificate failed to verify")
    return out


def check_tw_homotopy(phi, cert):
    E, F = phi.src, phi.tgt
    psi = cert.inverse
    a = compose(psi.body, phi.body) - identity_cochain(E.objects, E.g) - tw_d(cert.h_src, E, E)
    b = compose(phi.body, psi.body) - identity_cochain(F.objects, F.g) - tw_d(cert.h_tgt, F, F)
    return not a and not b and not tw_d(psi, F, E)


def check_lift(phi, psi, L):
    E, F, G = phi.src, psi.src, phi.tgt
    return (not tw_d(L.eta, E, F)
            and not (compose(psi.body, L.eta.body) - phi.body - tw_d(L.h, E, G)))


# ---------------------------------------------------------------- gauge transforms

def invert_cochain(gc, objects, g=0, max_terms=64):
    """Inverse of a degree-0 cochain whose level-0, exterior-free part is invertible."""
    D, N = {}, {}
    for I, M in gc.comps.items():
        if len(I) == 1:
            D[I] = M.mono_part(0)
            rest = M - D[I]
            if rest:
                N[I] = rest
        else:
            N[I] = M
    Dinv = {}
    for I, M in D.items():
        bl = {}
        for (x, mono, n), B in M.blocks.items():
            bl[(x, mono, n)] = la.inverse(B)
        Dinv[I] = GradedMap(M.tgt, M.src, 0, bl, M.g)
    for i, E in enumerate(objects):
        if (i,) not in Dinv and not E.graded.is_zero():
            raise ValueError("level-0 part is not invertible")
    Di = Cochain(0, Dinv)
    step = -compose(Di, Cochain(0, N))
    total, term = Di, Di
    for _ in range(max_terms):
        term = compose(step, term)
        if not term:
            return total
        total = total + term
    raise ValueError("inverse series did not terminate")


def gauge(T, gc, objects_graded=None):
    """Transport T along an invertible degree-0 cochain: a' = g a g^{-1} + g delta(g^{-1})."""
    gi = invert_cochain(gc, T.objects, T.g)
    a2 = compose(compose(gc, T.a), gi) + compose(gc, delta(gi, T.site))
    objs = []
    for i, E in enumerate(T.objects):
        c0 = a2.comps.get((i,))
        objs.append(CohesiveModule(E.graded, c0.on(E.graded, E.graded) if c0 is not None else None, T.g, E.quasi))
    T2 = TwistedComplex(T.site, objs, a2, T.g)
    return T2, TwistedMorphism(T, T2, gc), TwistedMorphism(T2, T, gi)


# ---------------------------------------------------------------- random instances

def random_matrix(rng, r, c, lo=-2, hi=2):
    return la.matrix([[rng.randint(lo, hi) for _ in range(c)] for _ in range(r)], c)


def random_invertible(rng, n):
    """Unipotent-times-permutation style invertible matrix with small entries."""
    if n == 0:
        return la.zeros(0, 0)
    L = la.eye(n)
    U = la.eye(n)
    for i in range(n):
        for j in range(n):
            if i > j:
                L[i, j] = rng.randint(-1, 1)
            elif i < j:
                U[i, j] = rng.randint(-1, 1)
    for i in range(n):
        U[i, i] = rng.choice([1, -1, 2])
    perm = list(range(n))
    rng.shuffle(perm)
    P = la.sub(la.eye(n), range(n), perm)
    return P * L * U


def random_map(rng, src, tgt, degree, g=0, density=1.0, monos=None, lo=-2, hi=2):
    bl = {}
    for x in sorted(src.domain, key=repr):
        for mono in (monos if monos is not None else range(1 << g)):
            for n in src.degrees(x):
                r, c = tgt.rank(x, n + degree - popcount(mono)), src.rank(x, n)
                if r and c and rng.random() < density:
                    bl[(x, mono, n)] = random_matrix(rng, r, c, lo, hi)
    return GradedMap(src, tgt, degree, bl, g)


def random_site(rng, n_opens, n_points, multiplicity=2):
    from .site import Site
    pts = [f"p{k}" for k in range(n_points)]
    while True:
        opens = [set() for _ in range(n_opens)]
        for x in pts:
            m = rng.randint(1, min(multiplicity, n_opens))
            for i in rng.sample(range(n_opens), m):
                opens[i].add(x)
        if all(opens):
            return Site(pts, opens)


def random_refinement(rng, site, shrink=0.6):
    """Keep every open and add, with probability shrink, a proper nonempty part of it mapped back to it."""
    from .cech import Refinement
    from .site import Site
    fine, sigma = [], []
    for i, U in enumerate(site.opens):
        fine.append(U)
        sigma.append(i)
        if rng.random() < shrink:
            pts = site.order(U)
            fine.append(set(rng.sample(pts, max(1, len(pts) - 1))))
            sigma.append(i)
    return Refinement(site, Site(site.points, fine), tuple(sigma))


def random_complex(rng, domain, lo, hi, max_rank):
    """Random bounded complex: split pieces B + H + C per degree, then a random change of basis."""
    from .bundles import BundleComplex
    ranks, blocks = {}, {}
    for x in sorted(domain, key=repr):
        h = {n: rng.randint(0, max_rank) for n in range(lo, hi + 1)}
        c = {n: rng.randint(0, 1) if n < hi else 0 for n in range(lo, hi + 1)}
        dims, layout = {}, {}
        for n in range(lo, hi + 1):
            b = c.get(n - 1, 0)
            total = b + h[n] + c[n]
            while total > max_rank:
                if h[n]:
                    h[n] -= 1
                else:
                    c[n] = 0
                b = c.get(n - 1, 0)
                total = b + h[n] + c[n]
            dims[n] = total
            layout[n] = (b, h[n], c[n])
        P = {n: random_invertible(rng, dims[n]) for n in dims}
        for n in range(lo, hi):
            b0, h0, c0 = layout[n]
            b1, h1, c1 = layout[n + 1]
            if c0 and dims[n + 1]:
                D = la.zeros(dims[n + 1], dims[n])
                for k in range(c0):
                    D[k, b0 + h0 + k] = 1
                M = P[n + 1] * D * la.inverse(P[n])
                if M:
                    blocks[(x, 0, n)] = M
        ranks[x] = {n: r for n, r in dims.items() if r}
    G = GradedBundle(domain, ranks)
    return BundleComplex(G, GradedMap(G, G, 1, blocks))


def grading_sign(G, g, mono):
    """Operator (-1)^n on every degree, placed in the given exterior monomial (a degree-|mono|... map)."""
    bl = {}
    for x, d in G.ranks.items():
        for n, r in d.items():
            # degree 1 connection piece in monomial mono maps n -> n + 1 - |mono|
            if popcount(mono) == 1:
                bl[(x, mono, n)] = la.eye(r) * (1 if n % 2 == 0 else -1)
    return GradedMap(G, G, 1, bl, g)


def random_cohesive(rng, domain, lo, hi, max_rank, g):
    """Random cohesive module: a complex deformed by grading-sign terms, then gauge-conjugated."""
    C = random_complex(rng, domain, lo, hi, max_rank)
    G = C.graded
    conn = C.d.with_g(g)
    for k in range(g):
        lam = rng.randint(-2, 2)
        if lam:
            conn = conn + grading_sign(G, g, 1 << k).scale(lam)
    if g:
        gm = identity(G, g) + random_map(rng, G, G, 0, g, 0.7, [m for m in range(1, 1 << g)])
        gi = _invert_unipotent(gm, G, g)
        conn = op_compose(op_compose(gm, conn), gi)
    return CohesiveModule(G, conn, g)


def _invert_unipotent(u, G, g):
    n = u - identity(G, g)
    out, term = identity(G, g), identity(G, g)
    for _ in range(g + 2):
        term = -op_compose(n, term)
        if not term:
            break
        out = out + term
    return out


def twist_global(site, E):
    """T(E): restrictions with identity transition maps (imported lazily by functors too)."""
    objs = [E.restrict(U) for U in site.opens]
    comps = {}
    for i, U in enumerate(site.opens):
        c = E.conn.restrict(U)
        if c:
            comps[(i,)] = c
    for i, j in product(range(site.n_opens), repeat=2):
        sup = site.opens[i] & site.opens[j]
        if sup:
            Ei = E.graded.restrict(sup)
            comps[(i, j)] = identity(Ei, E.g)
    return TwistedComplex(site, objs, Cochain(1, comps), E.g)


@dataclass
class Instance:
    complex: TwistedComplex
    seed: int
    params: dict
    base: CohesiveModule = None
    gauge: TwistedMorphism = None


def random_gauge(rng, T, higher=False, exterior=True):
    """Random invertible degree-0 cochain on T's objects."""
    comps = {}
    g = T.g
    for i, E in enumerate(T.objects):
        bl = {}
        for x, d in E.graded.ranks.items():
            for n, r in d.items():
                bl[(x, 0, n)] = random_invertible(rng, r)
        M = GradedMap(E.graded, E.graded, 0, bl, g)
        if g and exterior:
            M = M + random_map(rng, E.graded, E.graded, 0, g, 0.5, list(range(1, 1 << g)), -1, 1)
        comps[(i,)] = M
    if higher:
        for i, j in product(range(T.site.n_opens), repeat=2):
            sup = T.site.opens[i] & T.site.opens[j]
            if sup:
                src = T.objects[j].graded.restrict(sup)
                tgt = T.objects[i].graded.restrict(sup)
                comps[(i, j)] = random_map(rng, src, tgt, -1, g, 0.8, [0], -1, 1)
    return Cochain(0, comps)


def generate_instance(seed, n_opens=2, n_points=3, lo=0, hi=1, max_rank=2, g=0,
                      higher=False, gauge_on=True, multiplicity=2, mode="gauge"):
    """Validated twisted complex: a gauge transform of T(E), or a cone of a generated morphism."""
    rng = random.Random(seed)
    site = random_site(rng, n_opens, n_points, multiplicity)
    E = random_cohesive(rng, frozenset(site.points), lo, hi, max_rank, g)
    T = twist_global(site, E)
    params = dict(n_opens=n_opens, n_points=n_points, lo=lo, hi=hi, max_rank=max_rank, g=g,
                  higher=higher, gauge_on=gauge_on, multiplicity=multiplicity, mode=mode)
    if not gauge_on:
        return Instance(T, seed, params, E)
    for _ in range(20):
        gc = random_gauge(rng, T, higher)
        T2, gm, _ = gauge(T, gc)
        if not higher or any(len(I) == 3 for I in T2.a.comps):
            break
    inst = Instance(T2, seed, params, E, gm)
    if mode == "cone":
        C = cone_tw(gm)
        inst = Instance(C, seed, params, E, None)
    return inst
