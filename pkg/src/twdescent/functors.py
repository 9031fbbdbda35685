"""Twisting and sheafification between global modules and twisted complexes, and along refinements.

Sheafification is a product over multi-indices with repeats, so it is
infinite; we keep Cech levels 0..cap.  Levels above the cap form a
subcomplex, so the truncation is the quotient by it and every identity below
holds exactly on the retained levels.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product

from . import linalg as la
from .bundles import GradedBundle, GradedMap, compose as op_compose, identity, is_quasi_iso, popcount
from .cech import Cochain, compose, restrict_to_refinement
from .cohesive import CohesiveModule
from .twisted import (TwistedComplex, TwistedMorphism, identity_tw, is_quasi_iso_tw, tw_d,
                      twist_global)


# ---------------------------------------------------------------- twisting

def twist(E, site):
    """T(E): restrictions to the opens, identity transitions, nothing above level one."""
    return twist_global(site, E)


def twist_map(f, TE, TF):
    """T on a morphism of global modules: the restrictions f|U_i at level zero."""
    comps = {}
    for i, U in enumerate(TE.site.opens):
        r = f.restrict(U)
        if r:
            comps[(i,)] = r
    return TwistedMorphism(TE, TF, Cochain(f.degree, comps))


# ---------------------------------------------------------------- sheafification

class SheafLayout:
    """Where each multi-index factor sits inside the fibers of S(T).

    At a point x the factors are the multi-indices over opens containing x,
    ordered by Cech level and then lexicographically; factor I in degree n
    holds the fiber of the object on I[0] in degree n - level(I).
    """

    def __init__(self, T, cap):
        if cap < 0:
            raise ValueError("cap must be nonnegative")
        self.site = T.site
        self.cap = cap
        self.objects = [E.graded for E in T.objects]
        self.factors = {}
        self.by_first = {}
        self.offsets = {}
        ranks = {}
        for x in T.site.points:
            opens = T.site.opens_at(x)
            fs = [I for p in range(cap + 1) for I in product(opens, repeat=p + 1)]
            self.factors[x] = fs
            bf = defaultdict(list)
            for I in fs:
                bf[I[0]].append(I)
            self.by_first[x] = dict(bf)
            rx = {}
            for I in fs:
                p = len(I) - 1
                G = self.objects[I[0]]
                for m in G.degrees(x):
                    n = m + p
                    self.offsets.setdefault((x, n), {})[I] = rx.get(n, 0)
                    rx[n] = rx.get(n, 0) + G.rank(x, m)
            if rx:
                ranks[x] = rx
        self.graded = GradedBundle(T.site.points, ranks)

    def offset(self, x, n, I):
        return self.offsets.get((x, n), {}).get(I)

    def factor_rank(self, x, n, I):
        return self.objects[I[0]].rank(x, n - len(I) + 1)


@dataclass
class Sheaf:
    """S(T) truncated at a Cech cap, with its factor layout."""
    module: CohesiveModule
    layout: SheafLayout
    source: TwistedComplex

    @property
    def cap(self):
        return self.layout.cap

    def bottom(self):
        """Lowest degree of the source objects."""
        amp = self.source.amplitude()
        return amp[0] if amp else 0

    def window(self):
        """Degrees in which truncation does not change cohomology."""
        lo = self.bottom()
        return (lo - 1, lo + self.cap - 1)


def _acc(out, key, rows, cols):
    M = out.get(key)
    if M is None:
        M = out[key] = la.zeros(rows, cols)
    return M


def _sheaf_blocks(body, Ls, Lt, out):
    """Blocks of S(phi): factor J of the source goes to factor I + J[1:] via phi_I.

    The sign is (-1)^{q p} with q the operator degree of phi_I and p the level of J.
    """
    t = body.degree
    for I, M in body.comps.items():
        k = len(I) - 1
        q = t - k
        for (x, mono, m), B in M.blocks.items():
            for J in Ls.by_first.get(x, {}).get(I[-1], ()):
                p = len(J) - 1
                if k + p > Lt.cap:
                    break
                K = I + J[1:]
                n = m + p
                n2 = n + t - popcount(mono)
                c0 = Ls.offset(x, n, J)
                r0 = Lt.offset(x, n2, K)
                acc = _acc(out, (x, mono, n), Lt.graded.rank(x, n2), Ls.graded.rank(x, n))
                la.paste_add(acc, B, r0, c0, -1 if (q * p) % 2 else 1)
    return out


def _deletion_blocks(L, out):
    """Cech part of the connection: insert an open at positions 1..p+1 with sign (-1)^k."""
    for x, fs in L.factors.items():
        opens = L.site.opens_at(x)
        for J in fs:
            p = len(J) - 1
            if p >= L.cap:
                break
            G = L.objects[J[0]]
            for m in G.degrees(x):
                r = G.rank(x, m)
                n = m + p
                c0 = L.offset(x, n, J)
                acc = _acc(out, (x, 0, n), L.graded.rank(x, n + 1), L.graded.rank(x, n))
                for k in range(1, p + 2):
                    for j in opens:
                        K = J[:k] + (j,) + J[k:]
                        la.add_identity(acc, r, L.offset(x, n + 1, K), c0, -1 if k % 2 else 1)
    return out


def default_cap(T):
    amp = T.amplitude()
    return (amp[1] - amp[0] + 2) if amp else 1


def sheafify(T, cap=None):
    """S(T) with connection the Cech differential plus the twisting cochain."""
    cap = default_cap(T) if cap is None else cap
    L = SheafLayout(T, cap)
    out = {}
    _deletion_blocks(L, out)
    _sheaf_blocks(T.a, L, L, out)
    conn = GradedMap(L.graded, L.graded, 1, out, T.g)
    return Sheaf(CohesiveModule(L.graded, conn, T.g, quasi=True), L, T)


def sheafify_map(phi, Ss, St):
    """S(phi): S(src) -> S(tgt) for a twisted morphism of any degree."""
    out = _sheaf_blocks(phi.body, Ss.layout, St.layout, {})
    return GradedMap(Ss.layout.graded, St.layout.graded, phi.degree, out, max(Ss.module.g, St.module.g))


# ---------------------------------------------------------------- unit, counit, transposition

def unit(E, site, cap=None):
    """eps(E): E -> S(T(E)), the identity into every level-zero factor."""
    TE = twist(E, site)
    S = sheafify(TE, cap)
    L = S.layout
    bl = {}
    for x, d in E.graded.ranks.items():
        for n, r in d.items():
            M = la.zeros(L.graded.rank(x, n), r)
            for i in site.opens_at(x):
                la.add_identity(M, r, L.offset(x, n, (i,)), 0)
            bl[(x, 0, n)] = M
    return S, GradedMap(E.graded, L.graded, 0, bl, E.g)


def counit(T, S=None):
    """eta(T): T(S(T)) -> T, projecting onto factor I in component I, on every retained level."""
    S = S if S is not None else sheafify(T)
    L = S.layout
    TS = twist(S.module, T.site)
    comps = defaultdict(dict)
    for x, fs in L.factors.items():
        for I in fs:
            p = len(I) - 1
            G = L.objects[I[0]]
            for m in G.degrees(x):
                n = m + p
                r = G.rank(x, m)
                P = la.zeros(r, L.graded.rank(x, n))
                la.add_identity(P, r, 0, L.offset(x, n, I))
                comps[I][(x, 0, n)] = P
    body = {}
    site = T.site
    for I, bl in comps.items():
        sup = site.support(I)
        body[I] = GradedMap(L.graded.restrict(sup), T.objects[I[0]].graded.restrict(sup), -(len(I) - 1),
                            bl, T.g)
    return TwistedMorphism(TS, T, Cochain(0, body))


def is_closed_up_to(phi, cap):
    """tw_d(phi) vanishes on Cech levels 0..cap."""
    return not tw_d(phi, phi.src, phi.tgt).up_to(cap)


def transpose(phi, E, S):
    """Hom(T(E), T) -> Hom(E, S(T)): component phi_I lands in factor I."""
    L = S.layout
    t = phi.degree
    out = {}
    for I, M in phi.body.comps.items():
        p = len(I) - 1
        if p > L.cap:
            continue
        for (x, mono, m), B in M.blocks.items():
            n2 = m + t - popcount(mono)
            acc = _acc(out, (x, mono, m), L.graded.rank(x, n2), E.graded.rank(x, m))
            la.paste_add(acc, B, L.offset(x, n2, I), 0)
    return GradedMap(E.graded, L.graded, t, out, max(E.g, S.module.g))


def untranspose(f, E, S, T=None):
    """Hom(E, S(T)) -> Hom(T(E), T) as eta o T(f)."""
    T = T if T is not None else S.source
    eta = counit(T, S)
    TE = twist(E, T.site)
    Tf = twist_map(f, TE, eta.src)
    return TwistedMorphism(TE, T, compose(eta.body, Tf.body))


def transpose_via_unit(phi, E, Seps, S):
    """The transposition computed literally as S(phi) o eps."""
    SE, eps = Seps
    return op_compose(sheafify_map(phi, SE, S), eps)


@dataclass
class AdjunctionCertificate:
    """Unit and counit on probes with their residuals; every residual must be zero."""
    unit: GradedMap = None
    counit: TwistedMorphism = None
    residuals: dict = field(default_factory=dict)
    unit_quasi_iso: bool = None

    @property
    def ok(self):
        return all(not r for r in self.residuals.values()) and self.unit_quasi_iso is not False


def triangle_sheaf(T, cap=1):
    """(S eta) o (eps S) - id on S(T)."""
    S = sheafify(T, cap)
    eta = counit(T, S)
    Sn, eps = unit(S.module, T.site, cap)
    Seta = sheafify_map(eta, Sn, S)
    return op_compose(Seta, eps) - identity(S.module.graded, S.module.g)


def triangle_twist(E, site, cap=1):
    """eta o T(eps) - id on T(E), a cochain."""
    S, eps = unit(E, site, cap)
    TE = twist(E, site)
    eta = counit(TE, S)
    Teps = twist_map(eps, TE, eta.src)
    res = compose(eta.body, Teps.body) - identity_tw(TE).body
    return res.up_to(cap)


def check_adjunction(E, site, cap=None):
    """Closedness of unit and counit, both triangle identities, and the unit quasi-iso verdict."""
    S, eps = unit(E, site, cap)
    TE = S.source
    eta = counit(TE, S)
    res = {
        "unit_closed": op_compose(S.module.conn, eps) - op_compose(eps, E.conn),
        "counit_closed": tw_d(eta, eta.src, eta.tgt).up_to(S.cap),
    }
    small = min(S.cap, 1)
    res["triangle_sheaf"] = triangle_sheaf(TE, small)
    res["triangle_twist"] = triangle_twist(E, site, small)
    q = unit_quasi_iso(E, S, eps)
    return AdjunctionCertificate(eps, eta, res, q.ok)


def unit_quasi_iso(E, S, eps):
    """Cohomology comparison for eps in the degrees the truncation leaves intact."""
    return is_quasi_iso(eps.forget(), E.forget(), S.module.forget(), window=S.window())


# ---------------------------------------------------------------- refinement

def refine(T, ref):
    """T_UV: objects E_{sigma(j)} on V_j and the pulled-back twisting cochain."""
    V = ref.fine
    objs = [T.objects[ref.sigma[j]].restrict(Vj) for j, Vj in enumerate(V.opens)]
    return TwistedComplex(V, objs, restrict_to_refinement(T.a, ref), T.g)


def refine_map(phi, ref, S2=None, T2=None):
    S2 = S2 if S2 is not None else refine(phi.src, ref)
    T2 = T2 if T2 is not None else refine(phi.tgt, ref)
    return TwistedMorphism(S2, T2, restrict_to_refinement(phi.body, ref))


def refine_sheafify(F, ref, cap=None):
    """S_UV(F): on U_i, the sheafification of F over the trace of the fine cover.

    In the pointwise model the factors at a point only see the fine opens
    through that point, so this is T_XU applied to S_XV(F).
    """
    S = sheafify(F, cap)
    return twist(S.module, ref.coarse), S


def refine_sign(p, q):
    """Sign in the refinement unit for a coarse level p and a fine factor level q."""
    return -1 if (p * q + q) % 2 else 1


def refine_unit(T, ref, cap=None):
    """eps: T -> S_UV(T_UV(T)); component I sends into fine factor J the map a_{sigma(J) + I}."""
    TV = refine(T, ref)
    SUV, S = refine_sheafify(TV, ref, cap)
    L = S.layout
    U = ref.coarse
    comps = defaultdict(dict)
    for Lidx, M in T.a.comps.items():
        for s in range(1, len(Lidx)):
            head, I = Lidx[:s], Lidx[s:]
            q, p = s - 1, len(I) - 1
            if q > L.cap:
                continue
            sign = refine_sign(p, q)
            for (x, mono, m), B in M.blocks.items():
                choices = [[j for j in ref.fine.opens_at(x) if ref.sigma[j] == i] for i in head]
                for J in product(*choices):
                    n2 = m - p - popcount(mono)
                    acc = _acc(comps[I], (x, mono, m), L.graded.rank(x, n2), T.objects[I[-1]].graded.rank(x, m))
                    la.paste_add(acc, B, L.offset(x, n2, J), 0, sign)
    body = {}
    for I, bl in comps.items():
        sup = U.support(I)
        body[I] = GradedMap(T.objects[I[-1]].graded.restrict(sup), L.graded.restrict(sup), -(len(I) - 1), bl, T.g)
    return TwistedMorphism(T, SUV, Cochain(0, body)), S


def refine_counit(F, ref, S=None):
    """eta: T_UV(S_UV(F)) -> F, the X-level counit read on the fine cover."""
    S = S if S is not None else sheafify(F)
    eta = counit(F, S)
    SUV = twist(S.module, ref.coarse)
    src = refine(SUV, ref)
    return TwistedMorphism(src, F, eta.body)


def refine_unit_quasi_iso(T, ref, cap=None):
    """Per-open cohomology comparison of the refinement unit within the truncation window."""
    eps, S = refine_unit(T, ref, cap)
    out = {}
    for i in range(ref.coarse.n_opens):
        E = T.objects[i]
        f = eps.body.comps.get((i,))
        tgt = eps.tgt.objects[i]
        f = f.forget() if f is not None else GradedMap(E.graded, tgt.graded, 0, {})
        out[i] = is_quasi_iso(f, E.forget(), tgt.forget(), window=S.window())
    return eps, S, out


def refine_triangles(E, ref, cap=1):
    """Both refinement triangle identities on the probe T_XU(E), truncated at cap."""
    TU = twist(E, ref.coarse)
    TV = refine(TU, ref)
    # eta_{T_UV E} o T_UV(eps_E) = id
    eps, S = refine_unit(TU, ref, cap)
    eta = refine_counit(TV, ref, S)
    Teps = refine_map(eps, ref, TV, eta.src)
    r1 = (compose(eta.body, Teps.body) - identity_tw(TV).body).up_to(cap)
    # S_UV(eta_F) o eps_{S_UV F} = id on S_UV(F), F = T_UV(E)
    SUV, SF = refine_sheafify(TV, ref, cap)
    eps2, S2 = refine_unit(SUV, ref, cap)
    eta2 = counit(TV, SF)
    Seta = sheafify_map(eta2, S2, SF)
    comps = {}
    for I, M in eps2.body.comps.items():
        sup = ref.coarse.support(I)
        comps[I] = op_compose(Seta.restrict(sup), M)
    r2 = Cochain(0, comps) - identity_tw(SUV).body
    return r1, r2
