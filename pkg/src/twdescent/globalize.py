"""From a twisted complex to one global object: gluing modulo auxiliary bundles,
kernel gluing, the downward induction on degrees, and the cohesive pipeline.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product

from . import linalg as la
from .bundles import (Bundle, BundleComplex, GradedBundle, GradedMap, cohomology, compose as op_compose,
                      is_quasi_iso, popcount)
from .cech import Cochain, compose
from .cohesive import CohesiveModule, is_closed, is_homotopy_equivalence, validate_cohesive
from .functors import refine, refine_sheafify, refine_unit, sheafify_map, twist, twist_map
from .site import standard_partition
from .solver import solve_blocks
from .twisted import (TwistedComplex, TwistedMorphism, cone_tw, homotopy_inverse_tw, is_quasi_iso_tw,
                      level_bound, lift_through_quasi_iso, tw_d, validate_mc)


class GlobalizeError(RuntimeError):
    """Failure with the stage where it happened."""

    def __init__(self, stage, message, where=None):
        super().__init__(f"[{stage}] {message}" + (f" at {where!r}" if where is not None else ""))
        self.stage = stage
        self.where = where


# ---------------------------------------------------------------- descent data modulo Q

@dataclass
class DescentDataModQ:
    """Bundles P_i, Q_i on the opens, tau_i: Q_i -> P_i, transitions theta and correctors vartheta.

    theta[(j, i)][x] maps P_i(x) -> P_j(x); vartheta[(k, j, i)][x] maps P_i(x) -> Q_k(x).
    """
    site: object
    P: list
    Q: list
    tau: list
    theta: dict
    vartheta: dict

    def th(self, j, i, x):
        M = self.theta.get((j, i), {}).get(x)
        return M if M is not None else la.zeros(self.P[j].rank(x), self.P[i].rank(x))

    def vt(self, k, j, i, x):
        M = self.vartheta.get((k, j, i), {}).get(x)
        return M if M is not None else la.zeros(self.Q[k].rank(x), self.P[i].rank(x))

    def validate(self):
        """First failing (condition, indices, point) or None."""
        s = self.site
        for i in range(s.n_opens):
            for x in s.order(s.opens[i]):
                if self.th(i, i, x) != la.eye(self.P[i].rank(x)):
                    return ("theta_ii", (i,), x)
        for k, j, i in product(range(s.n_opens), repeat=3):
            for x in s.order(s.support((k, j, i))):
                lhs = self.th(k, i, x) - self.th(k, j, x) * self.th(j, i, x)
                if lhs != self.tau[k].at(x) * self.vt(k, j, i, x):
                    return ("cocycle", (k, j, i), x)
        return None


@dataclass
class DescentModule:
    """Global R with psi_i: R|U_i -> P_i and correctors xi_{ji}: R -> Q_j."""
    R: Bundle
    psi: dict        # (i, x) -> matrix
    xi: dict         # (j, i, x) -> matrix
    witnesses: dict  # (i, x) -> (v, w) with psi_i v + tau_i w = id on the standard basis of P_i(x)
    layout: dict     # x -> [(i, offset, rank)]


def _layout(site, ranks_of, x):
    out, o = [], 0
    for i in site.opens_at(x):
        r = ranks_of(i)
        out.append((i, o, r))
        o += r
    return out, o


def glue_mod_q(D, rho=None):
    """R = sum of the extended P_i, psi_i = sum_j theta_ij rho_j, xi_ji = sum_k rho_k vartheta_jik."""
    bad = D.validate()
    if bad is not None:
        raise GlobalizeError("glue_mod_q", f"descent data invalid ({bad[0]})", bad[1:])
    s = D.site
    rho = rho or standard_partition(s)
    ranks, psi, xi, wit, lay = {}, {}, {}, {}, {}
    for x in s.points:
        L, tot = _layout(s, lambda i: D.P[i].rank(x), x)
        lay[x], ranks[x] = L, tot
        for i in s.opens_at(x):
            M = la.zeros(D.P[i].rank(x), tot)
            for j, o, r in L:
                if r:
                    la.paste_add(M, D.th(i, j, x) * rho(j, x), 0, o)
            psi[(i, x)] = M
        for j, i in product(s.opens_at(x), repeat=2):
            M = la.zeros(D.Q[j].rank(x), tot)
            for k, o, r in L:
                if r:
                    la.paste_add(M, D.vt(j, i, k, x) * rho(k, x), 0, o)
            xi[(j, i, x)] = M
    R = Bundle.of(s.points, ranks)
    out = DescentModule(R, psi, xi, wit, lay)
    for x in s.points:
        for j, i in product(s.opens_at(x), repeat=2):
            if psi[(j, x)] - D.th(j, i, x) * psi[(i, x)] != D.tau[j].at(x) * xi[(j, i, x)]:
                raise GlobalizeError("glue_mod_q", "compatibility fails", ((j, i), x))
        for i in s.opens_at(x):
            r = D.P[i].rank(x)
            # v = (theta_ji u)_j and w = sum_j rho_j vartheta_iji u, checked exactly
            V = la.zeros(ranks[x], r)
            for j, o, rj in lay[x]:
                if rj:
                    la.paste(V, D.th(j, i, x), o, 0)
            W = la.zeros(D.Q[i].rank(x), r)
            for j in s.opens_at(x):
                W = W + D.vt(i, j, i, x) * rho(j, x)
            if psi[(i, x)] * V + D.tau[i].at(x) * W != la.eye(r):
                raise GlobalizeError("glue_mod_q", "surjectivity witness fails", (i, x))
            A = la.hstack([psi[(i, x)], D.tau[i].at(x)], r)
            if r and la.solve(A, la.eye(r)) is None:
                raise GlobalizeError("glue_mod_q", "not surjective modulo Q", (i, x))
            wit[(i, x)] = (V, W)
    return out


def random_descent_data(rng, site, max_rank=2):
    """Valid descent data: theta_ji = g_j (1 + tau N_ji) g_i^{-1} with a shared tau per point."""
    from .twisted import random_invertible, random_matrix
    n = site.n_opens
    r = {x: rng.randint(0, max_rank) for x in site.points}
    s = {x: rng.randint(0, max_rank) for x in site.points}
    tau0 = {x: random_matrix(rng, r[x], s[x], -1, 1) for x in site.points}
    g = {(i, x): random_invertible(rng, r[x]) for i in range(n) for x in site.order(site.opens[i])}
    h = {(i, x): random_invertible(rng, s[x]) for i in range(n) for x in site.order(site.opens[i])}
    N = {}
    for j, i in product(range(n), repeat=2):
        for x in site.order(site.support((j, i))):
            N[(j, i, x)] = la.zeros(s[x], r[x]) if i == j else random_matrix(rng, s[x], r[x], -1, 1)
    P = [Bundle.of(U, {x: r[x] for x in U}) for U in site.opens]
    Qb = [Bundle.of(U, {x: s[x] for x in U}) for U in site.opens]
    from .bundles import BundleMap
    tau = [BundleMap(Qb[i], P[i], {x: g[(i, x)] * tau0[x] * la.inverse(h[(i, x)]) for x in site.opens[i]})
           for i in range(n)]
    theta, vt = defaultdict(dict), defaultdict(dict)
    for j, i in product(range(n), repeat=2):
        for x in site.support((j, i)):
            base = la.eye(r[x]) + tau0[x] * N[(j, i, x)]
            theta[(j, i)][x] = g[(j, x)] * base * la.inverse(g[(i, x)])
    for k, j, i in product(range(n), repeat=3):
        for x in site.support((k, j, i)):
            t0 = tau0[x]
            M = N[(k, i, x)] - N[(k, j, x)] - N[(j, i, x)] - N[(k, j, x)] * t0 * N[(j, i, x)]
            vt[(k, j, i)][x] = h[(k, x)] * M * la.inverse(g[(i, x)])
    return DescentDataModQ(site, P, Qb, tau, dict(theta), dict(vt))


# ---------------------------------------------------------------- kernel gluing

@dataclass
class KernelGluing:
    """V = sum over opens of ker c^0_j in degree l, with psi: T(V) -> G closed."""
    degree: int
    V: GradedBundle
    bases: dict       # (j, x) -> kernel basis columns
    layout: dict      # x -> [(j, offset, rank)]
    psi: Cochain
    residuals: dict   # Cech level -> bool (True = zero)
    surjective: bool


def _c_block(G, I, x, n):
    M = G.a.comps.get(I)
    if M is None:
        return None
    return M.blocks.get((x, 0, n))


def _kernel_basis(G, j, x, n):
    B = _c_block(G, (j,), x, n)
    r = G.objects[j].graded.rank(x, n)
    return la.nullspace(B) if B is not None else la.eye(r)


def vanishing_above(G, l):
    """First (open, degree, point) with H^n(G_i) != 0 for n > l, or None."""
    for i, E in enumerate(G.objects):
        H = cohomology(E.forget())
        for n in sorted(H):
            if n > l and any(H[n].values()):
                x = min((x for x, v in H[n].items() if v), key=repr)
                return (i, n, x)
    return None


def glue_kernels(G, l, rho=None):
    """Glue the kernels of c^0 in degree l with psi^k_I = (-1)^k sum_j rho_j c^{k+1}_{I j}."""
    site = G.site
    rho = rho or standard_partition(site)
    bad = vanishing_above(G, l)
    if bad is not None:
        raise GlobalizeError("glue_kernels", f"cohomology above degree {l} does not vanish", bad)
    bases, lay, ranks = {}, {}, {}
    for x in site.points:
        L, o = [], 0
        for j in site.opens_at(x):
            N = _kernel_basis(G, j, x, l)
            bases[(j, x)] = N
            L.append((j, o, N.ncols()))
            o += N.ncols()
        lay[x] = L
        if o:
            ranks[x] = {l: o}
    V = GradedBundle(site.points, ranks)
    top = max((len(I) for I in G.a.comps), default=1) - 1
    comps = defaultdict(dict)
    for x in site.points:
        tot = V.rank(x, l)
        if not tot:
            continue
        for k in range(top):
            for I in product(site.opens_at(x), repeat=k + 1):
                rows = G.objects[I[0]].graded.rank(x, l - k)
                if not rows:
                    continue
                M = la.zeros(rows, tot)
                for j, o, r in lay[x]:
                    c = _c_block(G, I + (j,), x, l)
                    if r and c is not None:
                        la.paste_add(M, c * bases[(j, x)] * rho(j, x), 0, o, -1 if k % 2 else 1)
                if M:
                    comps[I][(x, 0, l)] = M
    body = {}
    for I, bl in comps.items():
        sup = site.support(I)
        body[I] = GradedMap(V.restrict(sup), G.objects[I[0]].graded.restrict(sup), -(len(I) - 1), bl)
    psi = Cochain(0, body)
    TV = twist(CohesiveModule(V), site)
    res = tw_d(TwistedMorphism(TV, G, psi), TV, G)
    levels = {k: not res.level(k) for k in range(max(top, res.max_level()) + 1)}
    if res:
        raise GlobalizeError("glue_kernels", "psi is not closed", (res.levels()[0], l))
    surj = _surjective_mod_image(G, psi, bases, l)
    if surj is not None:
        raise GlobalizeError("glue_kernels", "psi^0 is not surjective modulo the image", surj)
    return KernelGluing(l, V, bases, lay, psi, levels, True)


def _surjective_mod_image(G, psi, bases, l):
    """Every kernel vector of c^0_i in degree l is psi^0_i(v) + c^0_i(w); one exact solve per basis vector."""
    site = G.site
    for i in range(site.n_opens):
        P = psi.comps.get((i,))
        for x in site.order(site.opens[i]):
            N = bases.get((i, x))
            if N is None or not N.ncols():
                continue
            r = G.objects[i].graded.rank(x, l)
            A = P.blocks.get((x, 0, l)) if P is not None else None
            cols = [A] if A is not None else []
            prev = _c_block(G, (i,), x, l - 1)
            if prev is not None:
                cols.append(prev)
            M = la.hstack(cols, r) if cols else la.zeros(r, 0)
            for c in range(N.ncols()):
                if la.solve(M, la.col(N, c)) is None:
                    return (i, x, c)
    return None


# ---------------------------------------------------------------- the downward induction

@dataclass
class GlobalizationResult:
    complex: BundleComplex
    phi: TwistedMorphism
    transcript: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    homotopy: object = None

    @property
    def module(self):
        return CohesiveModule(self.complex.graded, self.complex.d)

    @property
    def ok(self):
        return all(self.checks.values()) and all(self.residuals.values())


def _cone_pattern(G, m):
    """Per-open cohomology of the cone; zero in degrees above m is required."""
    out = {}
    ok = True
    for i, E in enumerate(G.objects):
        H = cohomology(E.forget())
        out[i] = {n: dict(sorted(v.items(), key=lambda kv: repr(kv[0]))) for n, v in sorted(H.items())}
        if any(n > m and any(v.values()) for n, v in H.items()):
            ok = False
    return ok, out


def _merge(ranks, V, m):
    out = {x: dict(d) for x, d in ranks.items()}
    for x, d in V.ranks.items():
        out.setdefault(x, {})[m] = d[m]
    return out


class _Builder:
    """The global complex and the comparison cochain as they grow downwards."""

    def __init__(self, F):
        self.F = F
        self.site = F.site
        self.ranks = {}
        self.d = {}
        self.phi = defaultdict(dict)

    @property
    def graded(self):
        return GradedBundle(self.site.points, self.ranks)

    def complex(self):
        G = self.graded
        return BundleComplex(G, GradedMap(G, G, 1, self.d))

    def morphism(self):
        G = self.graded
        TE = twist(CohesiveModule(G, GradedMap(G, G, 1, self.d)), self.site)
        body = {}
        for I, bl in self.phi.items():
            sup = self.site.support(I)
            body[I] = GradedMap(G.restrict(sup), self.F.objects[I[0]].graded.restrict(sup), -(len(I) - 1), bl)
        return TwistedMorphism(TE, self.F, Cochain(0, body))

    def add(self, V, m, psi0_at, psi):
        """New degree m: d = -p_E psi^{00}, phi^k = p_F psi^k."""
        old = self.graded
        for x in self.site.points:
            v = V.rank(x, m)
            if not v:
                continue
            eR = old.rank(x, m + 1)
            P = psi0_at(x)
            if eR:
                D = -la.window(P, 0, eR, 0, v)
                if D:
                    self.d[(x, 0, m)] = D
        for I, M in psi.comps.items():
            k = len(I) - 1
            for (x, mono, n), B in M.blocks.items():
                eR = old.rank(x, m - k + 1)
                Fp = la.window(B, eR, B.nrows(), 0, B.ncols())
                if Fp:
                    self.phi[I][(x, 0, m)] = Fp
        self.ranks = _merge(self.ranks, V, m)


def globalize(F, rho=None, homotopy=True, k_max=5):
    """Global complex E with a closed comparison T(E) -> F whose level-0 parts are quasi-isomorphisms."""
    if F.g:
        raise GlobalizeError("input", "globalize expects complexes (g = 0); forget the exterior part first")
    v = validate_mc(F)
    if not v.ok:
        raise GlobalizeError("validate", v.message, v.where)
    site = F.site
    rho = rho or standard_partition(site)
    B = _Builder(F)
    transcript = []
    amp = F.amplitude()
    if amp is not None:
        lo, hi = amp
        for m in range(hi, lo, -1):
            Phi = B.morphism()
            G = cone_tw(Phi)
            ok, pattern = _cone_pattern(G, m)
            if not ok:
                raise GlobalizeError("induction", "cone cohomology above the current degree", m)
            K = glue_kernels(G, m, rho)
            psi00 = {}
            for x in site.points:
                if K.V.rank(x, m):
                    c = [K.psi.comps[(i,)].blocks.get((x, 0, m)) if (i,) in K.psi.comps else None
                         for i in site.opens_at(x)]
                    psi00[x] = [M if M is not None else la.zeros(G.objects[i].graded.rank(x, m), K.V.rank(x, m))
                                for i, M in zip(site.opens_at(x), c)]
            eR = {x: B.graded.rank(x, m + 1) for x in site.points}
            glob = all(la.window(P, 0, eR[x], 0, P.ncols()) == la.window(ps[0], 0, eR[x], 0, P.ncols())
                       for x, ps in psi00.items() for P in ps)
            if not glob:
                raise GlobalizeError("induction", "p_E psi^{00} is not global", m)
            B.add(K.V, m, lambda x: psi00[x][0], K.psi)
            transcript.append(dict(stage="glue", degree=m, cone_ok=ok, cone_cohomology=pattern,
                                   kernel_ranks={repr(x): K.V.rank(x, m) for x in site.points},
                                   psi_levels=K.residuals, surjective=K.surjective, p_E_global=glob))
        _terminal(F, B, lo, transcript)
    E = B.complex()
    Phi = B.morphism()
    res = tw_d(Phi, Phi.src, Phi.tgt)
    residuals = {k: not res.level(k) for k in range(k_max + 1)}
    residuals["all"] = not res
    checks = {"E_complex": E.is_valid(), "closed": not res}
    qi = is_quasi_iso_tw(Phi) if not res else None
    checks["phi00_quasi_iso"] = bool(qi and qi.ok)
    if qi is not None:
        transcript.append(dict(stage="quasi_iso", per_open={i: c.ok for i, c in qi.per_open.items()}))
    out = GlobalizationResult(E, Phi, transcript, checks, residuals)
    if homotopy and checks["phi00_quasi_iso"]:
        h = homotopy_inverse_tw(Phi)
        out.homotopy = h
        checks["homotopy_equivalence"] = h.ok
    if not out.ok:
        raise GlobalizeError("certify", "certificate battery failed", {k: v for k, v in {**checks, **residuals}.items()
                                                                       if not v})
    return out


def _terminal(F, B, m0, transcript):
    """Lowest degree: kernels of c^0 glue honestly along c^1; higher psi vanish."""
    site = F.site
    Phi = B.morphism()
    G = cone_tw(Phi)
    ok, pattern = _cone_pattern(G, m0)
    if not ok:
        raise GlobalizeError("terminal", "cone cohomology above the bottom degree", m0)
    ranks, N, psi_bl = {}, {}, defaultdict(dict)
    for x in site.points:
        s = site.first_open(x)
        N[x] = _kernel_basis(G, s, x, m0)
        if N[x].ncols():
            ranks[x] = {m0: N[x].ncols()}
    V = GradedBundle(site.points, ranks)
    cocycle = True
    for x in site.points:
        if not V.rank(x, m0):
            continue
        s = site.first_open(x)
        for i in site.opens_at(x):
            c = _c_block(G, (i, s), x, m0)
            if c is None:
                c = la.zeros(G.objects[i].graded.rank(x, m0), G.objects[s].graded.rank(x, m0))
            P = c * N[x]
            if P:
                psi_bl[(i,)][(x, 0, m0)] = P
        for i, j, k in product(site.opens_at(x), repeat=3):
            Nk = _kernel_basis(G, k, x, m0)
            if not Nk.ncols():
                continue
            cik = _c_block(G, (i, k), x, m0)
            cij = _c_block(G, (i, j), x, m0)
            cjk = _c_block(G, (j, k), x, m0)
            lhs = (cik * Nk if cik is not None else None)
            rhs = (cij * cjk * Nk if cij is not None and cjk is not None else None)
            diff = (lhs if lhs is not None else la.zeros(G.objects[i].graded.rank(x, m0), Nk.ncols())) - \
                   (rhs if rhs is not None else la.zeros(G.objects[i].graded.rank(x, m0), Nk.ncols()))
            if diff:
                cocycle = False
    if not cocycle:
        raise GlobalizeError("terminal", "c^1 is not a cocycle on kernels", m0)
    body = {}
    for I, bl in psi_bl.items():
        sup = site.support(I)
        body[I] = GradedMap(V.restrict(sup), G.objects[I[0]].graded.restrict(sup), 0, bl)
    psi = Cochain(0, body)
    TV = twist(CohesiveModule(V), site)
    res = tw_d(TwistedMorphism(TV, G, psi), TV, G)
    if res:
        raise GlobalizeError("terminal", "psi is not closed", (res.levels()[0], m0))

    def first(x):
        P = psi_bl[(site.first_open(x),)].get((x, 0, m0))
        return P if P is not None else la.zeros(G.objects[site.first_open(x)].graded.rank(x, m0), V.rank(x, m0))

    B.add(V, m0, first, psi)
    transcript.append(dict(stage="terminal", degree=m0, cone_ok=ok, cone_cohomology=pattern,
                           kernel_ranks={repr(x): V.rank(x, m0) for x in site.points}, cocycle=cocycle))


# ---------------------------------------------------------------- refined covers

def globalize_refined(F, ref, rho=None, cap=None):
    """Globalize on a refinement, then bring the comparison back to the original cover by a lift."""
    if ref.fine == ref.coarse and ref.sigma == tuple(range(ref.coarse.n_opens)):
        return globalize(F, rho)
    FV = refine(F, ref)
    R = globalize(FV, rho, homotopy=False)
    E = R.complex
    EU = twist(CohesiveModule(E.graded, E.d), ref.coarse)
    cap = cap if cap is not None else _refine_cap(F, E)
    epsA, SA = refine_unit(EU, ref, cap)
    epsF, SF = refine_unit(F, ref, cap)
    phiV = TwistedMorphism(SA.source, FV, R.phi.body)
    Sphi = sheafify_map(phiV, SA, SF)
    Tphi = twist_map(Sphi, epsA.tgt, epsF.tgt)
    sharp = TwistedMorphism(EU, epsF.tgt, compose(Tphi.body, epsA.body))
    L = lift_through_quasi_iso(sharp, epsF, check=False)
    Phi = L.eta
    res = tw_d(Phi, Phi.src, Phi.tgt)
    residuals = {k: not res.level(k) for k in range(6)}
    residuals["all"] = not res
    qi = is_quasi_iso_tw(Phi)
    checks = {"E_complex": E.is_valid(), "closed": not res, "phi00_quasi_iso": qi.ok,
              "lift": not (compose(epsF.body, Phi.body) - sharp.body - tw_d(L.h, EU, epsF.tgt))}
    transcript = list(R.transcript) + [dict(stage="refined_lift", levels=L.levels, cap=cap)]
    out = GlobalizationResult(E, Phi, transcript, checks, residuals)
    if qi.ok:
        out.homotopy = homotopy_inverse_tw(Phi)
        checks["homotopy_equivalence"] = out.homotopy.ok
    if not out.ok:
        raise GlobalizeError("certify", "refined certificate battery failed",
                             {k: v for k, v in {**checks, **residuals}.items() if not v})
    return out


def _refine_cap(F, E):
    a, b = F.amplitude(), E.graded.bounds()
    if a is None or b is None:
        return 1
    return max(a[1], b[1]) - min(a[0], b[0]) + 2


# ---------------------------------------------------------------- cohesive descent

@dataclass
class Descent:
    module: CohesiveModule
    phi: TwistedMorphism
    base: GlobalizationResult
    homotopy: object = None
    steps: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.checks.values())


def _twist_a(site, conn):
    """Twisting cochain of T(E) for a connection on a global graded bundle."""
    comps = {}
    G = conn.src
    for i, U in enumerate(site.opens):
        c = conn.restrict(U)
        if c:
            comps[(i,)] = c
    for i, j in product(range(site.n_opens), repeat=2):
        sup = site.opens[i] & site.opens[j] & G.domain
        if sup:
            Gs = G.restrict(sup)
            comps[(i, j)] = GradedMap(Gs, Gs, 0, {(x, 0, n): la.eye(r) for x, d in Gs.ranks.items()
                                                   for n, r in d.items()}, conn.g)
    return Cochain(1, comps)


class _Shape:
    """Just enough of a twisted complex for tw_d: a site and a twisting cochain."""

    def __init__(self, site, a):
        self.site, self.a = site, a


def lift_connection_tw(F, E0, Phi0):
    """Extend the differential of E0 to a flat connection and Phi0 to a closed morphism T(E) -> F.

    One exterior monomial at a time and one point at a time; at each step the
    unknowns are the new connection block and the new morphism components.
    """
    site = F.site
    g = F.g
    G = E0.graded
    conn = E0.d.with_g(g)
    body = Phi0.body.map_comps(lambda I, M: M.with_g(g))
    top = max(level_bound(Phi0.src, F, 0), body.max_level()) + 1
    steps = []
    for K in sorted(range(1, 1 << g), key=lambda k: (popcount(k), k)):
        for x in site.points:
            Gx = G.restrict({x})
            opens = site.opens_at(x)

            def residual(cx, bx):
                out = {}
                for k, M in op_compose(cx, cx).blocks.items():
                    if k[1] == K:
                        out[("flat", k)] = M
                r = tw_d(bx, _Shape(site, _twist_a(site, cx)), _Shape(site, F.a.restrict({x})))
                for I, M in r.comps.items():
                    for k, B in M.blocks.items():
                        if k[1] == K:
                            out[("closed", I, k)] = B
                return out

            cx, bx = conn.restrict({x}), body.restrict({x})
            base = residual(cx, bx)
            if not base:
                continue
            slots = [(("E", (x, K, n)), Gx.rank(x, n + 1 - popcount(K)), Gx.rank(x, n)) for n in Gx.degrees(x)]
            for p in range(top + 1):
                for I in product(opens, repeat=p + 1):
                    Fo = F.objects[I[0]].graded
                    for n in Gx.degrees(x):
                        slots.append((("P", I, (x, K, n)), Fo.rank(x, n - p - popcount(K)), Gx.rank(x, n)))
            slots = [s for s in slots if s[1] and s[2]]

            def assemble(X, cx=cx, bx=bx, Gx=Gx):
                dE = GradedMap(Gx, Gx, 1, {k[1]: M for k, M in X.items() if k[0] == "E"}, g)
                comps = defaultdict(dict)
                for k, M in X.items():
                    if k[0] == "P":
                        comps[k[1]][k[2]] = M
                extra = {}
                for I, bl in comps.items():
                    extra[I] = GradedMap(Gx, F.objects[I[0]].graded.restrict({x}), -(len(I) - 1), bl, g)
                return cx + dE, bx + Cochain(0, extra)

            def apply(X, base=base):
                c2, b2 = assemble(X)
                new = residual(c2, b2)
                out = dict(new)
                for k, M in base.items():
                    out[k] = out[k] - M if k in out else -M
                return out

            sol = solve_blocks(apply, slots, {k: -M for k, M in base.items()})
            if sol is None:
                raise GlobalizeError("lift_connection", "obstructed", (K, x))
            c2, b2 = assemble(sol)
            conn = conn + GradedMap(G, G, 1, (c2 - cx).blocks, g)
            body = body + (b2 - bx)
            steps.append((K, x, len(slots)))
    E = CohesiveModule(G, conn, g)
    TE = twist(E, site)
    Phi = TwistedMorphism(TE, F, body)
    return E, Phi, steps


def descend_cohesive(F, rho=None, homotopy=True):
    """Global cohesive E and a closed quasi-isomorphism T(E) -> F with an exact homotopy inverse."""
    v = validate_mc(F)
    if not v.ok:
        raise GlobalizeError("validate", v.message, v.where)
    try:
        base = globalize(F.forget() if F.g else F, rho, homotopy=False)
    except GlobalizeError as e:
        raise GlobalizeError("globalize/" + e.stage, str(e), e.where) from e
    if F.g == 0:
        E, Phi, steps = base.module, base.phi, []
        Phi = TwistedMorphism(twist(E, F.site), F, Phi.body)
    else:
        E, Phi, steps = lift_connection_tw(F, base.complex, base.phi)
    checks = {"flat": validate_cohesive(E).ok, "closed": not tw_d(Phi, Phi.src, Phi.tgt),
              "forget_matches": E.forget() == base.complex}
    checks["quasi_iso"] = checks["closed"] and is_quasi_iso_tw(Phi).ok
    out = Descent(E, Phi, base, None, steps, checks)
    if homotopy and checks["quasi_iso"]:
        out.homotopy = homotopy_inverse_tw(Phi)
        checks["homotopy_equivalence"] = out.homotopy.ok
    if not out.ok:
        raise GlobalizeError("descend", "certificate battery failed", {k: v for k, v in checks.items() if not v})
    return out


@dataclass
class GlobalEquivalence:
    """E' from descent of T(E) and a homotopy equivalence psi: E' -> E in the global category."""
    descent: Descent
    psi: GradedMap
    H: Cochain
    certificate: object
    ok: bool


def contract_cech(Delta, site):
    """(h Delta)_I(x) = Delta_{(i*(x),) + I}(x), i* the first open through x."""
    comps = defaultdict(dict)
    meta = {}
    for K, M in Delta.comps.items():
        if len(K) < 2:
            continue
        I = K[1:]
        for (x, mono, n), B in M.blocks.items():
            if site.first_open(x) == K[0]:
                comps[I][(x, mono, n)] = B
                meta[I] = M
    out = {}
    for I, bl in comps.items():
        M = meta[I]
        sup = site.support(I)
        out[I] = GradedMap(_on(M.src, sup), _on(M.tgt, sup), M.degree + 1, bl, M.g)
    return Cochain(Delta.degree - 1, out)


def _on(G, sup):
    return GradedBundle(sup, {x: d for x, d in G.ranks.items() if x in sup})


def global_equivalence(E, site, rho=None):
    """Descend T(E) and compare the result with E by a map, an exact Cech homotopy and a global inverse."""
    TE = twist(E, site)
    D = descend_cohesive(TE, rho, homotopy=False)
    E2, Phi = D.module, D.phi
    bl = {}
    g = max(E.g, E2.g)
    for (I,), M in ((I, M) for I, M in Phi.body.comps.items() if len(I) == 1):
        for (x, mono, n), B in M.blocks.items():
            if site.first_open(x) == I:
                bl[(x, mono, n)] = B
    psi = GradedMap(E2.graded, E.graded, 0, bl, g)
    closed = is_closed(E2, E, psi)
    TE2 = Phi.src
    Tpsi = twist_map(psi, TE2, TE)
    Delta = Tpsi.body - Phi.body
    H = TwistedMorphism(TE2, TE, contract_cech(Delta, site)).body
    exact = not (Delta - tw_d(H, TE2, TE))
    cert = is_homotopy_equivalence(psi, E2, E) if closed else None
    ok = bool(closed and exact and cert is not None and cert.ok)
    return GlobalEquivalence(D, psi, H, cert, ok)


# ---------------------------------------------------------------- hom complexes under T

def _unit_blocks(slots):
    for key, r, c in slots:
        for i in range(r):
            for j in range(c):
                M = la.zeros(r, c)
                M[i, j] = 1
                yield key, i, j, M


def _p_slots(E, F, x, t, g):
    out = []
    for mono in range(1 << g):
        for n in E.graded.degrees(x):
            r, c = F.graded.rank(x, n + t - popcount(mono)), E.graded.rank(x, n)
            if r and c:
                out.append(((x, mono, n), r, c))
    return out


def _index(slots):
    idx, o = {}, 0
    for key, r, c in slots:
        idx[key] = (o, r, c)
        o += r * c
    return idx, o


def _vec(blocks, idx, n):
    v = la.zeros(n, 1)
    for key, M in blocks.items():
        if key not in idx:
            if M:
                raise AssertionError(f"block {key} outside the basis")
            continue
        o, r, c = idx[key]
        ent = M.entries()
        for k, e in enumerate(ent):
            if e:
                v[o + k, 0] = e
    return v


def _matrix(cols, n):
    M = la.zeros(n, len(cols))
    for j, v in enumerate(cols):
        for i in range(n):
            e = v[i, 0]
            if e:
                M[i, j] = e
    return M


@dataclass
class HomComparison:
    degrees: list
    p_ranks: dict     # t -> dim H^t Hom_P(E, F)
    tw_ranks: dict    # t -> dim H^t Hom_Tw(TE, TF)
    map_ranks: dict   # t -> rank of the T-induced map on H^t

    @property
    def ok(self):
        return all(self.p_ranks[t] == self.tw_ranks[t] == self.map_ranks[t] for t in self.degrees)


def hom_comparison(E, F, site, degrees=None):
    """Pointwise cohomology of Hom_P(E, F) and Hom_Tw(T E, T F) and the rank of T between them."""
    g = max(E.g, F.g)
    TE, TF = twist(E, site), twist(F, site)
    if degrees is None:
        a, b = E.graded.bounds() or (0, 0), F.graded.bounds() or (0, 0)
        degrees = list(range(b[0] - a[1] - 1, b[1] - a[0] + 2))
    pr, tr, mr = defaultdict(int), defaultdict(int), defaultdict(int)
    span = (E.graded.bounds() or (0, 0))[1] - (F.graded.bounds() or (0, 0))[0]
    for x in site.points:
        Ex, Fx = E.restrict({x}), F.restrict({x})

        def p_basis(t):
            return _index(_p_slots(Ex, Fx, x, t, g))

        def tw_basis(t):
            slots = []
            for p in range(max(t + span, -1) + 1):
                for I in product(site.opens_at(x), repeat=p + 1):
                    for key, r, c in _p_slots(Ex, Fx, x, t - p, g):
                        slots.append(((I, key), r, c))
            return _index(slots)

        def p_d(t):
            src, ns = p_basis(t)
            tgt, nt = p_basis(t + 1)
            cols = []
            for key, i, j, M in _unit_blocks([(k, r, c) for k, (o, r, c) in src.items()]):
                phi = GradedMap(Ex.graded, Fx.graded, t, {key: M}, g)
                d = op_compose(Fx.conn, phi) - (op_compose(phi, Ex.conn) if t % 2 == 0 else -op_compose(phi, Ex.conn))
                cols.append(_vec(d.blocks, tgt, nt))
            return _matrix(cols, nt), ns, nt

        def tw_d_mat(t):
            src, ns = tw_basis(t)
            tgt, nt = tw_basis(t + 1)
            cols = []
            TEx = _Shape(site, TE.a.restrict({x}))
            TFx = _Shape(site, TF.a.restrict({x}))
            for (I, key), i, j, M in _unit_blocks([(k, r, c) for k, (o, r, c) in src.items()]):
                comp = GradedMap(Ex.graded, Fx.graded, t - len(I) + 1, {key: M}, g)
                r = tw_d(Cochain(t, {I: comp}), TEx, TFx)
                bl = {}
                for J, N in r.comps.items():
                    for k, B in N.blocks.items():
                        bl[(J, k)] = B
                cols.append(_vec(bl, tgt, nt))
            return _matrix(cols, nt), ns, nt

        pd = {t: p_d(t) for t in range(degrees[0] - 1, degrees[-1] + 1)}
        td = {t: tw_d_mat(t) for t in range(degrees[0] - 1, degrees[-1] + 1)}
        for t in degrees:
            D1, n1, _ = pd[t]
            D0 = pd[t - 1][0]
            Z = la.nullspace(D1) if n1 else la.zeros(0, 0)
            bp = la.rank(D0)
            pr[t] += Z.ncols() - bp
            T1, m1, _ = td[t]
            T0 = td[t - 1][0]
            bt = la.rank(T0)
            tr[t] += (m1 - la.rank(T1)) - bt
            # T-induced map: phi -> level-0 components phi|U_i
            src, _ = p_basis(t)
            tgt, _ = tw_basis(t)
            cols = []
            for c in range(Z.ncols()):
                bl = {}
                for key, (o, r, cc) in src.items():
                    vals = [Z[o + k, c] for k in range(r * cc)]
                    if any(vals):
                        M = la.from_flat(r, cc, vals)
                        for i in site.opens_at(x):
                            bl[((i,), key)] = M
                cols.append(_vec(bl, tgt, m1))
            TZ = _matrix(cols, m1)
            mr[t] += la.rank(la.hstack([TZ, T0], m1)) - bt if m1 else 0
    return HomComparison(list(degrees), dict(pr), dict(tr), dict(mr))
