import random

import pytest

from twdescent import linalg as la
from twdescent.bundles import Bundle, BundleMap, GradedMap, cohomology, is_quasi_iso
from twdescent.cech import Refinement
from twdescent.cohesive import CohesiveModule
from twdescent.functors import twist
from twdescent.globalize import (DescentDataModQ, GlobalizeError, descend_cohesive, glue_kernels, glue_mod_q,
                                 global_equivalence, globalize, globalize_refined, hom_comparison,
                                 random_descent_data)
from twdescent.site import Site, standard_partition
from twdescent.twisted import (TwistedMorphism, cone_tw, generate_instance, identity_tw, random_cohesive,
                               random_refinement, random_site, tw_d)
from builders import one_open, xyz


def test_glue_mod_q_honest_cocycle():
    s = xyz()
    P = [Bundle.of(U, {x: 2 for x in U}) for U in s.opens]
    Q = [Bundle.of(U, {}) for U in s.opens]
    tau = [BundleMap(Q[i], P[i], {}) for i in range(2)]
    theta = {(j, i): {x: la.eye(2) for x in s.support((j, i))} for j in range(2) for i in range(2)}
    M = glue_mod_q(DescentDataModQ(s, P, Q, tau, theta, {}))
    assert M.R.rank("y") == 4 and M.R.rank("x") == 2
    one = one_open(("x", "y"))
    P1 = [Bundle.of({"x", "y"}, {"x": 1, "y": 2})]
    Q1 = [Bundle.of({"x", "y"}, {})]
    M = glue_mod_q(DescentDataModQ(one, P1, Q1, [BundleMap(Q1[0], P1[0], {})],
                                   {(0, 0): {"x": la.eye(1), "y": la.eye(2)}}, {}))
    assert M.R.rank("y") == 2 and M.psi[(0, "y")] == la.eye(2)


def test_glue_mod_q_random():
    for seed in range(5):
        rng = random.Random(seed)
        site = random_site(rng, 3, 4, 3)
        D = random_descent_data(rng, site)
        M = glue_mod_q(D)
        for (i, x), (V, W) in M.witnesses.items():
            assert M.psi[(i, x)] * V + D.tau[i].at(x) * W == la.eye(D.P[i].rank(x))


def test_glue_mod_q_rejects_bad_cocycle():
    s = xyz()
    P = [Bundle.of(U, {x: 1 for x in U}) for U in s.opens]
    Q = [Bundle.of(U, {}) for U in s.opens]
    tau = [BundleMap(Q[i], P[i], {}) for i in range(2)]
    theta = {(j, i): {x: la.eye(1) for x in s.support((j, i))} for j in range(2) for i in range(2)}
    theta[(0, 1)]["y"] = la.eye(1) * 2
    with pytest.raises(GlobalizeError):
        glue_mod_q(DescentDataModQ(s, P, Q, tau, theta, {}))


def test_glue_kernels_top_degree():
    inst = generate_instance(2, n_opens=2, n_points=3, lo=1, hi=1, max_rank=2, higher=True)
    F = inst.complex
    rho = standard_partition(F.site)
    K = glue_kernels(F, 1, rho)
    for x in F.site.points:
        assert K.V.rank(x, 1) == sum(F.objects[j].graded.rank(x, 1) for j in F.site.opens_at(x))
        for i in F.site.opens_at(x):
            blocks = [F.a.comps[(i, j)].block(x, 0, 1) * rho(j, x) for j in F.site.opens_at(x)]
            want = la.hstack(blocks, F.objects[i].graded.rank(x, 1))
            assert K.psi.comps[(i,)].block(x, 0, 1) == want
    assert all(K.residuals.values())


def test_glue_kernels_single_open():
    s = one_open(("x",))
    E = random_cohesive(random.Random(3), frozenset({"x"}), 0, 1, 3, 0)
    F = twist(E, s)
    K = glue_kernels(F, 1)
    N = la.nullspace(E.conn.block("x", 0, 1))
    assert K.V.rank("x", 1) == N.ncols()
    if N.ncols():
        assert K.psi.comps[(0,)].block("x", 0, 1) == N


def test_glue_kernels_random_residuals():
    for seed in range(6):
        inst = generate_instance(seed, n_opens=3, n_points=4, lo=0, hi=2, max_rank=2, higher=True, multiplicity=3)
        F = inst.complex
        K = glue_kernels(F, 2)
        assert all(K.residuals.get(k, True) for k in range(4))


def _global_part(Phi, site):
    bl = {}
    for I, M in Phi.body.comps.items():
        if len(I) == 1:
            for (x, m, n), B in M.blocks.items():
                if site.first_open(x) == I[0]:
                    bl[(x, m, n)] = B
    return bl


def test_globalize_twist_image():
    for seed in range(4):
        inst = generate_instance(seed, n_opens=2 + seed % 3, n_points=4, lo=0, hi=2, max_rank=2, gauge_on=False)
        E0 = inst.base
        R = globalize(inst.complex)
        assert R.ok
        psi = GradedMap(R.complex.graded, E0.graded, 0, _global_part(R.phi, inst.complex.site))
        assert is_quasi_iso(psi, R.complex, E0.forget()).ok


def test_globalize_single_open_and_contractible():
    s = one_open(("x", "y"))
    E = random_cohesive(random.Random(8), frozenset(s.points), 0, 2, 2, 0)
    R = globalize(twist(E, s))
    assert cohomology(R.complex) == cohomology(E.forget())
    inst = generate_instance(4, higher=True, hi=2)
    C = cone_tw(identity_tw(inst.complex))
    R = globalize(C)
    assert R.ok and cohomology(R.complex) == {}


def test_globalize_rejects_exterior_input():
    inst = generate_instance(1, g=1)
    with pytest.raises(GlobalizeError):
        globalize(inst.complex)


def test_globalize_refined():
    inst = generate_instance(0, higher=True)
    T = inst.complex
    ident = Refinement(T.site, T.site, tuple(range(T.site.n_opens)))
    a, b = globalize_refined(T, ident), globalize(T)
    assert a.complex == b.complex and a.phi.body == b.phi.body
    dup = Refinement(T.site, Site(T.site.points, list(T.site.opens) + [T.site.opens[0]]),
                     tuple(range(T.site.n_opens)) + (0,))
    R = globalize_refined(T, dup)
    assert R.ok and cohomology(R.complex) == cohomology(b.complex)
    for seed in range(3):
        inst = generate_instance(seed, higher=True)
        R = globalize_refined(inst.complex, random_refinement(random.Random(seed), inst.complex.site))
        assert R.ok and R.checks["phi00_quasi_iso"]


def test_descend_examples():
    for seed in range(3):
        inst = generate_instance(seed, g=1 + seed % 2, higher=True)
        D = descend_cohesive(inst.complex)
        assert D.ok and D.checks["homotopy_equivalence"]
    inst = generate_instance(5, higher=True)
    D, R = descend_cohesive(inst.complex), globalize(inst.complex)
    assert D.module.forget() == R.complex and D.phi.body == R.phi.body


def test_descend_twist_image_gives_back_e():
    for seed in range(3):
        rng = random.Random(seed)
        site = random_site(rng, 2, 3)
        E = random_cohesive(rng, frozenset(site.points), 0, 1, 2, seed % 3)
        Q = global_equivalence(E, site)
        assert Q.ok and Q.certificate.ok
        assert Q.certificate.inverse is not None


def test_hom_comparison():
    rng = random.Random(12)
    site = random_site(rng, 2, 3)
    E = random_cohesive(rng, frozenset(site.points), 0, 1, 2, 1)
    assert cohomology(E.forget())
    H = hom_comparison(E, E, site)
    assert H.ok and H.p_ranks[0] >= 1
    for seed in range(3):
        rng = random.Random(seed)
        site = random_site(rng, 2, 3)
        E = random_cohesive(rng, frozenset(site.points), 0, 1, 2, seed % 3)
        F = random_cohesive(rng, frozenset(site.points), 0, 1, 2, seed % 3)
        assert hom_comparison(E, F, site).ok
