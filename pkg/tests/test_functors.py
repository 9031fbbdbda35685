import random

from twdescent import linalg as la
from twdescent.bundles import GradedBundle, compose, hom_d
from twdescent.cech import Cochain, Refinement
from twdescent.cohesive import CohesiveModule, validate_cohesive
from twdescent.functors import (check_adjunction, counit, is_closed_up_to, refine, refine_sheafify,
                                refine_triangles, refine_unit_quasi_iso, sheafify, sheafify_map, transpose,
                                transpose_via_unit, triangle_sheaf, triangle_twist, twist, twist_map, unit,
                                unit_quasi_iso, untranspose)
from twdescent.twisted import (TwistedMorphism, generate_instance, random_cohesive, random_refinement, tw_d,
                               validate_mc)
from builders import one_open, random_morphism, xyz


def test_twist_examples():
    s = xyz()
    Z = CohesiveModule(GradedBundle(frozenset(s.points), {}))
    TZ = twist(Z, s)
    assert not TZ.a and validate_mc(TZ).ok
    for seed in range(5):
        rng = random.Random(seed)
        E = random_cohesive(rng, frozenset(s.points), 0, 1, 2, seed % 3)
        assert validate_mc(twist(E, s)).ok
    E = random_cohesive(random.Random(9), frozenset(s.points), 0, 1, 2, 1)
    from twdescent.bundles import identity
    f = identity(E.graded, 1).scale(3)
    Tf = twist_map(f, twist(E, s), twist(E, s))
    assert not tw_d(Tf, Tf.src, Tf.tgt)
    assert all(M == f.restrict(s.opens[I[0]]) for I, M in Tf.body.comps.items())


def test_single_open_sheafification_ranks():
    s = one_open(("x",))
    G = GradedBundle({"x"}, {"x": {0: 1, 1: 2}})
    E = CohesiveModule(G)
    S = sheafify(twist(E, s), cap=2)
    for n in range(0, 4):
        assert S.module.graded.rank("x", n) == sum(G.rank("x", n - p) for p in range(3))
    assert sheafify(twist(CohesiveModule(GradedBundle({"x"}, {})), s), cap=2).module.graded.ranks == {}


def test_sheaf_connection_squares_to_zero():
    for seed in range(6):
        inst = generate_instance(seed, g=seed % 3, higher=True)
        S = sheafify(inst.complex, 3)
        assert not compose(S.module.conn, S.module.conn)
        assert validate_cohesive(S.module).ok


def test_sheafify_commutes_with_d():
    for seed in range(4):
        inst = generate_instance(seed, g=seed % 3, higher=True)
        T = inst.complex
        S = sheafify(T, 2)
        rng = random.Random(seed)
        phi = random_morphism(rng, T, T, rng.randint(-1, 1))
        dphi = TwistedMorphism(T, T, tw_d(phi, T, T))
        lhs = sheafify_map(dphi, S, S)
        assert lhs == hom_d(S.module.conn, S.module.conn, sheafify_map(phi, S, S))


def test_one_open_unit_is_inclusion_and_quasi_iso():
    s = one_open(("x", "y"))
    E = random_cohesive(random.Random(1), frozenset(s.points), 0, 1, 2, 0)
    S, eps = unit(E, s, 2)
    for (x, _, n), M in eps.blocks.items():
        assert M == la.vstack([la.eye(E.graded.rank(x, n)),
                               la.zeros(S.module.graded.rank(x, n) - E.graded.rank(x, n), E.graded.rank(x, n))])
    assert unit_quasi_iso(E, S, eps).ok


def test_adjunction_battery():
    for seed in range(6):
        inst = generate_instance(seed, n_opens=2 + seed % 2, g=seed % 3, higher=True)
        cert = check_adjunction(inst.base, inst.complex.site, 2)
        assert cert.ok, {k: bool(v) for k, v in cert.residuals.items()}
        assert is_closed_up_to(counit(inst.complex, sheafify(inst.complex, 2)), 2)
        assert not triangle_sheaf(inst.complex, 1)
        assert not triangle_twist(inst.base, inst.complex.site, 2)


def test_transposition():
    for seed in range(4):
        inst = generate_instance(seed, n_opens=3, n_points=4, g=seed % 3, higher=True)
        T, E = inst.complex, inst.base
        S = sheafify(T, 2)
        rng = random.Random(seed)
        TE = twist(E, T.site)
        psi = random_morphism(rng, TE, T, rng.randint(-1, 1))
        f = transpose(psi, E, S)
        assert f == transpose_via_unit(psi, E, unit(E, T.site, 2), S)
        assert not (untranspose(f, E, S).body - psi.body).up_to(2)
        dpsi = TwistedMorphism(TE, T, tw_d(psi, TE, T))
        assert transpose(dpsi, E, S) == hom_d(S.module.conn, E.conn, f)


def test_refinement_functors():
    for seed in range(4):
        inst = generate_instance(300 + seed, g=seed % 3, higher=True)
        T = inst.complex
        ident = Refinement(T.site, T.site, tuple(range(T.site.n_opens)))
        TV = refine(T, ident)
        assert TV.a == T.a and TV.objects == T.objects
        ref = random_refinement(random.Random(seed), T.site)
        assert validate_mc(refine(T, ref)).ok
        eps, S, q = refine_unit_quasi_iso(T, ref, 2)
        assert is_closed_up_to(eps, 2) and all(c.ok for c in q.values())
        r1, r2 = refine_triangles(inst.base, ref, 1)
        assert not r1 and not r2
        SUV, _ = refine_sheafify(refine(T, ref), ref, 2)
        assert validate_mc(SUV).ok


def test_duplicate_refinement_unit():
    inst = generate_instance(11, higher=True)
    T = inst.complex
    U = T.site
    from twdescent.site import Site
    ref = Refinement(U, Site(U.points, [U.opens[0], U.opens[0], U.opens[1]]), (0, 0, 1))
    eps, S, q = refine_unit_quasi_iso(T, ref, 2)
    assert all(c.ok for c in q.values())


def test_composite_refinement():
    inst = generate_instance(5, g=1, higher=True)
    T = inst.complex
    rng = random.Random(5)
    r1 = random_refinement(rng, T.site)
    r2 = random_refinement(rng, r1.fine, 0.3)
    a = refine(refine(T, r1), r2)
    b = refine(T, r1.then(r2))
    assert a.a == b.a and a.objects == b.objects
