import random

from twdescent import linalg as la
from twdescent.bundles import GradedBundle, GradedMap, block_entry, cohomology
from twdescent.cech import Cochain, identity_cochain
from twdescent.cohesive import CohesiveModule, shift
from twdescent.twisted import (TwistedComplex, TwistedMorphism, check_lift, check_tw_homotopy, cone_tw,
                               generate_instance, homotopy_inverse_tw, identity_tw, is_quasi_iso_tw,
                               lift_through_quasi_iso, shift_morphism, shift_tw, tw_d, twist_global,
                               validate_mc)
from builders import complex_on, one_open, random_morphism, twisted_pair, xyz


def _twisted_line():
    s = one_open(("x",))
    s2 = xyz()
    C = complex_on(frozenset(s2.points), {x: {0: 1, 1: 1} for x in "xyz"},
                   {(x, 0): [[1]] for x in "xyz"})
    return s2, CohesiveModule(C.graded, C.d)


def test_twist_image_validates():
    site, E = _twisted_line()
    T = twist_global(site, E)
    assert validate_mc(T).ok


def test_level_zero_degenerates_to_square():
    site = one_open(("x",))
    G = GradedBundle({"x"}, {"x": {0: 1, 1: 1, 2: 1}})
    d = GradedMap(G, G, 1, {("x", 0, 0): la.eye(1), ("x", 0, 1): la.eye(1)})
    T = TwistedComplex(site, [CohesiveModule(G, d)], Cochain(1, {(0,): d, (0, 0): GradedMap(G, G, 0, {
        ("x", 0, n): la.eye(1) for n in range(3)})}))
    v = validate_mc(T)
    assert not v.ok and v.where[0] == 0


def test_perturbed_transition_reports_level_one():
    site, E = _twisted_line()
    T = twist_global(site, E)
    a = dict(T.a.comps)
    M = a[(0, 1)]
    bl = dict(M.blocks)
    bl[("y", 0, 0)] = bl[("y", 0, 0)] + la.eye(1)
    a[(0, 1)] = GradedMap(M.src, M.tgt, 0, bl)
    v = validate_mc(TwistedComplex(site, T.objects, Cochain(1, a)))
    assert not v.ok and v.where[0] == 1 and v.where[2] == "y"


def test_condition_one_needs_matching_connection():
    site, E = _twisted_line()
    T = twist_global(site, E)
    a = {I: M for I, M in T.a.comps.items() if len(I) != 1}
    v = validate_mc(TwistedComplex(site, T.objects, Cochain(1, a)))
    assert not v.ok and "condition 1" in v.message


def test_cones_and_shifts():
    for seed in range(6):
        inst = generate_instance(seed, g=seed % 3, higher=True)
        T = inst.complex
        assert validate_mc(shift_tw(T)).ok
        assert shift_tw(shift_tw(T)).a.comps.keys() == T.a.comps.keys()
        for I, M in shift_tw(shift_tw(T)).a.comps.items():
            assert M.blocks == {(x, m, n - 2): B for (x, m, n), B in T.a.comps[I].blocks.items()}
        C = cone_tw(identity_tw(T))
        assert validate_mc(C).ok
        assert all(cohomology(G.forget()) == {} for G in C.objects)
        Z = cone_tw(TwistedMorphism(T, T, Cochain(0)))
        assert validate_mc(Z).ok
        for I, M in Z.a.comps.items():
            sup = T.site.support(I)
            rows = [shift(T.objects[I[0]]).graded.restrict(sup), T.objects[I[0]].graded.restrict(sup)]
            cols = [shift(T.objects[I[-1]]).graded.restrict(sup), T.objects[I[-1]].graded.restrict(sup)]
            assert block_entry(M, rows, cols, 1, 0).is_zero()
            assert block_entry(M, rows, cols, 1, 1).blocks == T.a.comps[I].blocks
        C2 = cone_tw(inst.gauge)
        assert validate_mc(C2).ok


def test_hom_differential_squares_to_zero():
    for seed in range(8):
        site, S, T = twisted_pair(seed, g=seed % 3)
        rng = random.Random(seed)
        phi = random_morphism(rng, S, T, rng.randint(-1, 1))
        d1 = TwistedMorphism(S, T, tw_d(phi, S, T))
        assert not tw_d(d1, S, T)


def test_shift_morphism_is_closed():
    inst = generate_instance(4, g=1, higher=True)
    assert not tw_d(shift_morphism(inst.gauge), shift_tw(inst.gauge.src), shift_tw(inst.gauge.tgt))


def test_quasi_iso_examples():
    inst = generate_instance(1, higher=True)
    T = inst.complex
    assert is_quasi_iso_tw(identity_tw(T)).ok
    zero = TwistedMorphism(T, T, Cochain(0))
    assert not is_quasi_iso_tw(zero).ok
    assert is_quasi_iso_tw(inst.gauge).ok


def test_homotopy_inverse_examples():
    inst = generate_instance(2, higher=True)
    T = inst.complex
    h = homotopy_inverse_tw(identity_tw(T))
    assert h.ok and h.inverse.body == identity_cochain(T.objects, T.g)
    for seed in range(4):
        inst = generate_instance(seed, g=seed % 2, higher=True)
        h = homotopy_inverse_tw(inst.gauge)
        assert h.ok and check_tw_homotopy(inst.gauge, h)


def test_lift_examples():
    inst = generate_instance(3, higher=True)
    T = inst.complex
    L = lift_through_quasi_iso(identity_tw(T), identity_tw(T))
    assert L.eta.body == identity_cochain(T.objects, T.g) and not L.h
    zero = TwistedMorphism(T, T, Cochain(0))
    L = lift_through_quasi_iso(zero, identity_tw(T))
    assert not L.eta.body
    for seed in range(4):
        inst = generate_instance(seed, g=seed % 3, higher=True)
        gm = inst.gauge
        phi = identity_tw(gm.tgt)
        L = lift_through_quasi_iso(phi, gm)
        assert check_lift(phi, gm, L)


def test_generator():
    inst = generate_instance(7, gauge_on=False)
    assert inst.complex.a == twist_global(inst.complex.site, inst.base).a
    for seed in range(10):
        inst = generate_instance(seed, n_opens=3, g=seed % 3, higher=True, multiplicity=3)
        assert validate_mc(inst.complex).ok
        assert any(len(I) == 3 for I in inst.complex.a.comps)
