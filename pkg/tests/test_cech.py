import random

from twdescent import linalg as la
from twdescent.bundles import GradedBundle, GradedMap
from twdescent.cech import (Cochain, Refinement, compose, delta, identity_cochain, leibniz_check,
                            restrict_to_refinement)
from twdescent.site import Site
from twdescent.twisted import random_refinement
from builders import random_cochain, random_objects, xyz

CHAIN = Site(["x"], [{"x"}, {"x"}])
B01 = GradedBundle({"x"}, {"x": {0: 1, 1: 1}})


def scalar_map(degree, n, c):
    return GradedMap(B01, B01, degree, {("x", 0, n): la.matrix([[c]])})


def test_composition_sign():
    u = Cochain(1, {(0,): scalar_map(1, 0, 2)})
    v = Cochain(1, {(0, 1): scalar_map(0, 0, 3)})
    uv = compose(u, v)
    assert uv.comps[(0, 1)].block("x", 0, 0) == la.matrix([[-6]])


def test_identity_is_unit():
    rng = random.Random(0)
    objs = [B01, B01]
    u = random_cochain(rng, CHAIN, objs, objs, 1, max_len=3)
    one = identity_cochain(objs)
    assert compose(u, one) == u and compose(one, u) == u


def test_delta_examples():
    u = Cochain(0, {(0,): scalar_map(0, 0, 5)})
    assert not delta(u, CHAIN)
    v = Cochain(1, {(0, 1): scalar_map(0, 0, 7)})
    dv = delta(v, CHAIN)
    for j in range(2):
        assert dv.comps[(0, j, 1)].block("x", 0, 0) == la.matrix([[-7]])


def test_delta_squared_and_leibniz():
    for seed in range(15):
        rng = random.Random(seed)
        site = xyz() if seed % 2 else CHAIN
        objs = random_objects(rng, site)
        u = random_cochain(rng, site, objs, objs, rng.randint(-1, 1), g=seed % 3, max_len=3)
        v = random_cochain(rng, site, objs, objs, rng.randint(-1, 1), g=seed % 3, max_len=2)
        assert not delta(delta(u, site), site)
        assert leibniz_check(u, v, site)
    assert leibniz_check(Cochain(0), Cochain(1), CHAIN)


def test_refinement_examples():
    rng = random.Random(2)
    s = xyz()
    objs = random_objects(rng, s)
    u = random_cochain(rng, s, objs, objs, 1, max_len=3)
    ident = Refinement(s, s, (0, 1))
    assert restrict_to_refinement(u, ident) == u
    dup = Refinement(s, Site(s.points, [s.opens[0], s.opens[0], s.opens[1]]), (0, 0, 1))
    r = restrict_to_refinement(u, dup)
    for I, M in u.comps.items():
        if len(I) == 1 and I[0] == 0:
            assert r.comps[(0,)] == M and r.comps[(1,)] == M
    r1 = random_refinement(rng, s)
    r2 = random_refinement(rng, r1.fine)
    both = restrict_to_refinement(restrict_to_refinement(u, r1), r2)
    assert both == restrict_to_refinement(u, r1.then(r2))


def test_delta_linear_across_domains():
    # a summand living on a smaller domain must not shrink the sum's domain
    site = Site(["x", "y"], [{"x", "y"}, {"y"}])
    big = GradedBundle({"x", "y"}, {"x": {0: 1}, "y": {0: 1}})
    small = big.restrict({"y"})
    A = GradedMap(small, small, 0, {("y", 0, 0): la.matrix([[1]])})
    B = GradedMap(big, big, 0, {("x", 0, 0): la.matrix([[2]]), ("y", 0, 0): la.matrix([[3]])})
    S = A + B
    assert S.src.domain == {"x", "y"}
    u, v = Cochain(1, {(0, 0): A}), Cochain(1, {(0, 0): B})
    assert not (delta(u + v, site) - delta(u, site) - delta(v, site))
    d = delta(u + v, site)
    assert {k[0] for k in d.comps[(0, 1, 0)].blocks} == {"y"}
    assert {k[0] for k in d.comps[(0, 0, 0)].blocks} == {"x", "y"}
