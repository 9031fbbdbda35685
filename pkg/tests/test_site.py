import pytest
from flint import fmpq

from twdescent.site import (RingElement, Site, SiteError, constant, extend_by_zero, intersect, restrict,
                            standard_partition)
from builders import xyz


def test_intersections():
    s = xyz()
    assert intersect(s, (0, 1)).support == {"y"} and intersect(s, (0, 1)).admissible
    assert intersect(s, (0, 0)).support == {"x", "y"}
    d = Site(["x", "z"], [{"x"}, {"z"}])
    assert not intersect(d, (0, 1)).admissible


def test_standard_partition_weights():
    s = xyz()
    rho = standard_partition(s)
    assert [rho(0, x) for x in "xyz"] == [1, fmpq(1, 2), 0]
    assert [rho(1, x) for x in "xyz"] == [0, fmpq(1, 2), 1]
    assert rho.check(s)
    assert standard_partition(Site(["x", "y"], [{"x", "y"}]))(0, "y") == 1
    three = Site(["x"], [{"x"}, {"x"}, {"x"}])
    assert all(standard_partition(three)(i, "x") == fmpq(1, 3) for i in range(3))


def test_restrict_and_extend():
    f = RingElement({"x": 1, "y": 2, "z": 3})
    assert restrict(f, {"y"}) == RingElement({"y": 2})
    assert restrict(restrict(f, {"x", "y"}), {"y"}) == restrict(f, {"y"})
    assert restrict(constant({"x", "y"}, 1), {"x"}) == constant({"x"}, 1)
    assert extend_by_zero(RingElement({"y": 5}), {"x", "y"}) == RingElement({"x": 0, "y": 5})
    assert extend_by_zero(constant({"y"}, 0), {"x", "y"}) == constant({"x", "y"}, 0)


def test_partition_support_allows_extension():
    s = xyz()
    rho = standard_partition(s)
    g = RingElement({"y": 7})
    prod = RingElement({"y": rho(1, "y")}) * g
    ext = extend_by_zero(prod, s.opens[0])
    assert ext("x") == 0 and ext("y") == fmpq(7, 2)


def test_bad_sites():
    with pytest.raises(SiteError):
        Site(["x", "y"], [{"x"}])
    with pytest.raises(SiteError):
        Site(["x"], [set()])
