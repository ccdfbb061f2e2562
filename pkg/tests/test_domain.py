import itertools

import numpy as np
import pytest

from confcover.domain import ShapeSpec, build_domain, build_target, dump_domain, load_domain, margin
from confcover.errors import Disconnected, EmptyDomain, EmptyTarget, MarginViolation, ValidationError


def brute_force_ball(R, d=3):
    r = range(-R, R + 1)
    return sum(1 for p in itertools.product(r, repeat=d) if sum(c * c for c in p) < R * R)


def test_unit_ball_at_scale_one_is_origin():
    dom = build_domain(ShapeSpec.ball(3, 1.0), 1)
    assert dom.size == 1
    assert dom.sites.tolist() == [[0, 0, 0]]


def test_box_enumeration():
    dom = build_domain(ShapeSpec.box([-1] * 3, [1] * 3), 2)
    assert dom.size == 27
    assert set(map(tuple, dom.sites.tolist())) == set(itertools.product((-1, 0, 1), repeat=3))


def test_ball_count_matches_brute_force():
    assert build_domain(ShapeSpec.ball(3, 1.0), 10).size == brute_force_ball(10)


def test_sites_sorted_lexicographically():
    dom = build_domain(ShapeSpec.ball(3, 1.0), 6)
    assert [tuple(s) for s in dom.sites.tolist()] == sorted(tuple(s) for s in dom.sites.tolist())


def test_neighbor_table_symmetric():
    dom = build_domain(ShapeSpec.ball(3, 1.0), 7)
    for k in range(6):
        back = k + 1 if k % 2 == 0 else k - 1
        j = dom.neighbors[:, k]
        ok = j >= 0
        assert np.array_equal(dom.neighbors[j[ok], back], np.flatnonzero(ok))
        step = np.zeros(3, dtype=int)
        step[k // 2] = 1 if k % 2 == 0 else -1
        assert np.array_equal(dom.sites[j[ok]], dom.sites[ok] + step)


def test_boundary_definition():
    dom = build_domain(ShapeSpec.ball(3, 1.0), 5)
    assert not dom.shape.contains(dom.boundary / dom.N).any()
    inside = set(map(tuple, dom.sites.tolist()))
    bnd = set(map(tuple, dom.boundary.tolist()))
    assert not (inside & bnd)
    expected = set()
    for s in inside:
        for a in range(3):
            for e in (1, -1):
                q = list(s)
                q[a] += e
                if tuple(q) not in inside:
                    expected.add(tuple(q))
    assert bnd == expected


def test_size_monotone_in_N():
    sizes = [build_domain(ShapeSpec.ball(3, 1.0), N).size for N in range(1, 12)]
    assert all(a <= b for a, b in zip(sizes, sizes[1:]))


def test_strict_inclusion_excludes_boundary_points():
    dom = build_domain(ShapeSpec.ball(3, 1.0), 5)
    assert dom.index_of([5, 0, 0])[0] == -1
    assert dom.index_of([4, 0, 0])[0] >= 0


def test_errors():
    with pytest.raises(EmptyDomain):
        build_domain(ShapeSpec.ball(3, 0.4, [0.5, 0.5, 0.5]), 1)
    with pytest.raises(Disconnected):
        build_domain(ShapeSpec.annulus(2, 0.9, 1.0), 6)
    with pytest.raises(ValidationError):
        ShapeSpec.box([0, 0], [1, 0])
    with pytest.raises(ValidationError):
        ShapeSpec.annulus(3, 2.0, 1.0)
    with pytest.raises(ValidationError):
        ShapeSpec.parse("torus:1")


def test_target_examples():
    dom = build_domain(ShapeSpec.ball(3, 1.0), 20)
    tg = build_target(dom, ShapeSpec.ball(3, 0.5), 0.2)
    r_t = np.linalg.norm(dom.sites[tg.sites], axis=1)
    assert r_t.max() < 10
    assert tg.size == brute_force_ball(10)
    r_e = np.linalg.norm(dom.sites[tg.enlarged], axis=1)
    assert r_e.max() <= 14 + 1e-9
    assert set(tg.sites) <= set(tg.enlarged)
    with pytest.raises(MarginViolation):
        build_target(dom, ShapeSpec.ball(3, 0.9), 0.2)


def test_empty_target():
    dom = build_domain(ShapeSpec.ball(3, 1.0), 2)
    with pytest.raises(EmptyTarget):
        build_target(dom, ShapeSpec.ball(3, 0.1, [0.25, 0.25, 0.25]), 0.2)


def test_margin_ball_in_ball():
    assert margin(ShapeSpec.ball(3, 1.0), ShapeSpec.ball(3, 0.5)) == pytest.approx(0.5)


def test_parse_round_trip():
    s = ShapeSpec.parse("ball:0.5@0.1,0,0", 3)
    assert s.radius == 0.5 and s.center == (0.1, 0.0, 0.0)
    b = ShapeSpec.parse("box:-1,-1;1,1", 2)
    assert b.lo == (-1.0, -1.0) and b.d == 2


def test_dump_and_load(tmp_path):
    dom = build_domain(ShapeSpec.ball(3, 1.0), 4)
    p = tmp_path / "dom.txt"
    dump_domain(dom, p)
    assert p.read_text().splitlines()[0].startswith("3 4 ball")
    again = load_domain(p)
    assert np.array_equal(again.sites, dom.sites)
