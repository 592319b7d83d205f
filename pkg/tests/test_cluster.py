import numpy as np
import pytest

import rcgff.cluster as cl
import rcgff.environment as env
from rcgff.environment import DegenerateEnvironmentError


def hand_field(box, edges, boundary="free"):
    """Field with unit weight on the listed edges (site, axis), zero elsewhere."""
    d = len(box)
    w = np.zeros((d,) + tuple(box))
    for site, axis in edges:
        w[(axis,) + tuple(site)] = 1.0
    w.setflags(write=False)
    return env.ConductanceField(dim=d, box=tuple(box), weights=w,
                                law=env.bernoulli(0.5), seed=0,
                                boundary=boundary)


# a 6-vertex snake in a 3x3 box plus a separate 2-vertex edge:
# (0,0)-(0,1)-(0,2)-(1,2)-(2,2)-(2,1) and (1,0)-(2,0)
SNAKE = [((0, 0), 1), ((0, 1), 1), ((0, 2), 0), ((1, 2), 0), ((2, 1), 1)]
STRAY = [((1, 0), 0)]


def full_lattice(side, boundary="free"):
    return cl.largest_component(
        env.generate(env.bernoulli(1.0), (side, side), seed=0,
                     boundary=boundary))


def test_largest_component_picks_snake():
    cg = cl.largest_component(hand_field((3, 3), SNAKE + STRAY))
    assert len(cg) == 6
    assert cg.has_site((0, 0)) and cg.has_site((2, 1))
    assert not cg.has_site((1, 0))


def test_largest_component_tie_breaks_lexicographically():
    edges = [((0, 0), 0), ((0, 3), 0)]  # two disjoint vertical dominoes
    cg = cl.largest_component(hand_field((2, 4), edges))
    assert len(cg) == 2
    assert cg.has_site((0, 0))


def test_degenerate_environments():
    with pytest.raises(DegenerateEnvironmentError):
        cl.largest_component(env.generate(env.bernoulli(0.0), (5, 5), seed=0))


def test_mu_nu_on_snake():
    cg = cl.largest_component(hand_field((3, 3), SNAKE))
    assert cg.mu[cg.vertex_id((0, 0))] == 1.0
    assert cg.mu[cg.vertex_id((0, 1))] == 2.0
    assert np.allclose(cg.mu, cg.nu)  # unit weights


def test_vertex_lookup_errors():
    cg = cl.largest_component(hand_field((3, 3), SNAKE))
    with pytest.raises(cl.MembershipError):
        cg.vertex_id((1, 0))


def test_chemical_distance_along_snake():
    cg = cl.largest_component(hand_field((3, 3), SNAKE))
    assert cl.chemical_distance(cg, (0, 0), (2, 1)) == 5
    assert cl.chemical_distance(cg, (0, 0), (0, 0)) == 0


def test_chemical_distance_full_lattice_is_l1():
    cg = full_lattice(6)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.integers(0, 6, size=(2, 2))
        assert cl.chemical_distance(cg, x, y) == np.abs(x - y).sum()


def test_chemical_distance_detour_after_deletion():
    # full 3x3 minus the edge (1,1)-(1,2)
    edges = []
    for x1 in range(3):
        for x2 in range(3):
            if x1 < 2:
                edges.append(((x1, x2), 0))
            if x2 < 2 and not (x1 == 1 and x2 == 1):
                edges.append(((x1, x2), 1))
    cg = cl.largest_component(hand_field((3, 3), edges))
    assert len(cg) == 9
    assert cl.chemical_distance(cg, (1, 1), (1, 2)) == 3


def test_triangle_inequality_sampled():
    fld = env.generate(env.bernoulli(0.8), (8, 8), seed=3)
    cg = cl.largest_component(fld)
    rng = np.random.default_rng(1)
    ids = rng.integers(0, len(cg), size=(15, 3))
    for a, b, c in ids:
        x, y, z = cg.coords[a], cg.coords[b], cg.coords[c]
        dxy = cl.chemical_distance(cg, x, y)
        dyz = cl.chemical_distance(cg, y, z)
        dxz = cl.chemical_distance(cg, x, z)
        assert dxz <= dxy + dyz


def test_ball_sizes_and_nesting():
    cg = full_lattice(7)
    b1 = cl.ball(cg, (3, 3), 1)
    b2 = cl.ball(cg, (3, 3), 2)
    assert b1.size == 5
    assert b2.size == 13
    assert set(b1) <= set(b2)
    assert cl.ball(cg, (3, 3), 0.9).size == 1  # radius floors to 0


def test_relative_boundary():
    cg = full_lattice(5)
    A = cl.ball(cg, (2, 2), 1)
    B = cl.ball(cg, (2, 2), 2)
    edges = cl.relative_boundary(cg, A, B)
    # each of the 4 tips of the radius-1 ball has 3 outward edges,
    # the center contributes none
    assert len(edges) == 12
    with pytest.raises(cl.GeometryError):
        cl.relative_boundary(cg, B, A)


def test_regularity_check_full_lattice():
    cg = full_lattice(21)
    rep = cl.regularity_check(cg, (10, 10), 5, C_V=1.0, C_riso=1.0, C_W=2.0)
    assert rep.volume == 61  # |L1 ball of radius 5| = 2 r^2 + 2 r + 1
    assert rep.volume_ok
    assert rep.cheeger_lower_estimate <= rep.cheeger_upper_estimate
    assert rep.cheeger_lower_estimate > 0


def test_distance_comparison_full_lattice():
    cg = full_lattice(8)
    ok, worst, sampled = cl.distance_comparison_check(cg, 8, C_d=2.0,
                                                     delta=0.5)
    assert ok
    assert not sampled


def test_distance_comparison_detects_violation():
    cg = cl.largest_component(hand_field((3, 3), SNAKE))
    ok, worst, _ = cl.distance_comparison_check(cg, 3, C_d=1.0, delta=0.5)
    assert not ok
    # worst pair records the actual distance and the violated bound
    assert worst[2] > worst[3]


def test_theta_estimate_full_and_monotone():
    est, se = cl.theta_estimate(env.bernoulli(1.0), (12, 12), replicas=3)
    assert est == 1.0 and se == 0.0
    lo, lo_se = cl.theta_estimate(env.bernoulli(0.55), (24, 24), replicas=10,
                                  seed=1)
    hi, hi_se = cl.theta_estimate(env.bernoulli(0.9), (24, 24), replicas=10,
                                  seed=1)
    assert hi > lo + 3 * (lo_se + hi_se) / 2


def test_project_exact_and_tie_break():
    cg = full_lattice(5)
    assert tuple(cl.project(cg, (0.5, 0.25), 4)) == (2, 1)
    # midpoint ties resolve to the lexicographically smallest site
    assert tuple(cl.project(cg, (0.5, 0.0), 1)) == (0, 0)
    assert tuple(cl.project(cg, (0.5, 0.5), 1)) == (0, 0)


def test_project_with_origin():
    cg = full_lattice(9)
    assert tuple(cl.project(cg, (0.5, 0.5), 4, origin=(2, 2))) == (4, 4)


def test_project_lands_on_cluster():
    fld = env.generate(env.bernoulli(0.7), (12, 12), seed=5)
    cg = cl.largest_component(fld)
    site = cl.project(cg, (0.43, 0.61), 11)
    assert cg.has_site(site)


def test_laplacian_row_apply_harmonic_on_constants():
    cg = full_lattice(6)
    f = np.ones(len(cg))
    assert np.allclose(cg.laplacian_row_apply(f), 0.0)


def test_export_cluster_csv(tmp_path):
    cg = cl.largest_component(hand_field((3, 3), SNAKE))
    vp, ep = tmp_path / "v.csv", tmp_path / "e.csv"
    cl.export_cluster_csv(cg, vp, ep)
    assert len(vp.read_text().strip().split("\n")) == 1 + 6
    assert len(ep.read_text().strip().split("\n")) == 1 + 5
