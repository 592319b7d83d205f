import math

import numpy as np
import pytest
from scipy import stats

import rcgff.cluster as cl
import rcgff.dirichlet as dr
import rcgff.environment as env
import rcgff.walk as walk


def full_lattice(side, law=None, seed=0, boundary="free"):
    law = law or env.bernoulli(1.0)
    return cl.largest_component(
        env.generate(law, (side, side), seed=seed, boundary=boundary))


def inner_mask(cg, side):
    return np.logical_and((cg.coords >= 1).all(axis=1),
                          (cg.coords <= side - 2).all(axis=1))


def test_zero_horizon_trajectory():
    cg = full_lattice(5)
    traj = walk.simulate(cg, (2, 2), horizon=0.0, seed=0)
    assert traj.total_time == 0.0
    assert len(traj.times) == 1
    assert tuple(traj.sites[0]) == (2, 2)


def test_trajectory_times_increasing():
    cg = full_lattice(8, law=env.exponential(1.0), seed=1)
    traj = walk.simulate(cg, tuple(cg.coords[0]), horizon=5.0, seed=2)
    assert (np.diff(traj.times) > 0).all()
    # consecutive sites are lattice neighbors
    steps = np.abs(np.diff(traj.sites, axis=0)).sum(axis=1)
    assert (steps == 1).all()


def test_simulate_deterministic():
    cg = full_lattice(8)
    a = walk.simulate(cg, (4, 4), horizon=10.0, seed=3)
    b = walk.simulate(cg, (4, 4), horizon=10.0, seed=3)
    assert (a.times == b.times).all()
    assert (a.sites == b.sites).all()


def test_single_node_exit_time_exponential():
    # with one interior site the exit time is Exp(mu) exactly
    cg = full_lattice(3, law=env.exponential(1.0), seed=4)
    vid = cg.vertex_id((1, 1))
    interior = np.zeros(len(cg), dtype=bool)
    interior[vid] = True
    mu = cg.mu[vid]
    mean, se = walk.exit_time_mc(cg, interior, (1, 1), replicas=40_000, seed=5)
    assert abs(mean - 1.0 / mu) <= 3 * se


def test_jump_direction_uniformity():
    cg = full_lattice(16, boundary="torus")
    traj = walk.simulate(cg, (8, 8), horizon=2000.0, seed=6)
    steps = np.diff(traj.sites, axis=0)
    # wrap torus steps back to +-1
    steps = (steps + 8) % 16 - 8
    labels = steps[:, 0] * 2 + steps[:, 1]  # four distinct values
    _, counts = np.unique(labels, return_counts=True)
    assert counts.size == 4
    _, p = stats.chisquare(counts)
    assert p > 0.01


def test_exit_time_matches_solver():
    cg = full_lattice(9, law=env.exponential(1.0), seed=7)
    mask = inner_mask(cg, 9)
    sysd = dr.assemble(cg, interior_sites=mask)
    u = dr.mean_exit_time(sysd)
    k = sysd.interior_index(cg.vertex_id((4, 4)))
    mean, se = walk.exit_time_mc(cg, mask, (4, 4), replicas=40_000, seed=8)
    assert abs(mean - u[k]) <= 3 * se


def test_occupation_matches_green_column():
    cg = full_lattice(9)
    mask = inner_mask(cg, 9)
    sysd = dr.assemble(cg, interior_sites=mask)
    col = dr.green_column(sysd, (4, 4))
    for y in [(4, 4), (5, 5), (2, 6)]:
        g = col.values[sysd.interior_index(cg.vertex_id(y))]
        est, se = walk.occupation_green_mc(cg, mask, (4, 4), y,
                                           replicas=60_000, seed=9)
        assert abs(est - g) <= 3 * se


def test_occupation_identity_total_time():
    # summing g(x, y) over interior y gives the mean exit time
    cg = full_lattice(7, law=env.exponential(1.0), seed=10)
    mask = inner_mask(cg, 7)
    sysd = dr.assemble(cg, interior_sites=mask)
    col = dr.green_column(sysd, (3, 3))
    mean, se = walk.exit_time_mc(cg, mask, (3, 3), replicas=40_000, seed=11)
    assert abs(col.values.sum() - mean) <= 3 * se


def test_heat_kernel_time_zero_exact():
    cg = full_lattice(5)
    assert walk.heat_kernel_mc(cg, 0.0, (2, 2), (2, 2), 10) == (1.0, 0.0)
    assert walk.heat_kernel_mc(cg, 0.0, (2, 2), (2, 3), 10) == (0.0, 0.0)


def test_heat_kernel_symmetry_uniform():
    # mu is constant on the torus, so p_t(x, y) = p_t(y, x)
    cg = full_lattice(10, boundary="torus")
    a, sa = walk.heat_kernel_mc(cg, 3.0, (2, 2), (4, 5), replicas=60_000,
                                seed=12)
    b, sb = walk.heat_kernel_mc(cg, 3.0, (4, 5), (2, 2), replicas=60_000,
                                seed=13)
    assert abs(a - b) <= 3 * math.hypot(sa, sb)


def test_heat_kernel_shift_invariance_on_torus():
    cg = full_lattice(10, boundary="torus")
    a, sa = walk.heat_kernel_mc(cg, 2.0, (1, 1), (3, 2), replicas=60_000,
                                seed=14)
    b, sb = walk.heat_kernel_mc(cg, 2.0, (5, 6), (7, 7), replicas=60_000,
                                seed=15)
    assert abs(a - b) <= 3 * math.hypot(sa, sb)


def test_estimate_sigma_moments():
    cg = full_lattice(32, boundary="torus")
    est = walk.estimate_sigma(cg, n=10, t=1.0, replicas=20_000, seed=16)
    assert est.sigma2.shape == (2, 2)
    assert abs(est.sigma2[0, 0] - 2.0) <= max(4 * est.se[0, 0], 0.08)
    assert abs(est.sigma2[1, 1] - 2.0) <= max(4 * est.se[1, 1], 0.08)
    assert abs(est.sigma2[0, 1]) <= 4 * est.se[0, 1]


def test_estimate_sigma_deterministic():
    cg = full_lattice(16, boundary="torus")
    a = walk.estimate_sigma(cg, n=5, t=1.0, replicas=5_000, seed=17)
    b = walk.estimate_sigma(cg, n=5, t=1.0, replicas=5_000, seed=17)
    assert (a.sigma2 == b.sigma2).all()


def test_endpoint_moments_gaussian():
    cg = full_lattice(48, boundary="torus")
    pts = walk.endpoint_sample(cg, n=16, t=1.0, replicas=20_000, seed=18)
    for i in range(2):
        x = pts[:, i]
        se_mean = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean()) <= 4 * se_mean
        assert abs(x.var(ddof=1) - 2.0) <= 0.1
        # excess kurtosis of a Gaussian is 0
        assert abs(stats.kurtosis(x)) < 0.1


def test_diffusivity_export(tmp_path):
    cg = full_lattice(16, boundary="torus")
    est = walk.estimate_sigma(cg, n=5, t=1.0, replicas=2_000, seed=19)
    path = tmp_path / "sigma.csv"
    est.export_csv(path)
    assert len(path.read_text().strip().split("\n")) == 1 + 4


def test_bad_arguments():
    cg = full_lattice(5)
    with pytest.raises(ValueError):
        walk.simulate(cg, (2, 2), seed=0)  # neither horizon nor stop set
    with pytest.raises(ValueError):
        walk.estimate_sigma(cg, n=0, t=1.0, replicas=10)
    with pytest.raises(ValueError):
        walk.heat_kernel_mc(cg, -1.0, (2, 2), (2, 2), 10)
