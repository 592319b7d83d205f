import math

import numpy as np
import pytest

import rcgff.continuum as co
from rcgff.domains import Ball, Rectangle, unit_square

SQ2 = co.spec_for(unit_square(2), 2.0)

# frozen references for the standard configuration (unit square, sigma^2 = 2I)
G_REF_PAIR = 0.04255803152331609          # g((1/4,1/2), (3/4,1/2))
SIGMA_SQ_BUMP = 0.006682122726745583      # product bump sin^2 * sin^2


def bump(p):
    p = np.atleast_2d(p)
    return np.prod(np.sin(math.pi * p) ** 2, axis=1)


def test_heat_kernel_on_diagonal_value():
    val = co.heat_kernel(2.0 * np.eye(2), 0.5, (0.3, 0.3), (0.3, 0.3))
    assert abs(val - 1.0 / (2.0 * math.pi * 0.5 * 2.0)) < 1e-14


def test_heat_kernel_symmetry_and_normalization():
    s2 = np.diag([2.0, 3.0])
    a = co.heat_kernel(s2, 0.7, (0.1, 0.2), (0.5, -0.3))
    b = co.heat_kernel(s2, 0.7, (0.5, -0.3), (0.1, 0.2))
    assert a == b
    # quadrature normalization over a wide box
    xs = np.linspace(-8, 8, 401)
    w = xs[1] - xs[0]
    grid = np.array([[co.heat_kernel(s2, 0.7, (x, y), (0.0, 0.0))
                      for y in xs] for x in xs])
    assert abs(grid.sum() * w * w - 1.0) < 1e-6


def test_green_rectangle_reference_value():
    val = co.green_rectangle(SQ2, (0.25, 0.5), (0.75, 0.5))
    assert abs(val - G_REF_PAIR) < 1e-10


def test_green_rectangle_symmetry():
    a = co.green_rectangle(SQ2, (0.2, 0.3), (0.6, 0.7))
    b = co.green_rectangle(SQ2, (0.6, 0.7), (0.2, 0.3))
    assert abs(a - b) < 1e-12


def test_green_rectangle_boundary_decay():
    mid = co.green_rectangle(SQ2, (0.4, 0.5), (0.6, 0.5))
    near = co.green_rectangle(SQ2, (0.4, 0.02), (0.6, 0.02))
    assert near < mid / 5


def test_green_rectangle_tolerance_consistency():
    rng = np.random.default_rng(0)
    x = 0.1 + 0.8 * rng.random((10, 2))
    y = 0.1 + 0.8 * rng.random((10, 2))
    keep = np.linalg.norm(x - y, axis=1) > 0.05
    a = co.green_rectangle_many(SQ2, x[keep], y[keep], tol=1e-8)
    b = co.green_rectangle_many(SQ2, x[keep], y[keep], tol=1e-10)
    assert np.abs(a - b).max() < 1e-7


def test_green_rectangle_scale_invariance_2d():
    # d = 2: g_{cD}(cx, cy) = g_D(x, y) exactly
    c = 3.0
    big = co.spec_for(Rectangle(lo=(0, 0), hi=(c, c)), 2.0)
    a = co.green_rectangle(SQ2, (0.25, 0.5), (0.75, 0.5))
    b = co.green_rectangle(big, (0.25 * c, 0.5 * c), (0.75 * c, 0.5 * c))
    assert abs(a - b) < 1e-8


def test_green_rectangle_diffusivity_scaling():
    # doubling sigma^2 halves the Green kernel
    four = co.spec_for(unit_square(2), 4.0)
    a = co.green_rectangle(SQ2, (0.25, 0.5), (0.75, 0.5))
    b = co.green_rectangle(four, (0.25, 0.5), (0.75, 0.5))
    assert abs(a - 2.0 * b) < 1e-9


def test_green_rectangle_errors():
    with pytest.raises(co.SingularityError):
        co.green_rectangle(SQ2, (0.5, 0.5), (0.5, 0.5))
    with pytest.raises(co.ParameterError):
        co.green_rectangle(SQ2, (1.5, 0.5), (0.5, 0.5))
    with pytest.raises(co.UnsupportedError):
        co.ContinuumGreenSpec(unit_square(2),
                              np.array([[2.0, 0.5], [0.5, 2.0]]))


def test_green_ball_rotation_invariance():
    spec = co.spec_for(Ball(center=(0.0, 0.0), radius=1.0), 2.0)
    a = co.green_ball(spec, (0.3, 0.0), (0.6, 0.0))
    th = 1.1
    R = np.array([[math.cos(th), -math.sin(th)],
                  [math.sin(th), math.cos(th)]])
    b = co.green_ball(spec, R @ (0.3, 0.0), R @ (0.6, 0.0))
    assert abs(a - b) < 1e-12


def test_green_ball_center_formula():
    # from the center: g = (2 / sigma^2) (1 / 2 pi) log(R / r) in d = 2
    spec = co.spec_for(Ball(center=(0.0, 0.0), radius=1.0), 2.0)
    val = co.green_ball(spec, (0.0, 0.0), (0.4, 0.0))
    assert abs(val - (1.0 / (2.0 * math.pi)) * math.log(1.0 / 0.4)) < 1e-12


def test_green_ball_scaling_3d():
    # d = 3: g_{cD}(cx, cy) = c^{-1} g_D(x, y)
    c = 2.0
    s1 = co.spec_for(Ball(center=(0, 0, 0), radius=1.0), 2.0)
    s2 = co.spec_for(Ball(center=(0, 0, 0), radius=c), 2.0)
    a = co.green_ball(s1, (0.2, 0.1, 0.0), (0.5, -0.2, 0.1))
    b = co.green_ball(s2, (0.4, 0.2, 0.0), (1.0, -0.4, 0.2))
    assert abs(b - a / c) < 1e-8


def test_mc_green_matches_series():
    x = (0.3, 0.5)
    y = (0.6, 0.5)
    cell = Rectangle(lo=(y[0] - 0.05, y[1] - 0.05),
                     hi=(y[0] + 0.05, y[1] + 0.05))
    est, se = co.mc_green(SQ2, x, cell, replicas=8_000, step=5e-4, seed=1)
    # compare against the cell average of the series kernel
    xs = np.linspace(y[0] - 0.045, y[0] + 0.045, 10)
    ys = np.linspace(y[1] - 0.045, y[1] + 0.045, 10)
    pts = np.array([[a, b] for a in xs for b in ys])
    ref = co.green_rectangle_many(SQ2, np.tile(x, (100, 1)), pts).mean()
    assert abs(est - ref) <= 3 * se


def test_mc_green_outside_cell_is_zero():
    cell = Rectangle(lo=(2.0, 2.0), hi=(2.1, 2.1))  # disjoint from domain
    est, se = co.mc_green(SQ2, (0.5, 0.5), cell, replicas=500, seed=2)
    assert est == 0.0


def test_sigma_sq_f_reference_value():
    val = co.sigma_sq_f(SQ2, bump, theta=1.0)
    assert abs(val - SIGMA_SQ_BUMP) < 1e-4 * SIGMA_SQ_BUMP


def test_sigma_sq_f_zero_function():
    assert co.sigma_sq_f(SQ2, lambda p: np.zeros(len(np.atleast_2d(p)))) == 0.0


def test_sigma_sq_f_theta_linearity():
    full = co.sigma_sq_f(SQ2, bump, theta=1.0)
    half = co.sigma_sq_f(SQ2, bump, theta=0.5)
    assert abs(half - 0.5 * full) < 1e-12


def test_sigma_sq_f_positive_quadratic():
    # doubling f quadruples the variance
    one = co.sigma_sq_f(SQ2, bump)
    two = co.sigma_sq_f(SQ2, lambda p: 2.0 * bump(p))
    assert abs(two - 4.0 * one) < 1e-10


def test_exit_time_moment():
    spec = co.spec_for(Ball(center=(0.0, 0.0), radius=1.0), 2.0)
    assert abs(co.exit_time_moment(spec, (0.0, 0.0)) - 0.25) < 1e-14
    assert co.exit_time_moment(spec, (0.6, 0.0)) == pytest.approx(
        (1.0 - 0.36) / 4.0)
    with pytest.raises(co.UnsupportedError):
        co.exit_time_moment(SQ2, (0.5, 0.5))


def test_bar_g_values_and_scaling():
    assert abs(co.bar_g(2.0 * np.eye(2), 4.0) - 1.0 / (8.0 * math.pi)) < 1e-14
    # sqrt(det) scaling: quadrupling sigma^2 halves... doubles the
    # determinant root, so the coefficient drops by 2
    a = co.bar_g(2.0 * np.eye(2), 4.0)
    b = co.bar_g(4.0 * np.eye(2), 4.0)
    assert abs(a - 2.0 * b) < 1e-14
    with pytest.raises(co.ParameterError):
        co.bar_g(np.eye(3), 1.0)


def test_centering_sequence_algebra():
    bg = 1.0 / (2.0 * math.pi)
    n = 100
    ln, lln = math.log(n), math.log(math.log(n))
    expected = math.sqrt(bg) * (2.0 * ln - 0.75 * lln)
    assert abs(co.centering_m_n(bg, n) - expected) < 1e-12
    with pytest.raises(co.ParameterError):
        co.centering_m_n(bg, 2)


def test_homogeneous_ondiag_coefficient():
    assert abs(co.homogeneous_ondiag_coefficient(2)
               - 1.0 / (2.0 * math.pi)) < 1e-15
