import math

import numpy as np
import pytest

from steinlab.quadrature import (ball_rule, cap_directions, cap_rule, gauss_legendre,
                                 ray_ball_window, rotate_from_e1, sphere_rule)


def test_gauss_legendre_polynomial_exactness():
    x, w = gauss_legendre(5, 0.0, 2.0)
    assert np.dot(w, x**9) == pytest.approx(2.0**10 / 10, rel=1e-13)


def test_gauss_legendre_broadcasts_intervals():
    x, w = gauss_legendre(4, np.array([0.0, 1.0]), np.array([1.0, 3.0]))
    assert x.shape == (2, 4)
    assert np.sum(w, axis=1) == pytest.approx([1.0, 2.0])


@pytest.mark.parametrize("dim,area", [(2, 2 * math.pi), (3, 4 * math.pi)])
def test_sphere_rule_area(dim, area):
    dirs, w = sphere_rule(dim, 16)
    assert np.sum(w) == pytest.approx(area, rel=1e-12)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)


def test_sphere_rule_second_moment():
    dirs, w = sphere_rule(3, 16)
    # int x1^2 over S^2 = 4 pi / 3
    assert np.dot(w, dirs[:, 0] ** 2) == pytest.approx(4 * math.pi / 3, rel=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_cap_rule_area(dim):
    alpha = 0.4
    dirs, w = cap_rule(dim, alpha, 24)
    expected = 2 * alpha if dim == 2 else 2 * math.pi * (1 - math.cos(alpha))
    assert np.sum(w) == pytest.approx(expected, rel=1e-12)
    assert np.all(dirs[:, 0] >= math.cos(alpha) - 1e-12)


def test_rotate_from_e1_maps_axis():
    axes = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    out = rotate_from_e1(axes, np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    assert np.allclose(out[:, 0, :], axes)
    # orthogonality: images stay unit and perpendicular
    assert np.allclose(np.einsum("bmd,bmd->bm", out, out), 1.0)
    assert np.allclose(np.einsum("bd,bd->b", out[:, 0], out[:, 1]), 0.0)


def test_cap_directions_shapes_and_axes():
    axes = np.array([[0.0, 1.0], [1.0, 0.0]])
    dirs, w = cap_directions(axes, np.array([0.3, math.pi]), 8)
    assert dirs.shape[0] == 2 and dirs.shape[2] == 2
    assert np.sum(w[0]) == pytest.approx(0.6)
    assert np.sum(w[1]) == pytest.approx(2 * math.pi)
    assert np.all(dirs[0] @ axes[0] >= math.cos(0.3) - 1e-12)


@pytest.mark.parametrize("dim,R", [(2, 1.0), (3, 0.5)])
def test_ball_rule_volume_and_centre(dim, R):
    c = np.full(dim, 0.3)
    pts, w = ball_rule(dim, R, 12, 12, center=c)
    vol = math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * R**dim
    assert np.sum(w) == pytest.approx(vol, rel=1e-12)
    assert np.dot(w, pts[:, 0]) / np.sum(w) == pytest.approx(0.3, rel=1e-12)


def test_ray_ball_window():
    lo, hi, hit = ray_ball_window(np.array([[-2.0, 0.0], [-2.0, 5.0]]),
                                  np.array([[1.0, 0.0], [1.0, 0.0]]), np.zeros(2), 1.0)
    assert hit[0] and not hit[1]
    assert (lo[0], hi[0]) == pytest.approx((1.0, 3.0))
