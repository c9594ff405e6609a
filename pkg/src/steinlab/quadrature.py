"""Quadrature rules on intervals, spheres, caps and balls in R^d.

All rules return ``(nodes, weights)`` numpy arrays. Sphere and cap rules are
built recursively: a direction is written as ``cos(psi) e1 + sin(psi) s`` with
``s`` on the lower dimensional sphere, so the same code serves every d >= 2.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int, a, b) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [a, b]; a, b may be arrays (broadcast, nodes last)."""
    x, w = _leggauss(int(n))
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


@lru_cache(maxsize=64)
def sphere_rule(dim: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on the unit sphere S^{dim-1}; weights sum to its area."""
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if dim == 2:
        theta = 2.0 * np.pi * (np.arange(2 * n) + 0.5) / (2 * n)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return dirs, np.full(2 * n, np.pi / n)
    return cap_rule(dim, np.pi, n)


@lru_cache(maxsize=256)
def _cap_rule_cached(dim: int, alpha: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    if dim == 2:
        theta, w = gauss_legendre(n, -alpha, alpha)
        return np.stack([np.cos(theta), np.sin(theta)], axis=1), w
    psi, wpsi = gauss_legendre(n, 0.0, alpha)
    wpsi = wpsi * np.sin(psi) ** (dim - 2)
    sub, wsub = sphere_rule(dim - 1, n)
    cos_part = np.repeat(np.cos(psi), len(wsub))[:, None]
    sin_part = np.repeat(np.sin(psi), len(wsub))[:, None] * np.tile(sub, (n, 1))
    dirs = np.concatenate([cos_part, sin_part], axis=1)
    return dirs, np.repeat(wpsi, len(wsub)) * np.tile(wsub, n)


def cap_rule(dim: int, alpha: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the spherical cap of half-angle ``alpha`` around e1."""
    return _cap_rule_cached(int(dim), float(alpha), int(n))


def rotate_from_e1(axes: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Map local directions (axis e1) onto each of ``axes``.

    axes: (B, d) unit vectors; dirs: (M, d). Returns (B, M, d). Uses the
    Householder reflection sending e1 to the axis, which is orthogonal, so the
    rule weights are unchanged.
    """
    axes = np.atleast_2d(axes)
    v = -axes.copy()
    v[:, 0] += 1.0
    vv = np.einsum("bd,bd->b", v, v)
    out = np.broadcast_to(dirs, (axes.shape[0],) + dirs.shape).copy()
    ok = vv > 1e-24
    if np.any(ok):
        vo = v[ok]
        proj = np.einsum("md,bd->bm", dirs, vo)
        out[ok] = dirs[None] - 2.0 * (proj / vv[ok, None])[:, :, None] * vo[:, None, :]
    return out


def ball_rule(dim: int, radius: float, n_r: int, n_ang: int,
              center=None) -> tuple[np.ndarray, np.ndarray]:
    """Polar product rule on the ball B(center, radius)."""
    r, wr = gauss_legendre(n_r, 0.0, radius)
    wr = wr * r ** (dim - 1)
    dirs, wd = sphere_rule(dim, n_ang)
    pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts, (wr[:, None] * wd[None, :]).ravel()


def ray_ball_window(origins: np.ndarray, dirs: np.ndarray, center, radius: float):
    """Parameter interval where ``origin + t * dir`` lies inside a ball.

    Returns (t_lo, t_hi, hit); dirs need not be unit vectors.
    """
    oc = origins - np.asarray(center, dtype=float)
    a = np.einsum("...d,...d->...", dirs, dirs)
    b = np.einsum("...d,...d->...", oc, dirs)
    c = np.einsum("...d,...d->...", oc, oc) - radius * radius
    disc = b * b - a * c
    hit = disc > 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    a_safe = np.where(a > 0, a, 1.0)
    return (-b - sq) / a_safe, (-b + sq) / a_safe, hit & (a > 0)


def cap_directions(axes: np.ndarray, alphas: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis cap rules with varying half-angles, vectorised.

    axes: (B, d) unit vectors, alphas: (B,) in (0, pi]. Returns directions
    (B, M, d) and weights (B, M).
    """
    axes = np.atleast_2d(axes)
    B, dim = axes.shape
    s, ws = _leggauss(int(n))
    alphas = np.asarray(alphas, dtype=float).reshape(B, 1)
    if dim == 2:
        theta = alphas * s
        local = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        weights = alphas * ws
    else:
        psi = 0.5 * alphas * (s + 1.0)
        wpsi = 0.5 * alphas * ws * np.sin(psi) ** (dim - 2)
        sub, wsub = sphere_rule(dim - 1, n)
        m = len(wsub)
        cos_part = np.repeat(np.cos(psi), m, axis=1)[..., None]
        sin_part = np.repeat(np.sin(psi), m, axis=1)[..., None] * np.tile(sub, (n, 1))[None]
        local = np.concatenate([cos_part, sin_part], axis=-1)
        weights = np.repeat(wpsi, m, axis=1) * np.tile(wsub, n)[None]
    v = -axes.copy()
    v[:, 0] += 1.0
    vv = np.einsum("bd,bd->b", v, v)
    safe = np.where(vv > 1e-24, vv, 1.0)
    proj = np.einsum("bmd,bd->bm", local, v)
    dirs = local - 2.0 * (proj / safe[:, None])[..., None] * v[:, None, :] * (vv > 1e-24)[:, None, None]
    return dirs, weights
