"""The divergence-inverting kernel G_eta on B(R') = B(2R).

For x != y in B(R'),

    G(x, y) = (y - x) * int_1^inf t^(d-1) eta(y + t (x - y)) dt,

so that  h(y) - int h eta = int <G(x, y), grad h(x)> dx  for smooth h. The
mollifier eta sits in {x1 > R}, which makes G(x, y) vanish whenever x and y are
in B(R) with x1 <= y1.

Along a ray y = x + r w the singular factor cancels exactly:

    r^(d-1) G(x, x + r w) = w * sum_j binom(d-1, j) r^j M_{d-1-j}(x, w),
    M_k(x, w) = int_0^inf s^k eta(x - s w) ds,

which is what ``apply_kernel`` integrates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import CoincidentPoints, QuadratureBudgetExceeded
from .integrals import ScalarField
from .quadrature import ball_rule, cap_directions, gauss_legendre, ray_ball_window
from .sampling import ball_volume, make_rng, sphere_area, uniform_in_ball

_CHUNK = 16384  # rays per vectorised block
_WORK = 1 << 20  # quadrature nodes per vectorised apply block
_INNER_NODES = 4  # radial nodes inside the excised ball


def _unit_bump_mass(dim: int) -> float:
    val, _ = integrate.quad(lambda s: math.exp(-1.0 / (1.0 - s * s)) * s ** (dim - 1), 0.0, 1.0,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return sphere_area(dim) * val


@dataclass(frozen=True)
class BumpFunction:
    """Unit-mass mollifier amplitude * exp(-1/(1-|z|^2)), z = (x - center)/rho."""

    center: np.ndarray
    rho: float
    dim: int
    amplitude: float = field(init=False)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.shape != (self.dim,):
            raise ValueError("center must be a point of R^dim")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "amplitude", 1.0 / (self.rho**self.dim * _unit_bump_mass(self.dim)))

    @classmethod
    def default(cls, dim: int, R: float) -> "BumpFunction":
        c = np.zeros(dim)
        c[0] = 1.5 * R
        return cls(c, R / 4.0, dim)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z2 = np.sum((x - self.center) ** 2, axis=-1) / self.rho**2
        out = np.zeros(z2.shape)
        m = z2 < 1.0
        out[m] = self.amplitude * np.exp(-1.0 / (1.0 - z2[m]))
        return out

    def admissible(self, R: float) -> bool:
        """Support inside B(2R) minus B(R) and inside the half-space {x1 > R}."""
        return (self.center[0] - self.rho > R
                and np.linalg.norm(self.center) + self.rho <= 2.0 * R * (1 + 1e-12))


def eval_eta(eta: BumpFunction, x) -> np.ndarray:
    return eta(x)


@dataclass(frozen=True)
class QuadraturePolicy:
    nodes: int = 64                 # Gauss-Legendre nodes on a ray through eta
    tol: float = 1e-8               # relative change that stops node doubling
    max_nodes: int = 4096
    epsilon_excision: float = 1e-3  # excised radius around singularities, in units of R
    apply_nodes: int = 32           # angular and radial nodes for area integrals
    apply_tol: float = 1e-4
    apply_max_nodes: int = 512


@dataclass(frozen=True)
class KernelEvaluator:
    eta: BumpFunction
    R: float
    quadrature: QuadraturePolicy = QuadraturePolicy()
    Kd_empirical: float = 0.0

    @classmethod
    def default(cls, dim: int, R: float = 1.0, quadrature: QuadraturePolicy | None = None,
                Kd: float = 0.0) -> "KernelEvaluator":
        return cls(BumpFunction.default(dim, R), R, quadrature or QuadraturePolicy(), Kd)

    @property
    def dim(self) -> int:
        return self.eta.dim

    @property
    def Rprime(self) -> float:
        return 2.0 * self.R

    @property
    def epsilon(self) -> float:
        return self.quadrature.epsilon_excision * self.R

    @property
    def compatible(self) -> bool:
        return self.eta.admissible(self.R)

    def with_kd(self, kd: float) -> "KernelEvaluator":
        return replace(self, Kd_empirical=float(kd))

    def rescaled(self, R: float) -> "KernelEvaluator":
        """Same geometry dilated to carrier radius R; K_d is dilation invariant."""
        s = R / self.R
        return replace(self, eta=BumpFunction(self.eta.center * s, self.eta.rho * s, self.dim), R=R)


def _eta_ray_integrals(ke: KernelEvaluator, origins: np.ndarray, dirs: np.ndarray,
                       t_min: float, powers: tuple[int, ...]) -> np.ndarray:
    """int_{t >= t_min} t^p eta(origin + t dir) dt for each p, adaptive in the node count.

    origins, dirs: (N, d). Returns (N, len(powers)).
    """
    pol, eta = ke.quadrature, ke.eta
    out = np.zeros((origins.shape[0], len(powers)))
    lo, hi, hit = ray_ball_window(origins, dirs, eta.center, eta.rho)
    lo = np.maximum(lo, t_min)
    idx = np.flatnonzero(hit & (hi > lo))
    if idx.size == 0:
        return out
    pw = np.asarray(powers, dtype=float)

    def compute(n, sel):
        t, w = gauss_legendre(n, lo[sel], hi[sel])
        pts = origins[sel, None, :] + t[..., None] * dirs[sel, None, :]
        ev = eta(pts) * w
        return np.einsum("rn,rnp->rp", ev, t[..., None] ** pw)

    n = pol.nodes
    cur = compute(n, idx)
    scale = np.abs(cur).max()
    todo = np.arange(idx.size)
    while todo.size:
        n *= 2
        if n > pol.max_nodes:
            raise QuadratureBudgetExceeded(f"ray integral did not converge with {pol.max_nodes} nodes")
        new = compute(n, idx[todo])
        ok = np.all(np.abs(new - cur[todo]) <= pol.tol * np.abs(new) + pol.tol * 1e-6 * scale, axis=1)
        cur[todo] = new
        todo = todo[~ok]
    out[idx] = cur
    return out


def eval_kernel(ke: KernelEvaluator, x, y) -> np.ndarray:
    """G_eta(x, y); x and y broadcast over leading axes, last axis is R^d."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape
    X = x.reshape(-1, shape[-1])
    Y = y.reshape(-1, shape[-1])
    w = X - Y
    if np.any(np.einsum("nd,nd->n", w, w) < 1e-24):
        raise CoincidentPoints("kernel evaluated at |x - y| < 1e-12")
    out = np.empty_like(X)
    d = ke.dim
    for s in range(0, X.shape[0], _CHUNK):
        sl = slice(s, s + _CHUNK)
        I = _eta_ray_integrals(ke, Y[sl], w[sl], 1.0, (d - 1,))[:, 0]
        out[sl] = -w[sl] * I[:, None]
    return out.reshape(shape)


class VectorField:
    """Callable R^d-valued field evaluated in chunks."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int, chunk: int = 512):
        self._fn, self.dim, self._chunk = fn, dim, chunk

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 0:
            return np.zeros((0, self.dim))
        return np.concatenate([self._fn(x[s:s + self._chunk])
                               for s in range(0, x.shape[0], self._chunk)])


def _ball_cap(center: np.ndarray, rho: float, x: np.ndarray, away: bool):
    """Axis and half-angle of the directions from x whose ray meets B(center, rho)."""
    diff = center - x
    dist = np.linalg.norm(diff, axis=1)
    axes = np.zeros_like(diff)
    axes[:, 0] = 1.0
    pos = dist > 0
    axes[pos] = diff[pos] / dist[pos, None]
    if away:
        axes = -axes
    alphas = np.where(dist > rho, np.arcsin(np.minimum(rho / np.maximum(dist, 1e-300), 1.0)), np.pi)
    return axes, alphas


def _cap_toward_eta(ke: KernelEvaluator, x: np.ndarray, n: int, away: bool):
    """Directions from x whose ray (or reversed ray if ``away``) meets supp eta."""
    return cap_directions(*_ball_cap(ke.eta.center, ke.eta.rho, x, away), n)


def _apply_directions(ke: KernelEvaluator, g: ScalarField, x: np.ndarray, n: int):
    # the integrand needs the reversed ray to meet eta and the ray to meet supp g;
    # integrate over whichever of the two caps is narrower
    ax_e, al_e = _ball_cap(ke.eta.center, ke.eta.rho, x, away=True)
    ax_g, al_g = _ball_cap(g.center, g.radius, x, away=False)
    use_g = al_g < al_e
    return cap_directions(np.where(use_g[:, None], ax_g, ax_e), np.where(use_g, al_g, al_e), n)


def _apply_excision_fixed(ke: KernelEvaluator, g: ScalarField, x: np.ndarray, n_ang: int,
                          n_r: int, eps: float) -> np.ndarray:
    M = cap_directions(x[:1], np.array([np.pi]), n_ang)[0].shape[1]
    block = max(1, _WORK // (M * n_r))
    if x.shape[0] > block:
        return np.concatenate([_apply_excision_block(ke, g, x[s:s + block], n_ang, n_r, eps)
                               for s in range(0, x.shape[0], block)])
    return _apply_excision_block(ke, g, x, n_ang, n_r, eps)


def _apply_excision_block(ke: KernelEvaluator, g: ScalarField, x: np.ndarray, n_ang: int,
                          n_r: int, eps: float) -> np.ndarray:
    d = ke.dim
    B = x.shape[0]
    dirs, wd = _apply_directions(ke, g, x, n_ang)                # (B, M, d)
    M = dirs.shape[1]
    orig = np.repeat(x, M, axis=0)
    flat_dirs = dirs.reshape(-1, d)
    moments = _eta_ray_integrals(ke, orig, -flat_dirs, 0.0, tuple(range(d)))  # (B*M, d)
    lo, hi, hit = ray_ball_window(orig, flat_dirs, g.center, g.radius)
    lo = np.maximum(lo, 0.0)
    J = np.zeros((B * M, d))
    # the excised ball is integrated separately; the polar integrand is bounded there
    for a, b, n in ((lo, np.minimum(hi, eps), _INNER_NODES), (np.maximum(lo, eps), hi, n_r)):
        ok = hit & (b > a)
        if np.any(ok):
            r, wr = gauss_legendre(n, a[ok], b[ok])
            pts = orig[ok, None, :] + r[..., None] * flat_dirs[ok, None, :]
            gv = g.value(pts.reshape(-1, d)).reshape(r.shape) * wr
            J[ok] += np.einsum("rn,rnj->rj", gv, r[..., None] ** np.arange(d))
    binom = np.array([math.comb(d - 1, j) for j in range(d)], dtype=float)
    # sum_j binom(d-1, j) J_j M_{d-1-j}
    radial = np.einsum("rj,j,rj->r", J, binom, moments[:, ::-1]).reshape(B, M)
    return np.einsum("bm,bmd->bd", radial * wd, dirs)


def _apply_excision(ke: KernelEvaluator, g: ScalarField, x: np.ndarray, eps: float) -> np.ndarray:
    pol = ke.quadrature
    n = pol.apply_nodes
    cur = _apply_excision_fixed(ke, g, x, n, n, eps)
    while True:
        n *= 2
        if n > pol.apply_max_nodes:
            raise QuadratureBudgetExceeded(
                f"apply_kernel did not reach tol {pol.apply_tol:g} with {pol.apply_max_nodes} nodes")
        new = _apply_excision_fixed(ke, g, x, n, n, eps)
        scale = max(np.abs(new).max(), 1e-300)
        if np.abs(new - cur).max() <= pol.apply_tol * scale:
            return new
        cur = new


def _apply_transport(ke: KernelEvaluator, g: ScalarField, x: np.ndarray, n_bump: int = 24,
                     n_line: int = 64) -> np.ndarray:
    # V(x) = int eta(z) (x - z) int_0^inf (1 + s)^(d-1) g(x + s (x - z)) ds dz
    d = ke.dim
    z, wz = ball_rule(d, ke.eta.rho, n_bump, n_bump, center=ke.eta.center)
    wz = wz * ke.eta(z)
    keep = wz > 0
    z, wz = z[keep], wz[keep]
    out = np.zeros_like(x)
    for i, xi in enumerate(x):
        w = xi - z
        orig = np.broadcast_to(xi, w.shape)
        lo, hi, hit = ray_ball_window(orig, w, g.center, g.radius)
        lo = np.maximum(lo, 0.0)
        ok = hit & (hi > lo)
        if not np.any(ok):
            continue
        s, ws = gauss_legendre(n_line, lo[ok], hi[ok])
        pts = xi + s[..., None] * w[ok, None, :]
        line = np.sum(ws * (1.0 + s) ** (d - 1) * g.value(pts.reshape(-1, d)).reshape(s.shape), axis=1)
        out[i] = np.einsum("z,zd->d", wz[ok] * line, w[ok])
    return out


def apply_kernel(ke: KernelEvaluator, g: ScalarField, method: str = "excision",
                 epsilon: float | None = None) -> VectorField:
    """x -> int G_eta(x, y) g(y) dy as a callable vector field.

    ``excision`` integrates in polar coordinates around x. No node sits on the
    singularity: the ball of radius ``epsilon`` (default ``ke.epsilon``) around
    x gets its own short radial rule, where the ray factorisation keeps the
    integrand bounded;
    ``transport`` uses the equivalent representation as an average over the
    support of eta and has no singularity at all.
    """
    if method == "excision":
        eps = ke.epsilon if epsilon is None else float(epsilon)
        return VectorField(lambda x: _apply_excision(ke, g, x, eps), ke.dim)
    if method == "transport":
        return VectorField(lambda x: _apply_transport(ke, g, x), ke.dim, chunk=64)
    raise ValueError(f"unknown method {method!r}")


def divergence_identity_rhs(ke: KernelEvaluator, h: ScalarField, probes) -> np.ndarray:
    """int <G_eta(x, y), grad h(x)> dx for each probe y (polar coordinates around y)."""
    Y = np.atleast_2d(np.asarray(probes, dtype=float))
    pol = ke.quadrature
    d = ke.dim

    def fixed(n):
        dirs, wd = _cap_toward_eta(ke, Y, n, away=False)
        P, M = wd.shape
        orig = np.repeat(Y, M, axis=0)
        flat = dirs.reshape(-1, d)
        lo, hi, hit = ray_ball_window(orig, flat, h.center, h.radius)
        lo = np.maximum(lo, 0.0)
        eps = ke.epsilon
        vals = np.zeros(P * M)
        for a, b, m in ((lo, np.minimum(hi, eps), _INNER_NODES), (np.maximum(lo, eps), hi, n)):
            ok = hit & (b > a)
            if np.any(ok):
                r, wr = gauss_legendre(m, a[ok], b[ok])
                X = orig[ok, None, :] + r[..., None] * flat[ok, None, :]
                G = eval_kernel(ke, X, orig[ok, None, :])
                gh = h.grad(X.reshape(-1, d)).reshape(X.shape)
                vals[ok] += np.sum(np.einsum("rnd,rnd->rn", G, gh) * r ** (d - 1) * wr, axis=1)
        return np.sum(vals.reshape(P, M) * wd, axis=1)

    n = pol.apply_nodes
    cur = fixed(n)
    while True:
        n *= 2
        if n > pol.apply_max_nodes:
            raise QuadratureBudgetExceeded("divergence identity quadrature did not converge")
        new = fixed(n)
        if np.abs(new - cur).max() <= pol.apply_tol * max(np.abs(new).max(), 1e-12):
            return new
        cur = new


def verify_divergence_identity(ke: KernelEvaluator, h: ScalarField, probes) -> float:
    """max over probes of |h(y) - int <G_eta(x, y), grad h(x)> dx|."""
    Y = np.atleast_2d(np.asarray(probes, dtype=float))
    if Y.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(h(Y) - divergence_identity_rhs(ke, h, Y))))


def kernel_bound_ratios(ke: KernelEvaluator, x, y) -> np.ndarray:
    """|G_eta(x, y)| |x - y|^(d-1) for paired points."""
    G = eval_kernel(ke, x, y)
    dist = np.linalg.norm(np.asarray(x) - np.asarray(y), axis=-1)
    return np.linalg.norm(G, axis=-1) * dist ** (ke.dim - 1)


def random_pairs(ke: KernelEvaluator, n_pairs: int, seed: int, radius: float | None = None):
    rng = make_rng(seed)
    radius = ke.Rprime if radius is None else radius
    return (uniform_in_ball(rng, n_pairs, ke.dim, radius),
            uniform_in_ball(rng, n_pairs, ke.dim, radius))


def estimate_Kd(ke: KernelEvaluator, n_pairs: int = 10_000, rng_seed: int = 42,
                safety: float = 1.2) -> float:
    """Empirical K_d: safety * max |G(x, y)| |x - y|^(d-1) over random pairs in B(R')."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    x, y = random_pairs(ke, n_pairs, rng_seed)
    return safety * float(np.max(kernel_bound_ratios(ke, x, y)))


def calibrate(ke: KernelEvaluator, n_pairs: int = 10_000, rng_seed: int = 42) -> KernelEvaluator:
    """Copy of ``ke`` carrying the empirical K_d."""
    return ke.with_kd(estimate_Kd(ke, n_pairs, rng_seed))


def young_constant(ke: KernelEvaluator) -> float:
    """K_d v_d R', the L^p operator-norm bound of the kernel."""
    return ke.Kd_empirical * ball_volume(ke.dim) * ke.Rprime
