"""Deterministic fields on balls, compensated Poisson integrals and cumulants."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, optimize

from .errors import DegenerateProfile, InvalidOrder, SupportExceedsCarrier, ConfigError
from .quadrature import ball_rule
from .sampling import Configuration, ConfigurationBatch, sphere_area

# product rule resolution for non-radial fields
FIELD_NODES_R = 64
FIELD_NODES_ANG = 64

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Compactly supported scalar field on R^d.

    ``value`` and ``gradient`` act on point arrays of shape (N, d). The field
    vanishes outside the ball B(center, radius); ``support_radius`` is the
    radius of the smallest origin-centred ball containing that support.
    ``radial`` (only for origin-centred fields) gives f(x) = radial(|x|) and
    switches integrals to one-dimensional quadrature.
    """

    value: Callable[[Array], Array]
    gradient: Callable[[Array], Array] | None
    dim: int
    radius: float
    center: Array | None = None
    sup_grad_norm: float | None = None
    grad_bound: float | None = None
    radial: Callable[[Array], Array] | None = None
    name: str = "field"

    def __post_init__(self):
        c = np.zeros(self.dim) if self.center is None else np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c)

    @property
    def support_radius(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    @property
    def stein_grad_norm(self) -> float:
        """Gradient sup-norm used in bounds (a looser analytic bound if one is attached)."""
        return self.grad_bound if self.grad_bound is not None else self.sup_grad_norm

    def __call__(self, x) -> Array:
        return self.value(np.atleast_2d(np.asarray(x, dtype=float)))

    def grad(self, x) -> Array:
        if self.gradient is None:
            raise NotImplementedError(f"{self.name} has no gradient")
        return self.gradient(np.atleast_2d(np.asarray(x, dtype=float)))

    def integrate_power(self, k: float, absolute: bool = False) -> float:
        """Integral of f^k (or |f|^k) over R^d."""
        if self.radial is not None:
            def integrand(r):
                v = self.radial(np.array([r]))[0]
                v = abs(v) if absolute else v
                return v**k * r ** (self.dim - 1)
            # split at sign changes so |f|^k has no interior kink for quad
            r = np.linspace(0.0, self.radius, 513)
            v = self.radial(r)
            flips = np.nonzero(np.signbit(v[:-1]) != np.signbit(v[1:]))[0]
            kinks = [optimize.brentq(lambda s: self.radial(np.array([s]))[0], r[i], r[i + 1])
                     for i in flips if v[i] != 0.0 and v[i + 1] != 0.0]
            scale = float(np.max(np.abs(v))) ** k * self.radius**self.dim
            val, _ = integrate.quad(integrand, 0.0, self.radius, epsabs=1e-14 * scale, epsrel=1e-11,
                                    limit=400, points=kinks or None)
            return sphere_area(self.dim) * val
        pts, w = self.quadrature()
        v = self.value(pts)
        v = np.abs(v) if absolute else v
        return float(np.dot(w, v**k))

    def quadrature(self, n_r: int = FIELD_NODES_R, n_ang: int = FIELD_NODES_ANG):
        return ball_rule(self.dim, self.radius, n_r, n_ang, center=self.center)

    @cached_property
    def compensator(self) -> float:
        """Integral of f against Lebesgue measure (cached)."""
        return self.integrate_power(1)

    @cached_property
    def l2_norm(self) -> float:
        return math.sqrt(max(self.integrate_power(2), 0.0))


def zero_field(dim: int, radius: float = 1.0) -> ScalarField:
    return ScalarField(lambda x: np.zeros(x.shape[0]), lambda x: np.zeros_like(x), dim,
                       radius, sup_grad_norm=0.0, radial=lambda r: np.zeros_like(r), name="zero")


def _bump_profile_sup_derivative() -> float:
    # max over s in [0,1) of d/ds exp(-1/(1-s^2)) in absolute value
    f = lambda s: -np.exp(-1.0 / (1.0 - s * s)) * 2.0 * s / (1.0 - s * s) ** 2
    res = optimize.minimize_scalar(f, bounds=(0.0, 0.999), method="bounded",
                                   options={"xatol": 1e-12})
    return float(-res.fun)


_BUMP_SUP_DERIV = _bump_profile_sup_derivative()


def bump_field(center, radius: float, dim: int | None = None, amplitude: float = 1.0,
               name: str = "bump") -> ScalarField:
    """Smooth bump amplitude * exp(-1/(1-|z|^2)), z = (x - center)/radius."""
    center = np.asarray(center, dtype=float)
    dim = center.size if dim is None else dim

    def value(x):
        z2 = np.einsum("nd,nd->n", x - center, x - center) / radius**2
        out = np.zeros(x.shape[0])
        m = z2 < 1.0
        out[m] = amplitude * np.exp(-1.0 / (1.0 - z2[m]))
        return out

    def gradient(x):
        z = (x - center) / radius
        z2 = np.einsum("nd,nd->n", z, z)
        out = np.zeros_like(x, dtype=float)
        m = z2 < 1.0
        e = amplitude * np.exp(-1.0 / (1.0 - z2[m]))
        out[m] = (e * -2.0 / (1.0 - z2[m]) ** 2)[:, None] * z[m] / radius
        return out

    def radial(r):
        s2 = (np.asarray(r) / radius) ** 2
        return np.where(s2 < 1.0, amplitude * np.exp(-1.0 / np.maximum(1.0 - s2, 1e-300)), 0.0)

    return ScalarField(value, gradient, dim, radius, center=center,
                       sup_grad_norm=abs(amplitude) * _BUMP_SUP_DERIV / radius,
                       radial=None if np.any(center) else radial, name=name)


def radial_field(phi: Callable[[Array], Array], dphi: Callable[[Array], Array], radius: float,
                 dim: int, sup_grad_norm: float | None = None, grad_bound: float | None = None,
                 name: str = "radial") -> ScalarField:
    """f(x) = phi(|x|) on B(radius), zero outside; gradient dphi(|x|) x/|x| (0 at the origin)."""

    def value(x):
        r = np.linalg.norm(x, axis=1)
        out = np.zeros(x.shape[0])
        m = r < radius
        out[m] = phi(r[m])
        return out

    def gradient(x):
        r = np.linalg.norm(x, axis=1)
        out = np.zeros_like(x, dtype=float)
        m = (r < radius) & (r > 0)
        out[m] = (dphi(r[m]) / r[m])[:, None] * x[m]
        return out

    def radial(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < radius, phi(np.minimum(r, radius)), 0.0)

    return ScalarField(value, gradient, dim, radius, sup_grad_norm=sup_grad_norm,
                       grad_bound=grad_bound, radial=radial, name=name)


def sum_fields(fields: Sequence[ScalarField], name: str = "sum") -> ScalarField:
    dim = fields[0].dim
    R = max(f.support_radius for f in fields)
    grads = [f.gradient for f in fields]
    gradient = None
    if all(g is not None for g in grads):
        gradient = lambda x: sum(g(x) for g in grads)
    sup = None
    if all(f.sup_grad_norm is not None for f in fields):
        sup = sum(f.sup_grad_norm for f in fields)  # upper bound
    return ScalarField(lambda x: sum(f.value(x) for f in fields), gradient, dim, R,
                       sup_grad_norm=sup, name=name)


# ---------------------------------------------------------------- profiles


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Piecewise polynomial profile g on [0, R] with g(R) = 0.

    ``pieces`` holds ascending coefficient lists in the global variable r, one
    per interval of ``breaks``.
    """

    breaks: tuple[float, ...]
    pieces: tuple[Polynomial, ...]
    name: str = "custom"

    def __post_init__(self):
        if len(self.breaks) != len(self.pieces) + 1:
            raise ConfigError("need len(breaks) == len(pieces) + 1")
        if any(b1 <= b0 for b0, b1 in zip(self.breaks, self.breaks[1:])) or self.breaks[0] != 0.0:
            raise ConfigError("breaks must start at 0 and increase")
        scale = max(1.0, max(np.abs(p.coef).max() for p in self.pieces))
        if abs(self.pieces[-1](self.R)) > 1e-12 * scale:
            raise ConfigError(f"profile {self.name!r} must vanish at r = R")

    @classmethod
    def polynomial(cls, coeffs: Sequence[float], R: float = 1.0, name: str = "custom"):
        return cls((0.0, float(R)), (Polynomial(list(map(float, coeffs))),), name)

    @classmethod
    def piecewise(cls, breaks: Sequence[float], coeff_lists: Sequence[Sequence[float]],
                  name: str = "custom"):
        return cls(tuple(map(float, breaks)),
                   tuple(Polynomial(list(map(float, c))) for c in coeff_lists), name)

    @property
    def R(self) -> float:
        return self.breaks[-1]

    def _eval(self, polys, r):
        r = np.asarray(r, dtype=float)
        idx = np.clip(np.searchsorted(self.breaks, r, side="right") - 1, 0, len(polys) - 1)
        out = np.zeros_like(r)
        for i, p in enumerate(polys):
            m = idx == i
            if np.any(m):
                out[m] = p(r[m])
        return np.where((r >= 0) & (r <= self.R), out, 0.0)

    def g(self, r):
        return self._eval(self.pieces, r)

    def gprime(self, r):
        return self._eval(tuple(p.deriv() for p in self.pieces), r)

    @cached_property
    def sup_gprime(self) -> float:
        best = 0.0
        for (a, b), p in zip(zip(self.breaks, self.breaks[1:]), self.pieces):
            dp = p.deriv()
            cands = [a, b]
            if dp.degree() >= 1:
                cands += [float(z.real) for z in dp.deriv().roots()
                          if abs(z.imag) < 1e-12 and a <= z.real <= b]
            best = max(best, float(np.max(np.abs(dp(np.array(cands))))))
        return best

    def moment(self, power: int, dim: int) -> float:
        """Exact integral of g(r)^power r^(dim-1) over [0, R]."""
        r = Polynomial([0.0, 1.0])
        total = 0.0
        for (a, b), p in zip(zip(self.breaks, self.breaks[1:]), self.pieces):
            anti = (p**power * r ** (dim - 1)).integ()
            total += anti(b) - anti(a)
        return float(total)


def g_plus() -> RadialProfile:
    """g(r) = r(1 - r) on [0, 1]; nonnegative, so the third cumulant never vanishes."""
    return RadialProfile.polynomial([0.0, 1.0, -1.0], 1.0, name="g_plus")


def balanced_parameter(dim: int) -> float:
    """a in (0, 1) with  int_0^1 [r(1-r)(a-r)]^3 r^(dim-1) dr = 0."""
    def cubic_moment(a):
        return RadialProfile.polynomial([0.0, a, -(1.0 + a), 1.0]).moment(3, dim)
    return float(optimize.brentq(cubic_moment, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def g_balanced(dim: int) -> RadialProfile:
    """g(r) = r(1 - r)(a - r) with a chosen so the cubic moment vanishes in dimension dim."""
    a = balanced_parameter(dim)
    return RadialProfile.polynomial([0.0, a, -(1.0 + a), 1.0], 1.0, name="g_balanced")


BUILTIN_PROFILES = {"g_plus": lambda dim: g_plus(), "g_balanced": g_balanced}


@dataclass(eq=False)
class RadialFieldFamily:
    """f_k(x) = g(|x| / k^(1/d)) / (C sqrt(k)) on B(R k^(1/d)), unit L2 norm for all k."""

    profile: RadialProfile
    C: float
    dim: int
    _members: dict = field(default_factory=dict, repr=False)

    def support(self, k: int) -> float:
        return self.profile.R * k ** (1.0 / self.dim)

    def member(self, k: int) -> ScalarField:
        if k < 1:
            raise ValueError("k must be >= 1")
        if k in self._members:
            return self._members[k]
        d, C, prof = self.dim, self.C, self.profile
        s = k ** (1.0 / d)
        amp = 1.0 / (C * math.sqrt(k))
        exact = prof.sup_gprime * amp / s
        f = radial_field(lambda r: amp * prof.g(r / s), lambda r: amp / s * prof.gprime(r / s),
                         prof.R * s, d, sup_grad_norm=exact, grad_bound=exact * math.sqrt(d),
                         name=f"{prof.name}[k={k}]")
        self._members[k] = f
        return f

    def cumulant_closed_form(self, order: int, k: int = 1) -> float:
        """s_d C^-order k^(1 - order/2) int g^order r^(d-1) dr."""
        return (sphere_area(self.dim) * self.profile.moment(order, self.dim)
                / self.C**order * k ** (1.0 - order / 2.0))


def build_radial_family(profile: RadialProfile, dim: int) -> RadialFieldFamily:
    if dim < 2:
        raise ConfigError("dim must be >= 2")
    c2 = sphere_area(dim) * profile.moment(2, dim)
    if not c2 > 0:
        raise DegenerateProfile(f"profile {profile.name!r} has zero L2 mass")
    return RadialFieldFamily(profile, math.sqrt(c2), dim)


# ------------------------------------------------------ integrals, cumulants


def _check_carrier(f: ScalarField, radius: float):
    if f.support_radius > radius * (1 + 1e-12):
        raise SupportExceedsCarrier(
            f"{f.name}: support radius {f.support_radius:g} exceeds carrier radius {radius:g}")


def compensated_integral(f: ScalarField, cfg: Configuration) -> float:
    """sum_i f(X_i) minus the Lebesgue integral of f."""
    _check_carrier(f, cfg.radius)
    if len(cfg) == 0:
        return -f.compensator
    return float(math.fsum(f(cfg.points))) - f.compensator


def compensated_integrals(f: ScalarField, batch: ConfigurationBatch) -> Array:
    """Vectorised compensated_integral over every configuration of a batch."""
    _check_carrier(f, batch.radius)
    return batch.per_config_sum(f.value(batch.points)) - f.compensator


def cumulant(f: ScalarField, k: int) -> float:
    """k-th cumulant of the compensated integral: int f^k dx."""
    if k < 2:
        raise InvalidOrder("cumulant order must be >= 2")
    return f.integrate_power(k)
