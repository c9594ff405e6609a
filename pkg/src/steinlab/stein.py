"""Stein bounds on the distance to N(0, 1) and empirical Wasserstein estimates."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import EmptySample, UnbalancedProfile
from .integrals import RadialFieldFamily, ScalarField, compensated_integrals
from .kernel import KernelEvaluator, young_constant
from .sampling import MCSettings, make_rng, run_replications

BOOTSTRAP_RESAMPLES = 200
BALANCE_TOL = 1e-10


@dataclass(frozen=True)
class BoundReport:
    classical: float
    third_cumulant: float
    o1k: float | None
    components: dict = field(default_factory=dict)
    kd_used: float = 0.0
    kd_is_empirical: bool = True


@dataclass(frozen=True)
class WassersteinEstimate:
    value: float
    std_error: float
    n_samples: int


# ------------------------------------------------------------------- bounds


def classical_bound(f: ScalarField) -> float:
    """|1 - ||f||^2| + int |f|^3."""
    return abs(1.0 - f.integrate_power(2)) + f.integrate_power(3, absolute=True)


def third_cumulant_bound(f: ScalarField, ke: KernelEvaluator, kd_override: float | None = None,
                         with_components: bool = False):
    """|1 - ||f||^2| + |kappa_3| + 2 (K_d v_d R')^2 ||f||_2 ||grad f||_inf^2.

    ``ke`` must be scaled to a carrier ball containing the support of f.
    """
    if kd_override is not None:
        ke = ke.with_kd(kd_override)
    variance_gap = abs(1.0 - f.integrate_power(2))
    k3 = abs(f.integrate_power(3))
    remainder = 2.0 * young_constant(ke) ** 2 * f.l2_norm * f.stein_grad_norm ** 2
    total = variance_gap + k3 + remainder
    if with_components:
        return total, {"variance_gap": variance_gap, "abs_kappa3": k3, "remainder": remainder}
    return total


def o1k_bound(family: RadialFieldFamily, k: int, ke: KernelEvaluator,
              kd_override: float | None = None) -> float:
    """2 (2 K_d v_d R)^2 d ||g'||_inf^2 / (k C^2) for a cubically balanced profile.

    K_d is dilation invariant, so only the constant carried by ``ke`` is used.
    """
    prof, d = family.profile, family.dim
    m3 = prof.moment(3, d)
    scale = prof.moment(2, d) ** 1.5
    if abs(m3) > BALANCE_TOL * max(scale, 1e-300):
        warnings.warn(f"profile {prof.name!r} is not cubically balanced "
                      f"(int g^3 r^(d-1) dr = {m3:.3e})", UnbalancedProfile, stacklevel=2)
    kd = ke.Kd_empirical if kd_override is None else kd_override
    young = kd * math.pi ** (d / 2) / math.gamma(d / 2 + 1) * 2.0 * prof.R
    return 2.0 * young**2 * d * prof.sup_gprime**2 / (k * family.C**2)


def bound_report(f: ScalarField, ke: KernelEvaluator, family: RadialFieldFamily | None = None,
                 k: int | None = None, kd_override: float | None = None) -> BoundReport:
    """All bounds for f; the O(1/k) bound only when f is a family member."""
    tc, comps = third_cumulant_bound(f, ke, kd_override, with_components=True)
    o1k = None
    if family is not None and k is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnbalancedProfile)
            o1k = o1k_bound(family, k, ke, kd_override)
    comps["abs_cubic_integral"] = f.integrate_power(3, absolute=True)
    kd = ke.Kd_empirical if kd_override is None else kd_override
    return BoundReport(classical_bound(f), tc, o1k, comps, kd, kd_override is None)


# ------------------------------------------------------------- Wasserstein


def _gauss_cdf_antiderivative(x):
    """int_{-inf}^x Phi = x Phi(x) + phi(x)."""
    return x * special.ndtr(x) + np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _w1_sorted(x: np.ndarray) -> float:
    n = x.size
    A = _gauss_cdf_antiderivative
    total = A(x[0]) + A(-x[-1])
    if n > 1:
        a, b = x[:-1], x[1:]
        p = np.arange(1, n) / n
        q = special.ndtri(p)
        Aa, Ab, Aq = A(a), A(b), A(q)
        whole = np.abs(p * (b - a) - (Ab - Aa))
        split = (p * (q - a) - (Aq - Aa)) + ((Ab - Aq) - p * (b - q))
        cross = (a < q) & (q < b)
        total += math.fsum(np.where(cross, split, whole))
    return float(total)


def wasserstein_to_gaussian(samples, bootstrap: int = BOOTSTRAP_RESAMPLES,
                            seed: int = 0) -> WassersteinEstimate:
    """W1 between the empirical law of ``samples`` and N(0, 1).

    Computed exactly as the L1 distance between the empirical CDF and Phi; the
    standard error comes from a seeded nonparametric bootstrap.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise EmptySample("need at least two samples")
    value = _w1_sorted(x)
    se = 0.0
    if bootstrap > 0:
        rng = make_rng(seed)
        reps = [_w1_sorted(np.sort(x[rng.integers(0, n, n)])) for _ in range(bootstrap)]
        se = float(np.std(reps, ddof=1))
    return WassersteinEstimate(max(value, 0.0), se, n)


def mc_samples(f: ScalarField, mc: MCSettings, radius: float | None = None) -> np.ndarray:
    """Compensated integrals of f over simulated configurations in B(radius)."""
    radius = f.support_radius if radius is None else radius
    return run_replications(lambda b: compensated_integrals(f, b), f.dim, radius, mc)


def mc_distance(f: ScalarField, mc: MCSettings, radius: float | None = None,
                bootstrap: int = BOOTSTRAP_RESAMPLES) -> WassersteinEstimate:
    """Empirical W1 between the compensated integral of f and N(0, 1)."""
    return wasserstein_to_gaussian(mc_samples(f, mc, radius), bootstrap, seed=mc.master_seed)
