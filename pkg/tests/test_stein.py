import math
import warnings

import numpy as np
import pytest
from scipy import stats

from steinlab.errors import EmptySample, UnbalancedProfile
from steinlab.integrals import build_radial_family, bump_field, g_balanced, g_plus
from steinlab.kernel import KernelEvaluator, young_constant
from steinlab.sampling import MCSettings, make_rng
from steinlab.stein import (bound_report, classical_bound, mc_distance, o1k_bound,
                            third_cumulant_bound, wasserstein_to_gaussian)


@pytest.fixture(scope="module")
def ke():
    return KernelEvaluator.default(2, 1.0).with_kd(15.0)


def _w1_scipy(x):
    # W1 against a fine quantile discretisation of N(0, 1)
    m = 2_000_000
    q = stats.norm.ppf((np.arange(m) + 0.5) / m)
    return stats.wasserstein_distance(x, q)


def test_zero_sample():
    w = wasserstein_to_gaussian(np.zeros(10), bootstrap=0)
    assert abs(w.value - math.sqrt(2 / math.pi)) <= 1e-12


def test_constant_sample_closed_form():
    # E|Z - c| = 2 phi(c) + c (2 Phi(c) - 1)
    c = 0.7
    exact = 2 * stats.norm.pdf(c) + c * (2 * stats.norm.cdf(c) - 1)
    assert wasserstein_to_gaussian(np.full(5, c), bootstrap=0).value == pytest.approx(exact,
                                                                                        abs=1e-12)


def test_quantile_sample_is_close():
    n = 10_000
    x = stats.norm.ppf((np.arange(n) + 0.5) / n)
    assert wasserstein_to_gaussian(x, bootstrap=0).value <= 1e-3


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_matches_scipy(seed):
    x = make_rng(seed).standard_t(5, 3000) * 0.8 + 0.1
    assert wasserstein_to_gaussian(x, bootstrap=0).value == pytest.approx(_w1_scipy(x), abs=2e-6)


def test_shift_of_gaussian():
    x = make_rng(4).normal(size=200_000) + 0.5
    assert wasserstein_to_gaussian(x, bootstrap=0).value == pytest.approx(0.5, abs=0.01)


def test_order_invariance_and_bootstrap_reproducible():
    x = make_rng(5).normal(size=500)
    a = wasserstein_to_gaussian(x, bootstrap=50, seed=3)
    b = wasserstein_to_gaussian(x[::-1], bootstrap=50, seed=3)
    assert a == b
    assert a.std_error > 0


def test_empty_sample():
    with pytest.raises(EmptySample):
        wasserstein_to_gaussian([1.0])


def test_classical_bound_gplus():
    f = build_radial_family(g_plus(), 2).member(1)
    assert classical_bound(f) == pytest.approx(0.6621843463254679, rel=1e-8)


def test_third_cumulant_bound_components(ke):
    f = build_radial_family(g_plus(), 2).member(4)
    kr = ke.rescaled(f.support_radius)
    total, c = third_cumulant_bound(f, kr, with_components=True)
    assert total == pytest.approx(sum(c.values()))
    assert c["remainder"] == pytest.approx(2 * young_constant(kr) ** 2 * f.stein_grad_norm**2,
                                           rel=1e-6)


@pytest.mark.parametrize("k", [1, 4, 16, 64])
def test_balanced_third_cumulant_bound_equals_o1k(ke, k):
    fam = build_radial_family(g_balanced(2), 2)
    f = fam.member(k)
    tc = third_cumulant_bound(f, ke.rescaled(f.support_radius))
    assert tc == pytest.approx(o1k_bound(fam, k, ke), rel=1e-6)


def test_o1k_scales_inversely(ke):
    fam = build_radial_family(g_balanced(2), 2)
    assert o1k_bound(fam, 8, ke) == pytest.approx(o1k_bound(fam, 1, ke) / 8, rel=1e-14)
    assert o1k_bound(fam, 1, ke, kd_override=30.0) == pytest.approx(4 * o1k_bound(fam, 1, ke))


def test_o1k_warns_for_unbalanced(ke):
    fam = build_radial_family(g_plus(), 2)
    with pytest.warns(UnbalancedProfile):
        o1k_bound(fam, 1, ke)


def test_bound_report(ke):
    fam = build_radial_family(g_balanced(2), 2)
    f = fam.member(4)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = bound_report(f, ke.rescaled(f.support_radius), fam, 4)
    assert rep.o1k is not None and rep.kd_used == 15.0
    assert bound_report(bump_field(np.zeros(2), 0.5), ke).o1k is None


def test_mc_distance_small_for_large_k():
    f = build_radial_family(g_balanced(2), 2).member(16)
    w = mc_distance(f, MCSettings(20_000, 11), bootstrap=20)
    assert w.value <= classical_bound(f) + 4 * w.std_error
    assert w.n_samples == 20_000
