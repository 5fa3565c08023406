import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import lambertw

from cflil.seqpot import (
    AlphaFamily, CFPoint, DomainError, alpha_at, cf_value, gamma_asymptotic,
    gamma_from_log_alpha, gamma_from_log_alpha_array, gamma_of_alpha, growth_condition, level_arrays,
    log_potential_value, log_potential_word, minimal_tail_value, potential_value,
    summability_report,
)

GEOM = AlphaFamily.geometric(4, 2)
POLY = AlphaFamily.polynomial(1, 1.5, 2)
DEXP = AlphaFamily.doubly_exponential(2, 2)


def brute_w(x, iters=20000):
    # fixed point w = log x - log w, valid for x > e
    w = math.log(x)
    for _ in range(iters):
        w = math.log(x) - math.log(w)
    return w


def test_alpha_examples():
    assert alpha_at(GEOM, 3) == 32
    assert alpha_at(POLY, 4) == 10
    assert alpha_at(AlphaFamily.explicit([5, 7, 11]), 1) == 7


def test_explicit_out_of_range():
    with pytest.raises(IndexError):
        alpha_at(AlphaFamily.explicit([5, 7, 11]), 3)


def test_alpha_monotone_and_at_least_two():
    for fam in (GEOM, POLY, DEXP, AlphaFamily.polynomial(0.3, 1.1)):
        vals = [fam.alpha(n) for n in range(12)]
        assert all(v >= 2 for v in vals)
        assert vals == sorted(vals)


def test_from_mapping_roundtrip():
    fam = AlphaFamily.from_mapping(POLY.to_mapping())
    assert fam == POLY
    with pytest.raises(KeyError):
        AlphaFamily.from_mapping({"c": 1})


def test_gamma_examples():
    assert gamma_of_alpha(4) == pytest.approx(0.5, abs=1e-14)
    assert gamma_of_alpha(1) == 1.0
    assert gamma_of_alpha(math.exp(math.e)) == pytest.approx(1 / math.e, abs=1e-14)
    g = gamma_of_alpha(1e6)
    assert g == pytest.approx(0.1414, abs=5e-4)


def test_gamma_against_lambert_w():
    for a in (20.0, 1e3, 1e6, 1e12):
        L = math.log(a)
        ref_brute = math.exp(-brute_w(L))
        ref_scipy = math.exp(-lambertw(L).real)
        g = gamma_of_alpha(a)
        assert g == pytest.approx(ref_brute, rel=1e-13)
        assert g == pytest.approx(ref_scipy, rel=1e-13)


def test_gamma_bisection_oracle():
    a = 1e6
    lo, hi = 1e-8, 1.0
    while hi - lo > 1e-14:
        mid = 0.5 * (lo + hi)
        if mid * a ** mid > 1:
            hi = mid
        else:
            lo = mid
    assert gamma_of_alpha(a) == pytest.approx(lo, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.0, max_value=15 * math.log(10)))
def test_gamma_residual_property(log_a):
    a = math.exp(log_a)
    g = gamma_of_alpha(a)
    assert 0 < g <= 1
    assert abs(g * a ** g - 1) <= 1e-12
    g2 = gamma_of_alpha(a * 1.01)
    assert g2 < g or a < 1


def test_gamma_asymptotic_ratio_trend():
    assert gamma_asymptotic(math.exp(math.e)) == pytest.approx(1 / math.e)
    assert gamma_asymptotic(1e6) == pytest.approx(0.1900, abs=5e-4)
    # the ratio equals W(L)/log L with L = log alpha: it dips over 10^3..10^15
    # and only climbs back to 1 for astronomically large alpha
    ratios = [gamma_of_alpha(10.0 ** k) / gamma_asymptotic(10.0 ** k) for k in range(3, 16)]
    assert np.all(np.diff(ratios) < 0)
    far = [gamma_from_log_alpha(L) * L / math.log(L) for L in (1e20, 1e50, 1e100, 1e300)]
    assert np.all(np.diff(far) > 0)
    assert abs(far[-1] - 1) < 0.01
    with pytest.raises(DomainError):
        gamma_asymptotic(2.0)


def test_level_params():
    lv = GEOM.level(3)
    assert lv.alpha == 32
    assert lv.delta == (lv.gamma + 1) / 2
    assert lv.epsilon == pytest.approx(1 / (32 * 16))
    assert GEOM.level(0).epsilon == pytest.approx(1 / 16)


def test_level_arrays_match_scalar():
    for fam in (GEOM, POLY, DEXP):
        arr = level_arrays(fam, 0, 8)
        for n in range(8):
            lv = fam.level(n)
            assert arr.gamma[n] == pytest.approx(lv.gamma, rel=1e-14)
            assert arr.epsilon[n] == pytest.approx(lv.epsilon, rel=1e-12)
    g = gamma_from_log_alpha_array(np.log([4.0, 1.0]))
    assert np.allclose(g, [0.5, 1.0], atol=1e-15)


def test_cf_value_examples():
    assert cf_value([2, 3]) == pytest.approx(3 / 7, abs=1e-16)
    assert cf_value([9]) == pytest.approx(1 / 9)
    assert CFPoint(GEOM, 0, (2, 3), tail="terminated").value == pytest.approx(3 / 7)


def test_cf_enclosure_brackets_value():
    for fam in (GEOM, POLY):
        pt = CFPoint(fam, 0, ())
        lo, hi = pt.enclosure()
        assert lo <= pt.value <= hi
        assert hi - lo < 1e-14
        assert pt.value == pytest.approx(minimal_tail_value(fam, 0))


def test_potential_values():
    fam = AlphaFamily.explicit([4] * 5)  # gamma = 1/2, delta = 3/4
    assert potential_value(fam, 0, 0.25) == pytest.approx(0.125, rel=1e-14)
    v = 0.3
    assert log_potential_value(fam, 0, v) == pytest.approx(1.5 * math.log(v), rel=1e-14)
    with pytest.raises(DomainError):
        potential_value(fam, 0, 0.0)


def test_word_potential_matches_gauss_derivative():
    # at delta = 1, phi_w is the inverse derivative of S^k at the representative
    fam = GEOM
    w = (2, 3)
    logphi = log_potential_word(fam, 0, w, deltas=[1.0, 1.0])
    x = CFPoint(fam, 0, w).value
    y = 1 / x - 2
    deriv = (1 / x ** 2) * (1 / y ** 2)
    assert logphi == pytest.approx(-math.log(deriv), rel=1e-12)
    # and 1/q_2^2 up to a bounded factor
    assert abs(logphi + 2 * math.log(7)) < 2 * math.log(2)


def test_summability():
    rep = summability_report(GEOM, 40)
    assert rep.converges
    assert rep.total_bound <= 0.5 + 1e-12
    assert summability_report(POLY, 100).converges
    assert not summability_report(AlphaFamily.polynomial(1, 1.0), 100).converges


def test_growth_condition_signs():
    assert growth_condition(GEOM, 0.1, 400).satisfied
    assert growth_condition(POLY, 0.5, 400).satisfied
    assert not growth_condition(DEXP, 0.1, 12).satisfied


def test_growth_condition_eventually_decreasing():
    rep = growth_condition(GEOM, 0.1, 400)
    tail = rep.values[200:]
    assert np.all(np.diff(tail) <= 1e-12)
