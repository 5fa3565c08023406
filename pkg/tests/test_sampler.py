import math

import mpmath as mp
import numpy as np
import pytest
from scipy import stats as sps

from cflil.operator import CylinderGrid, integrate
from cflil.sampler import (
    EXACT_LIMIT, _survival, _table_slice, cylinder_log_mass, operator_conditional,
    operator_trajectory, product_digit, product_draws, product_kernel, rng_for,
    sample_trajectory, iter_product_batch,
)
from cflil.seqpot import AlphaFamily, gamma_of_alpha, minimal_tail_value
from cflil.stats import distribution_tests

GEO = AlphaFamily.geometric(4, 2)
mp.mp.dps = 30


def _hurwitz_survival(p, alpha, xi, a):
    return float(mp.zeta(p, a + xi) / mp.zeta(p, alpha + xi))


def test_first_atom_matches_direct_normalization():
    for fam in (GEO, AlphaFamily.polynomial(1, 1.5, 2), AlphaFamily.explicit([7, 3, 9])):
        tab = _table_slice(fam, 0, 1)
        e, l, c = product_kernel(tab, np.array([[1.0]]))
        alpha = fam.alpha(0)
        assert e[0, 0] == alpha
        xi = minimal_tail_value(fam, 1)
        p = 1.0 + gamma_of_alpha(alpha)
        direct = float((alpha + xi) ** (-p) / mp.zeta(p, alpha + xi))
        assert math.exp(c[0, 0]) == pytest.approx(direct, rel=1e-10)


def test_survival_against_hurwitz():
    fam = AlphaFamily.explicit([1000, 1000])
    tab = _table_slice(fam, 0, 1)
    p = float(tab.p[0])
    xi = float(tab.xi[0])
    atoms = np.array([1000.0, 1001.0, 1063.0, 1064.0, 1500.0, 10 ** 5, 10 ** 8])
    got = _survival(tab.p, atoms, tab.xi, tab.h, tab.log_alpha, tab.log_z)
    want = [_hurwitz_survival(p, 1000, xi, a) for a in atoms]
    np.testing.assert_allclose(got, want, rtol=1e-10)


def test_chi_square_at_level_zero():
    tr = product_draws(GEO, 0, 50_000, seed=11)
    tab = _table_slice(GEO, 0, 1)
    cuts = np.arange(4, 16, dtype=float)
    S = _survival(tab.p, cuts, tab.xi, tab.h, tab.log_alpha, tab.log_z)
    probs = np.append(S[:-1] - S[1:], S[-1])
    digits = tr.exact
    obs = [np.sum(digits == a) for a in range(4, 15)] + [np.sum(digits >= 15)]
    res = sps.chisquare(obs, probs * len(digits))
    assert res.pvalue > 1e-3


def test_exp1_law_at_large_alpha():
    fam = AlphaFamily.explicit([10 ** 6] * 3)
    tr = product_draws(fam, 0, 100_000, seed=2024)
    g = gamma_of_alpha(10 ** 6)
    st = g * (tr.log_digit - math.log(10 ** 6))
    assert distribution_tests(st, "exp1").ks_stat <= 0.01


def _exact_mean_and_ks(alpha):
    """Mean of gamma*log((a+xi)/alpha) and KS distance to Exp(1), from Hurwitz zeta."""
    xi = 1.0 / (alpha + 1.0 / alpha)
    g = gamma_of_alpha(alpha)
    p = 1.0 + g
    z = mp.zeta(p, alpha + xi)
    mean = float(g * (-mp.zeta(p, alpha + xi, derivative=1) / z - mp.log(alpha)))
    ts = np.concatenate([np.linspace(0, 0.05, 40), np.linspace(0.05, 12, 200)])
    atoms = sorted({int(alpha + math.floor(alpha * math.expm1(t / g))) for t in ts}
                   | set(range(alpha, alpha + 40)))
    ks = 0.0
    for a in atoms:
        s_a = float(mp.zeta(p, a + xi) / z)
        s_next = float(mp.zeta(p, a + 1 + xi) / z)
        tail = (a / alpha) ** (-g)
        ks = max(ks, abs(s_next - tail), abs(s_a - tail))
    return mean, ks


def test_mean_and_ks_trend_in_alpha():
    rows = [_exact_mean_and_ks(a) for a in (10 ** 3, 10 ** 6, 10 ** 9)]
    means = [r[0] for r in rows]
    ks = [r[1] for r in rows]
    assert all(abs(m - 1) < 0.05 for m in means)
    assert abs(means[0] - 1) > abs(means[1] - 1) > abs(means[2] - 1)
    assert ks[0] > ks[1] > ks[2]
    # the sampler reproduces the first law to Monte-Carlo accuracy
    fam = AlphaFamily.explicit([10 ** 3] * 3)
    tr = product_draws(fam, 0, 100_000, seed=5)
    st = gamma_of_alpha(1000) * (tr.log_digit - math.log(1000))
    assert abs(st.mean() - means[0]) < 5 * st.std() / math.sqrt(st.size)


def test_reproducible_and_batch_matches_single():
    a = sample_trajectory(GEO, 300, seed=77)
    b = sample_trajectory(GEO, 300, seed=77)
    assert np.array_equal(a.log_digit, b.log_digit)
    assert np.array_equal(a.log_cond_prob, b.log_cond_prob)
    assert a.to_csv() == b.to_csv()
    seeds = [3, 77, 9]
    parts = list(iter_product_batch(GEO, 300, seeds))
    ld = np.concatenate([out[1] for *_, out in parts], axis=1)
    assert np.array_equal(ld[1], a.log_digit)
    c = sample_trajectory(GEO, 300, seed=78)
    assert not np.array_equal(c.log_digit, a.log_digit)


def test_product_digit_uses_stream_order():
    rng = rng_for(5)
    d = product_digit(GEO, 0, rng)
    tr = product_draws(GEO, 0, 1, seed=5)
    assert d.log_digit == tr.log_digit[0]


@pytest.mark.parametrize("fam", [GEO, AlphaFamily.polynomial(1, 1.5, 2),
                                 AlphaFamily.doubly_exponential(2, 2)])
def test_support_and_exact_consistency(fam):
    n = 40 if fam.kind != "doubly_exponential" else 14
    tr = sample_trajectory(fam, n, seed=1)
    la = np.array([fam.log_alpha(k) for k in range(n)])
    assert np.all(tr.log_digit >= la - 1e-12)
    ok = tr.exact >= 0
    assert np.all(np.abs(np.log(tr.exact[ok].astype(float)) - tr.log_digit[ok]) <= 1e-12)
    for k in np.flatnonzero(ok):
        assert tr.exact[k] >= fam.alpha(k)
    assert np.all(tr.exact[~ok] == -1) and np.all(tr.log_digit[~ok] >= math.log(EXACT_LIMIT) - 1e-9)
    mass = np.cumsum(tr.log_cond_prob)
    assert np.all(np.isfinite(mass)) and np.all(np.diff(mass) < 0)


def test_cylinder_log_mass_basics():
    tr = sample_trajectory(GEO, 20, seed=4)
    assert cylinder_log_mass(tr, 0) == 0.0
    m = [cylinder_log_mass(tr, n) for n in range(21)]
    assert all(x > y for x, y in zip(m, m[1:]))
    with pytest.raises(ValueError):
        cylinder_log_mass(tr, 21)


def test_operator_conditionals_normalized_and_close_for_K():
    eps = 1.0 / (GEO.alpha(2) * GEO.alpha(1))
    log_phi = np.zeros((65, 65))
    # non-trivial prefix potential from an operator run
    tr = operator_trajectory(GEO, 2, seed=3, K=3)
    assert tr.length == 2
    p0 = operator_conditional(GEO, 2, log_phi, 0)
    p3 = operator_conditional(GEO, 2, log_phi, 3)
    assert abs(p0.sum() - 1) < 1e-12 and abs(p3.sum() - 1) < 1e-12
    assert 0.5 * np.abs(p0 - p3).sum() <= 5 * eps


def _nu_marginal(fam, k, width):
    return np.array([integrate(CylinderGrid.indicator(fam, k, j, 2, width), tol=1e-12)
                     for j in range(width + 1)])


def _product_marginal(fam, k, width):
    tab = _table_slice(fam, k, k + 1)
    a = fam.alpha(k) + np.arange(width + 1, dtype=float)
    S = _survival(tab.p, a, tab.xi, tab.h, tab.log_alpha, tab.log_z)
    return np.append(S[:-1] - S[1:], S[-1])


def test_product_vs_limit_marginals_exact_tv():
    # the k-th coordinate of nu_0 is the first digit under nu_k
    width = 16
    for k in range(10):
        nu = _nu_marginal(GEO, k, width)
        tv = 0.5 * np.abs(nu - _product_marginal(GEO, k, width)).sum()
        eps = 1.0 / (GEO.alpha(k) * GEO.alpha(k - 1)) if k else 1.0 / GEO.alpha(0)
        assert tv <= 0.01
        assert tv <= eps


def _operator_slot_counts(fam, n, runs, width):
    counts = np.zeros((n, width + 1))
    base = np.array([fam.alpha(k) for k in range(n)])
    for s in range(runs):
        tr = operator_trajectory(fam, n, seed=s, K=3, depth=2, width=width)
        slot = np.where(tr.exact >= 0, np.minimum(tr.exact - base, width), width)
        counts[np.arange(n), slot] += 1
    return counts


def _gof_pvalues(counts, fam, width):
    out = []
    for k, c in enumerate(counts):
        probs = _nu_marginal(fam, k, width)
        keep = probs * c.sum() >= 5
        obs = np.append(c[keep], c[~keep].sum())
        exp_ = np.append(probs[keep], probs[~keep].sum()) * c.sum()
        if exp_[-1] == 0:
            obs, exp_ = obs[:-1], exp_[:-1]
        out.append(sps.chisquare(obs, exp_ * obs.sum() / exp_.sum()).pvalue)
    return np.array(out)


def test_operator_sampler_marginals_small():
    counts = _operator_slot_counts(GEO, 4, 2000, 16)
    assert np.all(_gof_pvalues(counts, GEO, 16) > 1e-4)


@pytest.mark.slow
def test_operator_sampler_marginals_full():
    counts = _operator_slot_counts(GEO, 10, 10_000, 16)
    assert np.all(_gof_pvalues(counts, GEO, 16) > 1e-4)


def test_two_digit_cylinder_mass_matches_integral():
    width = 16
    tr = operator_trajectory(GEO, 2, seed=0, K=3, depth=2, width=width)
    j = (int(tr.exact[0]) - GEO.alpha(0), int(tr.exact[1]) - GEO.alpha(1))
    if max(j) >= width:
        pytest.skip("prefix landed in the tail bucket")
    v = np.zeros((width + 1, width + 1))
    v[j] = 1.0
    tol = 1e-10
    want = integrate(CylinderGrid(GEO, 0, 2, width, v), tol=tol)
    got = math.exp(cylinder_log_mass(tr, 2))
    eps = 1.0 / (GEO.alpha(1) * GEO.alpha(0))
    assert abs(got - want) <= 3 * tol + eps * want


def test_csv_header_and_rows():
    tr = sample_trajectory(GEO, 5, seed=9)
    text = tr.to_csv()
    lines = text.splitlines()
    assert lines[0].startswith("# family=kind=geometric")
    assert lines[1] == "# mode=product" and lines[2] == "# seed=9"
    assert lines[3] == "k,digit,log_digit,log_cond_prob"
    assert len(lines) == 9


def test_levels_beyond_double_range():
    from cflil.seqpot import DomainError
    with pytest.raises(DomainError):
        sample_trajectory(AlphaFamily.doubly_exponential(2, 2), 1100)


def test_unknown_mode():
    with pytest.raises(ValueError):
        sample_trajectory(GEO, 3, mode="bogus")
    with pytest.raises(ValueError):
        sample_trajectory(GEO, 0)
