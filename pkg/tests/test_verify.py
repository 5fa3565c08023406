import json
import math

import numpy as np
import pytest

from cflil import verify as V
from cflil.operator import CylinderGrid
from cflil.seqpot import AlphaFamily

GEO = AlphaFamily.geometric(4, 2)
POLY = AlphaFamily.polynomial(1, 1.5, 2)
DEXP = AlphaFamily.doubly_exponential(2, 2)


def _by_name(reports):
    return {r.name: r for r in reports}


def test_report_json_roundtrip():
    r = V.VerificationReport("x", {"a": np.float64(1.5), "b": np.arange(3)}, 1.0, 0.1, True,
                             {"family": GEO.to_mapping()})
    d = json.loads(V.report_bundle([r]))[0]
    assert d["pass"] is True and d["computed"]["b"] == [0, 1, 2]
    assert set(d) == {"name", "computed", "bound", "tolerance", "pass", "config",
                      "inconclusive", "note"}
    inc = V.VerificationReport("y", math.nan, 0.0, 0.0, False, inconclusive=True)
    assert not inc.failed and not V.any_failed([r, inc])


def test_normalization_quick():
    r = V.normalization_check(GEO, n_max=6, k_max=4, depth=2, width=16)
    assert r.passed and r.computed <= 1e-11


def test_zero_statistic_martingale_is_trivial():
    reps = V.martingale_check(GEO, n_max=4, zero=True)
    assert all(r.passed for r in reps)
    for p in V.martingale_parts(GEO, 4, zero=True):
        assert p.h.max_abs() == 0 and p.u.max_abs() == 0 and p.residual == 0


def test_martingale_geometric():
    reps = _by_name(V.martingale_check(GEO, n_max=15, mc_seeds=2000))
    assert reps["martingale[residual]"].computed <= 1e-8
    assert reps["martingale[linearity]"].computed <= 1e-10
    assert reps["martingale[h_bounded]"].computed < 1.0
    assert reps["martingale[tol_sweep]"].passed
    assert reps["martingale[sigma_vs_s]"].passed


def test_martingale_orthogonality_identity():
    # int u^2 = int (f+h)^2 - int h_{n+1}^2, both sides from the same grids
    from cflil.operator import integrate
    parts = V.martingale_parts(GEO, 5)
    prev = 0.0
    for p, q in zip(parts, parts[1:]):
        fh = p.f + p.h
        lhs = p.sigma_sq_partial - prev
        rhs = integrate(fh * fh, tol=1e-12) - integrate(q.h * q.h, tol=1e-12)
        assert lhs == pytest.approx(rhs, abs=1e-7)
        prev = p.sigma_sq_partial


def test_martingale_needs_two_levels():
    with pytest.raises(ValueError):
        V.martingale_parts(GEO, 1)


def test_moment_check_geometric_n30():
    reps = _by_name(V.moment_check(GEO, 30))
    assert abs(reps["m1"].computed - 1) <= 0.01
    assert abs(reps["m2c"].computed - 1) <= 0.05
    assert abs(reps["m4c"].computed - 9) <= 0.5
    assert reps["sandwich"].passed


@pytest.mark.parametrize("fam", [POLY, DEXP])
def test_sandwich_other_presets(fam):
    for n in (3, 10, 30):
        reps = _by_name(V.moment_check(fam, n))
        assert reps["sandwich"].passed or reps["sandwich"].inconclusive


def test_moment_gate_inconclusive():
    reps = V.moment_check(GEO, 1, gate=1e-6)
    assert all(r.inconclusive and not r.failed for r in reps)


def test_moment_trend_and_summability():
    assert V.moment_trend(GEO).passed
    r = V.m1_summability(GEO, 30)
    assert r.passed and r.computed["last_increment"] < 1e-8


def test_contraction_geometric():
    reps = V.contraction_fit(GEO, 0, 6)
    for r in reps:
        assert r.passed
        D = np.asarray(r.computed["D"])
        s = r.computed["s_step"]
        assert np.all(D[1:] <= s * D[:-1] * (1 + 1e-12))
        assert r.computed["s_ls"] < 1


def test_contraction_stronger_for_larger_alpha():
    small = {r.name: r.computed["s_step"] for r in V.contraction_fit(GEO, 0, 4)}
    big = {r.name: r.computed["s_step"] for r in V.contraction_fit(AlphaFamily.geometric(16, 2), 0, 4)}
    for k in small:
        assert big[k] < small[k]


def test_contraction_skips_constant():
    reps = V.contraction_fit(GEO, 0, 3, {"one": CylinderGrid.constant(GEO, 0, 1.0)})
    assert reps[0].inconclusive and "skipped" in reps[0].note


def test_duality():
    for r in V.duality_check(GEO, 0, 4, tol=1e-8):
        assert r.passed and r.computed["max_gap"] <= 2e-8
    assert V.bilinear_check(GEO).passed


def test_duality_constant():
    reps = V.duality_check(GEO, 2, 3, {"one": CylinderGrid.constant(GEO, 2, 1.0, 2, 16)}, 2, 16)
    assert reps[0].computed["max_gap"] == 0.0


def test_condition_signs():
    assert _by_name(V.condition_check(POLY, 0.5))["growth_condition"].passed
    assert _by_name(V.condition_check(GEO, 0.1))["growth_condition"].passed
    r = _by_name(V.condition_check(DEXP, 0.1, N=40))
    assert not r["growth_condition"].passed
    assert r["summability"].passed
