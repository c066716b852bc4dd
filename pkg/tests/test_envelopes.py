import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fkstable.core_model import DomainError, ModelSpec, ScalingFunction, KillingPotential
from fkstable.envelopes import (FactorCase, Regime, dirichlet_factor, dominant_bound_check, f_factor,
                                global_upper, green_envelope, green_small_regime, h_factor, large_time_envelope,
                                small_time_envelope, small_time_terms, wtq, wtq_semigroup_ratio)

STD = ModelSpec.power_law(1, 0.5, 1.0, 1.0)


def Log(r):
    return math.log(math.e - 1 + r)


@pytest.mark.parametrize("d,a", [(1, 0.5), (1, 1.0), (1, 1.5), (3, 1.2)])
def test_wtq_on_diagonal(d, a):
    m = ModelSpec.power_law(d, a, 2.0)
    x = np.full(d, 0.3)
    assert wtq(m, 1.0, x, x) == pytest.approx(1.0)


def test_wtq_cauchy_value():
    m = ModelSpec.power_law(1, 1.0, 2.0)
    assert wtq(m, 1.0, 0.5, 2.5) == pytest.approx(0.25)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10), st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([0.5, 1.0, 1.7]))
def test_wtq_scaling(t, x, y, a):
    m = ModelSpec.power_law(1, a, 2.0)
    lam = 2.0
    assert wtq(m, lam ** a * t, lam * x, lam * y) == pytest.approx(wtq(m, t, x, y) / lam, rel=1e-12)


def test_small_time_on_diagonal_saturated():
    m = ModelSpec.power_law(1, 0.5, 1.0, 1.0)
    t, x, lam = 0.05, 0.4, 3.0
    expect = math.exp(-lam * t / 0.4) * t ** -2 + t ** 2 * t ** -(1 + 1.0)
    v = small_time_envelope(m, t, x, x, "upper", lam)
    assert v.value == pytest.approx(expect, rel=1e-13)
    assert v.regime is Regime.SMALL_UPPER


def test_small_time_second_term_dominates():
    # lambda = 500 makes exp(-lambda t / psi(0.5)) = e^-10
    t, x, y, lam = 0.01, 0.001, 0.5, 500.0
    pref = min(1, 0.001 / t) * min(1, 0.5 / t)
    first = math.exp(-lam * t / 0.5) * t ** -2 * min(1, t ** 2 / 0.499) ** 1.5
    second = t ** 2 * t ** -2 * min(1, t / 0.499) ** 2
    assert first < 1e-2 * second
    v = small_time_envelope(STD, t, x, y, "upper", lam).value
    assert v == pytest.approx(pref * (first + second), rel=1e-12)


def test_small_time_general_psi_matches_power():
    rng = np.random.default_rng(2)
    beta = 1.4
    m = ModelSpec.power_law(1, 0.8, beta, 1.0)
    r = np.geomspace(1e-3, 1e3, 400)
    tab = ScalingFunction(kind="table", beta1=beta, beta2=beta, table_r=tuple(r), table_psi=tuple(r ** beta))
    mt = ModelSpec(1, 0.8, tab, KillingPotential.power(1.0, beta))
    t = rng.uniform(0.01, 1, 50)
    x = rng.uniform(-2, 2, 50)
    y = rng.uniform(-2, 2, 50)
    a = small_time_envelope(m, t, x, y, "upper", 1.3).value
    b = small_time_envelope(mt, t, x, y, "upper", 1.3).value
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_small_time_rejects_origin_and_large_t():
    with pytest.raises(DomainError):
        small_time_envelope(STD, 0.5, 0.0, 1.0)
    with pytest.raises(DomainError):
        small_time_envelope(STD, 2.0, 0.5, 1.0, T=1.0)


def test_global_upper_saturation():
    m = ModelSpec.power_law(1, 0.5, 1.0)
    assert global_upper(m, 0.5, 1.5, -2.0).value == pytest.approx(wtq(m, 0.5, 1.5, -2.0))
    # t = 2 uses t ^ 1 = 1 in the prefactors: psi(0.5) / 1
    assert global_upper(m, 2.0, 0.5, 0.7).value == pytest.approx(0.5 * 0.7 * wtq(m, 2.0, 0.5, 0.7))


def test_global_upper_dominates_first_term():
    t, x, y = np.meshgrid(np.geomspace(0.01, 1, 6), np.geomspace(0.01, 2, 6), -np.geomspace(0.02, 3, 6))
    t, x, y = t.ravel(), x.ravel(), y.ravel()
    pref, _, q, _ = small_time_terms(STD, t, x, y)
    assert np.all(global_upper(STD, t, x, y).value >= pref * q * (1 - 1e-14))


def test_large_time_transient_saturates():
    m = ModelSpec.power_law(1, 0.5, 1.0)
    assert large_time_envelope(m, 4.0, 1.5, -3.0).value == pytest.approx(wtq(m, 4.0, 1.5, -3.0))


def test_large_time_critical_saturates():
    m = ModelSpec.power_law(1, 1.0, 2.0)
    t = math.e
    v = large_time_envelope(m, t, 50.0, -60.0)
    assert v.regime is Regime.LARGE_CRITICAL
    assert v.value == pytest.approx(wtq(m, t, 50.0, -60.0))


def test_large_time_recurrent_factor():
    m = ModelSpec.power_law(1, 1.5, 2.0)
    fx = 0.25 / 32 ** (1 / 3)
    v = large_time_envelope(m, 32.0, 0.5, 40.0).value
    assert v == pytest.approx(fx * wtq(m, 32.0, 0.5, 40.0), rel=1e-12)


def test_large_time_requires_t_ge_2():
    with pytest.raises(DomainError):
        large_time_envelope(STD, 1.0, 0.5, 0.5)


def test_green_transient_saturated():
    m = ModelSpec.power_law(1, 0.5, 1.0)
    assert green_envelope(m, 1.5, -2.0).value == pytest.approx(3.5 ** -0.5)


def test_green_critical_value():
    m = ModelSpec.power_law(1, 1.0, 2.0)
    x, y = 10.0, -10.0
    r = 20.0
    expect = (min(1, Log(x) / Log(r)) ** 0.5 * min(1, Log(10) / Log(r)) ** 0.5
              * (Log(min(100, 10)) * Log(min(100, 10))) ** 0.5)
    assert green_envelope(m, x, y).value == pytest.approx(expect, rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 5), st.floats(-5, -0.01), st.sampled_from([0.5, 1.0, 1.5]))
def test_green_symmetric(x, y, a):
    m = ModelSpec.power_law(1, a, 2.0)
    assert green_envelope(m, x, y).value == pytest.approx(green_envelope(m, y, x).value, rel=1e-14)


def test_green_small_regime_cases():
    m = ModelSpec.power_law(1, 1.0, 2.0)
    assert green_small_regime(m, 0.1, 0.1 + 1e-4).value == pytest.approx(Log(100.0), rel=1e-8)
    assert green_small_regime(STD, 0.01, 0.5).value == pytest.approx(0.005 / 0.49 ** 1.5, rel=1e-12)


def test_green_small_regime_boundary_agreement():
    for a, beta in ((0.5, 1.0), (1.0, 2.0), (1.5, 2.0)):
        m = ModelSpec.power_law(1, a, beta)
        for x in np.geomspace(0.05, 0.9, 12):
            p = x ** beta
            r = p ** (1 / a)
            y = x + r
            far = x ** beta * y ** beta / r ** (1 + a)
            near = green_small_regime(m, x, y * (1 + 1e-12)).value
            near_in = green_small_regime(m, x, x + r * (1 - 1e-9)).value
            assert 0.25 <= far / near <= 4 or 0.25 <= near_in / far <= 4


def test_dirichlet_ball_center():
    m = ModelSpec.power_law(1, 1.0, 2.0)
    f = dirichlet_factor(m, "ball", 0.0, 2.0, 1.5, 0.0)
    assert f.case is FactorCase.BALL
    assert f.value == pytest.approx(1.0)
    with pytest.raises(DomainError):
        dirichlet_factor(m, "ball", 0.0, 2.0, 3.0, 0.0)


def test_dirichlet_exterior():
    m = ModelSpec.power_law(1, 0.5, 1.0)
    assert dirichlet_factor(m, "exterior", 0.0, 1.0, 2.0, 3.0).value == 1.0
    mc = ModelSpec.power_law(1, 1.0, 2.0)
    v = dirichlet_factor(mc, "exterior", 0.0, 1.0, math.e, 2.0).value
    assert v == pytest.approx(min(1.0, Log(1.0) / Log(math.e)), rel=1e-13)


def test_h_factor():
    m = ModelSpec.power_law(1, 1.5, 2.0)
    assert h_factor(m, 2.0, 2.0 ** 1.5, 3.0).value == 1.0
    assert h_factor(m, 1.0, 64.0, 8.0).value == pytest.approx(math.sqrt(8) / 4, rel=1e-13)
    s = np.geomspace(0.1, 1e4, 100)
    assert np.all(np.diff(h_factor(m, 1.0, s, 8.0).value) <= 0)


def test_f_factor():
    m = ModelSpec.power_law(1, 1.0, 2.0)
    assert f_factor(m, 3.0, 3.0, 5.0).value == 1.0
    v = f_factor(m, 1.0, math.e ** 2, math.e).value
    assert v == pytest.approx(min(1, Log(math.e) / Log(math.e ** 2)), rel=1e-13)
    R, z = 1.5, 4.0
    s = np.geomspace(R * 1.01, 1e4, 60)
    fs = f_factor(m, R, s, z).value * np.array([Log(v / R) for v in s])
    assert np.all(np.diff(fs) >= -1e-12)


def test_dominant_bound():
    m = ModelSpec.power_law(1, 1.0, 2.0)
    one = dominant_bound_check(m, 1.0, [1.0], [1.0])
    assert one.fitted_C == pytest.approx(1.0)
    tg = np.geomspace(1e-4, 1, 30)
    rg = np.geomspace(1e-4, 1e2, 30)
    c1 = dominant_bound_check(m, 1.0, tg, rg).fitted_C
    c10 = dominant_bound_check(m, 10.0, np.geomspace(1e-4, 10, 33), rg).fitted_C
    assert math.isfinite(c1) and c10 > c1


def test_wtq_semigroup_bounded():
    r = wtq_semigroup_ratio(1, 1.0, 0.5, 0.5, 0.0, 1.0)
    assert 0.1 < r < 10
