import json
import math

import numpy as np
import pytest
from scipy.special import gamma

from fkstable.core_model import (CRITICAL, RECURRENT, TRANSIENT, ConfigError, DomainError, KillingPotential,
                                 ModelSpec, ScalingFunction, check_class_membership, check_scaling_class,
                                 constants_for, kappa_eval, load_model, log_fn, model_from_dict, psi_eval,
                                 psi_inverse, regime_of, sphere_area, stable_constant)


def test_psi_power_values():
    assert psi_eval(ScalingFunction.power(2.0), 1.0) == 1.0
    assert psi_eval(ScalingFunction.power(2.0), 3.0) == pytest.approx(9.0, rel=1e-15)
    # 0.25^1.5 = 1/8
    assert psi_eval(ScalingFunction.power(1.5), 0.25) == pytest.approx(0.125, rel=1e-14)


def test_psi_inverse_values():
    assert psi_inverse(ScalingFunction.power(2.0), 9.0) == pytest.approx(3.0, rel=1e-14)
    assert psi_inverse(ScalingFunction.power(1.5), 0.125) == pytest.approx(0.25, rel=1e-14)
    tab = ScalingFunction(kind="table", beta1=1.2, beta2=1.8, lam=2.0,
                          table_r=(0.01, 0.1, 1.0, 10.0), table_psi=(1e-3, 0.05, 1.0, 30.0))
    for psi in (ScalingFunction.power(2.0), ScalingFunction.power(0.7), tab):
        assert psi_inverse(psi, 1.0) == pytest.approx(1.0, rel=1e-12)


def test_psi_table_roundtrip():
    tab = ScalingFunction(kind="table", beta1=1.2, beta2=1.8, lam=2.0,
                          table_r=(0.01, 0.1, 1.0, 10.0), table_psi=(1e-3, 0.05, 1.0, 30.0))
    r = np.geomspace(1e-3, 100, 50)
    assert np.allclose(psi_inverse(tab, psi_eval(tab, r)), r, rtol=1e-10)
    assert np.all(np.diff(psi_eval(tab, r)) > 0)


def test_psi_rejects_nonpositive():
    with pytest.raises(DomainError):
        psi_eval(ScalingFunction.power(2.0), 0.0)


def test_table_must_be_increasing_and_normalized():
    with pytest.raises(ConfigError):
        ScalingFunction(kind="table", beta1=1, beta2=2, table_r=(0.1, 1, 2), table_psi=(0.1, 1, 0.5))
    with pytest.raises(ConfigError):
        ScalingFunction(kind="table", beta1=1, beta2=2, table_r=(0.1, 1, 2), table_psi=(0.1, 1.5, 2))


def test_scaling_class_reports():
    rng = np.random.default_rng(1)
    r = 10 ** rng.uniform(-3, 2, 200)
    pairs = np.column_stack([r, r * 10 ** rng.uniform(0, 3, 200)])
    assert check_scaling_class(ScalingFunction.power(1.7), pairs).passed
    # r^2 declared with beta1 = 3: psi(2)/psi(1) = 4 < 2^3
    bad = ScalingFunction(kind="power", beta=2.0, beta1=3.0, beta2=3.0)
    rep = check_scaling_class(bad, [(1.0, 2.0)])
    assert not rep.passed
    assert rep.worst_factor == pytest.approx(2.0)
    ok = ScalingFunction(kind="power", beta=1.5, beta1=1.2, beta2=1.8, lam=1.0)
    assert check_scaling_class(ok, pairs).passed


def test_kappa_values():
    assert kappa_eval(KillingPotential.power(1, 2), 2.0) == pytest.approx(0.25)
    assert kappa_eval(KillingPotential.power(3, 1.5), 1.0) == pytest.approx(3.0)
    assert kappa_eval(KillingPotential.power(1, 2), 0.1) == pytest.approx(100.0)
    assert kappa_eval(KillingPotential.power(1, 2), np.array([0.0, -2.0])) == pytest.approx(0.25)


def test_kappa_origin_rejected():
    with pytest.raises(DomainError):
        kappa_eval(KillingPotential.power(1, 2), 0.0)


def test_class_membership():
    grid = np.geomspace(1e-4, 1e3, 80)
    for b in (0.5, 1.0, 3.0):
        rep = check_class_membership(ModelSpec.power_law(1, 0.5, 1.0, b), grid)
        assert rep.K0 and rep.K
    zero = ModelSpec.power_law(1, 0.5, 1.0).with_kappa(KillingPotential.zero())
    assert not check_class_membership(zero, grid).K0
    # r^-2 inside the unit ball, Lambda + 1 outside
    lam = 1.0
    tab_r = tuple(np.geomspace(1e-3, 1.0, 30)) + (1.0001, 100.0)
    tab_k = tuple(np.geomspace(1e-3, 1.0, 30) ** -2.0) + (lam + 1.0, lam + 1.0)
    kap = KillingPotential(kind="table", table_r=tab_r, table_kappa=tab_k)
    m = ModelSpec(1, 0.5, ScalingFunction.power(2.0), kap)
    rep = check_class_membership(m, np.geomspace(1e-3, 50, 60))
    assert not rep.K0


def test_log_fn():
    assert log_fn(1.0) == pytest.approx(1.0, rel=1e-15)
    assert log_fn(0.0) == pytest.approx(0.5413248546129181, rel=1e-12)
    assert log_fn(10.0) > log_fn(1.0)


def test_regime_tags():
    assert regime_of(1, 0.5) == TRANSIENT
    assert regime_of(1, 1.0) == CRITICAL
    assert regime_of(1, 1.5) == RECURRENT
    assert regime_of(2, 1.5) == TRANSIENT


def test_model_invariants():
    with pytest.raises(ConfigError):
        ModelSpec.power_law(1, 1.0, 0.9)
    with pytest.raises(ConfigError):
        ModelSpec.power_law(1, 2.0, 3.0)
    with pytest.raises(ConfigError):
        ModelSpec.power_law(0, 0.5, 1.0)


def _eps0_by_hand(d, a, b1, b2, lam):
    A = a * 2 ** (a - 1) * gamma((d + a) / 2) / (math.pi ** (d / 2) * gamma(1 - a / 2))
    S = 2 * math.pi ** (d / 2) / gamma(d / 2)
    c0 = 2 ** (2 * b2 + 3) * lam / 3
    terms = [
        (2 - a) / (2 ** (a - b1 + 10) * (1 + 2 * d) * 3 ** b1 * A * c0 ** 2 * lam ** 2 * S),
        a / (2 ** (a + 2 * b1 + 4) * A * c0 * lam ** 2 * S),
        (b1 - a) / (2 ** (d - a + 2 * b1 + 4) * A * c0 * lam ** 2 * S),
        a / (2 ** (d - a + 2 * b1 + 4) * A * c0 * lam ** 2 * S),
    ]
    return min(1 / 8, min(terms) ** (1 / (b1 - a)))


@pytest.mark.parametrize("d,a,beta", [(1, 0.5, 1.0), (1, 1.0, 2.0), (1, 1.5, 2.0), (3, 1.0, 1.6)])
def test_constants_explicit(d, a, beta):
    m = ModelSpec.power_law(d, a, beta, 1.0)
    c = constants_for(m)
    assert c.eps0 <= 0.125
    assert c.eps0 == pytest.approx(_eps0_by_hand(d, a, beta, beta, 1.0), rel=1e-12)
    assert c.c0 == pytest.approx(2 ** (2 * beta + 3) / 3)
    assert m.lam * (4 * c.eps0) ** beta / c.delta0 <= 1.0 + 1e-12


def test_standard_model_constants():
    c = constants_for(ModelSpec.power_law(1, 0.5, 1.0, 1.0))
    assert c.c0 == pytest.approx(32 / 3)
    assert c.eps0 == pytest.approx(_eps0_by_hand(1, 0.5, 1.0, 1.0, 1.0), rel=1e-12)
    assert c.eps0 == pytest.approx(2.57e-11, rel=1e-2)


def test_stable_constant_and_sphere():
    # Cauchy in d = 1: A(1,-1) = 1/pi
    assert stable_constant(1, 1.0) == pytest.approx(1 / math.pi, rel=1e-14)
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_model_json_strict(tmp_path):
    m = ModelSpec.power_law(1, 0.5, 1.0, 2.0)
    p = tmp_path / "m.json"
    p.write_text(json.dumps(m.to_dict()))
    assert load_model(p).hash() == m.hash()
    data = m.to_dict()
    data["extra"] = 1
    with pytest.raises(ConfigError):
        model_from_dict(data)


def test_hash_stable_and_distinct():
    a = ModelSpec.power_law(1, 0.5, 1.0, 1.0)
    assert a.hash() == ModelSpec.power_law(1, 0.5, 1.0, 1.0).hash()
    assert a.hash() != ModelSpec.power_law(1, 0.5, 1.0, 2.0).hash()
