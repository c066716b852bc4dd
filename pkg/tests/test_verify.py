import math

import numpy as np
import pytest
from scipy.integrate import quad

from fkstable.core_model import ConfigError, DomainError, ModelSpec, ScalingFunction
from fkstable.duhamel import free_kernel_1d
from fkstable.verify import (Estimates, FitReport, SurvivalSweeps, SweepSpec, audit, emit_report, fit_from_arrays,
                             one_step_integral, parse_report, sandwich_fit, survival_bound_suite, three_p_check,
                             three_p_ratio, three_p_saturation, three_p_sweep)

STD = ModelSpec.power_law(1, 0.5, 1.0, 1.0)


def qt(a, t, r):
    """Weakly scaling envelope in d = 1, written out by hand."""
    return min(t ** (-1 / a), t / r ** (1 + a)) if r > 0 else t ** (-1 / a)


def _pts(n):
    return np.column_stack([np.linspace(0.1, 1, n), np.linspace(0.2, 2, n), -np.linspace(0.3, 3, n)])


def test_fit_by_hand():
    rep = fit_from_arrays("c", "h", _pts(2), Estimates(np.array([1.0, 2.0]), np.zeros(2)), None, [2.0, 1.0])
    assert [r.ratio_hi for r in rep.rows] == [0.5, 2.0]
    assert rep.fitted_C_upper == 2.0 and math.isnan(rep.fitted_C_lower)
    assert rep.worst_point is rep.rows[1]
    assert rep.passed


def test_fit_band_uses_three_stderr_and_budget():
    est = Estimates(np.array([1.0]), np.array([0.1]), np.array([0.05]))
    rep = fit_from_arrays("c", "h", _pts(1), est, [1.0], [1.0])
    assert rep.fitted_C_upper == pytest.approx(0.65)
    assert rep.fitted_C_lower == pytest.approx(1 / 1.35)


def test_zero_envelope_point_excluded():
    rep = fit_from_arrays("c", "h", _pts(3), Estimates(np.ones(3), np.zeros(3)), None, [1.0, 0.0, 0.5])
    assert rep.excluded == [1]
    assert rep.fitted_C_upper == 2.0


def test_ceiling_fails():
    rep = fit_from_arrays("c", "h", _pts(1), Estimates(np.array([5.0]), np.zeros(1)), None, [1.0], ceiling=1.0)
    assert not rep.passed


def test_sweep_must_be_nonempty():
    with pytest.raises(ConfigError):
        SweepSpec("c", np.empty((0, 3)))


def test_sandwich_self_comparison():
    up = lambda p: 1.0 + p[:, 0] * p[:, 1] ** 2
    sw = SweepSpec("self", _pts(7), STD)
    rep = sandwich_fit(sw, up, up, up)
    assert rep.fitted_C_upper == 1.0 and rep.fitted_C_lower == 1.0
    lo = lambda p: 0.5 * up(p) * (1 + p[:, 0])
    rep2 = sandwich_fit(sw, lo, up, up)
    assert rep2.fitted_C_upper == 1.0
    assert rep2.fitted_C_lower == pytest.approx(np.max(lo(sw.points) / up(sw.points)), rel=1e-15)


def test_sandwich_free_kernel_calibration():
    a = 0.5
    g = np.array([(t, x, y) for t in (0.05, 0.3, 1.0, 4.0) for x in (0.0, 0.7) for y in (-3.0, 0.1, 20.0)])
    free = lambda p: np.array([free_kernel_1d(a, t, abs(x - y)) for t, x, y in p])
    env = lambda p: np.array([qt(a, t, abs(x - y)) for t, x, y in p])
    sw = SweepSpec("free", g, ModelSpec.power_law(1, a, 1.0), "oracle")
    rep = sandwich_fit(sw, env, env, free)
    ratio = free(g) / env(g)
    assert rep.fitted_C_upper == pytest.approx(ratio.max(), rel=1e-12)
    assert rep.fitted_C_lower == pytest.approx((1 / ratio).max(), rel=1e-12)
    assert rep.passed and math.isfinite(rep.fitted_C)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_three_p_analytic_point(alpha):
    for t, x in ((1.0, 0.0), (0.01, 3.0), (50.0, -2.0)):
        r = three_p_ratio(1, alpha, t, t / 2, x, x, x)
        assert float(r) == pytest.approx(2 ** (1 / alpha - 1), rel=1e-12)


def test_three_p_ratio_by_hand():
    a = 0.7
    t, s, x, y, z = 2.0, 0.5, 0.3, -1.1, 4.0
    A, B = qt(a, t - s, abs(x - z)), qt(a, s, abs(z - y))
    ref = A * B / (qt(a, t, abs(x - y)) * (A + qt(a, s, abs(y - z))))
    assert float(three_p_ratio(1, a, t, s, x, y, z)) == pytest.approx(ref, rel=1e-13)


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_three_p_scaling_invariance(alpha):
    pts = three_p_sweep(alpha, 200, 3)
    lam = 3.7
    scaled = pts * np.array([lam ** alpha, lam ** alpha, lam, lam, lam])
    np.testing.assert_allclose(three_p_ratio(1, alpha, *scaled.T), three_p_ratio(1, alpha, *pts.T), rtol=1e-12)


def test_three_p_saturation_nested():
    vals = three_p_saturation(1.0, (100, 400, 1600), seed=1)
    assert 1.0 <= vals[0] <= vals[1] <= vals[2] < math.inf
    assert vals[2] / vals[1] - 1 < 0.05


def test_three_p_check_report():
    pts = three_p_sweep(0.5, 300, 2)
    rep = three_p_check(1, 0.5, pts)
    assert rep.fitted_C_upper == pytest.approx(float(np.max(three_p_ratio(1, 0.5, *pts.T))), rel=1e-12)
    assert audit(rep)


REC = ModelSpec.power_law(1, 1.5, 2.0, 1.0)


def test_one_step_short_horizon_matches_direct_quadrature():
    # t = R^alpha: every boundary factor is 1 and the integrand is a plain product
    a, R, t, x, y = 1.5, 1.0, 1.0, 2.5, -3.0
    v = one_step_integral(REC, R, t, x, y)

    def inner(s):
        f = lambda z: qt(a, s, abs(x - z)) * qt(a, t - s, abs(z - y)) / z ** 2
        cuts = ((R, x), (x, 10), (10, np.inf), (-np.inf, -10), (-10, y), (y, -R))
        return sum(quad(f, lo, hi, limit=200, epsabs=0, epsrel=1e-11)[0] for lo, hi in cuts)

    ref = quad(inner, 0, t, limit=200, epsabs=0, epsrel=1e-9)[0] / qt(a, t, abs(x - y))
    assert v.value == pytest.approx(ref, rel=1e-6)


def test_one_step_linear_in_lambda():
    doubled = ModelSpec(1, 1.5, ScalingFunction(kind="power", beta=2.0, beta1=2.0, beta2=2.0, lam=2.0), REC.kappa)
    a = one_step_integral(REC, 1.0, 2.0, 2.5, -3.0).value
    b = one_step_integral(doubled, 1.0, 2.0, 2.5, -3.0).value
    assert b == pytest.approx(2 * a, rel=1e-9)


def test_one_step_preconditions():
    with pytest.raises(DomainError):
        one_step_integral(REC, 1.0, 0.5, 3.0, 3.0)
    with pytest.raises(DomainError):
        one_step_integral(REC, 1.0, 2.0, 1.0, 3.0)


SMALL = SurvivalSweeps(n=300, survival_t=(0.1, 1.0), survival_x=(0.05, 0.5, 2.0), ball_x=(0.1, 1.0),
                       free_R=(0.5,), free_t=(0.01, 0.1), ep_r_frac=(1.0,), ep_x_frac=(0.5,), ep_t=(0.01,),
                       enabled=("survival-time", "stay-lower", "exit-time-lower", "free-exit"))


@pytest.fixture(scope="module")
def small_suite():
    return survival_bound_suite(STD, SMALL, seed=1)


def test_survival_suite_shapes(small_suite):
    ids = [r.check_id for r in small_suite]
    assert ids == list(SMALL.enabled)
    by = {r.check_id: r for r in small_suite}
    assert all(r.passed for r in small_suite)
    # lower bounds are fitted from below only
    assert math.isnan(by["stay-lower"].fitted_C_upper) and by["stay-lower"].lower_constant > 1e-3
    assert math.isnan(by["free-exit"].fitted_C_lower)
    assert all(audit(r) for r in small_suite)


def test_survival_trivial_end(small_suite):
    rep = small_suite[0]
    for row in rep.rows:
        if row.x >= row.t:
            # psi(x) = x >= t: the shape is 1 and probabilities are at most 1
            assert row.upper_env == 1.0 and row.ratio_hi <= 1.0


def test_survival_rejects_unknown_check():
    with pytest.raises(ConfigError):
        SurvivalSweeps(enabled=("nope",))


def test_emit_empty(tmp_path):
    p = tmp_path / "r.csv"
    emit_report([], p)
    lines = p.read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("row,check_id")


def _report():
    est = Estimates(np.array([1.0, 0.3, 2.0]), np.array([0.01, 0.02, 0.0]))
    return fit_from_arrays("demo", "abc", _pts(3), est, [0.5, 0.2, 1.0], [1.0 / 3, 0.7, 1.1],
                           aux=[{"k": 1}, {}, {"k": 3}], params={"n": 3})


def test_emit_one_report_and_roundtrip(tmp_path):
    rep = _report()
    p = tmp_path / "r.csv"
    emit_report([rep], p, meta={"seed": 5, "model_hash": "abc"})
    body = [l for l in p.read_text().splitlines() if not l.startswith("#")]
    assert len(body) == 1 + 1 + 3
    back, meta = parse_report(p)
    assert meta == {"model_hash": "abc", "seed": "5"}
    (r,) = back
    assert isinstance(r, FitReport)
    assert r.fitted_C_upper == rep.fitted_C_upper and r.fitted_C_lower == rep.fitted_C_lower
    assert r.passed == rep.passed and r.params == {"n": 3}
    assert [row.ratio_hi for row in r.rows] == [row.ratio_hi for row in rep.rows]
    assert r.rows[0].aux == {"k": 1}
    assert audit(r)


def test_audit_detects_tampering():
    rep = _report()
    rep.fitted_C_upper *= 1.5
    assert not audit(rep)
