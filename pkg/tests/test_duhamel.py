import math

import numpy as np
import pytest
from scipy.stats import levy_stable

from fkstable.core_model import DomainError, ModelSpec
from fkstable.duhamel import (KernelOracle, OracleSpec, SpaceGrid, appendix_check, build_series_step, compose,
                              free_kernel_1d, read_table_csv, stable_density_fast, transition_masses,
                              write_table_csv)
from fkstable.montecarlo import estimate_semigroup

STD = ModelSpec.power_law(1, 0.5, 1.0, 1.0)
FREE = ModelSpec.power_law(1, 1.0, 2.0, 0.0)
SMALL = OracleSpec(dx=0.05, L=1e3, caps=2, levels=1)


@pytest.fixture(scope="module")
def grid():
    return SpaceGrid.graded(2.5, 0.02, 1e6, 1.05)


@pytest.fixture(scope="module")
def small_oracle():
    return KernelOracle(STD, OracleSpec(dx=0.05, L=1e4, caps=3, levels=2))


def test_cauchy_closed_form():
    assert free_kernel_1d(1.0, 1.0, 0.0) == pytest.approx(1 / math.pi, rel=1e-14)
    assert free_kernel_1d(1.0, 2.0, 2.0) == pytest.approx(1 / (4 * math.pi), rel=1e-14)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_free_kernel_against_scipy(alpha):
    # scipy's S1 parametrization with beta=0, scale=1 has characteristic function exp(-|xi|^alpha)
    for u in (0.0, 0.3, 1.7, 12.0):
        ref = levy_stable.pdf(u, alpha, 0.0)
        assert free_kernel_1d(alpha, 1.0, u) == pytest.approx(ref, rel=1e-6)


def test_free_kernel_scaling():
    a = 0.5
    for t in (0.1, 3.0):
        for r in (0.01, 0.7, 40.0):
            lhs = free_kernel_1d(a, t, r)
            rhs = t ** (-1 / a) * free_kernel_1d(a, 1.0, r * t ** (-1 / a))
            assert lhs == pytest.approx(rhs, rel=1e-8)


def test_fast_density_matches_quadrature():
    u = np.array([0.0, 0.05, 1.0, 7.5])
    for a in (0.5, 1.5):
        np.testing.assert_allclose(stable_density_fast(a, u), [free_kernel_1d(a, 1.0, v) for v in u], rtol=1e-6)


def test_zero_cap_is_free(grid):
    st = build_series_step(FREE, 0.0, 2 ** -5, grid)
    assert np.array_equal(st.mass, transition_masses(1.0, 2 ** -5, grid))


def test_constant_potential(grid):
    c, tau = 1.0, 2 ** -7
    kill = np.full(grid.size, c)
    free = transition_masses(1.0, tau, grid)
    one = build_series_step(FREE, 10.0, tau, grid, substeps=1, kill=kill)
    assert np.max(np.abs(one.mass - math.exp(-c * tau) * free)) < 1e-6
    # with substeps the discrete semigroup defect P(h)P(h) - P(2h) enters at order c*h
    two = build_series_step(FREE, 10.0, tau, grid, substeps=2, kill=kill)
    core = np.abs(grid.centers) < 2.5
    blk = np.ix_(core, core)
    rel = np.abs(two.mass[blk] / (math.exp(-c * tau) * free[blk]) - 1)
    assert np.max(rel) < 1e-3


def test_first_order_term():
    g = SpaceGrid.uniform(20.0, 0.1)
    tau = 0.01
    kill = 1.0 + 0.5 * np.cos(g.centers)
    st = build_series_step(FREE, 2.0, tau, g, kill=kill)
    P = transition_masses(1.0, tau, g)
    # D = ∫₀^τ P(τ-s) diag(κ) P(s) ds by a fine trapezoid rule
    m = 16
    Ps = [transition_masses(1.0, l * tau / m, g) for l in range(m + 1)]
    D = sum((0.5 if l in (0, m) else 1.0) * (Ps[m - l] * kill[None, :]) @ Ps[l] for l in range(m + 1)) * tau / m
    inner = np.abs(g.centers) < 5
    removed = (P - st.mass)[inner].sum(axis=1)
    first = D[inner].sum(axis=1)
    assert np.max(np.abs(removed / first - 1)) < 0.05


def test_volterra_matches_series(grid):
    tau = 2 ** -6
    a = build_series_step(STD, 20.0, tau, grid, method="volterra")
    b = build_series_step(STD, 20.0, tau, grid, method="series")
    assert np.max(np.abs(a.mass - b.mass)) < 1e-7


def test_compose_free_semigroup(grid):
    tau = 0.25
    st = build_series_step(FREE, 0.0, tau, grid)
    two = compose(st, st)
    c = grid.centers
    inner = np.abs(c) <= 1
    X, Y = np.meshgrid(c[inner], c[inner], indexing="ij")
    ref = free_kernel_1d(1.0, 2 * tau, X - Y)
    assert np.max(np.abs(two.density[np.ix_(inner, inner)] / ref - 1)) < 1e-3


def test_compose_associative(grid):
    st = build_series_step(STD, 20.0, 2 ** -6, grid)
    a = compose(compose(st, st, False), st, False).mass
    b = compose(st, compose(st, st, False), False).mass
    assert np.max(np.abs(a - b)) < 1e-8


def test_short_time_identity(grid):
    f = np.exp(-grid.centers ** 2)
    c = grid.centers
    errs = []
    for tau in (1e-2, 1e-3):
        Pf = transition_masses(1.5, tau, grid) @ f
        errs.append(np.max(np.abs(Pf - f)[np.abs(c) < 1]))
    assert errs[1] < errs[0] < 0.05


def test_cap_monotone(small_oracle):
    t = 0.5
    x = np.array([0.05, 0.3, 1.0, 2.0])
    y = np.array([0.5, -0.4, 1.2, -2.0])
    vals = [np.asarray(small_oracle.table(t, ci, -1).interpolate(x, y)) for ci in range(3)]
    for lo, hi in zip(vals[:-1], vals[1:]):
        assert np.all(hi <= lo + 1e-8)


def test_oracle_budget_and_symmetry(small_oracle):
    a = small_oracle.value(0.5, 0.3, 1.1)
    b = small_oracle.value(0.5, 1.1, 0.3)
    assert a.budget > 0 and not a.flagged
    assert abs(a.value - b.value) <= a.budget + b.budget


def test_oracle_needs_step_multiple(small_oracle):
    with pytest.raises(DomainError):
        small_oracle.value(0.3 + small_oracle.tau / 3, 0.5, 0.5)


def test_oracle_below_free_kernel(small_oracle):
    for t, x, y in ((0.25, 0.2, 0.6), (1.0, 1.5, -1.0)):
        v = small_oracle.value(t, x, y)
        assert v.value <= free_kernel_1d(0.5, t, x - y) + v.budget


def test_semigroup_indicator_against_oracle(small_oracle):
    t, x, yc, r = 0.5, 0.6, 1.0, 0.3
    mc = estimate_semigroup(STD, x, t, lambda y: (np.abs(y[:, 0] - yc) < r).astype(float), 40000, 0.005, 77)
    zs = np.linspace(yc - r, yc + r, 61)
    ov = small_oracle.value(t, np.full_like(zs, x), zs)
    val = np.trapezoid(ov.value, zs)
    budget = np.trapezoid(ov.budget, zs) + abs(val - np.trapezoid(ov.value[::2], zs[::2]))
    assert abs(mc.mean - val) <= 3 * mc.stderr + budget


def test_appendix_far_and_near():
    orc = KernelOracle(STD, SMALL)
    far = appendix_check(STD, 0.5, 0.1, 1.5, -1.2, oracle=orc)
    assert far.holds
    near = appendix_check(STD, 0.5, 0.1, 0.15, 1.0, oracle=orc)
    assert near.holds
    assert near.f_x >= far.f_x


def test_table_csv_roundtrip(tmp_path):
    g = SpaceGrid.graded(1.0, 0.1, 100.0, 1.2)
    st = build_series_step(STD, 5.0, 2 ** -4, g)
    p = tmp_path / "t.csv"
    write_table_csv(st, STD, p)
    head, centers, dens = read_table_csv(p)
    assert head["alpha"] == 0.5 and head["tau"] == 2 ** -4
    np.testing.assert_array_equal(centers, g.centers)
    np.testing.assert_array_equal(dens, st.density)


def test_tau_cap_constraint(grid):
    with pytest.raises(ValueError):
        build_series_step(STD, 100.0, 0.1, grid)
