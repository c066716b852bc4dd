"""Deterministic one-dimensional oracle for the killed heat kernel.

The free process is discretized as a Markov chain on grid cells: the mass
that q(t, x_i, ·) puts on cell j comes from exact stable tail probabilities.
The killed one-step kernel solves the trapezoid-in-time Duhamel equation
with the potential capped at M, longer times come from binary powers of the
step, and the cap and grid are extrapolated away.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .core_model import ConfigError, DomainError, ModelSpec

_LOG_U = (-8.0, math.log10(30.0))
_PER_DECADE = 120


def _v(theta, alpha):
    return ((np.cos(theta) / np.sin(alpha * theta)) ** (alpha / (alpha - 1.0))
            * np.cos((alpha - 1.0) * theta) / np.cos(theta))


def _tail_direct(alpha: float, u: float) -> float:
    """P(X₁ > u) from Zolotarev's integral, for the symmetric stable law with E e^{iξX₁} = e^{-|ξ|^α}."""
    if alpha == 1.0:
        return 0.5 - math.atan(u) / math.pi
    c = u ** (alpha / (alpha - 1.0))
    if alpha < 1.0:
        f = lambda th: -math.expm1(-c * _v(th, alpha))
    else:
        f = lambda th: math.exp(-c * _v(th, alpha))
    # both integrands can form thin layers at the ends of (0, π/2)
    cuts = np.concatenate([[0.0], np.logspace(-12, -1, 12), math.pi / 2 - np.logspace(-1, -12, 12), [math.pi / 2]])
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        total += quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    return total / math.pi


def _tail_series(alpha, u, terms=12):
    k = np.arange(1, terms + 1)
    coef = (-1.0) ** (k + 1) * np.array([math.gamma(alpha * j) / math.factorial(j) for j in k]) \
        * np.sin(np.pi * alpha * k / 2.0) / np.pi
    u = np.asarray(u, dtype=float)
    return np.sum(coef[None, :] * u.reshape(-1, 1) ** (-alpha * k[None, :]), axis=1).reshape(u.shape)


@lru_cache(maxsize=16)
def _tail_spline(alpha: float):
    lu = np.linspace(_LOG_U[0], _LOG_U[1], int(math.ceil((_LOG_U[1] - _LOG_U[0]) * _PER_DECADE)) + 1)
    ls = np.array([math.log(_tail_direct(alpha, 10.0 ** x)) for x in lu])
    return CubicSpline(lu * math.log(10.0), ls)


def stable_tail(alpha: float, u) -> np.ndarray:
    """P(X₁ > u) for u ≥ 0: log-log spline of the Zolotarev integral up to u = 30, tail series beyond."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    if alpha == 1.0:
        out[...] = 0.5 - np.arctan(u) / np.pi
        return out
    if abs(alpha - 1.0) < 0.05:
        raise DomainError("tail tables need |alpha - 1| >= 0.05 unless alpha = 1")
    lo, hi = 10.0 ** _LOG_U[0], 10.0 ** _LOG_U[1]
    small = u < lo
    big = u > hi
    mid = ~(small | big)
    out[small] = 0.5 - math.gamma(1.0 + 1.0 / alpha) / math.pi * u[small]
    out[big] = _tail_series(alpha, u[big])
    if np.any(mid):
        out[mid] = np.exp(_tail_spline(alpha)(np.log(u[mid])))
    return out


def stable_density_fast(alpha: float, u) -> np.ndarray:
    """q(1, u) from the derivative of the tail spline (internal use; about 1e-8 relative)."""
    u = np.abs(np.asarray(u, dtype=float))
    if alpha == 1.0:
        return 1.0 / (np.pi * (1.0 + u * u))
    sp = _tail_spline(alpha)
    out = np.full_like(u, math.gamma(1.0 + 1.0 / alpha) / math.pi)
    m = (u > 10.0 ** _LOG_U[0]) & (u <= 10.0 ** _LOG_U[1])
    lu = np.log(u[m])
    out[m] = -np.exp(sp(lu)) * sp(lu, 1) / u[m]
    big = u > 10.0 ** _LOG_U[1]
    k = np.arange(1, 13)
    coef = (-1.0) ** (k + 1) * np.array([math.gamma(alpha * j + 1) / math.factorial(j) for j in k]) \
        * np.sin(np.pi * alpha * k / 2.0) / np.pi
    out[big] = np.sum(coef[None, :] * u[big][:, None] ** (-alpha * k[None, :] - 1.0), axis=1)
    return out


def _density_series(alpha, u, terms=12):
    k = np.arange(1, terms + 1)
    coef = (-1.0) ** (k + 1) * np.array([math.gamma(alpha * j + 1) / math.factorial(j) for j in k]) \
        * np.sin(np.pi * alpha * k / 2.0) / np.pi
    return float(np.sum(coef * u ** (-alpha * k - 1.0)))


def _density_one(alpha: float, u: float) -> tuple[float, float]:
    """(q(1,u), abs error) from the cosine transform (1/π)∫₀^∞ e^{-ξ^α} cos(uξ) dξ."""
    q0 = math.gamma(1.0 + 1.0 / alpha) / math.pi
    if u == 0.0:
        return q0, 0.0
    if alpha < 1.0:
        # rotate ξ = iy: a Laplace transform with no oscillation
        c, s_ = math.cos(math.pi * alpha / 2.0), math.sin(math.pi * alpha / 2.0)
        f = lambda y: math.exp(-u * y - y ** alpha * c) * math.sin(y ** alpha * s_)
        scale = 1.0 / u
        val, err = 0.0, 0.0
        cuts = [0.0, scale * 1e-6, scale * 1e-3, scale, 10 * scale, 100 * scale, np.inf]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            v, e = quad(f, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)
            val += v
            err += e
        return val / math.pi, err / math.pi
    if u > 30.0:
        return _density_series(alpha, u), 0.0
    top = 40.0 ** (1.0 / alpha)
    val, err = quad(lambda xi: math.exp(-xi ** alpha), 0.0, top, weight="cos", wvar=u,
                    epsabs=1e-15, epsrel=1e-12, limit=400)
    return val / math.pi, err / math.pi


def free_kernel_1d(alpha: float, t: float, r, return_status: bool = False):
    """q(t, r) = t^{-1/α} q(1, r t^{-1/α}); Cauchy closed form for α = 1.

    With ``return_status`` the second value tells whether every quadrature
    met the 1e-8 relative tolerance.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    r_arr = np.asarray(r, dtype=float)
    ra = np.abs(np.atleast_1d(r_arr))
    ok = True
    if alpha == 1.0:
        vals = t / (np.pi * (t * t + ra * ra))
    else:
        scale = t ** (-1.0 / alpha)
        vals = np.empty_like(ra)
        for i, rv in enumerate(ra.ravel()):
            v, e = _density_one(alpha, rv * scale)
            vals.flat[i] = v * scale
            ok = ok and e <= 1e-8 * abs(v)
    vals = vals.reshape(r_arr.shape) if r_arr.ndim else float(vals[0])
    return (vals, ok) if return_status else vals


@dataclass(frozen=True)
class SpaceGrid:
    edges: np.ndarray
    dx: float
    core: float
    ratio: float

    @classmethod
    def graded(cls, core: float, dx: float, L: float, ratio: float) -> "SpaceGrid":
        """Uniform cells of width dx on [-core, core], geometric growth by ``ratio`` out to ±L."""
        n = int(round(core / dx))
        if n < 1 or abs(n * dx - core) > 1e-9 * core:
            raise ConfigError("core must be a multiple of dx")
        right = [i * dx for i in range(n + 1)]
        w = dx
        while right[-1] < L:
            w *= ratio
            right.append(right[-1] + w)
        right = np.array(right)
        edges = np.concatenate([-right[::-1], right[1:]])
        return cls(edges, dx, core, ratio)

    @classmethod
    def uniform(cls, L: float, dx: float) -> "SpaceGrid":
        return cls.graded(L, dx, L, 1.0)

    def refined(self) -> "SpaceGrid":
        L = float(self.edges[-1])
        return SpaceGrid.graded(self.core, self.dx / 2.0, L, math.sqrt(self.ratio))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def size(self) -> int:
        return len(self.edges) - 1

    @property
    def L(self) -> float:
        return float(self.edges[-1])

    def same_as(self, other: "SpaceGrid") -> bool:
        return self.edges.shape == other.edges.shape and bool(np.all(self.edges == other.edges))


def transition_masses(alpha: float, t: float, grid: SpaceGrid) -> np.ndarray:
    """M[i, j] = P(x_i + X_t ∈ cell j) from exact stable tails."""
    if t == 0:
        return np.eye(grid.size)
    s = t ** (-1.0 / alpha)
    x = grid.centers[:, None]
    a = (grid.edges[None, :-1] - x) * s
    b = (grid.edges[None, 1:] - x) * s
    out = np.empty(a.shape)
    pos = a >= 0
    neg = b <= 0
    mid = ~(pos | neg)
    out[pos] = stable_tail(alpha, a[pos]) - stable_tail(alpha, b[pos])
    out[neg] = stable_tail(alpha, -b[neg]) - stable_tail(alpha, -a[neg])
    out[mid] = 1.0 - stable_tail(alpha, -a[mid]) - stable_tail(alpha, b[mid])
    return np.maximum(out, 0.0)


def cell_killing(model: ModelSpec, grid: SpaceGrid, cap: float, hole: float = 0.0,
                 hole_rate: float = 0.0, order: int = 12) -> np.ndarray:
    """Cell averages of κ∧cap, plus ``hole_rate`` on the part of each cell inside B(0, hole)."""
    xg, wg = np.polynomial.legendre.leggauss(order)

    def radial_integral(p, q):
        # ∫_p^q (κ∧cap)(r) dr, graded towards r = 0 when the piece starts there
        cuts = np.concatenate([[0.0], q * 0.5 ** np.arange(40, -1, -1)]) if p == 0.0 else np.array([p, q])
        lo, hi = cuts[:-1], cuts[1:]
        z = (0.5 * (lo + hi))[:, None] + (0.5 * (hi - lo))[:, None] * xg[None, :]
        k = np.minimum(np.asarray(model.kappa.radial(np.maximum(z, 1e-300))), cap)
        return float(np.sum((0.5 * (hi - lo))[:, None] * wg[None, :] * k))

    out = np.zeros(grid.size)
    if not model.kappa.is_zero:
        for j, (lo, hi) in enumerate(zip(grid.edges[:-1], grid.edges[1:])):
            if lo < 0.0 < hi:
                total = radial_integral(0.0, -lo) + radial_integral(0.0, hi)
            else:
                total = radial_integral(min(abs(lo), abs(hi)), max(abs(lo), abs(hi)))
            out[j] = total / (hi - lo)
    if hole > 0 and hole_rate > 0:
        inside = np.clip(np.minimum(grid.edges[1:], hole) - np.maximum(grid.edges[:-1], -hole), 0.0, None)
        out += hole_rate * inside / grid.widths
    return out


@dataclass
class KernelTable:
    """Transition masses of the killed chain at time ``t`` on ``grid``.

    ``density`` is p(t, x_i, y_j) ≈ mass[i, j] / width_j.
    """

    grid: SpaceGrid
    t: float
    tau: float
    mass: np.ndarray
    cap: float
    series_terms: int
    truncation_error: float
    substeps: int
    asymmetry: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def density(self) -> np.ndarray:
        return self.mass / self.grid.widths[None, :]

    def row_mass(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    def interpolate(self, x, y) -> np.ndarray:
        c = self.grid.centers
        f = RegularGridInterpolator((c, c), self.density, method="linear")
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return f(np.stack([x.ravel(), y.ravel()], axis=-1)).reshape(x.shape)


def _symmetrize(mass: np.ndarray, grid: "SpaceGrid") -> tuple[np.ndarray, float]:
    """Symmetrized masses and the relative density asymmetry on the uniform core."""
    widths = grid.widths
    dens = mass / widths[None, :]
    core = np.abs(grid.centers) < grid.core
    block = dens[np.ix_(core, core)]
    asym = float(np.max(np.abs(block - block.T)) / max(np.max(np.abs(block)), 1e-300))
    return 0.5 * (dens + dens.T) * widths[None, :], asym


def series_terms_for(alpha: float, tau: float, cap: float, tol: float = 1e-8) -> tuple[int, float]:
    """Smallest K with (τM)^{K+1}/(1-τM)·sup q(τ,·) ≤ tol, and the resulting bound."""
    rho = tau * cap
    sup_q = math.gamma(1.0 + 1.0 / alpha) / math.pi * tau ** (-1.0 / alpha)
    if rho == 0:
        return 0, 0.0
    k = 0
    while rho ** (k + 1) / (1.0 - rho) * sup_q > tol:
        k += 1
    return k, rho ** (k + 1) / (1.0 - rho) * sup_q


def build_series_step(model: ModelSpec, cap: float, tau: float, grid: SpaceGrid, substeps: int = 2,
                      method: str = "volterra", kill: np.ndarray | None = None) -> KernelTable:
    """One-step killed kernel p^{κ∧M}(τ) from the trapezoid-in-time Duhamel equation.

    ``method="volterra"`` sums the alternating series to all orders by solving
    the discretized Volterra equation step by step; ``method="series"`` adds
    the first K terms explicitly, K from the geometric tail bound.
    """
    if model.d != 1:
        raise DomainError("the oracle is one-dimensional")
    kv = cell_killing(model, grid, cap) if kill is None else kill
    eff_cap = float(np.max(kv)) if kv.size else 0.0
    if tau * max(cap, eff_cap) > 0.5 + 1e-12:
        raise ValueError("tau * M must not exceed 1/2")
    a = model.alpha
    m = int(substeps)
    h = tau / m
    P = [transition_masses(a, l * h, grid) for l in range(m + 1)]
    K, bound = series_terms_for(a, tau, max(cap, eff_cap))
    if not np.any(kv):
        X = P[m]
    elif method == "volterra":
        X = [np.eye(grid.size)]
        diag = 1.0 / (1.0 + 0.5 * h * kv)
        for l in range(1, m + 1):
            rhs = P[l] - h * (0.5 * P[l] * kv[None, :])
            for lp in range(1, l):
                rhs -= h * (P[l - lp] * kv[None, :]) @ X[lp]
            X.append(diag[:, None] * rhs)
        X = X[m]
    elif method == "series":
        term = [np.eye(grid.size)] + [P[l] for l in range(1, m + 1)]
        total = term[m].copy()
        for _ in range(K):
            new = [np.zeros_like(term[0])]
            for l in range(1, m + 1):
                acc = 0.5 * (P[l] * kv[None, :]) @ term[0]
                for lp in range(1, l):
                    acc += (P[l - lp] * kv[None, :]) @ term[lp]
                acc += 0.5 * kv[:, None] * term[l]
                new.append(-h * acc)
            term = new
            total += term[m]
        X = total
    else:
        raise ValueError("method must be 'volterra' or 'series'")
    _, asym = _symmetrize(X, grid)
    return KernelTable(grid, tau, tau, X, cap, K, bound, m, asym)


def compose(first: KernelTable, second: KernelTable, symmetrize: bool = True) -> KernelTable:
    """p(t1+t2) = ∫ p(t1, x, z) p(t2, z, y) dz.

    The density is symmetrized afterwards unless ``symmetrize=False``; only
    the raw matrix product is exactly associative.
    """
    if not first.grid.same_as(second.grid):
        raise ValueError("tables live on different grids")
    mass, asym = _symmetrize(first.mass @ second.mass, first.grid)
    if not symmetrize:
        mass = first.mass @ second.mass
    return KernelTable(first.grid, first.t + second.t, first.tau, mass, first.cap,
                       max(first.series_terms, second.series_terms),
                       first.truncation_error + second.truncation_error, first.substeps,
                       max(asym, first.asymmetry, second.asymmetry))


class StepPowers:
    """Binary powers of a one-step table, cached for repeated time queries."""

    def __init__(self, step: KernelTable):
        self.step = step
        self._pow = [step]
        self._cache: dict[int, KernelTable] = {1: step}

    def _power2(self, j: int) -> KernelTable:
        while len(self._pow) <= j:
            last = self._pow[-1]
            self._pow.append(compose(last, last))
        return self._pow[j]

    def at(self, n: int) -> KernelTable:
        if n < 1:
            raise DomainError("need at least one step")
        if n in self._cache:
            return self._cache[n]
        out = None
        j = 0
        k = n
        while k:
            if k & 1:
                p = self._power2(j)
                out = p if out is None else compose(out, p)
            k >>= 1
            j += 1
        self._cache[n] = out
        return out


@dataclass(frozen=True)
class OracleSpec:
    core: float = 2.5
    dx: float = 0.02
    L: float = 1e6
    ratio: float = 1.05
    cap0: float | None = None
    tau: float | None = None
    substeps: int = 2
    levels: int = 2
    caps: int = 3


@dataclass(frozen=True)
class OracleValue:
    value: float | np.ndarray
    budget: float | np.ndarray
    flagged: bool
    parts: dict = field(default_factory=dict)


class KernelOracle:
    """p^κ(t, x, y) with an error budget, extrapolated over caps, grids and time substeps."""

    def __init__(self, model: ModelSpec, spec: OracleSpec = OracleSpec()):
        if model.d != 1:
            raise DomainError("the oracle is one-dimensional")
        self.model = model
        self.spec = spec
        self.cap0 = spec.cap0 if spec.cap0 is not None else 1.0 / spec.dx
        self.caps = [self.cap0 * 2 ** k for k in range(spec.caps)]
        if spec.tau is None:
            self.tau = 2.0 ** math.floor(math.log2(0.5 / self.caps[-1]))
        else:
            self.tau = spec.tau
        if self.tau * self.caps[-1] > 0.5:
            raise ValueError("tau * M must not exceed 1/2")
        grids = [SpaceGrid.graded(spec.core, spec.dx, spec.L, spec.ratio)]
        for _ in range(spec.levels - 1):
            grids.append(grids[-1].refined())
        self.grids = grids
        self._powers: dict[tuple, StepPowers] = {}

    def steps_for(self, t: float) -> int:
        n = int(round(t / self.tau))
        if n < 1 or abs(n * self.tau - t) > 1e-9 * max(t, self.tau):
            raise DomainError(f"t={t} is not a multiple of the step {self.tau}")
        return n

    def snap(self, t) -> np.ndarray:
        """Nearest admissible times (positive multiples of the step)."""
        return np.maximum(np.round(np.asarray(t, dtype=float) / self.tau), 1.0) * self.tau

    def powers(self, cap_index: int, level: int, substeps: int | None = None) -> StepPowers:
        m = substeps or self.spec.substeps
        cap_index %= len(self.caps)
        level %= len(self.grids)
        key = (cap_index, level, m)
        if key not in self._powers:
            step = build_series_step(self.model, self.caps[cap_index], self.tau, self.grids[level], m)
            self._powers[key] = StepPowers(step)
        return self._powers[key]

    def table(self, t: float, cap_index: int = -1, level: int = -1, substeps: int | None = None) -> KernelTable:
        ci = cap_index % len(self.caps)
        lv = level % len(self.grids)
        return self.powers(ci, lv, substeps).at(self.steps_for(t))

    def leak_bound(self, t: float, x, y) -> np.ndarray:
        a = self.model.alpha
        L = self.grids[0].L
        dx = L - np.abs(np.asarray(x, dtype=float))
        dy = L - np.abs(np.asarray(y, dtype=float))
        u = np.logspace(-3, 6, 400)
        sup_uq = float(np.max(u * stable_density_fast(a, u)))
        exit_p = np.minimum(1.0, 4.0 * stable_tail(a, dx * t ** (-1.0 / a)))
        return exit_p * sup_uq / dy

    def _extrapolate(self, t: float, evaluate, leak) -> OracleValue:
        return self._extrapolate_tables(lambda ci, lv, m: self.table(t, ci, lv, m), evaluate, leak)

    def _extrapolate_tables(self, make, evaluate, leak) -> OracleValue:
        per_level = []
        monotone_ok = True
        spreads = []
        for lv in range(len(self.grids)):
            vals = [np.asarray(evaluate(make(ci, lv, None))) for ci in range(len(self.caps))]
            for v_lo, v_hi in zip(vals[:-1], vals[1:]):
                if np.any(v_hi > v_lo + 1e-8 * np.maximum(1.0, np.abs(v_lo))):
                    monotone_ok = False
            # the cap effect decays like 1/M: Richardson on consecutive caps
            if len(vals) >= 3:
                e1 = 2.0 * vals[-2] - vals[-3]
                best = 2.0 * vals[-1] - vals[-2]
                spreads.append(np.abs(best - e1) + np.abs(best - vals[-1]))
            elif len(vals) == 2:
                best = 2.0 * vals[-1] - vals[-2]
                spreads.append(np.abs(best - vals[-1]))
            else:
                best = vals[-1]
                spreads.append(np.zeros_like(best))
            per_level.append(best)
        value = per_level[-1]
        grid_err = np.abs(per_level[-1] - per_level[-2]) if len(per_level) > 1 else np.zeros_like(value)
        top_c, top_l = len(self.caps) - 1, len(self.grids) - 1
        coarse_m = np.asarray(evaluate(make(top_c, top_l, max(1, self.spec.substeps // 2))))
        fine_m = np.asarray(evaluate(make(top_c, top_l, None)))
        time_err = np.abs(fine_m - coarse_m) / 3.0
        budget = spreads[-1] + grid_err + time_err + leak
        value = np.maximum(value, 0.0)
        parts = {"cap_spread": spreads[-1], "grid": grid_err, "time": time_err, "leak": leak,
                 "levels": per_level}
        out_v = float(value) if value.ndim == 0 else value
        out_b = float(budget) if np.ndim(budget) == 0 else budget
        return OracleValue(out_v, out_b, not monotone_ok, parts)

    def _check_core(self, *pts):
        lim = self.spec.core
        for p in pts:
            if np.any(np.abs(np.asarray(p, dtype=float)) > lim):
                raise DomainError("probe points must lie in the uniform core")

    def value(self, t: float, x, y) -> OracleValue:
        """Extrapolated kernel at time t (a multiple of the step) for arrays x, y."""
        self._check_core(x, y)
        return self._extrapolate(t, lambda tab: tab.interpolate(x, y), self.leak_bound(t, x, y))

    def green(self, t_end: float, x, y) -> OracleValue:
        """∫₀^{t_end} p(s, x, y) ds for x ≠ y, with the trapezoid error (step τ vs 2τ) in the budget."""
        self._check_core(x, y)
        n = self.steps_for(t_end)
        if n % 2:
            raise DomainError("t_end must be an even number of steps")
        res = self._extrapolate_tables(
            lambda ci, lv, m: time_integral(self.powers(ci, lv, m), n), lambda tab: tab.interpolate(x, y),
            self.leak_bound(t_end, x, y) * t_end)
        top = self.powers(-1, -1)
        fine = np.asarray(time_integral(top, n).interpolate(x, y))
        coarse = np.asarray(time_integral(top, n, coarse=True).interpolate(x, y))
        quad_err = np.abs(fine - coarse) / 3.0
        parts = dict(res.parts, quadrature=quad_err)
        budget = np.asarray(res.budget) + quad_err
        return OracleValue(res.value, float(budget) if budget.ndim == 0 else budget, res.flagged, parts)

    def smoothed(self, t: float, x: float, y: float, h: float) -> OracleValue:
        """∫ K_h(y - z) p(t, x, z) dz with the Epanechnikov kernel K_h, integrated cell-exactly."""
        self._check_core(x, y)

        def evaluate(tab):
            c, e = tab.grid.centers, tab.grid.edges
            lo = np.clip((e[:-1] - y) / h, -1.0, 1.0)
            hi = np.clip((e[1:] - y) / h, -1.0, 1.0)
            prim = lambda u: 0.75 * (u - u ** 3 / 3.0)
            frac = (prim(hi) - prim(lo)) / tab.grid.widths
            j = int(np.clip(np.searchsorted(c, x) - 1, 0, len(c) - 2))
            f = (x - c[j]) / (c[j + 1] - c[j])
            row = (1.0 - f) * tab.mass[j] + f * tab.mass[j + 1]
            return float(np.sum(row * frac))

        return self._extrapolate(t, evaluate, self.leak_bound(t, x, y))


def power_sum(step: KernelTable, n: int) -> KernelTable:
    """Σ_{k=1}^{n} P^k for the one-step table P, by binary doubling."""
    if n < 1:
        raise DomainError("need at least one step")
    P = step.mass
    S, Pm, m = P.copy(), P.copy(), 1
    for bit in bin(n)[3:]:
        S = S + Pm @ S
        Pm = Pm @ Pm
        m *= 2
        if bit == "1":
            S = P + P @ S
            Pm = Pm @ P
            m += 1
    mass, asym = _symmetrize(S, step.grid)
    return KernelTable(step.grid, n * step.t, step.t, mass, step.cap, step.series_terms,
                       n * step.truncation_error, step.substeps, asym, {"power_sum": n})


def time_integral(powers: "StepPowers", n: int, coarse: bool = False) -> KernelTable:
    """Trapezoid rule for ∫₀^{nτ} p(s) ds with p(0) = identity dropped (off-diagonal use).

    ``coarse`` uses step 2τ, for a Richardson estimate of the quadrature error.
    """
    if coarse:
        if n % 2:
            raise DomainError("coarse quadrature needs an even number of steps")
        step, k, h = powers.at(2), n // 2, 2.0 * powers.step.t
    else:
        step, k, h = powers.step, n, powers.step.t
    S = power_sum(step, k)
    last = powers.at(n).mass
    mass = h * (S.mass - 0.5 * last)
    return KernelTable(S.grid, n * powers.step.t, powers.step.t, mass, S.cap, S.series_terms,
                       S.truncation_error, S.substeps, S.asymmetry, {"time_integral": n, "h": h})


def oracle_kernel(model: ModelSpec, t: float, x, y, spec: OracleSpec = OracleSpec()) -> OracleValue:
    """One-shot oracle value; build a KernelOracle directly for repeated queries."""
    return KernelOracle(model, spec).value(t, x, y)


@dataclass(frozen=True)
class AppendixReport:
    lhs: float
    dirichlet: float
    f_x: float
    f_y: float
    rhs: float
    gap: float
    budget: float
    holds: bool
    flagged: bool


def appendix_check(model: ModelSpec, t: float, eps: float, x: float, y: float,
                   spec: OracleSpec = OracleSpec(levels=1), hole_rate: float = 1e3,
                   oracle: KernelOracle | None = None) -> AppendixReport:
    """p^κ(t,x,y) ≤ p^{κ,B(0,ε)^c}(t,x,y) + F(x) + F(y) with F(w) = max over s ∈ (t/2,t], |z| ≤ ε of p^κ(s,z,w)."""
    orc = oracle or KernelOracle(model, spec)
    grid = orc.grids[-1]
    cap = orc.caps[-1]
    lhs = orc.value(t, x, y)
    n = orc.steps_for(t)
    times = sorted({k * orc.tau for k in np.unique(np.linspace(n // 2 + 1, n, 8).astype(int))})
    c = grid.centers
    near = np.abs(c) <= eps
    if not np.any(near):
        raise DomainError("eps is below the grid resolution")

    def F(w):
        best = 0.0
        for s in times:
            tab = orc.table(s)
            col = tab.interpolate(c[near], np.full(near.sum(), w))
            best = max(best, float(np.max(col)))
        return best

    fx, fy = F(x), F(y)
    kill = cell_killing(model, grid, cap, hole=eps, hole_rate=hole_rate)
    tau_h = 2.0 ** math.floor(math.log2(0.5 / float(np.max(kill))))
    tau_h = min(tau_h, orc.tau)
    step = build_series_step(model, float(np.max(kill)), tau_h, grid, orc.spec.substeps, kill=kill)
    nh = int(round(t / tau_h))
    dir_tab = StepPowers(step).at(nh)
    dval = float(dir_tab.interpolate(x, y))
    rhs = dval + fx + fy
    budget = float(lhs.budget)
    gap = rhs - float(lhs.value)
    return AppendixReport(float(lhs.value), dval, fx, fy, rhs, gap, budget,
                          gap >= -budget, budget > abs(gap))


def write_table_csv(table: KernelTable, model: ModelSpec, path) -> None:
    """Header (alpha, beta, b, L, dx, tau, M, K), then cell centers, then dense density rows."""
    k = model.kappa
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "beta", "b", "L", "dx", "tau", "M", "K"])
        w.writerow([repr(model.alpha), repr(model.psi.beta1), repr(k.b if k.kind == "power" else float("nan")),
                    repr(table.grid.L), repr(table.grid.dx), repr(table.tau), repr(table.cap), table.series_terms])
        w.writerow([repr(float(v)) for v in table.grid.centers])
        for row in table.density:
            w.writerow([repr(float(v)) for v in row])


def read_table_csv(path) -> tuple[dict, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head = dict(zip(rows[0], (float(v) for v in rows[1])))
    centers = np.array([float(v) for v in rows[2]])
    dens = np.array([[float(v) for v in r] for r in rows[3:]])
    return head, centers, dens
