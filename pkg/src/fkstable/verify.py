"""Fit comparison constants of two-sided estimates and write auditable reports.

A fit compares an estimator (Monte Carlo, the d=1 oracle, or an envelope)
with lower and upper envelope shapes. The estimate's admissible band is
``estimate ± (band·stderr + budget)``; a point constrains the upper
constant through (estimate - half)₊/upper and the lower constant through
lower/(estimate + half). Fitted constants are the maxima of those emitted
per-point ratios, so every summary row can be recomputed from the CSV.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .core_model import CRITICAL, RECURRENT, ConfigError, DomainError, ModelSpec, constants_for, psi_eval
from .envelopes import (dirichlet_factor, f_factor, h_factor, large_time_envelope, small_time_envelope, wtq_r,
                        green_envelope)
from .montecarlo import _mean_se, default_bandwidth, derive_seed, estimate_exit, kde_at, run_walk

DEFAULT_CEILING = 1e4
BAND = 3.0


@dataclass(frozen=True)
class SweepSpec:
    """Points of a sweep: rows of (t, x, y); unused coordinates are NaN, extras go to ``aux``."""

    check_id: str
    points: np.ndarray
    model: ModelSpec | None = None
    estimator: str = "envelope"
    aux: tuple[dict, ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ConfigError(f"{self.check_id}: sweep grid is empty")
        if self.estimator not in ("MC", "oracle", "envelope"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        object.__setattr__(self, "points", pts)
        if self.aux and len(self.aux) != pts.shape[0]:
            raise ConfigError("aux must have one entry per point")

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class Estimates:
    value: np.ndarray
    stderr: np.ndarray
    budget: np.ndarray | None = None
    flagged: np.ndarray | None = None


@dataclass(frozen=True)
class PointRow:
    t: float
    x: float
    y: float
    estimate: float
    stderr: float
    lower_env: float
    upper_env: float
    ratio_lo: float
    ratio_hi: float
    aux: dict = field(default_factory=dict)


@dataclass
class FitReport:
    check_id: str
    model_hash: str
    fitted_C_lower: float
    fitted_C_upper: float
    ceiling: float
    passed: bool
    rows: list[PointRow]
    worst_point: PointRow | None = None
    excluded: list[int] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def fitted_C(self) -> float:
        vals = [v for v in (self.fitted_C_lower, self.fitted_C_upper) if not math.isnan(v)]
        return max(vals) if vals else math.nan

    @property
    def lower_constant(self) -> float:
        """c in c·lower ≤ estimate, i.e. 1/fitted_C_lower."""
        return 1.0 / self.fitted_C_lower if self.fitted_C_lower > 0 else math.inf


def _arr(v, n):
    return np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()


def _max_or_nan(a):
    return float(np.max(a)) if a.size else math.nan


def fit_from_arrays(check_id: str, model_hash: str, points: np.ndarray, est: Estimates, lower, upper,
                    ceiling: float = DEFAULT_CEILING, band: float = BAND, aux=None, params=None) -> FitReport:
    """Core fit: ``lower``/``upper`` are arrays or None (one-sided)."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    value = _arr(est.value, n)
    se = _arr(est.stderr, n)
    budget = _arr(0.0 if est.budget is None else est.budget, n)
    flagged = np.zeros(n, bool) if est.flagged is None else np.broadcast_to(est.flagged, (n,))
    lo = None if lower is None else _arr(lower, n)
    up = None if upper is None else _arr(upper, n)
    half = band * se + budget
    bad = ~np.isfinite(value)
    for env in (lo, up):
        if env is not None:
            bad |= ~np.isfinite(env) | (env <= 0)
    keep = ~bad
    with np.errstate(divide="ignore", invalid="ignore"):
        r_hi = np.full(n, np.nan) if up is None else np.maximum(value - half, 0.0) / up
        den = value + half
        r_lo = (np.full(n, np.nan) if lo is None
                else np.where(den > 0, lo / np.where(den > 0, den, 1.0), np.inf))
    r_hi = np.where(keep, r_hi, np.nan)
    r_lo = np.where(keep, r_lo, np.nan)
    c_up = _max_or_nan(r_hi[keep]) if up is not None else math.nan
    c_lo = _max_or_nan(r_lo[keep]) if lo is not None else math.nan
    aux = aux or [{}] * n
    rows = []
    for i in range(n):
        extra = dict(aux[i])
        if budget[i]:
            extra["budget"] = float(budget[i])
        if flagged[i]:
            extra["flagged"] = True
        rows.append(PointRow(float(pts[i, 0]), float(pts[i, 1]), float(pts[i, 2]), float(value[i]), float(se[i]),
                             math.nan if lo is None else float(lo[i]), math.nan if up is None else float(up[i]),
                             float(r_lo[i]), float(r_hi[i]), extra))
    score = np.fmax(np.nan_to_num(r_hi, nan=-np.inf), np.nan_to_num(r_lo, nan=-np.inf))
    worst = rows[int(np.argmax(score))] if np.any(keep) else None
    consts = [c for c in (c_lo, c_up) if not math.isnan(c)]
    passed = bool(np.any(keep)) and bool(consts) and all(math.isfinite(c) and c <= ceiling for c in consts)
    return FitReport(check_id, model_hash, c_lo, c_up, float(ceiling), passed, rows, worst,
                     [int(i) for i in np.flatnonzero(bad)], dict(params or {}))


def _call(f, pts):
    return None if f is None else np.asarray(f(pts), dtype=float)


def _as_estimates(res) -> Estimates:
    if isinstance(res, Estimates):
        return res
    if isinstance(res, tuple):
        return Estimates(*[None if v is None else np.asarray(v, dtype=float) for v in res])
    v = np.asarray(res, dtype=float)
    return Estimates(v, np.zeros_like(v))


def sandwich_fit(sweep: SweepSpec, lower: Callable | None, upper: Callable | None, estimator: Callable,
                 ceiling: float = DEFAULT_CEILING, band: float = BAND) -> FitReport:
    """Smallest C with lower/C ≤ estimate ≤ C·upper over the sweep (band-adjusted).

    ``lower``, ``upper`` and ``estimator`` map the (n, 3) point array to
    arrays; the estimator may return ``Estimates`` or ``(value, stderr[, budget])``.
    """
    est = _as_estimates(estimator(sweep.points))
    mh = sweep.model.hash() if sweep.model is not None else ""
    return fit_from_arrays(sweep.check_id, mh, sweep.points, est, _call(lower, sweep.points),
                           _call(upper, sweep.points), ceiling, band, list(sweep.aux) or None,
                           {"estimator": sweep.estimator})


def fit_lambda(sweep: SweepSpec, envelope: Callable, est: Estimates, lam_grid=None,
               ceiling: float = DEFAULT_CEILING, band: float = BAND, refine: int = 30) -> FitReport:
    """Two-sided fit with one shared λ in ``envelope(points, lam)`` minimizing the constant.

    A log grid is scanned first, then the best bracket is refined by golden
    section on log λ (C(λ) is a max of monotone functions, hence unimodal).
    """
    lam_grid = np.logspace(-2, 2, 41) if lam_grid is None else np.asarray(lam_grid, dtype=float)
    mh = sweep.model.hash() if sweep.model is not None else ""
    lo_b, hi_b = float(np.min(lam_grid)), float(np.max(lam_grid))

    def fit(lam):
        env = np.asarray(envelope(sweep.points, lam), dtype=float)
        return fit_from_arrays(sweep.check_id, mh, sweep.points, est, env, env, ceiling, band,
                               list(sweep.aux) or None, {"estimator": sweep.estimator, "lambda": float(lam)})

    scores = [fit(l).fitted_C for l in lam_grid]
    k = int(np.nanargmin(scores))
    a = math.log(lam_grid[max(k - 1, 0)])
    b = math.log(lam_grid[min(k + 1, len(lam_grid) - 1)])
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fit(math.exp(c)).fitted_C, fit(math.exp(d)).fitted_C
    for _ in range(refine):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fit(math.exp(c)).fitted_C
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fit(math.exp(d)).fitted_C
    cands = [(scores[k], lam_grid[k]), (fc, math.exp(c)), (fd, math.exp(d))]
    best = min(cands, key=lambda p: p[0])[1]
    rep = fit(float(min(max(best, lo_b), hi_b)))
    rep.params["lambda_range"] = (lo_b, hi_b)
    return rep


# ---------------------------------------------------------------- 3P inequality

def three_p_ratio(d: int, alpha: float, t, s, x, y, z):
    """q̃(t-s,x,z)q̃(s,z,y) / (q̃(t,x,y)[q̃(t-s,x,z) + q̃(s,y,z)])."""
    t, s = np.asarray(t, dtype=float), np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= t):
        raise DomainError("need 0 < s < t")

    def r(a, b):
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return np.abs(diff) if d == 1 else np.sqrt(np.sum(diff * diff, axis=-1))

    a = np.asarray(wtq_r(d, alpha, t - s, r(x, z)))
    b = np.asarray(wtq_r(d, alpha, s, r(z, y)))
    return a * b / (np.asarray(wtq_r(d, alpha, t, r(x, y))) * (a + np.asarray(wtq_r(d, alpha, s, r(y, z)))))


def three_p_sweep(alpha: float, n: int, seed: int, spread: float = 4.0) -> np.ndarray:
    """Random (t, s, x, y, z) in d = 1: t log-uniform on [1e-2, 1e2], s/t uniform,
    positions uniform on [-spread, spread]·t^{1/α}. Prefixes of one stream, so sweeps nest."""
    rng = np.random.default_rng(seed)
    u = rng.random((n, 5))
    t = 10.0 ** (4.0 * u[:, 0] - 2.0)
    s = t * np.clip(u[:, 1], 1e-12, 1 - 1e-12)
    scale = t ** (1.0 / alpha)
    pos = (2.0 * u[:, 2:] - 1.0) * spread * scale[:, None]
    return np.column_stack([t, s, pos])


def three_p_check(d: int, alpha: float, points, check_id: str = "three-p",
                  ceiling: float = DEFAULT_CEILING) -> FitReport:
    """Upper fit of q̃q̃/q̃ against q̃(t-s,x,z)+q̃(s,y,z); fitted C is the max ratio."""
    pts = np.asarray(points, dtype=float)
    if d != 1:
        raise DomainError("the tabular sweep is one-dimensional")
    t, s, x, y, z = pts.T
    a = np.asarray(wtq_r(d, alpha, t - s, np.abs(x - z)))
    b = np.asarray(wtq_r(d, alpha, s, np.abs(z - y)))
    lhs = a * b / np.asarray(wtq_r(d, alpha, t, np.abs(x - y)))
    rhs = a + np.asarray(wtq_r(d, alpha, s, np.abs(y - z)))
    aux = [{"s": float(si), "z": float(zi)} for si, zi in zip(s, z)]
    return fit_from_arrays(check_id, f"d={d},alpha={alpha!r}", np.column_stack([t, x, y]),
                           Estimates(lhs, np.zeros_like(lhs)), None, rhs, ceiling, aux=aux,
                           params={"alpha": alpha, "n": len(pts)})


def three_p_saturation(alpha: float, sizes: Sequence[int] = (2500, 5000, 10000), seed: int = 0) -> list[float]:
    """Fitted constants on nested random sweeps of increasing size."""
    pts = three_p_sweep(alpha, max(sizes), seed)
    return [float(np.max(three_p_ratio(1, alpha, *pts[:n].T))) for n in sizes]


# ---------------------------------------------------------------- one-step integral

@dataclass(frozen=True)
class OneStepValue:
    value: float
    error: float
    R: float
    t: float


def _exterior_factor(model: ModelSpec, R: float, s, w):
    if model.regime == RECURRENT:
        return np.asarray(h_factor(model, R, s, w).value)
    if model.regime == CRITICAL:
        return np.asarray(f_factor(model, R, s, w).value)
    return np.asarray(dirichlet_factor(model, "exterior", 0.0, R, s, w).value)


def _z_nodes(R, centers, widths, zmax, order):
    """GL nodes on |z| > R with edges graded geometrically away from every kink."""
    k = 2.0 ** np.arange(-30, 60)
    xg, wg = np.polynomial.legendre.leggauss(order)
    zs, ws = [], []
    for sign in (1.0, -1.0):
        # in the coordinate u = sign·z > R, a kink at z = c ± w sits at u = sign·c ± w
        e = [R * (1.0 + 2.0 ** -np.arange(0, 45)), R * 2.0 ** np.arange(1, 60), [R, zmax]]
        for c in [sign * c for c in centers] + [R]:
            for w in widths:
                e += [c + w * k, c - w * k, [c]]
        edges = np.unique(np.concatenate([np.ravel(a) for a in e]))
        edges = edges[(edges > R * (1 + 1e-14)) & (edges <= zmax)]
        edges = np.concatenate([[R], edges])
        edges = edges[np.concatenate([[True], np.diff(edges) > 1e-13 * edges[1:]])]
        lo, hi = edges[:-1], edges[1:]
        mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
        zs.append(sign * (mid[:, None] + rad[:, None] * xg[None, :]).ravel())
        ws.append((rad[:, None] * wg[None, :]).ravel())
    return np.concatenate(zs), np.concatenate(ws)


def one_step_integral(model: ModelSpec, R: float, t: float, x: float, y: float, *, s_max: float | None = None,
                      order: int = 12, epsrel: float = 1e-9) -> OneStepValue:
    """∫₀ᵗ∫_{|z|>R} Q(s,x,z)Q(t-s,z,y)/Q(t,x,y) · Λ/ψ(|z|) dz ds in d = 1.

    Q(s,a,b) = F(s,a)F(s,b)q̃(s,a,b) is the exterior Dirichlet envelope with
    the regime's boundary factor F (h_R, f_R, or the transient exterior
    factor). ``s_max`` truncates the time integral to (0, s_max].
    """
    if model.d != 1:
        raise DomainError("one_step_integral is implemented for d = 1")
    a = model.alpha
    if R < 1:
        raise DomainError("need R >= 1")
    if t < R ** a * (1 - 1e-12):
        raise DomainError("need t >= R^alpha")
    if abs(x) < 2 * R or abs(y) < 2 * R:
        raise DomainError("x and y must lie outside B(0, 2R)")
    lam = model.lam
    F = lambda s, w: _exterior_factor(model, R, s, w)
    den = float(F(t, x) * F(t, y) * wtq_r(1, a, t, abs(x - y)))
    top = t if s_max is None else min(float(s_max), t)
    zmax = 1e9 * max(R, abs(x), abs(y), t ** (1.0 / a))

    def inner(s, order_):
        ws, wt = s ** (1.0 / a), (t - s) ** (1.0 / a)
        z, w = _z_nodes(R, (x, y), (ws, wt, R), zmax, order_)
        az = np.abs(z)
        q1 = F(s, x) * F(s, z) * np.asarray(wtq_r(1, a, s, np.abs(x - z)))
        q2 = F(t - s, z) * F(t - s, y) * np.asarray(wtq_r(1, a, t - s, np.abs(z - y)))
        kap = lam / np.asarray(psi_eval(model.psi, az))
        return float(np.sum(w * q1 * q2 * kap)) / den

    pts = [R ** a, t - R ** a, t / 2]
    for c in (abs(x), abs(y)):
        for off in (c - R, c + R, 2 * c):
            pts += [off ** a, t - off ** a]
    pts = sorted({p for p in pts if 0 < p < top})
    vals = []
    for order_ in (order, 2 * order):
        with warnings.catch_warnings():
            # the order-doubling difference below is the reported error
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            v, err = integrate.quad(lambda s: inner(s, order_), 0.0, top, points=pts or None, limit=400,
                                    epsrel=epsrel, epsabs=0.0)
        vals.append((v, err))
    value = vals[1][0]
    error = abs(vals[1][0] - vals[0][0]) + vals[1][1]
    return OneStepValue(value, error, float(R), float(t))


def decay_slope(values: Sequence[OneStepValue]) -> float:
    """Least-squares slope of log value against log R."""
    lr = np.log([v.R for v in values])
    lv = np.log([v.value for v in values])
    return float(np.polyfit(lr, lv, 1)[0])


# ---------------------------------------------------------------- survival and exit bounds

SURVIVAL_CHECKS = ("survival-time", "survival-exit", "exit-time-upper", "stay-lower", "exit-time-lower",
                   "free-exit", "exit-before-time")


@dataclass(frozen=True)
class SurvivalSweeps:
    """Grids and Monte Carlo budgets for :func:`survival_bound_suite`.

    Radii given as fractions are relative to the check's natural scale
    (ε₀R for the barrier-ball checks, r for the exit-before-time check).
    """

    n: int = 4000
    steps: int = 40
    enabled: tuple[str, ...] = SURVIVAL_CHECKS
    survival_t: tuple[float, ...] = (0.01, 0.1, 1.0)
    survival_x: tuple[float, ...] = (0.003, 0.03, 0.3, 1.0, 2.0)
    barrier_R: tuple[float, ...] = (1.0, 0.1, 0.01)
    barrier_frac: tuple[float, ...] = (0.1, 0.3, 0.6, 0.9)
    ball_x: tuple[float, ...] = (0.05, 0.1, 0.2, 0.5, 1.0)
    free_R: tuple[float, ...] = (0.1, 0.5, 2.0)
    free_t: tuple[float, ...] = (0.001, 0.01, 0.1, 1.0)
    ep_r_frac: tuple[float, ...] = (1.0, 0.1)
    ep_x_frac: tuple[float, ...] = (0.2, 0.6)
    ep_t: tuple[float, ...] = (0.01, 1.0)

    def __post_init__(self):
        unknown = set(self.enabled) - set(SURVIVAL_CHECKS)
        if unknown:
            raise ConfigError(f"unknown survival checks {sorted(unknown)}")


def _psi(model, r):
    return float(psi_eval(model.psi, r))


def _survival_time(model, sw, seed, threads, ceiling):
    half = model.with_kappa(model.kappa.scaled(0.5))
    pts, vals, ses, flags = [], [], [], []
    k = 0
    for t in sw.survival_t:
        if not 0 < t <= 1:
            raise DomainError("survival-time sweep needs t in (0, 1]")
        for x in sw.survival_x:
            dt = min(t, _psi(model, x)) / sw.steps
            res = run_walk(half, _point(model, x), t, dt, sw.n, derive_seed(seed, k), threads=threads)
            m, se = _mean_se(res.weight)
            pts.append((t, x, math.nan))
            vals.append(m)
            ses.append(se)
            flags.append(np.count_nonzero(res.weight > 1e-3) < 20)
            k += 1
    pts = np.array(pts)
    env = np.minimum(1.0, np.array([_psi(model, p[1]) for p in pts]) / pts[:, 0])
    return fit_from_arrays("survival-time", model.hash(), pts, Estimates(np.array(vals), np.array(ses),
                           flagged=np.array(flags)), env, env, ceiling)


def _point(model, r):
    p = np.zeros(model.d)
    p[0] = r
    return p


def _barrier_ball(model, sw, seed, threads, ceiling, mode):
    """Exit-rate (survival-exit) or mean exit time (exit-time-upper) from B(0, ε₀R) under κ/2.

    The Monte Carlo horizon is finite; the residual is bounded from above
    (surviving mass times 1, or times the largest mean lifetime inside the ball).
    """
    half = model.with_kappa(model.kappa.scaled(0.5))
    eps0 = constants_for(model).eps0
    lam = model.lam
    pts, vals, ses, flags, aux = [], [], [], [], []
    k = 0
    for R in sw.barrier_R:
        if not 0 < R <= 1:
            raise DomainError("barrier-ball sweeps need R in (0, 1]")
        rad = eps0 * R
        life = 2.0 * lam * _psi(model, rad)
        for f in sw.barrier_frac:
            x = f * rad
            dt = _psi(model, x) / sw.steps
            t_max = 30.0 * life
            est = estimate_exit(half, _point(model, x), np.zeros(model.d), rad, t_max, sw.n, dt,
                                derive_seed(seed, k), mode="exit-rate" if mode == "survival-exit" else
                                "mean-exit-time", threads=threads)
            resid = est.extra["residual_mass"]
            vals.append(est.mean + (resid if mode == "survival-exit" else resid * life))
            ses.append(est.stderr)
            flags.append(est.flagged)
            pts.append((math.nan, x, math.nan))
            aux.append({"R": R, "radius": rad, "residual": resid})
            k += 1
    pts = np.array(pts)
    px = np.array([_psi(model, p[1]) for p in pts])
    if mode == "survival-exit":
        env = px / np.array([_psi(model, a["R"]) for a in aux])
    else:
        env = px
    return fit_from_arrays(mode, model.hash(), pts, Estimates(np.array(vals), np.array(ses),
                           flagged=np.array(flags)), None, env, ceiling, aux=aux)


def _ball_lower(model, sw, seed, threads, ceiling, mode):
    """Stay probability / mean exit time of B(x, |x|/2) for the killed process, fitted from below."""
    pts, vals, ses, flags = [], [], [], []
    for k, x in enumerate(sw.ball_x):
        if not 0 < x <= 1:
            raise DomainError("ball sweeps need 0 < |x| <= 1")
        scale = _psi(model, x / 2)
        dt = scale / sw.steps
        t_max = scale if mode == "stay-lower" else 4.0 * scale
        est = estimate_exit(model, _point(model, x), _point(model, x), x / 2, t_max, sw.n, dt,
                            derive_seed(seed, k), mode="stay-prob" if mode == "stay-lower" else "mean-exit-time",
                            threads=threads)
        pts.append((t_max, x, math.nan))
        vals.append(est.mean)
        ses.append(est.stderr)
        flags.append(False)
    pts = np.array(pts)
    env = np.ones(len(pts)) if mode == "stay-lower" else np.array([_psi(model, p[1] / 2) for p in pts])
    return fit_from_arrays(mode, model.hash(), pts, Estimates(np.array(vals), np.array(ses),
                           flagged=np.array(flags)), env, None, ceiling)


def _free_exit(model, sw, seed, threads, ceiling):
    pts, vals, ses, aux = [], [], [], []
    k = 0
    x0 = _point(model, 1.0)
    for R in sw.free_R:
        for t in sw.free_t:
            dt = t / (5 * sw.steps)
            est = estimate_exit(model, x0, x0, R, t, sw.n, dt, derive_seed(seed, k), mode="exit-prob",
                                kappa_free=True, threads=threads)
            pts.append((t, 1.0, math.nan))
            aux.append({"R": R})
            vals.append(est.mean)
            ses.append(est.stderr)
            k += 1
    pts = np.array(pts)
    env = pts[:, 0] * np.array([a["R"] for a in aux]) ** (-model.alpha)
    return fit_from_arrays("free-exit", model.hash(), pts, Estimates(np.array(vals), np.array(ses)), None, env,
                           ceiling, aux=aux)


def _exit_before_time(model, sw, seed, threads, ceiling):
    half = model.with_kappa(model.kappa.scaled(0.5))
    eps0 = constants_for(model).eps0
    pts, vals, ses, aux, flags = [], [], [], [], []
    k = 0
    for rf in sw.ep_r_frac:
        r = rf * eps0
        for xf in sw.ep_x_frac:
            x = xf * r
            for t in sw.ep_t:
                dt = min(t, _psi(model, x)) / sw.steps
                est = estimate_exit(half, _point(model, x), np.zeros(model.d), 3 * r, t, sw.n, dt,
                                    derive_seed(seed, k), mode="exit-rate", threads=threads)
                pts.append((t, x, math.nan))
                aux.append({"r": r})
                vals.append(est.mean)
                ses.append(est.stderr)
                flags.append(est.flagged)
                k += 1
    pts = np.array(pts)
    rr = np.array([a["r"] for a in aux])
    env = (np.array([_psi(model, p[1]) for p in pts]) * rr ** (-model.alpha)
           * np.maximum(1.0, pts[:, 0] / np.array([_psi(model, v) for v in rr])))
    return fit_from_arrays("exit-before-time", model.hash(), pts, Estimates(np.array(vals), np.array(ses),
                           flagged=np.array(flags)), None, env, ceiling, aux=aux)


def survival_bound_suite(model: ModelSpec, sweeps: SurvivalSweeps = SurvivalSweeps(), seed: int = 0,
                         threads: int = 1, ceiling: float = DEFAULT_CEILING) -> list[FitReport]:
    """One FitReport per enabled survival/exit bound, in canonical order.

    survival-time     P_x(ζ^{κ/2} > t) against 1 ∧ ψ(|x|)/t (two-sided)
    survival-exit     P_x(X^{κ/2} leaves B(0,ε₀R) alive) against ψ(|x|)/ψ(R)
    exit-time-upper   E_x τ^{κ/2}_{B(0,ε₀R)} against ψ(|x|)
    stay-lower        P_x(τ^κ_{B(x,|x|/2)} ≥ ψ(|x|/2)) from below by a constant
    exit-time-lower   E_x τ^κ_{B(x,|x|/2)} from below by ψ(|x|/2)
    free-exit         P_x(τ^Y_{B(x,R)} ≤ t) against tR^{-α}, no killing
    exit-before-time  P_x(τ^{κ/2}_{B(0,3r)} < t ∧ ζ) against ψ(|x|)r^{-α}(1 ∨ t/ψ(r))
    """
    out = []
    for j, cid in enumerate(SURVIVAL_CHECKS):
        if cid not in sweeps.enabled:
            continue
        s = derive_seed(seed, 1000 + j)
        if cid == "survival-time":
            out.append(_survival_time(model, sweeps, s, threads, ceiling))
        elif cid in ("survival-exit", "exit-time-upper"):
            out.append(_barrier_ball(model, sweeps, s, threads, ceiling, cid))
        elif cid in ("stay-lower", "exit-time-lower"):
            out.append(_ball_lower(model, sweeps, s, threads, ceiling, cid))
        elif cid == "free-exit":
            out.append(_free_exit(model, sweeps, s, threads, ceiling))
        else:
            out.append(_exit_before_time(model, sweeps, s, threads, ceiling))
    return out


# ---------------------------------------------------------------- kernel sweeps

def mc_kernel_rows(model: ModelSpec, t: float, x, ys, n: int, dt: float, seed: int, h: float | None,
                   threads: int = 1) -> Estimates:
    """KDE estimates of p^κ(t, x, y) at several y from one set of paths.

    The budget column is the Richardson bias estimate |KDE(2h) - KDE(h)|/3.
    ``h=None`` picks the robust default bandwidth from the endpoints.
    """
    res = run_walk(model, _as_vec(model, x), t, dt, n, seed, threads=threads)
    w = res.weight
    if h is None:
        h = default_bandwidth(res.end_pos)
    vals, ses, bias = [], [], []
    for y in ys:
        yp = _as_vec(model, y)
        m, se = kde_at(res.end_pos, w, yp, h)
        m2, _ = kde_at(res.end_pos, w, yp, 2 * h)
        vals.append(m)
        ses.append(se)
        bias.append(abs(m2 - m) / 3.0)
    return Estimates(np.array(vals), np.array(ses), np.array(bias))


def _as_vec(model, x):
    p = np.atleast_1d(np.asarray(x, dtype=float))
    return p if p.shape == (model.d,) else _point(model, float(p[0]))


def small_time_sweep(oracle, t_grid, x_grid, y_grid, lam_grid=None, ceiling: float = DEFAULT_CEILING,
                     T: float = 1.0) -> FitReport:
    """Oracle-based two-sided small-time fit with λ₁ = λ₂ chosen to minimize C."""
    model = oracle.model
    ts = np.unique(oracle.snap(t_grid))
    X, Y = np.meshgrid(np.asarray(x_grid, float), np.asarray(y_grid, float), indexing="ij")
    pts, vals, bud = [], [], []
    for t in ts:
        ov = oracle.value(float(t), X, Y)
        pts.append(np.column_stack([np.full(X.size, t), X.ravel(), Y.ravel()]))
        vals.append(np.ravel(ov.value))
        bud.append(np.ravel(ov.budget))
    pts = np.vstack(pts)
    est = Estimates(np.concatenate(vals), np.zeros(len(pts)), np.concatenate(bud))
    sweep = SweepSpec("small-time-sandwich", pts, model, "oracle")
    env = lambda p, lam: small_time_envelope(model, p[:, 0], p[:, 1], p[:, 2], "upper", lam, T).value
    return fit_lambda(sweep, env, est, lam_grid, ceiling)


def large_time_sweep(model: ModelSpec, t_grid, x_grid, y_grid, n: int, dt: float, h: float, seed: int,
                     threads: int = 1, ceiling: float = DEFAULT_CEILING) -> FitReport:
    """Monte Carlo two-sided fit of the large-time envelope, one path set per (t, x)."""
    pts, vals, ses, bud = [], [], [], []
    k = 0
    for t in t_grid:
        for x in x_grid:
            est = mc_kernel_rows(model, float(t), x, y_grid, n, dt, derive_seed(seed, k), h, threads)
            k += 1
            for y, v, s, b in zip(y_grid, est.value, est.stderr, est.budget):
                pts.append((t, x, y))
                vals.append(v)
                ses.append(s)
                bud.append(b)
    pts = np.array(pts, dtype=float)
    env = large_time_envelope(model, pts[:, 0], pts[:, 1], pts[:, 2]).value
    return fit_from_arrays("large-time-sandwich", model.hash(), pts,
                           Estimates(np.array(vals), np.array(ses), np.array(bud)), env, env, ceiling,
                           params={"n": n, "dt": dt, "h": h})


@dataclass(frozen=True)
class AgreementRow:
    t: float
    x: float
    y: float
    mc: float
    mc_stderr: float
    oracle: float
    oracle_budget: float
    agrees: bool


def compare_oracle_mc(oracle, triples, n: int, dt: float, h: float, seed: int, threads: int = 1,
                      band: float = BAND) -> list[AgreementRow]:
    """MC kernel density estimates against the oracle smoothed with the same kernel and bandwidth.

    Comparing like with like removes the KDE smoothing bias from the test;
    a point agrees when |oracle - MC| ≤ band·stderr + oracle budget.
    Triples sharing (t, x) share one path set; t is snapped to the oracle step.
    """
    model = oracle.model
    trip = [(float(oracle.snap(t)), float(x), float(y)) for t, x, y in triples]
    groups: dict[tuple, list[int]] = {}
    for i, (t, x, _) in enumerate(trip):
        groups.setdefault((t, x), []).append(i)
    rows: list[AgreementRow | None] = [None] * len(trip)
    for k, ((t, x), idx) in enumerate(sorted(groups.items())):
        ys = [trip[i][2] for i in idx]
        est = mc_kernel_rows(model, t, x, ys, n, dt, derive_seed(seed, k), h, threads)
        for j, i in enumerate(idx):
            ov = oracle.smoothed(t, x, ys[j], h)
            v, se = float(est.value[j]), float(est.stderr[j])
            ok = abs(float(ov.value) - v) <= band * se + float(ov.budget)
            rows[i] = AgreementRow(t, x, ys[j], v, se, float(ov.value), float(ov.budget), ok)
    return rows


@dataclass(frozen=True)
class GreenValue:
    value: np.ndarray
    budget: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    tail_constant: np.ndarray


def green_from_oracle(oracle, x, y, t_end: float = 50.0) -> GreenValue:
    """∫₀^∞ p^κ(t,x,y) dt: oracle time quadrature on (0, t_end] plus an envelope tail.

    The tail is c·∫_{t_end}^∞ env(t) dt with c = p(t_end)/env(t_end) pointwise;
    its uncertainty is |c(t_end) - c(t_end/2)|·∫ env.
    """
    model = oracle.model
    head = oracle.green(t_end, x, y)
    X, Y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    p_end = np.asarray(oracle.value(t_end, X, Y).value)
    p_mid = np.asarray(oracle.value(t_end / 2, X, Y).value)
    env = lambda t: np.asarray(large_time_envelope(model, t, X, Y).value)
    c_end = p_end / env(t_end)
    c_mid = p_mid / env(t_end / 2)
    integral = np.empty(X.shape)
    for idx in np.ndindex(X.shape):
        f = lambda t: float(large_time_envelope(model, t, X[idx], Y[idx]).value)
        integral[idx] = integrate.quad(f, t_end, np.inf, limit=200)[0]
    tail = c_end * integral
    budget = np.asarray(head.budget) + np.abs(c_end - c_mid) * integral
    return GreenValue(np.asarray(head.value) + tail, budget, np.asarray(head.value), tail, c_end)


def green_sweep(oracle, x_grid, y_grid, t_end: float = 50.0, ceiling: float = DEFAULT_CEILING) -> FitReport:
    """Two-sided fit of the Green envelope against the oracle Green function; diagonal points are excluded."""
    model = oracle.model
    X, Y = np.meshgrid(np.asarray(x_grid, float), np.asarray(y_grid, float), indexing="ij")
    g = green_from_oracle(oracle, X, Y, t_end)
    pts = np.column_stack([np.full(X.size, np.nan), X.ravel(), Y.ravel()])
    env = np.asarray(green_envelope(model, X.ravel(), Y.ravel()).value)
    aux = [{"tail": float(tl)} for tl in g.tail.ravel()]
    return fit_from_arrays("green-sandwich", model.hash(), pts,
                           Estimates(g.value.ravel(), np.zeros(X.size), g.budget.ravel()), env, env, ceiling,
                           aux=aux, params={"t_end": t_end})


# ---------------------------------------------------------------- CSV reports

REPORT_COLUMNS = ("row", "check_id", "model_hash", "fitted_C_lower", "fitted_C_upper", "pass", "ceiling",
                  "t", "x", "y", "estimate", "stderr", "lower_env", "upper_env", "ratio_lo", "ratio_hi", "aux")


def _f(v) -> str:
    return repr(float(v))


def emit_report(reports: Sequence[FitReport], path, meta: dict | None = None) -> None:
    """Write summary and point rows; ``meta`` becomes leading ``# key=value`` lines."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for k in sorted(meta or {}):
            fh.write(f"# {k}={meta[k]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rep in reports:
            w.writerow(["summary", rep.check_id, rep.model_hash, _f(rep.fitted_C_lower), _f(rep.fitted_C_upper),
                        int(rep.passed), _f(rep.ceiling)] + [""] * 9
                       + [json.dumps(rep.params, sort_keys=True, default=str)])
            for r in rep.rows:
                w.writerow(["point", rep.check_id, rep.model_hash, "", "", "", "", _f(r.t), _f(r.x), _f(r.y),
                            _f(r.estimate), _f(r.stderr), _f(r.lower_env), _f(r.upper_env), _f(r.ratio_lo),
                            _f(r.ratio_hi), json.dumps(r.aux, sort_keys=True)])


def parse_report(path) -> tuple[list[FitReport], dict]:
    """Inverse of :func:`emit_report`: reports (with points) and the metadata lines."""
    meta, reports = {}, []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = []
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition("=")
                meta[k] = v
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    if not rows or tuple(rows[0]) != REPORT_COLUMNS:
        raise ValueError("not a report file")
    for r in rows[1:]:
        rec = dict(zip(REPORT_COLUMNS, r))
        if rec["row"] == "summary":
            reports.append(FitReport(rec["check_id"], rec["model_hash"], float(rec["fitted_C_lower"]),
                                     float(rec["fitted_C_upper"]), float(rec["ceiling"]), rec["pass"] == "1", [],
                                     params=json.loads(rec["aux"])))
        else:
            reports[-1].rows.append(PointRow(*(float(rec[k]) for k in REPORT_COLUMNS[7:16]),
                                             json.loads(rec["aux"])))
    return reports, meta


def audit(report: FitReport) -> bool:
    """Fitted constants equal the max of the per-point ratios (NaN-aware)."""
    hi = np.array([r.ratio_hi for r in report.rows])
    lo = np.array([r.ratio_lo for r in report.rows])

    def same(c, arr):
        arr = arr[~np.isnan(arr)]
        if math.isnan(c):
            return arr.size == 0
        return arr.size > 0 and float(np.max(arr)) == c

    return same(report.fitted_C_upper, hi) and same(report.fitted_C_lower, lo)
