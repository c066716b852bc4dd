"""Monte Carlo Feynman-Kac estimators for the killed isotropic stable process.

Every estimator is a deterministic function of its arguments and ``seed``:
replicate ``i`` always draws from the Philox stream ``(seed, stream, i)``,
and reductions run over the full per-replicate arrays in index order, so the
number of worker threads never changes a result.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from ._backend import active_backend
from .core_model import DomainError, ModelSpec, stable_constant
from .philox import seed_key

DEFAULT_KILL_STOP = 40.0
CAP_FACTOR = 10.0
UNRESOLVED_WEIGHT = 1e-3


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int
    seed_root: int
    flagged: bool = False
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class PathSample:
    times: np.ndarray
    positions: np.ndarray
    kill_integral: np.ndarray
    weight: float
    status: str


@dataclass
class WalkResult:
    end_pos: np.ndarray
    logw: np.ndarray
    exit_step: np.ndarray
    exit_pos: np.ndarray
    logw_exit: np.ndarray
    occ: np.ndarray
    comp: np.ndarray
    count: np.ndarray
    status: np.ndarray
    dt: float
    nsteps: int

    @property
    def weight(self) -> np.ndarray:
        return np.exp(-self.logw)

    @property
    def exited(self) -> np.ndarray:
        return self.exit_step >= 0


def derive_seed(seed: int, index: int) -> int:
    """SplitMix64 mix of (seed, index): independent child seeds for sub-runs."""
    z = (seed_key(seed) + 0x9E3779B97F4A7C15 * (index + 1)) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _as_point(model: ModelSpec, x) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if p.shape != (model.d,):
        raise DomainError(f"expected a point in R^{model.d}")
    return p


def _kappa_code(model: ModelSpec, kappa_free: bool):
    kap = model.kappa
    empty = np.zeros(2)
    if kappa_free or kap.is_zero:
        return K.KAPPA_ZERO, 0.0, 0.0, empty, empty
    if kap.kind == "power":
        return K.KAPPA_POWER, kap.b, kap.beta, empty, empty
    if kap.kind == "table":
        return (K.KAPPA_TABLE, 0.0, 0.0, np.log(np.asarray(kap.table_r)),
                np.log(np.asarray(kap.table_kappa)))
    raise DomainError("the path kernels need a power-law or tabulated potential")


def default_method(model: ModelSpec) -> int:
    return K.DIRECT if model.d == 1 else K.SUBORDINATED


def _steps(t: float, dt: float) -> tuple[int, float]:
    if dt <= 0:
        raise DomainError("dt must be positive")
    if t <= 0 or dt > t * (1 + 1e-12):
        raise DomainError("need 0 < dt <= t")
    nsteps = int(math.ceil(t / dt - 1e-9))
    return nsteps, t / nsteps


def run_walk(model: ModelSpec, x0, t: float, dt: float, n: int, seed: int, *, stream: int = 0,
             rep_start: int = 0, center=None, radius: float = math.inf, stop_at_exit: bool = False,
             kill_stop: float = DEFAULT_KILL_STOP, rate: str | None = None, interval=(0.0, 0.0),
             kappa_free: bool = False, method: int | None = None, threads: int = 1) -> WalkResult:
    """Simulate ``n`` killed walks from ``x0`` over [0, t] with step ``dt``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    x0 = _as_point(model, x0)
    if np.all(x0 == 0) and not (kappa_free or model.kappa.is_zero):
        raise DomainError("the killed process lives on R^d minus the origin")
    nsteps, dt = _steps(t, dt)
    d, alpha = model.d, model.alpha
    method = default_method(model) if method is None else method
    kind, b, beta, tab_lr, tab_lk = _kappa_code(model, kappa_free)
    origin_rule = bool(d == 1 and alpha > 1.0 and kind != K.KAPPA_ZERO)
    center = np.zeros(d) if center is None else _as_point(model, center)
    rate_kind = {None: K.RATE_NONE, "ball-exit": K.RATE_BALL_EXIT, "interval": K.RATE_INTERVAL}[rate]
    if rate_kind != K.RATE_NONE and d != 1:
        raise DomainError("jump-rate functionals are implemented for d = 1")
    if rate_kind == K.RATE_BALL_EXIT and not math.isfinite(radius):
        raise DomainError("ball-exit rate needs a finite radius")
    lo, hi = (float(v) for v in interval)
    a_const = stable_constant(d, alpha)
    out = WalkResult(np.empty((n, d)), np.empty(n), np.empty(n, dtype=np.int64), np.full((n, d), np.nan),
                     np.full(n, np.inf), np.empty(n), np.empty(n), np.empty(n), np.empty(n, dtype=np.int8),
                     dt, nsteps)
    if active_backend() == "numba":
        fn = K.walk1d_numba if (d == 1 and method == K.DIRECT) else K.walk_numba
    else:
        fn = K.walk_numpy
    key0, key1 = np.uint64(seed_key(seed)), np.uint64(seed_key(stream))
    fixed = (x0, nsteps, dt, float(alpha), int(method), int(kind), float(b), float(beta), tab_lr, tab_lk,
             CAP_FACTOR / dt, origin_rule, center, float(radius), bool(stop_at_exit), float(kill_stop),
             int(rate_kind), lo, hi, a_const, key0, key1)

    def chunk(lo_i, hi_i):
        fn(*fixed, np.uint64(rep_start + lo_i), hi_i - lo_i, out.end_pos[lo_i:hi_i], out.logw[lo_i:hi_i],
           out.exit_step[lo_i:hi_i], out.exit_pos[lo_i:hi_i], out.logw_exit[lo_i:hi_i], out.occ[lo_i:hi_i],
           out.comp[lo_i:hi_i], out.count[lo_i:hi_i], out.status[lo_i:hi_i])

    threads = max(1, int(threads))
    if threads == 1 or n < 2 * threads:
        chunk(0, n)
    else:
        chunk(0, 0)
        edges = np.linspace(0, n, 4 * threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda k: chunk(edges[k], edges[k + 1]), range(len(edges) - 1)))
    return out


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def sample_stable_increment(model: ModelSpec, dt: float, n: int, seed: int, *, stream: int = 0,
                            method: int | None = None) -> np.ndarray:
    """``n`` draws of dt^{1/α}·Z with Z standard isotropic α-stable, shape (n, d)."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    probe = ModelSpec(model.d, model.alpha, model.psi, model.kappa)
    x0 = np.zeros(model.d)
    x0[0] = 1.0
    res = run_walk(probe, x0, dt, dt, n, seed, stream=stream, kappa_free=True, method=method)
    return res.end_pos - x0


def simulate_path(model: ModelSpec, x0, t: float, dt: float, seed: int, *, replicate: int = 0,
                  stream: int = 0, method: int | None = None) -> PathSample:
    """One full trajectory, identical to replicate ``replicate`` of :func:`run_walk`."""
    x0 = _as_point(model, x0)
    if np.all(x0 == 0):
        raise DomainError("x0 must be nonzero")
    nsteps, dt = _steps(t, dt)
    d, alpha = model.d, model.alpha
    method = default_method(model) if method is None else method
    kind, b, beta, tab_lr, tab_lk = _kappa_code(model, False)
    origin_rule = d == 1 and alpha > 1.0 and kind != K.KAPPA_ZERO
    m = K.uniforms_per_step(d, alpha, method)
    cap = CAP_FACTOR / dt
    h = dt ** (1.0 / alpha)
    reps = np.array([replicate], dtype=np.uint64)
    key0, key1 = np.uint64(seed_key(seed)), np.uint64(seed_key(stream))
    pos = np.empty((nsteps + 1, d))
    kint = np.empty(nsteps + 1)
    pos[0], kint[0] = x0, 0.0
    kap = K._kappa_np(np.array([np.linalg.norm(x0)]), kind, b, beta, tab_lr, tab_lk, cap)[0]
    cache, status, last = {}, "alive", nsteps
    for j in range(nsteps):
        z = K._stable_draw_np(K._fill_np(j * m, m, cache, key0, key1, reps), d, alpha, method)[0]
        pos[j + 1] = pos[j] + h * z
        knew = K._kappa_np(np.array([np.linalg.norm(pos[j + 1])]), kind, b, beta, tab_lr, tab_lk, cap)[0]
        kint[j + 1] = kint[j] + 0.5 * dt * (kap + knew)
        kap = knew
        p0, p1 = pos[j, 0], pos[j + 1, 0]
        if origin_rule and p0 * p1 <= 0.0 and abs(p0) < h and abs(p1) < h:
            kint[j + 1] = np.inf
            status, last = "killed-by-origin-rule", j + 1
            break
    times = np.arange(last + 1) * dt
    return PathSample(times, pos[:last + 1], kint[:last + 1], float(np.exp(-kint[last])), status)


def estimate_survival(model: ModelSpec, x, t: float, n: int, dt: float, seed: int, *,
                      threads: int = 1, stream: int = 0) -> MCEstimate:
    """P_x(ζ^κ > t) as the mean Feynman-Kac weight."""
    res = run_walk(model, x, t, dt, n, seed, stream=stream, threads=threads)
    mean, se = _mean_se(res.weight)
    return MCEstimate(mean, se, n, seed)


def estimate_semigroup(model: ModelSpec, x, t: float, f, n: int, dt: float, seed: int, *,
                       threads: int = 1, stream: int = 0) -> MCEstimate:
    """P^κ_t f(x) = E_x[e^{-∫κ} f(Y_t)]; ``f`` maps an (n, d) array to n values."""
    res = run_walk(model, x, t, dt, n, seed, stream=stream, threads=threads)
    fx = np.asarray(f(res.end_pos), dtype=float).reshape(n)
    mean, se = _mean_se(res.weight * fx)
    return MCEstimate(mean, se, n, seed)


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def epanechnikov(u: np.ndarray, d: int) -> np.ndarray:
    """Radial Epanechnikov kernel on R^d, integrating to one."""
    q = np.sum(np.atleast_2d(u) ** 2, axis=-1) if np.ndim(u) > 1 else np.asarray(u) ** 2
    return np.where(q < 1.0, (d + 2.0) / (2.0 * unit_ball_volume(d)) * (1.0 - q), 0.0)


def default_bandwidth(points: np.ndarray, c: float = 1.0) -> float:
    """h = c·σ̂·n^{-1/(d+4)} with the robust scale σ̂ = IQR/1.349."""
    n, d = points.shape
    q75, q25 = np.percentile(points, [75, 25], axis=0)
    sigma = float(np.mean(q75 - q25)) / 1.349
    return c * sigma * n ** (-1.0 / (d + 4.0))


def kde_at(end_pos: np.ndarray, weight: np.ndarray, y: np.ndarray, h: float) -> tuple[float, float]:
    d = end_pos.shape[1]
    vals = weight * epanechnikov((end_pos - y) / h, d) / h ** d
    return _mean_se(vals)


def estimate_kernel(model: ModelSpec, t: float, x, y, h: float | None, n: int, dt: float, seed: int, *,
                    threads: int = 1, stream: int = 0, bandwidth_c: float = 1.0) -> MCEstimate:
    """Weighted Epanechnikov estimate of p^κ(t, x, y).

    ``extra["bias_budget"]`` is |KDE(2h) - KDE(h)|/3, the Richardson estimate
    of the O(h²) smoothing bias.
    """
    res = run_walk(model, x, t, dt, n, seed, stream=stream, threads=threads)
    y = _as_point(model, y)
    if h is None:
        h = default_bandwidth(res.end_pos, bandwidth_c)
    if h <= 0:
        raise DomainError("bandwidth must be positive")
    mean, se = kde_at(res.end_pos, res.weight, y, h)
    mean2, _ = kde_at(res.end_pos, res.weight, y, 2.0 * h)
    return MCEstimate(mean, se, n, seed, extra={"h": h, "bias_budget": abs(mean2 - mean) / 3.0})


EXIT_MODES = ("exit-prob", "stay-prob", "mean-exit-time", "exit-rate", "exit-position-histogram")


def estimate_exit(model: ModelSpec, x, center, radius: float, t_max: float, n: int, dt: float, seed: int,
                  mode: str = "exit-prob", *, kappa_free: bool = False, bins=None, threads: int = 1,
                  stream: int = 0, kill_stop: float = DEFAULT_KILL_STOP):
    """Exit statistics of the killed (or κ-free) process from the ball B(center, radius).

    Modes:
      exit-prob       P(τ ≤ t_max and the exit happens before death)
      stay-prob       P(τ > t_max and alive at t_max)
      mean-exit-time  E ∫₀^{τ∧t_max} e^{-∫κ} ds, i.e. E[τ^κ] truncated at t_max
      exit-rate       Lévy-system form of exit-prob: E ∫₀^{τ∧t_max} e^{-∫κ} J(Y_s, B^c) ds, d = 1
      exit-position-histogram  weighted histogram of exit positions (returns counts, edges)
    The estimate is flagged when at least half of the paths neither exited
    nor lost their weight (below 1e-3) by t_max.
    """
    if mode not in EXIT_MODES:
        raise DomainError(f"unknown exit mode {mode!r}")
    xp = _as_point(model, x)
    cp = _as_point(model, center)
    if np.linalg.norm(xp - cp) >= radius:
        raise DomainError("x must lie inside the ball")
    res = run_walk(model, xp, t_max, dt, n, seed, stream=stream, center=cp, radius=radius,
                   stop_at_exit=True, rate="ball-exit" if mode == "exit-rate" else None,
                   kappa_free=kappa_free, threads=threads, kill_stop=kill_stop)
    exited = res.exited
    w_end = res.weight
    unresolved = (~exited) & (res.status == K.ALIVE) & (w_end >= UNRESOLVED_WEIGHT)
    frac = float(np.mean(unresolved))
    residual = float(np.mean(np.where(exited, 0.0, w_end)))
    if mode == "exit-position-histogram":
        w = np.where(exited, np.exp(-res.logw_exit), 0.0)
        pts = res.exit_pos[exited]
        counts, edges = np.histogram(pts[:, 0], bins=20 if bins is None else bins, weights=w[exited])
        return counts / n, edges
    if mode == "exit-prob":
        vals = np.where(exited, np.exp(-res.logw_exit), 0.0)
    elif mode == "stay-prob":
        vals = np.where(exited, 0.0, w_end)
    elif mode == "mean-exit-time":
        vals = res.occ
    else:
        vals = res.comp
    mean, se = _mean_se(vals)
    return MCEstimate(mean, se, n, seed, flagged=frac >= 0.5,
                      extra={"unresolved_fraction": frac, "residual_mass": residual})


def ball_exit_rate(model: ModelSpec, y: float, radius: float) -> float:
    """Jump intensity from y out of the interval (-radius, radius), d = 1."""
    a = model.alpha
    return stable_constant(1, a) / a * ((radius - y) ** (-a) + (radius + y) ** (-a))


def levy_system_check(model: ModelSpec, x, t: float, target, n: int, dt: float, seed: int, *,
                      threads: int = 1, stream: int = 0) -> dict:
    """Compare the expected weighted count of jumps into ``target`` = [lo, hi]
    with its compensator ∫₀ᵗ e^{-∫κ} ∫_A A(1,-α)|Y_s - w|^{-1-α} dw ds (d = 1).

    Both sides come from the same paths, so the standard error of their
    difference is reported alongside the ratio.
    """
    lo, hi = (float(v) for v in target)
    if model.d != 1 or not lo < hi:
        raise DomainError("target must be an interval [lo, hi] in d = 1")
    res = run_walk(model, x, t, dt, n, seed, stream=stream, rate="interval", interval=(lo, hi),
                   threads=threads)
    lhs, lhs_se = _mean_se(res.count)
    rhs, rhs_se = _mean_se(res.comp)
    _, diff_se = _mean_se(res.count - res.comp)
    events = int(np.count_nonzero(res.count))
    ratio = lhs / rhs if rhs > 0 else math.nan
    return {"jumps": lhs, "jumps_se": lhs_se, "compensator": rhs, "compensator_se": rhs_se,
            "diff_se": diff_se, "ratio": ratio, "events": events, "flagged": events < 30}
