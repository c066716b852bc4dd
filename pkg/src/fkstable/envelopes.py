"""Closed-form heat-kernel, Green-function and boundary-factor envelopes.

All functions are constant-free shapes: the comparison constants of the
two-sided estimates are fitted downstream. Points are scalars in d=1 or
coordinate vectors (last axis of length d); array inputs broadcast.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core_model import CRITICAL, RECURRENT, TRANSIENT, DomainError, ModelSpec, log_fn, psi_eval, psi_inverse


class Regime(enum.Enum):
    SMALL_UPPER = "SmallUpper"
    SMALL_LOWER = "SmallLower"
    LARGE_TRANSIENT = "LargeTransient"
    LARGE_RECURRENT = "LargeRecurrent"
    LARGE_CRITICAL = "LargeCritical"
    GREEN_TRANSIENT = "GreenTransient"
    GREEN_RECURRENT = "GreenRecurrent"
    GREEN_CRITICAL = "GreenCritical"
    GREEN_SMALL = "GreenSmall"
    GLOBAL_UPPER = "GlobalUpper"
    FREE_KERNEL = "FreeKernel"
    DIRICHLET_BALL = "DirichletBall"
    DIRICHLET_EXTERIOR = "DirichletExterior"


class FactorCase(enum.Enum):
    BALL = "ball"
    EXTERIOR_TRANSIENT = "exterior-transient"
    EXTERIOR_RECURRENT = "exterior-recurrent"
    EXTERIOR_CRITICAL = "exterior-critical"
    H_R = "hR"
    F_R = "fR"


@dataclass(frozen=True)
class EnvelopeValue:
    value: float | np.ndarray
    regime: Regime

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class BoundaryFactor:
    value: float | np.ndarray
    case: FactorCase

    def __float__(self):
        return float(self.value)


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def norm(model: ModelSpec, x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if model.d == 1:
        if a.ndim and a.shape[-1:] == (1,) and a.ndim > 0 and a.size == 1:
            a = a.reshape(())
        return np.abs(a)
    if a.shape[-1] != model.d:
        raise DomainError(f"points must have a trailing axis of length {model.d}")
    return np.sqrt(np.sum(a * a, axis=-1))


def dist(model: ModelSpec, x, y) -> np.ndarray:
    return norm(model, np.asarray(x, dtype=float) - np.asarray(y, dtype=float))


def _wtq_r(d: int, alpha: float, t, r):
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    scale = t ** (1.0 / alpha)
    with np.errstate(divide="ignore", over="ignore"):
        ratio = np.where(r > 0, np.minimum(1.0, scale / np.where(r > 0, r, 1.0)), 1.0)
    return t ** (-d / alpha) * ratio ** (d + alpha)


def wtq(model: ModelSpec, t, x, y):
    """q̃(t,x,y) = t^{-d/α}(1 ∧ t^{1/α}/|x-y|)^{d+α}."""
    if np.any(np.asarray(t) <= 0):
        raise DomainError("t must be positive")
    return _out(_wtq_r(model.d, model.alpha, t, dist(model, x, y)))


def wtq_r(d: int, alpha: float, t, r):
    """q̃ as a function of t and the distance r = |x - y|."""
    return _out(_wtq_r(d, alpha, t, r))


def _nonzero(model, *pts):
    for p in pts:
        if np.any(norm(model, p) == 0):
            raise DomainError("points must avoid the origin")


def _second_term(model: ModelSpec, t, r):
    d, a = model.d, model.alpha
    pinv = np.asarray(psi_inverse(model.psi, t))
    with np.errstate(divide="ignore"):
        ratio = np.where(r > 0, np.minimum(1.0, pinv / np.where(r > 0, r, 1.0)), 1.0)
    return t ** 2 * pinv ** (-(d + 2 * a)) * ratio ** (d + 2 * a)


def small_time_envelope(model: ModelSpec, t, x, y, side: str = "upper", lam: float = 1.0,
                        T: float = 1.0) -> EnvelopeValue:
    """(1∧ψ(|x|)/t)(1∧ψ(|y|)/t)[e^{-λt/ψ(|x|∨|y|)} q̃ + t²ψ⁻¹(t)^{-(d+2α)}(1∧ψ⁻¹(t)/|x-y|)^{d+2α}]."""
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(t > T):
        raise DomainError("small-time envelope needs 0 < t <= T")
    _nonzero(model, x, y)
    nx, ny = norm(model, x), norm(model, y)
    r = dist(model, x, y)
    px, py = np.asarray(psi_eval(model.psi, nx)), np.asarray(psi_eval(model.psi, ny))
    pref = np.minimum(1.0, px / t) * np.minimum(1.0, py / t)
    first = np.exp(-lam * t / np.maximum(px, py)) * _wtq_r(model.d, model.alpha, t, r)
    value = pref * (first + _second_term(model, t, r))
    return EnvelopeValue(_out(value), Regime.SMALL_UPPER if side == "upper" else Regime.SMALL_LOWER)


def small_time_terms(model: ModelSpec, t, x, y):
    """Prefactor, q̃ and the second bracket term separately (λ enters only the first)."""
    nx, ny = norm(model, x), norm(model, y)
    r = dist(model, x, y)
    px, py = np.asarray(psi_eval(model.psi, nx)), np.asarray(psi_eval(model.psi, ny))
    t = np.asarray(t, dtype=float)
    pref = np.minimum(1.0, px / t) * np.minimum(1.0, py / t)
    return pref, t / np.maximum(px, py), _wtq_r(model.d, model.alpha, t, r), _second_term(model, t, r)


def global_upper(model: ModelSpec, t, x, y) -> EnvelopeValue:
    """(1∧ψ(|x|)/(t∧1))(1∧ψ(|y|)/(t∧1)) q̃(t,x,y), valid for all t > 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("t must be positive")
    _nonzero(model, x, y)
    tt = np.minimum(t, 1.0)
    px = np.asarray(psi_eval(model.psi, norm(model, x)))
    py = np.asarray(psi_eval(model.psi, norm(model, y)))
    value = np.minimum(1.0, px / tt) * np.minimum(1.0, py / tt) * _wtq_r(model.d, model.alpha, t, dist(model, x, y))
    return EnvelopeValue(_out(value), Regime.GLOBAL_UPPER)


def large_time_factor(model: ModelSpec, t, x):
    """Per-point factor of the large-time envelope for the model's regime."""
    n = norm(model, x)
    p = np.asarray(psi_eval(model.psi, n))
    a = model.alpha
    if model.regime == TRANSIENT:
        return np.minimum(1.0, p)
    if model.regime == RECURRENT:
        return np.minimum(1.0, np.minimum(p, n ** (a - 1.0)) / np.asarray(t) ** ((a - 1.0) / a))
    return np.minimum(1.0, np.minimum(p, log_fn(n)) / log_fn(np.asarray(t, dtype=float)))


_LARGE = {TRANSIENT: Regime.LARGE_TRANSIENT, RECURRENT: Regime.LARGE_RECURRENT, CRITICAL: Regime.LARGE_CRITICAL}


def large_time_envelope(model: ModelSpec, t, x, y) -> EnvelopeValue:
    t = np.asarray(t, dtype=float)
    if np.any(t < 2):
        raise DomainError("large-time envelope needs t >= 2")
    _nonzero(model, x, y)
    value = (large_time_factor(model, t, x) * large_time_factor(model, t, y)
             * _wtq_r(model.d, model.alpha, t, dist(model, x, y)))
    return EnvelopeValue(_out(value), _LARGE[model.regime])


_GREEN = {TRANSIENT: Regime.GREEN_TRANSIENT, RECURRENT: Regime.GREEN_RECURRENT, CRITICAL: Regime.GREEN_CRITICAL}


def green_envelope(model: ModelSpec, x, y) -> EnvelopeValue:
    """Two-sided Green-function shape; +inf on the diagonal except for d=1<α."""
    _nonzero(model, x, y)
    d, a = model.d, model.alpha
    nx, ny = norm(model, x), norm(model, y)
    r = dist(model, x, y)
    px, py = np.asarray(psi_eval(model.psi, nx)), np.asarray(psi_eval(model.psi, ny))
    r1 = np.minimum(r, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        if model.regime == CRITICAL:
            fx = np.minimum(1.0, np.minimum(px, 1.0) / r1)
            fy = np.minimum(1.0, np.minimum(py, 1.0) / r1)
            lr = log_fn(r)
            gx = np.minimum(1.0, log_fn(nx) / lr) ** 0.5
            gy = np.minimum(1.0, log_fn(ny) / lr) ** 0.5
            body = (log_fn(np.minimum(px, nx) / r1) * log_fn(np.minimum(py, ny) / r1)) ** 0.5
            value = np.where(r > 0, fx * fy * gx * gy * body, np.inf)
        else:
            fx = np.minimum(1.0, np.minimum(px, 1.0) / r1 ** a)
            fy = np.minimum(1.0, np.minimum(py, 1.0) / r1 ** a)
            fx = np.where(r > 0, fx, 1.0)
            fy = np.where(r > 0, fy, 1.0)
            if model.regime == TRANSIENT:
                value = np.where(r > 0, fx * fy * r ** (a - d), np.inf)
            else:
                r_big = np.maximum(r, 1.0)
                hx = np.minimum(1.0, np.maximum(nx, 1.0) / r_big) ** (a - 1.0)
                hy = np.minimum(1.0, np.maximum(ny, 1.0) / r_big) ** (a - 1.0)
                e = (a - 1.0) / (2.0 * a)
                kx = np.maximum(np.minimum(px, nx ** a), r ** a) ** e
                ky = np.maximum(np.minimum(py, ny ** a), r ** a) ** e
                value = fx * fy * hx * hy * kx * ky
    return EnvelopeValue(_out(value), _GREEN[model.regime])


def green_small_regime(model: ModelSpec, x, y) -> EnvelopeValue:
    """Green shape when |x-y| ∨ ψ(|x|∧|y|) ≤ 1: ψψ/|x-y|^{d+α} off-diagonal, else the time-integral closed form."""
    _nonzero(model, x, y)
    d, a = model.d, model.alpha
    nx, ny = norm(model, x), norm(model, y)
    r = dist(model, x, y)
    pmin = np.asarray(psi_eval(model.psi, np.minimum(nx, ny)))
    if np.any(np.maximum(r, pmin) > 1.0):
        raise DomainError("green_small_regime needs |x-y| and psi(|x| ^ |y|) <= 1")
    px, py = np.asarray(psi_eval(model.psi, nx)), np.asarray(psi_eval(model.psi, ny))
    with np.errstate(divide="ignore", invalid="ignore"):
        far = px * py / r ** (d + a)
        if model.regime == TRANSIENT:
            near = r ** (a - d)
        elif model.regime == RECURRENT:
            near = pmin ** ((a - 1.0) / a) * np.ones_like(r)
        else:
            near = log_fn(pmin / r)
    value = np.where(r ** a > pmin, far, near)
    return EnvelopeValue(_out(value), Regime.GREEN_SMALL)


def green_small_integral(model: ModelSpec, x, y):
    """∫_{|x-y|^α}^{2ψ(|x|∧|y|)} t^{-d/α} dt, the quantity the case-(ii) closed forms compare with."""
    d, a = model.d, model.alpha
    r = dist(model, x, y)
    pmin = np.asarray(psi_eval(model.psi, np.minimum(norm(model, x), norm(model, y))))
    lo, hi = r ** a, 2.0 * pmin
    if d == a:
        return _out(np.log(hi / lo))
    p = 1.0 - d / a
    return _out((hi ** p - lo ** p) / p)


def dirichlet_factor(model: ModelSpec, geometry: str, z, R: float, t, w, k: float = 1.0) -> BoundaryFactor:
    """Boundary factor of the Dirichlet heat kernel of a ball or of a ball's exterior.

    ``geometry="ball"``: 1 ∧ δ(w)^{α/2}/t^{1/2}, for t ≤ (kR)^α.
    ``geometry="exterior"``: the regime-dependent factor for B(z,R)^c.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("t must be positive")
    a = model.alpha
    rw = dist(model, w, z)
    if geometry == "ball":
        delta = R - rw
        if np.any(delta <= 0):
            raise DomainError("w must lie inside the ball")
        if np.any(t > (k * R) ** a):
            raise DomainError("ball factor holds for t <= (kR)^alpha")
        return BoundaryFactor(_out(np.minimum(1.0, delta ** (a / 2) / t ** 0.5)), FactorCase.BALL)
    if geometry != "exterior":
        raise ValueError("geometry must be 'ball' or 'exterior'")
    delta = rw - R
    if np.any(delta <= 0):
        raise DomainError("w must lie outside the ball")
    if model.regime == TRANSIENT:
        v = np.minimum(1.0, np.minimum(delta, R) ** (a / 2) / np.minimum(t, R ** a) ** 0.5)
        return BoundaryFactor(_out(v), FactorCase.EXTERIOR_TRANSIENT)
    if model.regime == RECURRENT:
        num = delta ** (a - 1.0) * np.minimum(delta, R) ** ((2.0 - a) / 2.0)
        den = t ** ((a - 1.0) / a) * np.minimum(t, R ** a) ** ((2.0 - a) / (2.0 * a))
        return BoundaryFactor(_out(np.minimum(1.0, num / den)), FactorCase.EXTERIOR_RECURRENT)
    num = np.minimum(delta, R) ** 0.5 * log_fn(delta / R)
    den = np.minimum(t, R) ** 0.5 * log_fn(t / R)
    return BoundaryFactor(_out(np.minimum(1.0, num / den)), FactorCase.EXTERIOR_CRITICAL)


def h_factor(model: ModelSpec, R: float, s, z) -> BoundaryFactor:
    """h_R(s,z) = 1 ∧ |z|^{α-1}/s^{(α-1)/α} for d=1<α and |z| > R ≥ 1."""
    if model.regime != RECURRENT:
        raise DomainError("h_R is defined for d = 1 < alpha")
    a = model.alpha
    nz = norm(model, z)
    if R < 1 or np.any(nz <= R):
        raise DomainError("h_R needs R >= 1 and |z| > R")
    s = np.asarray(s, dtype=float)
    v = np.minimum(1.0, nz ** (a - 1.0) / s ** ((a - 1.0) / a))
    v = np.where(s <= R ** a, 1.0, v)
    return BoundaryFactor(_out(v), FactorCase.H_R)


def f_factor(model: ModelSpec, R: float, s, z) -> BoundaryFactor:
    """f_R(s,z) = 1 ∧ Log(|z|/R)/Log(s/R) for d=1=α and |z| > R ≥ 1."""
    if model.regime != CRITICAL:
        raise DomainError("f_R is defined for d = 1 = alpha")
    nz = norm(model, z)
    if R < 1 or np.any(nz <= R):
        raise DomainError("f_R needs R >= 1 and |z| > R")
    s = np.asarray(s, dtype=float)
    v = np.minimum(1.0, log_fn(nz / R) / log_fn(s / R))
    v = np.where(s <= R, 1.0, v)
    return BoundaryFactor(_out(v), FactorCase.F_R)


@dataclass(frozen=True)
class DominantReport:
    fitted_C: float
    worst_point: tuple[float, float]
    ratios: np.ndarray


def dominant_bound_check(model: ModelSpec, T: float, t_grid, r_grid) -> DominantReport:
    """Smallest C with t²ψ⁻¹(t)^{-(d+2α)}(1∧ψ⁻¹(t)/r)^{d+2α} ≤ C q̃(t,r) on the grid, t ≤ T."""
    if T < 1:
        raise DomainError("T must be >= 1")
    tt, rr = np.meshgrid(np.asarray(t_grid, dtype=float), np.asarray(r_grid, dtype=float), indexing="ij")
    if np.any(tt <= 0) or np.any(tt > T) or np.any(rr <= 0):
        raise DomainError("grid must satisfy 0 < t <= T and r > 0")
    ratio = _second_term(model, tt, rr) / _wtq_r(model.d, model.alpha, tt, rr)
    k = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    return DominantReport(float(ratio[k]), (float(tt[k]), float(rr[k])), ratio)


def wtq_semigroup_ratio(d: int, alpha: float, t: float, s: float, x: float, y: float) -> float:
    """∫ q̃(t,x,z) q̃(s,z,y) dz / q̃(t+s,x,y) in d = 1, by quadrature."""
    from scipy.integrate import quad

    if d != 1:
        raise DomainError("quadrature check is one-dimensional")
    f = lambda z: _wtq_r(1, alpha, t, abs(x - z)) * _wtq_r(1, alpha, s, abs(z - y))
    pts = sorted({x, y})
    span = max(t, s) ** (1.0 / alpha)
    lo, hi = pts[0] - span, pts[-1] + span
    total = quad(f, -np.inf, lo, limit=200)[0] + quad(f, hi, np.inf, limit=200)[0]
    total += quad(f, lo, hi, points=pts, limit=400)[0]
    return total / float(_wtq_r(1, alpha, t + s, abs(x - y)))
