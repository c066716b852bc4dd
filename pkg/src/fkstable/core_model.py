"""Model parameters: the scaling function, the killing potential and the explicit constants."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class ConfigError(ValueError):
    """A model or experiment description is malformed."""


TRANSIENT = "transient"
RECURRENT = "recurrent"
CRITICAL = "critical"


@dataclass(frozen=True)
class ScalingFunction:
    """Strictly increasing ψ with ψ(1)=1 and the two-sided scaling bounds.

    ``kind="power"`` means ψ(r)=r^beta. ``kind="table"`` interpolates the
    given (r, ψ) nodes linearly in log-log coordinates and extends them with
    the end slopes.
    """

    kind: str
    beta1: float
    beta2: float
    lam: float = 1.0
    beta: float | None = None
    table_r: tuple[float, ...] = ()
    table_psi: tuple[float, ...] = ()

    def __post_init__(self):
        if self.lam < 1.0:
            raise ConfigError("lambda must be >= 1")
        if self.beta2 < self.beta1:
            raise ConfigError("beta2 must be >= beta1")
        if self.kind == "power":
            if self.beta is None or not self.beta > 0:
                raise ConfigError("power-law psi needs beta > 0")
        elif self.kind == "table":
            r = np.asarray(self.table_r, dtype=float)
            p = np.asarray(self.table_psi, dtype=float)
            if r.size < 2 or r.size != p.size:
                raise ConfigError("table needs at least two (r, psi) nodes")
            if np.any(r <= 0) or np.any(p <= 0):
                raise ConfigError("table nodes must be positive")
            if np.any(np.diff(r) <= 0) or np.any(np.diff(p) <= 0):
                raise ConfigError("tabulated psi must be strictly increasing")
            if not (r[0] <= 1.0 <= r[-1]):
                raise ConfigError("table must bracket r = 1")
            at_one = float(np.interp(0.0, np.log(r), np.log(p)))
            if abs(at_one) > 1e-12:
                raise ConfigError("tabulated psi must satisfy psi(1) = 1")
        else:
            raise ConfigError(f"unknown psi kind {self.kind!r}")

    @classmethod
    def power(cls, beta: float, lam: float = 1.0) -> "ScalingFunction":
        return cls(kind="power", beta=float(beta), beta1=float(beta), beta2=float(beta), lam=float(lam))

    @classmethod
    def table(cls, r: Sequence[float], psi: Sequence[float], beta1: float, beta2: float,
              lam: float = 1.0) -> "ScalingFunction":
        return cls(kind="table", table_r=tuple(map(float, r)), table_psi=tuple(map(float, psi)),
                   beta1=float(beta1), beta2=float(beta2), lam=float(lam))

    def _loglog(self):
        lr = np.log(np.asarray(self.table_r))
        lp = np.log(np.asarray(self.table_psi))
        s0 = (lp[1] - lp[0]) / (lr[1] - lr[0])
        s1 = (lp[-1] - lp[-2]) / (lr[-1] - lr[-2])
        return lr, lp, s0, s1

    def __call__(self, r):
        return psi_eval(self, r)

    def inverse(self, t):
        return psi_inverse(self, t)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "beta1": self.beta1, "beta2": self.beta2, "lambda": self.lam}
        if self.kind == "power":
            out["beta"] = self.beta
        else:
            out["table"] = [[a, b] for a, b in zip(self.table_r, self.table_psi)]
        return out


def psi_eval(psi: ScalingFunction, r):
    """ψ(r) for scalar or array r > 0."""
    ra = np.asarray(r, dtype=float)
    if np.any(ra <= 0):
        raise DomainError("psi is defined for r > 0")
    if psi.kind == "power":
        out = ra ** psi.beta
    else:
        lr, lp, s0, s1 = psi._loglog()
        x = np.log(ra)
        y = np.interp(x, lr, lp)
        y = np.where(x < lr[0], lp[0] + s0 * (x - lr[0]), y)
        y = np.where(x > lr[-1], lp[-1] + s1 * (x - lr[-1]), y)
        out = np.exp(y)
        out = np.where(ra == 1.0, 1.0, out)
    return float(out) if np.ndim(out) == 0 else out


def psi_inverse(psi: ScalingFunction, t):
    """ψ^{-1}(t) for t > 0.

    The log-log interpolant is piecewise linear and increasing, so its inverse
    is the same interpolation with the axes swapped, exact up to rounding.
    """
    ta = np.asarray(t, dtype=float)
    if np.any(ta <= 0):
        raise DomainError("psi inverse is defined for t > 0")
    if psi.kind == "power":
        out = ta ** (1.0 / psi.beta)
    else:
        lr, lp, s0, s1 = psi._loglog()
        y = np.log(ta)
        x = np.interp(y, lp, lr)
        x = np.where(y < lp[0], lr[0] + (y - lp[0]) / s0, x)
        x = np.where(y > lp[-1], lr[-1] + (y - lp[-1]) / s1, x)
        out = np.exp(x)
        out = np.where(ta == 1.0, 1.0, out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ScalingReport:
    passed: bool
    worst_factor: float
    worst_pair: tuple[float, float]


def check_scaling_class(psi: ScalingFunction, samples, rtol: float = 1e-12) -> ScalingReport:
    """Test Λ⁻¹(R/r)^β₁ ≤ ψ(R)/ψ(r) ≤ Λ(R/r)^β₂ on sampled pairs r ≤ R.

    The violation factor of a pair is max(lower/ratio, ratio/upper); the class
    holds on the sample iff every factor is ≤ 1.
    """
    pairs = np.asarray(samples, dtype=float).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ValueError("empty sample set")
    r, big = pairs[:, 0], pairs[:, 1]
    if np.any(r <= 0) or np.any(big < r):
        raise DomainError("pairs must satisfy 0 < r <= R")
    ratio = np.asarray(psi_eval(psi, big)) / np.asarray(psi_eval(psi, r))
    q = big / r
    lower = q ** psi.beta1 / psi.lam
    upper = psi.lam * q ** psi.beta2
    factor = np.maximum(lower / ratio, ratio / upper)
    k = int(np.argmax(factor))
    worst = float(factor[k])
    return ScalingReport(worst <= 1.0 + rtol, worst, (float(r[k]), float(big[k])))


@dataclass(frozen=True)
class KillingPotential:
    """κ ≥ 0 on ℝᵈ∖{0}.

    ``kind="power"`` is b|x|^{-beta} (b=0 gives the zero potential used for
    calibration); ``kind="table"`` is a radial profile interpolated in log-log
    coordinates; ``kind="function"`` wraps a radial callable, which the
    compiled simulation kernels cannot call.
    """

    kind: str
    b: float = 1.0
    beta: float = 0.0
    table_r: tuple[float, ...] = ()
    table_kappa: tuple[float, ...] = ()
    func: Callable | None = field(default=None, compare=False)
    class_tag: str = "K"

    def __post_init__(self):
        if self.kind == "power":
            if self.b < 0:
                raise ConfigError("b must be nonnegative")
        elif self.kind == "table":
            r = np.asarray(self.table_r, dtype=float)
            k = np.asarray(self.table_kappa, dtype=float)
            if r.size < 2 or r.size != k.size or np.any(r <= 0) or np.any(k <= 0):
                raise ConfigError("kappa table needs >= 2 positive nodes")
            if np.any(np.diff(r) <= 0):
                raise ConfigError("kappa table radii must increase")
        elif self.kind == "function":
            if not callable(self.func):
                raise ConfigError("function potential needs a callable")
        else:
            raise ConfigError(f"unknown kappa kind {self.kind!r}")
        if self.class_tag not in ("K0", "K"):
            raise ConfigError("class_tag must be 'K0' or 'K'")

    @classmethod
    def power(cls, b: float, beta: float) -> "KillingPotential":
        return cls(kind="power", b=float(b), beta=float(beta))

    @classmethod
    def zero(cls) -> "KillingPotential":
        return cls(kind="power", b=0.0, beta=0.0)

    @property
    def is_zero(self) -> bool:
        return self.kind == "power" and self.b == 0.0

    def scaled(self, factor: float) -> "KillingPotential":
        """The potential factor·κ (used for κ/2 in survival bounds)."""
        if self.kind == "power":
            return KillingPotential.power(self.b * factor, self.beta)
        if self.kind == "table":
            return KillingPotential(kind="table", table_r=self.table_r,
                                    table_kappa=tuple(factor * v for v in self.table_kappa),
                                    class_tag=self.class_tag)
        f = self.func
        return KillingPotential(kind="function", func=lambda r: factor * f(r), class_tag=self.class_tag)

    def radial(self, r):
        """κ as a function of |x|; r must be positive."""
        ra = np.asarray(r, dtype=float)
        if np.any(ra <= 0):
            raise DomainError("kappa is singular at the origin")
        if self.kind == "power":
            out = self.b * ra ** (-self.beta) if self.b else np.zeros_like(ra)
        elif self.kind == "table":
            lr = np.log(np.asarray(self.table_r))
            lk = np.log(np.asarray(self.table_kappa))
            s0 = (lk[1] - lk[0]) / (lr[1] - lr[0])
            s1 = (lk[-1] - lk[-2]) / (lr[-1] - lr[-2])
            x = np.log(ra)
            y = np.interp(x, lr, lk)
            y = np.where(x < lr[0], lk[0] + s0 * (x - lr[0]), y)
            y = np.where(x > lr[-1], lk[-1] + s1 * (x - lr[-1]), y)
            out = np.exp(y)
        else:
            out = np.asarray(np.vectorize(self.func, otypes=[float])(ra))
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        if self.kind == "power":
            return {"kind": "power", "b": self.b, "beta": self.beta}
        if self.kind == "table":
            return {"kind": "table", "table": [[a, b] for a, b in zip(self.table_r, self.table_kappa)]}
        raise ConfigError("function potentials cannot be serialized")


def kappa_eval(kappa: KillingPotential, x):
    """κ(x) at a point (scalar for d=1, or a coordinate vector)."""
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))
    if r == 0.0:
        raise DomainError("kappa is singular at the origin")
    return kappa.radial(r)


def log_fn(r):
    """Log r = log(e - 1 + r)."""
    ra = np.asarray(r, dtype=float)
    if np.any(ra < 0):
        raise DomainError("Log is defined for r >= 0")
    out = np.log(math.e - 1.0 + ra)
    return float(out) if np.ndim(out) == 0 else out


def stable_constant(d: int, alpha: float) -> float:
    """Jump-kernel constant A(d,-α) of the isotropic α-stable process."""
    return (alpha * 2.0 ** (alpha - 1.0) * math.gamma((d + alpha) / 2.0)
            / (math.pi ** (d / 2.0) * math.gamma(1.0 - alpha / 2.0)))


def sphere_area(d: int) -> float:
    """Surface measure A_{d-1} = 2π^{d/2}/Γ(d/2) of the unit sphere in ℝᵈ."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass(frozen=True)
class ModelSpec:
    d: int
    alpha: float
    psi: ScalingFunction
    kappa: KillingPotential

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError("d must be a positive integer")
        if not 0.0 < self.alpha < 2.0:
            raise ConfigError("alpha must lie in (0, 2)")
        if not self.psi.beta1 > self.alpha:
            raise ConfigError("supercriticality requires beta1 > alpha")

    @classmethod
    def power_law(cls, d: int, alpha: float, beta: float, b: float = 1.0) -> "ModelSpec":
        """ψ=r^β and κ=b|x|^{-β}, in the class with Λ = b ∨ 1/b."""
        lam = max(b, 1.0 / b) if b > 0 else 1.0
        return cls(d, float(alpha), ScalingFunction.power(beta, lam), KillingPotential.power(b, beta))

    @property
    def lam(self) -> float:
        return self.psi.lam

    @property
    def regime(self) -> str:
        return regime_of(self.d, self.alpha)

    def with_kappa(self, kappa: KillingPotential) -> "ModelSpec":
        return ModelSpec(self.d, self.alpha, self.psi, kappa)

    def to_dict(self) -> dict:
        return {"d": self.d, "alpha": self.alpha, "psi": self.psi.to_dict(), "kappa": self.kappa.to_dict()}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def regime_of(d: int, alpha: float) -> str:
    if d > alpha:
        return TRANSIENT
    if alpha > 1.0:
        return RECURRENT
    return CRITICAL


@dataclass(frozen=True)
class ClassReport:
    K0: bool
    K: bool
    worst_lower: float
    worst_upper_inner: float
    worst_outer_K0: float
    worst_outer_K: float


def check_class_membership(model: ModelSpec, radial_grid, rtol: float = 1e-12) -> ClassReport:
    """Check the three κ sandwich conditions along a ray at the given radii.

    Each worst factor is ≤ 1 exactly when its condition holds; for a
    non-radial potential only the ray through e₁ is examined.
    """
    r = np.asarray(radial_grid, dtype=float)
    if np.any(r <= 0):
        raise DomainError("radii must be positive")
    lam = model.lam
    k = np.asarray(model.kappa.radial(r), dtype=float)
    p = np.asarray(psi_eval(model.psi, r), dtype=float)
    inner = r <= 1.0
    outer = r > 1.0
    with np.errstate(divide="ignore"):
        lo = np.where(inner, (1.0 / (lam * p)) / np.where(k > 0, k, 0.0), 0.0)
    lo = np.where(inner & (k == 0), np.inf, lo)
    up_in = np.where(inner, k * p / lam, 0.0)
    out_k0 = np.where(outer, k / lam, 0.0)
    out_k = np.where(outer, k * p / lam, 0.0)
    w = [float(np.max(a)) if a.size else 0.0 for a in (lo, up_in, out_k0, out_k)]
    k0 = w[0] <= 1 + rtol and w[1] <= 1 + rtol and w[2] <= 1 + rtol
    return ClassReport(k0, k0 and w[3] <= 1 + rtol, *w)


@dataclass(frozen=True)
class Constants:
    a_stable: float
    a_sphere: float
    c0: float
    eps0: float
    delta0: float
    lambda1: float = 1.0
    lambda2: float = 1.0
    eps0_terms: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)


def constants_for(model: ModelSpec, lambda1: float = 1.0, lambda2: float = 1.0) -> Constants:
    """Explicit constants A(d,-α), A_{d-1}, C₀, ε₀ and δ₀ of the barrier construction."""
    d, a = model.d, model.alpha
    b1, b2, lam = model.psi.beta1, model.psi.beta2, model.lam
    A = stable_constant(d, a)
    S = sphere_area(d)
    c0 = 2.0 ** (2.0 * b2 + 3.0) * lam / 3.0
    common = A * c0 * lam ** 2 * S
    t1 = (2.0 - a) / (2.0 ** (a - b1 + 10.0) * (1 + 2 * d) * 3.0 ** b1 * A * c0 ** 2 * lam ** 2 * S)
    t2 = a / (2.0 ** (a + 2 * b1 + 4.0) * common)
    t3 = (b1 - a) / (2.0 ** (d - a + 2 * b1 + 4.0) * common)
    t4 = a / (2.0 ** (d - a + 2 * b1 + 4.0) * common)
    eps0 = min(0.125, min(t1, t2, t3, t4) ** (1.0 / (b1 - a)))
    delta0 = a * eps0 ** a / (2.0 ** (d - a + 4.0) * A * c0 * lam * S)
    if lam * (4.0 * eps0) ** b1 / delta0 > 1.0 + 1e-12:
        raise ArithmeticError("barrier constants violate lam*(4 eps0)^beta1 <= delta0")
    return Constants(A, S, c0, eps0, delta0, lambda1, lambda2, (t1, t2, t3, t4))


_MODEL_KEYS = {"d", "alpha", "psi", "kappa"}
_PSI_KEYS = {"kind", "beta", "table", "beta1", "beta2", "lambda"}
_KAPPA_KEYS = {"kind", "b", "beta", "table", "class"}


def _strict(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(obj) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def model_from_dict(data: dict) -> ModelSpec:
    _strict(data, _MODEL_KEYS, "model")
    try:
        d = int(data["d"])
        alpha = float(data["alpha"])
        pd, kd = data["psi"], data["kappa"]
        _strict(pd, _PSI_KEYS, "psi")
        _strict(kd, _KAPPA_KEYS, "kappa")
        if pd["kind"] == "power":
            beta = float(pd["beta"])
            psi = ScalingFunction(kind="power", beta=beta, beta1=float(pd.get("beta1", beta)),
                                  beta2=float(pd.get("beta2", beta)), lam=float(pd.get("lambda", 1.0)))
        elif pd["kind"] == "table":
            rows = np.asarray(pd["table"], dtype=float)
            psi = ScalingFunction.table(rows[:, 0], rows[:, 1], float(pd["beta1"]), float(pd["beta2"]),
                                        float(pd.get("lambda", 1.0)))
        else:
            raise ConfigError(f"unknown psi kind {pd['kind']!r}")
        tag = kd.get("class", "K")
        if kd["kind"] == "power":
            kappa = KillingPotential(kind="power", b=float(kd["b"]), beta=float(kd["beta"]), class_tag=tag)
        elif kd["kind"] == "zero":
            kappa = KillingPotential.zero()
        elif kd["kind"] == "table":
            rows = np.asarray(kd["table"], dtype=float)
            kappa = KillingPotential(kind="table", table_r=tuple(rows[:, 0]), table_kappa=tuple(rows[:, 1]),
                                     class_tag=tag)
        else:
            raise ConfigError(f"unknown kappa kind {kd['kind']!r}")
    except (KeyError, TypeError, IndexError) as exc:
        raise ConfigError(f"malformed model description: {exc}") from exc
    return ModelSpec(d, alpha, psi, kappa)


def load_model(path) -> ModelSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return model_from_dict(data)
