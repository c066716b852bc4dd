"""Barrier functions H and φ_R, and principal-value fractional Laplacians of radial profiles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core_model import Constants, DomainError, ModelSpec, ScalingFunction, constants_for, psi_eval, sphere_area, stable_constant


class BarrierH:
    """H(r) = (2/r²)∫₀^r∫₀^s ψ(u) du ds with first and second derivatives.

    Power laws use the closed forms. Tabulated ψ is piecewise r^s in log-log
    coordinates, so both primitives are integrated exactly segment by segment.
    """

    def __init__(self, psi: ScalingFunction):
        self.psi = psi
        if psi.kind == "table":
            lr, lp, s0, s1 = psi._loglog()
            self._r = np.exp(lr)
            slopes = np.concatenate([[s0], np.diff(lp) / np.diff(lr), [s1]])
            self._slopes = slopes
            # coefficient C_k with psi(u) = C_k u^{s_k} on segment k (segment 0 is (0, r_0])
            anchors = np.concatenate([[lp[0]], lp[:-1], [lp[-1]]])
            anchor_r = np.concatenate([[lr[0]], lr[:-1], [lr[-1]]])
            self._logc = anchors - slopes * anchor_r
            m1 = [0.0]
            m2 = [0.0]
            edges = np.concatenate([[0.0], self._r])
            for k in range(len(self._r)):
                m1.append(m1[-1] + self._moment(k, edges[k], edges[k + 1], 0))
                m2.append(m2[-1] + self._moment(k, edges[k], edges[k + 1], 1))
            self._m1 = np.array(m1[1:])
            self._m2 = np.array(m2[1:])

    def _moment(self, k, a, b, j):
        """∫_a^b u^j ψ(u) du on segment k."""
        p = self._slopes[k] + 1.0 + j
        c = np.exp(self._logc[k])
        return c * (np.power(b, p) - np.power(a, p)) / p

    def _primitives(self, r):
        """I1 = ∫₀^r ψ and I2 = ∫₀^r (r-u)ψ(u) du."""
        r = np.asarray(r, dtype=float)
        k = np.searchsorted(self._r, r, side="left")
        base_r = np.where(k > 0, self._r[np.maximum(k - 1, 0)], 0.0)
        m1 = np.where(k > 0, self._m1[np.maximum(k - 1, 0)], 0.0)
        m2 = np.where(k > 0, self._m2[np.maximum(k - 1, 0)], 0.0)
        i1 = m1 + self._moment(k, base_r, r, 0)
        j = m2 + self._moment(k, base_r, r, 1)
        return i1, r * i1 - j

    def __call__(self, r, order: int = 0):
        return h_eval(self, r, order)


def h_eval(H: BarrierH, r, order: int = 0):
    """H, H' or H'' at r > 0."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    ra = np.asarray(r, dtype=float)
    if np.any(ra <= 0):
        raise DomainError("H is evaluated at r > 0")
    psi = H.psi
    if psi.kind == "power":
        b = psi.beta
        h = 2.0 * ra ** b / ((b + 1.0) * (b + 2.0))
        out = (h, b * h / ra, b * (b - 1.0) * h / ra ** 2)[order]
    else:
        i1, i2 = H._primitives(ra)
        if order == 0:
            out = 2.0 * i2 / ra ** 2
        elif order == 1:
            out = 2.0 * i1 / ra ** 2 - 4.0 * i2 / ra ** 3
        else:
            p = np.asarray(psi_eval(psi, ra))
            out = 2.0 * p / ra ** 2 - 8.0 * i1 / ra ** 3 + 12.0 * i2 / ra ** 4
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LemmaHReport:
    passed: bool
    lower: float
    upper: float
    first: float
    second: float
    c0: float


def lemma_H_check(H: BarrierH, grid, c0: float | None = None, tol: float = 1e-10) -> LemmaHReport:
    """Check C₀⁻¹ψ ≤ H ≤ ψ, |rH'| ≤ 2C₀H and |r²H''| ≤ 6C₀H; each worst ratio must be ≤ 1."""
    r = np.asarray(grid, dtype=float)
    if np.any(r <= 0):
        raise DomainError("radii must be positive")
    if np.log10(r.max() / r.min()) < 6.0 - 1e-9:
        raise DomainError("grid must span at least six decades")
    if c0 is None:
        c0 = 2.0 ** (2.0 * H.psi.beta2 + 3.0) * H.psi.lam / 3.0
    h = np.asarray(h_eval(H, r, 0))
    p = np.asarray(psi_eval(H.psi, r))
    lower = float(np.max(p / (c0 * h)))
    upper = float(np.max(h / p))
    first = float(np.max(np.abs(r * np.asarray(h_eval(H, r, 1))) / (2.0 * c0 * h)))
    second = float(np.max(np.abs(r ** 2 * np.asarray(h_eval(H, r, 2))) / (6.0 * c0 * h)))
    ok = max(lower, upper, first, second) <= 1.0 + tol
    return LemmaHReport(ok, lower, upper, first, second, c0)


def _quintic(p0, p1, p2, q0, q1, q2):
    """Coefficients (ascending) of the quintic on [0,1] with given value/slope/curvature at both ends."""
    a0, a1, a2 = p0, p1, p2 / 2.0
    m = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]])
    rhs = np.array([q0 - a0 - a1 - a2, q1 - a1 - 2 * a2, q2 - 2 * a2])
    a3, a4, a5 = np.linalg.solve(m, rhs)
    return np.array([a0, a1, a2, a3, a4, a5])


def _quintic_monotone(c, lo, hi) -> bool:
    """Nondecreasing on [0,1] with values inside [lo, hi]."""
    dp = np.polynomial.polynomial.polyder(c)
    crit = [0.0, 1.0]
    for z in np.polynomial.polynomial.polyroots(np.polynomial.polynomial.polyder(dp)):
        if abs(z.imag) < 1e-12 and 0.0 < z.real < 1.0:
            crit.append(z.real)
    slopes = np.polynomial.polynomial.polyval(np.array(crit), dp)
    if np.min(slopes) < -1e-14 * max(1.0, abs(c[1])):
        return False
    vals = np.polynomial.polynomial.polyval(np.array(crit), c)
    return bool(np.min(vals) >= lo * (1 - 1e-12) and np.max(vals) <= hi * (1 + 1e-12))


def _smoothstep(u, order):
    u = np.clip(u, 0.0, 1.0)
    if order == 0:
        return u ** 3 * (10.0 - 15.0 * u + 6.0 * u * u)
    if order == 1:
        return 30.0 * u * u * (1.0 - u) ** 2
    return 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u)


class BarrierPhi:
    """Radial barrier φ_R glued from H, a quintic ramp, a plateau δ₀R^α and a quintic cut-off.

    Regions by |x|: H on (0, 4ε₀R]; a monotone quintic from H up to the
    plateau on [4ε₀R, b]; the plateau up to 2^{1/d}R; a smoothstep down to 0
    on [2^{1/d}R, 4^{1/d}R]; zero beyond. The ramp end b starts at R and is
    halved towards 4ε₀R until the quintic is monotone.
    """

    def __init__(self, model: ModelSpec, R: float, constants: Constants | None = None):
        if not 0.0 < R <= 1.0:
            raise DomainError("the barrier is defined for R in (0, 1]")
        self.model = model
        self.R = float(R)
        self.H = BarrierH(model.psi)
        self.constants = constants or constants_for(model)
        d, a = model.d, model.alpha
        c = self.constants
        self.eps0, self.delta0 = c.eps0, c.delta0
        self.plateau = c.delta0 * R ** a
        self.r_inner = 4.0 * c.eps0 * R
        self.r_plateau_end = 2.0 ** (1.0 / d) * R
        self.r_support = 4.0 ** (1.0 / d) * R
        h_lo = float(h_eval(self.H, c.eps0 * R))
        ra = self.r_inner
        hv = [float(h_eval(self.H, ra, k)) for k in range(3)]
        theta, coeffs = 1.0, None
        for _ in range(400):
            b = ra + theta * (R - ra)
            L = b - ra
            cand = _quintic(hv[0], hv[1] * L, hv[2] * L * L, self.plateau, 0.0, 0.0)
            if _quintic_monotone(cand, h_lo, self.plateau):
                coeffs = cand
                break
            theta *= 0.5
        if coeffs is None:
            raise ArithmeticError("no monotone quintic ramp found")
        self.r_ramp_end = b
        self._ramp = coeffs

    @property
    def breakpoints(self) -> tuple[float, ...]:
        pts = {self.r_inner, self.r_ramp_end, self.R, self.r_plateau_end, self.r_support}
        return tuple(sorted(pts))

    def _pieces(self):
        P = np.polynomial.polynomial
        L = self.r_ramp_end - self.r_inner
        W = self.r_support - self.r_plateau_end

        def ramp(r, k):
            c = self._ramp
            for _ in range(k):
                c = P.polyder(c)
            return P.polyval((r - self.r_inner) / L, c) / L ** k

        def cut(r, k):
            s = _smoothstep((r - self.r_plateau_end) / W, k) / W ** k
            return self.plateau * (1.0 - s) if k == 0 else -self.plateau * s

        return (
            (0.0, self.r_inner, lambda r, k: h_eval(self.H, r, k)),
            (self.r_inner, self.r_ramp_end, ramp),
            (self.r_ramp_end, self.r_plateau_end, lambda r, k: np.full_like(r, self.plateau if k == 0 else 0.0)),
            (self.r_plateau_end, self.r_support, cut),
            (self.r_support, math.inf, lambda r, k: np.zeros_like(r)),
        )

    def profile(self, r, order: int = 0):
        """Radial profile of φ_R or its first/second radial derivative."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for lo, hi, fn in self._pieces():
            m = (r >= lo) & (r < hi) & (r > 0)
            if np.any(m):
                out[m] = fn(r[m], order)
        return float(out) if out.ndim == 0 else out

    def one_sided(self, r: float, order: int) -> tuple[float, float]:
        """Left and right limits of the order-th derivative at a junction radius."""
        left = right = None
        arr = np.array([float(r)])
        for lo, hi, fn in self._pieces():
            if hi == r:
                left = float(np.asarray(fn(arr, order))[0])
            if lo == r:
                right = float(np.asarray(fn(arr, order))[0])
        if left is None or right is None:
            for lo, hi, fn in self._pieces():
                if lo < r < hi:
                    v = float(np.asarray(fn(arr, order))[0])
                    return v, v
            raise DomainError(f"{r} is not a profile radius")
        return left, right

    def radial_profile(self) -> "RadialProfile":
        return RadialProfile(self.profile, self.breakpoints, self.r_support)


def phi_eval(phi: BarrierPhi, x):
    """φ_R at a point (scalar for d=1 or coordinate vector); φ_R(0) = 0."""
    a = np.asarray(x, dtype=float)
    r = np.abs(a) if phi.model.d == 1 else np.sqrt(np.sum(a * a, axis=-1))
    return phi.profile(r)


@dataclass(frozen=True)
class RadialProfile:
    """A radial function g(|y|) with the radii where it is not smooth.

    ``support`` bounds the region where g differs from ``far_value``.
    """

    fn: Callable
    breakpoints: tuple[float, ...] = ()
    support: float = math.inf
    far_value: float = 0.0


@dataclass(frozen=True)
class QuadSpec:
    order: int = 8
    levels: int = 48
    inner_levels: int = 12
    angular_levels: int = 12
    split: int = 1
    atol: float = 1e-12
    rtol: float = 1e-8
    angular_order: int = 24


@dataclass(frozen=True)
class PVResult:
    value: float
    error: float
    converged: bool
    parts: dict = field(default_factory=dict)


def _graded(a, b, levels):
    """Panel edges on [a,b] refined geometrically towards both ends."""
    if b <= a:
        return np.array([a, b])
    half = levels // 2
    f = 0.5 ** np.arange(1, half + 1)
    pts = np.concatenate([[a, b], a + (b - a) * f, b - (b - a) * f])
    return np.unique(pts)


def _gl_nodes(edges, order, split):
    x, w = np.polynomial.legendre.leggauss(order)
    if split > 1:
        sub = np.linspace(0.0, 1.0, split + 1)[:-1]
        inner = (edges[:-1, None] + np.diff(edges)[:, None] * sub[None, :]).ravel()
        edges = np.unique(np.concatenate([inner, edges[-1:]]))
    lo, hi = edges[:-1], edges[1:]
    mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


class _Sphere:
    """Integral over |ω|=1 of g(|x + sω|) for a radial g, |x| = r."""

    def __init__(self, d, r, fn, breakpoints, quad):
        self.d, self.r, self.fn, self.bps = d, r, fn, np.asarray(breakpoints, dtype=float)
        self.quad = quad
        self.area_low = sphere_area(d - 1) if d >= 2 else 0.0

    def mean_sum(self, s, split=1):
        s = np.asarray(s, dtype=float)
        r = self.r
        if self.d == 1:
            return self.fn(np.abs(r + s)) + self.fn(np.abs(r - s))
        out = np.empty_like(s)
        for i, si in enumerate(s):
            cuts = [0.0, math.pi]
            if si > 0:
                c = (self.bps ** 2 - r * r - si * si) / (2.0 * r * si)
                cuts.extend(np.arccos(c[np.abs(c) < 1.0]).tolist())
            cuts = np.unique(np.array(cuts))
            edges = np.unique(np.concatenate([_graded(a, b, 2 * self.quad.angular_levels)
                                              for a, b in zip(cuts[:-1], cuts[1:])]))
            th, wt = _gl_nodes(edges, self.quad.angular_order, split)
            rad = np.sqrt(np.maximum(r * r + si * si + 2.0 * r * si * np.cos(th), 0.0))
            out[i] = self.area_low * np.sum(wt * self.fn(rad) * np.sin(th) ** (self.d - 2))
        return out


def pv_fractional_laplacian(profile: RadialProfile, d: int, alpha: float, r: float,
                            quad: QuadSpec = QuadSpec()) -> PVResult:
    """−(−Δ)^{α/2}g at a point with |x| = r > 0, for a radial g.

    On B(x, r/2) the integrand is the symmetric second difference, which is
    O(s^{1-α}) near s = 0; below s = ρ·2^{-inner_levels} it is replaced by
    its leading Taylor term, since rounding swamps the difference there.
    Outside, s = |y-x| is split at every s where |y|
    can cross a breakpoint, and the constant part −g(x)·A_{d-1}ρ^{-α}/α is
    added analytically. The error is the difference between the mesh and
    its twofold refinement plus the neglected innermost panel.
    """
    if r <= 0:
        raise DomainError("the evaluation point must avoid the origin")
    fn = profile.fn
    A = stable_constant(d, alpha)
    S = sphere_area(d)
    sph = _Sphere(d, r, fn, profile.breakpoints, quad)
    g0 = float(fn(np.array([r]))[0])
    rho = r / 2.0
    s_max = profile.support + r if math.isfinite(profile.support) else None
    far = profile.far_value

    def integrate(split):
        k = np.arange(quad.inner_levels + 1)
        inner_edges = rho * 0.5 ** k[::-1]
        s, w = _gl_nodes(inner_edges, quad.order, split)
        inner = np.sum(w * s ** (-1.0 - alpha) * (sph.mean_sum(s, split) - S * g0))
        s0 = inner_edges[0]
        dd = sph.mean_sum(np.array([s0, s0 / 2.0]), split) - S * g0
        curv = (16.0 * dd[1] - dd[0]) / (3.0 * s0 ** 2)
        inner += curv * s0 ** (2.0 - alpha) / (2.0 - alpha)
        top = s_max if s_max is not None else max(2.0 * rho, 4.0 * (max(profile.breakpoints, default=r) + r))
        cuts = {rho, top, r}
        for b in profile.breakpoints:
            cuts.update((abs(b - r), b + r))
        cuts = np.array(sorted(c for c in cuts if rho <= c <= top))
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            edges = _graded(a, b, quad.levels)
            s, w = _gl_nodes(edges, quad.order, split)
            total += np.sum(w * s ** (-1.0 - alpha) * (sph.mean_sum(s, split) - S * far))
        tail = far * S * rho ** (-alpha) / alpha
        return inner, total + tail, inner_edges[0]

    in_c, out_c, s0 = integrate(quad.split)
    in_f, out_f, _ = integrate(2 * quad.split)
    const = -g0 * S * rho ** (-alpha) / alpha
    value = A * (in_f + out_f + const)
    taylor = A * abs(in_f) * (s0 / rho) ** (2.0 - alpha) * (s0 / rho) ** 2
    err = A * (abs(in_f - in_c) + abs(out_f - out_c)) + taylor
    tol = max(quad.atol, quad.rtol * abs(value))
    return PVResult(float(value), float(err), bool(err <= tol),
                    {"inner": A * in_f, "outer": A * out_f, "constant": A * const})


def frac_laplacian_pv(phi: BarrierPhi, model: ModelSpec, x, quad: QuadSpec = QuadSpec()) -> PVResult:
    """−(−Δ)^{α/2}φ_R(x) for 0 < |x| < ε₀R."""
    a = np.asarray(x, dtype=float)
    r = float(abs(a)) if a.ndim == 0 or a.size == 1 else float(np.linalg.norm(a))
    if not 0.0 < r < phi.eps0 * phi.R:
        raise DomainError("probe point must satisfy 0 < |x| < eps0 R")
    return pv_fractional_laplacian(phi.radial_profile(), model.d, model.alpha, r, quad)


@dataclass(frozen=True)
class GeneratorRow:
    radius: float
    pv: float
    pv_error: float
    kappa_term: float
    generator: float
    passed: bool


@dataclass(frozen=True)
class GeneratorReport:
    bound: float
    rows: list
    passed: bool


def generator_check(phi: BarrierPhi, model: ModelSpec, points, quad: QuadSpec = QuadSpec(),
                    tol: float = 1e-4) -> GeneratorReport:
    """Check −(−Δ)^{α/2}φ_R(x) − κ(x)H(|x|)/2 ≤ −1/(4C₀Λ) at each point.

    The bound always uses the C₀Λ of the model the barrier was built for, so
    passing a rescaled potential tests that potential against the original
    margin.
    """
    bound = 1.0 / (4.0 * phi.constants.c0 * phi.model.lam)
    rows = []
    for x in points:
        res = frac_laplacian_pv(phi, model, x, quad)
        if not res.converged:
            raise ArithmeticError(f"quadrature did not converge at {x}: error {res.error:.3g}")
        r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))
        k = 0.0 if model.kappa.is_zero else float(model.kappa.radial(r))
        kt = 0.5 * k * float(h_eval(phi.H, r))
        gen = res.value - kt
        rows.append(GeneratorRow(r, res.value, res.error, kt, gen, gen <= -bound + tol))
    return GeneratorReport(bound, rows, all(row.passed for row in rows))
