"""Asymptotic efficiency: the local minimax variance, the global bound, the
error-decomposition identities behind it, and Monte Carlo risk measurement.

The central object is the influence numerator

    infl(x, y) = F_S(x ^ y) - F_S(x) * F_S(y)      (^ = minimum)

whose weighted second moment

    R(x, x) = 4 * integral of infl(x, y)^2 / (sigma^2(y) f_S(y)) dy

is the asymptotic variance of efficient estimators at threshold x, and
whose nu-integral is the asymptotic lower bound for the scaled integrated
mean square error of any estimator. The module also implements, as
executable identities, the decomposition of the scaled estimation error
into a vanishing boundary term plus a stochastic integral with the
influence ratio as integrand, and numerical screens of the moment
conditions under which that decomposition applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, RiskRunError, SimulationError, TailError
from .estimators import (
    EstimatorChoice,
    WeightFunction,
    as_estimator,
    estimate_curve,
    kernel,
    primitive,
    unbiased_estimate,
)
from .model import (
    DiffusionModel,
    _cdf_fast,
    _cdf_table,
    _cdf_vec,
    _density_integrand,
    _density_vec,
    _survival_fast,
    _survival_vec,
    _vec_call,
    invariant_cdf,
    invariant_density,
    normalizing_constant,
)
from .numerics import (
    DEFAULT_QUADRATURE,
    QuadratureSpec,
    compensated_sum,
    integrate,
    integrate_line,
)
from .simulate import Path, SimConfig, derive_substream_seed, simulate_path

# density floor below which influence-ratio integrands are numerically zero
# (the numerator vanishes at least as fast as the density in both tails)
_DENSITY_FLOOR = 1e-280
# relaxed tolerances for condition screens (flags, not truth values)
_SCREEN_INNER = QuadratureSpec(abs_tol=1e-8, rel_tol=1e-8, max_depth=32, tail_tol=1e-10)
_SCREEN_OUTER = QuadratureSpec(abs_tol=1e-6, rel_tol=1e-6, max_depth=32, tail_tol=1e-9)
_BOUND_INNER = QuadratureSpec(abs_tol=1e-9, rel_tol=1e-9)
_INCREMENT_SPEC = QuadratureSpec(abs_tol=1e-15, rel_tol=1e-12, max_depth=30)
# The direct boundary-derivative integral cancels down to values several
# orders below its integrand, so relative accuracy of the ratio needs a
# deep absolute tolerance.
_DIRECT_SPEC = QuadratureSpec(abs_tol=1e-13, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# weighting measure for the integrated risk
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NuMeasure:
    """Finite measure weighting the integrated risk: gaussian, uniform, or
    a finite collection of point masses."""

    kind: str
    mean: float = 0.0
    sd: float = 1.0
    a: float = 0.0
    b: float = 1.0
    atoms: tuple[tuple[float, float], ...] = ()
    mass: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "uniform", "point_masses"):
            raise ValueError(f"unknown nu kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sd > 0.0:
            raise ValueError("gaussian nu requires sd > 0")
        if self.kind == "uniform" and not self.a < self.b:
            raise ValueError("uniform nu requires a < b")
        if self.kind == "point_masses":
            if not self.atoms:
                raise ValueError("point-mass nu requires at least one atom")
            if any(w < 0.0 for _, w in self.atoms):
                raise ValueError("point-mass weights must be >= 0")
        tm = self.total_mass
        if not (math.isfinite(tm) and tm > 0.0):
            raise ValueError(f"total mass must be finite and positive, got {tm!r}")

    @property
    def total_mass(self) -> float:
        if self.kind == "point_masses":
            return float(sum(w for _, w in self.atoms))
        return self.mass

    def density(self, x):
        """Lebesgue density (gaussian/uniform kinds only)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            z = (x - self.mean) / self.sd
            return self.mass * np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2.0 * math.pi))
        if self.kind == "uniform":
            inside = (x >= self.a) & (x <= self.b)
            return np.where(inside, self.mass / (self.b - self.a), 0.0)
        raise ValueError("point-mass nu has no density")

    def mass_outside(self, lo: float, hi: float) -> float:
        if self.kind == "gaussian":
            zlo = (lo - self.mean) / (self.sd * math.sqrt(2.0))
            zhi = (hi - self.mean) / (self.sd * math.sqrt(2.0))
            return self.mass * 0.5 * (2.0 + math.erf(zlo) - math.erf(zhi))
        if self.kind == "uniform":
            width = self.b - self.a
            covered = max(0.0, min(hi, self.b) - max(lo, self.a))
            return self.mass * (width - covered) / width
        return float(sum(w for x, w in self.atoms if not lo <= x <= hi))


def nu_gaussian(mean: float = 0.0, sd: float = 1.0, mass: float = 1.0) -> NuMeasure:
    return NuMeasure(kind="gaussian", mean=mean, sd=sd, mass=mass)


def nu_uniform(a: float, b: float, mass: float = 1.0) -> NuMeasure:
    return NuMeasure(kind="uniform", a=a, b=b, mass=mass)


def nu_point_masses(atoms: Sequence[tuple[float, float]]) -> NuMeasure:
    return NuMeasure(kind="point_masses", atoms=tuple((float(x), float(w)) for x, w in atoms))


def parse_nu(spec) -> NuMeasure:
    """Parse 'gauss:m,s' | 'uniform:a,b' | 'point:x=w[;x=w...]' or a dict."""
    if isinstance(spec, NuMeasure):
        return spec
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "gaussian":
            return nu_gaussian(float(spec.get("mean", 0.0)), float(spec.get("sd", 1.0)),
                               float(spec.get("mass", 1.0)))
        if kind == "uniform":
            return nu_uniform(float(spec["a"]), float(spec["b"]), float(spec.get("mass", 1.0)))
        if kind == "point_masses":
            return nu_point_masses([(float(x), float(w)) for x, w in spec["atoms"]])
        raise ValueError(f"bad nu spec {spec!r}")
    name, _, args = str(spec).partition(":")
    if name in ("gauss", "gaussian"):
        m, s = (args.split(",") + ["1"])[:2] if args else ("0", "1")
        return nu_gaussian(float(m), float(s))
    if name == "uniform":
        a, b = args.split(",")
        return nu_uniform(float(a), float(b))
    if name == "point":
        atoms = []
        for piece in args.split(";"):
            x, _, w = piece.partition("=")
            atoms.append((float(x), float(w) if w else 1.0))
        return nu_point_masses(atoms)
    raise ValueError(f"bad nu spec {spec!r}")


# ---------------------------------------------------------------------------
# cached fine-grid pack for vectorized influence integrals
# ---------------------------------------------------------------------------

# Where the invariant density is below this, influence-ratio integrands are
# treated as zero: the numerator decays at least as fast as the density, so
# the true integrand is far below every tolerance there, while CDF rounding
# divided by a vanishing density would otherwise produce noise.
_RATIO_FLOOR = 1e-18


@dataclass
class _GridPack:
    ys: np.ndarray
    F: np.ndarray
    Fbar: np.ndarray  # survival 1 - F with right-tail relative accuracy
    f: np.ndarray
    s2: np.ndarray
    sig: np.ndarray
    simpson_w: np.ndarray
    live: np.ndarray  # mask where the density is above the ratio floor


def _grid_pack(model: DiffusionModel, panels: int = 16384) -> _GridPack:
    pack = model._cache.get("eff_grid")
    if pack is not None:
        return pack
    table = _cdf_table(model)
    ys = np.linspace(table.lo, table.hi, panels + 1)
    F = _cdf_vec(model, ys)
    Fbar = _survival_vec(model, ys)
    f = _density_vec(model, ys)
    s2 = np.broadcast_to(np.asarray(_vec_call(model.diffusion_sq, ys)), ys.shape).copy()
    sig = np.broadcast_to(np.asarray(_vec_call(model.diffusion, ys)), ys.shape).copy()
    h = ys[1] - ys[0]
    w = np.full(ys.shape, 2.0 * h / 3.0)
    w[1::2] = 4.0 * h / 3.0
    w[0] = w[-1] = h / 3.0
    pack = _GridPack(ys=ys, F=F, Fbar=Fbar, f=f, s2=s2, sig=sig, simpson_w=w,
                     live=f > _RATIO_FLOOR)
    model._cache["eff_grid"] = pack
    return pack


def _pack_influence(pack: _GridPack, model: DiffusionModel, x: float) -> np.ndarray:
    """infl(x, y) on the pack grid in the cancellation-free product form
    F(y) * Fbar(x) for y <= x and F(x) * Fbar(y) for y > x."""
    fx = _cdf_fast(model, x)
    sx = _survival_fast(model, x)
    return np.where(pack.ys <= x, pack.F * sx, fx * pack.Fbar)


def _local_variance_at(model: DiffusionModel, x: float) -> float:
    """Vectorized fixed-grid evaluation of R(x, x); agrees with
    :func:`local_variance` to well inside every tolerance used here."""
    p = _grid_pack(model)
    infl = _pack_influence(p, model, x)
    integrand = np.zeros_like(p.ys)
    np.divide(4.0 * infl * infl, p.s2 * p.f, out=integrand, where=p.live)
    return float(np.dot(p.simpson_w, integrand))


# ---------------------------------------------------------------------------
# influence numerator and the variance bound
# ---------------------------------------------------------------------------

def influence_numerator(model: DiffusionModel, x: float, y: float) -> float:
    """F_S(min(x, y)) - F_S(x) * F_S(y).

    Evaluated as F(y) * (1 - F(x)) for y <= x and F(x) * (1 - F(y))
    otherwise, with the survival factor accumulated from the right tail,
    so the value keeps relative accuracy deep in both tails."""
    if y <= x:
        return invariant_cdf(model, y) * _survival_fast(model, x)
    return invariant_cdf(model, x) * _survival_fast(model, y)


def _influence_fast(model: DiffusionModel, x: float, y: float,
                    fx: float, sx: float) -> float:
    if y <= x:
        return _cdf_fast(model, y) * sx
    return fx * _survival_fast(model, y)


def local_variance(model: DiffusionModel, x: float,
                   spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Asymptotic variance R(x, x) = 4*int infl(x,y)^2/(sigma^2(y) f_S(y)) dy.

    A divergence error here means the variance integrand is not integrable
    at this threshold (the bound does not apply).
    """
    g = normalizing_constant(model)
    fx = _cdf_fast(model, x)
    sx = _survival_fast(model, x)
    raw = _density_integrand(model)

    def integrand(y: float) -> float:
        fy = raw(y) / g
        if fy < _DENSITY_FLOOR:
            return 0.0
        v = _influence_fast(model, x, y, fx, sx)
        return 4.0 * v * v / (float(model.diffusion_sq(y)) * fy)

    return integrate_line(integrand, spec).value


def efficiency_bound(model: DiffusionModel, nu: NuMeasure,
                     spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Global bound: the nu-integral of the local variance R(x, x).

    Exact weighted sum for point masses; quadrature with the nu density
    as weight otherwise. The quadrature kinds evaluate R(x, x) on the
    cached fine grid, which matches :func:`local_variance` far inside the
    tolerances used anywhere in this package.
    """
    if nu.kind == "point_masses":
        return compensated_sum(w * local_variance(model, x, spec) for x, w in nu.atoms)
    if nu.kind == "uniform":
        dens = nu.mass / (nu.b - nu.a)
        return dens * integrate(
            lambda x: _local_variance_at(model, x), nu.a, nu.b, _BOUND_INNER
        ).value
    return integrate_line(
        lambda x: _local_variance_at(model, x) * float(nu.density(x)),
        _BOUND_INNER,
    ).value


# ---------------------------------------------------------------------------
# error-decomposition machinery (executable identities)
# ---------------------------------------------------------------------------

def _split_points(a: float, b: float, x: float) -> list[tuple[float, float]]:
    """Oriented [a, b] split at the indicator kink x when it lies inside."""
    if a < x < b:
        return [(a, x), (x, b)]
    return [(a, b)]


def _signed_integral(f: Callable[[float], float], a: float, b: float,
                     x_kink: float, spec: QuadratureSpec) -> float:
    if a == b:
        return 0.0
    lo, hi = (a, b) if a < b else (b, a)
    total = 0.0
    for p, q in _split_points(lo, hi, x_kink):
        total += integrate(f, p, q, spec).value
    return total if b >= a else -total


def influence_primitive(model: DiffusionModel, x: float, y: float,
                        spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """2 * int_0^y infl(x, v) / (sigma^2(v) f_S(v)) dv (signed)."""
    g = normalizing_constant(model)
    fx = _cdf_fast(model, x)
    sx = _survival_fast(model, x)
    raw = _density_integrand(model)

    def integrand(v: float) -> float:
        fv = raw(v) / g
        if fv < _DENSITY_FLOOR:
            return 0.0
        return (2.0 * _influence_fast(model, x, v, fx, sx)
                / (float(model.diffusion_sq(v)) * fv))

    return _signed_integral(integrand, 0.0, y, x, spec)


def weight_primitive(wf: WeightFunction, model: DiffusionModel, x: float, y: float,
                     spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """2 * int_0^y 1{v<x} K_x(v) h(v) dv (signed)."""

    def integrand(v: float) -> float:
        if v >= x:
            return 0.0
        return 2.0 * kernel(wf, model, x, v) * float(wf.h(v))

    return _signed_integral(integrand, 0.0, y, x, spec)


def boundary_function(wf: WeightFunction, model: DiffusionModel, x: float, y: float,
                      spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Boundary term of the error decomposition; vanishes at y = 0 exactly."""
    if y == 0.0:
        return 0.0
    return (weight_primitive(wf, model, x, y, spec)
            + influence_primitive(model, x, y, spec))


def compensator(wf: WeightFunction, model: DiffusionModel, x: float, y: float) -> float:
    """Centered drift-side coefficient of the error representation:
    1{y<x} K_x(y) [2 h(y) S(y) + h'(y) sigma^2(y)] - F_S(x).

    Its stationary expectation is zero; that is what makes the estimator
    unbiased.
    """
    fx = invariant_cdf(model, x)
    if y >= x:
        return -fx
    bracket = (2.0 * float(wf.h(y)) * float(model.drift(y))
               + float(wf.h_prime(y)) * float(model.diffusion_sq(y)))
    return kernel(wf, model, x, y) * bracket - fx


def martingale_weight(wf: WeightFunction, model: DiffusionModel, x: float, y: float) -> float:
    """Coefficient of dW in the raw error representation:
    2 * 1{y<x} h(y) K_x(y) sigma(y)."""
    if y >= x:
        return 0.0
    return 2.0 * float(wf.h(y)) * kernel(wf, model, x, y) * float(model.diffusion(y))


def boundary_derivative_closed(wf: WeightFunction, model: DiffusionModel,
                               x: float, z: float) -> float:
    """Closed form of the boundary-function derivative:
    2*1{z<x} h(z) K_x(z) + 2*infl(x, z) / (sigma^2(z) f_S(z))."""
    fz = invariant_density(model, z)
    if fz < 1e-300:
        raise TailError(f"invariant density underflows at z={z!r}")
    first = 2.0 * float(wf.h(z)) * kernel(wf, model, x, z) if z < x else 0.0
    return first + 2.0 * influence_numerator(model, x, z) / (float(model.diffusion_sq(z)) * fz)


def boundary_derivative_direct(wf: WeightFunction, model: DiffusionModel,
                               x: float, z: float,
                               spec: QuadratureSpec = _DIRECT_SPEC) -> float:
    """Quadrature form of the boundary-function derivative:
    (2 / (f_S(z) sigma^2(z))) * int_{-inf}^z compensator(v) f_S(v) dv.

    Equals the closed form by an integration-by-parts identity; both are
    exposed so the identity can be verified numerically.
    """
    table = _cdf_table(model)
    if z <= table.lo:
        return 0.0
    g = normalizing_constant(model)
    raw = _density_integrand(model)
    fx = invariant_cdf(model, x)

    def integrand(v: float) -> float:
        fv = raw(v) / g
        if v >= x:
            cv = -fx
        else:
            bracket = (2.0 * float(wf.h(v)) * float(model.drift(v))
                       + float(wf.h_prime(v)) * float(model.diffusion_sq(v)))
            cv = kernel(wf, model, x, v) * bracket - fx
        return cv * fv

    total = _signed_integral(integrand, table.lo, z, x, spec)
    fz = invariant_density(model, z)
    if fz < 1e-300:
        raise TailError(f"invariant density underflows at z={z!r}")
    return 2.0 * total / (fz * float(model.diffusion_sq(z)))


def ode_residual(wf: WeightFunction, model: DiffusionModel, x: float, y: float,
                 step: float = 1e-4) -> float:
    """Finite-difference residual of M'(y) S(y) + M''(y) sigma^2(y)/2 = c(y).

    The central differences of the boundary function M are formed from its
    one-panel increments (M(y+h) - M(y) is exactly the integral of M' over
    [y, y+h]), which keeps quadrature noise out of the h^-2 amplification.
    """
    mker = lambda v: boundary_derivative_closed(wf, model, x, v)
    up = integrate(mker, y, y + step, _INCREMENT_SPEC).value
    down = integrate(mker, y - step, y, _INCREMENT_SPEC).value
    d1 = (up + down) / (2.0 * step)
    d2 = (up - down) / (step * step)
    return (d1 * float(model.drift(y)) + 0.5 * d2 * float(model.diffusion_sq(y))
            - compensator(wf, model, x, y))


# ---------------------------------------------------------------------------
# pathwise decomposition check
# ---------------------------------------------------------------------------

def _influence_ratio_vec(model: DiffusionModel, x: float, ys: np.ndarray) -> np.ndarray:
    """2 * (F(x) F(y) - F(min(x, y))) / (sigma(y) f_S(y)) on an array.

    The numerator is -infl(x, y), evaluated in the stable product form."""
    fx = _cdf_fast(model, x)
    sx = _survival_fast(model, x)
    fy = _cdf_vec(model, ys)
    sy = _survival_vec(model, ys)
    infl = np.where(ys <= x, fy * sx, fx * sy)
    dens = _density_vec(model, ys)
    sig = np.broadcast_to(np.asarray(_vec_call(model.diffusion, ys)), ys.shape)
    return -2.0 * infl / (sig * dens)


def representation_discrepancy(path: Path, wf: WeightFunction, model: DiffusionModel,
                               x: float) -> float:
    """|scaled error - its decomposition| along one stored trajectory.

    Left side: sqrt(T) * (estimate(x) - F_S(x)). Right side: the boundary
    increment (M(X_T) - M(X_0))/sqrt(T) plus the discretized stochastic
    integral of the influence ratio against the stored Wiener increments.
    The residual is the discretization error, O(sqrt(dt)).
    """
    if path.wiener_increments is None:
        raise ValueError("representation check requires a path with stored Wiener increments")
    T = path.horizon_T
    est = unbiased_estimate(path, wf, model, x)
    lhs = math.sqrt(T) * (est - invariant_cdf(model, x))
    m_end = boundary_function(wf, model, x, float(path.values[-1]))
    m_start = boundary_function(wf, model, x, float(path.values[0]))
    psi = _influence_ratio_vec(model, x, path.values[:-1])
    mart = compensated_sum(psi * path.wiener_increments)
    rhs = (m_end - m_start) / math.sqrt(T) + mart / math.sqrt(T)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# moment-condition screens (double quadrature, flags only)
# ---------------------------------------------------------------------------

def _expected_square_of_cumulative(pack: _GridPack, integrand_vals: np.ndarray) -> float:
    """E[g(xi)^2] for g(y) = int_0^y (grid integrand), via cumulative trapezoid."""
    h = pack.ys[1] - pack.ys[0]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (integrand_vals[1:] + integrand_vals[:-1]))])
    base = float(np.interp(0.0, pack.ys, cum))
    g = cum - base
    return float(np.dot(pack.simpson_w, g * g * pack.f))


def influence_moment_finite(model: DiffusionModel, nu: NuMeasure) -> tuple[bool, float]:
    """Screen: nu-integral of E[(influence primitive at xi)^2] converges.

    Divergence is declared only via the tail-doubling criterion of the
    outer quadrature, so a very slowly diverging integral may pass; this
    is a screen, not a proof.
    """
    pack = _grid_pack(model)

    def inner(x: float) -> float:
        infl = _pack_influence(pack, model, x)
        vals = np.zeros_like(pack.ys)
        np.divide(2.0 * infl, pack.s2 * pack.f, out=vals, where=pack.live)
        return _expected_square_of_cumulative(pack, vals)

    return _nu_weighted_screen(inner, nu)


def weight_moment_finite(wf: WeightFunction, model: DiffusionModel,
                         nu: NuMeasure) -> tuple[bool, float]:
    """Screen: nu-integral of E[(weight primitive at xi)^2] converges."""
    pack = _grid_pack(model)
    P = primitive(wf, model, float(pack.ys[0]), float(pack.ys[-1]))
    Pys = np.asarray(P(pack.ys), dtype=float)
    hys = np.broadcast_to(np.asarray(_vec_call(wf.h, pack.ys)), pack.ys.shape)

    def inner(x: float) -> float:
        if pack.ys[0] <= x <= pack.ys[-1]:
            px = float(P(x))
        else:
            # every primitive here is based at 0, so P(x) is the kernel to 0
            px = kernel(wf, model, x, 0.0)
        vals = np.where(pack.ys < x, 2.0 * (px - Pys) * hys, 0.0)
        return _expected_square_of_cumulative(pack, vals)

    return _nu_weighted_screen(inner, nu)


def _nu_weighted_screen(inner: Callable[[float], float], nu: NuMeasure) -> tuple[bool, float]:
    try:
        if nu.kind == "point_masses":
            value = compensated_sum(w * inner(x) for x, w in nu.atoms)
        elif nu.kind == "uniform":
            dens = nu.mass / (nu.b - nu.a)
            value = dens * integrate(inner, nu.a, nu.b, _SCREEN_OUTER).value
        else:
            value = integrate_line(lambda x: inner(x) * float(nu.density(x)),
                                   _SCREEN_OUTER).value
    except DivergenceError:
        return False, math.nan
    return math.isfinite(value), value


# ---------------------------------------------------------------------------
# Monte Carlo integrated risk
# ---------------------------------------------------------------------------

@dataclass
class RiskReport:
    """Per-threshold bias/variance and the scaled integrated risk vs bound."""

    xs: np.ndarray
    bias: np.ndarray
    scaled_variance: np.ndarray
    local_bound: np.ndarray
    scaled_risk: float
    bound: float
    ratio: float
    replications: int
    horizon_T: float
    dt: float
    estimator_tag: str
    path_seeds: list[int]
    aborted: int = 0

    def __post_init__(self) -> None:
        if not self.scaled_risk >= 0.0:
            raise ValueError("scaled risk must be >= 0")
        if not self.bound > 0.0:
            raise ValueError("bound must be > 0")
        n = len(self.xs)
        if not (len(self.bias) == len(self.scaled_variance) == len(self.local_bound) == n):
            raise ValueError("report arrays must share the grid length")

    def to_dict(self, config: dict | None = None) -> dict:
        return {
            "xs": [float(v) for v in self.xs],
            "bias": [float(v) for v in self.bias],
            "scaled_variance": [float(v) for v in self.scaled_variance],
            "local_bound": [float(v) for v in self.local_bound],
            "scaled_risk": self.scaled_risk,
            "bound": self.bound,
            "ratio": self.ratio,
            "config": dict(config or {}),
        }


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    w = np.zeros_like(grid)
    w[1:] += 0.5 * np.diff(grid)
    w[:-1] += 0.5 * np.diff(grid)
    return w


def _nu_quad_weights(nu: NuMeasure, grid: np.ndarray) -> np.ndarray:
    """Weights making sum(w * e(grid)^2) the nu-integral of e^2 on the grid."""
    if nu.kind == "point_masses":
        w = np.zeros_like(grid)
        for x, wt in nu.atoms:
            idx = int(np.searchsorted(grid, x))
            if idx >= len(grid) or grid[idx] != x:
                raise ConfigError([f"evaluation grid is missing nu atom at x={x!r}"])
            w[idx] += wt
        return w
    return _trapezoid_weights(grid) * np.asarray(nu.density(grid), dtype=float)


@dataclass(frozen=True)
class _RiskContext:
    model: DiffusionModel
    choice: EstimatorChoice
    sim: SimConfig
    eval_xs: np.ndarray
    truth: np.ndarray


def _one_replication(ctx: _RiskContext, r: int) -> np.ndarray | None:
    seed = derive_substream_seed(ctx.sim.seed, r)
    cfg = replace(ctx.sim, seed=seed, init="stationary", store_wiener=False)
    try:
        path = simulate_path(ctx.model, cfg)
    except SimulationError:
        return None
    curve = estimate_curve(path, ctx.eval_xs, ctx.choice, ctx.model)
    return curve.values - ctx.truth


_POOL_CTX: _RiskContext | None = None


def _pool_worker(r: int):
    err = _one_replication(_POOL_CTX, r)
    return r, err


def empirical_risk(
    model: DiffusionModel,
    estimator,
    nu: NuMeasure,
    sim: SimConfig,
    replications: int,
    xs,
    workers: int = 1,
) -> RiskReport:
    """Monte Carlo integrated risk of an estimator against the bound.

    Simulates ``replications`` stationary paths with deterministic
    substream seeds, evaluates the estimator curve on a fixed grid (shared
    evaluation points reduce comparison variance), and reports per-x bias,
    the variance of sqrt(T)-scaled errors, the scaled integrated risk
    rho = T * mean over reps of the nu-integral of squared error, and the
    ratio to the quadrature bound. Reductions run in replication order with
    compensated summation, so results do not depend on worker scheduling.

    Replications whose path explodes are dropped; more than 1% of them
    aborting fails the run.
    """
    xs = np.asarray(xs, dtype=float)
    violations = []
    if replications < 2:
        violations.append(f"replications must be >= 2, got {replications}")
    if xs.size < 2:
        violations.append("grid needs at least 2 points")
    elif not np.all(np.diff(xs) > 0.0):
        violations.append("grid must be sorted strictly increasing")
    if xs.size >= 2:
        outside = nu.mass_outside(float(xs[0]), float(xs[-1]))
        if outside >= 1e-6 * nu.total_mass:
            violations.append(
                f"grid hull [{xs[0]!r}, {xs[-1]!r}] misses nu mass {outside!r} "
                "(must be < 1e-6 of the total)"
            )
    if violations:
        raise ConfigError(violations)

    choice = as_estimator(estimator)
    eval_xs = xs
    if nu.kind == "point_masses":
        eval_xs = np.unique(np.concatenate([xs, [x for x, _ in nu.atoms]]))
    truth = np.array([invariant_cdf(model, float(x)) for x in eval_xs])
    weights = _nu_quad_weights(nu, eval_xs)
    ctx = _RiskContext(model=model, choice=choice, sim=sim, eval_xs=eval_xs, truth=truth)

    errors: dict[int, np.ndarray | None] = {}
    if workers <= 1:
        for r in range(replications):
            errors[r] = _one_replication(ctx, r)
    else:
        errors = _run_pool(ctx, replications, workers)

    kept = [errors[r] for r in range(replications) if errors[r] is not None]
    aborted = replications - len(kept)
    if aborted > 0.01 * replications:
        raise RiskRunError(
            f"{aborted}/{replications} replications aborted (explosions); run failed"
        )
    if len(kept) < 2:
        raise RiskRunError("fewer than 2 replications completed")

    E = np.vstack(kept)  # (reps, grid)
    R = E.shape[0]
    T = sim.effective_T
    n_eval = E.shape[1]
    bias_eval = np.array([compensated_sum(E[:, j]) / R for j in range(n_eval)])
    var_eval = np.array([
        compensated_sum((E[:, j] - bias_eval[j]) ** 2) / (R - 1) for j in range(n_eval)
    ])
    risk_each = [compensated_sum(weights * E[r] * E[r]) for r in range(R)]
    scaled_risk = T * compensated_sum(risk_each) / R

    keep_idx = np.searchsorted(eval_xs, xs)
    local_bound = np.array([_local_variance_at(model, float(x)) for x in xs])
    bound = efficiency_bound(model, nu)
    seeds = [derive_substream_seed(sim.seed, r) for r in range(replications)]
    return RiskReport(
        xs=xs,
        bias=bias_eval[keep_idx],
        scaled_variance=T * var_eval[keep_idx],
        local_bound=local_bound,
        scaled_risk=scaled_risk,
        bound=bound,
        ratio=scaled_risk / bound,
        replications=R,
        horizon_T=T,
        dt=sim.dt,
        estimator_tag=choice.tag,
        path_seeds=seeds,
        aborted=aborted,
    )


def _run_pool(ctx: _RiskContext, replications: int, workers: int) -> dict:
    import multiprocessing as mp

    global _POOL_CTX
    try:
        mp_ctx = mp.get_context("fork")
    except ValueError:
        # No fork on this platform: fall back to the serial path.
        return {r: _one_replication(ctx, r) for r in range(replications)}
    _POOL_CTX = ctx
    try:
        with mp_ctx.Pool(processes=workers) as pool:
            results = pool.map(_pool_worker, range(replications))
    finally:
        _POOL_CTX = None
    return dict(results)
