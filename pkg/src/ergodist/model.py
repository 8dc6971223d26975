"""Scalar diffusion models and their invariant law.

A model is dX_t = S(X_t) dt + sigma(X_t) dW_t with drift ``S`` and known
positive diffusion coefficient ``sigma``. When the scale function diverges
at both infinities and the normalizer

    G(S) = integral over R of exp{2 * int_0^x S/sigma^2} / sigma^2(x) dx

is finite, the process is ergodic with invariant density

    f_S(y) = exp{2 * int_0^y S/sigma^2} / (G(S) * sigma^2(y)).

This module computes the scale exponent and scale function, G(S), the
invariant density/CDF/quantile, stationary expectations, and a numerical
ergodicity screen. Per-model caches (normalizer, exponent and CDF tables)
are write-once; racing writers compute identical values, so instances are
safe for concurrent reads.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    DivergenceError,
    EvaluationError,
    ExponentOverflowError,
    TailError,
)
from .numerics import (
    DEFAULT_QUADRATURE,
    QuadratureSpec,
    integrate,
    integrate_line,
    invert_monotone,
)

# exp argument beyond which float64 overflows
_EXP_LIMIT = 709.0
# per-panel tolerance for cumulative tables (errors accumulate across panels)
_PANEL_SPEC = QuadratureSpec(abs_tol=1e-13, rel_tol=1e-12, max_depth=30)
_CDF_PANELS = 2048
_EXP_PANELS = 1024
# one-sided mass below this is treated as numerically zero when locating
# the support cutoffs of the invariant law
_TAIL_MASS = 1e-13


@dataclass(frozen=True)
class DiffusionModel:
    """Drift/diffusion function handles plus metadata.

    ``sigma_const`` and ``scale_exponent_closed`` are optional fast paths:
    catalog models carry the constant diffusion value and the closed-form
    scale exponent 2*int_0^y S/sigma^2; custom models fall back to
    quadrature. ``spec`` echoes the catalog family/params for provenance.
    """

    drift: Callable[[Any], Any]
    diffusion: Callable[[Any], Any]
    diffusion_sq: Callable[[Any], Any]
    label: str = "custom"
    sigma_const: float | None = None
    scale_exponent_closed: Callable[[Any], Any] | None = None
    spec: dict | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)


@dataclass(frozen=True)
class ErgodicityReport:
    es_ok: bool
    vs_diverges: bool
    g_finite: bool
    g_value: float
    probe_points: list[float]

    def all_ok(self) -> bool:
        return self.es_ok and self.vs_diverges and self.g_finite


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def ornstein_uhlenbeck(theta: float = 1.0, s: float = 1.0) -> DiffusionModel:
    """Mean-reverting model S(x) = -theta*x with constant diffusion s."""
    if not (theta > 0.0 and s > 0.0):
        raise ValueError("ornstein_uhlenbeck requires theta > 0 and s > 0")
    s2 = s * s
    return DiffusionModel(
        drift=lambda x: -theta * x,
        diffusion=lambda x: s,
        diffusion_sq=lambda x: s2,
        label=f"ou(theta={theta:g},s={s:g})",
        sigma_const=s,
        scale_exponent_closed=lambda y: (-theta / s2) * y * y,
        spec={"family": "ou", "params": {"theta": theta, "s": s}},
    )


def quartic_well() -> DiffusionModel:
    """Non-Gaussian stress model S(x) = -x^3 with unit diffusion."""
    return DiffusionModel(
        drift=lambda x: -(x * x * x),
        diffusion=lambda x: 1.0,
        diffusion_sq=lambda x: 1.0,
        label="quartic",
        sigma_const=1.0,
        scale_exponent_closed=lambda y: -0.5 * y * y * y * y,
        spec={"family": "quartic", "params": {}},
    )


def shifted_ou(m: float = 1.0) -> DiffusionModel:
    """Off-center mean reversion S(x) = -(x - m) with unit diffusion."""
    if not abs(m) <= 20.0:
        # G(S) carries a factor exp(m^2); keep it inside float range.
        raise ValueError("shifted_ou requires |m| <= 20")
    return DiffusionModel(
        drift=lambda x: -(x - m),
        diffusion=lambda x: 1.0,
        diffusion_sq=lambda x: 1.0,
        label=f"shifted_ou(m={m:g})",
        sigma_const=1.0,
        scale_exponent_closed=lambda y: y * (2.0 * m - y),
        spec={"family": "shifted_ou", "params": {"m": m}},
    )


MODEL_FAMILIES: dict[str, Callable[..., DiffusionModel]] = {
    "ou": ornstein_uhlenbeck,
    "quartic": quartic_well,
    "shifted_ou": shifted_ou,
}


def model_from_spec(spec: dict) -> DiffusionModel:
    """Build a catalog model from {"family": ..., "params": {...}}."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise ValueError("model spec must be a dict with a 'family' key")
    family = spec["family"]
    if family not in MODEL_FAMILIES:
        raise ValueError(f"unknown model family {family!r}; known: {sorted(MODEL_FAMILIES)}")
    params = spec.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ValueError("model spec 'params' must be a dict")
    try:
        return MODEL_FAMILIES[family](**params)
    except TypeError as exc:
        raise ValueError(f"bad params for model family {family!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------

def _sigma_sq(model: DiffusionModel, y: float) -> float:
    s2 = float(model.diffusion_sq(y))
    if not (s2 > 0.0) or not math.isfinite(s2):
        raise EvaluationError(y, f"sigma^2 must be positive and finite, got {s2!r} at y={y!r}")
    return s2


def _vec_call(fn: Callable, arr: np.ndarray) -> np.ndarray:
    """Evaluate a scalar-or-vector callable on an array, broadcasting scalars."""
    out = fn(arr)
    out = np.asarray(out, dtype=float)
    if out.shape == arr.shape:
        return out
    if out.ndim == 0:
        return np.broadcast_to(out, arr.shape)
    return np.array([float(fn(float(t))) for t in arr])


# ---------------------------------------------------------------------------
# scale exponent: 2 * int_0^y S/sigma^2
# ---------------------------------------------------------------------------

def scale_exponent(model: DiffusionModel, y: float) -> float:
    """Signed exponent 2*int_0^y S(v)/sigma^2(v) dv.

    Uses the model's closed form when present, quadrature otherwise.
    """
    if model.scale_exponent_closed is not None:
        return float(model.scale_exponent_closed(y))
    if y == 0.0:
        return 0.0
    integrand = lambda v: float(model.drift(v)) / _sigma_sq(model, v)
    if y > 0.0:
        return 2.0 * integrate(integrand, 0.0, y).value
    return -2.0 * integrate(integrand, y, 0.0).value


class _UniformCubic:
    """Cubic interpolant on uniform nodes with a cheap scalar fast path."""

    def __init__(self, nodes: np.ndarray, values: np.ndarray,
                 deriv_lo: float, deriv_hi: float):
        self.lo = float(nodes[0])
        self.hi = float(nodes[-1])
        self.step = float(nodes[1] - nodes[0])
        self.n = len(nodes) - 1
        self.spline = CubicSpline(nodes, values, bc_type=((1, deriv_lo), (1, deriv_hi)))
        # per-interval [c3, c2, c1, c0] as plain floats for scalar calls
        self._coefs = self.spline.c.T.tolist()
        self.node_values = values.tolist()

    def scalar(self, x: float) -> float:
        if x <= self.lo:
            return self.node_values[0]
        if x >= self.hi:
            return self.node_values[-1]
        k = int((x - self.lo) / self.step)
        if k >= self.n:
            k = self.n - 1
        c3, c2, c1, c0 = self._coefs[k]
        dx = x - (self.lo + k * self.step)
        return ((c3 * dx + c2) * dx + c1) * dx + c0

    def vector(self, xs: np.ndarray) -> np.ndarray:
        return self.spline(np.clip(xs, self.lo, self.hi))


def _exponent_table(model: DiffusionModel, halfwidth: float) -> _UniformCubic:
    """Cumulative-quadrature table for the scale exponent of a custom model."""
    cached = model._cache.get("exp_table")
    if cached is not None and cached.lo <= -halfwidth and cached.hi >= halfwidth:
        return cached
    w = max(halfwidth, DEFAULT_QUADRATURE.initial_halfwidth)
    if cached is not None:
        w = max(w, 2.0 * cached.hi)
    integrand = lambda v: float(model.drift(v)) / _sigma_sq(model, v)
    nodes = np.linspace(-w, w, 2 * _EXP_PANELS + 1)
    k0 = _EXP_PANELS  # node at exactly 0.0
    vals = np.empty_like(nodes)
    vals[k0] = 0.0
    acc = 0.0
    for k in range(k0, 2 * _EXP_PANELS):
        acc += 2.0 * integrate(integrand, float(nodes[k]), float(nodes[k + 1]), _PANEL_SPEC).value
        vals[k + 1] = acc
    acc = 0.0
    for k in range(k0, 0, -1):
        acc -= 2.0 * integrate(integrand, float(nodes[k - 1]), float(nodes[k]), _PANEL_SPEC).value
        vals[k - 1] = acc
    table = _UniformCubic(nodes, vals, 2.0 * integrand(float(nodes[0])),
                          2.0 * integrand(float(nodes[-1])))
    model._cache["exp_table"] = table
    return table


def _exponent_scalar(model: DiffusionModel, y: float) -> float:
    if model.scale_exponent_closed is not None:
        return float(model.scale_exponent_closed(y))
    return _exponent_table(model, abs(y)).scalar(y)


def _exponent_vec(model: DiffusionModel, ys: np.ndarray) -> np.ndarray:
    if model.scale_exponent_closed is not None:
        return _vec_call(model.scale_exponent_closed, ys)
    halfwidth = float(np.max(np.abs(ys))) if ys.size else 1.0
    return _exponent_table(model, halfwidth).vector(ys)


# ---------------------------------------------------------------------------
# scale function V_S
# ---------------------------------------------------------------------------

def scale_function(model: DiffusionModel, x: float) -> float:
    """V_S(x) = int_0^x exp{-2*int_0^y S/sigma^2} dy (signed)."""

    def integrand(y: float) -> float:
        e = -_exponent_scalar(model, y)
        if e > _EXP_LIMIT:
            raise ExponentOverflowError(y, f"scale exponent {-e!r} saturates exp at y={y!r}")
        return math.exp(e)

    if x == 0.0:
        return 0.0
    if x > 0.0:
        return integrate(integrand, 0.0, x).value
    return -integrate(integrand, x, 0.0).value


# ---------------------------------------------------------------------------
# normalizer, density, CDF
# ---------------------------------------------------------------------------

def _density_integrand(model: DiffusionModel) -> Callable[[float], float]:
    def g(y: float) -> float:
        e = _exponent_scalar(model, y)
        if e > _EXP_LIMIT:
            raise ExponentOverflowError(y, f"scale exponent {e!r} saturates exp at y={y!r}")
        return math.exp(e) / _sigma_sq(model, y)

    return g


def normalizing_constant(model: DiffusionModel, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """G(S), cached on the model after the first computation.

    Raises :class:`DivergenceError` when the integral fails the tail
    criterion or the exponent overflows (both mean the model is not
    ergodic along the probed range).
    """
    g = model._cache.get("g")
    if g is not None:
        return g
    try:
        res = integrate_line(_density_integrand(model), spec)
    except ExponentOverflowError as exc:
        raise DivergenceError(
            f"normalizer divergence-suspected: scale exponent overflow at y={exc.abscissa!r}"
        ) from exc
    value = res.value
    if not (value > 0.0) or not math.isfinite(value):
        raise DivergenceError(f"normalizer must be finite and positive, got {value!r}")
    model._cache["g"] = value
    return value


def invariant_density(model: DiffusionModel, y: float) -> float:
    """f_S(y) = exp{scale exponent}/(G(S) * sigma^2(y)); G(S) is cached."""
    g = normalizing_constant(model)
    e = _exponent_scalar(model, y)
    if e > _EXP_LIMIT:
        raise ExponentOverflowError(y, f"scale exponent {e!r} saturates exp at y={y!r}")
    return math.exp(e) / (g * _sigma_sq(model, y))


def _density_vec(model: DiffusionModel, ys: np.ndarray) -> np.ndarray:
    g = normalizing_constant(model)
    e = _exponent_vec(model, ys)
    with np.errstate(over="raise"):
        try:
            num = np.exp(e)
        except FloatingPointError as exc:
            bad = float(ys[int(np.argmax(e))])
            raise ExponentOverflowError(bad, f"scale exponent overflow at y={bad!r}") from exc
    return num / (g * _vec_call(model.diffusion_sq, ys))


@dataclass
class _CdfTable:
    lo: float
    hi: float
    interp: _UniformCubic
    surv_interp: _UniformCubic
    node_xs: list[float]
    node_vals: list[float]
    step: float


def _tail_cutoff(model: DiffusionModel, side: int) -> float:
    """Abscissa beyond which the one-sided invariant mass is < _TAIL_MASS."""
    f = _density_integrand(model)
    g = normalizing_constant(model)
    L = DEFAULT_QUADRATURE.initial_halfwidth
    cap = L * 2.0**20
    while True:
        a, b = (L, 2.0 * L) if side > 0 else (-2.0 * L, -L)
        shell = integrate(f, a, b, _PANEL_SPEC).value / g
        if shell < _TAIL_MASS:
            return side * 2.0 * L
        L *= 2.0
        if L > cap:
            raise DivergenceError("invariant mass tail did not fall off; model not ergodic?")


def _cdf_table(model: DiffusionModel) -> _CdfTable:
    cached = model._cache.get("cdf_table")
    if cached is not None:
        return cached
    g = normalizing_constant(model)
    lo = _tail_cutoff(model, -1)
    hi = _tail_cutoff(model, +1)
    raw = _density_integrand(model)
    f = lambda y: raw(y) / g
    nodes = np.linspace(lo, hi, _CDF_PANELS + 1)
    panels = np.empty(_CDF_PANELS)
    for k in range(_CDF_PANELS):
        panels[k] = integrate(raw, float(nodes[k]), float(nodes[k + 1]), _PANEL_SPEC).value / g
    vals = np.concatenate([[0.0], np.cumsum(panels)])
    np.maximum.accumulate(vals, out=vals)
    # Survival values accumulate from the right so 1 - F keeps full relative
    # accuracy in the right tail (the two differ there by float cancellation).
    surv = np.concatenate([np.cumsum(panels[::-1])[::-1], [0.0]])
    np.minimum.accumulate(surv, out=surv)
    interp = _UniformCubic(nodes, vals, f(float(nodes[0])), f(float(nodes[-1])))
    surv_interp = _UniformCubic(nodes, surv, -f(float(nodes[0])), -f(float(nodes[-1])))
    table = _CdfTable(lo=float(lo), hi=float(hi), interp=interp, surv_interp=surv_interp,
                      node_xs=nodes.tolist(), node_vals=vals.tolist(),
                      step=float(nodes[1] - nodes[0]))
    model._cache["cdf_table"] = table
    return table


def invariant_cdf(model: DiffusionModel, x: float) -> float:
    """F_S(x) by tail-truncated cumulative quadrature, clamped to [0, 1].

    Node values are accumulated once per model; a call integrates the
    density over the partial panel from the nearest node below x.
    """
    t = _cdf_table(model)
    if x <= t.lo:
        return 0.0
    if x >= t.hi:
        return 1.0
    k = int((x - t.lo) / t.step)
    k = min(k, len(t.node_xs) - 2)
    base = t.node_vals[k]
    xk = t.node_xs[k]
    if x > xk:
        g = normalizing_constant(model)
        base += integrate(_density_integrand(model), xk, x, _PANEL_SPEC).value / g
    return min(1.0, max(0.0, base))


def _cdf_fast(model: DiffusionModel, x: float) -> float:
    """Spline CDF lookup for hot integrands; agrees with invariant_cdf to ~1e-9."""
    t = _cdf_table(model)
    return min(1.0, max(0.0, t.interp.scalar(x)))


def _cdf_vec(model: DiffusionModel, xs: np.ndarray) -> np.ndarray:
    t = _cdf_table(model)
    return np.clip(t.interp.vector(np.asarray(xs, dtype=float)), 0.0, 1.0)


def _survival_fast(model: DiffusionModel, x: float) -> float:
    """1 - F_S(x) with full relative accuracy in the right tail."""
    t = _cdf_table(model)
    return min(1.0, max(0.0, t.surv_interp.scalar(x)))


def _survival_vec(model: DiffusionModel, xs: np.ndarray) -> np.ndarray:
    t = _cdf_table(model)
    return np.clip(t.surv_interp.vector(np.asarray(xs, dtype=float)), 0.0, 1.0)


def invariant_quantile(model: DiffusionModel, u: float, tol: float = 1e-10) -> float:
    """x with |F_S(x) - u| <= tol; bracket taken from the CDF node table."""
    if not (0.0 < u < 1.0):
        raise ValueError(f"quantile level must lie in (0, 1), got {u!r}")
    t = _cdf_table(model)
    if u <= t.node_vals[0] + 1e-12 or u >= t.node_vals[-1] - 1e-12:
        raise TailError(
            f"quantile level {u!r} is deeper than the quadrature truncation "
            f"range [{t.node_vals[0]!r}, {t.node_vals[-1]!r}] supports"
        )
    k = bisect.bisect_left(t.node_vals, u)
    k = max(1, min(k, len(t.node_xs) - 1))
    lo, hi = t.node_xs[k - 1], t.node_xs[k]
    return invert_monotone(lambda x: invariant_cdf(model, x), u, lo, hi, tol)


def stationary_expectation(
    model: DiffusionModel,
    g: Callable[[float], float],
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """E[g(xi)] = int g(z) f_S(z) dz for xi with the invariant law.

    Raises :class:`DivergenceError` when the moment does not exist: either
    the tail doubling fails to converge, or g grows so fast against the
    invariant density that the integrand leaves the floating range first.
    """
    G = normalizing_constant(model)
    raw = _density_integrand(model)
    try:
        return integrate_line(lambda z: float(g(z)) * raw(z) / G, spec).value
    except EvaluationError as exc:
        raise DivergenceError(
            f"moment integrand invalid or overflowing at z={exc.abscissa!r}; "
            "the moment is treated as nonexistent"
        ) from exc


# ---------------------------------------------------------------------------
# ergodicity screen
# ---------------------------------------------------------------------------

def check_ergodicity(model: DiffusionModel, probe_radius: float) -> ErgodicityReport:
    """Numerical screen (not a proof) of the ergodicity conditions.

    es_ok: the growth ratio (x*S(x) + sigma^2(x)) / (1 + x^2) stays bounded
    along doubling probe radii (its max fits a finite growth constant).
    vs_diverges: |V_S(+/-L)| increases strictly along L = probe_radius*2^k;
    exponent saturation counts as divergence. g_finite: G(S) converged.
    """
    if not probe_radius > 0.0:
        raise ValueError("probe_radius must be > 0")
    radii = [probe_radius * 2.0**k for k in range(7)]

    def growth_ratio(y: float) -> float:
        return (y * float(model.drift(y)) + _sigma_sq(model, y)) / (1.0 + y * y)

    es_ok = True
    for sign in (+1.0, -1.0):
        seq = [growth_ratio(sign * r) for r in radii]
        if not all(math.isfinite(v) for v in seq):
            es_ok = False
            continue
        inner_max = max(seq[:-1])
        # 10% headroom: a bounded ratio may plateau, a violating one doubles.
        if seq[-1] > inner_max + 0.1 * max(abs(inner_max), 1.0):
            es_ok = False

    vs_diverges = True
    for sign in (+1.0, -1.0):
        prev = 0.0
        for r in radii:
            try:
                v = abs(scale_function(model, sign * r))
            except ExponentOverflowError:
                break  # saturation: |V_S| off the float range counts as divergence
            if not v > prev:
                vs_diverges = False
                break
            prev = v

    try:
        g_value = normalizing_constant(model)
        g_finite = True
    except DivergenceError:
        g_value = math.nan
        g_finite = False

    return ErgodicityReport(
        es_ok=es_ok,
        vs_diverges=vs_diverges,
        g_finite=g_finite,
        g_value=g_value,
        probe_points=radii,
    )
