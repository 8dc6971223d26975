"""Deterministic numerical kernels shared by every other module.

Adaptive composite Simpson quadrature (finite and whole-line), monotone
function inversion, and compensated summation. All routines are pure
functions of their inputs and safe to call concurrently.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

from .errors import BracketError, DivergenceError, EvaluationError

Func = Callable[[float], float]

# Halfwidth growth cap for whole-line integrals; past this the integral is
# treated as divergence-suspected rather than merely slow.
_LINE_DOUBLING_CAP = 2.0**20


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and limits for the quadrature routines.

    Defaults are tight enough that quadrature "truth" values dominate Monte
    Carlo noise by several orders of magnitude. Slowly decaying integrands
    (heavier than ~x^-2 tails) need a larger ``initial_halfwidth`` and a
    looser ``tail_tol`` to converge under the doubling cap.
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_depth: int = 40
    tail_tol: float = 1e-12
    initial_halfwidth: float = 8.0

    def __post_init__(self) -> None:
        if not (self.abs_tol > 0.0):
            raise ValueError("abs_tol must be > 0")
        if not (self.rel_tol > 0.0):
            raise ValueError("rel_tol must be > 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (self.tail_tol > 0.0):
            raise ValueError("tail_tol must be > 0")
        if not (self.initial_halfwidth > 0.0):
            raise ValueError("initial_halfwidth must be > 0")


@dataclass(frozen=True)
class QuadResult:
    value: float
    error_estimate: float
    converged: bool


DEFAULT_QUADRATURE = QuadratureSpec()


def _feval(f: Func, x: float) -> float:
    try:
        y = float(f(x))
    except OverflowError as exc:
        raise EvaluationError(x, f"integrand overflowed at x={x!r}") from exc
    if not math.isfinite(y):
        raise EvaluationError(x, f"integrand returned {y!r} at x={x!r}")
    return y


def _simpson(fa: float, fm: float, fb: float, a: float, b: float) -> float:
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


# Subdivision levels forced before an interval may be accepted, so narrow
# features cannot slip between the first probe points of a wide interval.
_MIN_DEPTH = 4


def _adapt(
    f: Func,
    a: float,
    b: float,
    fa: float,
    fm: float,
    fb: float,
    whole: float,
    tol: float,
    depth: int,
    force: int,
) -> tuple[float, float]:
    """One subdivision step; returns (value, error_estimate) for [a, b]."""
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = _feval(f, lm)
    frm = _feval(f, rm)
    left = _simpson(fa, flm, fm, a, m)
    right = _simpson(fm, frm, fb, m, b)
    delta = (left + right) - whole
    if (force <= 0 and abs(delta) <= 15.0 * tol) or m <= a or b <= m:
        # Richardson extrapolation of the composite estimate.
        return left + right + delta / 15.0, abs(delta) / 15.0
    if depth <= 0:
        # Depth exhausted: keep the estimate, report a conservative error.
        return left + right + delta / 15.0, abs(delta)
    lv, le = _adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, force - 1)
    rv, re = _adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, force - 1)
    return lv + rv, le + re


def integrate(f: Func, a: float, b: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> QuadResult:
    """Adaptive composite Simpson estimate of the integral of ``f`` on [a, b].

    Jump discontinuities and kinks (indicator factors) are handled by
    subdivision; no smoothness beyond piecewise continuity is assumed.
    Depth exhaustion yields ``converged=False`` rather than an error.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise EvaluationError(a if not math.isfinite(a) else b, "non-finite integration limit")
    if a > b:
        raise ValueError(f"integrate requires a <= b, got a={a!r} > b={b!r}")
    if a == b:
        return QuadResult(0.0, 0.0, True)
    fa = _feval(f, a)
    m = 0.5 * (a + b)
    fm = _feval(f, m)
    fb = _feval(f, b)
    whole = _simpson(fa, fm, fb, a, b)
    # Budget from the crude 3-point estimate; if that overshoots the final
    # relative goal (crude |whole| >> |value|), tighten and run again.
    tol = max(spec.abs_tol, spec.rel_tol * abs(whole))
    force = min(_MIN_DEPTH, spec.max_depth)
    for _ in range(3):
        value, err = _adapt(f, a, b, fa, fm, fb, whole, tol, spec.max_depth, force)
        goal = max(spec.abs_tol, spec.rel_tol * abs(value))
        if err <= goal or tol <= goal:
            break
        tol = goal
    converged = err <= max(spec.abs_tol, spec.rel_tol * abs(value))
    return QuadResult(value, err, converged)


def integrate_line(f: Func, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> QuadResult:
    """Integral of ``f`` over the whole real line by symmetric tail doubling.

    Integrates [-L, L] and doubles L from ``spec.initial_halfwidth`` until
    both one-sided shell contributions on [L, 2L] and [-2L, -L] fall below
    ``spec.tail_tol``. Raises :class:`DivergenceError` if the halfwidth
    exceeds ``2**20 * initial_halfwidth`` without tail convergence.
    """
    L = spec.initial_halfwidth
    cap = spec.initial_halfwidth * _LINE_DOUBLING_CAP
    core = integrate(f, -L, L, spec)
    value = core.value
    err = core.error_estimate
    conv = core.converged
    while True:
        hi = integrate(f, L, 2.0 * L, spec)
        lo = integrate(f, -2.0 * L, -L, spec)
        value += hi.value + lo.value
        err += hi.error_estimate + lo.error_estimate
        conv = conv and hi.converged and lo.converged
        L *= 2.0
        if abs(hi.value) <= spec.tail_tol and abs(lo.value) <= spec.tail_tol:
            break
        if L > cap:
            raise DivergenceError(
                f"tail contributions not below {spec.tail_tol!r} at halfwidth {L!r}; "
                "integral is divergence-suspected"
            )
    # Allowance for the truncated mass beyond the final shells.
    return QuadResult(value, err + 2.0 * spec.tail_tol, conv)


def invert_monotone(f: Func, target: float, lo: float, hi: float, tol: float) -> float:
    """Solve f(x) = target for nondecreasing ``f`` on [lo, hi].

    Bracketing bisection with secant acceleration; the bracket is never
    lost. Returns x with ``|f(x) - target| <= tol``.
    """
    if not tol > 0.0:
        raise ValueError("tol must be > 0")
    if lo > hi:
        raise BracketError(f"empty bracket [{lo!r}, {hi!r}]")
    flo = float(f(lo))
    fhi = float(f(hi))
    if abs(flo - target) <= tol:
        return lo
    if abs(fhi - target) <= tol:
        return hi
    if target < flo or target > fhi:
        raise BracketError(f"target {target!r} outside [f(lo), f(hi)] = [{flo!r}, {fhi!r}]")
    a, b, fa, fb = lo, hi, flo, fhi
    use_secant = True
    for _ in range(400):
        x = 0.5 * (a + b)
        if use_secant and fb > fa:
            xs = a + (target - fa) * (b - a) / (fb - fa)
            # Keep the secant candidate strictly interior to preserve progress.
            if a < xs < b:
                x = xs
        fx = float(f(x))
        if abs(fx - target) <= tol:
            return x
        if fx < target:
            a, fa = x, fx
        else:
            b, fb = x, fx
        # Alternate secant with plain bisection so flat stretches cannot stall.
        use_secant = not use_secant
        if b - a <= math.ulp(max(abs(a), abs(b), 1.0)):
            break
    best = 0.5 * (a + b)
    if abs(float(f(best)) - target) <= tol:
        return best
    raise BracketError(
        f"inversion stalled: bracket [{a!r}, {b!r}] collapsed without |f(x) - target| <= {tol!r}"
    )


def compensated_sum(xs: Iterable[float]) -> float:
    """Neumaier-compensated sum; order-independent up to compensation error.

    Used for all Monte Carlo reductions. Non-finite inputs propagate to a
    non-finite total and emit a diagnostic warning naming the first offender.
    """
    s = 0.0
    c = 0.0
    first_bad: tuple[int, float] | None = None
    for i, v in enumerate(xs):
        x = float(v)
        if not math.isfinite(x) and first_bad is None:
            first_bad = (i, x)
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
    total = s + c
    if first_bad is not None:
        warnings.warn(
            f"compensated_sum: non-finite input {first_bad[1]!r} at position {first_bad[0]}; "
            f"total propagated as {total!r}",
            RuntimeWarning,
            stacklevel=2,
        )
        # The compensation term can turn inf + finite into nan; keep the raw
        # propagated value in that case.
        if math.isnan(total) and not math.isnan(s):
            return s
    return total
