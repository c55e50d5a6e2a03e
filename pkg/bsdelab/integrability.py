"""
Integrability functionals and Gaussian quadrature for the bsdelab library

Ψ_λ(x) = x·exp(sqrt(2/λ · log(x+1))) measures how much more than L^1 a terminal
value has; Φ_λ(x) = exp(λ/2 · log²x) is its Young partner. Both are evaluated in
log-space wherever the arguments can be large.

The quadrature engine integrates against the standard normal density on
growing intervals [-R, R] and decides from the truncated values whether the
expectation is finite or divergent.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .common import DIVERGENT, Divergent, NumericalError
from .stochastic_engine import heavy_tail_share, mc_estimate

FINITE = 'FINITE'
FAILED = 'FAILED'
UNSTABLE = 'UNSTABLE'

QUADRATURE = 'quadrature'
MONTE_CARLO = 'monte-carlo'

DEFAULT_RADII = (10.0, 20.0, 30.0, 40.0)
DEFAULT_TOLERANCE = 1e-8
MAX_RADIUS = 640.0
MAX_DEPTH = 40

# Per-unit-radius increments decaying faster than this are a convergent tail
DECAY_SLOPE = -0.01

# Share of the sum carried by the top 1% of samples above which MC is unreliable
HEAVY_TAIL_LIMIT = 0.5

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

_LOW_RULE = np.polynomial.legendre.leggauss(20)
_HIGH_RULE = np.polynomial.legendre.leggauss(40)


# ---------------------------------------------------------------------------
# Ψ_λ, Φ_λ and the Young-type inequality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaParam:
    """
    The integrability index λ, optionally with the (γ, T) it is meant for.

    ``sufficient`` is None without context, else whether λγ²T < 1.
    """

    lam: float
    gamma: Optional[float] = None
    horizon: Optional[float] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    @property
    def sufficient(self):
        if self.gamma is None or self.horizon is None:
            return None
        return self.lam * self.gamma ** 2 * self.horizon < 1


def _check_lambda(lam):
    if not np.all(np.asarray(lam) > 0):
        raise ValueError(f"lambda must be positive, got {lam}")


def psi(lam, x):
    """
    Ψ_λ(x) = x·exp(sqrt(2/λ · log(x+1))).

    Args:
        lam: λ > 0
        x: Scalar or array, x >= 0

    Raises:
        ValueError: On λ <= 0 or negative x
    """
    _check_lambda(lam)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("psi is defined for x >= 0 only")
    with np.errstate(over='ignore'):
        result = x * np.exp(np.sqrt(2.0 / lam * np.log1p(x)))
    return result if result.ndim else float(result)


def log_psi(lam, log_x):
    """
    log Ψ_λ(e^{log_x}), exact for arguments far beyond double range.

    ``log_x = -inf`` (x = 0) gives -inf.
    """
    _check_lambda(lam)
    log_x = np.asarray(log_x, dtype=float)
    result = log_x + np.sqrt(2.0 / lam * np.logaddexp(0.0, log_x))
    return result if result.ndim else float(result)


def phi(lam, x):
    """
    Φ_λ(x) = exp(λ/2 · log²x).

    Raises:
        ValueError: On λ <= 0 or x <= 0
    """
    _check_lambda(lam)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("phi is defined for x > 0 only")
    with np.errstate(over='ignore'):
        result = np.exp(0.5 * lam * np.log(x) ** 2)
    return result if result.ndim else float(result)


def log_phi(lam, log_x):
    """log Φ_λ(e^{log_x}) = λ/2 · log_x²."""
    _check_lambda(lam)
    result = 0.5 * lam * np.asarray(log_x, dtype=float) ** 2
    return result if result.ndim else float(result)


def young_gap(lam, x, y):
    """
    Φ_λ(e^x) + e^{2/λ}Ψ_λ(y) - e^x·y, evaluated directly.

    Overflows to inf for large arguments; ``young_relative_gap`` is the
    numerically safe form.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(over='ignore', invalid='ignore'):
        result = (np.exp(log_phi(lam, x)) + np.exp(2.0 / lam) * psi(lam, y)
                  - np.exp(x) * np.asarray(y, dtype=float))
    return result if np.ndim(result) else float(result)


def young_relative_gap(lam, x, y):
    """
    The Young gap divided by max(1, Φ_λ(e^x), e^{2/λ}Ψ_λ(y)).

    Every term is formed in log-space and shifted by the log of the scale
    before exponentiating, so the result is finite for any λ > 0, real x and
    y >= 0. The inequality holds iff the result is >= 0 up to rounding.
    """
    _check_lambda(lam)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("young gap is defined for y >= 0 only")
    with np.errstate(divide='ignore'):
        log_y = np.log(y)
    a = log_phi(lam, x)
    b = 2.0 / lam + log_psi(lam, log_y)
    c = x + log_y
    scale = np.maximum(0.0, np.maximum(a, b))
    result = np.exp(a - scale) + np.exp(b - scale) - np.exp(c - scale)
    return result if result.ndim else float(result)


def psi_sandwich(lam, eps, p, x):
    """
    The chain x <= Ψ_λ(x) <= e^{1/(2ελ)}·x·(x+1)^ε.

    Args:
        lam: λ > 0
        eps: ε > 0, or None to use ε = p - 1 (the L^p comparison, p > 1)
        p: Exponent p >= 1
        x: x >= 0

    Returns:
        (lower, psi, upper_eps)
    """
    _check_lambda(lam)
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if eps is None:
        eps = p - 1
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    if x < 0:
        raise ValueError("psi_sandwich is defined for x >= 0 only")
    upper = np.exp(1.0 / (2.0 * eps * lam)) * x * (x + 1.0) ** eps
    return float(x), psi(lam, x), float(upper)


def log_moment_ratio(lam, p, x):
    """log of Ψ_λ(x) / (x·log^p(x+1)) for x > 0."""
    _check_lambda(lam)
    l1p = np.log1p(np.asarray(x, dtype=float))
    result = np.sqrt(2.0 / lam * l1p) - p * np.log(l1p)
    return result if result.ndim else float(result)


def psi_inverse_substitution(lam, y):
    """z = sqrt(2/λ · log(y+1)), so that Ψ_λ(y) = y·e^z."""
    _check_lambda(lam)
    result = np.sqrt(2.0 / lam * np.log1p(np.asarray(y, dtype=float)))
    return result if result.ndim else float(result)


def psi_substitution(lam, z):
    """y = e^{λz²/2} - 1, the inverse of ``psi_inverse_substitution`` for z >= 0."""
    _check_lambda(lam)
    result = np.expm1(0.5 * lam * np.asarray(z, dtype=float) ** 2)
    return result if result.ndim else float(result)


# ---------------------------------------------------------------------------
# Terminal values
# ---------------------------------------------------------------------------

MARKOVIAN = 'markovian'
PATH = 'path'


@dataclass(frozen=True)
class TerminalValue:
    """
    A terminal value ξ.

    Markovian values map W_T (array of shape (M, d)) to an (M,) array; path
    values map a whole ``PathEnsemble`` to an (M,) array. ``log_abs`` is an
    optional log|ξ| for Markovian values that overflow in linear space.
    """

    kind: str
    func: Callable
    description: str = ''
    nonnegative: bool = False
    dimension: int = 1
    log_abs: Optional[Callable] = None
    monotone: bool = False

    def __post_init__(self):
        if self.kind not in (MARKOVIAN, PATH):
            raise ValueError(f"Unknown terminal value kind: {self.kind}")

    @property
    def markovian(self):
        return self.kind == MARKOVIAN

    def evaluate(self, paths):
        """ξ on every sample of an ensemble."""
        if paths.dimension != self.dimension:
            raise ValueError(f"Terminal value is {self.dimension}-dimensional, "
                             f"ensemble is {paths.dimension}-dimensional")
        with np.errstate(over='ignore'):
            if self.markovian:
                return np.asarray(self.func(paths.terminal()), dtype=float)
            return np.asarray(self.func(paths), dtype=float)

    def at(self, w):
        """ξ at terminal states w (shape (K,) for d = 1, or (K, d))."""
        self._require_markovian()
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        with np.errstate(over='ignore'):
            return np.asarray(self.func(w), dtype=float)

    def log_abs_at(self, w):
        """log|ξ| at terminal states, via ``log_abs`` when supplied."""
        self._require_markovian()
        if self.log_abs is None:
            with np.errstate(divide='ignore'):
                return np.log(np.abs(self.at(w)))
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.asarray(self.log_abs(w), dtype=float)

    def _require_markovian(self):
        if not self.markovian:
            raise ValueError(f"'{self.description}' is path-dependent; "
                             f"it has no value at a terminal state")


def constant_terminal(c):
    c = float(c)
    with np.errstate(divide='ignore'):
        log_c = np.log(abs(c))
    return TerminalValue(MARKOVIAN, lambda w: np.full(len(w), c), description=f"{c:g}",
                         nonnegative=c >= 0, log_abs=lambda w: np.full(len(w), log_c),
                         monotone=True)


def brownian_terminal():
    return TerminalValue(MARKOVIAN, lambda w: w[:, 0].copy(), description='W_T', monotone=True)


def clamped_brownian(lower=-2.0, upper=2.0):
    """ξ = clamp(W_T, lower, upper)."""
    if lower > upper:
        raise ValueError(f"clamp bounds out of order: {lower} > {upper}")
    return TerminalValue(MARKOVIAN, lambda w: np.clip(w[:, 0], lower, upper),
                         description=f"clamp(W_T,{lower:g},{upper:g})",
                         nonnegative=lower >= 0, monotone=True)


def abs_brownian():
    return TerminalValue(MARKOVIAN, lambda w: np.abs(w[:, 0]), description='|W_T|',
                         nonnegative=True)


def exp_brownian(a=1.0):
    """ξ = e^{a·W_T}."""
    return TerminalValue(MARKOVIAN, lambda w: np.exp(a * w[:, 0]), description=f"exp({a:g}W_T)",
                         nonnegative=True, log_abs=lambda w: a * w[:, 0], monotone=a >= 0)


def exp_abs_brownian(a=0.5):
    """ξ = e^{a·|W_T|}."""
    return TerminalValue(MARKOVIAN, lambda w: np.exp(a * np.abs(w[:, 0])),
                         description=f"exp({a:g}|W_T|)", nonnegative=True,
                         log_abs=lambda w: a * np.abs(w[:, 0]))


def counterexample_terminal(mu):
    """
    ξ = exp(W²/2 - μ|W| + μ²/2) - 1 with W = W_T, for 0 < μ < 1.

    ξ >= 0, Ψ_λ(ξ) is integrable iff μ > 1/√λ, but ξ·e^{|W|} is never
    integrable. Written as e^a - 1 with a = (|W| - μ)²/2 so that log ξ is
    available without overflow.
    """
    if not 0 < mu < 1:
        raise ValueError(f"mu must lie in (0, 1), got {mu}")

    def exponent(w):
        return 0.5 * (np.abs(w[:, 0]) - mu) ** 2

    def value(w):
        with np.errstate(over='ignore'):
            return np.expm1(exponent(w))

    def log_value(w):
        a = exponent(w)
        with np.errstate(divide='ignore'):
            return a + np.log(-np.expm1(-a))

    return TerminalValue(MARKOVIAN, value, description=f"counterexample(mu={mu:g})",
                         nonnegative=True, log_abs=log_value)


def counterexample_mean(mu):
    """E[ξ] = 2e^{μ²/2}/(μ√(2π)) - 1 for ``counterexample_terminal(mu)`` at T = 1."""
    return 2.0 * np.exp(0.5 * mu ** 2) / (mu * np.sqrt(2.0 * np.pi)) - 1.0


def running_max_terminal():
    """ξ = max_{t_i} W_{t_i} (first coordinate), a path-dependent value."""
    return TerminalValue(PATH, lambda paths: paths.brownian()[:, :, 0].max(axis=1),
                         description='max W', nonnegative=True)


# ---------------------------------------------------------------------------
# Quadrature engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureResult:
    """Outcome of a normal-weight integral: FINITE, DIVERGENT or FAILED."""

    status: str
    value: float
    error: float
    radii: tuple = ()
    values: tuple = ()
    log_values: tuple = ()
    exponent: float = float('nan')
    message: str = ''

    @property
    def finite(self):
        return self.status == FINITE

    @property
    def divergent(self):
        return self.status == DIVERGENT

    def evidence(self):
        return {
            'radii': list(self.radii),
            'truncated_values': list(self.values),
            'log_truncated_values': list(self.log_values),
            'exponent': self.exponent,
        }

    def cell(self):
        """The value, or a ``Divergent`` carrying the truncation evidence."""
        if self.divergent:
            return Divergent(self.evidence())
        return self.value


def _rule(func, a, b, rule, log_mode):
    nodes, weights = rule
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * nodes
    with np.errstate(all='ignore'):
        vals = np.asarray(func(x), dtype=float)
    if vals.ndim == 1:
        vals = vals[None, :]
    bad = np.isnan(vals) | (np.isposinf(vals) if log_mode else np.isinf(vals))
    if bad.any():
        raise NumericalError(f"Integrand could not be evaluated on [{a:g}, {b:g}]")
    w = weights * half
    if log_mode:
        with np.errstate(divide='ignore'):
            estimate = logsumexp(vals + np.log(w), axis=1)
        return estimate, estimate
    return vals @ w, np.abs(vals) @ w


def _integrate(func, a, b, tol, log_mode):
    """
    Adaptive Gauss–Legendre on [a, b].

    Unit segments are bisected until the 20- and 40-point rules agree to a
    relative ``tol`` for every member of the batch, or MAX_DEPTH is reached.

    Returns:
        (value, abs_value, error); log-space values and a relative error in
        log mode, linear ones otherwise
    """
    edges = np.append(np.arange(a, b, 1.0), b)
    pending = [(lo, hi, 0) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
    parts, mags, gaps = [], [], []

    while pending:
        lo, hi, depth = pending.pop()
        coarse, _ = _rule(func, lo, hi, _LOW_RULE, log_mode)
        fine, mag = _rule(func, lo, hi, _HIGH_RULE, log_mode)
        if log_mode:
            with np.errstate(invalid='ignore', over='ignore'):
                gap = np.where(np.isneginf(fine) & np.isneginf(coarse), 0.0,
                               np.abs(np.expm1(coarse - fine)))
            accepted = bool(np.all(gap <= tol))
        else:
            gap = np.abs(fine - coarse)
            accepted = bool(np.all(gap <= tol * mag))
        if accepted or depth >= MAX_DEPTH:
            parts.append(fine)
            mags.append(mag)
            gaps.append(gap)
        else:
            mid = 0.5 * (lo + hi)
            pending.append((mid, hi, depth + 1))
            pending.append((lo, mid, depth + 1))

    if not parts:
        raise ValueError(f"Empty integration interval [{a}, {b}]")
    if log_mode:
        with np.errstate(divide='ignore'):
            total = logsumexp(np.array(parts), axis=0)
        return total, total, np.max(np.array(gaps), axis=0)
    return np.sum(parts, axis=0), np.sum(mags, axis=0), np.sum(gaps, axis=0)


class _Truncations:
    """Running ∫_{-R}^{R} for a growing sequence of radii, batch-wide."""

    def __init__(self, func, tol, log_mode):
        self.func = func
        self.tol = tol
        self.log_mode = log_mode
        self.radii = []
        self.values = []
        self.mags = []
        self.errors = []

    def extend(self, radius):
        inner = self.radii[-1] if self.radii else 0.0
        if radius <= inner:
            raise ValueError("truncation radii must be strictly increasing")
        left = _integrate(self.func, -radius, -inner, self.tol, self.log_mode)
        right = _integrate(self.func, inner, radius, self.tol, self.log_mode)
        if self.log_mode:
            value = np.logaddexp(left[0], right[0])
            error = np.maximum(left[2], right[2])
            if self.values:
                value = np.logaddexp(self.values[-1], value)
                error = np.maximum(self.errors[-1], error)
            mag = value
        else:
            value, mag, error = left[0] + right[0], left[1] + right[1], left[2] + right[2]
            if self.values:
                value = value + self.values[-1]
                mag = mag + self.mags[-1]
                error = error + self.errors[-1]
        self.radii.append(float(radius))
        self.values.append(value)
        self.mags.append(mag)
        self.errors.append(error)


def _log_levels(values, log_mode):
    if log_mode:
        return np.asarray(values, dtype=float)
    values = np.asarray(values, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(values > 0, np.log(np.where(values > 0, values, 1.0)), np.nan)


def _classify(radii, values, mags, errors, tol, log_mode):
    """Verdict for one batch member from its truncated integrals."""
    radii = np.asarray(radii)
    levels = _log_levels(values, log_mode)
    finite_levels = np.isfinite(levels)
    exponent = float('nan')
    if finite_levels.sum() >= 2:
        exponent = float(np.polyfit(radii[finite_levels], levels[finite_levels], 1)[0])
    with np.errstate(over='ignore'):
        linear = np.exp(levels) if log_mode else np.asarray(values, dtype=float)

    # settled
    if log_mode:
        if np.isneginf(levels[-1]) and np.isneginf(levels[-2]):
            return FINITE, 0.0, 0.0, exponent
        drift = abs(np.expm1(levels[-2] - levels[-1]))
        if drift <= tol:
            value = float(linear[-1])
            return FINITE, value, value * (drift + float(errors[-1])), exponent
    else:
        drift = abs(values[-1] - values[-2])
        if drift <= tol * max(abs(values[-1]), mags[-1]):
            return FINITE, float(values[-1]), float(drift + errors[-1]), exponent

    # growing without a decaying tail
    if len(radii) >= 3 and np.all(finite_levels):
        steps = np.diff(levels)
        if np.all(steps > np.log1p(tol)):
            log_increments = levels[1:] + np.log(-np.expm1(-steps))
            density = log_increments - np.log(np.diff(radii))
            middles = 0.5 * (radii[1:] + radii[:-1])
            slope = np.polyfit(middles, density, 1)[0]
            if slope >= DECAY_SLOPE:
                return DIVERGENT, float('inf'), float('nan'), exponent

    return None, float(linear[-1]), float('nan'), exponent


def _check_radii(radii, tol):
    radii = [float(r) for r in radii]
    if len(radii) < 2:
        raise ValueError("at least two truncation radii are required")
    if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError(f"truncation radii must be positive and increasing, got {radii}")
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    return radii


def gauss_expectation_batch(func, radii=DEFAULT_RADII, tol=DEFAULT_TOLERANCE, log_mode=False,
                            max_radius=MAX_RADIUS, batch_size=1, verbose=False):
    """
    ∫ h_b(x) dx over the real line for a batch of integrands h_b.

    ``func(x)`` receives the (K,) quadrature nodes and returns (B, K) values of
    h_b (or log h_b in log mode). The normal density must already be part of
    h_b. Radii beyond the last requested one are added by doubling, up to
    ``max_radius``, while any member is still undecided.

    Returns:
        List of ``batch_size`` QuadratureResult (all FAILED if any member
        cannot be evaluated)
    """
    radii = _check_radii(radii, tol)
    runner = _Truncations(func, tol, log_mode)
    try:
        for r in radii:
            runner.extend(r)
        while True:
            values = np.array(runner.values)
            mags = np.array(runner.mags)
            errors = np.array(runner.errors)
            verdicts = [_classify(runner.radii, values[:, b], mags[:, b], errors[:, b], tol, log_mode)
                        for b in range(values.shape[1])]
            undecided = sum(1 for v in verdicts if v[0] is None)
            if not undecided or runner.radii[-1] * 2 > max_radius:
                break
            if verbose:
                print(f"{undecided} integral(s) undecided at R={runner.radii[-1]:g}, "
                      f"extending to R={2 * runner.radii[-1]:g}")
            runner.extend(2 * runner.radii[-1])
    except NumericalError as e:
        failed = QuadratureResult(FAILED, float('nan'), float('nan'), message=str(e))
        return [failed] * batch_size

    results = []
    for b, (status, value, error, exponent) in enumerate(verdicts):
        levels = _log_levels(values[:, b], log_mode)
        with np.errstate(over='ignore'):
            linear = np.exp(levels) if log_mode else values[:, b]
        message = ''
        if status is None:
            status = FAILED
            message = (f"truncated values neither settled nor grew up to R={runner.radii[-1]:g}")
        results.append(QuadratureResult(
            status=status, value=value, error=error, radii=tuple(runner.radii),
            values=tuple(float(v) for v in linear), log_values=tuple(float(v) for v in levels),
            exponent=exponent, message=message))
    return results


def gauss_expectation(g=None, radii=DEFAULT_RADII, tol=DEFAULT_TOLERANCE, log_g=None,
                      max_radius=MAX_RADIUS, verbose=False):
    """
    E[g(X)] for X ~ N(0, 1), with divergence detection.

    The integrand is g(x)·φ(x) on [-R, R] for each radius R. When ``log_g``
    (log g for a nonnegative g) is given the whole computation runs in
    log-space, which keeps integrands like e^{x²/2} usable at R = 40.

    FINITE when the last two truncations agree within ``tol``. DIVERGENT
    when the truncations keep growing and their per-unit increments do not
    decay with R; the evidence is the sequence of truncated values and the
    fitted slope of log I_R against R. Otherwise the radius is doubled up to
    ``max_radius``; if still undecided the result is FAILED.

    Args:
        g: Vectorised function of x, or None when ``log_g`` is given
        radii: Increasing truncation radii
        tol: Relative tolerance
        log_g: Vectorised log g(x) for nonnegative g
        max_radius: Largest radius tried by extension
        verbose: Print radius extensions

    Returns:
        QuadratureResult
    """
    if log_g is not None:
        def integrand(x):
            return (np.asarray(log_g(x), dtype=float) - 0.5 * x ** 2 - LOG_SQRT_2PI)[None, :]
        log_mode = True
    elif g is not None:
        def integrand(x):
            return (np.asarray(g(x), dtype=float) * np.exp(-0.5 * x ** 2 - LOG_SQRT_2PI))[None, :]
        log_mode = False
    else:
        raise ValueError("gauss_expectation needs g or log_g")
    return gauss_expectation_batch(integrand, radii, tol, log_mode, max_radius, verbose=verbose)[0]


# ---------------------------------------------------------------------------
# Integrability reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportEntry:
    name: str
    estimate: object
    error: float
    method: str
    status: str
    evidence: dict = field(default_factory=dict)

    def row(self):
        return {
            'functional': self.name,
            'estimate': self.estimate,
            'error': self.error,
            'method': self.method,
            'status': self.status,
            'exponent': self.evidence.get('exponent', ''),
        }


@dataclass(frozen=True)
class IntegrabilityReport:
    terminal: str
    entries: tuple

    def get(self, name):
        for entry in self.entries:
            if entry.name == name:
                return entry
        raise KeyError(name)

    def names(self):
        return [entry.name for entry in self.entries]

    def rows(self):
        return [entry.row() for entry in self.entries]


def psi_name(lam):
    return f"E[Psi_{lam:g}(|xi|)]"


def power_name(p):
    return f"E[|xi|^{p:g}]"


def log_power_name(p):
    return f"E[|xi|log^{p:g}(|xi|+1)]"


def abs_exp_name(gamma):
    return f"E[|xi|e^{{{gamma:g}|W_T|}}]"


def signed_exp_name(gamma, sign):
    return f"E[|xi|e^{{{'+' if sign > 0 else '-'}{gamma:g}W_T}}]"


def _functionals(lambdas, powers, gamma, dimension):
    """(name, f) pairs; f maps (log|ξ|, W_T first coordinate) to a log value."""
    items = []
    for lam in lambdas:
        items.append((psi_name(lam), lambda lx, w, lam=lam: log_psi(lam, lx)))
    for p in powers:
        items.append((power_name(p), lambda lx, w, p=p: p * lx))
        items.append((log_power_name(p),
                      lambda lx, w, p=p: lx + p * np.log(np.logaddexp(0.0, lx))))
    items.append((abs_exp_name(gamma), lambda lx, w: lx + gamma * np.abs(w)))
    if dimension == 1:
        items.append((signed_exp_name(gamma, +1), lambda lx, w: lx + gamma * w))
        items.append((signed_exp_name(gamma, -1), lambda lx, w: lx - gamma * w))
    return items


def integrability_report(xi, lambdas=(1.0,), powers=(1.0, 2.0), gamma=1.0, paths=None,
                         horizon=1.0, radii=DEFAULT_RADII, tol=DEFAULT_TOLERANCE,
                         max_radius=MAX_RADIUS, verbose=False):
    """
    Estimate the integrability functionals of ξ.

    Markovian ξ in d = 1 goes through the quadrature engine with W_T = √T·X;
    anything else is estimated by Monte Carlo on ``paths`` and flagged
    UNSTABLE when the top 1% of samples carry more than half the sum. The
    necessary-condition entry E[|ξ|e^{γ|W_T|}] is always included.

    Args:
        xi: TerminalValue
        lambdas: λ values for E[Ψ_λ(|ξ|)]
        powers: p values for E[|ξ|^p] and E[|ξ|log^p(|ξ|+1)]
        gamma: γ of the exponential-moment entries
        paths: PathEnsemble for Monte Carlo entries
        horizon: T, used by quadrature
        radii, tol, max_radius: Quadrature options
        verbose: Print progress

    Returns:
        IntegrabilityReport

    Raises:
        ValueError: If Monte Carlo is needed and no ensemble is supplied
    """
    for lam in lambdas:
        _check_lambda(lam)
    if any(p < 1 for p in powers):
        raise ValueError(f"powers must be >= 1, got {list(powers)}")
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")

    functionals = _functionals(lambdas, powers, gamma, xi.dimension)
    entries = []

    if xi.markovian and xi.dimension == 1:
        scale = np.sqrt(horizon)
        for name, functional in functionals:
            if verbose:
                print(f"Quadrature for {name} of {xi.description}")

            def log_g(x, functional=functional):
                w = scale * x
                return functional(xi.log_abs_at(w), w)

            result = gauss_expectation(log_g=log_g, radii=radii, tol=tol, max_radius=max_radius)
            if result.status == FAILED:
                print(f"WARNING: quadrature failed for {name}: {result.message}")
            entries.append(ReportEntry(name, result.cell(), result.error, QUADRATURE,
                                       result.status, result.evidence()))
        return IntegrabilityReport(xi.description, tuple(entries))

    if paths is None:
        raise ValueError(f"'{xi.description}' needs a path ensemble for Monte Carlo estimates")
    with np.errstate(divide='ignore'):
        log_abs = np.log(np.abs(xi.evaluate(paths)))
    w = paths.terminal()
    w_first = w[:, 0] if xi.dimension == 1 else np.linalg.norm(w, axis=1)
    for name, functional in functionals:
        with np.errstate(over='ignore', invalid='ignore'):
            values = np.exp(functional(log_abs, w_first))
        estimate, se = mc_estimate(values)
        share = heavy_tail_share(values)
        status = FINITE
        if not np.isfinite(estimate) or share > HEAVY_TAIL_LIMIT:
            status = UNSTABLE
            print(f"WARNING: {name} is dominated by its top 1% of samples "
                  f"({share:.0%} of the sum); Monte Carlo estimate is unstable")
        entries.append(ReportEntry(name, estimate, se, MONTE_CARLO, status,
                                   {'top_share': share}))
    return IntegrabilityReport(xi.description, tuple(entries))
