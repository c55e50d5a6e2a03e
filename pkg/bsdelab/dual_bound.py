"""
Generators, the a priori bound process and Girsanov dual values

For the typical generator f = α_t + βy + γ|z| the solution is the supremum
over controls |q| <= γ of

    E_q[e^{β(T-t)} ξ | F_t] + ∫_t^T e^{β(s-t)} α_s ds,

and when λγ²T < 1 it is dominated by

    Ȳ_t = e^{β(T-t)} (1/√(1-λγ²(T-t)) + e^{2/λ} E[Ψ_λ(|ξ|) | F_t]) + ∫_t^T e^{β(s-t)} α_s ds.

Dual values over a finite control family are lower bounds of the supremum.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .common import DIVERGENT, NumericalError
from .integrability import FAILED, LOG_SQRT_2PI, MARKOVIAN, gauss_expectation_batch, log_psi
from .lsmc_solver import RegressionBasis, regress
from .stochastic_engine import (bang_bang_control, constant_control, feedback_control,
                                girsanov_weights, heavy_tail_share, mc_estimate,
                                stochastic_integral, weighted_expectation)

ALPHA_QUAD_TOL = 1e-10
CERTIFICATE_SLACK = 1e-12

# States per node for the quadrature of E[Ψ_λ(|ξ|) | W_t]
DEFAULT_STATES = 64

QUADRATURE_METHOD = 'quadrature'
REGRESSION_METHOD = 'regression'


@dataclass(frozen=True)
class GeneratorSpec:
    """
    A generator f(t, y, z) with its linear-growth certificate (α, β, γ).

    ``alpha`` is a constant, a piecewise-constant ``{'breaks': [...],
    'values': [...]}`` (values[k] on [breaks[k-1], breaks[k])), or a callable
    of t. Without ``driver_func`` the generator is the typical one
    α_t + βy + γ|z|.
    """

    beta: float = 0.0
    gamma: float = 1.0
    alpha: object = 0.0
    driver_func: Optional[Callable] = None
    description: str = ''

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if isinstance(self.alpha, dict):
            breaks = list(self.alpha.get('breaks', []))
            values = list(self.alpha.get('values', []))
            if len(values) != len(breaks) + 1:
                raise ValueError("piecewise alpha needs one more value than breaks")
            if any(b <= a for a, b in zip(breaks, breaks[1:])):
                raise ValueError(f"alpha breaks must be increasing, got {breaks}")
        elif not callable(self.alpha):
            float(self.alpha)

    @property
    def typical(self):
        return self.driver_func is None

    @property
    def piecewise_alpha(self):
        return not callable(self.alpha)

    def _pieces(self):
        if isinstance(self.alpha, dict):
            return list(self.alpha['breaks']), [float(v) for v in self.alpha['values']]
        return [], [float(self.alpha)]

    def alpha_at(self, t):
        t = np.asarray(t, dtype=float)
        if callable(self.alpha):
            return np.broadcast_to(np.asarray(self.alpha(t), dtype=float), t.shape)
        breaks, values = self._pieces()
        return np.asarray(values)[np.searchsorted(breaks, t, side='right')]

    def driver(self, t, y, z):
        """f(t, y, z) for y of shape (M,) and z of shape (M, d)."""
        if self.driver_func is not None:
            return self.driver_func(t, y, z)
        return self.alpha_at(t) + self.beta * y + self.gamma * np.linalg.norm(z, axis=-1)

    def bound(self, t, y, z):
        """The certificate α_t + β|y| + γ|z|."""
        return self.alpha_at(t) + self.beta * np.abs(y) + self.gamma * np.linalg.norm(z, axis=-1)

    def discounted_alpha_integral(self, t, horizon):
        """
        ∫_t^T e^{β(s-t)} α_s ds.

        Closed form for piecewise-constant α, adaptive quadrature with
        relative tolerance 1e-10 otherwise.
        """
        if t > horizon:
            raise ValueError(f"t = {t} lies beyond the horizon {horizon}")
        if t == horizon:
            return 0.0
        if callable(self.alpha):
            value, _ = integrate.quad(lambda s: np.exp(self.beta * (s - t)) * float(self.alpha(s)),
                                      t, horizon, epsrel=ALPHA_QUAD_TOL, limit=200)
            return float(value)

        breaks, values = self._pieces()
        edges = [t] + [b for b in breaks if t < b < horizon] + [horizon]
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            v = values[int(np.searchsorted(breaks, a, side='right'))]
            if self.beta == 0:
                total += v * (b - a)
            else:
                total += v * np.exp(self.beta * (a - t)) * np.expm1(self.beta * (b - a)) / self.beta
        return float(total)

    def check_certificate(self, horizon, dimension=1, n_samples=1000, seed=0, scale=10.0):
        """
        Spot-check |f| <= α_t + β|y| + γ|z| at random (t, y, z).

        Raises:
            ValueError: With the worst offending sample when the certificate fails
        """
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, horizon, n_samples)
        y = rng.normal(0.0, scale, n_samples)
        z = rng.normal(0.0, scale, (n_samples, dimension))
        values = np.array([float(np.atleast_1d(self.driver(t[k], y[k:k + 1], z[k:k + 1]))[0])
                           for k in range(n_samples)])
        bound = self.bound(t, y, z)
        excess = np.abs(values) - bound
        worst = int(np.argmax(excess))
        if excess[worst] > CERTIFICATE_SLACK * (1.0 + bound[worst]):
            raise ValueError(f"growth certificate fails at t={t[worst]:.4g}, y={y[worst]:.4g}: "
                             f"|f| = {abs(values[worst]):.6g} > {bound[worst]:.6g}")
        return True

    def dominating(self):
        """The typical generator α + βy + γ|z| built from the certificate."""
        return GeneratorSpec(beta=self.beta, gamma=self.gamma, alpha=self.alpha,
                             description=f"dominating({self.description or 'f'})")


def typical_generator(alpha=0.0, beta=0.0, gamma=1.0):
    return GeneratorSpec(beta=beta, gamma=gamma, alpha=alpha,
                         description=f"alpha+{beta:g}y+{gamma:g}|z|")


def abs_z_generator(gamma):
    return GeneratorSpec(beta=0.0, gamma=gamma, alpha=0.0, description=f"{gamma:g}|z|")


def sublinear_generator(q=0.5, gamma=1.0, alpha=0.0, beta=0.0):
    """
    f = α + βy + γ|z|^q with q < 1, certified by (α + γ, β, γ).

    Only used as a solver smoke test.
    """
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    alpha = float(alpha)

    def driver(t, y, z):
        return alpha + beta * y + gamma * np.linalg.norm(z, axis=-1) ** q

    return GeneratorSpec(beta=beta, gamma=gamma, alpha=alpha + gamma, driver_func=driver,
                         description=f"{alpha:g}+{beta:g}y+{gamma:g}|z|^{q:g}")


def constant_generator(c, gamma=1.0):
    """f ≡ c, certified by (|c|, 0, γ)."""
    c = float(c)
    return GeneratorSpec(beta=0.0, gamma=gamma, alpha=abs(c),
                         driver_func=lambda t, y, z: np.full(np.shape(y), c),
                         description=f"{c:g}")


# ---------------------------------------------------------------------------
# A priori bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundProcess:
    values: np.ndarray  # (M, N+1)
    lam: float
    method: str
    psi_term: np.ndarray = field(repr=False, default=None)

    @property
    def y0(self):
        return float(self.values[0, 0])


def check_sufficiency(lam, gamma, horizon):
    """Raise unless λγ²T < 1."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    product = lam * gamma ** 2 * horizon
    if product >= 1:
        raise ValueError(f"lambda*gamma^2*T = {product:g} >= 1: the sufficient integrability "
                         f"condition needs it below 1")
    return product


def apriori_bound_value(gen, lam, horizon, t, psi_term):
    """Ȳ_t for a given value (or array) of E[Ψ_λ(|ξ|) | F_t]."""
    remaining = horizon - t
    product = lam * gen.gamma ** 2 * remaining
    if product >= 1:
        raise ValueError(f"lambda*gamma^2*(T-t) = {product:g} >= 1")
    psi_term = np.asarray(psi_term, dtype=float)
    with np.errstate(over='ignore'):
        value = (np.exp(gen.beta * remaining) * (1.0 / np.sqrt(1.0 - product)
                                                 + np.exp(2.0 / lam) * psi_term)
                 + gen.discounted_alpha_integral(t, horizon))
    return value if value.ndim else float(value)


def _psi_terminal(xi, lam, paths):
    with np.errstate(divide='ignore', over='ignore'):
        if xi.markovian:
            log_abs = xi.log_abs_at(paths.terminal())
        else:
            log_abs = np.log(np.abs(xi.evaluate(paths)))
        return np.exp(log_psi(lam, log_abs))


def _conditional_psi_quadrature(xi, lam, horizon, t, states, radii, tol):
    """log E[Ψ_λ(|ξ(w + √(T-t)X)|)] for each state w."""
    root = np.sqrt(horizon - t)

    def integrand(x):
        w = states[:, None] + root * x[None, :]
        log_abs = xi.log_abs_at(w.ravel()).reshape(w.shape)
        return log_psi(lam, log_abs) - 0.5 * x[None, :] ** 2 - LOG_SQRT_2PI

    results = gauss_expectation_batch(integrand, radii=radii, tol=tol, log_mode=True,
                                      batch_size=len(states))
    logs = np.empty(len(states))
    for k, result in enumerate(results):
        if result.status == FAILED:
            raise NumericalError(f"conditional Psi expectation failed at t={t:g}: {result.message}")
        logs[k] = np.inf if result.status == DIVERGENT else result.log_values[-1]
    return logs


def apriori_bound(xi, gen, lam, grid, paths, n_states=DEFAULT_STATES, basis=None,
                  radii=(10.0, 20.0, 30.0, 40.0), tol=1e-8, verbose=False):
    """
    The a priori bound process Ȳ on every path and node.

    E[Ψ_λ(|ξ|) | F_{t_i}] is computed by quadrature on a grid of states for
    Markovian ξ in d = 1 (interpolated log-linearly onto the paths), and by
    regression on ``basis`` otherwise. At t = T it is Ψ_λ(|ξ|) itself.

    Raises:
        ValueError: If λγ²T >= 1
    """
    check_sufficiency(lam, gen.gamma, grid.horizon)
    m, n = paths.n_samples, grid.n_steps
    psi_term = np.empty((m, n + 1))
    psi_term[:, n] = _psi_terminal(xi, lam, paths)

    use_quadrature = xi.kind == MARKOVIAN and xi.dimension == 1
    method = QUADRATURE_METHOD if use_quadrature else REGRESSION_METHOD
    basis = basis or RegressionBasis()

    for i in range(n):
        t = grid.nodes[i]
        w = paths.at(i)
        if use_quadrature:
            w = w[:, 0]
            lo, hi = float(w.min()), float(w.max())
            states = np.array([lo]) if hi == lo else np.linspace(lo, hi, n_states)
            logs = _conditional_psi_quadrature(xi, lam, grid.horizon, t, states, radii, tol)
            if np.any(np.isposinf(logs)):
                psi_term[:, i] = np.inf
            elif len(states) == 1:
                psi_term[:, i] = np.exp(logs[0])
            elif np.all(np.isfinite(logs)):
                psi_term[:, i] = np.exp(np.interp(w, states, logs))
            else:
                psi_term[:, i] = np.interp(w, states, np.exp(logs))
        else:
            fitted = regress(basis, w, psi_term[:, n], scale=np.sqrt(t)).fitted
            psi_term[:, i] = np.maximum(fitted, 0.0)
        if verbose and i % max(1, n // 10) == 0:
            print(f"bound node {i}: mean Psi term {np.mean(psi_term[:, i]):.6g}")

    values = np.column_stack([apriori_bound_value(gen, lam, grid.horizon, grid.nodes[i], psi_term[:, i])
                              for i in range(n + 1)])
    return BoundProcess(values=values, lam=float(lam), method=method, psi_term=psi_term)


# ---------------------------------------------------------------------------
# Dual values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualValue:
    value: float
    se: float
    node: int
    tag: str
    unstable: bool = False
    per_path: Optional[np.ndarray] = field(repr=False, default=None)


@dataclass(frozen=True)
class FamilyMax:
    value: float
    se: float
    tag: str
    values: dict

    @property
    def lower_bound(self):
        """Finite families only bound the supremum over all controls from below."""
        return True


def _require_typical(gen):
    if not gen.typical:
        raise ValueError("the dual representation holds for f = alpha + beta*y + gamma*|z| only")


def dual_value(xi, control, gen, paths, node=0, basis=None, terminal_values=None):
    """
    E_q[e^{β(T-t_i)} ξ | F_{t_i}] + ∫_{t_i}^T e^{β(s-t_i)} α_s ds.

    At node 0 this is a Girsanov-weighted mean with its standard error. At
    interior nodes the conditional expectation of (M_T/M_{t_i}) e^{β(T-t_i)} ξ
    is regressed on W_{t_i}; ``value`` is then the sample mean of the
    per-path estimates.

    Raises:
        ValueError: For a non-typical generator or a control above γ
    """
    _require_typical(gen)
    if control.bound > gen.gamma * (1 + 1e-12):
        raise ValueError(f"control bound {control.bound} exceeds gamma = {gen.gamma}")
    grid = paths.grid
    if not 0 <= node < grid.n_steps + 1:
        raise ValueError(f"node {node} is outside the grid")
    xi_values = xi.evaluate(paths) if terminal_values is None else np.asarray(terminal_values, float)
    weights = girsanov_weights(paths, control)
    remaining = grid.remaining(node)
    alpha_part = gen.discounted_alpha_integral(grid.nodes[node], grid.horizon)
    discounted = np.exp(gen.beta * remaining) * xi_values

    if node == 0:
        estimate, se = weighted_expectation(discounted, weights)
        with np.errstate(over='ignore', invalid='ignore'):
            share = heavy_tail_share(weights.terminal() * discounted)
        unstable = share > 0.5 or not np.isfinite(estimate)
        return DualValue(value=estimate + alpha_part, se=se, node=0, tag=control.tag,
                         unstable=bool(unstable))

    with np.errstate(over='ignore'):
        ratio = np.exp(weights.log_weights[:, -1] - weights.log_weights[:, node])
    target = ratio * discounted
    per_path = regress(basis or RegressionBasis(), paths.at(node), target,
                       scale=np.sqrt(grid.nodes[node])).fitted + alpha_part
    estimate, se = mc_estimate(per_path)
    return DualValue(value=estimate, se=se, node=node, tag=control.tag,
                     unstable=bool(heavy_tail_share(target) > 0.5), per_path=per_path)


def build_control_family(paths, gamma, n_constant=3, n_bang_bang=4, solution=None, seed=0):
    """
    A finite family of admissible controls.

    Constants on a grid of n_constant values in [-γ, γ] (along the first
    axis), n_bang_bang random adapted bang-bang controls, and the feedback
    control γ·sgn(Z) when a solution is supplied.
    """
    family = []
    if n_constant:
        levels = [gamma] if n_constant == 1 else np.linspace(-gamma, gamma, n_constant)
        for level in levels:
            value = np.zeros(paths.dimension)
            value[0] = level
            family.append(constant_control(paths, value, gamma, tag=f"constant({level:+g})"))
    for k in range(n_bang_bang):
        family.append(bang_bang_control(paths, gamma, seed=[seed, k], tag=f"bang-bang({seed}.{k})"))
    if solution is not None:
        family.append(feedback_control(solution.Z, gamma, tag='feedback'))
    return family


def dual_family_max(xi, gen, paths, family, terminal_values=None):
    """
    Largest node-0 dual value over a finite control family.

    The result is a lower bound of the supremum over all controls |q| <= γ.

    Raises:
        ValueError: On an empty family
    """
    if not family:
        raise ValueError("control family is empty")
    xi_values = xi.evaluate(paths) if terminal_values is None else terminal_values
    values = {}
    best = None
    for control in family:
        result = dual_value(xi, control, gen, paths, 0, terminal_values=xi_values)
        if result.unstable:
            print(f"WARNING: dual value for {control.tag} is dominated by a few samples")
        values[control.tag] = (result.value, result.se)
        if best is None or result.value > best.value:
            best = result
    return FamilyMax(value=best.value, se=best.se, tag=best.tag, values=values)


# ---------------------------------------------------------------------------
# Φ-moment bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhiMomentCheck:
    lhs: float
    se: float
    rhs: float
    node: int
    tag: str

    @property
    def passed(self):
        return self.lhs <= self.rhs + 3.0 * self.se


def phi_moment_check(lam, control, gamma, paths, node=0):
    """
    E[Φ_λ(exp ∫_{t_i}^T q dW)] against 1/√(1-λγ²(T-t_i)).

    Raises:
        ValueError: If λγ²(T-t_i) >= 1 or the control exceeds γ
    """
    if control.bound > gamma * (1 + 1e-12):
        raise ValueError(f"control bound {control.bound} exceeds gamma = {gamma}")
    remaining = paths.grid.remaining(node)
    product = lam * gamma ** 2 * remaining
    if not lam > 0 or product >= 1:
        raise ValueError(f"lambda*gamma^2*(T-t) = {product:g} must lie in (0, 1)")
    integral = stochastic_integral(paths, control, start=node)
    with np.errstate(over='ignore'):
        samples = np.exp(0.5 * lam * integral ** 2)
    lhs, se = mc_estimate(samples)
    return PhiMomentCheck(lhs=lhs, se=se, rhs=1.0 / np.sqrt(1.0 - product), node=node, tag=control.tag)
