"""
Backward solvers for BSDE(ξ, f) for the bsdelab library

``solve`` is a least-squares Monte Carlo scheme on a path ensemble:

    Y_N = ξ
    Z_i = E[Y_{i+1} ΔW_i / Δ_i | W_{t_i}]            (regression)
    Y_i = E[Y_{i+1} | W_{t_i}] + Δ_i f(t_i, Y_i, Z_i)  (Picard in y)

``solve_lattice`` runs the same scheme for Markovian ξ in d = 1 on a spatial
lattice with Gauss–Hermite conditional expectations and reads the result back
onto the sample paths. It has no Monte Carlo error in the conditional
expectations, which matters when the truncation level of ξ sits far out in
the tail of W_T.

The solvers take a ``GeneratorSpec``-like object with ``beta``, ``gamma`` and
a ``driver(t, y, z)`` method; they do not depend on the dual bound module.
"""

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .common import NumericalError
from .integrability import FINITE, TerminalValue, gauss_expectation

POLYNOMIAL = 'polynomial'
INDICATOR = 'indicator'

# Normal matrices with a smaller singular value get a ridge penalty
RIDGE_THRESHOLD = 1e-10
RIDGE_PENALTY = 1e-8

# Indicator bins cover [-BIN_RANGE, BIN_RANGE] standard deviations
BIN_RANGE = 3.0

DEFAULT_K_MAX = 50
DEFAULT_TOL = 1e-12

# Comparison and ladder checks pass below this violation fraction
VIOLATION_LIMIT = 1e-3


@dataclass(frozen=True)
class RegressionBasis:
    """Basis for conditional expectations given W_{t_i}."""

    family: str = POLYNOMIAL
    degree: int = 4
    bins: int = 16

    def __post_init__(self):
        if self.family not in (POLYNOMIAL, INDICATOR):
            raise ValueError(f"Unknown basis family: {self.family}")
        if self.family == POLYNOMIAL and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError(f"basis degree must be a positive integer, got {self.degree}")
        if self.family == INDICATOR and (int(self.bins) != self.bins or self.bins < 1):
            raise ValueError(f"number of bins must be a positive integer, got {self.bins}")

    def size(self, dimension=1):
        if self.family == POLYNOMIAL:
            return comb(self.degree + dimension, dimension)
        return self.bins ** dimension

    def describe(self):
        if self.family == POLYNOMIAL:
            return f"polynomial(degree={self.degree})"
        return f"indicator(bins={self.bins})"

    def design(self, states):
        """Design matrix for standardised states of shape (M, d)."""
        m, d = states.shape
        if self.family == POLYNOMIAL:
            columns = [np.ones(m)]
            for k in range(1, self.degree + 1):
                for combo in itertools.combinations_with_replacement(range(d), k):
                    columns.append(np.prod(states[:, combo], axis=1))
            return np.column_stack(columns)

        cell = np.floor((np.clip(states, -BIN_RANGE, BIN_RANGE) + BIN_RANGE)
                        / (2 * BIN_RANGE) * self.bins).astype(int)
        cell = np.minimum(cell, self.bins - 1)
        index = np.ravel_multi_index(tuple(cell.T), (self.bins,) * d)
        design = np.zeros((m, self.bins ** d))
        design[np.arange(m), index] = 1.0
        return design


@dataclass(frozen=True)
class Regression:
    fitted: np.ndarray
    smallest_singular: float
    ridge: bool


def regress(basis, states, targets, scale=1.0):
    """
    Least-squares estimate of E[targets | states].

    Ordinary least squares through the normal equations. When the smallest
    singular value of the normal matrix is below RIDGE_THRESHOLD a ridge
    penalty RIDGE_PENALTY·trace is added. States that are all equal (t = 0)
    give the sample mean.

    Args:
        basis: RegressionBasis
        states: (M, d) conditioning states
        targets: (M,) or (M, k) regression targets
        scale: States are divided by this before building the basis

    Returns:
        Regression with fitted values shaped like ``targets``
    """
    targets = np.asarray(targets, dtype=float)
    if np.ptp(states) == 0:
        fitted = np.broadcast_to(targets.mean(axis=0), targets.shape).copy()
        return Regression(fitted=fitted, smallest_singular=1.0, ridge=False)

    x = basis.design(np.asarray(states, dtype=float) / (scale if scale > 0 else 1.0))
    m = x.shape[0]
    gram = x.T @ x / m
    rhs = x.T @ targets / m
    smallest = float(np.linalg.svd(gram, compute_uv=False)[-1])
    ridge = smallest < RIDGE_THRESHOLD
    if ridge:
        gram = gram + RIDGE_PENALTY * np.trace(gram) * np.eye(gram.shape[0])
    coef = np.linalg.solve(gram, rhs)
    return Regression(fitted=x @ coef, smallest_singular=smallest, ridge=ridge)


@dataclass(frozen=True)
class BsdeSolution:
    """(Y, Z) on every sample path and node, plus solver diagnostics."""

    Y: np.ndarray  # (M, N+1)
    Z: np.ndarray  # (M, N, d)
    grid: object
    basis: str
    iterations: tuple
    ridge_nodes: tuple
    seed: int
    lineage: tuple
    y0_se: float

    @property
    def y0(self):
        return float(self.Y[0, 0])

    def max_increment(self):
        """Largest |Y_{i+1} - Y_i| over paths and nodes."""
        return float(np.max(np.abs(np.diff(self.Y, axis=1))))

    def z_energy(self):
        """Per-path Riemann sum of |Z|² over the grid."""
        return np.einsum('mid,mid,i->m', self.Z, self.Z, self.grid.steps)


def _check_inputs(gen, grid, paths):
    if not np.array_equal(paths.grid.nodes, grid.nodes):
        raise ValueError("path ensemble was sampled on a different grid")
    worst = gen.beta * float(np.max(grid.steps))
    if worst >= 1:
        raise ValueError(f"beta * step = {worst:g} >= 1; the implicit y-step is not a contraction")


def _terminal_values(xi, paths, values):
    if values is None:
        values = xi.evaluate(paths)
    values = np.asarray(values, dtype=float)
    if values.shape != (paths.n_samples,):
        raise ValueError(f"terminal values have shape {values.shape}, expected ({paths.n_samples},)")
    if not np.all(np.isfinite(values)):
        raise ValueError("terminal value is not finite on every sample; truncate it first")
    return values


def _picard(gen, t, c, z, step, node, k_max, tol):
    """Solve y = c + step·f(t, y, z) by fixed-point iteration."""
    y = c
    for k in range(1, k_max + 1):
        y_new = c + step * np.asarray(gen.driver(t, y, z), dtype=float)
        change = float(np.max(np.abs(y_new - y))) if y.size else 0.0
        y = y_new
        if change <= tol * max(1.0, float(np.max(np.abs(y)))):
            return y, k
    raise NumericalError(f"Fixed-point iteration did not converge at node {node} "
                         f"after {k_max} iterations (last change {change:g})")


def _forward_se(gen, grid, paths, y, z, terminal):
    """Standard error of Y_0 from ξ + Σ Δ_i f(t_i, Y_i, Z_i)."""
    total = terminal.copy()
    for i in range(grid.n_steps):
        total += grid.steps[i] * np.asarray(gen.driver(grid.nodes[i], y[:, i], z[:, i, :]), dtype=float)
    if total.size < 2:
        return 0.0
    return float(np.std(total, ddof=1) / np.sqrt(total.size))


def solve(xi, gen, grid, paths, basis=None, k_max=DEFAULT_K_MAX, tol=DEFAULT_TOL,
          terminal_values=None, verbose=False):
    """
    Least-squares Monte Carlo solution of BSDE(ξ, f).

    Args:
        xi: TerminalValue (ignored when ``terminal_values`` is given)
        gen: Generator with ``beta`` and ``driver(t, y, z)``
        grid: TimeGrid the ensemble was sampled on
        paths: PathEnsemble
        basis: RegressionBasis (default: polynomials of degree 4)
        k_max: Fixed-point iteration cap per node
        tol: Relative fixed-point tolerance
        terminal_values: Precomputed ξ per sample
        verbose: Print per-node diagnostics

    Returns:
        BsdeSolution with Y[:, N] equal to ξ

    Raises:
        ValueError: βΔ >= 1, too few samples for the basis, non-finite ξ
        NumericalError: Fixed-point non-convergence, with the node index
    """
    basis = basis or RegressionBasis()
    _check_inputs(gen, grid, paths)
    size = basis.size(paths.dimension)
    if paths.n_samples < 10 * size:
        raise ValueError(f"{paths.n_samples} samples are too few for a basis of size {size} "
                         f"(need at least {10 * size})")
    terminal = _terminal_values(xi, paths, terminal_values)

    m, n, d = paths.increments.shape
    y = np.empty((m, n + 1))
    z = np.empty((m, n, d))
    y[:, n] = terminal
    iterations = [0] * n
    ridge_nodes = []
    state = paths.terminal()

    for i in range(n - 1, -1, -1):
        step = grid.steps[i]
        dw = paths.increments[:, i, :]
        state = state - dw if i > 0 else np.zeros_like(state)
        targets = np.column_stack([y[:, i + 1], y[:, i + 1, None] * dw / step])
        fit = regress(basis, state, targets, scale=np.sqrt(grid.nodes[i]))
        if fit.ridge:
            ridge_nodes.append(i)
            print(f"WARNING: normal matrix at node {i} is ill-conditioned "
                  f"(smallest singular value {fit.smallest_singular:.3g}); using ridge fallback")
        z[:, i, :] = fit.fitted[:, 1:]
        y[:, i], iterations[i] = _picard(gen, grid.nodes[i], fit.fitted[:, 0], z[:, i, :],
                                         step, i, k_max, tol)
        if verbose and (i % max(1, n // 10) == 0):
            print(f"node {i}: mean Y = {y[:, i].mean():.6g}, {iterations[i]} iteration(s)")

    y0_se = _forward_se(gen, grid, paths, y, z, terminal)
    return BsdeSolution(Y=y, Z=z, grid=grid, basis=basis.describe(), iterations=tuple(iterations),
                        ridge_nodes=tuple(sorted(ridge_nodes)), seed=paths.seed,
                        lineage=paths.lineage(), y0_se=y0_se)


def solve_lattice(xi, gen, grid, paths, half_width=12.0, spacing=0.02, order=64,
                  k_max=DEFAULT_K_MAX, tol=DEFAULT_TOL, terminal_func=None, verbose=False):
    """
    Deterministic backward scheme for Markovian ξ in d = 1.

    Values live on the lattice x_j = j·spacing, |x_j| <= half_width·√T.
    Conditional expectations over one step use Gauss–Hermite nodes and linear
    interpolation (flat beyond the lattice). Y and Z are read back onto the
    sample paths by interpolation; Y[:, N] is ξ on the paths exactly.

    Args:
        xi: Markovian TerminalValue with dimension 1
        gen: Generator with ``beta`` and ``driver(t, y, z)``
        grid, paths: Grid and the ensemble to read the solution back onto
        half_width: Lattice half-width in units of √T
        spacing: Lattice spacing
        order: Gauss–Hermite order
        terminal_func: Replaces ``xi.at`` for lattice evaluation (truncations)

    Returns:
        BsdeSolution with ``y0_se`` = 0
    """
    if not xi.markovian or xi.dimension != 1 or paths.dimension != 1:
        raise ValueError("the lattice solver needs a Markovian terminal value in dimension 1")
    if not spacing > 0 or not half_width > 0 or int(order) != order or order < 2:
        raise ValueError("lattice spacing, half-width and Gauss-Hermite order must be positive")
    _check_inputs(gen, grid, paths)

    evaluate = terminal_func or xi.at
    reach = half_width * np.sqrt(grid.horizon)
    lattice = np.arange(-np.floor(reach / spacing), np.floor(reach / spacing) + 1) * spacing
    nodes, weights = np.polynomial.hermite_e.hermegauss(int(order))
    weights = weights / weights.sum()

    value = np.asarray(evaluate(lattice), dtype=float)
    if not np.all(np.isfinite(value)):
        raise ValueError("terminal value is not finite on the lattice; truncate it first")

    m, n, _ = paths.increments.shape
    y = np.empty((m, n + 1))
    z = np.empty((m, n, 1))
    y[:, n] = np.asarray(evaluate(paths.terminal()[:, 0]), dtype=float)
    iterations = [0] * n
    state = paths.terminal()[:, 0]

    for i in range(n - 1, -1, -1):
        step = grid.steps[i]
        root = np.sqrt(step)
        shifted = np.interp(lattice[:, None] + root * nodes[None, :], lattice, value)
        c = shifted @ weights
        z_lattice = (shifted @ (weights * nodes)) / root
        value, iterations[i] = _picard(gen, grid.nodes[i], c, z_lattice[:, None], step, i, k_max, tol)
        state = state - paths.increments[:, i, 0] if i > 0 else np.zeros_like(state)
        y[:, i] = np.interp(state, lattice, value)
        z[:, i, 0] = np.interp(state, lattice, z_lattice)

    if verbose:
        print(f"lattice solve: {len(lattice)} points, Y_0 = {y[0, 0]:.8g}")
    return BsdeSolution(Y=y, Z=z, grid=grid,
                        basis=f"lattice(spacing={spacing:g},order={int(order)})",
                        iterations=tuple(iterations), ridge_nodes=(), seed=paths.seed,
                        lineage=paths.lineage(), y0_se=0.0)


def closed_form_oracle(g, gen, horizon, sample_range=50.0, radii=(10.0, 20.0, 30.0, 40.0)):
    """
    Y(t, w) for ξ = g(W_T) nondecreasing and f = α + βy + γ|z| in d = 1.

    For such ξ the constant control +γ is optimal, so
    Y(t, w) = e^{β(T-t)}·E[g(w + γ(T-t) + √(T-t)·X)] + ∫_t^T e^{β(s-t)}α_s ds.

    Args:
        g: Vectorised function of the real line, or a Markovian TerminalValue
        gen: Typical generator
        horizon: T
        sample_range: g is checked for monotonicity on [-sample_range, sample_range]

    Returns:
        Callable (t, w) -> Y

    Raises:
        ValueError: g not nondecreasing, or a generator with a custom driver
    """
    if getattr(gen, 'driver_func', None) is not None:
        raise ValueError("the closed-form oracle holds for f = alpha + beta*y + gamma*|z| only")
    func = g.at if isinstance(g, TerminalValue) else g
    grid = np.linspace(-sample_range, sample_range, 20001)
    with np.errstate(over='ignore', invalid='ignore'):
        sampled = np.asarray(func(grid), dtype=float)
    if np.any(np.diff(sampled) < -1e-12 * np.maximum(1.0, np.abs(sampled[1:]))):
        raise ValueError("terminal function is not nondecreasing; the constant-control oracle is invalid")

    def oracle(t, w):
        remaining = horizon - t
        if remaining < 0:
            raise ValueError(f"t = {t} lies beyond the horizon {horizon}")
        alpha_part = gen.discounted_alpha_integral(t, horizon)
        if remaining == 0:
            return float(func(np.array([w], dtype=float))[0]) + alpha_part
        drift = w + gen.gamma * remaining
        root = np.sqrt(remaining)
        result = gauss_expectation(lambda x: func(drift + root * x), radii=radii)
        if result.status != FINITE:
            raise NumericalError(f"oracle expectation is {result.status} at t={t}, w={w}")
        return float(np.exp(gen.beta * remaining) * result.value + alpha_part)

    return oracle


@dataclass(frozen=True)
class ComparisonReport:
    violations: int
    total: int
    fraction: float
    max_excess: float
    tol: float

    @property
    def passed(self):
        return self.fraction < VIOLATION_LIMIT


def comparison_check(sol_a, sol_b, tol=None):
    """
    Fraction of (path, node) pairs with Y_A > Y_B + tol.

    Both solutions must come from the same ensemble. ``tol`` defaults to
    three times the larger Y_0 standard error.

    Raises:
        ValueError: If the solutions come from different ensembles
    """
    if sol_a.lineage != sol_b.lineage or sol_a.Y.shape != sol_b.Y.shape:
        raise ValueError("solutions were computed on different path ensembles")
    if tol is None:
        tol = 3.0 * max(sol_a.y0_se, sol_b.y0_se)
    excess = sol_a.Y - sol_b.Y
    violations = int(np.count_nonzero(excess > tol))
    total = excess.size
    return ComparisonReport(violations=violations, total=total, fraction=violations / total,
                            max_excess=float(excess.max()), tol=float(tol))


def sp_norm(sol, p=2.0):
    """Empirical S^p norm E[max_i |Y_{t_i}|^p]^{1/p}."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float(np.mean(np.max(np.abs(sol.Y), axis=1) ** p) ** (1.0 / p))


def mp_norm(sol, p=2.0):
    """Empirical M^p norm E[(Σ |Z_i|² Δ_i)^{p/2}]^{1/p}."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float(np.mean(sol.z_energy() ** (p / 2.0)) ** (1.0 / p))
