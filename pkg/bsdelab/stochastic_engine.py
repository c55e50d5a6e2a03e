"""
Brownian path ensembles, bounded controls and Girsanov weights

Everything downstream (quadrature cross-checks aside) works on one
``PathEnsemble``: a uniform time grid and an array of Brownian increments
``dW[m, i, :]`` for sample m over step i.

Reproducibility
---------------
Samples are generated in fixed-size chunks. Chunk k draws its increments from
a counter-based Philox generator keyed by ``SeedSequence(seed, spawn_key=(k,))``,
so a sample's increments depend only on (seed, chunk size, chunk index,
position in chunk). Two consequences:

- Chunks can be generated on worker threads in any order and the assembled
  ensemble is still bit-identical.
- Growing ``n_samples`` with the same seed and chunk size extends the ensemble:
  the first M samples of a 2M ensemble are the M-sample ensemble. Verdicts that
  must be stable when M doubles are checked on exactly that lineage.

Controls
--------
A ``ControlProcess`` is piecewise constant on grid intervals and adapted: its
value on [t_i, t_{i+1}) only looks at W up to t_i. Every constructor here
builds controls from ``paths.at(i)``, never from increments at or after i.
Families of controls are finite, so any supremum taken over them is a lower
bound of the supremum over all bounded progressively measurable controls.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

DEFAULT_CHUNK_SIZE = 16384

# |q| <= gamma is checked with this relative slack
BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Discretisation 0 = t_0 < ... < t_N = T of the horizon."""

    horizon: float
    nodes: np.ndarray

    @property
    def n_steps(self):
        return len(self.nodes) - 1

    @property
    def steps(self):
        return np.diff(self.nodes)

    def remaining(self, i):
        """Time to maturity T - t_i."""
        return self.horizon - self.nodes[i]


@dataclass(frozen=True)
class PathEnsemble:
    """Seeded d-dimensional Brownian increments on a time grid."""

    grid: TimeGrid
    increments: np.ndarray  # shape (M, N, d)
    seed: int
    chunk_size: int

    @property
    def dimension(self):
        return self.increments.shape[2]

    @property
    def n_samples(self):
        return self.increments.shape[0]

    @cached_property
    def _levels(self):
        # one cumulative sum per ensemble; at() and brownian() slice it
        m, _, d = self.increments.shape
        w = np.zeros((m, self.grid.n_steps + 1, d))
        np.cumsum(self.increments, axis=1, out=w[:, 1:, :])
        return w

    def brownian(self):
        """W at every node, shape (M, N+1, d), with W_0 = 0."""
        return self._levels.copy()

    def at(self, i):
        """W_{t_i} for every sample, shape (M, d)."""
        return self._levels[:, i, :].copy()

    def terminal(self):
        """W_T for every sample, shape (M, d)."""
        return self.at(self.grid.n_steps)

    def lineage(self):
        """Identity of the random numbers, used to refuse mixed comparisons."""
        return (self.seed, self.chunk_size, self.n_samples, self.dimension,
                tuple(np.round(self.grid.nodes, 15)))


@dataclass(frozen=True)
class ControlProcess:
    """Adapted control, piecewise constant on grid intervals."""

    bound: float
    values: np.ndarray  # shape (M, N, d)
    tag: str = ''

    def norms(self):
        return np.linalg.norm(self.values, axis=2)


@dataclass(frozen=True)
class GirsanovWeights:
    """Running density M^q at every node, kept in log-space."""

    log_weights: np.ndarray  # shape (M, N+1)

    @property
    def weights(self):
        with np.errstate(over='ignore'):
            return np.exp(self.log_weights)

    def terminal(self):
        return self.weights[:, -1]


def build_grid(horizon, n_steps, spacing='uniform'):
    """
    Build a time grid on [0, T].

    Args:
        horizon: T > 0
        n_steps: Number of steps N >= 1
        spacing: Only 'uniform' is supported

    Returns:
        TimeGrid with N+1 nodes and steps T/N

    Raises:
        ValueError: On non-positive T or N, or an unknown spacing
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps}")
    if spacing != 'uniform':
        raise ValueError(f"Unsupported grid spacing: {spacing}")

    n_steps = int(n_steps)
    nodes = np.arange(n_steps + 1) * (float(horizon) / n_steps)
    nodes[-1] = float(horizon)
    return TimeGrid(horizon=float(horizon), nodes=nodes)


def _chunk_normals(seed, chunk_index, chunk_size, shape):
    """Standard normals for one chunk, keyed only by (seed, chunk index)."""
    seq = np.random.SeedSequence(seed, spawn_key=(chunk_index,))
    rng = np.random.Generator(np.random.Philox(seq))
    return rng.standard_normal((chunk_size,) + shape)


def sample_brownian(grid, dimension, n_samples, seed, chunk_size=DEFAULT_CHUNK_SIZE,
                    max_workers=1, verbose=False):
    """
    Sample a Brownian ensemble on a grid.

    Chunks are independent and may be generated concurrently; they are
    assembled by chunk index, so the result does not depend on
    ``max_workers``.

    Args:
        grid: TimeGrid
        dimension: d >= 1
        n_samples: M >= 1
        seed: Non-negative integer seed (64-bit)
        chunk_size: Samples per chunk; part of the reproducibility key
        max_workers: Threads used to generate chunks (default 1)
        verbose: Print debug information

    Returns:
        PathEnsemble with increments of variance Δ_i per coordinate

    Raises:
        ValueError: On invalid sizes or seed
    """
    if int(dimension) != dimension or dimension < 1:
        raise ValueError(f"dimension must be a positive integer, got {dimension}")
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValueError(f"n_samples must be a positive integer, got {n_samples}")
    if int(chunk_size) != chunk_size or chunk_size < 1:
        raise ValueError(f"chunk_size must be a positive integer, got {chunk_size}")
    if int(seed) != seed or seed < 0 or seed >= 2 ** 64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")

    dimension, n_samples, chunk_size, seed = int(dimension), int(n_samples), int(chunk_size), int(seed)
    n_chunks = -(-n_samples // chunk_size)
    shape = (grid.n_steps, dimension)
    scale = np.sqrt(grid.steps)[None, :, None]

    if verbose:
        print(f"Sampling {n_samples} paths x {grid.n_steps} steps x d={dimension} "
              f"in {n_chunks} chunk(s), seed={seed}")

    def draw(k):
        return _chunk_normals(seed, k, chunk_size, shape)

    if max_workers and max_workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            chunks = list(executor.map(draw, range(n_chunks)))
    else:
        chunks = [draw(k) for k in range(n_chunks)]

    increments = np.concatenate(chunks, axis=0)[:n_samples] * scale
    return PathEnsemble(grid=grid, increments=increments, seed=seed, chunk_size=chunk_size)


def mc_estimate(values):
    """
    Sample mean and its standard error.

    Raises:
        ValueError: On an empty sample
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("Cannot estimate an expectation from an empty ensemble")
    mean = float(np.mean(values))
    if values.size == 1:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / np.sqrt(values.size))


def heavy_tail_share(values, top=0.01):
    """Share of sum(|values|) carried by the largest ``top`` fraction of samples."""
    values = np.abs(np.asarray(values, dtype=float))
    total = values.sum()
    if values.size == 0 or total == 0 or not np.isfinite(total):
        return 0.0 if total == 0 else 1.0
    k = max(1, int(np.ceil(top * values.size)))
    largest = np.partition(values, values.size - k)[values.size - k:]
    return float(largest.sum() / total)


def _check_control(paths, control):
    if control.values.shape != paths.increments.shape:
        raise ValueError(f"Control shape {control.values.shape} does not match "
                         f"ensemble shape {paths.increments.shape}")
    worst = float(control.norms().max()) if control.values.size else 0.0
    if worst > control.bound * (1 + BOUND_SLACK):
        raise ValueError(f"Control violates its bound: |q| = {worst} > gamma = {control.bound}")


def constant_control(paths, value, bound, tag=None):
    """
    Control equal to ``value`` (scalar or length-d vector) everywhere.

    Raises:
        ValueError: If |value| exceeds the bound
    """
    value = np.broadcast_to(np.asarray(value, dtype=float), (paths.dimension,))
    if np.linalg.norm(value) > bound * (1 + BOUND_SLACK):
        raise ValueError(f"Constant control {value.tolist()} exceeds bound {bound}")
    values = np.broadcast_to(value, paths.increments.shape).copy()
    return ControlProcess(bound=float(bound), values=values,
                          tag=tag or f"constant({','.join(format(v, 'g') for v in value)})")


def bang_bang_control(paths, bound, seed, tag=None):
    """
    Random adapted bang-bang control.

    On [t_i, t_{i+1}) the control is ``bound * s * u`` where u is a random unit
    direction and ``s = sgn(u . W_{t_i} - c_i)`` with seeded random thresholds
    c_i; sgn(0) = +1. The randomness is in the rule, not in the path, so the
    control only reads W up to t_i.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xB4,)))
    direction = rng.standard_normal(paths.dimension)
    direction /= np.linalg.norm(direction)
    thresholds = rng.normal(0.0, np.sqrt(np.maximum(paths.grid.nodes[:-1], 1e-12)))

    values = np.empty_like(paths.increments)
    w = np.zeros((paths.n_samples, paths.dimension))
    for i in range(paths.grid.n_steps):
        signs = np.where(w @ direction - thresholds[i] >= 0, 1.0, -1.0)
        values[:, i, :] = bound * signs[:, None] * direction[None, :]
        w += paths.increments[:, i, :]
    return ControlProcess(bound=float(bound), values=values, tag=tag or f"bang-bang({seed})")


def feedback_control(z, bound, tag='feedback'):
    """
    The bang-bang control gamma * sgn(Z) read off a solver's Z.

    For d = 1 this is gamma * sgn(Z) with sgn(0) = +1. For d > 1 the control is
    gamma * Z / |Z|, and gamma * e_1 where Z = 0.

    Args:
        z: Z array, shape (M, N, d)
        bound: gamma
    """
    z = np.asarray(z, dtype=float)
    norms = np.linalg.norm(z, axis=2, keepdims=True)
    if z.shape[2] == 1:
        values = np.where(z >= 0, bound, -bound).astype(float)
    else:
        unit = np.zeros_like(z)
        unit[..., 0] = 1.0
        safe = np.where(norms > 0, norms, 1.0)
        values = bound * np.where(norms > 0, z / safe, unit)
    return ControlProcess(bound=float(bound), values=values, tag=tag)


def stochastic_integral(paths, control, start=0):
    """
    Left-endpoint Itô sum of a control against the ensemble.

    Args:
        paths: PathEnsemble
        control: ControlProcess on the same ensemble
        start: First node of the integral (default 0), i.e. ∫_{t_start}^T q dW

    Returns:
        Per-sample array sum_{i >= start} q[m, i] . dW[m, i]

    Raises:
        ValueError: If the control breaks its bound or does not fit the ensemble
    """
    _check_control(paths, control)
    q = control.values[:, start:, :]
    dw = paths.increments[:, start:, :]
    return np.einsum('mid,mid->m', q, dw)


def girsanov_weights(paths, control):
    """
    Running Girsanov densities M^q_{t_i} for every sample.

    Accumulated in log-space: log M^q_{t_i} = sum_{j<i} (q_j . dW_j - |q_j|^2 Δ_j / 2).

    Raises:
        ValueError: If the control breaks its bound or does not fit the ensemble
    """
    _check_control(paths, control)
    q = control.values
    steps = paths.grid.steps[None, :]
    log_increments = np.einsum('mid,mid->mi', q, paths.increments) - 0.5 * np.einsum('mid,mid->mi', q, q) * steps
    log_weights = np.zeros((paths.n_samples, paths.grid.n_steps + 1))
    np.cumsum(log_increments, axis=1, out=log_weights[:, 1:])
    return GirsanovWeights(log_weights=log_weights)


def weighted_expectation(values, weights, at=None):
    """
    Expectation under Q^q by reweighting: mean of M^q[., at] * values.

    Args:
        values: Per-sample values
        weights: GirsanovWeights on the same ensemble
        at: Node index of the density (default: the last node)

    Returns:
        (estimate, standard error)

    Raises:
        ValueError: On an empty ensemble or mismatched sizes
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("Cannot estimate an expectation from an empty ensemble")
    column = weights.log_weights.shape[1] - 1 if at is None else at
    w = weights.weights[:, column]
    if w.shape != values.shape:
        raise ValueError(f"values ({values.shape}) and weights ({w.shape}) "
                         f"come from different ensembles")
    return mc_estimate(w * values)
