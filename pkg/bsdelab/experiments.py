"""
Experiment runners for the bsdelab library

Each experiment kind maps a validated ``ExperimentConfig`` to a
``ResultTable``. Checks of mathematical properties are collected on the table
as violations rather than raised mid-run, so the artifacts are always written
before ``raise_for_violations`` turns them into an InvariantViolation.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy

from .common import (DIVERGENT, InvariantViolation, format_real, resolve_output_dir,
                     write_csv_table, write_json_document)
from .config import validate
from .dual_bound import (abs_z_generator, apriori_bound, build_control_family, dual_family_max,
                         dual_value, phi_moment_check)
from .integrability import (FINITE, abs_exp_name, counterexample_mean, counterexample_terminal,
                            integrability_report, power_name, psi_name, young_relative_gap)
from .ladder import DIVERGING, dyadic_schedule, necessity_check, run_ladder
from .lsmc_solver import RegressionBasis, closed_form_oracle, mp_norm, solve, solve_lattice, sp_norm
from .stochastic_engine import bang_bang_control, build_grid, constant_control, sample_brownian

# Smallest admissible relative Young gap
YOUNG_FLOOR = -1e-12

# λ buckets for the Young sweep rows
YOUNG_BUCKETS = (0.1, 0.3, 1.0, 3.0, 10.0)

# Relative tolerance of the quadrature mean against its closed form
MEAN_TOLERANCE = 1e-6

# Solver against oracle: relative error allowed beyond 3 SE
ORACLE_TOLERANCE = 0.02

# Pathwise checks pass below this violation fraction
VIOLATION_LIMIT = 1e-3

# Dual values may exceed Y_0 by 3 combined SE plus this share of |Y_0|
DUAL_SLACK = 0.02


@dataclass
class ResultTable:
    """Rows of named cells for one experiment, plus metadata and failed checks."""

    kind: str
    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def add_row(self, **cells):
        unknown = set(cells) - set(self.columns)
        if unknown:
            raise ValueError(f"Unknown column(s) for {self.kind}: {', '.join(sorted(unknown))}")
        self.rows.append(cells)

    def check(self, condition, message):
        """Record a violation unless ``condition`` holds."""
        if not condition:
            self.violations.append(message)
        return bool(condition)

    def raise_for_violations(self):
        if self.violations:
            raise InvariantViolation('; '.join(self.violations))

    def document(self):
        return {'kind': self.kind, 'columns': list(self.columns), 'rows': self.rows,
                'metadata': self.metadata, 'violations': list(self.violations)}

    def summary(self, max_rows=20):
        """PrettyTable rendering for the console."""
        from prettytable import PrettyTable

        table = PrettyTable()
        table.field_names = list(self.columns)
        for column in self.columns:
            table.align[column] = "l"
        for row in self.rows[:max_rows]:
            cells = []
            for column in self.columns:
                value = row.get(column)
                if isinstance(value, float):
                    value = format(value, '.6g')
                cells.append(format_real(value))
            table.add_row(cells)
        return table.get_string()


def _paths(config, horizon=None):
    grid = build_grid(config.horizon if horizon is None else horizon, config.n_steps)
    paths = sample_brownian(grid, config.dimension, config.n_samples, config.seed,
                            chunk_size=config.chunk_size, max_workers=config.max_workers)
    return grid, paths


def _generator(config):
    return config.build_generator()


def _basis(config):
    return RegressionBasis(config.basis, degree=config.degree, bins=config.bins)


def _solve(config, xi, gen, grid, paths):
    if config.method == 'lattice':
        return solve_lattice(xi, gen, grid, paths, k_max=config.k_max)
    return solve(xi, gen, grid, paths, basis=_basis(config), k_max=config.k_max)


def run_young_sweep(config, verbose=False):
    """Relative Young gap on random (λ, x, y) triples, minimum per λ bucket."""
    table = ResultTable('young-sweep', ['lam_low', 'lam_high', 'count', 'min_relative_gap',
                                        'x_at_min', 'y_at_min'])
    rng = np.random.default_rng(config.seed)
    n = config.n_triples
    lam = rng.uniform(0.1, 10.0, n)
    x = rng.uniform(-20.0, 20.0, n)
    # half uniform on [0, 1e8], half log-uniform down to 1e-8
    y = np.where(rng.random(n) < 0.5, rng.uniform(0.0, 1e8, n), 10.0 ** rng.uniform(-8.0, 8.0, n))
    gap = young_relative_gap(lam, x, y)

    for low, high in zip(YOUNG_BUCKETS[:-1], YOUNG_BUCKETS[1:]):
        inside = (lam >= low) & (lam < high) if high < YOUNG_BUCKETS[-1] else (lam >= low)
        if not inside.any():
            table.add_row(lam_low=low, lam_high=high, count=0)
            continue
        k = np.flatnonzero(inside)[np.argmin(gap[inside])]
        table.add_row(lam_low=low, lam_high=high, count=int(inside.sum()),
                      min_relative_gap=float(gap[k]), x_at_min=float(x[k]), y_at_min=float(y[k]))

    worst = float(gap.min())
    table.metadata['min_relative_gap'] = worst
    table.check(worst >= YOUNG_FLOOR, f"Young gap {worst:.3g} below {YOUNG_FLOOR:g}")
    if verbose:
        print(f"young sweep: {n} triples, min relative gap {worst:.3g}")
    return table


def run_phi_moment(config, verbose=False):
    """E[Φ_λ(exp ∫q dW)] for q ≡ γ and random bang-bang controls."""
    table = ResultTable('phi-moment', ['control', 'lhs', 'se', 'rhs', 'passed', 'excess_in_se'])
    grid, paths = _paths(config)
    controls = [constant_control(paths, config.gamma, config.gamma, tag=f"constant({config.gamma:g})")]
    controls += [bang_bang_control(paths, config.gamma, seed=[config.seed, k], tag=f"bang-bang({k})")
                 for k in range(config.n_controls)]

    for control in controls:
        result = phi_moment_check(config.lam, control, config.gamma, paths)
        excess = (result.lhs - result.rhs) / result.se if result.se > 0 else 0.0
        table.add_row(control=result.tag, lhs=result.lhs, se=result.se, rhs=result.rhs,
                      passed=result.passed, excess_in_se=excess)
        table.check(result.passed, f"{result.tag}: {result.lhs:.6g} exceeds {result.rhs:.6g} + 3 SE")
        if verbose:
            print(f"{result.tag}: {result.lhs:.6g} +/- {result.se:.3g} vs {result.rhs:.6g}")
    return table


def run_integrability(config, verbose=False):
    """Integrability functionals and the necessary exponential moments of ξ."""
    table = ResultTable('integrability', ['functional', 'estimate', 'error', 'method', 'status',
                                          'exponent'])
    xi = config.build_terminal()
    paths = None
    if not (xi.markovian and xi.dimension == 1):
        _, paths = _paths(config)
    report = integrability_report(xi, lambdas=(config.lam,), gamma=config.gamma, paths=paths,
                                  horizon=config.horizon, radii=config.radii,
                                  tol=config.tolerance, verbose=verbose)
    for row in report.rows():
        table.add_row(**row)
    table.metadata['terminal'] = report.terminal
    if xi.markovian and xi.dimension == 1 and xi.nonnegative:
        table.metadata['necessity'] = necessity_check(xi, config.gamma, config.horizon).verdict
    return table


def run_solve(config, verbose=False):
    """Solve BSDE(ξ, f); compare Y_0 with the constant-control oracle when it applies."""
    table = ResultTable('solve', ['node', 't', 'mean_y', 'std_y', 'mean_abs_z', 'oracle'])
    xi = config.build_terminal()
    gen = _generator(config)
    grid, paths = _paths(config)
    solution = _solve(config, xi, gen, grid, paths)

    oracle = None
    if gen.typical and xi.markovian and xi.dimension == 1 and xi.monotone:
        oracle = closed_form_oracle(xi, gen, config.horizon, radii=config.radii)(0.0, 0.0)

    for i in range(grid.n_steps + 1):
        z = np.linalg.norm(solution.Z[:, i, :], axis=1) if i < grid.n_steps else None
        table.add_row(node=i, t=float(grid.nodes[i]), mean_y=float(solution.Y[:, i].mean()),
                      std_y=float(solution.Y[:, i].std()),
                      mean_abs_z=float(z.mean()) if z is not None else float('nan'),
                      oracle=oracle if i == 0 and oracle is not None else float('nan'))

    table.metadata.update({'y0': solution.y0, 'y0_se': solution.y0_se, 'basis': solution.basis,
                           'ridge_nodes': list(solution.ridge_nodes),
                           'max_increment': solution.max_increment(),
                           's2_norm': sp_norm(solution), 'm2_norm': mp_norm(solution)})
    if oracle is not None:
        error = abs(solution.y0 - oracle)
        table.metadata['oracle'] = oracle
        table.metadata['relative_error'] = error / abs(oracle) if oracle else float('inf')
        table.check(error <= max(ORACLE_TOLERANCE * abs(oracle), 3 * solution.y0_se),
                    f"Y_0 = {solution.y0:.6g} is off the oracle {oracle:.6g}")
    if verbose:
        print(f"Y_0 = {solution.y0:.8g} +/- {solution.y0_se:.3g}")
    return table


def _ladder_table(kind):
    return ResultTable(kind, ['rung', 'n', 'p', 'y0', 'se', 'increment', 'bound_violations', 'status'])


def _record_ladder(table, report):
    for row in report.rows():
        table.add_row(**row)
    table.metadata.update({
        'verdict': report.verdict,
        'method': report.method,
        'n_violation_fraction': report.n_violation_fraction,
        'p_violation_fraction': report.p_violation_fraction,
        'bound_status': report.bound_status,
        'bound_violation_fraction': report.bound_violation_fraction,
        'hitting_process': report.hitting_process,
        'hitting': {format(k, 'g'): counts.tolist() for k, counts in report.hitting.items()},
    })
    table.check(report.monotone, f"rung monotonicity fails (n: {report.n_violation_fraction:.3g}, "
                                  f"p: {report.p_violation_fraction:.3g})")
    table.check(report.dominated, f"rungs exceed the a priori bound "
                                  f"({report.bound_violation_fraction:.3g} of pairs)")


def run_ladder_experiment(config, verbose=False):
    """Truncation ladder for ξ along dyadic levels."""
    table = _ladder_table('ladder')
    xi = config.build_terminal()
    gen = _generator(config)
    grid, paths = _paths(config)
    schedule = dyadic_schedule(*config.rungs)
    report = run_ladder(xi, gen, schedule, grid, paths, basis=_basis(config), lam=config.lam,
                        method=config.method, levels=config.levels,
                        max_workers=config.max_workers, verbose=verbose)
    _record_ladder(table, report)
    return table


def run_counterexample(config, verbose=False):
    """
    The non-integrable example: closed-form mean, Ψ_λ and exponential moments
    by quadrature, the necessity check, and a lattice ladder with f = |z|.
    """
    table = ResultTable('counterexample', ['quantity', 'value', 'reference', 'status', 'exponent'])
    mu = config.mu
    xi = counterexample_terminal(mu)

    report = integrability_report(xi, lambdas=(config.lam,), powers=(1.0,), gamma=1.0, horizon=1.0,
                                  radii=config.radii, tol=config.tolerance, verbose=verbose)
    mean = report.get(power_name(1.0))
    closed = counterexample_mean(mu)
    table.add_row(quantity='E[xi]', value=mean.estimate, reference=closed, status=mean.status,
                  exponent='')
    table.check(mean.status == FINITE and abs(mean.estimate - closed) <= MEAN_TOLERANCE * closed,
                f"E[xi] = {mean.estimate} misses the closed form {closed:.10g}")

    psi_entry = report.get(psi_name(config.lam))
    expected_psi = FINITE if mu > 1.0 / np.sqrt(config.lam) else DIVERGENT
    table.add_row(quantity=psi_entry.name, value=psi_entry.estimate, reference=expected_psi,
                  status=psi_entry.status, exponent=psi_entry.evidence.get('exponent', ''))
    table.check(psi_entry.status == expected_psi,
                f"{psi_entry.name} is {psi_entry.status}, expected {expected_psi}")

    exp_entry = report.get(abs_exp_name(1.0))
    table.add_row(quantity=exp_entry.name, value=exp_entry.estimate, reference=1.0 - mu,
                  status=exp_entry.status, exponent=exp_entry.evidence.get('exponent', ''))
    table.check(exp_entry.status == DIVERGENT, f"{exp_entry.name} is {exp_entry.status}")

    necessity = necessity_check(xi, 1.0)
    table.add_row(quantity='necessity check', value=necessity.verdict, reference='FAIL',
                  status=necessity.verdict, exponent='')

    grid, paths = _paths(config, horizon=1.0)
    ladder = run_ladder(xi, abs_z_generator(1.0), dyadic_schedule(*config.rungs), grid, paths,
                        method='lattice', levels=config.levels, max_workers=config.max_workers,
                        verbose=verbose)
    table.add_row(quantity='ladder verdict', value=ladder.verdict, reference=DIVERGING,
                  status=ladder.verdict, exponent='')
    table.check(ladder.verdict == DIVERGING, f"ladder verdict is {ladder.verdict}")
    table.metadata['ladder'] = ladder.rows()
    table.metadata['ladder_y0'] = ladder.y0_values()
    return table


def run_bound(config, verbose=False):
    """
    Solution against the a priori bound Ȳ, with a dual lower bound for Y_0.

    Ȳ is built from the typical generator dominating f, and |Y| is compared
    with it. Dual values exist for the typical generator only.
    """
    table = ResultTable('bound', ['node', 't', 'mean_y', 'mean_abs_y', 'mean_bound', 'max_excess',
                                  'violations'])
    xi = config.build_terminal()
    gen = _generator(config)
    grid, paths = _paths(config)
    solution = _solve(config, xi, gen, grid, paths)
    bound = apriori_bound(xi, gen.dominating(), config.lam, grid, paths, basis=_basis(config),
                          radii=config.radii, tol=config.tolerance, verbose=verbose)

    tol = 3.0 * solution.y0_se
    magnitude = np.abs(solution.Y)
    excess = magnitude - bound.values
    for i in range(grid.n_steps + 1):
        table.add_row(node=i, t=float(grid.nodes[i]), mean_y=float(solution.Y[:, i].mean()),
                      mean_abs_y=float(magnitude[:, i].mean()),
                      mean_bound=float(bound.values[:, i].mean()),
                      max_excess=float(excess[:, i].max()),
                      violations=int(np.count_nonzero(excess[:, i] > tol)))
    fraction = float(np.count_nonzero(excess > tol)) / excess.size
    table.check(fraction < VIOLATION_LIMIT,
                f"|Y| exceeds the a priori bound on {fraction:.3g} of (path, node) pairs")
    table.metadata.update({'y0': solution.y0, 'y0_se': solution.y0_se, 'bound_y0': bound.y0,
                           'bound_method': bound.method, 'violation_fraction': fraction,
                           'bound_generator': gen.dominating().description})

    if not gen.typical:
        table.metadata['dual_status'] = f"skipped: generator {gen.description} is not typical"
        return table

    family = build_control_family(paths, config.gamma, n_bang_bang=config.n_controls,
                                  solution=solution, seed=config.seed)
    dual = dual_family_max(xi, gen, paths, family)
    dual_tol = 3.0 * np.hypot(solution.y0_se, dual.se) + DUAL_SLACK * abs(solution.y0)
    table.check(dual.value <= solution.y0 + dual_tol,
                f"dual value {dual.value:.6g} of {dual.tag} exceeds Y_0 = {solution.y0:.6g} "
                f"by more than {dual_tol:.3g}")
    # grid maxima are evidence of local boundedness, never a certificate
    best = next(control for control in family if control.tag == dual.tag)
    grid_max = [dual.value]
    for i in range(1, grid.n_steps + 1):
        node_value = dual_value(xi, best, gen, paths, node=i, basis=_basis(config))
        grid_max.append(float(node_value.per_path.max()))
    table.metadata.update({'dual_status': 'checked', 'dual_lower_bound': dual.value,
                           'dual_se': dual.se, 'dual_tolerance': float(dual_tol),
                           'dual_control': dual.tag, 'dual_family': dual.values,
                           'dual_grid_max': grid_max})
    if verbose:
        print(f"Y_0 = {solution.y0:.6g}, dual lower bound {dual.value:.6g}, bound {bound.y0:.6g}")
    return table


RUNNERS = {
    'young-sweep': run_young_sweep,
    'phi-moment': run_phi_moment,
    'integrability': run_integrability,
    'solve': run_solve,
    'ladder': run_ladder_experiment,
    'counterexample': run_counterexample,
    'bound': run_bound,
}


def run(config, verbose=False):
    """
    Validate a configuration and run its experiment.

    Returns:
        ResultTable; failed property checks are listed in ``violations``

    Raises:
        ValueError: On an invalid configuration, before any computation
        NumericalError: If a solver or quadrature fails
    """
    validate(config)
    from . import __version__

    started = time.perf_counter()
    table = RUNNERS[config.kind](config, verbose=verbose)
    table.metadata.update({
        'config': config.to_dict(),
        'seed': config.seed,
        'versions': {'bsdelab': __version__, 'numpy': np.__version__, 'scipy': scipy.__version__},
        'wall_clock_seconds': time.perf_counter() - started,
    })
    return table


def emit(table, fmt='both', out_dir=None, verbose=False):
    """
    Write ``<kind>.csv`` and/or ``<kind>.json`` into the output directory.

    Returns:
        List of written paths

    Raises:
        ValueError: On an unknown format
        OSError: If the directory or a file cannot be written
    """
    if fmt not in ('csv', 'json', 'both'):
        raise ValueError(f"Unknown output format: {fmt}")
    directory = resolve_output_dir(out_dir, verbose=verbose)
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise OSError(f"Cannot create output directory {directory}: {e}") from e

    written = []
    if fmt in ('csv', 'both'):
        path = os.path.join(directory, f"{table.kind}.csv")
        write_csv_table(path, table.columns, table.rows)
        written.append(path)
    if fmt in ('json', 'both'):
        path = os.path.join(directory, f"{table.kind}.json")
        write_json_document(path, table.document())
        written.append(path)
    if verbose:
        for path in written:
            print(f"Wrote {path}")
    return written
