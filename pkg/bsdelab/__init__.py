"""
bsdelab - numerical laboratory for BSDEs with linear-growth generators

Simulates Brownian paths, checks integrability of terminal values under the
family of Young functions psi_lambda, builds the dual a priori bound, solves
BSDEs by least-squares Monte Carlo and runs truncation ladders.
"""

__version__ = "0.1.0"

from .common import (
    NumericalError,
    InvariantViolation,
    Divergent,
    DIVERGENT,
    resolve_output_dir,
    format_real,
    write_csv_table,
    write_json_document
)

from .stochastic_engine import (
    TimeGrid,
    PathEnsemble,
    ControlProcess,
    GirsanovWeights,
    build_grid,
    sample_brownian,
    mc_estimate,
    constant_control,
    bang_bang_control,
    feedback_control,
    stochastic_integral,
    girsanov_weights,
    weighted_expectation
)

from .integrability import (
    FINITE,
    FAILED,
    UNSTABLE,
    LambdaParam,
    psi,
    phi,
    young_gap,
    young_relative_gap,
    TerminalValue,
    constant_terminal,
    brownian_terminal,
    clamped_brownian,
    abs_brownian,
    exp_brownian,
    exp_abs_brownian,
    counterexample_terminal,
    counterexample_mean,
    running_max_terminal,
    gauss_expectation,
    integrability_report
)

from .dual_bound import (
    GeneratorSpec,
    typical_generator,
    abs_z_generator,
    sublinear_generator,
    constant_generator,
    BoundProcess,
    check_sufficiency,
    apriori_bound_value,
    apriori_bound,
    dual_value,
    build_control_family,
    dual_family_max,
    phi_moment_check
)

from .lsmc_solver import (
    RegressionBasis,
    BsdeSolution,
    regress,
    solve,
    solve_lattice,
    closed_form_oracle,
    comparison_check,
    sp_norm,
    mp_norm
)

from .ladder import (
    CONVERGING,
    DIVERGING,
    INCONCLUSIVE,
    TruncationSchedule,
    dyadic_schedule,
    truncate_terminal,
    ladder_verdict,
    run_ladder,
    hitting_time,
    hitting_histogram,
    necessity_check
)

from .config import (
    ExperimentConfig,
    ConfigManager,
    validate,
    load_config,
    apply_overrides,
    interactive_setup,
    list_profiles
)

from .experiments import (
    ResultTable,
    RUNNERS,
    run,
    emit
)

__all__ = [
    # Errors and output
    'NumericalError',
    'InvariantViolation',
    'Divergent',
    'DIVERGENT',
    'resolve_output_dir',
    'format_real',
    'write_csv_table',
    'write_json_document',

    # Simulation
    'TimeGrid',
    'PathEnsemble',
    'ControlProcess',
    'GirsanovWeights',
    'build_grid',
    'sample_brownian',
    'mc_estimate',
    'constant_control',
    'bang_bang_control',
    'feedback_control',
    'stochastic_integral',
    'girsanov_weights',
    'weighted_expectation',

    # Integrability
    'FINITE',
    'FAILED',
    'UNSTABLE',
    'LambdaParam',
    'psi',
    'phi',
    'young_gap',
    'young_relative_gap',
    'TerminalValue',
    'constant_terminal',
    'brownian_terminal',
    'clamped_brownian',
    'abs_brownian',
    'exp_brownian',
    'exp_abs_brownian',
    'counterexample_terminal',
    'counterexample_mean',
    'running_max_terminal',
    'gauss_expectation',
    'integrability_report',

    # Dual bound
    'GeneratorSpec',
    'typical_generator',
    'abs_z_generator',
    'sublinear_generator',
    'constant_generator',
    'BoundProcess',
    'check_sufficiency',
    'apriori_bound_value',
    'apriori_bound',
    'dual_value',
    'build_control_family',
    'dual_family_max',
    'phi_moment_check',

    # Solver
    'RegressionBasis',
    'BsdeSolution',
    'regress',
    'solve',
    'solve_lattice',
    'closed_form_oracle',
    'comparison_check',
    'sp_norm',
    'mp_norm',

    # Ladders
    'CONVERGING',
    'DIVERGING',
    'INCONCLUSIVE',
    'TruncationSchedule',
    'dyadic_schedule',
    'truncate_terminal',
    'ladder_verdict',
    'run_ladder',
    'hitting_time',
    'hitting_histogram',
    'necessity_check',

    # Configuration
    'ExperimentConfig',
    'ConfigManager',
    'validate',
    'load_config',
    'apply_overrides',
    'interactive_setup',
    'list_profiles',

    # Experiments
    'ResultTable',
    'RUNNERS',
    'run',
    'emit'
]
