"""
Truncation ladders and hitting-time diagnostics for the bsdelab library

A ladder solves BSDE(ξ^{n,p}, f) with ξ^{n,p} = ξ⁺∧n - ξ⁻∧p along a schedule
of nondecreasing levels (n_j, p_j), all on one path ensemble. With common
random numbers the rung solutions are pathwise nondecreasing in n and
nonincreasing in p; their Y_0 either settle (a solution exists) or keep
growing (none does).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .common import DIVERGENT, NumericalError
from .dual_bound import apriori_bound
from .integrability import (FINITE, TerminalValue, abs_exp_name, integrability_report,
                            signed_exp_name)
from .lsmc_solver import ComparisonReport, solve, solve_lattice

CLAMP = 'clamp'
INDICATOR = 'indicator'

LSMC = 'lsmc'
LATTICE = 'lattice'

CONVERGING = 'CONVERGING'
DIVERGING = 'DIVERGING'
INCONCLUSIVE = 'INCONCLUSIVE'

MIN_RUNGS = 3

# Increments are compared with max(VERDICT_FLOOR, c·SE)
VERDICT_FLOOR = 1e-3
CONVERGING_SE = 3.0
DIVERGING_SE = 5.0

# Divergence needs increments that stay level: each at least this share of the one before
DIVERGING_RATIO = 0.85

# Pathwise checks tolerate this relative slack when the solutions carry no SE
PATHWISE_FLOOR = 1e-8

DEFAULT_LEVELS = (10.0, 100.0)

PASS = 'PASS'
FAIL = 'FAIL'
UNDECIDED = 'UNDECIDED'


@dataclass(frozen=True)
class TruncationSchedule:
    """Truncation levels (n_j, p_j), both nondecreasing, at least three rungs."""

    levels: tuple

    def __post_init__(self):
        levels = tuple((float(n), float(p)) for n, p in self.levels)
        if len(levels) < MIN_RUNGS:
            raise ValueError(f"a truncation schedule needs at least {MIN_RUNGS} rungs, got {len(levels)}")
        for n, p in levels:
            if not (n > 0 and p > 0):
                raise ValueError(f"truncation levels must be positive, got (n={n:g}, p={p:g})")
        for (n0, p0), (n1, p1) in zip(levels, levels[1:]):
            if n1 < n0 or p1 < p0:
                raise ValueError(f"truncation levels must be nondecreasing: "
                                 f"({n0:g}, {p0:g}) is followed by ({n1:g}, {p1:g})")
        object.__setattr__(self, 'levels', levels)

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    @property
    def n_levels(self):
        return [n for n, _ in self.levels]

    @property
    def p_levels(self):
        return [p for _, p in self.levels]


def dyadic_schedule(j_start, j_stop, p=None):
    """
    Rungs n_j = 2^j for j = j_start..j_stop (inclusive).

    ``p`` fixes the lower level; by default p_j = n_j.
    """
    if j_stop - j_start + 1 < MIN_RUNGS:
        raise ValueError(f"j = {j_start}..{j_stop} gives fewer than {MIN_RUNGS} rungs")
    return TruncationSchedule(tuple((2.0 ** j, 2.0 ** j if p is None else p)
                                    for j in range(j_start, j_stop + 1)))


def truncate_terminal(xi, n, p, mode=CLAMP):
    """
    The truncated terminal value.

    ``clamp`` gives ξ⁺∧n - ξ⁻∧p, bounded by max(n, p). ``indicator`` gives
    ξ⁺·1{ξ⁺ <= n} - ξ⁻·1{ξ⁻ <= p}, the cut-off used for the typical case.
    Either level may be ``inf``.

    Raises:
        ValueError: If n or p is not positive, or the mode is unknown
    """
    if not (n > 0 and p > 0):
        raise ValueError(f"truncation levels must be positive, got n={n}, p={p}")
    if mode not in (CLAMP, INDICATOR):
        raise ValueError(f"Unknown truncation mode: {mode}")
    n, p = float(n), float(p)
    inner = xi.func

    def cut(values):
        values = np.asarray(values, dtype=float)
        if mode == CLAMP:
            return np.clip(values, -p, n)
        positive = np.maximum(values, 0.0)
        negative = np.maximum(-values, 0.0)
        return np.where(positive <= n, positive, 0.0) - np.where(negative <= p, negative, 0.0)

    def func(arg):
        with np.errstate(over='ignore', invalid='ignore'):
            return cut(inner(arg))

    return TerminalValue(xi.kind, func, description=f"{mode}({xi.description},{n:g},{p:g})",
                         nonnegative=xi.nonnegative, dimension=xi.dimension,
                         monotone=xi.monotone and mode == CLAMP)


@dataclass(frozen=True)
class RungResult:
    index: int
    n: float
    p: float
    y0: float = float('nan')
    se: float = float('nan')
    error: str = ''

    @property
    def ok(self):
        return not self.error


@dataclass(frozen=True)
class LadderReport:
    """
    Outcome of a ladder run.

    ``monotone_n[j]`` compares rung j with the next one in n (None when the
    step has no n-move or a rung failed); ``monotone_p`` likewise in p.
    ``domination[j]`` compares rung j with the a priori bound when that
    bound was available.
    """

    terminal: str
    method: str
    rungs: tuple
    monotone_n: tuple
    monotone_p: tuple
    domination: tuple
    bound_status: str
    verdict: str
    hitting: dict = field(default_factory=dict)
    hitting_process: str = ''

    def y0_values(self):
        return [r.y0 for r in self.rungs if r.ok]

    @staticmethod
    def _fraction(checks):
        checks = [c for c in checks if c is not None]
        total = sum(c.total for c in checks)
        return sum(c.violations for c in checks) / total if total else 0.0

    @property
    def n_violation_fraction(self):
        return self._fraction(self.monotone_n)

    @property
    def p_violation_fraction(self):
        return self._fraction(self.monotone_p)

    @property
    def bound_violation_fraction(self):
        return self._fraction(self.domination)

    @property
    def monotone(self):
        return all(c.passed for c in self.monotone_n + self.monotone_p if c is not None)

    @property
    def dominated(self):
        """True when every checked rung stays below the bound (vacuous if none)."""
        return all(c.passed for c in self.domination if c is not None)

    def rows(self):
        rows = []
        previous = None
        for j, rung in enumerate(self.rungs):
            check = self.domination[j] if j < len(self.domination) else None
            increment = rung.y0 - previous if rung.ok and previous is not None else float('nan')
            rows.append({
                'rung': rung.index,
                'n': rung.n,
                'p': rung.p,
                'y0': rung.y0,
                'se': rung.se,
                'increment': increment,
                'bound_violations': check.fraction if check is not None else float('nan'),
                'status': 'ok' if rung.ok else rung.error,
            })
            if rung.ok:
                previous = rung.y0
        return rows


def ladder_verdict(values, errors):
    """
    CONVERGING, DIVERGING or INCONCLUSIVE from the Y_0 of consecutive rungs.

    CONVERGING when the last increment is below max(VERDICT_FLOOR, 3·SE).
    DIVERGING when the last three increments all exceed max(VERDICT_FLOOR,
    5·SE) and are nondecreasing up to DIVERGING_RATIO: each is at least 0.85
    of the one before it. Increments shrinking geometrically faster than that
    sum to a finite limit and leave the ladder INCONCLUSIVE. SE for an
    increment is the larger of its two rungs' standard errors.
    """
    values = [float(v) for v in values]
    errors = [float(e) for e in errors]
    if len(values) != len(errors):
        raise ValueError("values and standard errors differ in length")
    if len(values) < 2:
        return INCONCLUSIVE
    increments = np.diff(values)
    pair_se = np.maximum(errors[:-1], errors[1:])

    if abs(increments[-1]) < max(VERDICT_FLOOR, CONVERGING_SE * pair_se[-1]):
        return CONVERGING
    if len(increments) >= 3:
        last = increments[-3:]
        floors = np.maximum(VERDICT_FLOOR, DIVERGING_SE * pair_se[-3:])
        if np.all(last > floors) and np.all(last[1:] >= DIVERGING_RATIO * last[:-1]):
            return DIVERGING
    return INCONCLUSIVE


def _pathwise(lower, upper):
    """Violations of lower <= upper + tol for two solutions on one ensemble."""
    scale = max(1.0, float(np.max(np.abs(upper.Y))))
    tol = max(CONVERGING_SE * max(lower.y0_se, upper.y0_se), PATHWISE_FLOOR * scale)
    excess = lower.Y - upper.Y
    violations = int(np.count_nonzero(excess > tol))
    return ComparisonReport(violations=violations, total=excess.size, fraction=violations / excess.size,
                            max_excess=float(excess.max()), tol=float(tol))


def _bound_check(solution, bound):
    """Violations of |Y| <= Ȳ + tol; Ȳ bounds the solution from both sides."""
    magnitude = np.abs(solution.Y)
    scale = max(1.0, float(np.max(magnitude)))
    tol = max(CONVERGING_SE * solution.y0_se, PATHWISE_FLOOR * scale)
    excess = magnitude - bound
    violations = int(np.count_nonzero(excess > tol))
    return ComparisonReport(violations=violations, total=excess.size, fraction=violations / excess.size,
                            max_excess=float(excess.max()), tol=float(tol))


def hitting_time(values, level):
    """
    First node where a process exceeds ``level``, per path.

    Args:
        values: (M, N+1) process values
        level: k > 0

    Returns:
        Integer array of node indices, N for paths that never exceed k
    """
    if not level > 0:
        raise ValueError(f"hitting level must be positive, got {level}")
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"process values must have shape (M, N+1), got {values.shape}")
    above = values > level
    last = values.shape[1] - 1
    return np.where(above.any(axis=1), above.argmax(axis=1), last)


def hitting_histogram(values, levels=DEFAULT_LEVELS):
    """Counts of hitting-time node indices for each level, keyed by level."""
    n_nodes = np.shape(values)[1]
    return {float(k): np.bincount(hitting_time(values, k), minlength=n_nodes)
            for k in levels}


def _solve_rung(xi, gen, grid, paths, basis, method, n, p, mode):
    truncated = truncate_terminal(xi, n, p, mode)
    if method == LATTICE:
        return solve_lattice(truncated, gen, grid, paths)
    return solve(truncated, gen, grid, paths, basis=basis)


def _dominating_bound(xi, gen, lam, grid, paths, verbose):
    """Ȳ of the dominating typical generator, or (None, reason) when it is not available."""
    if lam is None:
        return None, 'skipped: no lambda given'
    product = lam * gen.gamma ** 2 * grid.horizon
    if product >= 1:
        return None, f"skipped: lambda*gamma^2*T = {product:g} >= 1"
    try:
        bound = apriori_bound(xi, gen.dominating(), lam, grid, paths, verbose=verbose)
    except NumericalError as e:
        return None, f"skipped: {e}"
    if not np.all(np.isfinite(bound.values)):
        return None, f"skipped: E[Psi_{lam:g}(|xi|)] is not finite"
    return bound.values, 'checked'


def run_ladder(xi, gen, schedule, grid, paths, basis=None, lam=None, method=LSMC,
               levels=DEFAULT_LEVELS, max_workers=1, mode=CLAMP, verbose=False):
    """
    Solve the truncated BSDEs along a schedule on one ensemble.

    Each step (n_j, p_j) -> (n_{j+1}, p_{j+1}) is checked pathwise for
    monotonicity in n and in p; when both levels move the intermediate rung
    (n_{j+1}, p_j) is solved as well. For nonnegative ξ only the n-side is
    checked. When λγ²T < 1 and E[Ψ_λ(|ξ|)] is finite every rung is compared
    with the a priori bound Ȳ.

    A rung whose solver fails is recorded with its error and skipped; the
    verdict is taken over the remaining rungs.

    Args:
        xi: TerminalValue
        gen: GeneratorSpec
        schedule: TruncationSchedule
        grid, paths: Common random numbers for every rung
        basis: RegressionBasis for ``method='lsmc'``
        lam: λ for the domination check (None skips it)
        method: 'lsmc' or 'lattice'
        levels: Hitting levels k for the τ_k histograms
        max_workers: Threads solving rungs concurrently
        mode: Truncation mode, 'clamp' or 'indicator'
        verbose: Print per-rung progress

    Returns:
        LadderReport

    Raises:
        ValueError: On an unknown method
        NumericalError: If every rung fails
    """
    if method not in (LSMC, LATTICE):
        raise ValueError(f"Unknown ladder method: {method}")
    if not isinstance(schedule, TruncationSchedule):
        schedule = TruncationSchedule(tuple(schedule))

    tasks = [('rung', j, n, p) for j, (n, p) in enumerate(schedule)]
    steps = []
    for j in range(len(schedule) - 1):
        (n0, p0), (n1, p1) = schedule.levels[j], schedule.levels[j + 1]
        if xi.nonnegative or p1 == p0:
            steps.append(('n', None))
        elif n1 == n0:
            steps.append(('p', None))
        else:
            steps.append(('both', len(tasks)))
            tasks.append(('between', j, n1, p0))

    def work(task):
        _, j, n, p = task
        try:
            return _solve_rung(xi, gen, grid, paths, basis, method, n, p, mode)
        except (NumericalError, ValueError) as e:
            return e

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            outcomes = list(executor.map(work, tasks))
    else:
        outcomes = [work(task) for task in tasks]

    rungs = []
    for task, outcome in zip(tasks, outcomes):
        kind, j, n, p = task
        if isinstance(outcome, Exception):
            label = f"rung {j}" if kind == 'rung' else f"intermediate rung {j}-{j + 1}"
            print(f"WARNING: {label} (n={n:g}, p={p:g}) failed: {outcome}")
            if kind == 'rung':
                rungs.append(RungResult(j, n, p, error=str(outcome)))
            continue
        if kind == 'rung':
            rungs.append(RungResult(j, n, p, y0=outcome.y0, se=outcome.y0_se))
            if verbose:
                print(f"rung {j} (n={n:g}, p={p:g}): Y_0 = {outcome.y0:.8g} +/- {outcome.y0_se:.3g}")

    if not any(r.ok for r in rungs):
        raise NumericalError(f"every rung of the ladder for {xi.description} failed; "
                             f"first error: {rungs[0].error}")

    def solution(index):
        outcome = outcomes[index]
        return None if isinstance(outcome, Exception) else outcome

    monotone_n, monotone_p = [], []
    for j, (kind, between) in enumerate(steps):
        low, high = solution(j), solution(j + 1)
        check_n = check_p = None
        if kind == 'n' and low is not None and high is not None:
            check_n = _pathwise(low, high)
        elif kind == 'p' and low is not None and high is not None:
            check_p = _pathwise(high, low)
        elif kind == 'both' and solution(between) is not None:
            middle = solution(between)
            if low is not None:
                check_n = _pathwise(low, middle)
            if high is not None:
                check_p = _pathwise(high, middle)
        monotone_n.append(check_n)
        monotone_p.append(check_p)

    bound, bound_status = _dominating_bound(xi, gen, lam, grid, paths, verbose)
    domination = []
    for j in range(len(schedule)):
        sol = solution(j)
        domination.append(_bound_check(sol, bound) if sol is not None and bound is not None else None)

    good = [r for r in rungs if r.ok]
    verdict = ladder_verdict([r.y0 for r in good], [r.se for r in good])

    if bound is not None:
        hitting = hitting_histogram(bound, levels)
        hitting_process = 'bound'
    else:
        last = next((solution(j) for j in range(len(schedule) - 1, -1, -1)
                     if solution(j) is not None), None)
        hitting = hitting_histogram(np.abs(last.Y), levels) if last is not None else {}
        hitting_process = '|Y| of last rung' if last is not None else ''

    if verbose:
        print(f"ladder verdict for {xi.description}: {verdict}")
    return LadderReport(terminal=xi.description, method=method, rungs=tuple(rungs),
                        monotone_n=tuple(monotone_n), monotone_p=tuple(monotone_p),
                        domination=tuple(domination), bound_status=bound_status,
                        verdict=verdict, hitting=hitting, hitting_process=hitting_process)


@dataclass(frozen=True)
class NecessityResult:
    """
    Quadrature values of E[ξe^{γW_T}], E[ξe^{-γW_T}] and E[ξe^{γ|W_T|}].

    FAIL (some entry DIVERGENT) certifies that the typical-case BSDE has no
    nonnegative solution.
    """

    terminal: str
    gamma: float
    entries: tuple

    @property
    def verdict(self):
        if any(e.status == DIVERGENT for e in self.entries):
            return FAIL
        if all(e.status == FINITE for e in self.entries):
            return PASS
        return UNDECIDED

    @property
    def passed(self):
        return self.verdict == PASS

    def evidence(self):
        return {e.name: e.evidence for e in self.entries if e.status != FINITE}

    def rows(self):
        return [entry.row() for entry in self.entries]


def necessity_check(xi, gamma, horizon=1.0, verbose=False):
    """
    Check the necessary exponential moments of a nonnegative ξ.

    Raises:
        ValueError: Unless ξ is Markovian, one-dimensional and nonnegative
    """
    if not xi.markovian or xi.dimension != 1:
        raise ValueError("the necessity check needs a Markovian terminal value in dimension 1")
    if not xi.nonnegative:
        raise ValueError(f"the necessity check is for nonnegative terminal values; "
                         f"'{xi.description}' is not")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    report = integrability_report(xi, lambdas=(), powers=(), gamma=gamma, horizon=horizon,
                                  verbose=verbose)
    wanted = (signed_exp_name(gamma, +1), signed_exp_name(gamma, -1), abs_exp_name(gamma))
    entries = tuple(report.get(name) for name in wanted)
    result = NecessityResult(terminal=xi.description, gamma=float(gamma), entries=entries)
    if verbose:
        print(f"necessity check for {xi.description}, gamma={gamma:g}: {result.verdict}")
    return result
